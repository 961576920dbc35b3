// SPDX-License-Identifier: Apache-2.0

//! Inference engine whose execution can be observed through a simulated
//! memory-access channel.
//!
//! Every data-dependent kernel exists in two variants: a *leaky* one that
//! mirrors the classic branchy reference implementation, and an *oblivious*
//! one built on the branchless primitives of [`obliv`]. Kernels report their
//! basic-block and memory events to a [`runtime::Probe`]; the [`channel`]
//! module turns those events into address traces at cache-line, page and
//! page-fault granularity. [`attack`] recovers output labels from leaky
//! traces, and [`train`] produces the victim models.

pub mod attack;
pub mod bench;
pub mod channel;
mod error;
pub mod obliv;
pub mod runtime;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use runtime::ExecMode;
pub use tensor::{Shape, Tensor};
