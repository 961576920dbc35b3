// SPDX-License-Identifier: Apache-2.0

//! Wall-clock comparison of the execution modes.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{layout_assign, random_input, TraceRecorder};
use crate::error::{arg_err, Result};
use crate::runtime::{ExecMode, Executor, ModelGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub model: String,
    pub iterations: usize,
    /// Mean seconds per inference.
    pub leaky: f64,
    pub oblivious: f64,
    /// Leaky execution with the access recorder attached.
    pub traced: f64,
}

impl BenchReport {
    pub fn ratio(&self) -> f64 {
        self.oblivious / self.leaky
    }

    pub fn csv_header() -> &'static str {
        "model,iterations,leaky_s,oblivious_s,traced_s,oblivious_over_leaky"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.4}",
            self.model,
            self.iterations,
            self.leaky,
            self.oblivious,
            self.traced,
            self.ratio()
        )
    }
}

pub fn bench_csv(comment: &str, rows: &[BenchReport]) -> String {
    let mut s = String::new();
    if !comment.is_empty() {
        let _ = writeln!(s, "# {comment}");
    }
    s.push_str(BenchReport::csv_header());
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Times `iterations` inferences per mode on seeded random inputs. The modes
/// are interleaved within each iteration, and their order rotates, so drift
/// in machine load affects all three alike.
pub fn bench(g: &ModelGraph, iterations: usize, seed: u64) -> Result<BenchReport> {
    if iterations == 0 {
        return arg_err("iterations must be positive");
    }
    let layout = layout_assign(g, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<_> = (0..iterations.min(64)).map(|_| random_input(g, &mut rng)).collect();
    let leaky = Executor::new(g, ExecMode::Leaky);
    let obliv = Executor::new(g, ExecMode::Oblivious);
    let warm = (iterations / 10).clamp(1, 10);
    for x in inputs.iter().cycle().take(warm) {
        black_box(leaky.run(x)?);
        black_box(obliv.run(x)?);
    }
    let mut total = [Duration::ZERO; 3];
    for i in 0..iterations {
        let x = &inputs[i % inputs.len()];
        for k in 0..3 {
            let which = (i + k) % 3;
            let t = Instant::now();
            match which {
                0 => {
                    black_box(leaky.run(x)?);
                }
                1 => {
                    black_box(obliv.run(x)?);
                }
                _ => {
                    let mut rec = TraceRecorder::new(&layout);
                    black_box(leaky.run_probed(x, &mut rec)?);
                    black_box(rec.events().len());
                }
            }
            total[which] += t.elapsed();
        }
    }
    let mean = |d: Duration| d.as_secs_f64() / iterations as f64;
    Ok(BenchReport {
        model: g.name().to_string(),
        iterations,
        leaky: mean(total[0]),
        oblivious: mean(total[1]),
        traced: mean(total[2]),
    })
}
