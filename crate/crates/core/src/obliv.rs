// SPDX-License-Identifier: Apache-2.0

//! Branchless scalar primitives.
//!
//! A condition is carried as an all-zeros / all-ones mask and selection is
//! done by mask-and-combine on the bit patterns, the portable counterpart of
//! a register-to-register `cmov`. None of these functions index memory with
//! a secret or branch on one.
//!
//! NaN operands are a precondition violation: IEEE comparisons against NaN
//! are always false, so the masks would silently pick the "else" operand.

use std::hint::black_box;

use crate::error::{arg_err, Result};

/// Secret boolean held as a word mask (`0` or `!0`).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CtBool(u32);

impl CtBool {
    pub const TRUE: CtBool = CtBool(u32::MAX);
    pub const FALSE: CtBool = CtBool(0);

    /// Builds the mask from a `0`/`1` bit without branching.
    #[inline(always)]
    pub fn from_bit(bit: u32) -> Self {
        debug_assert!(bit <= 1);
        CtBool(black_box(0u32.wrapping_sub(bit & 1)))
    }

    #[inline(always)]
    pub fn mask(self) -> u32 {
        self.0
    }

    /// Declassifies the condition. Only for tests and public decisions.
    pub fn reveal(self) -> bool {
        self.0 != 0
    }

    #[inline(always)]
    pub fn not(self) -> Self {
        CtBool(!self.0)
    }

    #[inline(always)]
    pub fn and(self, other: CtBool) -> Self {
        CtBool(self.0 & other.0)
    }

    #[inline(always)]
    pub fn or(self, other: CtBool) -> Self {
        CtBool(self.0 | other.0)
    }
}

/// Values that can be chosen by a [`CtBool`] without control flow.
pub trait CtSelect: Copy {
    fn ct_select(cond: CtBool, a: Self, b: Self) -> Self;
}

impl CtSelect for u32 {
    #[inline(always)]
    fn ct_select(cond: CtBool, a: u32, b: u32) -> u32 {
        let m = cond.mask();
        (a & m) | (b & !m)
    }
}

impl CtSelect for u64 {
    #[inline(always)]
    fn ct_select(cond: CtBool, a: u64, b: u64) -> u64 {
        let m = (cond.mask() as u64) | ((cond.mask() as u64) << 32);
        (a & m) | (b & !m)
    }
}

impl CtSelect for usize {
    #[inline(always)]
    fn ct_select(cond: CtBool, a: usize, b: usize) -> usize {
        u64::ct_select(cond, a as u64, b as u64) as usize
    }
}

impl CtSelect for f32 {
    #[inline(always)]
    fn ct_select(cond: CtBool, a: f32, b: f32) -> f32 {
        f32::from_bits(u32::ct_select(cond, a.to_bits(), b.to_bits()))
    }
}

/// `a` if `cond` holds, else `b`.
#[inline(always)]
pub fn ct_select<T: CtSelect>(cond: CtBool, a: T, b: T) -> T {
    T::ct_select(cond, a, b)
}

#[inline(always)]
pub fn ct_ge(a: f32, b: f32) -> CtBool {
    CtBool::from_bit((a >= b) as u32)
}

#[inline(always)]
pub fn ct_le(a: f32, b: f32) -> CtBool {
    CtBool::from_bit((a <= b) as u32)
}

#[inline(always)]
pub fn ct_gt(a: f32, b: f32) -> CtBool {
    CtBool::from_bit((a > b) as u32)
}

#[inline(always)]
pub fn ct_lt(a: f32, b: f32) -> CtBool {
    CtBool::from_bit((a < b) as u32)
}

/// `if (b > a) a = b` rewritten as a select; ties keep `a`.
#[inline(always)]
pub fn ct_max(a: f32, b: f32) -> f32 {
    ct_select(ct_gt(b, a), b, a)
}

/// HardTanh clamp: `lo` below the range, `hi` above it, `x` otherwise.
#[inline(always)]
pub fn ct_clamp_unchecked(x: f32, lo: f32, hi: f32) -> f32 {
    let above = ct_select(ct_gt(x, hi), hi, x);
    ct_select(ct_lt(x, lo), lo, above)
}

pub fn ct_clamp(x: f32, lo: f32, hi: f32) -> Result<f32> {
    // Bounds are public hyper-parameters, so this check may branch.
    if lo > hi {
        return arg_err(format!("clamp bounds inverted: {lo} > {hi}"));
    }
    Ok(ct_clamp_unchecked(x, lo, hi))
}

/// Index of the maximum, first occurrence on ties. Left-to-right scan; the
/// running `(max, index)` pair only ever changes through [`ct_select`].
pub fn ct_argmax(v: &[f32]) -> Result<usize> {
    let Some((&first, rest)) = v.split_first() else {
        return arg_err("argmax of an empty sequence");
    };
    let mut best = first;
    let mut idx = 0usize;
    for (i, &x) in rest.iter().enumerate() {
        let take = ct_gt(x, best);
        best = ct_select(take, x, best);
        idx = ct_select(take, i + 1, idx);
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn branchy_argmax(v: &[f32]) -> usize {
        let mut best = v[0];
        let mut idx = 0;
        for (i, &x) in v.iter().enumerate().skip(1) {
            if x > best {
                best = x;
                idx = i;
            }
        }
        idx
    }

    #[test]
    fn select_examples() {
        assert_eq!(ct_select(CtBool::TRUE, 7.0f32, 3.0), 7.0);
        assert_eq!(ct_select(CtBool::FALSE, 7.0f32, 3.0), 3.0);
        assert_eq!(ct_select(CtBool::TRUE, 9usize, 4), 9);
        assert_eq!(ct_select(CtBool::FALSE, 9u64, 4), 4);
    }

    #[test]
    fn select_matches_branchy_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c: bool = rng.random();
            let a: f32 = rng.random_range(-1e6..1e6);
            let b: f32 = rng.random_range(-1e6..1e6);
            let want = if c { a } else { b };
            let got = ct_select(CtBool::from_bit(c as u32), a, b);
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn comparisons_at_boundaries() {
        assert!(ct_le(-1.0, 0.0).reveal());
        assert!(ct_le(0.0, 0.0).reveal());
        assert!(!ct_lt(0.0, 0.0).reveal());
        assert!(!ct_gt(0.0, 0.0).reveal());
        assert!(ct_ge(0.0, 0.0).reveal());
        assert!(ct_le(-0.0, 0.0).reveal());
    }

    #[test]
    fn comparisons_match_branchy_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            // Coarse grid so equal pairs show up regularly.
            let a = rng.random_range(-20i32..20) as f32 * 0.5;
            let b = rng.random_range(-20i32..20) as f32 * 0.5;
            assert_eq!(ct_ge(a, b).reveal(), a >= b);
            assert_eq!(ct_le(a, b).reveal(), a <= b);
            assert_eq!(ct_gt(a, b).reveal(), a > b);
            assert_eq!(ct_lt(a, b).reveal(), a < b);
        }
    }

    #[test]
    fn max_examples() {
        assert_eq!(ct_max(2.0, 5.0), 5.0);
        assert_eq!(ct_max(3.25, 3.25), 3.25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: f32 = rng.random_range(-10.0..10.0);
            let b: f32 = rng.random_range(-10.0..10.0);
            assert_eq!(ct_max(a, b), a.max(b));
        }
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(ct_clamp(-2.0, -1.0, 1.0).unwrap(), -1.0);
        assert_eq!(ct_clamp(0.5, -1.0, 1.0).unwrap(), 0.5);
        assert_eq!(ct_clamp(2.0, -1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(
            ct_clamp(0.0, 1.0, -1.0),
            Err(crate::Error::Argument(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x: f32 = rng.random_range(-3.0..3.0);
            let want = if x < -1.0 {
                -1.0
            } else if x <= 1.0 {
                x
            } else {
                1.0
            };
            assert_eq!(ct_clamp(x, -1.0, 1.0).unwrap().to_bits(), want.to_bits());
        }
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(ct_argmax(&[0.1, 0.7, 0.2]).unwrap(), 1);
        assert_eq!(ct_argmax(&[0.5, 0.5]).unwrap(), 0);
        assert!(matches!(ct_argmax(&[]), Err(crate::Error::Argument(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..20);
            let v: Vec<f32> = (0..n).map(|_| rng.random_range(0..6) as f32).collect();
            assert_eq!(ct_argmax(&v).unwrap(), branchy_argmax(&v));
        }
    }
}
