// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f32` tensors.
//!
//! All reductions accumulate in ascending index order so that two kernels
//! with the same arithmetic produce bit-identical results.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Extents of a tensor, 1 to 4 dimensions, each at least 1.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > 4 {
            return shape_err(format!("rank must be 1..=4, got {}", dims.len()));
        }
        if dims.contains(&0) {
            return shape_err(format!("zero extent in {dims:?}"));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = crate::Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: impl Into<Vec<f32>>) -> Result<Self> {
        let data = data.into();
        if data.len() != shape.numel() {
            return shape_err(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Shorthand for `Tensor::new(Shape::new(dims)?, data)`.
    pub fn from_dims(dims: &[usize], data: impl Into<Vec<f32>>) -> Result<Self> {
        Self::new(Shape::new(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
///
/// Loop order is i-p-j: each output element still accumulates its products
/// in ascending `p`, which is bit-identical to the textbook triple loop while
/// letting the inner loop stream contiguous rows of `b`.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c += aip * bv;
            }
        }
    }
}

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.dims() {
        [r, c] => Ok((*r, *c)),
        d => shape_err(format!("{what} must be a matrix, got {d:?}")),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "left operand")?;
    let (k2, n) = as_matrix(b, "right operand")?;
    if k != k2 {
        return shape_err(format!("inner dimensions differ: {m}x{k} · {k2}x{n}"));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::from_dims(&[m, n], out)
}

/// Affine map `y = x·W + b` for a vector `x[in]` or a batch `x[batch×in]`,
/// with `W` stored input-major as `[in×out]` and `b[out]`.
pub fn axpy_bias(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (inp, out) = as_matrix(w, "weight")?;
    if b.dims() != [out] {
        return shape_err(format!("bias must be [{out}], got {:?}", b.dims()));
    }
    let (rows, batched) = match x.dims() {
        [n] if *n == inp => (1, false),
        [r, n] if *n == inp => (*r, true),
        d => return shape_err(format!("input {d:?} does not match weight {inp}x{out}")),
    };
    let mut y = vec![0.0; rows * out];
    matmul_into(x.data(), w.data(), &mut y, rows, inp, out);
    for row in y.chunks_exact_mut(out) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    if batched {
        Tensor::from_dims(&[rows, out], y)
    } else {
        Tensor::from_dims(&[out], y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_dims(dims, data).unwrap()
    }

    #[test]
    fn construction() {
        let t = Tensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = Tensor::from_dims(&[3], vec![0.0; 3]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            Tensor::from_dims(&[2], vec![1.0, 2.0, 3.0]),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn shape_rejects_bad_extents() {
        assert!(Shape::new(vec![]).is_err());
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Shape::new(vec![1, 1, 1, 1, 1]).is_err());
        assert_eq!(Shape::new(vec![2, 3, 4]).unwrap().numel(), 24);
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let i2 = Tensor::from_dims(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::from_dims(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);

        let a = Tensor::from_dims(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_dims(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_dim_mismatch() {
        let a = Tensor::zeros(Shape::new(vec![2, 3]).unwrap());
        let b = Tensor::zeros(Shape::new(vec![2, 3]).unwrap());
        assert!(matches!(matmul(&a, &b), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, &[5, 7]);
        let b = random(&mut rng, &[7, 3]);
        let c = matmul(&a, &b).unwrap();
        let want = Tensor::from_dims(&[5, 3], naive_matmul(a.data(), b.data(), 5, 7, 3)).unwrap();
        assert!(c.bit_eq(&want));

        for (m, k, n) in [(1, 1, 1), (8, 8, 8), (3, 8, 1), (8, 1, 5)] {
            let a = random(&mut rng, &[m, k]);
            let b = random(&mut rng, &[k, n]);
            let want = naive_matmul(a.data(), b.data(), m, k, n);
            let got = matmul(&a, &b).unwrap();
            assert!(got
                .data()
                .iter()
                .zip(&want)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn axpy_bias_examples() {
        let eye = Tensor::from_dims(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::from_dims(&[2], vec![0.0, 0.0]).unwrap();
        let x = Tensor::from_dims(&[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(axpy_bias(&x, &eye, &zero_b).unwrap().data(), &[1.0, 2.0]);

        let w0 = Tensor::from_dims(&[2, 1], vec![0.0, 0.0]).unwrap();
        let b5 = Tensor::from_dims(&[1], vec![5.0]).unwrap();
        let x = Tensor::from_dims(&[2], vec![-3.5, 19.0]).unwrap();
        assert_eq!(axpy_bias(&x, &w0, &b5).unwrap().data(), &[5.0]);
    }

    #[test]
    fn axpy_bias_is_matmul_plus_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, &[4, 6]);
        let w = random(&mut rng, &[6, 5]);
        let b = random(&mut rng, &[5]);
        let got = axpy_bias(&x, &w, &b).unwrap();
        let mut want = matmul(&x, &w).unwrap().into_data();
        for row in want.chunks_exact_mut(5) {
            for (v, bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        assert!(got.bit_eq(&Tensor::from_dims(&[4, 5], want).unwrap()));
    }

    proptest::proptest! {
        #[test]
        fn matmul_equals_oracle_small(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, &[m, k]);
            let b = random(&mut rng, &[k, n]);
            let got = matmul(&a, &b).unwrap();
            let want = naive_matmul(a.data(), b.data(), m, k, n);
            proptest::prop_assert!(got.data().iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits()));
            // determinism
            proptest::prop_assert!(got.bit_eq(&matmul(&a, &b).unwrap()));
        }
    }
}
