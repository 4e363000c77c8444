//! Flat parameter vectors and the handful of reductions the rest of the
//! crate is built on.
//!
//! Every reduction runs strictly left to right over the coordinates, so a
//! result never depends on how the caller scheduled work across threads.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Model weights, deltas, gradients and control variates all travel as one
/// of these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Returns `self * factor` as a new vector.
    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// 64-bit FNV-1a over the IEEE bit patterns. Two vectors share a
    /// fingerprint iff they are (with overwhelming probability) bit-identical.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut hash = OFFSET;
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(PRIME);
            }
        }
        hash
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Σ aᵢ·bᵢ, accumulated left to right.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(kernels::dot(a, b))
}

pub fn l2norm(a: &[f64]) -> f64 {
    kernels::dot(a, a).sqrt()
}

/// Element-wise `alpha·x + y`.
pub fn axpy(alpha: f64, x: &[f64], y: &[f64]) -> Result<ParamVector> {
    check_len(y.len(), x.len())?;
    let mut out = y.to_vec();
    kernels::axpy_in_place(alpha, x, &mut out);
    Ok(ParamVector(out))
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// Zero-norm inputs have no direction and are reported as
/// [`Error::Degenerate`]; callers decide what that means for them.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let na = l2norm(a);
    let nb = l2norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((kernels::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Σ wₖ·vₖ over the vectors in the order given. All vectors must share a
/// length.
pub fn weighted_sum<'a, I>(dim: usize, terms: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut acc = vec![0.0; dim];
    for (weight, v) in terms {
        check_len(dim, v.len())?;
        kernels::axpy_in_place(weight, v, &mut acc);
    }
    Ok(ParamVector(acc))
}

/// Unchecked slice kernels. Lengths are asserted, not reported.
pub mod kernels {
    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }

    #[inline]
    pub fn axpy_in_place(alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    #[inline]
    pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }
}
