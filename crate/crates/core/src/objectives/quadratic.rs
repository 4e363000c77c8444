use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{kernels, ParamVector};

/// `F(w) = ½ (w − m)ᵀ A (w − m)` with `A` symmetric positive semidefinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    dim: usize,
    /// Row-major `dim × dim`.
    curvature: Vec<f64>,
    minimizer: ParamVector,
}

const SYMMETRY_TOL: f64 = 1e-12;
const POWER_ITERATION_LIMIT: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-10;

impl QuadraticObjective {
    /// `curvature` is row-major and must be symmetric. Positive
    /// semidefiniteness is the caller's responsibility.
    pub fn new(curvature: Vec<f64>, minimizer: ParamVector) -> Result<Self> {
        let dim = minimizer.len();
        if dim == 0 {
            return Err(Error::usage("quadratic objective needs dimension >= 1"));
        }
        check_len(dim * dim, curvature.len())?;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (curvature[i * dim + j], curvature[j * dim + i]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::usage(format!(
                        "curvature not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        if curvature.iter().any(|v| !v.is_finite()) || !minimizer.is_finite() {
            return Err(Error::usage("quadratic objective has non-finite entries"));
        }
        Ok(QuadraticObjective {
            dim,
            curvature,
            minimizer,
        })
    }

    pub fn from_diagonal(diagonal: &[f64], minimizer: ParamVector) -> Result<Self> {
        let d = diagonal.len();
        let mut a = vec![0.0; d * d];
        for (i, v) in diagonal.iter().enumerate() {
            a[i * d + i] = *v;
        }
        Self::new(a, minimizer)
    }

    /// `A = scale · I`.
    pub fn isotropic(scale: f64, minimizer: ParamVector) -> Result<Self> {
        Self::from_diagonal(&vec![scale; minimizer.len()], minimizer)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn minimizer(&self) -> &ParamVector {
        &self.minimizer
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.curvature
            .chunks_exact(self.dim)
            .map(|row| kernels::dot(row, x))
            .collect()
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        check_len(self.dim, w.len())?;
        let r = kernels::sub(w, &self.minimizer);
        Ok(0.5 * kernels::dot(&r, &self.apply(&r)))
    }

    pub fn gradient(&self, w: &[f64]) -> Result<ParamVector> {
        check_len(self.dim, w.len())?;
        let r = kernels::sub(w, &self.minimizer);
        Ok(ParamVector::new(self.apply(&r)))
    }

    /// Largest eigenvalue of `A` (the smoothness constant `L`) by power
    /// iteration, stopped once the eigen-residual is below `1e-10·λ`.
    pub fn smoothness_constant(&self) -> Result<f64> {
        largest_eigenvalue(&self.curvature, self.dim)
    }
}

/// Power iteration on a symmetric PSD row-major matrix.
pub fn largest_eigenvalue(matrix: &[f64], dim: usize) -> Result<f64> {
    check_len(dim * dim, matrix.len())?;
    let apply = |x: &[f64]| -> Vec<f64> {
        matrix
            .chunks_exact(dim)
            .map(|row| kernels::dot(row, x))
            .collect()
    };
    // Fixed, generic start vector; no coordinate is zero and no two agree.
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.618_033_988_75 * i as f64).collect();
    let n = kernels::dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);

    for _ in 0..POWER_ITERATION_LIMIT {
        let av = apply(&v);
        let lambda = kernels::dot(&v, &av);
        let norm_av = kernels::dot(&av, &av).sqrt();
        if norm_av == 0.0 {
            return Ok(0.0);
        }
        let residual: f64 = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - lambda * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_ITERATION_TOL * lambda.abs() {
            return Ok(lambda);
        }
        v = av.into_iter().map(|x| x / norm_av).collect();
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {POWER_ITERATION_LIMIT} iterations"
    )))
}
