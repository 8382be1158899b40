//! Latent-space primitives: points, the Gaussian localization kernel and the
//! covariance statistics used by bandwidth calibration.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coordinate in a d-dimensional latent configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint {
    coords: Vec<f64>,
}

impl LatentPoint {
    /// Builds a point, rejecting empty or non-finite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("latent point must have dim > 0".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "latent coordinate {c} is not finite"
            )));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn squared_distance(&self, other: &LatentPoint) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(squared_distance(&self.coords, &other.coords))
    }

    pub fn distance(&self, other: &LatentPoint) -> Result<f64> {
        self.squared_distance(other).map(f64::sqrt)
    }

    /// Component-wise mean of a nonempty set of points of equal dimension.
    pub fn centroid(points: &[LatentPoint]) -> Result<LatentPoint> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("centroid of an empty set".into()))?;
        let mut acc = vec![0.0; first.dim()];
        for p in points {
            check_dims(first.dim(), p.dim())?;
            for (a, c) in acc.iter_mut().zip(&p.coords) {
                *a += c;
            }
        }
        let n = points.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(LatentPoint { coords: acc })
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> LatentPoint {
        LatentPoint {
            coords: self.coords.iter().map(|c| c * factor).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for LatentPoint {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        LatentPoint::new(coords)
    }
}

/// Bandwidth of a Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    sigma: f64,
}

impl KernelParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel value from a precomputed squared distance.
#[inline]
pub(crate) fn kernel_from_sq(sq_dist: f64, sigma: f64) -> f64 {
    (-sq_dist / (2.0 * sigma * sigma)).exp()
}

/// `exp(-‖a−b‖² / 2σ²)`.
///
/// Symmetric in `a` and `b`, equal to 1 at zero distance and strictly
/// decreasing with distance.
pub fn gaussian_kernel(a: &LatentPoint, b: &LatentPoint, sigma: f64) -> Result<f64> {
    let params = KernelParams::new(sigma)?;
    let sq = a.squared_distance(b)?;
    Ok(kernel_from_sq(sq, params.sigma()))
}

/// `(Σλ)² / Σλ²`, the effective number of dimensions carried by a spectrum.
pub fn participation_ratio(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.iter().any(|l| *l < 0.0 || !l.is_finite()) {
        return Err(Error::InvalidArgument(
            "eigenvalues must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = eigenvalues.iter().sum();
    let sum_sq: f64 = eigenvalues.iter().map(|l| l * l).sum();
    if sum <= 0.0 || sum_sq <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(sum * sum / sum_sq)
}

/// Eigenvalues of the sample covariance (mean-centered, `n − 1` divisor),
/// sorted descending with negative round-off clamped to zero.
pub fn covariance_spectrum(samples: &[LatentPoint]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let cov = covariance_matrix(samples)?;
    let mut eig = symmetric_eigenvalues(cov);
    for l in eig.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// Sum of per-coordinate sample variances (trace of the covariance).
pub fn total_variance(samples: &[LatentPoint]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let cov = covariance_matrix(samples)?;
    Ok(cov.trace())
}

fn covariance_matrix(samples: &[LatentPoint]) -> Result<DMatrix<f64>> {
    let mean = LatentPoint::centroid(samples)?;
    let d = mean.dim();
    let centered = DMatrix::from_fn(samples.len(), d, |r, c| samples[r].coords[c] - mean.coords[c]);
    Ok(centered.transpose() * &centered / (samples.len() - 1) as f64)
}

fn symmetric_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(a).eigenvalues.iter().copied().collect()
}
