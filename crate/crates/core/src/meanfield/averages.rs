//! Gaussian averages of the scaled error function.
//!
//! For zero-mean jointly Gaussian pre-activations with covariance `C`:
//!
//! * `I2(a,b)     = ⟨φ(z_a)·φ(z_b)⟩`
//! * `I3(a,b,c)   = ⟨φ′(z_a)·z_b·φ(z_c)⟩`
//! * `I4(a,b,c,e) = ⟨φ′(z_a)·φ′(z_b)·φ(z_c)·φ(z_e)⟩`
//!
//! The index forms read entries of a larger covariance directly, which is
//! how the ODE right-hand side uses them; the fixed-size forms take the
//! selected sub-matrix.

use std::f64::consts::PI;
use std::ops::Index;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::activation::{phi, phi_prime};
use crate::error::{Error, Result};
use crate::rng;

const ASIN_SLACK: f64 = 1e-12;

fn checked_asin(x: f64, what: &'static str) -> Result<f64> {
    if !(x.abs() <= 1.0 + ASIN_SLACK) {
        return Err(Error::Domain { what, value: x });
    }
    Ok(x.clamp(-1.0, 1.0).asin())
}

/// `(2/π)·asin(C_ab / sqrt((1 + C_aa)(1 + C_bb)))`.
pub fn i2<M: Index<(usize, usize), Output = f64>>(c: &M, a: usize, b: usize) -> Result<f64> {
    let arg = c[(a, b)] / ((1.0 + c[(a, a)]) * (1.0 + c[(b, b)])).sqrt();
    Ok(2.0 / PI * checked_asin(arg, "two-point average")?)
}

/// `(2/π)·(C_bc(1 + C_aa) − C_ab·C_ac) / ((1 + C_aa)·sqrt(Λ₃))`,
/// `Λ₃ = (1 + C_aa)(1 + C_cc) − C_ac²`.
pub fn i3<M: Index<(usize, usize), Output = f64>>(
    c: &M,
    a: usize,
    b: usize,
    e: usize,
) -> Result<f64> {
    let caa = 1.0 + c[(a, a)];
    let l3 = caa * (1.0 + c[(e, e)]) - c[(a, e)] * c[(a, e)];
    if !(l3 > 0.0) {
        return Err(Error::Domain {
            what: "three-point average (Lambda3)",
            value: l3,
        });
    }
    Ok(2.0 / PI * (c[(b, e)] * caa - c[(a, b)] * c[(a, e)]) / (caa * l3.sqrt()))
}

/// `4/(π²·sqrt(Λ₄))·asin(Λ₀ / sqrt(Λ₁Λ₂))`.
pub fn i4<M: Index<(usize, usize), Output = f64>>(
    c: &M,
    a: usize,
    b: usize,
    g: usize,
    e: usize,
) -> Result<f64> {
    let caa = 1.0 + c[(a, a)];
    let cbb = 1.0 + c[(b, b)];
    let (cab, cag, cae, cbg, cbe) = (c[(a, b)], c[(a, g)], c[(a, e)], c[(b, g)], c[(b, e)]);
    let l4 = caa * cbb - cab * cab;
    if !(l4 > 0.0) {
        return Err(Error::Domain {
            what: "four-point average (Lambda4)",
            value: l4,
        });
    }
    let l0 = l4 * c[(g, e)] - cbg * cbe * caa - cag * cae * cbb + cab * cag * cbe + cab * cae * cbg;
    let l1 = l4 * (1.0 + c[(g, g)]) - cbg * cbg * caa - cag * cag * cbb + 2.0 * cab * cag * cbg;
    let l2 = l4 * (1.0 + c[(e, e)]) - cbe * cbe * caa - cae * cae * cbb + 2.0 * cab * cae * cbe;
    let l12 = l1 * l2;
    if !(l12 > 0.0) {
        return Err(Error::Domain {
            what: "four-point average (Lambda1*Lambda2)",
            value: l12,
        });
    }
    let s = checked_asin(l0 / l12.sqrt(), "four-point average")?;
    Ok(4.0 / (PI * PI * l4.sqrt()) * s)
}

/// `⟨relu(z_a)·relu(z_b)⟩ = sqrt(C_aa·C_bb)/(2π)·(sin α + (π − α)·cos α)`,
/// `cos α = C_ab / sqrt(C_aa·C_bb)`.
pub fn relu_pair<M: Index<(usize, usize), Output = f64>>(c: &M, a: usize, b: usize) -> Result<f64> {
    let (caa, cbb) = (c[(a, a)].max(0.0), c[(b, b)].max(0.0));
    let norm = (caa * cbb).sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let cos = c[(a, b)] / norm;
    if !(cos.abs() <= 1.0 + ASIN_SLACK) {
        return Err(Error::Domain {
            what: "relu two-point average",
            value: cos,
        });
    }
    let alpha = cos.clamp(-1.0, 1.0).acos();
    Ok(norm / (2.0 * PI) * (alpha.sin() + (PI - alpha) * alpha.cos()))
}

/// `⟨φ(z₁)φ(z₂)⟩` for a 2×2 covariance.
pub fn avg_phi_phi(sigma: &Matrix2<f64>) -> Result<f64> {
    i2(sigma, 0, 1)
}

/// `⟨φ′(z₁)·z₂·φ(z₃)⟩` for a 3×3 covariance.
pub fn avg_phiprime_x_phi(sigma: &Matrix3<f64>) -> Result<f64> {
    i3(sigma, 0, 1, 2)
}

/// `⟨φ′(z₁)φ′(z₂)φ(z₃)φ(z₄)⟩` for a 4×4 covariance.
pub fn avg_4point(sigma: &Matrix4<f64>) -> Result<f64> {
    i4(sigma, 0, 1, 2, 3)
}

/// Which average a Monte-Carlo estimate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageKind {
    PhiPhi,
    PhiPrimeXPhi,
    FourPoint,
}

impl AverageKind {
    pub fn dim(self) -> usize {
        match self {
            AverageKind::PhiPhi => 2,
            AverageKind::PhiPrimeXPhi => 3,
            AverageKind::FourPoint => 4,
        }
    }

    /// Analytic value on the leading `dim × dim` block of `sigma`.
    pub fn analytic(self, sigma: &DMatrix<f64>) -> Result<f64> {
        match self {
            AverageKind::PhiPhi => i2(sigma, 0, 1),
            AverageKind::PhiPrimeXPhi => i3(sigma, 0, 1, 2),
            AverageKind::FourPoint => i4(sigma, 0, 1, 2, 3),
        }
    }

    fn integrand(self, z: &[f64]) -> f64 {
        match self {
            AverageKind::PhiPhi => phi(z[0]) * phi(z[1]),
            AverageKind::PhiPrimeXPhi => phi_prime(z[0]) * z[1] * phi(z[2]),
            AverageKind::FourPoint => phi_prime(z[0]) * phi_prime(z[1]) * phi(z[2]) * phi(z[3]),
        }
    }
}

/// Analytic value next to a Monte-Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub kind: AverageKind,
    pub sigma: Vec<Vec<f64>>,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
}

impl McReport {
    /// `|analytic − mc_mean|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        (self.analytic - self.mc_mean).abs() / self.mc_stderr
    }
}

/// Square-root factor `L` with `L·Lᵀ = sigma` for a PSD matrix.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sigma.clone().symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Monte-Carlo estimate of an average over `n` Gaussian samples.
pub fn monte_carlo(
    kind: AverageKind,
    sigma: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<McReport> {
    let k = kind.dim();
    if sigma.nrows() != k || sigma.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: sigma.nrows(),
        });
    }
    let analytic = kind.analytic(sigma)?;
    let l = psd_sqrt(sigma);
    let mut rng = rng::stream(seed, 0);
    let mut g = [0.0f64; 4];
    let mut z = [0.0f64; 4];
    let (mut sum, mut sum2) = (0.0f64, 0.0f64);
    for _ in 0..n {
        for gi in g.iter_mut().take(k) {
            *gi = rng.sample(StandardNormal);
        }
        for (i, zi) in z.iter_mut().enumerate().take(k) {
            *zi = (0..k).map(|j| l[(i, j)] * g[j]).sum();
        }
        let v = kind.integrand(&z[..k]);
        sum += v;
        sum2 += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(McReport {
        kind,
        sigma: (0..k)
            .map(|i| (0..k).map(|j| sigma[(i, j)]).collect())
            .collect(),
        analytic,
        mc_mean: mean,
        mc_stderr: (var / nf).sqrt(),
    })
}

/// A random covariance `A·Aᵀ/k` with standard-normal `A` of shape `k × k`.
pub fn random_covariance(k: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 1);
    let a = DMatrix::<f64>::from_fn(k, k, |_, _| r.sample(StandardNormal));
    &a * a.transpose() / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncorrelated_pairs_vanish() {
        let s = Matrix2::new(1.0, 0.0, 0.0, 2.0);
        assert_eq!(avg_phi_phi(&s).unwrap(), 0.0);
        assert_eq!(avg_phiprime_x_phi(&Matrix3::identity()).unwrap(), 0.0);
        assert_eq!(avg_4point(&Matrix4::identity()).unwrap(), 0.0);
    }

    #[test]
    fn two_point_odd_in_covariance() {
        let q = 0.7;
        let a = avg_phi_phi(&Matrix2::new(q, q, q, q)).unwrap();
        let b = avg_phi_phi(&Matrix2::new(q, -q, -q, q)).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, -b);
    }

    #[test]
    fn three_point_zero_numerator() {
        let s = Matrix3::new(1.0, 0.0, 0.4, 0.0, 1.0, 0.0, 0.4, 0.0, 1.0);
        assert_eq!(avg_phiprime_x_phi(&s).unwrap(), 0.0);
    }

    #[test]
    fn four_point_relabelling_symmetry() {
        let c = random_covariance(4, 3);
        let perm = [1usize, 0, 3, 2];
        let swapped = DMatrix::from_fn(4, 4, |i, j| c[(perm[i], perm[j])]);
        let a = i4(&c, 0, 1, 2, 3).unwrap();
        let b = i4(&swapped, 0, 1, 2, 3).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn domain_error_on_inconsistent_covariance() {
        let s = Matrix2::new(0.0, 5.0, 5.0, 0.0);
        assert!(matches!(avg_phi_phi(&s), Err(Error::Domain { .. })));
    }

    #[test]
    fn relu_pair_known_values() {
        let c = Matrix2::new(2.0, 2.0, 2.0, 2.0);
        assert!((relu_pair(&c, 0, 1).unwrap() - 1.0).abs() < 1e-15);
        let c = Matrix2::new(1.0, 0.0, 0.0, 1.0);
        assert!((relu_pair(&c, 0, 1).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let c = Matrix2::new(1.0, -1.0, -1.0, 1.0);
        assert!(relu_pair(&c, 0, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unit_covariance_matches_monte_carlo() {
        let c = DMatrix::from_element(2, 2, 1.0);
        let r = monte_carlo(AverageKind::PhiPhi, &c, 200_000, 11).unwrap();
        assert!(r.z_score() < 4.0, "{r:?}");
        assert!((r.analytic - 2.0 / PI * (0.5f64).asin()).abs() < 1e-15);
    }
}
