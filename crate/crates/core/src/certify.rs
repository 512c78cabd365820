//! Numerical certification of scale invariance.
//!
//! Two consequences of `f(a x) = f(x)` are checked on random points:
//! the gradient is orthogonal to the iterate, and `∇f(a x) = ∇f(x) / a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Batch, Objective};
use crate::vector;

/// Tolerance for objectives with closed-form gradients.
pub const CLOSED_FORM_TOL: f64 = 1e-12;
/// Tolerance for the normalized network, whose gradients go through
/// batch-statistics arithmetic.
pub const NETWORK_TOL: f64 = 1e-6;

/// Points closer to the origin than this are resampled.
const MIN_SAMPLE_NORM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub check: String,
    pub objective: String,
    pub samples: usize,
    pub tolerance: f64,
    pub max_deviation: f64,
    /// Point at which the largest deviation was observed.
    pub witness: Vec<f64>,
    pub passed: bool,
}

/// Standard normal point in `R^dim`, rejecting norms below `1e-3`.
pub fn sample_point<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if vector::norm(&x) >= MIN_SAMPLE_NORM {
            return x;
        }
    }
}

fn finish(
    check: &str,
    objective: &dyn Objective,
    samples: usize,
    tolerance: f64,
    max_deviation: f64,
    witness: Vec<f64>,
) -> CertificationReport {
    CertificationReport {
        check: check.to_string(),
        objective: objective.id().to_string(),
        samples,
        tolerance,
        max_deviation,
        witness,
        passed: max_deviation.is_finite() && max_deviation < tolerance,
    }
}

/// Largest `|cos(∇f(x), x)|` over `samples` random points.
pub fn certify_orthogonality(
    objective: &dyn Objective,
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<CertificationReport> {
    if samples == 0 {
        return Err(Error::Domain("certification needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut witness = Vec::new();
    for _ in 0..samples {
        let x = sample_point(&mut rng, objective.dim());
        let e = objective.evaluate(&x, Batch::Full)?;
        let c = if e.grad_norm == 0.0 {
            0.0
        } else {
            (vector::dot(&e.gradient, &x) / (e.grad_norm * e.rho)).abs()
        };
        if c > worst || witness.is_empty() {
            worst = worst.max(c);
            witness = x;
        }
    }
    Ok(finish("orthogonality", objective, samples, tolerance, worst, witness))
}

/// Checks `a·∇f(a x) = ∇f(x)` and `f(a x) = f(x)` for every scale `a`.
///
/// The reported deviation is the larger of the relative gradient error and
/// `|f(a x) - f(x)| / (1 + |f(x)|)`.
pub fn certify_inverse_homogeneity(
    objective: &dyn Objective,
    scales: &[f64],
    samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<CertificationReport> {
    if samples == 0 || scales.is_empty() {
        return Err(Error::Domain("certification needs samples and scales".into()));
    }
    if let Some(a) = scales.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!("scale {a} is not positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut witness = Vec::new();
    for _ in 0..samples {
        let x = sample_point(&mut rng, objective.dim());
        let base = objective.evaluate(&x, Batch::Full)?;
        for &a in scales {
            let scaled = objective.evaluate(&vector::scaled(&x, a), Batch::Full)?;
            let diff: Vec<f64> = scaled
                .gradient
                .iter()
                .zip(&base.gradient)
                .map(|(gs, g)| a * gs - g)
                .collect();
            let abs_dev = vector::norm(&diff);
            let grad_dev = if abs_dev == 0.0 {
                0.0
            } else {
                abs_dev / base.grad_norm
            };
            let value_dev = (scaled.value - base.value).abs() / (1.0 + base.value.abs());
            let dev = grad_dev.max(value_dev);
            if dev > worst || witness.is_empty() {
                worst = worst.max(dev);
                witness = x.clone();
            }
        }
    }
    Ok(finish(
        "inverse-homogeneity",
        objective,
        samples,
        tolerance,
        worst,
        witness,
    ))
}

/// Relative error between the analytic gradient and central differences
/// with step `h`, restricted to `coords` (all coordinates when `None`).
pub fn finite_difference_error(
    objective: &dyn Objective,
    x: &[f64],
    h: f64,
    coords: Option<&[usize]>,
    batch: Batch<'_>,
) -> Result<f64> {
    let e = objective.evaluate(x, batch)?;
    let all: Vec<usize> = (0..x.len()).collect();
    let coords = coords.unwrap_or(&all);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = objective.evaluate(&probe, batch)?.value;
        probe[i] = orig - h;
        let fm = objective.evaluate(&probe, batch)?.value;
        probe[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        num += (fd - e.gradient[i]).powi(2);
        den += e.gradient[i].powi(2);
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// Registration gate: orthogonality and homogeneity (scales 0.5 and 2) on
/// 100 random points.
pub fn certify(objective: &dyn Objective, tolerance: f64, seed: u64) -> Result<()> {
    let ortho = certify_orthogonality(objective, 100, seed, tolerance)?;
    let homog = certify_inverse_homogeneity(objective, &[0.5, 2.0], 100, seed ^ 0x5eed, tolerance)?;
    for r in [ortho, homog] {
        if !r.passed {
            return Err(Error::Certification {
                id: objective.id().to_string(),
                reason: format!(
                    "{} deviation {:e} exceeds tolerance {:e}",
                    r.check, r.max_deviation, r.tolerance
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Quadratic, ToyRational};

    #[test]
    fn toy_is_orthogonal_to_machine_precision() {
        let r = certify_orthogonality(&ToyRational, 100, 1, CLOSED_FORM_TOL).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn toy_is_inverse_homogeneous() {
        let r = certify_inverse_homogeneity(&ToyRational, &[0.5, 2.0, 10.0], 100, 2, CLOSED_FORM_TOL)
            .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn unit_scale_has_zero_deviation() {
        let r = certify_inverse_homogeneity(&ToyRational, &[1.0], 50, 3, CLOSED_FORM_TOL).unwrap();
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn quadratic_fails_both_checks() {
        let q = Quadratic { dim: 3 };
        let o = certify_orthogonality(&q, 20, 4, CLOSED_FORM_TOL).unwrap();
        let h = certify_inverse_homogeneity(&q, &[2.0], 20, 4, CLOSED_FORM_TOL).unwrap();
        assert!(!o.passed && !h.passed);
        assert!((o.max_deviation - 1.0).abs() < 1e-12);
        assert!(certify(&q, CLOSED_FORM_TOL, 0).is_err());
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(certify_inverse_homogeneity(&ToyRational, &[2.0, 0.0], 1, 0, 1e-12).is_err());
        assert!(certify_orthogonality(&ToyRational, 0, 0, 1e-12).is_err());
    }

    #[test]
    fn samples_avoid_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert!(vector::norm(&sample_point(&mut rng, 1)) >= MIN_SAMPLE_NORM);
        }
    }

    #[test]
    fn toy_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = sample_point(&mut rng, 2);
            let err = finite_difference_error(&ToyRational, &x, 1e-6, None, Batch::Full).unwrap();
            assert!(err < 1e-6, "{x:?}: {err}");
        }
    }
}
