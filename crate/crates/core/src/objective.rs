//! Scale-invariant objectives.
//!
//! An objective `f` is scale-invariant when `f(a x) = f(x)` for every `a > 0`.
//! Its gradient is then orthogonal to `x` and scales as `1/a`, which is what
//! makes the norm dynamics of weight-decayed gradient descent tractable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

/// Which examples a stochastic objective should average over.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

/// One evaluation of an objective at a point, with the norm quantities the
/// dynamics are phrased in.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// `‖x‖`
    pub rho: f64,
    /// `‖∇f(x)‖`
    pub grad_norm: f64,
    /// `‖x‖·‖∇f(x)‖`, the gradient norm seen on the unit sphere.
    pub eff_grad_norm: f64,
    /// Fraction of misclassified examples, for objectives with labels.
    pub error: Option<f64>,
}

impl GradientEval {
    pub fn new(x: &[f64], value: f64, gradient: Vec<f64>, error: Option<f64>) -> Self {
        let rho = vector::norm(x);
        let grad_norm = vector::norm(&gradient);
        GradientEval {
            value,
            gradient,
            rho,
            grad_norm,
            eff_grad_norm: rho * grad_norm,
            error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    ToyRational,
    SiNet,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stochasticity {
    FullBatch,
    /// Minibatch sampling over `examples` training examples.
    Minibatch { examples: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub stochasticity: Stochasticity,
    pub dimension: usize,
}

/// A differentiable objective over `R^dim`.
///
/// Implementations are immutable; stochastic objectives receive the batch to
/// average over explicitly, so one instance can be shared across threads.
pub trait Objective: Send + Sync {
    fn id(&self) -> &str;

    fn spec(&self) -> ObjectiveSpec;

    fn dim(&self) -> usize {
        self.spec().dimension
    }

    fn evaluate(&self, x: &[f64], batch: Batch<'_>) -> Result<GradientEval>;
}

pub(crate) fn check_point(x: &[f64], dim: usize) -> Result<f64> {
    if x.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: x.len(),
        });
    }
    if !vector::is_finite(x) {
        return Err(Error::Domain("non-finite coordinate".into()));
    }
    let r2 = vector::norm_sq(x);
    if r2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(r2)
}

/// `f(x, y) = x² / (x² + y²)`, the two-variable toy objective.
///
/// Its minimum value 0 is attained on the whole line `x = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyRational;

impl ToyRational {
    pub const ID: &'static str = "toy-rational";
}

impl Objective for ToyRational {
    fn id(&self) -> &str {
        Self::ID
    }

    fn spec(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::ToyRational,
            stochasticity: Stochasticity::FullBatch,
            dimension: 2,
        }
    }

    fn evaluate(&self, p: &[f64], _batch: Batch<'_>) -> Result<GradientEval> {
        let r2 = check_point(p, 2)?;
        let (x, y) = (p[0], p[1]);
        let r4 = r2 * r2;
        let value = x * x / r2;
        let gradient = vec![2.0 * x * y * y / r4, -2.0 * x * x * y / r4];
        Ok(GradientEval::new(p, value, gradient, None))
    }
}

/// `f(x) = ½‖x‖²`. Not scale-invariant; exists as a negative control for
/// the certification checks.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub dim: usize,
}

impl Objective for Quadratic {
    fn id(&self) -> &str {
        "quadratic"
    }

    fn spec(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::UserSupplied,
            stochasticity: Stochasticity::FullBatch,
            dimension: self.dim,
        }
    }

    fn evaluate(&self, x: &[f64], _batch: Batch<'_>) -> Result<GradientEval> {
        let r2 = check_point(x, self.dim)?;
        Ok(GradientEval::new(x, 0.5 * r2, x.to_vec(), None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(x: f64, y: f64) -> GradientEval {
        ToyRational.evaluate(&[x, y], Batch::Full).unwrap()
    }

    #[test]
    fn toy_minimum_on_vertical_axis() {
        let e = toy(0.0, 1.0);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.gradient, vec![0.0, 0.0]);
        assert_eq!(e.eff_grad_norm, 0.0);
    }

    #[test]
    fn toy_at_unit_diagonal() {
        // f = 1/2; ∂x = 2·1·1/4, ∂y = -2·1·1/4
        let e = toy(1.0, 1.0);
        assert_eq!(e.value, 0.5);
        assert_eq!(e.gradient, vec![0.5, -0.5]);
        assert!((e.eff_grad_norm - 1.0).abs() < 1e-15);
        assert_eq!(vector::dot(&e.gradient, &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn toy_rescaling_keeps_value_and_shrinks_gradient() {
        let c = 7.3;
        let (x, y) = (0.37, -1.9);
        let a = toy(x, y);
        let b = toy(c * x, c * y);
        assert!((a.value - b.value).abs() < 1e-15);
        for (ga, gb) in a.gradient.iter().zip(&b.gradient) {
            assert!((ga / c - gb).abs() <= 1e-15 * ga.abs().max(1e-300));
        }
        assert!((a.eff_grad_norm - b.eff_grad_norm).abs() < 1e-14);
    }

    #[test]
    fn origin_is_a_hard_error() {
        assert!(matches!(
            ToyRational.evaluate(&[0.0, 0.0], Batch::Full),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(matches!(
            ToyRational.evaluate(&[1.0, 0.0, 2.0], Batch::Full),
            Err(Error::Dimension { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn toy_gradient_matches_central_differences() {
        let h = 1e-6;
        for &(x, y) in &[(1.0, 1.0), (0.3, -2.0), (-1.7, 0.05), (0.01, 1.0)] {
            let e = toy(x, y);
            let fd = [
                (toy(x + h, y).value - toy(x - h, y).value) / (2.0 * h),
                (toy(x, y + h).value - toy(x, y - h).value) / (2.0 * h),
            ];
            let err = ((fd[0] - e.gradient[0]).powi(2) + (fd[1] - e.gradient[1]).powi(2)).sqrt();
            assert!(err <= 1e-6 * e.grad_norm, "({x},{y}): err {err}");
        }
    }
}
