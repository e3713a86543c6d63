//! Two-point stochastic subgradient estimators.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{norm, sample_unit_ball, Vector};
use crate::problem::{LocalOracle, Matrix};

/// Function values observed at `x` and at the probe `x + δu`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditSample {
    pub u: Vector,
    pub delta: f64,
    pub f_at_x: f64,
    pub f_at_xplus: f64,
    /// `[g(x)]_+`
    pub gplus_at_x: Vector,
    /// `[g(x + δu)]_+`
    pub gplus_at_xplus: Vector,
}

impl BanditSample {
    /// Queries `oracle` exactly twice for `f` and twice for `g`.
    pub fn observe(oracle: &dyn LocalOracle, x: &Vector, u: Vector, delta: f64) -> Self {
        let probe = x + &(&u * delta);
        BanditSample {
            f_at_x: oracle.loss(x),
            f_at_xplus: oracle.loss(&probe),
            gplus_at_x: oracle.constraints(x).mapv(|v| v.max(0.0)),
            gplus_at_xplus: oracle.constraints(&probe).mapv(|v| v.max(0.0)),
            u,
            delta,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!(
                "exploration radius must be positive, got {}",
                self.delta
            )));
        }
        if self.gplus_at_x.len() != self.gplus_at_xplus.len() {
            return Err(Error::Dimension {
                what: "clipped constraint values",
                expected: self.gplus_at_x.len(),
                found: self.gplus_at_xplus.len(),
            });
        }
        Ok(())
    }
}

/// `(p/δ) (f(x + δu) − f(x)) u`
pub fn est_loss_subgrad(sample: &BanditSample) -> Result<Vector> {
    sample.check()?;
    let p = sample.u.len() as f64;
    let scale = p / sample.delta * (sample.f_at_xplus - sample.f_at_x);
    Ok(&sample.u * scale)
}

/// `p × m` matrix with column `k` equal to
/// `(p/δ) ([g_k(x + δu)]_+ − [g_k(x)]_+) u`.
pub fn est_constraint_plus_subgrad(sample: &BanditSample) -> Result<Matrix> {
    sample.check()?;
    let p = sample.u.len();
    let m = sample.gplus_at_x.len();
    let factor = p as f64 / sample.delta;
    let diff = (&sample.gplus_at_xplus - &sample.gplus_at_x) * factor;
    let mut out = Matrix::zeros((p, m));
    for k in 0..m {
        out.column_mut(k).assign(&(&sample.u * diff[k]));
    }
    Ok(out)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo estimate of the ball-smoothed value `E_{v ∈ B}[f(x + δ v)]`.
pub fn smoothed_value<R: Rng + ?Sized>(
    f: impl Fn(&Vector) -> f64,
    x: &Vector,
    delta: f64,
    n_samples: usize,
    rng: &mut R,
) -> MonteCarlo {
    assert!(n_samples >= 2, "need at least two samples for a standard error");
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let v = sample_unit_ball(rng, x.len());
        let y = f(&(x + &(v * delta)));
        sum += y;
        sum_sq += y * y;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    MonteCarlo {
        mean,
        std_err: (var / n).sqrt(),
    }
}

/// `true` when the loss estimate respects `‖∂̂f‖ ≤ p F₂`.
pub fn within_norm_bound(est: &Vector, f2: f64) -> bool {
    norm(est) <= est.len() as f64 * f2 * (1.0 + 1e-12)
}
