//! Decision sets, exact projections onto their scaled copies, and sphere
//! sampling.
//!
//! Only origin-symmetric boxes and centered balls are supported. Both contain
//! the ball of radius [`FeasibleSet::inner_radius`] and are contained in the
//! ball of radius [`FeasibleSet::outer_radius`], and both have closed-form
//! Euclidean projections.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type Vector = Array1<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// `[-half_width, half_width]^dim`
    Box { half_width: f64, dim: usize },
    /// `{x : ‖x‖ ≤ radius}` in `dim` dimensions
    Ball { radius: f64, dim: usize },
}

impl FeasibleSet {
    pub fn symmetric_box(half_width: f64, dim: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Parameter(format!(
                "box half-width must be positive and finite, got {half_width}"
            )));
        }
        if dim == 0 {
            return Err(Error::Parameter("set dimension must be at least 1".into()));
        }
        Ok(FeasibleSet::Box { half_width, dim })
    }

    pub fn centered_ball(radius: f64, dim: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Parameter(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        if dim == 0 {
            return Err(Error::Parameter("set dimension must be at least 1".into()));
        }
        Ok(FeasibleSet::Ball { radius, dim })
    }

    pub fn dim(&self) -> usize {
        match *self {
            FeasibleSet::Box { dim, .. } | FeasibleSet::Ball { dim, .. } => dim,
        }
    }

    /// Radius of the largest centered ball inside the set.
    pub fn inner_radius(&self) -> f64 {
        match *self {
            FeasibleSet::Box { half_width, .. } => half_width,
            FeasibleSet::Ball { radius, .. } => radius,
        }
    }

    /// Radius of the smallest centered ball containing the set.
    pub fn outer_radius(&self) -> f64 {
        match *self {
            FeasibleSet::Box { half_width, dim } => half_width * (dim as f64).sqrt(),
            FeasibleSet::Ball { radius, .. } => radius,
        }
    }

    /// Euclidean projection onto `shrink · X`, with `shrink ∈ (0, 1]`.
    pub fn project(&self, shrink: f64, point: &Vector) -> Result<Vector> {
        check_shrink(shrink)?;
        check_dim("projection input", self.dim(), point.len())?;
        Ok(match *self {
            FeasibleSet::Box { half_width, .. } => {
                let h = shrink * half_width;
                point.mapv(|v| v.clamp(-h, h))
            }
            FeasibleSet::Ball { radius, .. } => {
                let r = shrink * radius;
                let norm = norm(point);
                if norm > r {
                    let mut out = point * (r / norm);
                    // rounding can leave the scaled point a few ulps outside
                    while self::norm(&out) > r {
                        out *= 1.0 - f64::EPSILON;
                    }
                    out
                } else {
                    point.clone()
                }
            }
        })
    }

    /// Membership in `shrink · X` with absolute slack `tol`.
    pub fn contains(&self, shrink: f64, point: &Vector, tol: f64) -> bool {
        if point.len() != self.dim() || point.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match *self {
            FeasibleSet::Box { half_width, .. } => {
                let h = shrink * half_width + tol;
                point.iter().all(|v| v.abs() <= h)
            }
            FeasibleSet::Ball { radius, .. } => norm(point) <= shrink * radius + tol,
        }
    }

    /// Uniform sample from `shrink · X`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, shrink: f64) -> Vector {
        match *self {
            FeasibleSet::Box { half_width, dim } => {
                let h = shrink * half_width;
                Vector::from_shape_fn(dim, |_| rng.random_range(-h..=h))
            }
            FeasibleSet::Ball { radius, dim } => sample_unit_ball(rng, dim) * (shrink * radius),
        }
    }

    /// Sample from the extreme points: a random vertex of the box or a random
    /// point on the bounding sphere of the ball.
    pub fn sample_extreme<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match *self {
            FeasibleSet::Box { half_width, dim } => Vector::from_shape_fn(dim, |_| {
                if rng.random_bool(0.5) {
                    half_width
                } else {
                    -half_width
                }
            }),
            FeasibleSet::Ball { radius, dim } => sample_unit_sphere(rng, dim) * radius,
        }
    }
}

fn check_shrink(shrink: f64) -> Result<()> {
    if shrink > 0.0 && shrink <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "shrink factor must lie in (0, 1], got {shrink}"
        )))
    }
}

pub fn norm(v: &Vector) -> f64 {
    v.dot(v).sqrt()
}

/// Uniform direction on the unit sphere in `dim` dimensions (normalized
/// Gaussian). For `dim = 1` this is ±1 with equal probability.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    assert!(dim >= 1, "sphere dimension must be at least 1");
    loop {
        let g = Vector::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let n = norm(&g);
        // a zero draw has probability zero but would divide by zero
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// Uniform sample from the unit ball: sphere direction scaled by `U^{1/dim}`.
pub fn sample_unit_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    let u: f64 = rng.random();
    sample_unit_sphere(rng, dim) * u.powf(1.0 / dim as f64)
}
