//! Step-size, regularization, shrinkage, exploration and trigger-threshold
//! sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event-triggering threshold sequence `τ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerSchedule {
    /// `τ_t = 1 / t^θ`
    Power { theta: f64 },
    /// `τ_t = 1 / c^t`
    Geometric { c: f64 },
    /// `τ_t = τ₀ / t^θ₃`
    ScaledPower { tau0: f64, theta3: f64 },
    /// `τ_1 = 1`, `τ_t = 0` afterwards: every agent broadcasts every round.
    NoTrigger,
}

impl TriggerSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TriggerSchedule::Power { theta } if !(theta > 0.0 && theta.is_finite()) => {
                Err(Error::config("trigger.theta", format!("must be positive, got {theta}")))
            }
            TriggerSchedule::Geometric { c } if !(c > 1.0 && c.is_finite()) => {
                Err(Error::config("trigger.c", format!("must exceed 1, got {c}")))
            }
            TriggerSchedule::ScaledPower { tau0, .. } if !(tau0 >= 0.0 && tau0.is_finite()) => {
                Err(Error::config("trigger.tau0", format!("must be nonnegative, got {tau0}")))
            }
            TriggerSchedule::ScaledPower { theta3, .. } if !(theta3 > 0.0 && theta3.is_finite()) => {
                Err(Error::config("trigger.theta3", format!("must be positive, got {theta3}")))
            }
            _ => Ok(()),
        }
    }

    pub fn tau(&self, t: usize) -> f64 {
        let tf = t as f64;
        match *self {
            TriggerSchedule::Power { theta } => tf.powf(-theta),
            TriggerSchedule::Geometric { c } => c.powf(-tf),
            TriggerSchedule::ScaledPower { tau0, theta3 } => tau0 / tf.powf(theta3),
            TriggerSchedule::NoTrigger => {
                if t == 1 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Step-size family for `α_t`, `β_t`, `γ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StepRule {
    /// `α_t = √(Ψ_t / t)`, `β_t = t^{−κ}`, `γ_t = t^{κ−1}`
    Theorem1 { kappa: f64 },
    /// `α_t = α₀ t^{−θ₁}`, `β_t = t^{−θ₂}`, `γ_t = t^{θ₂−1}`
    Theorem2 { alpha0: f64, theta1: f64, theta2: f64 },
}

/// Parameters for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamsAt {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub delta: f64,
    pub tau: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub step: StepRule,
    pub trigger: TriggerSchedule,
    /// `r(X)`, scales the exploration radius `δ_t = r(X) / (t + 1)`
    pub inner_radius: f64,
}

fn open_unit(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in (0, 1), got {v}")))
    }
}

impl Schedule {
    pub fn new(step: StepRule, trigger: TriggerSchedule, inner_radius: f64) -> Result<Self> {
        let s = Schedule {
            step,
            trigger,
            inner_radius,
        };
        s.validate()?;
        Ok(s)
    }

    /// `α_t = β_t = γ_t = 1/√t`, `τ_t = τ₀ / t`.
    pub fn paper_sec4(tau0: f64, inner_radius: f64) -> Result<Self> {
        Schedule::new(
            StepRule::Theorem2 {
                alpha0: 1.0,
                theta1: 0.5,
                theta2: 0.5,
            },
            TriggerSchedule::ScaledPower { tau0, theta3: 1.0 },
            inner_radius,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius.is_finite()) {
            return Err(Error::Parameter(format!(
                "inner radius must be positive, got {}",
                self.inner_radius
            )));
        }
        self.trigger.validate()?;
        match self.step {
            StepRule::Theorem1 { kappa } => {
                open_unit("schedule.kappa", kappa)?;
                // α_t = √(Ψ_t/t) would be zero from the first round
                if self.trigger.tau(1) <= 0.0 {
                    return Err(Error::config(
                        "trigger.tau0",
                        "theorem1 step sizes need τ_1 > 0",
                    ));
                }
            }
            StepRule::Theorem2 {
                alpha0,
                theta1,
                theta2,
            } => {
                if !(alpha0 > 0.0 && alpha0.is_finite()) {
                    return Err(Error::config("schedule.alpha0", format!("must be positive, got {alpha0}")));
                }
                open_unit("schedule.theta1", theta1)?;
                open_unit("schedule.theta2", theta2)?;
            }
        }
        Ok(())
    }

    fn evaluate(&self, t: usize, psi: f64) -> ParamsAt {
        let tf = t as f64;
        let (alpha, beta, gamma) = match self.step {
            StepRule::Theorem1 { kappa } => ((psi / tf).sqrt(), tf.powf(-kappa), tf.powf(kappa - 1.0)),
            StepRule::Theorem2 {
                alpha0,
                theta1,
                theta2,
            } => (alpha0 * tf.powf(-theta1), tf.powf(-theta2), tf.powf(theta2 - 1.0)),
        };
        ParamsAt {
            alpha,
            beta,
            gamma,
            xi: 1.0 / (tf + 1.0),
            delta: self.inner_radius / (tf + 1.0),
            tau: self.trigger.tau(t),
            psi,
        }
    }

    /// Random access; recomputes `Ψ_t` in `O(t)`.
    pub fn params_at(&self, t: usize) -> Result<ParamsAt> {
        if t == 0 {
            return Err(Error::Parameter("rounds start at t = 1".into()));
        }
        let psi = (1..=t).fold(0.0, |acc, k| acc + self.trigger.tau(k));
        Ok(self.evaluate(t, psi))
    }

    /// Sequential access with incremental `Ψ_t`, starting at `t = 1`.
    pub fn cursor(&self) -> ScheduleCursor {
        ScheduleCursor {
            schedule: *self,
            t: 0,
            psi: 0.0,
        }
    }
}

/// Yields `(t, params)` for `t = 1, 2, …`.
#[derive(Debug, Clone)]
pub struct ScheduleCursor {
    schedule: Schedule,
    t: usize,
    psi: f64,
}

impl Iterator for ScheduleCursor {
    type Item = (usize, ParamsAt);

    fn next(&mut self) -> Option<Self::Item> {
        self.t += 1;
        self.psi += self.schedule.trigger.tau(self.t);
        Some((self.t, self.schedule.evaluate(self.t, self.psi)))
    }
}
