//! Step-size rules: the initial step bound, the Λ gate and step schedules.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metric::SmoothnessProfile;
use crate::oracle::BudgetSchedule;

fn upsilon(b: usize, c_vb: f64, mbar: f64) -> f64 {
    if c_vb == 0.0 {
        1.0
    } else {
        1.0 + 2.0 * c_vb / ((b as f64).sqrt() * mbar)
    }
}

/// Relative amount by which the returned step sits below the root `Λ = 1/2`.
pub const STRICT_MARGIN: f64 = 1e-12;

/// Largest `γ_{t,0}` for which the gate quantity stays below 1/2.
///
/// The closed-form root gives `Λ = 1/2` exactly; the result is pulled inside
/// by [`STRICT_MARGIN`] so that the inequality is strict.
pub fn max_initial_stepsize(
    profile: &SmoothnessProfile,
    kin: usize,
    b: usize,
    c_vb: f64,
    min_mbar: f64,
) -> Result<f64> {
    if kin == 0 || b == 0 {
        return Err(Error::InvalidArgument("kin and b must be positive".into()));
    }
    if !(c_vb >= 0.0) || !(min_mbar > 0.0) {
        return Err(Error::InvalidArgument(
            "C_vb must be nonnegative and min_Mbar positive".into(),
        ));
    }
    let l = profile.aggregate_l();
    let lw = profile.gradient_lipschitz();
    let (vmin, vmax) = (profile.v_min(), profile.v_max());
    if !(l > 0.0) {
        return Err(Error::InvalidArgument("aggregate Lipschitz constant must be positive".into()));
    }
    let ups = upsilon(b, c_vb, min_mbar);
    let ratio = kin as f64 / b as f64;
    let r = lw / l;
    let root = (b as f64 / (4.0 * l * vmax * ups * kin as f64))
        * ((r * r + 4.0 * vmin * vmax * ratio * ups).sqrt() - r);
    Ok(root * (1.0 - STRICT_MARGIN))
}

/// `Λ = γ L_Ẇ / v_min + γ² L² (2 v_max k_in)/(v_min b) (1 + 2 C_vb/(√b M̄))`.
pub fn lambda_gate(
    gamma: f64,
    profile: &SmoothnessProfile,
    kin: usize,
    b: usize,
    c_vb: f64,
    mbar: f64,
) -> f64 {
    let l = profile.aggregate_l();
    let (vmin, vmax) = (profile.v_min(), profile.v_max());
    gamma * profile.gradient_lipschitz() / vmin
        + gamma * gamma * l * l * (2.0 * vmax * kin as f64) / (vmin * b as f64)
            * upsilon(b, c_vb, mbar)
}

/// Constants needed to evaluate the Λ gate during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub profile: SmoothnessProfile,
    pub c_vb: f64,
}

/// `γ_{t,k+1} = Π_{j=0}^{k} (1 + 2 C_b / m_{t,j+1})^{-1} γ_{t,0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreasingSchedule {
    pub gamma0: f64,
    pub c_b: f64,
    pub budgets: BudgetSchedule,
}

impl DecreasingSchedule {
    /// `γ_{t,k}` with `k = 0` returning `γ_{t,0}`.
    pub fn gamma(&self, t: usize, k: usize) -> f64 {
        let mut g = self.gamma0;
        for j in 1..=k {
            g /= 1.0 + 2.0 * self.c_b / self.budgets.inner(t, j) as f64;
        }
        g
    }
}

pub fn decreasing_stepsize_schedule(
    gamma_t0: f64,
    c_b: f64,
    budgets: BudgetSchedule,
) -> Result<DecreasingSchedule> {
    if !(gamma_t0 > 0.0) || !(c_b >= 0.0) {
        return Err(Error::InvalidArgument(
            "need gamma_t0 > 0 and C_b >= 0".into(),
        ));
    }
    budgets.validate()?;
    Ok(DecreasingSchedule {
        gamma0: gamma_t0,
        c_b,
        budgets,
    })
}

pub type CustomStep = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;

/// Step size used to produce iterate `(t, k+1)`.
#[derive(Clone)]
pub enum StepSchedule {
    Constant(f64),
    /// `(epoch, γ)` pairs sorted by epoch; the last pair whose epoch has been
    /// reached is in force.
    PiecewiseEpoch(Vec<(f64, f64)>),
    Decreasing(DecreasingSchedule),
    Custom(CustomStep),
}

impl std::fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepSchedule::Constant(g) => f.debug_tuple("Constant").field(g).finish(),
            StepSchedule::PiecewiseEpoch(p) => f.debug_tuple("PiecewiseEpoch").field(p).finish(),
            StepSchedule::Decreasing(d) => f.debug_tuple("Decreasing").field(d).finish(),
            StepSchedule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSchedule::Constant(g) => *g > 0.0 && g.is_finite(),
            StepSchedule::PiecewiseEpoch(p) => {
                !p.is_empty()
                    && p.iter().all(|(e, g)| *e >= 0.0 && *g > 0.0 && g.is_finite())
                    && p.windows(2).all(|w| w[0].0 <= w[1].0)
            }
            StepSchedule::Decreasing(d) => d.gamma0 > 0.0 && d.c_b >= 0.0,
            StepSchedule::Custom(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid step schedule {self:?}")))
        }
    }

    /// `γ_{t,k+1}` given the number of epochs already spent.
    pub fn gamma(&self, t: usize, k: usize, epochs: f64) -> f64 {
        match self {
            StepSchedule::Constant(g) => *g,
            StepSchedule::PiecewiseEpoch(p) => p
                .iter()
                .take_while(|(e, _)| epochs + 1e-12 >= *e)
                .last()
                .map(|&(_, g)| g)
                .unwrap_or(p[0].1),
            StepSchedule::Decreasing(d) => d.gamma(t, k + 1),
            StepSchedule::Custom(f) => f(t, k),
        }
    }
}
