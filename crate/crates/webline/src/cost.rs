//! Cost machinery for both controllers.
//!
//! The state weight `Q` comes from Bryson's rule (`Q_ii ~ 1/x_i²`) with an
//! extra boost on the tension cells. The control penalty for the sampling
//! controller is fixed by the path-integral consistency condition
//!
//! ```text
//! R = λ G_cᵀ B_c⁻ᵀ B_c⁻¹ G_c
//! ```
//!
//! which prices control cheaply exactly on the channels where the plant
//! disturbance is strong. Two stage costs are provided: a plain quadratic
//! `(x − xʳ)ᵀ Q (x − xʳ)` and the same plus an L1 tension penalty
//! `q_l1 Σ |T_i − T_iʳ|`, non-differentiable at zero deviation. The
//! adjusted running cost used inside rollouts is
//!
//! ```text
//! q̃(x, ū, δu) = q(x) + ((1 − ν⁻¹)/2) δuᵀRδu + ūᵀRδu + ½ ūᵀRū
//! ```

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{self, ChannelMatrices, LineParams, LineState};

/// Which stage cost a controller optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostVariant {
    #[serde(rename = "quadratic")]
    Quadratic,
    #[serde(rename = "quadratic+l1")]
    QuadraticL1,
}

/// State-cost configuration shared by all controllers.
#[derive(Debug, Clone)]
pub struct CostConfig {
    pub variant: CostVariant,
    /// Diagonal of `Q`, length `2N` (tensions first, then velocities).
    pub q_diag: DVector<f64>,
    /// L1 weight on tension deviations; zero recovers the plain quadratic.
    pub q_l1: f64,
    /// Softmax temperature λ.
    pub temperature: f64,
    /// Exploration variance inflation ν.
    pub exploration: f64,
}

impl CostConfig {
    pub fn new(
        variant: CostVariant,
        q_diag: DVector<f64>,
        q_l1: f64,
        temperature: f64,
        exploration: f64,
    ) -> Result<Self> {
        if q_diag.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("state weights must be nonnegative"));
        }
        if !(q_l1 >= 0.0) {
            return Err(Error::config("q_l1 must be nonnegative"));
        }
        if !(temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(exploration > 0.0) {
            return Err(Error::config("exploration must be positive"));
        }
        Ok(CostConfig {
            variant,
            q_diag,
            q_l1,
            temperature,
            exploration,
        })
    }

    /// Build a config from Bryson scales. `l1_factor` sets
    /// `q_l1 = l1_factor × Q_11`, keeping the L1 weight tied to the
    /// tension weight whenever the scales change.
    #[allow(clippy::too_many_arguments)]
    pub fn bryson(
        variant: CostVariant,
        n: usize,
        tension_scale: f64,
        velocity_scale: f64,
        tension_boost: f64,
        l1_factor: f64,
        temperature: f64,
        exploration: f64,
    ) -> Result<Self> {
        let q_diag = bryson_weights(tension_scale, velocity_scale, tension_boost, n)?;
        if !(l1_factor >= 0.0) {
            return Err(Error::config("l1_factor must be nonnegative"));
        }
        let q_l1 = match variant {
            CostVariant::Quadratic => 0.0,
            CostVariant::QuadraticL1 => l1_factor * q_diag[0],
        };
        CostConfig::new(variant, q_diag, q_l1, temperature, exploration)
    }

    /// Stage cost of the active variant.
    #[inline]
    pub fn stage_cost(&self, x: &LineState, x_ref: &LineState) -> f64 {
        match self.variant {
            CostVariant::Quadratic => stage_cost_quadratic(x, x_ref, &self.q_diag),
            CostVariant::QuadraticL1 => stage_cost_l1(x, x_ref, &self.q_diag, self.q_l1),
        }
    }
}

/// Bryson diagonal: `boost/tension_scale²` on the `n` tension cells,
/// `1/velocity_scale²` on the `n` velocity cells.
pub fn bryson_weights(
    tension_scale: f64,
    velocity_scale: f64,
    tension_boost: f64,
    n: usize,
) -> Result<DVector<f64>> {
    if !(tension_scale > 0.0) || !(velocity_scale > 0.0) {
        return Err(Error::config("Bryson scales must be positive"));
    }
    if !(tension_boost >= 1.0) {
        return Err(Error::config("tension boost must be at least 1"));
    }
    let tw = tension_boost / (tension_scale * tension_scale);
    let vw = 1.0 / (velocity_scale * velocity_scale);
    let mut q = DVector::zeros(2 * n);
    for i in 0..n {
        q[i] = tw;
        q[n + i] = vw;
    }
    Ok(q)
}

/// Diagonal control penalty `R` with entries `λ R_i² / (J_i² b_i²)`.
#[derive(Debug, Clone)]
pub struct ControlPenalty {
    diag: DVector<f64>,
}

impl ControlPenalty {
    /// Path-integral penalty `R = λ G_cᵀ B_c⁻ᵀ B_c⁻¹ G_c`. Fails when any
    /// disturbance channel is zero: a channel without noise has no natural
    /// sampling variance and the penalty would be infinite.
    pub fn from_params(params: &LineParams, temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::config("temperature must be finite and nonnegative"));
        }
        let ch = ChannelMatrices::from_params(params);
        let mut diag = DVector::zeros(params.n());
        for i in 0..params.n() {
            let b = ch.disturbance_gain()[i];
            if b == 0.0 {
                return Err(Error::Config(format!(
                    "disturbance coefficient b[{i}] is zero: the sampling \
                     controller needs a noise channel on every control input"
                )));
            }
            let g = ch.control_gain()[i];
            diag[i] = temperature * g * g / (b * b);
        }
        Ok(ControlPenalty { diag })
    }

    /// Uniform diagonal penalty (used for the linear-MPC Bryson penalty
    /// and in tests).
    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::config("penalty value must be finite and nonnegative"));
        }
        Ok(ControlPenalty {
            diag: DVector::from_element(n, value),
        })
    }

    #[inline]
    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    /// `aᵀ R b` for the diagonal penalty.
    #[inline]
    pub fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.bilinear_slice(a.as_slice(), b.as_slice())
    }

    #[inline]
    pub(crate) fn bilinear_slice(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.diag.len() {
            acc += a[i] * self.diag[i] * b[i];
        }
        acc
    }
}

/// `(x − xʳ)ᵀ Q (x − xʳ)` with diagonal `Q`.
#[inline]
pub fn stage_cost_quadratic(x: &LineState, x_ref: &LineState, q_diag: &DVector<f64>) -> f64 {
    let n = x.n();
    debug_assert_eq!(q_diag.len(), 2 * n);
    let mut acc = 0.0;
    for i in 0..n {
        let dt = x.tensions[i] - x_ref.tensions[i];
        acc += q_diag[i] * dt * dt;
        let dv = x.velocities[i] - x_ref.velocities[i];
        acc += q_diag[n + i] * dv * dv;
    }
    acc
}

/// Quadratic stage cost plus `q_l1 Σ |T_i − T_iʳ|`.
#[inline]
pub fn stage_cost_l1(x: &LineState, x_ref: &LineState, q_diag: &DVector<f64>, q_l1: f64) -> f64 {
    let mut acc = stage_cost_quadratic(x, x_ref, q_diag);
    for i in 0..x.n() {
        acc += q_l1 * (x.tensions[i] - x_ref.tensions[i]).abs();
    }
    acc
}

/// Adjusted running cost
/// `q + ((1 − ν⁻¹)/2) δuᵀRδu + ūᵀRδu + ½ ūᵀRū`.
#[inline]
pub fn adjusted_stage_cost(
    q_val: f64,
    u_bar: &DVector<f64>,
    du: &DVector<f64>,
    r: &ControlPenalty,
    nu: f64,
) -> f64 {
    adjusted_stage_cost_slices(q_val, u_bar.as_slice(), du.as_slice(), r, nu)
}

#[inline]
pub(crate) fn adjusted_stage_cost_slices(
    q_val: f64,
    u_bar: &[f64],
    du: &[f64],
    r: &ControlPenalty,
    nu: f64,
) -> f64 {
    debug_assert!(nu > 0.0);
    q_val
        + 0.5 * (1.0 - 1.0 / nu) * r.bilinear_slice(du, du)
        + r.bilinear_slice(u_bar, du)
        + 0.5 * r.bilinear_slice(u_bar, u_bar)
}

/// Terminal cost: the active stage cost evaluated at the horizon endpoint.
#[inline]
pub fn terminal_cost(x: &LineState, x_ref: &LineState, config: &CostConfig) -> f64 {
    config.stage_cost(x, x_ref)
}

/// Reference trajectories for tensions, roller speeds, and the unwinding
/// speed, addressed by control-step index.
///
/// Tension references are piecewise constant. Roller-speed references are
/// derived from the tension references so the operating point is an
/// equilibrium: the per-section ratios telescope from the recursion
/// `v_i = v_{i−1}(EA − T_{i−1})/(EA − T_i)` and scale linearly with the
/// current `v0`, which may itself step or ramp between breakpoints. The
/// last segment extends indefinitely, so lookups past the run end (e.g.
/// for a prediction horizon) are always defined.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    segment_starts: Vec<usize>,
    tension_refs: Vec<DVector<f64>>,
    /// Equilibrium velocity per unit `v0`, one vector per tension segment.
    velocity_ratios: Vec<DVector<f64>>,
    v0_starts: Vec<usize>,
    v0_values: Vec<f64>,
    /// Steps over which `v0` ramps linearly after each breakpoint
    /// (0 = instantaneous step).
    v0_ramp_steps: usize,
}

impl ReferenceTrajectory {
    /// Build from per-segment tension references and `v0` breakpoints.
    /// Both lists are `(start_step, value)` pairs; the first start must
    /// be 0 and starts must be strictly increasing.
    pub fn piecewise(
        params: &LineParams,
        tension_segments: &[(usize, DVector<f64>)],
        v0_segments: &[(usize, f64)],
        v0_ramp_steps: usize,
    ) -> Result<Self> {
        if tension_segments.is_empty() || v0_segments.is_empty() {
            return Err(Error::config("reference schedules must not be empty"));
        }
        for (segs, name) in [
            (tension_segments.iter().map(|s| s.0).collect::<Vec<_>>(), "tension"),
            (v0_segments.iter().map(|s| s.0).collect::<Vec<_>>(), "v0"),
        ] {
            if segs[0] != 0 {
                return Err(Error::Config(format!(
                    "{name} schedule must start at step 0"
                )));
            }
            if segs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "{name} schedule breakpoints must be strictly increasing"
                )));
            }
        }
        let mut segment_starts = Vec::new();
        let mut tension_refs = Vec::new();
        let mut velocity_ratios = Vec::new();
        for (start, tensions) in tension_segments {
            if tensions.len() != params.n() {
                return Err(Error::config("tension reference length mismatch"));
            }
            let ratios = line::equilibrium_velocities(tensions, 1.0, params)?;
            segment_starts.push(*start);
            tension_refs.push(tensions.clone());
            velocity_ratios.push(ratios);
        }
        Ok(ReferenceTrajectory {
            segment_starts,
            tension_refs,
            velocity_ratios,
            v0_starts: v0_segments.iter().map(|s| s.0).collect(),
            v0_values: v0_segments.iter().map(|s| s.1).collect(),
            v0_ramp_steps,
        })
    }

    /// Time-invariant references.
    pub fn constant(params: &LineParams, tensions: DVector<f64>, v0: f64) -> Result<Self> {
        Self::piecewise(params, &[(0, tensions)], &[(0, v0)], 0)
    }

    fn segment(&self, step: usize) -> usize {
        match self.segment_starts.binary_search(&step) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn tension_refs(&self, step: usize) -> &DVector<f64> {
        &self.tension_refs[self.segment(step)]
    }

    pub fn v0(&self, step: usize) -> f64 {
        let i = match self.v0_starts.binary_search(&step) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if i == 0 || self.v0_ramp_steps == 0 {
            return self.v0_values[i];
        }
        // linear ramp from the previous value over v0_ramp_steps
        let since = step - self.v0_starts[i];
        if since >= self.v0_ramp_steps {
            self.v0_values[i]
        } else {
            let frac = since as f64 / self.v0_ramp_steps as f64;
            self.v0_values[i - 1] + frac * (self.v0_values[i] - self.v0_values[i - 1])
        }
    }

    pub fn velocity_refs(&self, step: usize) -> DVector<f64> {
        let v0 = self.v0(step);
        let mut v = self.velocity_ratios[self.segment(step)].clone();
        v *= v0;
        v
    }

    /// Full reference state at a step.
    pub fn state_ref(&self, step: usize) -> LineState {
        LineState {
            tensions: self.tension_refs(step).clone(),
            velocities: self.velocity_refs(step),
        }
    }

    /// Feedforward torques that hold the reference at a step.
    pub fn feedforward(&self, step: usize, params: &LineParams) -> Result<DVector<f64>> {
        line::equilibrium_torques(self.tension_refs(step), &self.velocity_refs(step), params)
    }

    pub fn n(&self) -> usize {
        self.tension_refs[0].len()
    }
}
