//! Sampling-based path-integral controller.
//!
//! Each control step runs `K` Monte-Carlo rollouts of the nonlinear plant
//! around the nominal plan `ū`. Rollout `k` perturbs the plan with torque
//! noise drawn at the plant's natural control-channel variance,
//!
//! ```text
//! δu_t = (D/√Δt) ε_t,   D = G_c⁻¹ B_c,   ε_t ~ N(0, I)
//! ```
//!
//! propagates `x_{t+1} = x_t + f(x_t)Δt + G(ū_t + √ν δu_t)Δt`, and
//! accumulates the time-integrated running cost plus a terminal cost,
//!
//! ```text
//! S_k = Δt (φ(x_H) + Σ_t q̃(x_t, ū_t, δu_tᵏ))
//! ```
//!
//! The `Δt` factor discretizes the underlying cost integral; without it
//! the exponential weights collapse onto single extreme samples and the
//! weighted update overshoots by a factor `1/Δt`. The plan update is the
//! exponentially weighted perturbation average
//!
//! ```text
//! u_t ← ū_t + Σ_k exp(−S_k/λ) δu_tᵏ / Σ_k exp(−S_k/λ)
//! ```
//!
//! stabilized by subtracting `min_k S_k` before exponentiation, which
//! cancels exactly in the ratio. The first control is applied, the plan
//! shifts left, and the freed tail slot is refilled.
//!
//! Rollouts are embarrassingly parallel. Every rollout draws from its own
//! counter-based RNG stream keyed by `(seed, control step, k)` and writes
//! disjoint slots of the batch, and the weighted reduction runs
//! sequentially in index order, so the result is byte-identical for any
//! number of worker threads.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{self, ControlPenalty, CostConfig, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::line::{self, ChannelMatrices, LineParams, LineState};
use crate::rng::rollout_stream;

/// How the freed last plan slot is refilled after the shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailInit {
    RepeatLast,
    EquilibriumFeedforward,
    Zero,
}

/// How the plan is seeded at the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPlan {
    EquilibriumFeedforward,
    Zero,
}

/// Controller settings. `temperature` and `exploration` must match the
/// values in the cost configuration; the controller constructor checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MppiConfig {
    pub num_samples: usize,
    pub horizon: usize,
    #[serde(default = "default_unity")]
    pub temperature: f64,
    #[serde(default = "default_unity")]
    pub exploration: f64,
    /// Sampling period; must equal the plant step of the scenario.
    #[serde(default)]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tail")]
    pub tail_init: TailInit,
    #[serde(default = "default_initial_plan")]
    pub initial_plan: InitialPlan,
}

fn default_unity() -> f64 {
    1.0
}

fn default_tail() -> TailInit {
    TailInit::EquilibriumFeedforward
}

fn default_initial_plan() -> InitialPlan {
    InitialPlan::EquilibriumFeedforward
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("num_samples must be at least 1"));
        }
        if self.horizon < 2 {
            return Err(Error::config("horizon must be at least 2"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("mppi dt must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.exploration > 0.0) {
            return Err(Error::config("exploration must be positive"));
        }
        Ok(())
    }
}

/// Nominal control sequence over the horizon: `H − 1` torque vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    controls: Vec<DVector<f64>>,
}

impl ControlPlan {
    pub fn new(controls: Vec<DVector<f64>>) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::config("control plan must not be empty"));
        }
        let n = controls[0].len();
        for c in &controls {
            if c.len() != n {
                return Err(Error::config("control plan entries differ in length"));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("control plan contains non-finite entries"));
            }
        }
        Ok(ControlPlan { controls })
    }

    pub fn zeros(horizon: usize, n: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::config("horizon must be at least 2"));
        }
        Ok(ControlPlan {
            controls: vec![DVector::zeros(n); horizon - 1],
        })
    }

    /// Every slot holds the equilibrium feedforward of the reference at
    /// `step`.
    pub fn feedforward(
        refs: &ReferenceTrajectory,
        step: usize,
        horizon: usize,
        params: &LineParams,
    ) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::config("horizon must be at least 2"));
        }
        let u = refs.feedforward(step, params)?;
        Ok(ControlPlan {
            controls: vec![u; horizon - 1],
        })
    }

    /// Number of control slots, `H − 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    #[inline]
    pub fn control(&self, i: usize) -> &DVector<f64> {
        &self.controls[i]
    }

    #[inline]
    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.controls[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.controls.last().expect("plan is never empty")
    }

    /// Drop the first control, shift the rest left, append `tail`.
    pub fn shifted(mut self, tail: DVector<f64>) -> Self {
        self.controls.rotate_left(1);
        *self.controls.last_mut().expect("plan is never empty") = tail;
        self
    }
}

/// Result of one batch of rollouts: the sampled perturbations and the
/// cost of every sample. Non-finite costs mark diverged rollouts; they
/// get zero weight in the update.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    n_channels: usize,
    n_stages: usize,
    /// Flat `K × n_stages × n_channels`, rollout-major.
    perturbations: Vec<f64>,
    costs: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_parts(
        n_channels: usize,
        n_stages: usize,
        perturbations: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        if perturbations.len() != costs.len() * n_stages * n_channels {
            return Err(Error::config("rollout batch size mismatch"));
        }
        Ok(RolloutBatch {
            n_channels,
            n_stages,
            perturbations,
            costs,
        })
    }

    #[inline]
    pub fn num_samples(&self) -> usize {
        self.costs.len()
    }

    #[inline]
    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Perturbation `δu` of rollout `k` at plan slot `stage`.
    #[inline]
    pub fn perturbation(&self, k: usize, stage: usize) -> &[f64] {
        let base = (k * self.n_stages + stage) * self.n_channels;
        &self.perturbations[base..base + self.n_channels]
    }
}

/// Reference data for one horizon slot, shared by every rollout of a batch.
#[derive(Debug, Clone)]
struct StageRef {
    /// Unwinding speed during the step into this slot's state.
    v0: f64,
    /// Reference state the post-step state is compared against.
    x_ref: LineState,
}

fn stage_refs(
    refs: &ReferenceTrajectory,
    start_step: usize,
    horizon: usize,
) -> Vec<StageRef> {
    (0..horizon - 1)
        .map(|j| StageRef {
            v0: refs.v0(start_step + j),
            x_ref: refs.state_ref(start_step + j + 1),
        })
        .collect()
}

/// Reusable per-worker buffers for rollout propagation.
struct RolloutScratch {
    x: LineState,
    t_rates: DVector<f64>,
    v_rates: DVector<f64>,
    u_eff: DVector<f64>,
}

impl RolloutScratch {
    fn new(n: usize) -> Self {
        RolloutScratch {
            x: LineState::zeros(n),
            t_rates: DVector::zeros(n),
            v_rates: DVector::zeros(n),
            u_eff: DVector::zeros(n),
        }
    }
}

/// Draw the `H − 1` torque perturbations `δu_t = D ε_t / √Δt` for one
/// rollout. The stored values are unscaled; the `√ν` inflation is applied
/// during propagation only.
pub fn sample_perturbations(
    rng: &mut ChaCha8Rng,
    horizon: usize,
    params: &LineParams,
    dt: f64,
) -> Result<Vec<DVector<f64>>> {
    if horizon < 2 {
        return Err(Error::config("horizon must be at least 2"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let n = params.n();
    let gain = perturbation_gain(params, dt);
    let mut flat = vec![0.0; (horizon - 1) * n];
    fill_perturbations(rng, gain.as_slice(), &mut flat);
    Ok(flat
        .chunks_exact(n)
        .map(DVector::from_row_slice)
        .collect())
}

/// Per-channel gain `D_ii / √Δt` applied to unit normals.
fn perturbation_gain(params: &LineParams, dt: f64) -> DVector<f64> {
    let ch = ChannelMatrices::from_params(params);
    ch.noise_to_torque() / dt.sqrt()
}

fn fill_perturbations(rng: &mut ChaCha8Rng, gain: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len() % gain.len(), 0);
    let n = gain.len();
    for (i, slot) in out.iter_mut().enumerate() {
        let eps: f64 = rng.sample(StandardNormal);
        *slot = gain[i % n] * eps;
    }
}

/// Cost of one rollout from `x0` under `plan` perturbed by
/// `perturbations`, starting at absolute control step `start_step`.
/// Divergence yields `+∞` rather than an error so a single exploding
/// sample cannot abort a batch.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    x0: &LineState,
    plan: &ControlPlan,
    perturbations: &[DVector<f64>],
    refs: &ReferenceTrajectory,
    start_step: usize,
    cost: &CostConfig,
    penalty: &ControlPenalty,
    params: &LineParams,
    dt: f64,
) -> Result<f64> {
    let n = params.n();
    if perturbations.len() != plan.len() {
        return Err(Error::config("perturbation count must match plan length"));
    }
    if plan.control(0).len() != n || x0.n() != n {
        return Err(Error::config("rollout dimension mismatch"));
    }
    let horizon = plan.len() + 1;
    let mut flat = vec![0.0; plan.len() * n];
    for (j, du) in perturbations.iter().enumerate() {
        if du.len() != n {
            return Err(Error::config("perturbation length mismatch"));
        }
        flat[j * n..(j + 1) * n].copy_from_slice(du.as_slice());
    }
    let stage = stage_refs(refs, start_step, horizon);
    let mut scratch = RolloutScratch::new(n);
    Ok(rollout_with_refs(
        x0,
        plan,
        &flat,
        &stage,
        cost,
        penalty,
        cost.exploration.sqrt(),
        params,
        dt,
        &mut scratch,
    ))
}

/// Shared propagation core: one rollout over precomputed stage references.
#[allow(clippy::too_many_arguments)]
fn rollout_with_refs(
    x0: &LineState,
    plan: &ControlPlan,
    perturbations: &[f64],
    stage: &[StageRef],
    cost: &CostConfig,
    penalty: &ControlPenalty,
    sqrt_nu: f64,
    params: &LineParams,
    dt: f64,
    scratch: &mut RolloutScratch,
) -> f64 {
    let n = params.n();
    scratch.x.tensions.copy_from(&x0.tensions);
    scratch.x.velocities.copy_from(&x0.velocities);
    let mut s = 0.0;
    for (j, stage_ref) in stage.iter().enumerate() {
        let du = &perturbations[j * n..(j + 1) * n];
        let u_bar = plan.control(j);
        for c in 0..n {
            scratch.u_eff[c] = u_bar[c] + sqrt_nu * du[c];
        }
        line::tension_rates_into(&scratch.x, stage_ref.v0, params, &mut scratch.t_rates);
        line::velocity_rates_into(&scratch.x, &scratch.u_eff, params, &mut scratch.v_rates);
        scratch.x.tensions.axpy(dt, &scratch.t_rates, 1.0);
        scratch.x.velocities.axpy(dt, &scratch.v_rates, 1.0);
        if !scratch.x.is_finite() {
            return f64::INFINITY;
        }
        let q_val = cost.stage_cost(&scratch.x, &stage_ref.x_ref);
        s += cost::adjusted_stage_cost_slices(q_val, u_bar.as_slice(), du, penalty, cost.exploration);
    }
    // terminal cost at the final predicted state
    let last_ref = &stage.last().expect("horizon >= 2").x_ref;
    s += cost::terminal_cost(&scratch.x, last_ref, cost);
    // time-integrate: the running cost is an integral discretization
    s *= dt;
    if s.is_nan() {
        f64::INFINITY
    } else {
        s
    }
}

/// Normalized softmax weights `exp(−S_k/λ) / Σ exp(−S_j/λ)`, stabilized by
/// the minimum finite cost. Non-finite costs get weight zero.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let s_min = costs
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !s_min.is_finite() {
        return Err(Error::Controller(
            "all rollouts diverged: no finite cost in batch".into(),
        ));
    }
    let exps: Vec<f64> = costs
        .iter()
        .map(|&s| {
            if s.is_finite() {
                (-(s - s_min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Exponentially weighted plan update: adds the softmax-weighted average
/// of the batch perturbations to every plan slot.
pub fn update_controls(
    plan: &ControlPlan,
    batch: &RolloutBatch,
    temperature: f64,
) -> Result<ControlPlan> {
    if batch.n_stages != plan.len() || batch.n_channels != plan.control(0).len() {
        return Err(Error::config("batch shape does not match plan"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let s_min = batch
        .costs
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !s_min.is_finite() {
        return Err(Error::Controller(
            "all rollouts diverged: no finite cost in batch".into(),
        ));
    }
    let n = batch.n_channels;
    let mut numerator = vec![0.0; batch.n_stages * n];
    let mut denominator = 0.0;
    for k in 0..batch.num_samples() {
        let s = batch.costs[k];
        if !s.is_finite() {
            continue;
        }
        let w = (-(s - s_min) / temperature).exp();
        if w == 0.0 {
            continue;
        }
        denominator += w;
        let base = k * batch.n_stages * n;
        for (acc, du) in numerator
            .iter_mut()
            .zip(&batch.perturbations[base..base + batch.n_stages * n])
        {
            *acc += w * du;
        }
    }
    let controls = plan
        .controls()
        .iter()
        .enumerate()
        .map(|(j, u)| {
            DVector::from_fn(n, |c, _| u[c] + numerator[j * n + c] / denominator)
        })
        .collect();
    ControlPlan::new(controls)
}

/// Refill value for the freed tail slot of the shifted plan.
/// `horizon_end_step` is the absolute control step the slot will act at.
pub fn initialize_tail(
    last_control: &DVector<f64>,
    mode: TailInit,
    refs: &ReferenceTrajectory,
    horizon_end_step: usize,
    params: &LineParams,
) -> Result<DVector<f64>> {
    match mode {
        TailInit::RepeatLast => Ok(last_control.clone()),
        TailInit::EquilibriumFeedforward => refs.feedforward(horizon_end_step, params),
        TailInit::Zero => Ok(DVector::zeros(params.n())),
    }
}

/// One full controller iteration at absolute control step `step_index`:
/// sample and roll out `K` perturbed plans in parallel, update the plan,
/// return the first control, and shift the plan for the next step.
#[allow(clippy::too_many_arguments)]
pub fn mppi_step(
    x: &LineState,
    plan: &ControlPlan,
    refs: &ReferenceTrajectory,
    params: &LineParams,
    cost: &CostConfig,
    penalty: &ControlPenalty,
    cfg: &MppiConfig,
    step_index: usize,
) -> Result<(DVector<f64>, ControlPlan)> {
    cfg.validate()?;
    let n = params.n();
    if plan.len() + 1 != cfg.horizon {
        return Err(Error::Config(format!(
            "plan has {} slots, horizon {} needs {}",
            plan.len(),
            cfg.horizon,
            cfg.horizon - 1
        )));
    }
    if x.n() != n {
        return Err(Error::config("state dimension mismatch"));
    }
    let batch = run_batch(x, plan, refs, params, cost, penalty, cfg, step_index);
    let updated = update_controls(plan, &batch, cfg.temperature)?;
    let u_applied = updated.first().clone();
    let tail = initialize_tail(
        updated.last(),
        cfg.tail_init,
        refs,
        step_index + cfg.horizon - 1,
        params,
    )?;
    Ok((u_applied, updated.shifted(tail)))
}

/// Sample and evaluate the full rollout batch for one control step.
#[allow(clippy::too_many_arguments)]
fn run_batch(
    x: &LineState,
    plan: &ControlPlan,
    refs: &ReferenceTrajectory,
    params: &LineParams,
    cost: &CostConfig,
    penalty: &ControlPenalty,
    cfg: &MppiConfig,
    step_index: usize,
) -> RolloutBatch {
    let n = params.n();
    let stages = cfg.horizon - 1;
    let stage = stage_refs(refs, step_index, cfg.horizon);
    let gain = perturbation_gain(params, cfg.dt);
    let sqrt_nu = cfg.exploration.sqrt();
    let chunk = stages * n;

    let mut perturbations = vec![0.0; cfg.num_samples * chunk];
    let mut costs = vec![0.0; cfg.num_samples];

    perturbations
        .par_chunks_mut(chunk)
        .zip(costs.par_iter_mut())
        .enumerate()
        .with_min_len(16)
        .for_each_init(
            || RolloutScratch::new(n),
            |scratch, (k, (du, s))| {
                let mut rng = rollout_stream(cfg.seed, step_index, k);
                fill_perturbations(&mut rng, gain.as_slice(), du);
                *s = rollout_with_refs(
                    x, plan, du, &stage, cost, penalty, sqrt_nu, params, cfg.dt, scratch,
                );
            },
        );

    RolloutBatch {
        n_channels: n,
        n_stages: stages,
        perturbations,
        costs,
    }
}

/// Receding-horizon controller state: configuration plus the current plan.
#[derive(Debug, Clone)]
pub struct MppiController {
    params: LineParams,
    cost: CostConfig,
    cfg: MppiConfig,
    penalty: ControlPenalty,
    refs: ReferenceTrajectory,
    plan: ControlPlan,
}

impl MppiController {
    pub fn new(
        params: LineParams,
        cost: CostConfig,
        cfg: MppiConfig,
        refs: ReferenceTrajectory,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.temperature != cost.temperature {
            return Err(Error::config(
                "mppi temperature and cost temperature must agree",
            ));
        }
        if cfg.exploration != cost.exploration {
            return Err(Error::config(
                "mppi exploration and cost exploration must agree",
            ));
        }
        if cost.q_diag.len() != 2 * params.n() {
            return Err(Error::config("state weight length must be 2N"));
        }
        let penalty = ControlPenalty::from_params(&params, cfg.temperature)?;
        let plan = match cfg.initial_plan {
            InitialPlan::EquilibriumFeedforward => {
                ControlPlan::feedforward(&refs, 0, cfg.horizon, &params)?
            }
            InitialPlan::Zero => ControlPlan::zeros(cfg.horizon, params.n())?,
        };
        Ok(MppiController {
            params,
            cost,
            cfg,
            penalty,
            refs,
            plan,
        })
    }

    pub fn plan(&self) -> &ControlPlan {
        &self.plan
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn penalty(&self) -> &ControlPenalty {
        &self.penalty
    }

    /// Compute and consume one control; the stored plan advances.
    pub fn step_once(&mut self, step_index: usize, x: &LineState) -> Result<DVector<f64>> {
        let (u, next) = mppi_step(
            x,
            &self.plan,
            &self.refs,
            &self.params,
            &self.cost,
            &self.penalty,
            &self.cfg,
            step_index,
        )?;
        self.plan = next;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostVariant;
    use approx::assert_relative_eq;

    fn bench_params(n: usize) -> LineParams {
        LineParams::uniform(n, 200e6 * 1.2e-5, 0.04, 0.95, 10.0, 1.0, 1.0e-2).unwrap()
    }

    fn quadratic_cost(n: usize) -> CostConfig {
        CostConfig::bryson(CostVariant::Quadratic, n, 10.0, 0.1, 100.0, 0.0, 1.0, 1.0).unwrap()
    }

    fn config(k: usize, horizon: usize, seed: u64) -> MppiConfig {
        MppiConfig {
            num_samples: k,
            horizon,
            temperature: 1.0,
            exploration: 1.0,
            dt: 0.01,
            seed,
            tail_init: TailInit::EquilibriumFeedforward,
            initial_plan: InitialPlan::EquilibriumFeedforward,
        }
    }

    #[test]
    fn perturbations_apply_channel_gain() {
        // with R = J = b = 1 the gain D/√dt is exactly 1 at dt = 1, so the
        // perturbations equal the raw normal draws of the same stream
        let p = LineParams::uniform(2, 100.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let mut rng = rollout_stream(5, 0, 0);
        let du = sample_perturbations(&mut rng, 4, &p, 1.0).unwrap();
        assert_eq!(du.len(), 3);

        let mut reference = rollout_stream(5, 0, 0);
        for v in &du {
            for c in 0..2 {
                let eps: f64 = reference.sample(StandardNormal);
                assert_eq!(v[c], eps);
            }
        }
    }

    #[test]
    fn perturbation_magnitude_bench_line() {
        // D = b J / R = 0.2375, so per-unit-ε magnitude is 2.375 at dt = 0.01
        let p = bench_params(6);
        let gain = perturbation_gain(&p, 0.01);
        for c in 0..6 {
            assert_relative_eq!(gain[c], 2.375, max_relative = 1e-12);
        }
    }

    #[test]
    fn perturbation_variance_matches_channel_gain() {
        let p = bench_params(1);
        let mut rng = rollout_stream(11, 0, 0);
        let draws = 1_000_000;
        let du = sample_perturbations(&mut rng, draws + 1, &p, 0.01).unwrap();
        let mean: f64 = du.iter().map(|v| v[0]).sum::<f64>() / draws as f64;
        let var: f64 =
            du.iter().map(|v| (v[0] - mean) * (v[0] - mean)).sum::<f64>() / draws as f64;
        let expected = 2.375_f64 * 2.375;
        assert!(
            (var - expected).abs() / expected < 0.01,
            "sample variance {var} vs {expected}"
        );
    }

    #[test]
    fn rollout_feedforward_cost_is_control_energy() {
        let p = bench_params(6);
        let cost = quadratic_cost(6);
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let x0 = refs.state_ref(0);
        let h = 9;
        let plan = ControlPlan::feedforward(&refs, 0, h, &p).unwrap();
        let zeros = vec![DVector::zeros(6); h - 1];
        let s = rollout(&x0, &plan, &zeros, &refs, 0, &cost, &penalty, &p, 0.01).unwrap();
        let u = plan.first();
        let expected = 0.01 * (h - 1) as f64 * 0.5 * penalty.bilinear(u, u);
        assert_relative_eq!(s, expected, max_relative = 1e-9);
    }

    #[test]
    fn rollout_zero_everything_costs_nothing() {
        let p = bench_params(4);
        let cost = quadratic_cost(4);
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs = ReferenceTrajectory::constant(&p, DVector::zeros(4), 0.0).unwrap();
        let x0 = LineState::zeros(4);
        let plan = ControlPlan::zeros(5, 4).unwrap();
        let zeros = vec![DVector::zeros(4); 4];
        let s = rollout(&x0, &plan, &zeros, &refs, 0, &cost, &penalty, &p, 0.01).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn rollout_is_deterministic() {
        let p = bench_params(3);
        let cost = quadratic_cost(3);
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(3, 25.0), 0.02).unwrap();
        let x0 = refs.state_ref(0);
        let plan = ControlPlan::feedforward(&refs, 0, 5, &p).unwrap();
        let mut rng = rollout_stream(3, 7, 42);
        let du = sample_perturbations(&mut rng, 5, &p, 0.01).unwrap();
        let a = rollout(&x0, &plan, &du, &refs, 0, &cost, &penalty, &p, 0.01).unwrap();
        let b = rollout(&x0, &plan, &du, &refs, 0, &cost, &penalty, &p, 0.01).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn rollout_cost_matches_trajectory_replay() {
        // independent re-evaluation: record the state trajectory with the
        // plain plant step, then sum the stage costs and terminal cost
        let p = bench_params(6);
        let cost = CostConfig::bryson(
            CostVariant::QuadraticL1,
            6,
            10.0,
            0.1,
            100.0,
            100.0,
            1.0,
            2.0,
        )
        .unwrap();
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs = ReferenceTrajectory::piecewise(
            &p,
            &[
                (0, DVector::from_element(6, 30.0)),
                (4, DVector::from_element(6, 35.0)),
            ],
            &[(0, 0.01)],
            0,
        )
        .unwrap();
        let start = 2;
        let x0 = refs.state_ref(start);
        let h = 9;
        let plan = ControlPlan::feedforward(&refs, start, h, &p).unwrap();
        let mut rng = rollout_stream(9, start, 13);
        let du = sample_perturbations(&mut rng, h, &p, 0.01).unwrap();

        let s = rollout(&x0, &plan, &du, &refs, start, &cost, &penalty, &p, 0.01).unwrap();

        let sqrt_nu = cost.exploration.sqrt();
        let mut x = x0.clone();
        let mut replay = 0.0;
        let eps = DVector::zeros(6);
        for j in 0..h - 1 {
            let u_eff = plan.control(j) + &du[j] * sqrt_nu;
            x = line::step(&x, &u_eff, &eps, refs.v0(start + j), &p, 0.01, j).unwrap();
            let q = cost.stage_cost(&x, &refs.state_ref(start + j + 1));
            replay += cost::adjusted_stage_cost(q, plan.control(j), &du[j], &penalty, cost.exploration);
        }
        replay += cost::terminal_cost(&x, &refs.state_ref(start + h - 1), &cost);
        replay *= 0.01;

        assert!(
            ((s - replay) / replay.abs().max(1e-300)).abs() < 1e-12,
            "rollout {s} vs replay {replay}"
        );
    }

    #[test]
    fn softmax_weights_basics() {
        // S = [0, λ ln 3] gives weights [3/4, 1/4]
        let w = softmax_weights(&[0.0, 3.0_f64.ln()], 1.0).unwrap();
        assert_relative_eq!(w[0], 0.75, max_relative = 1e-14);
        assert_relative_eq!(w[1], 0.25, max_relative = 1e-14);

        let w = softmax_weights(&[5.0, 5.0, 5.0], 2.0).unwrap();
        for v in &w {
            assert_relative_eq!(*v, 1.0 / 3.0, max_relative = 1e-15);
        }

        // weights sum to one and ignore non-finite costs
        let w = softmax_weights(&[1.0, f64::INFINITY, 2.0, f64::NAN], 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[3], 0.0);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        assert!(softmax_weights(&[f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn softmax_weights_shift_invariant() {
        let costs = [1.5, 3.25, 7.0, 2.0];
        let shifted: Vec<f64> = costs.iter().map(|s| s + 1024.0).collect();
        let a = softmax_weights(&costs, 0.7).unwrap();
        let b = softmax_weights(&shifted, 0.7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    fn single_stage_batch(perts: &[[f64; 2]], costs: &[f64]) -> RolloutBatch {
        let flat: Vec<f64> = perts.iter().flatten().copied().collect();
        RolloutBatch::from_parts(2, 1, flat, costs.to_vec()).unwrap()
    }

    #[test]
    fn update_single_sample_adds_its_perturbation() {
        let plan = ControlPlan::new(vec![DVector::from_row_slice(&[1.0, -2.0])]).unwrap();
        let batch = single_stage_batch(&[[0.3, 0.7]], &[123.456]);
        let updated = update_controls(&plan, &batch, 1.0).unwrap();
        assert_eq!(updated.control(0)[0].to_bits(), (1.0f64 + 0.3).to_bits());
        assert_eq!(updated.control(0)[1].to_bits(), (-2.0f64 + 0.7).to_bits());
    }

    #[test]
    fn update_equal_costs_adds_arithmetic_mean() {
        let plan = ControlPlan::new(vec![DVector::from_row_slice(&[0.0, 0.0])]).unwrap();
        let perts = [[1.0, -4.0], [2.0, 5.0], [4.0, 2.0]];
        let batch = single_stage_batch(&perts, &[9.0, 9.0, 9.0]);
        let updated = update_controls(&plan, &batch, 1.0).unwrap();
        for c in 0..2 {
            let mean = (perts[0][c] + perts[1][c] + perts[2][c]) / 3.0;
            assert_eq!(updated.control(0)[c].to_bits(), mean.to_bits());
        }
    }

    #[test]
    fn update_is_shift_invariant() {
        let plan = ControlPlan::new(vec![DVector::from_row_slice(&[0.5, 1.5])]).unwrap();
        let perts = [[1.0, -1.0], [0.25, 0.5], [-2.0, 3.0]];
        let costs = [1.5, 0.25, 4.0];
        let shifted: Vec<f64> = costs.iter().map(|s| s + 4096.0).collect();
        let a = update_controls(&plan, &single_stage_batch(&perts, &costs), 1.0).unwrap();
        let b = update_controls(&plan, &single_stage_batch(&perts, &shifted), 1.0).unwrap();
        for c in 0..2 {
            assert_eq!(a.control(0)[c].to_bits(), b.control(0)[c].to_bits());
        }
    }

    #[test]
    fn update_skips_diverged_rollouts_and_fails_when_all_diverge() {
        let plan = ControlPlan::new(vec![DVector::from_row_slice(&[0.0, 0.0])]).unwrap();
        let batch = single_stage_batch(&[[10.0, 10.0], [2.0, -2.0]], &[f64::INFINITY, 1.0]);
        let updated = update_controls(&plan, &batch, 1.0).unwrap();
        assert_eq!(updated.control(0)[0], 2.0);
        assert_eq!(updated.control(0)[1], -2.0);

        let all_bad = single_stage_batch(&[[1.0, 1.0]], &[f64::INFINITY]);
        assert!(matches!(
            update_controls(&plan, &all_bad, 1.0),
            Err(Error::Controller(_))
        ));
    }

    #[test]
    fn update_temperature_limits() {
        let plan = ControlPlan::new(vec![DVector::from_row_slice(&[0.0, 0.0])]).unwrap();
        let perts = [[1.0, -1.0], [5.0, 2.0], [-3.0, 4.0]];
        let costs = [2.0, 1.0, 3.0];
        let batch = single_stage_batch(&perts, &costs);

        // λ → 0 follows the single best rollout
        let cold = update_controls(&plan, &batch, 1e-6).unwrap();
        assert_relative_eq!(cold.control(0)[0], 5.0, max_relative = 1e-9);
        assert_relative_eq!(cold.control(0)[1], 2.0, max_relative = 1e-9);

        // λ → ∞ averages all rollouts uniformly
        let hot = update_controls(&plan, &batch, 1e6).unwrap();
        assert_relative_eq!(hot.control(0)[0], 1.0, max_relative = 1e-4);
        assert_relative_eq!(hot.control(0)[1], 5.0 / 3.0, max_relative = 1e-4);
    }

    #[test]
    fn initialize_tail_modes() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let last = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let repeat = initialize_tail(&last, TailInit::RepeatLast, &refs, 8, &p).unwrap();
        assert_eq!(repeat, last);

        let zero = initialize_tail(&last, TailInit::Zero, &refs, 8, &p).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let ff = initialize_tail(&last, TailInit::EquilibriumFeedforward, &refs, 8, &p).unwrap();
        let expected = refs.feedforward(8, &p).unwrap();
        assert_eq!(ff, expected);
    }

    #[test]
    fn mppi_step_matches_manual_reconstruction() {
        let p = bench_params(6);
        let cost = quadratic_cost(6);
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let cfg = config(32, 9, 77);
        let mut x0 = refs.state_ref(0);
        x0.tensions[2] += 2.0;
        let plan = ControlPlan::feedforward(&refs, 0, 9, &p).unwrap();
        let step_index = 5;

        let (u, next) = mppi_step(&x0, &plan, &refs, &p, &cost, &penalty, &cfg, step_index).unwrap();

        // rebuild the same batch through the public single-rollout API
        let mut flat = Vec::new();
        let mut costs = Vec::new();
        for k in 0..cfg.num_samples {
            let mut rng = rollout_stream(cfg.seed, step_index, k);
            let du = sample_perturbations(&mut rng, 9, &p, cfg.dt).unwrap();
            let s =
                rollout(&x0, &plan, &du, &refs, step_index, &cost, &penalty, &p, cfg.dt).unwrap();
            costs.push(s);
            for v in &du {
                flat.extend_from_slice(v.as_slice());
            }
        }
        let batch = RolloutBatch::from_parts(6, 8, flat, costs).unwrap();
        let updated = update_controls(&plan, &batch, cfg.temperature).unwrap();

        assert_eq!(u, *updated.first());
        // shift contract: next[i] == updated[i+1]
        for i in 0..7 {
            assert_eq!(next.control(i), updated.control(i + 1));
        }
        let tail = initialize_tail(
            updated.last(),
            cfg.tail_init,
            &refs,
            step_index + 8,
            &p,
        )
        .unwrap();
        assert_eq!(*next.last(), tail);
    }

    #[test]
    fn mppi_step_worker_count_does_not_change_result() {
        let p = bench_params(6);
        let cost = quadratic_cost(6);
        let penalty = ControlPenalty::from_params(&p, 1.0).unwrap();
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let cfg = config(256, 9, 3);
        let mut x0 = refs.state_ref(0);
        x0.tensions[0] -= 1.5;
        let plan = ControlPlan::feedforward(&refs, 0, 9, &p).unwrap();

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| mppi_step(&x0, &plan, &refs, &p, &cost, &penalty, &cfg, 0).unwrap())
        };
        let (u1, p1) = run(1);
        let (u4, p4) = run(4);
        for c in 0..6 {
            assert_eq!(u1[c].to_bits(), u4[c].to_bits());
        }
        for i in 0..8 {
            for c in 0..6 {
                assert_eq!(p1.control(i)[c].to_bits(), p4.control(i)[c].to_bits());
            }
        }
    }

    #[test]
    fn controller_rejects_mismatched_hyperparameters() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let cost = quadratic_cost(6);
        let mut cfg = config(8, 9, 0);
        cfg.temperature = 2.0;
        assert!(MppiController::new(p, cost, cfg, refs).is_err());
    }

    #[test]
    fn controller_steps_and_advances_plan() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let cost = quadratic_cost(6);
        let cfg = config(16, 4, 21);
        let mut ctrl = MppiController::new(p, cost, cfg, refs.clone()).unwrap();
        let before = ctrl.plan().clone();
        let x = refs.state_ref(0);
        let u = ctrl.step_once(0, &x).unwrap();
        assert!(u.iter().all(|v| v.is_finite()));
        assert_ne!(*ctrl.plan(), before);
    }
}
