//! Web-line plant model.
//!
//! A line with `N` driven rollers is described by the web tensions
//! `T_1..T_N` (one per web section) and the roller surface speeds
//! `v_1..v_N`. Tension follows conservation of mass across a section,
//!
//! ```text
//! dT_i/dt = (EA/L_i)(v_i − v_{i−1}) + (T_{i−1} v_{i−1} − T_i v_i)/L_i
//! ```
//!
//! and roller speed follows a torque balance with a Brownian torque
//! disturbance on every motor,
//!
//! ```text
//! dv_i/dt = (R_i²/J_i)(T_{i+1} − T_i) − (f_i/J_i) v_i + (R_i/J_i) u_i + b_i ẇ_i
//! ```
//!
//! with the boundary convention `T_0 = T_{N+1} = 0` and the unwinding
//! speed `v_0` supplied externally. Time stepping is explicit
//! Euler–Maruyama: drift advances by `dt`, the disturbance enters the
//! velocities as `b_i √dt ε_i` with `ε_i ~ N(0, 1)` drawn by the caller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of a line with `N` driven rollers.
///
/// Per-roller arrays allow heterogeneous hardware; [`LineParams::uniform`]
/// covers the common identical-roller case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineParams {
    n_sections: usize,
    /// Product of web modulus and cross-sectional area, in newtons.
    modulus_area_product: f64,
    roller_radius: Vec<f64>,
    roller_inertia: Vec<f64>,
    motor_friction: Vec<f64>,
    section_length: Vec<f64>,
    disturbance_coeff: Vec<f64>,
}

impl LineParams {
    pub fn new(
        modulus_area_product: f64,
        roller_radius: Vec<f64>,
        roller_inertia: Vec<f64>,
        motor_friction: Vec<f64>,
        section_length: Vec<f64>,
        disturbance_coeff: Vec<f64>,
    ) -> Result<Self> {
        let n = roller_radius.len();
        if n == 0 {
            return Err(Error::config("line must have at least one section"));
        }
        for (name, arr) in [
            ("roller_inertia", &roller_inertia),
            ("motor_friction", &motor_friction),
            ("section_length", &section_length),
            ("disturbance_coeff", &disturbance_coeff),
        ] {
            if arr.len() != n {
                return Err(Error::Config(format!(
                    "{name} has length {}, expected {n}",
                    arr.len()
                )));
            }
        }
        if !(modulus_area_product > 0.0) || !modulus_area_product.is_finite() {
            return Err(Error::config("modulus_area_product must be positive"));
        }
        for (name, arr) in [
            ("roller_radius", &roller_radius),
            ("roller_inertia", &roller_inertia),
            ("motor_friction", &motor_friction),
            ("section_length", &section_length),
        ] {
            if arr.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("{name} entries must be positive")));
            }
        }
        // b_i = 0 is a valid (noiseless) channel for plain simulation; the
        // sampling controller rejects it when building its control penalty.
        if disturbance_coeff.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("disturbance_coeff entries must be nonnegative"));
        }
        Ok(LineParams {
            n_sections: n,
            modulus_area_product,
            roller_radius,
            roller_inertia,
            motor_friction,
            section_length,
            disturbance_coeff,
        })
    }

    /// A line whose rollers and sections all share the same constants.
    pub fn uniform(
        n_sections: usize,
        modulus_area_product: f64,
        roller_radius: f64,
        roller_inertia: f64,
        motor_friction: f64,
        section_length: f64,
        disturbance_coeff: f64,
    ) -> Result<Self> {
        Self::new(
            modulus_area_product,
            vec![roller_radius; n_sections],
            vec![roller_inertia; n_sections],
            vec![motor_friction; n_sections],
            vec![section_length; n_sections],
            vec![disturbance_coeff; n_sections],
        )
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n_sections
    }

    /// Modulus-area product `EA` in newtons.
    #[inline]
    pub fn ea(&self) -> f64 {
        self.modulus_area_product
    }

    #[inline]
    pub fn radius(&self, i: usize) -> f64 {
        self.roller_radius[i]
    }

    #[inline]
    pub fn inertia(&self, i: usize) -> f64 {
        self.roller_inertia[i]
    }

    #[inline]
    pub fn friction(&self, i: usize) -> f64 {
        self.motor_friction[i]
    }

    #[inline]
    pub fn length(&self, i: usize) -> f64 {
        self.section_length[i]
    }

    #[inline]
    pub fn disturbance(&self, i: usize) -> f64 {
        self.disturbance_coeff[i]
    }
}

/// Full line state: tensions `T_1..T_N` (N) and roller speeds `v_1..v_N` (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct LineState {
    pub tensions: DVector<f64>,
    pub velocities: DVector<f64>,
}

impl LineState {
    pub fn new(tensions: DVector<f64>, velocities: DVector<f64>) -> Result<Self> {
        if tensions.len() != velocities.len() {
            return Err(Error::Config(format!(
                "tension/velocity length mismatch: {} vs {}",
                tensions.len(),
                velocities.len()
            )));
        }
        let state = LineState {
            tensions,
            velocities,
        };
        if !state.is_finite() {
            return Err(Error::config("state contains non-finite entries"));
        }
        Ok(state)
    }

    pub fn zeros(n: usize) -> Self {
        LineState {
            tensions: DVector::zeros(n),
            velocities: DVector::zeros(n),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.tensions.len()
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.tensions.iter().all(|v| v.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }

    /// Concatenate into the stacked vector `[T_1..T_N, v_1..v_N]`.
    pub fn stack(&self) -> DVector<f64> {
        let n = self.n();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.tensions);
        x.rows_mut(n, n).copy_from(&self.velocities);
        x
    }

    /// Split a stacked `[T; v]` vector back into a state.
    pub fn from_stack(x: &DVector<f64>) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::config("stacked state must have even length"));
        }
        let n = x.len() / 2;
        LineState::new(x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
    }
}

/// Diagonal control and disturbance gains of the velocity subsystem.
///
/// `g_c` holds the torque-to-acceleration gains `R_i/J_i`, `b_c` the
/// disturbance gains `b_i`, and `d = g_c⁻¹ b_c` maps unit white noise to
/// equivalent torque, the plant's natural control-channel variance.
#[derive(Debug, Clone)]
pub struct ChannelMatrices {
    g_c: DVector<f64>,
    b_c: DVector<f64>,
    d: DVector<f64>,
}

impl ChannelMatrices {
    pub fn from_params(params: &LineParams) -> Self {
        let n = params.n();
        let g_c = DVector::from_fn(n, |i, _| params.radius(i) / params.inertia(i));
        let b_c = DVector::from_fn(n, |i, _| params.disturbance(i));
        let d = DVector::from_fn(n, |i, _| b_c[i] / g_c[i]);
        ChannelMatrices { g_c, b_c, d }
    }

    #[inline]
    pub fn control_gain(&self) -> &DVector<f64> {
        &self.g_c
    }

    #[inline]
    pub fn disturbance_gain(&self) -> &DVector<f64> {
        &self.b_c
    }

    /// Diagonal of `D = G_c⁻¹ B_c` (torque-equivalent noise gain).
    #[inline]
    pub fn noise_to_torque(&self) -> &DVector<f64> {
        &self.d
    }
}

fn check_dims(state: &LineState, params: &LineParams) -> Result<()> {
    if state.n() != params.n() {
        return Err(Error::Config(format!(
            "state has {} sections, params expect {}",
            state.n(),
            params.n()
        )));
    }
    Ok(())
}

/// Tension rates `dT_i/dt` from mass conservation, with `T_0 = 0` and the
/// unwinding speed `v0` feeding the first section.
pub fn tension_rates(state: &LineState, v0: f64, params: &LineParams) -> Result<DVector<f64>> {
    check_dims(state, params)?;
    if !state.is_finite() || !v0.is_finite() {
        return Err(Error::config("tension_rates: non-finite input state"));
    }
    let mut out = DVector::zeros(params.n());
    tension_rates_into(state, v0, params, &mut out);
    Ok(out)
}

pub(crate) fn tension_rates_into(
    state: &LineState,
    v0: f64,
    params: &LineParams,
    out: &mut DVector<f64>,
) {
    let ea = params.ea();
    let t = &state.tensions;
    let v = &state.velocities;
    for i in 0..params.n() {
        let (t_prev, v_prev) = if i == 0 { (0.0, v0) } else { (t[i - 1], v[i - 1]) };
        out[i] = (ea * (v[i] - v_prev) + (t_prev * v_prev - t[i] * v[i])) / params.length(i);
    }
}

/// Velocity drift `dv_i/dt` from the torque balance, with `T_{N+1} = 0`.
/// The disturbance term is added separately by [`step`].
pub fn velocity_rates(
    state: &LineState,
    torques: &DVector<f64>,
    params: &LineParams,
) -> Result<DVector<f64>> {
    check_dims(state, params)?;
    if torques.len() != params.n() {
        return Err(Error::Config(format!(
            "torque vector has length {}, expected {}",
            torques.len(),
            params.n()
        )));
    }
    let mut out = DVector::zeros(params.n());
    velocity_rates_into(state, torques, params, &mut out);
    Ok(out)
}

pub(crate) fn velocity_rates_into(
    state: &LineState,
    torques: &DVector<f64>,
    params: &LineParams,
    out: &mut DVector<f64>,
) {
    let n = params.n();
    let t = &state.tensions;
    let v = &state.velocities;
    for i in 0..n {
        let t_next = if i + 1 < n { t[i + 1] } else { 0.0 };
        let r = params.radius(i);
        let j = params.inertia(i);
        out[i] = (r * r * (t_next - t[i]) - params.friction(i) * v[i] + r * torques[i]) / j;
    }
}

/// One Euler–Maruyama step of length `dt`.
///
/// Tensions advance by their deterministic rate; velocities advance by the
/// drift plus `b_i √dt ε_i` where `eps` holds standard-normal draws supplied
/// by the caller. Passing `eps = 0` gives the deterministic Euler step.
/// `step_index` only labels the divergence error.
pub fn step(
    state: &LineState,
    torques: &DVector<f64>,
    eps: &DVector<f64>,
    v0: f64,
    params: &LineParams,
    dt: f64,
    step_index: usize,
) -> Result<LineState> {
    check_dims(state, params)?;
    if torques.len() != params.n() || eps.len() != params.n() {
        return Err(Error::config("step: torque/noise vector length mismatch"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("step size dt must be positive"));
    }
    let mut next = state.clone();
    let mut rates = DVector::zeros(params.n());
    tension_rates_into(state, v0, params, &mut rates);
    next.tensions.axpy(dt, &rates, 1.0);
    velocity_rates_into(state, torques, params, &mut rates);
    next.velocities.axpy(dt, &rates, 1.0);
    let sqrt_dt = dt.sqrt();
    for i in 0..params.n() {
        next.velocities[i] += params.disturbance(i) * sqrt_dt * eps[i];
    }
    if !next.is_finite() {
        return Err(Error::Diverged { step: step_index });
    }
    Ok(next)
}

/// Roller speed references that hold the given tension references in
/// equilibrium for unwinding speed `v0`:
///
/// ```text
/// v_i = v_{i−1} (EA − T_{i−1}) / (EA − T_i),   v_0 = v0, T_0 = 0
/// ```
pub fn equilibrium_velocities(
    tension_refs: &DVector<f64>,
    v0: f64,
    params: &LineParams,
) -> Result<DVector<f64>> {
    if tension_refs.len() != params.n() {
        return Err(Error::config("tension reference length mismatch"));
    }
    let ea = params.ea();
    let mut out = DVector::zeros(params.n());
    let mut v_prev = v0;
    let mut t_prev = 0.0;
    for i in 0..params.n() {
        let t_i = tension_refs[i];
        if ea - t_i <= 0.0 {
            return Err(Error::SingularReference { tension: t_i, ea });
        }
        out[i] = v_prev * (ea - t_prev) / (ea - t_i);
        v_prev = out[i];
        t_prev = t_i;
    }
    Ok(out)
}

/// Feedforward torques that zero the velocity drift at a reference point:
/// `u_i = (f_i v_i − R_i² (T_{i+1} − T_i)) / R_i` with `T_{N+1} = 0`.
pub fn equilibrium_torques(
    tension_refs: &DVector<f64>,
    velocity_refs: &DVector<f64>,
    params: &LineParams,
) -> Result<DVector<f64>> {
    let n = params.n();
    if tension_refs.len() != n || velocity_refs.len() != n {
        return Err(Error::config("reference vector length mismatch"));
    }
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let t_next = if i + 1 < n { tension_refs[i + 1] } else { 0.0 };
        let r = params.radius(i);
        out[i] = (params.friction(i) * velocity_refs[i] - r * r * (t_next - tension_refs[i])) / r;
    }
    Ok(out)
}

/// Analytic Jacobians of the drift with respect to the stacked state and
/// the torque input, evaluated at `state`.
///
/// The tension block carries the bilinear `T v` dependence and is therefore
/// state-dependent; the velocity block and the input map are constant.
pub fn linearize(state: &LineState, v0: f64, params: &LineParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = params.n();
    let _ = v0; // v0 is exogenous: no state column depends on it
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, n);
    let ea = params.ea();
    let t = &state.tensions;
    let v = &state.velocities;
    for i in 0..n {
        let l = params.length(i);
        // tension row i
        a[(i, i)] = -v[i] / l;
        a[(i, n + i)] = (ea - t[i]) / l;
        if i > 0 {
            a[(i, i - 1)] = v[i - 1] / l;
            a[(i, n + i - 1)] = (t[i - 1] - ea) / l;
        }
        // velocity row i
        let r = params.radius(i);
        let j = params.inertia(i);
        a[(n + i, i)] = -r * r / j;
        if i + 1 < n {
            a[(n + i, i + 1)] = r * r / j;
        }
        a[(n + i, n + i)] = -params.friction(i) / j;
        b[(n + i, i)] = r / j;
    }
    (a, b)
}
