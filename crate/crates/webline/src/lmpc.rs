//! Linear MPC baseline.
//!
//! At each step the plant is linearized (about the measured state or the
//! current reference), discretized with forward Euler, and the predicted
//! deviations over the horizon are condensed into an unconstrained
//! quadratic in the control corrections:
//!
//! ```text
//! min_ũ  (e + Φũ)ᵀ Q̄ (e + Φũ) + ũᵀ R̄ ũ
//! ```
//!
//! where `e` stacks the deviations of the nominal (feedforward-driven)
//! prediction from the reference trajectory and `Φ` is the forced
//! response. The normal equations are solved densely by Cholesky; with a
//! horizon of 9 and six rollers the system is 48×48. The applied control
//! is the equilibrium feedforward plus the first correction block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::ReferenceTrajectory;
use crate::error::{Error, Result};
use crate::line::{self, LineParams, LineState};

/// Linearization point policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relinearize {
    EveryStep,
    AtReference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmpcConfig {
    pub horizon: usize,
    /// Sampling period; must equal the plant step of the scenario.
    #[serde(default)]
    pub dt: f64,
    /// Multiplier on the Bryson control penalty, calibrated so the control
    /// effort matches the sampling controller's maximum amplitude.
    pub r_scale: f64,
    /// Bryson scale for the control penalty base `I / torque_scale²`.
    #[serde(default = "default_torque_scale")]
    pub torque_scale: f64,
    #[serde(default = "default_relinearize")]
    pub relinearize: Relinearize,
    /// Track upcoming reference changes inside the horizon instead of the
    /// current setpoint. The plain tracker (false) only reacts to a
    /// setpoint change once it has happened.
    #[serde(default)]
    pub reference_preview: bool,
}

fn default_torque_scale() -> f64 {
    4.0
}

fn default_relinearize() -> Relinearize {
    Relinearize::EveryStep
}

impl LmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("horizon must be at least 2"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("lmpc dt must be positive"));
        }
        if !(self.r_scale > 0.0) {
            return Err(Error::config("r_scale must be positive"));
        }
        if !(self.torque_scale > 0.0) {
            return Err(Error::config("torque_scale must be positive"));
        }
        Ok(())
    }
}

/// Stacked linear predictor over the horizon: deviations at steps
/// `1..H−1` are `free · x̃₀ + forced · ũ`.
#[derive(Debug, Clone)]
pub struct Predictor {
    /// `(H−1)·2N × 2N` stacked powers `A_d, A_d², …`.
    pub free: DMatrix<f64>,
    /// `(H−1)·2N × (H−1)·N` block lower-triangular forced response.
    pub forced: DMatrix<f64>,
}

/// Build the stacked predictor from discrete Jacobians `A_d`, `B_d`.
pub fn build_prediction(a_d: &DMatrix<f64>, b_d: &DMatrix<f64>, horizon: usize) -> Result<Predictor> {
    if horizon < 2 {
        return Err(Error::config("horizon must be at least 2"));
    }
    let nx = a_d.nrows();
    let nu = b_d.ncols();
    if a_d.ncols() != nx || b_d.nrows() != nx {
        return Err(Error::config("predictor Jacobian shape mismatch"));
    }
    let steps = horizon - 1;
    let mut free = DMatrix::zeros(steps * nx, nx);
    let mut forced = DMatrix::zeros(steps * nx, steps * nu);

    // power[j] = A_d^j, filled incrementally
    let mut power = DMatrix::identity(nx, nx);
    let mut powers = Vec::with_capacity(steps + 1);
    powers.push(power.clone());
    for _ in 0..steps {
        power = a_d * &power;
        powers.push(power.clone());
    }
    for row in 0..steps {
        free.view_mut((row * nx, 0), (nx, nx)).copy_from(&powers[row + 1]);
        for col in 0..=row {
            let block = &powers[row - col] * b_d;
            forced
                .view_mut((row * nx, col * nu), (nx, nu))
                .copy_from(&block);
        }
    }
    Ok(Predictor { free, forced })
}

/// Full solve output, kept around for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct LmpcSolution {
    /// Applied control: feedforward plus the first correction block.
    pub control: DVector<f64>,
    /// Whole stacked correction sequence `ũ`.
    pub corrections: DVector<f64>,
    /// Relative residual of the normal equations at the solution.
    pub gradient_residual: f64,
}

/// Solve the condensed tracking problem at `step_index` and return the
/// applied control.
pub fn solve_lmpc(
    x: &LineState,
    step_index: usize,
    refs: &ReferenceTrajectory,
    q_diag: &DVector<f64>,
    config: &LmpcConfig,
    params: &LineParams,
) -> Result<DVector<f64>> {
    solve_lmpc_detailed(x, step_index, refs, q_diag, config, params).map(|sol| sol.control)
}

pub fn solve_lmpc_detailed(
    x: &LineState,
    step_index: usize,
    refs: &ReferenceTrajectory,
    q_diag: &DVector<f64>,
    config: &LmpcConfig,
    params: &LineParams,
) -> Result<LmpcSolution> {
    config.validate()?;
    let n = params.n();
    let nx = 2 * n;
    if x.n() != n {
        return Err(Error::config("state dimension mismatch"));
    }
    if q_diag.len() != nx {
        return Err(Error::config("state weight length must be 2N"));
    }
    let dt = config.dt;
    let steps = config.horizon - 1;
    let v0 = refs.v0(step_index);

    let x_lin = match config.relinearize {
        Relinearize::EveryStep => x.clone(),
        Relinearize::AtReference => refs.state_ref(step_index),
    };
    let (a, b) = line::linearize(&x_lin, v0, params);
    let a_d = DMatrix::identity(nx, nx) + &a * dt;
    let b_d = &b * dt;
    let predictor = build_prediction(&a_d, &b_d, config.horizon)?;

    // Nominal prediction under the constant feedforward, using the affine
    // linearization x⁺ = x + (f(x_lin) + A(x − x_lin) + G u)·dt.
    let u_ff = refs.feedforward(step_index, params)?;
    let drift_lin = {
        let t_rates = line::tension_rates(&x_lin, v0, params)?;
        let v_rates = line::velocity_rates(&x_lin, &DVector::zeros(n), params)?;
        let mut d = DVector::zeros(nx);
        d.rows_mut(0, n).copy_from(&t_rates);
        d.rows_mut(n, n).copy_from(&v_rates);
        d
    };
    let x_lin_stack = x_lin.stack();
    let constant = (&drift_lin - &a * &x_lin_stack) * dt + &b_d * &u_ff;

    let mut tracking_error = DVector::zeros(steps * nx);
    let mut nominal = x.stack();
    for j in 0..steps {
        nominal = &a_d * &nominal + &constant;
        let x_ref = refs.state_ref(step_index + j + 1).stack();
        tracking_error
            .rows_mut(j * nx, nx)
            .copy_from(&(&nominal - &x_ref));
    }

    // Condensed normal equations with diagonal weights.
    let r_base = config.r_scale / (config.torque_scale * config.torque_scale);
    let phi = &predictor.forced;
    let mut phi_weighted = phi.clone();
    for j in 0..steps {
        for row in 0..nx {
            let w = q_diag[row];
            let mut r = phi_weighted.row_mut(j * nx + row);
            r *= w;
        }
    }
    let mut hessian = phi.transpose() * &phi_weighted;
    for i in 0..steps * n {
        hessian[(i, i)] += r_base;
    }
    let rhs = -(phi_weighted.transpose() * &tracking_error);

    let chol = nalgebra::Cholesky::new(hessian.clone())
        .ok_or_else(|| Error::Numerical("condensed normal matrix is not positive definite".into()))?;
    let corrections = chol.solve(&rhs);

    let residual = (&hessian * &corrections - &rhs).norm();
    let scale = rhs.norm().max(1e-30);
    let gradient_residual = residual / scale;

    let control = &u_ff + corrections.rows(0, n).into_owned();
    Ok(LmpcSolution {
        control,
        corrections,
        gradient_residual,
    })
}

/// Receding-horizon wrapper around [`solve_lmpc`].
#[derive(Debug, Clone)]
pub struct LmpcController {
    params: LineParams,
    q_diag: DVector<f64>,
    config: LmpcConfig,
    refs: ReferenceTrajectory,
}

impl LmpcController {
    pub fn new(
        params: LineParams,
        q_diag: DVector<f64>,
        config: LmpcConfig,
        refs: ReferenceTrajectory,
    ) -> Result<Self> {
        config.validate()?;
        if q_diag.len() != 2 * params.n() {
            return Err(Error::config("state weight length must be 2N"));
        }
        Ok(LmpcController {
            params,
            q_diag,
            config,
            refs,
        })
    }

    pub fn config(&self) -> &LmpcConfig {
        &self.config
    }

    pub fn step_once(&self, step_index: usize, x: &LineState) -> Result<DVector<f64>> {
        solve_lmpc(x, step_index, &self.refs, &self.q_diag, &self.config, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn bench_params(n: usize) -> LineParams {
        LineParams::uniform(n, 200e6 * 1.2e-5, 0.04, 0.95, 10.0, 1.0, 1.0e-2).unwrap()
    }

    fn bench_config(horizon: usize, r_scale: f64) -> LmpcConfig {
        LmpcConfig {
            horizon,
            dt: 0.01,
            r_scale,
            torque_scale: 4.0,
            relinearize: Relinearize::EveryStep,
        }
    }

    #[test]
    fn predictor_single_step_is_the_jacobians() {
        let a_d = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]);
        let b_d = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let pred = build_prediction(&a_d, &b_d, 2).unwrap();
        assert_eq!(pred.free, a_d);
        assert_eq!(pred.forced, b_d);
    }

    #[test]
    fn predictor_identity_dynamics_repeat_initial_deviation() {
        let a_d = DMatrix::identity(3, 3);
        let b_d = DMatrix::zeros(3, 2);
        let pred = build_prediction(&a_d, &b_d, 5).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, -2.0, 3.0]);
        let stacked = &pred.free * &x0;
        for j in 0..4 {
            for i in 0..3 {
                assert_eq!(stacked[j * 3 + i], x0[i]);
            }
        }
        assert!(pred.forced.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictor_matches_step_by_step_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nx = 4;
        let nu = 2;
        let h = 6;
        let a_d = DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.5..0.5));
        let b_d = DMatrix::from_fn(nx, nu, |_, _| rng.random_range(-0.5..0.5));
        let pred = build_prediction(&a_d, &b_d, h).unwrap();

        let x0 = DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0));
        let us: Vec<DVector<f64>> = (0..h - 1)
            .map(|_| DVector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut u_stack = DVector::zeros((h - 1) * nu);
        for (j, u) in us.iter().enumerate() {
            u_stack.rows_mut(j * nu, nu).copy_from(u);
        }
        let stacked = &pred.free * &x0 + &pred.forced * &u_stack;

        let mut x = x0.clone();
        for j in 0..h - 1 {
            x = &a_d * &x + &b_d * &us[j];
            for i in 0..nx {
                assert!(
                    (stacked[j * nx + i] - x[i]).abs() < 1e-10,
                    "step {j} row {i}: {} vs {}",
                    stacked[j * nx + i],
                    x[i]
                );
            }
        }
    }

    #[test]
    fn at_reference_returns_feedforward() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let q = cost::bryson_weights(10.0, 0.1, 100.0, 6).unwrap();
        let cfg = bench_config(9, 1.0);
        let x = refs.state_ref(0);
        let u = solve_lmpc(&x, 0, &refs, &q, &cfg, &p).unwrap();
        let ff = refs.feedforward(0, &p).unwrap();
        for i in 0..6 {
            assert!((u[i] - ff[i]).abs() < 1e-9, "channel {i}: {} vs {}", u[i], ff[i]);
        }
    }

    #[test]
    fn huge_penalty_pins_control_to_feedforward() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let q = cost::bryson_weights(10.0, 0.1, 100.0, 6).unwrap();
        let cfg = bench_config(9, 1e14);
        let mut x = refs.state_ref(0);
        x.tensions[2] -= 10.0;
        x.velocities[1] += 0.05;
        let u = solve_lmpc(&x, 0, &refs, &q, &cfg, &p).unwrap();
        let ff = refs.feedforward(0, &p).unwrap();
        for i in 0..6 {
            assert!((u[i] - ff[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_residual_is_tiny_off_reference() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let q = cost::bryson_weights(10.0, 0.1, 100.0, 6).unwrap();
        let cfg = bench_config(9, 0.05);
        let mut x = refs.state_ref(0);
        x.tensions[0] += 8.0;
        x.tensions[3] -= 5.0;
        x.velocities[2] += 0.02;
        let sol = solve_lmpc_detailed(&x, 0, &refs, &q, &cfg, &p).unwrap();
        assert!(
            sol.gradient_residual < 1e-8,
            "residual {}",
            sol.gradient_residual
        );
        assert!(sol.control.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_static_map() {
        let p = bench_params(6);
        let refs =
            ReferenceTrajectory::constant(&p, DVector::from_element(6, 30.0), 0.01).unwrap();
        let q = cost::bryson_weights(10.0, 0.1, 100.0, 6).unwrap();
        let cfg = LmpcConfig {
            relinearize: Relinearize::AtReference,
            ..bench_config(9, 0.05)
        };
        let mut x = refs.state_ref(0);
        x.tensions[4] += 3.0;
        let a = solve_lmpc(&x, 0, &refs, &q, &cfg, &p).unwrap();
        let b = solve_lmpc(&x, 0, &refs, &q, &cfg, &p).unwrap();
        for i in 0..6 {
            assert_eq!(a[i].to_bits(), b[i].to_bits());
        }
    }

    /// Derivative-free minimization of the same condensed quadratic on a
    /// one-section toy line, cross-checking the normal-equation solve.
    #[test]
    fn matches_brute_force_on_scalar_line() {
        let p = bench_params(1);
        let refs = ReferenceTrajectory::constant(&p, DVector::from_element(1, 30.0), 0.01).unwrap();
        let q = cost::bryson_weights(10.0, 0.1, 100.0, 1).unwrap();
        let cfg = bench_config(4, 0.5);
        let mut x = refs.state_ref(0);
        x.tensions[0] += 6.0;
        x.velocities[0] -= 0.01;

        let sol = solve_lmpc_detailed(&x, 0, &refs, &q, &cfg, &p).unwrap();

        // independent objective: propagate the affine-linearized model
        // step by step and sum the quadratic costs
        let dt = cfg.dt;
        let v0 = refs.v0(0);
        let (a, b) = line::linearize(&x, v0, &p);
        let a_d = DMatrix::identity(2, 2) + &a * dt;
        let b_d = &b * dt;
        let u_ff = refs.feedforward(0, &p).unwrap();
        let drift = {
            let tr = line::tension_rates(&x, v0, &p).unwrap();
            let vr = line::velocity_rates(&x, &DVector::zeros(1), &p).unwrap();
            DVector::from_row_slice(&[tr[0], vr[0]])
        };
        let constant = (&drift - &a * x.stack()) * dt + &b_d * &u_ff;
        let r_base = cfg.r_scale / (cfg.torque_scale * cfg.torque_scale);
        let objective = |u_tilde: &[f64]| -> f64 {
            let mut z = x.stack();
            let mut j_val = 0.0;
            for (j, du) in u_tilde.iter().enumerate() {
                z = &a_d * &z + &b_d * DVector::from_element(1, *du) + &constant;
                let x_ref = refs.state_ref(j + 1).stack();
                for i in 0..2 {
                    let e = z[i] - x_ref[i];
                    j_val += q[i] * e * e;
                }
                j_val += r_base * du * du;
            }
            j_val
        };

        // cyclic coordinate descent with an exact three-point parabola fit
        let dim = cfg.horizon - 1;
        let mut u = vec![0.0; dim];
        for _ in 0..200 {
            for c in 0..dim {
                let h = 0.5;
                let mut probe = u.clone();
                probe[c] = u[c] - h;
                let jm = objective(&probe);
                probe[c] = u[c];
                let j0 = objective(&probe);
                probe[c] = u[c] + h;
                let jp = objective(&probe);
                let denom = jp - 2.0 * j0 + jm;
                if denom.abs() > 1e-300 {
                    u[c] -= h * (jp - jm) / (2.0 * denom);
                }
            }
        }

        assert!(
            (sol.corrections[0] - u[0]).abs() < 1e-6,
            "normal equations {} vs brute force {}",
            sol.corrections[0],
            u[0]
        );
        assert!((sol.control[0] - (u_ff[0] + u[0])).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(bench_config(1, 1.0).validate().is_err());
        assert!(bench_config(9, 0.0).validate().is_err());
        let mut c = bench_config(9, 1.0);
        c.dt = 0.0;
        assert!(c.validate().is_err());
    }
}
