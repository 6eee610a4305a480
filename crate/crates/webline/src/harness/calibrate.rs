//! Control-effort calibration for the linear baseline.
//!
//! The baseline's quadratic penalty scale is chosen so its control effort
//! has the same maximum amplitude as the sampling controller's: run the
//! sampling controller once, record the largest torque deviation from the
//! equilibrium feedforward, then bisect `r_scale` (monotone: a heavier
//! penalty shrinks the corrections) until the baseline's amplitude matches
//! within the requested tolerance.

use crate::cost::{CostConfig, CostVariant, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::lmpc::{LmpcConfig, LmpcController};
use crate::mppi::{MppiConfig, MppiController};

use super::runner::{run_closed_loop, TrajectoryLog};
use super::scenario::Scenario;

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub r_scale: f64,
    pub target_amplitude: f64,
    pub achieved_amplitude: f64,
    pub iterations: usize,
}

/// Largest per-channel torque deviation from the reference feedforward
/// over a whole log.
pub fn control_amplitude(
    log: &TrajectoryLog,
    refs: &ReferenceTrajectory,
    params: &crate::line::LineParams,
) -> Result<f64> {
    let mut amp: f64 = 0.0;
    for (step, r) in log.records.iter().enumerate() {
        let ff = refs.feedforward(step, params)?;
        for c in 0..ff.len() {
            amp = amp.max((r.control[c] - ff[c]).abs());
        }
    }
    Ok(amp)
}

/// Find the `r_scale` that matches the baseline's control amplitude to the
/// sampling controller's on `scenario`. `cost` must be the quadratic
/// variant (the baseline cannot represent the L1 term).
pub fn calibrate_r_scale(
    scenario: &Scenario,
    cost: &CostConfig,
    mppi_cfg: &MppiConfig,
    lmpc_template: &LmpcConfig,
    seed: u64,
    tolerance: f64,
) -> Result<CalibrationReport> {
    if cost.variant != CostVariant::Quadratic {
        return Err(Error::config(
            "calibration compares quadratic controllers: use the quadratic cost variant",
        ));
    }
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::config("tolerance must be in (0, 1)"));
    }
    let refs = scenario.reference_trajectory()?;

    let mut mppi_cfg = mppi_cfg.clone();
    mppi_cfg.seed = seed;
    let mut mppi = MppiController::new(
        scenario.params.clone(),
        cost.clone(),
        mppi_cfg,
        refs.clone(),
    )?;
    let mppi_log = run_closed_loop(scenario, &mut mppi, seed)?;
    let target = control_amplitude(&mppi_log, &refs, &scenario.params)?;
    if target <= 0.0 {
        return Err(Error::Numerical(
            "sampling controller produced zero control deviation; nothing to match".into(),
        ));
    }

    let amplitude_for = |r_scale: f64| -> Result<f64> {
        let cfg = LmpcConfig {
            r_scale,
            ..lmpc_template.clone()
        };
        let mut lmpc = LmpcController::new(
            scenario.params.clone(),
            cost.q_diag.clone(),
            cfg,
            refs.clone(),
        )?;
        let log = run_closed_loop(scenario, &mut lmpc, seed)?;
        control_amplitude(&log, &refs, &scenario.params)
    };

    // bisection on log10(r_scale); amplitude decreases as r_scale grows
    let mut lo = -6.0_f64;
    let mut hi = 6.0_f64;
    if amplitude_for(10f64.powf(lo))? < target {
        return Err(Error::Numerical(
            "baseline amplitude below target even at the smallest penalty".into(),
        ));
    }
    if amplitude_for(10f64.powf(hi))? > target {
        return Err(Error::Numerical(
            "baseline amplitude above target even at the largest penalty".into(),
        ));
    }

    let mut iterations = 0;
    let mut mid = 0.0;
    let mut achieved = f64::NAN;
    for _ in 0..60 {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        achieved = amplitude_for(10f64.powf(mid))?;
        if (achieved - target).abs() <= tolerance * target {
            break;
        }
        if achieved > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r_scale = 10f64.powf(mid);
    if (achieved - target).abs() > tolerance * target {
        return Err(Error::Numerical(format!(
            "calibration did not converge: amplitude {achieved} vs target {target}"
        )));
    }
    Ok(CalibrationReport {
        r_scale,
        target_amplitude: target,
        achieved_amplitude: achieved,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mppi::{InitialPlan, TailInit};

    #[test]
    fn calibration_matches_amplitudes_on_short_run() {
        let mut sc = Scenario::tension_step();
        sc.duration = 1.6;
        sc.t_event = 0.4;
        let cost = CostConfig::bryson(CostVariant::Quadratic, 6, 10.0, 0.1, 100.0, 0.0, 1.0, 1.0)
            .unwrap();
        let mppi_cfg = MppiConfig {
            num_samples: 400,
            horizon: 9,
            temperature: 1.0,
            exploration: 1.0,
            dt: sc.dt,
            seed: 0,
            tail_init: TailInit::EquilibriumFeedforward,
            initial_plan: InitialPlan::EquilibriumFeedforward,
        };
        let lmpc_template = LmpcConfig {
            horizon: 9,
            dt: sc.dt,
            r_scale: 1.0,
            torque_scale: 4.0,
            relinearize: crate::lmpc::Relinearize::EveryStep,
        };
        let report =
            calibrate_r_scale(&sc, &cost, &mppi_cfg, &lmpc_template, 11, 0.05).unwrap();
        assert!(report.r_scale > 0.0);
        assert!(
            (report.achieved_amplitude - report.target_amplitude).abs()
                <= 0.05 * report.target_amplitude
        );
    }
}
