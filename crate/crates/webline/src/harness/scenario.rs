//! Benchmark scenario definitions.
//!
//! Two stock cases exercise the controllers:
//!
//! - **tension step**: five webs hold fixed setpoints (28, 36, 40, 24,
//!   32 N) while web 3 jumps from 20 N to 44 N one second into the run;
//! - **speed-up**: all webs hold 30 N while the unwinding speed jumps
//!   from 0.01 m/s to 0.10 m/s.
//!
//! Roller-speed references always follow the equilibrium recursion, so
//! each plateau is a fixed point of the noiseless plant.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cost::ReferenceTrajectory;
use crate::error::{Error, Result};
use crate::line::{self, LineParams, LineState};

/// Piecewise-constant schedule: `values[i]` applies from `times[i]`
/// (seconds) until the next breakpoint; the last value holds forever.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiecewiseSchedule {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseSchedule {
    pub fn constant(value: f64) -> Self {
        PiecewiseSchedule {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn step(before: f64, after: f64, at: f64) -> Self {
        PiecewiseSchedule {
            times: vec![0.0, at],
            values: vec![before, after],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.values.len() {
            return Err(Error::config("schedule times/values must match and be nonempty"));
        }
        if self.times[0] != 0.0 {
            return Err(Error::config("schedule must start at t = 0"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("schedule breakpoints must increase"));
        }
        Ok(())
    }

    /// Breakpoints converted to control-step indices.
    fn step_breakpoints(&self, dt: f64) -> Vec<usize> {
        self.times
            .iter()
            .map(|t| ((t / dt) - 1e-9).ceil().max(0.0) as usize)
            .collect()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut v = self.values[0];
        for (bt, bv) in self.times.iter().zip(&self.values) {
            if t + 1e-12 >= *bt {
                v = *bv;
            }
        }
        v
    }
}

/// One benchmark case: plant, schedules, and run settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: LineParams,
    /// Run length in seconds.
    pub duration: f64,
    pub dt: f64,
    /// Instant of the disturbance event metrics are measured from.
    pub t_event: f64,
    /// Per-web tension reference schedules, length `N`.
    pub tension_schedule: Vec<PiecewiseSchedule>,
    pub v0_schedule: PiecewiseSchedule,
    /// Rise time of `v0` transitions in seconds (0 = instantaneous).
    pub v0_ramp_time: f64,
    pub plant_noise_active: bool,
    /// Starting state; `None` means equilibrium at the initial references.
    pub initial_state: Option<LineState>,
}

/// Line constants used by both stock scenarios: 200 MPa modulus on a
/// 1.2×10⁻⁵ m² web (EA = 2400 N), 0.04 m rollers with 0.95 kg·m² inertia,
/// 10 N·m·s/rad motor friction, 1 m sections, disturbance gain 10⁻².
pub fn default_line_params(n_sections: usize) -> LineParams {
    LineParams::uniform(n_sections, 200e6 * 1.2e-5, 0.04, 0.95, 10.0, 1.0, 1.0e-2)
        .expect("stock parameters are valid")
}

impl Scenario {
    /// Stock case: web 3 commanded from 20 N to 44 N at `t_event`, the
    /// other webs held at (28, 36, 40, 24, 32) N, v0 fixed at 0.01 m/s.
    pub fn tension_step() -> Scenario {
        let before = [28.0, 36.0, 20.0, 40.0, 24.0, 32.0];
        let t_event = 1.0;
        let tension_schedule = before
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == 2 {
                    PiecewiseSchedule::step(t, 44.0, t_event)
                } else {
                    PiecewiseSchedule::constant(t)
                }
            })
            .collect();
        Scenario {
            params: default_line_params(6),
            duration: 5.0,
            dt: 0.01,
            t_event,
            tension_schedule,
            v0_schedule: PiecewiseSchedule::constant(0.01),
            v0_ramp_time: 0.0,
            plant_noise_active: true,
            initial_state: None,
        }
    }

    /// Stock case: all webs at 30 N, unwinding speed stepped from
    /// 0.01 m/s to 0.10 m/s at `t_event`.
    pub fn speed_up() -> Scenario {
        let t_event = 1.0;
        Scenario {
            params: default_line_params(6),
            duration: 5.0,
            dt: 0.01,
            t_event,
            tension_schedule: vec![PiecewiseSchedule::constant(30.0); 6],
            v0_schedule: PiecewiseSchedule::step(0.01, 0.10, t_event),
            v0_ramp_time: 0.0,
            plant_noise_active: true,
            initial_state: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("scenario dt must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config("scenario duration must be positive"));
        }
        if self.tension_schedule.len() != self.params.n() {
            return Err(Error::Config(format!(
                "need one tension schedule per web: got {}, expected {}",
                self.tension_schedule.len(),
                self.params.n()
            )));
        }
        for s in &self.tension_schedule {
            s.validate()?;
        }
        self.v0_schedule.validate()?;
        if !(self.t_event >= 0.0) || self.t_event > self.duration {
            return Err(Error::config("t_event must lie within the run"));
        }
        if self.v0_ramp_time < 0.0 {
            return Err(Error::config("v0_ramp_time must be nonnegative"));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn event_step(&self) -> usize {
        ((self.t_event / self.dt) - 1e-9).ceil().max(0.0) as usize
    }

    /// Merge the per-web schedules into a reference trajectory whose
    /// velocity references satisfy the equilibrium recursion everywhere.
    pub fn reference_trajectory(&self) -> Result<ReferenceTrajectory> {
        self.validate()?;
        let n = self.params.n();

        // union of all tension breakpoints, in step indices
        let mut starts: Vec<usize> = self
            .tension_schedule
            .iter()
            .flat_map(|s| s.step_breakpoints(self.dt))
            .collect();
        starts.sort_unstable();
        starts.dedup();

        let tension_segments: Vec<(usize, DVector<f64>)> = starts
            .iter()
            .map(|&start| {
                let t = start as f64 * self.dt;
                let refs = DVector::from_fn(n, |i, _| self.tension_schedule[i].value_at(t));
                (start, refs)
            })
            .collect();

        let v0_starts = self.v0_schedule.step_breakpoints(self.dt);
        let v0_segments: Vec<(usize, f64)> = v0_starts
            .into_iter()
            .zip(self.v0_schedule.values.iter().copied())
            .collect();

        let ramp_steps = (self.v0_ramp_time / self.dt).round() as usize;
        ReferenceTrajectory::piecewise(&self.params, &tension_segments, &v0_segments, ramp_steps)
    }

    /// Starting state: configured explicitly or the equilibrium at the
    /// initial references.
    pub fn start_state(&self, refs: &ReferenceTrajectory) -> Result<LineState> {
        match &self.initial_state {
            Some(s) => {
                if s.n() != self.params.n() {
                    return Err(Error::config("initial state dimension mismatch"));
                }
                Ok(s.clone())
            }
            None => {
                let tensions = refs.tension_refs(0).clone();
                let velocities =
                    line::equilibrium_velocities(&tensions, refs.v0(0), &self.params)?;
                LineState::new(tensions, velocities)
            }
        }
    }
}
