//! Closed-loop runner: measure, control, step the plant, log.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cost::ReferenceTrajectory;
use crate::error::{Error, Result};
use crate::line::{self, LineState};
use crate::lmpc::LmpcController;
use crate::mppi::MppiController;
use crate::rng::plant_stream;

use super::scenario::Scenario;

/// Anything that can close the loop. The full state is measurable, so a
/// controller sees the exact plant state every step.
pub trait Controller {
    fn name(&self) -> &str;
    fn control(&mut self, step_index: usize, state: &LineState) -> Result<DVector<f64>>;
}

impl Controller for MppiController {
    fn name(&self) -> &str {
        "mppi"
    }

    fn control(&mut self, step_index: usize, state: &LineState) -> Result<DVector<f64>> {
        self.step_once(step_index, state)
    }
}

impl Controller for LmpcController {
    fn name(&self) -> &str {
        "lmpc"
    }

    fn control(&mut self, step_index: usize, state: &LineState) -> Result<DVector<f64>> {
        self.step_once(step_index, state)
    }
}

/// Open-loop reference feedforward; useful as a null controller in tests.
pub struct FeedforwardController {
    refs: ReferenceTrajectory,
    params: crate::line::LineParams,
}

impl FeedforwardController {
    pub fn new(refs: ReferenceTrajectory, params: crate::line::LineParams) -> Self {
        FeedforwardController { refs, params }
    }
}

impl Controller for FeedforwardController {
    fn name(&self) -> &str {
        "feedforward"
    }

    fn control(&mut self, step_index: usize, _state: &LineState) -> Result<DVector<f64>> {
        self.refs.feedforward(step_index, &self.params)
    }
}

/// One logged sample of the closed loop.
#[derive(Debug, Clone)]
pub struct LogRecord {
    pub t: f64,
    pub state: LineState,
    /// Control applied at this sample (the final sample repeats the last
    /// applied control).
    pub control: DVector<f64>,
    pub tension_ref: DVector<f64>,
    pub velocity_ref: DVector<f64>,
    pub v0: f64,
}

/// Complete closed-loop trajectory: `duration/dt + 1` samples.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub records: Vec<LogRecord>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Bit-level fingerprint of every numeric column; equal fingerprints
    /// mean byte-identical logs.
    pub fn bit_fingerprint(&self) -> Vec<u64> {
        let mut bits = Vec::new();
        for r in &self.records {
            bits.push(r.t.to_bits());
            bits.extend(r.state.tensions.iter().map(|v| v.to_bits()));
            bits.extend(r.state.velocities.iter().map(|v| v.to_bits()));
            bits.extend(r.control.iter().map(|v| v.to_bits()));
            bits.extend(r.tension_ref.iter().map(|v| v.to_bits()));
            bits.extend(r.velocity_ref.iter().map(|v| v.to_bits()));
            bits.push(r.v0.to_bits());
        }
        bits
    }
}

/// Run the scenario under `controller`. The plant disturbance draws from
/// the plant RNG domain of `seed`, disjoint from any controller stream,
/// and is active only when the scenario says so.
pub fn run_closed_loop(
    scenario: &Scenario,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<TrajectoryLog> {
    scenario.validate()?;
    let refs = scenario.reference_trajectory()?;
    let n = scenario.params.n();
    let num_steps = scenario.num_steps();
    let mut records = Vec::with_capacity(num_steps + 1);

    let mut x = scenario.start_state(&refs)?;
    let mut eps = DVector::zeros(n);
    let mut last_u = DVector::zeros(n);

    for step in 0..num_steps {
        let u = controller.control(step, &x).map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { step },
            other => other,
        })?;
        if u.len() != n {
            return Err(Error::Controller(format!(
                "controller returned {} channels, expected {n}",
                u.len()
            )));
        }
        records.push(LogRecord {
            t: step as f64 * scenario.dt,
            state: x.clone(),
            control: u.clone(),
            tension_ref: refs.tension_refs(step).clone(),
            velocity_ref: refs.velocity_refs(step),
            v0: refs.v0(step),
        });

        if scenario.plant_noise_active {
            let mut rng = plant_stream(seed, step);
            for i in 0..n {
                eps[i] = rng.sample(StandardNormal);
            }
        } else {
            eps.fill(0.0);
        }
        x = line::step(&x, &u, &eps, refs.v0(step), &scenario.params, scenario.dt, step)?;
        last_u = u;
    }

    records.push(LogRecord {
        t: num_steps as f64 * scenario.dt,
        state: x,
        control: last_u,
        tension_ref: refs.tension_refs(num_steps).clone(),
        velocity_ref: refs.velocity_refs(num_steps),
        v0: refs.v0(num_steps),
    });

    Ok(TrajectoryLog {
        dt: scenario.dt,
        records,
    })
}
