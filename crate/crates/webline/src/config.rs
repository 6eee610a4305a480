//! Scenario configuration files.
//!
//! One TOML document describes a whole benchmark case: the line constants
//! (keyed by the physical quantity, with scalars broadcast across
//! rollers), the cost weights, both controller configurations, and the
//! reference schedules. The controller hyper-parameters λ and ν live in
//! the `[cost]` section and are copied into the sampling-controller
//! config when the file is resolved.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{CostConfig, CostVariant};
use crate::error::{Error, Result};
use crate::line::LineParams;
use crate::lmpc::{LmpcConfig, Relinearize};
use crate::mppi::{InitialPlan, MppiConfig, TailInit};

use crate::harness::scenario::{PiecewiseSchedule, Scenario};

/// A per-roller quantity: one shared value or one value per roller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRoller {
    Uniform(f64),
    PerRoller(Vec<f64>),
}

impl PerRoller {
    fn resolve(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            PerRoller::Uniform(v) => Ok(vec![*v; n]),
            PerRoller::PerRoller(vs) => {
                if vs.len() != n {
                    return Err(Error::Config(format!(
                        "{name} has {} entries, expected {n}",
                        vs.len()
                    )));
                }
                Ok(vs.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSection {
    pub n_sections: usize,
    /// Web modulus E in pascals.
    pub modulus: f64,
    /// Cross-sectional area A in m².
    pub cross_sectional_area: f64,
    pub roller_radius: PerRoller,
    pub roller_inertia: PerRoller,
    pub motor_friction: PerRoller,
    pub section_length: PerRoller,
    pub disturbance_coeff: PerRoller,
}

impl LineSection {
    pub fn build(&self) -> Result<LineParams> {
        let n = self.n_sections;
        LineParams::new(
            self.modulus * self.cross_sectional_area,
            self.roller_radius.resolve(n, "roller_radius")?,
            self.roller_inertia.resolve(n, "roller_inertia")?,
            self.motor_friction.resolve(n, "motor_friction")?,
            self.section_length.resolve(n, "section_length")?,
            self.disturbance_coeff.resolve(n, "disturbance_coeff")?,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSection {
    pub variant: CostVariant,
    pub tension_scale: f64,
    pub velocity_scale: f64,
    pub tension_boost: f64,
    /// `q_l1 = l1_factor × Q_11` for the L1 variant.
    #[serde(default = "default_l1_factor")]
    pub l1_factor: f64,
    #[serde(default = "default_unity")]
    pub temperature: f64,
    #[serde(default = "default_unity")]
    pub exploration: f64,
}

fn default_l1_factor() -> f64 {
    100.0
}

fn default_unity() -> f64 {
    1.0
}

impl CostSection {
    pub fn build(&self, n: usize) -> Result<CostConfig> {
        CostConfig::bryson(
            self.variant,
            n,
            self.tension_scale,
            self.velocity_scale,
            self.tension_boost,
            self.l1_factor,
            self.temperature,
            self.exploration,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub duration: f64,
    pub dt: f64,
    pub t_event: f64,
    #[serde(default = "default_true")]
    pub plant_noise: bool,
    #[serde(default)]
    pub v0_ramp_time: f64,
    pub tension_schedule: Vec<PiecewiseSchedule>,
    pub v0_schedule: PiecewiseSchedule,
}

fn default_true() -> bool {
    true
}

/// Whole-file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub line: LineSection,
    pub cost: CostSection,
    pub mppi: MppiConfig,
    pub lmpc: LmpcConfig,
    pub scenario: ScenarioSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fill derived defaults and check cross-section consistency.
    pub fn resolve(&mut self) -> Result<()> {
        if self.mppi.dt == 0.0 {
            self.mppi.dt = self.scenario.dt;
        }
        if self.lmpc.dt == 0.0 {
            self.lmpc.dt = self.scenario.dt;
        }
        if self.mppi.dt != self.scenario.dt || self.lmpc.dt != self.scenario.dt {
            return Err(Error::config(
                "controller dt must match the scenario dt",
            ));
        }
        if self.mppi.temperature != self.cost.temperature
            || self.mppi.exploration != self.cost.exploration
        {
            return Err(Error::config(
                "mppi temperature/exploration must match the cost section \
                 (omit them under [mppi] to inherit)",
            ));
        }
        Ok(())
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        let params = self.line.build()?;
        let sc = Scenario {
            params,
            duration: self.scenario.duration,
            dt: self.scenario.dt,
            t_event: self.scenario.t_event,
            tension_schedule: self.scenario.tension_schedule.clone(),
            v0_schedule: self.scenario.v0_schedule.clone(),
            v0_ramp_time: self.scenario.v0_ramp_time,
            plant_noise_active: self.scenario.plant_noise,
            initial_state: None,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn build_cost(&self) -> Result<CostConfig> {
        self.cost.build(self.line.n_sections)
    }

    /// Stock tension-step case with benchmark defaults.
    pub fn tension_step() -> RunConfig {
        let sc = Scenario::tension_step();
        RunConfig::from_scenario(&sc, CostVariant::QuadraticL1)
    }

    /// Stock speed-up case with benchmark defaults.
    pub fn speed_up() -> RunConfig {
        let sc = Scenario::speed_up();
        RunConfig::from_scenario(&sc, CostVariant::QuadraticL1)
    }

    fn from_scenario(sc: &Scenario, variant: CostVariant) -> RunConfig {
        RunConfig {
            line: LineSection {
                n_sections: sc.params.n(),
                modulus: 200e6,
                cross_sectional_area: 1.2e-5,
                roller_radius: PerRoller::Uniform(0.04),
                roller_inertia: PerRoller::Uniform(0.95),
                motor_friction: PerRoller::Uniform(10.0),
                section_length: PerRoller::Uniform(1.0),
                disturbance_coeff: PerRoller::Uniform(1.0e-2),
            },
            cost: CostSection {
                variant,
                tension_scale: 0.1,
                velocity_scale: 0.01,
                tension_boost: 100.0,
                l1_factor: 100.0,
                temperature: 1.0,
                exploration: 1.0,
            },
            mppi: MppiConfig {
                num_samples: 3000,
                horizon: 9,
                temperature: 1.0,
                exploration: 1.0,
                dt: sc.dt,
                seed: 0,
                tail_init: TailInit::EquilibriumFeedforward,
                initial_plan: InitialPlan::EquilibriumFeedforward,
            },
            lmpc: LmpcConfig {
                horizon: 9,
                dt: sc.dt,
                r_scale: DEFAULT_LMPC_R_SCALE,
                torque_scale: 4.0,
                relinearize: Relinearize::EveryStep,
            },
            scenario: ScenarioSection {
                duration: sc.duration,
                dt: sc.dt,
                t_event: sc.t_event,
                plant_noise: sc.plant_noise_active,
                v0_ramp_time: sc.v0_ramp_time,
                tension_schedule: sc.tension_schedule.clone(),
                v0_schedule: sc.v0_schedule.clone(),
            },
        }
    }
}

/// Baseline penalty scale matching the sampling controller's maximum
/// control amplitude on the tension-step case (`calibrate-lmpc` output).
pub const DEFAULT_LMPC_R_SCALE: f64 = 1.0;
