//! Per-web performance metrics.
//!
//! Both metrics are measured against the instantaneous tension reference
//! and relative to the disturbance event at `t_event`:
//!
//! - **convergence time**: the last instant at which a web's tension sits
//!   more than `band` away from its reference, measured from the event;
//!   zero for a web that never leaves the band.
//! - **maximum deviation**: the largest deviation as a percentage of the
//!   web's final setpoint. The window opens when the web first reaches its
//!   (possibly new) reference band after the event, so a commanded setpoint
//!   change is not itself scored as deviation — only the transient around
//!   the webs that hold their setpoints, and the overshoot of the web that
//!   moves. A web that never reaches its band is scored over the whole
//!   post-event window.

use serde::{Deserialize, Serialize};

use crate::cost::ReferenceTrajectory;
use crate::error::{Error, Result};

use super::runner::TrajectoryLog;

/// Per-web statistics of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub convergence_time: Vec<f64>,
    pub max_deviation_pct: Vec<f64>,
    pub avg_convergence_time: f64,
    pub avg_max_deviation_pct: f64,
}

/// Seconds after `t_event` until each web last sits outside `band` of its
/// reference; zero if it never does.
pub fn convergence_time(
    log: &TrajectoryLog,
    refs: &ReferenceTrajectory,
    band: f64,
    t_event: f64,
) -> Vec<f64> {
    let n = refs.n();
    (0..n)
        .map(|web| {
            log.records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.t + 1e-9 >= t_event)
                .filter(|(step, r)| {
                    (r.state.tensions[web] - refs.tension_refs(*step)[web]).abs() > band
                })
                .map(|(_, r)| r.t - t_event)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Largest post-settling tension deviation per web, as a percentage of the
/// final setpoint. `band` defines when a web counts as having reached its
/// reference (the measurement window opens there).
pub fn max_deviation_pct(
    log: &TrajectoryLog,
    refs: &ReferenceTrajectory,
    band: f64,
    t_event: f64,
) -> Result<Vec<f64>> {
    if log.is_empty() {
        return Err(Error::config("cannot compute metrics on an empty log"));
    }
    let n = refs.n();
    let last_step = log.len() - 1;
    let mut out = Vec::with_capacity(n);
    for web in 0..n {
        let setpoint = refs.tension_refs(last_step)[web];
        if setpoint <= 0.0 {
            return Err(Error::Config(format!(
                "max deviation undefined: web {} has final reference {setpoint} N",
                web + 1
            )));
        }
        // window opens at the first post-event sample inside the band
        let open = log
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.t + 1e-9 >= t_event)
            .find(|(step, r)| {
                (r.state.tensions[web] - refs.tension_refs(*step)[web]).abs() <= band
            })
            .map(|(step, _)| step);

        let max_dev = log
            .records
            .iter()
            .enumerate()
            .filter(|(step, r)| match open {
                Some(s) => *step >= s,
                None => r.t + 1e-9 >= t_event,
            })
            .map(|(step, r)| (r.state.tensions[web] - refs.tension_refs(step)[web]).abs())
            .fold(0.0, f64::max);

        out.push(100.0 * max_dev / setpoint);
    }
    Ok(out)
}

/// Both metrics plus their across-web averages.
pub fn compute_metrics(
    log: &TrajectoryLog,
    refs: &ReferenceTrajectory,
    band: f64,
    t_event: f64,
) -> Result<RunMetrics> {
    if log.is_empty() {
        return Err(Error::config("cannot compute metrics on an empty log"));
    }
    let ct = convergence_time(log, refs, band, t_event);
    let md = max_deviation_pct(log, refs, band, t_event)?;
    let n = ct.len() as f64;
    let avg_ct = ct.iter().sum::<f64>() / n;
    let avg_md = md.iter().sum::<f64>() / n;
    Ok(RunMetrics {
        convergence_time: ct,
        max_deviation_pct: md,
        avg_convergence_time: avg_ct,
        avg_max_deviation_pct: avg_md,
    })
}
