//! Result files: a wide time-series CSV, a metrics JSON, and a long-format
//! per-web CSV for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::metrics::RunMetrics;
use super::runner::TrajectoryLog;

/// Write `timeseries.csv`, `metrics.json`, and `webs.csv` into `out_dir`
/// (created if missing). Returns the written paths. Output is plain-text
/// deterministic: the same log produces byte-identical files.
pub fn emit_results(
    log: &TrajectoryLog,
    metrics: &RunMetrics,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(Error::config("refusing to emit an empty log"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n = log.records[0].state.n();

    let timeseries = out_dir.join("timeseries.csv");
    let mut csv = String::new();
    csv.push('t');
    for prefix in ["T", "v", "u", "Tref", "vref"] {
        for i in 1..=n {
            let _ = write!(csv, ",{prefix}{i}");
        }
    }
    csv.push_str(",v0\n");
    for r in &log.records {
        let _ = write!(csv, "{}", r.t);
        for i in 0..n {
            let _ = write!(csv, ",{}", r.state.tensions[i]);
        }
        for i in 0..n {
            let _ = write!(csv, ",{}", r.state.velocities[i]);
        }
        for i in 0..n {
            let _ = write!(csv, ",{}", r.control[i]);
        }
        for i in 0..n {
            let _ = write!(csv, ",{}", r.tension_ref[i]);
        }
        for i in 0..n {
            let _ = write!(csv, ",{}", r.velocity_ref[i]);
        }
        let _ = writeln!(csv, ",{}", r.v0);
    }
    fs::write(&timeseries, csv).map_err(|e| Error::io(&timeseries, e))?;

    let metrics_path = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Numerical(format!("metrics serialization failed: {e}")))?;
    fs::write(&metrics_path, json).map_err(|e| Error::io(&metrics_path, e))?;

    let webs = out_dir.join("webs.csv");
    let mut long = String::from("web,t,tension,tension_ref,deviation\n");
    for i in 0..n {
        for r in &log.records {
            let dev = r.state.tensions[i] - r.tension_ref[i];
            let _ = writeln!(
                long,
                "{},{},{},{},{}",
                i + 1,
                r.t,
                r.state.tensions[i],
                r.tension_ref[i],
                dev
            );
        }
    }
    fs::write(&webs, long).map_err(|e| Error::io(&webs, e))?;

    Ok(vec![timeseries, metrics_path, webs])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::runner::{run_closed_loop, FeedforwardController};
    use crate::harness::scenario::Scenario;
    use crate::harness::metrics::compute_metrics;

    #[test]
    fn files_have_expected_shape_and_reproduce() {
        let mut sc = Scenario::tension_step();
        sc.duration = 0.2;
        sc.t_event = 0.1;
        let refs = sc.reference_trajectory().unwrap();
        let mut ctrl = FeedforwardController::new(refs.clone(), sc.params.clone());
        let log = run_closed_loop(&sc, &mut ctrl, 5).unwrap();
        let metrics = compute_metrics(&log, &refs, 0.5, sc.t_event).unwrap();

        let dir = std::env::temp_dir().join(format!("webline_emit_{}", std::process::id()));
        let paths = emit_results(&log, &metrics, &dir).unwrap();
        assert_eq!(paths.len(), 3);

        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(csv.lines().count(), log.len() + 1);
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 1 + 5 * 6 + 1);

        let json = std::fs::read_to_string(&paths[1]).unwrap();
        let back: RunMetrics = serde_json::from_str(&json).unwrap();
        assert_eq!(back, metrics);

        let webs = std::fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(webs.lines().count(), 1 + 6 * log.len());

        // byte-identical on re-emission
        let mut ctrl2 = FeedforwardController::new(refs.clone(), sc.params.clone());
        let log2 = run_closed_loop(&sc, &mut ctrl2, 5).unwrap();
        let dir2 = dir.join("again");
        let paths2 = emit_results(&log2, &metrics, &dir2).unwrap();
        assert_eq!(
            std::fs::read(&paths[0]).unwrap(),
            std::fs::read(&paths2[0]).unwrap()
        );

        std::fs::remove_dir_all(&dir).ok();
    }
}
