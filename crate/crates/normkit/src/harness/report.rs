//! Serialized run outputs: loss curves, final metrics, sweep tables.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stats::StatsReport;
use crate::Result;

/// One logged point on the training curve. Wall-clock and CPU time are
/// cumulative since the start of the run; both are recorded so
/// time-axis plots reproduce across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Mean per-step training loss over the window ending at `step`.
    pub train_loss: f64,
    /// Task metric on the held-out set (accuracy for classification,
    /// mean squared error for regression).
    pub eval_metric: f64,
    pub wallclock_s: f64,
    pub cpu_time_s: f64,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Effective configuration, echoed for reproducibility.
    pub config: RunConfig,
    /// The seed this particular run used (one of `config.seeds`).
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    /// Mean training loss over the final tenth of the run.
    pub final_loss: f64,
    pub final_eval: f64,
    pub diverged: bool,
    pub diverged_at_step: Option<u64>,
    pub warnings: Vec<String>,
    pub stats: Option<StatsReport>,
}

impl RunReport {
    /// Loss curve as CSV with a `step,loss,wallclock_s` header.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,loss,wallclock_s\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", p.step, p.train_loss, p.wallclock_s));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Outcome of one partial-ratio setting in a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PSweepReport {
    pub p: f64,
    /// Leading statistic size `k` on the swept model.
    pub subset_len: usize,
    pub runs: Vec<RunReport>,
    /// Median of the per-seed final losses (NaN-free only when at least
    /// one run converged).
    pub median_final_loss: f64,
    pub all_converged: bool,
}

/// Paired shifted-init runs of the two re-scaling-invariant normalizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub init_center: f64,
    pub rms_norm: RunReport,
    pub layer_norm: RunReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::default_copy_config;

    #[test]
    fn curve_csv_has_pinned_header_and_rows() {
        let report = RunReport {
            schema_version: 1,
            config: default_copy_config(None),
            seed: 1,
            curve: vec![
                CurvePoint {
                    step: 100,
                    train_loss: 2.5,
                    eval_metric: 0.25,
                    wallclock_s: 0.5,
                    cpu_time_s: 0.5,
                },
                CurvePoint {
                    step: 200,
                    train_loss: 1.25,
                    eval_metric: 0.5,
                    wallclock_s: 1.0,
                    cpu_time_s: 1.0,
                },
            ],
            final_loss: 1.25,
            final_eval: 0.5,
            diverged: false,
            diverged_at_step: None,
            warnings: vec![],
            stats: None,
        };
        let csv = report.curve_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,loss,wallclock_s"));
        assert_eq!(lines.next(), Some("100,2.5,0.5"));
        assert_eq!(lines.next(), Some("200,1.25,1"));
    }
}
