use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Domain, ExperimentConfig, Variant};
use crate::envs::{Action, GridState};
use crate::error::Result;

/// A metric value with the sample counts behind it. `value` is `None` when
/// the metric does not apply (NA) or every contributing entry was infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Metric {
    pub value: Option<f64>,
    /// Datapoints, probe states or episodes averaged over.
    pub n: usize,
    /// Draws per datapoint (importance samples, model samples, ...).
    pub draws: usize,
    /// Entries that were `+inf` and left out of `value`.
    pub infinite: usize,
}

impl Metric {
    pub fn na() -> Self {
        Self::default()
    }

    pub fn of(value: f64, n: usize, draws: usize) -> Self {
        Self {
            value: Some(value),
            n,
            draws,
            infinite: 0,
        }
    }

    /// Mean of the finite entries; infinite ones are counted separately.
    pub fn mean_of(values: &[f64], draws: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        Self {
            value: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            n: values.len(),
            draws,
            infinite: values.len() - finite.len(),
        }
    }

    /// CSV cell: the value, `inf` when only infinite entries exist, else
    /// `NA`.
    pub fn cell(&self) -> String {
        match self.value {
            Some(v) => format!("{v:?}"),
            None if self.infinite > 0 => "inf".into(),
            None => "NA".into(),
        }
    }
}

/// Metrics of one `(variant, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub domain: Domain,
    pub variant: Variant,
    pub seed: u64,
    /// Renyi bound at the training `k` and `alpha` on the test set (higher
    /// is better).
    pub vlb: Metric,
    /// Single-draw evidence lower bound on the test set.
    pub elbo: Metric,
    /// Importance-sampled negative log-likelihood on the test set.
    pub test_nll: Metric,
    /// Mean squared error of point predictions (baselines only).
    pub mse: Metric,
    /// `D_KL(p || p_model)` averaged over probe states.
    pub kl_true_model: Metric,
    /// Hellinger distance averaged over probe states.
    pub hellinger: Metric,
    /// `D_KL(p_model || p)` averaged over probe states.
    pub kl_model_true: Metric,
    /// Fraction of probes with at least 0.9 of the model mass on the true
    /// next agent cell.
    pub agent_determinism: Metric,
    /// Greedy success rate of the trained policy (on-policy domain).
    pub policy_success: Metric,
    /// Fraction of rollout samples that put an entity on a wall.
    pub wall_violations: Metric,
    pub steps: u64,
    /// Step whose parameters were kept (best validation NLL).
    pub best_step: u64,
    pub wall_clock_s: f64,
    pub failure: Option<String>,
}

impl RunReport {
    pub fn new(domain: Domain, variant: Variant, seed: u64) -> Self {
        Self {
            domain,
            variant,
            seed,
            vlb: Metric::na(),
            elbo: Metric::na(),
            test_nll: Metric::na(),
            mse: Metric::na(),
            kl_true_model: Metric::na(),
            hellinger: Metric::na(),
            kl_model_true: Metric::na(),
            agent_determinism: Metric::na(),
            policy_success: Metric::na(),
            wall_violations: Metric::na(),
            steps: 0,
            best_step: 0,
            wall_clock_s: 0.0,
            failure: None,
        }
    }

    pub fn metrics(&self) -> [(&'static str, &Metric); 10] {
        [
            ("vlb", &self.vlb),
            ("elbo", &self.elbo),
            ("test_nll", &self.test_nll),
            ("mse", &self.mse),
            ("kl_true_model", &self.kl_true_model),
            ("hellinger", &self.hellinger),
            ("kl_model_true", &self.kl_model_true),
            ("agent_determinism", &self.agent_determinism),
            ("policy_success", &self.policy_success),
            ("wall_violations", &self.wall_violations),
        ]
    }

    fn metrics_mut(&mut self) -> [&mut Metric; 10] {
        [
            &mut self.vlb,
            &mut self.elbo,
            &mut self.test_nll,
            &mut self.mse,
            &mut self.kl_true_model,
            &mut self.hellinger,
            &mut self.kl_model_true,
            &mut self.agent_determinism,
            &mut self.policy_success,
            &mut self.wall_violations,
        ]
    }
}

/// Seed-mean of every metric for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub domain: Domain,
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    /// Per-metric mean over runs that produced a value; `n` counts those
    /// runs and `infinite` the runs whose value was infinite.
    pub means: RunReport,
}

/// One probe of the distribution metrics, stored with the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub state: GridState,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    /// Probe set behind the distribution metrics (grid domains).
    pub probes: Vec<Probe>,
    pub runs: Vec<RunReport>,
    pub aggregates: Vec<Aggregate>,
}

impl Report {
    pub fn new(config: ExperimentConfig, probes: Vec<Probe>, mut runs: Vec<RunReport>) -> Self {
        runs.sort_by_key(|r| (r.variant, r.seed));
        let aggregates = aggregate(&runs);
        Self {
            config,
            probes,
            runs,
            aggregates,
        }
    }

    pub fn aggregate_for(&self, variant: Variant) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    /// Header plus one row per run and one `mean` row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,variant,seed");
        for (name, _) in RunReport::new(Domain::Toy, Variant::MlpDet, 0).metrics() {
            let _ = write!(out, ",{name},{name}_n,{name}_draws,{name}_inf");
        }
        out.push_str(",steps,best_step,wall_clock_s,failure\n");
        let domain = |d: Domain| serde_json::to_value(d).unwrap().as_str().unwrap().to_string();
        let mut row = |r: &RunReport, seed: String| {
            let _ = write!(out, "{},{},{seed}", domain(r.domain), r.variant.name());
            for (_, m) in r.metrics() {
                let _ = write!(out, ",{},{},{},{}", m.cell(), m.n, m.draws, m.infinite);
            }
            let failure = r.failure.as_deref().unwrap_or("").replace(['"', ',', '\n'], " ");
            let _ = writeln!(out, ",{},{},{:?},{failure}", r.steps, r.best_step, r.wall_clock_s);
        };
        for r in &self.runs {
            row(r, r.seed.to_string());
        }
        for a in &self.aggregates {
            row(&a.means, "mean".into());
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        std::fs::write(&csv, self.to_csv())?;
        Ok((json, csv))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Groups runs by variant and averages each metric over the runs that
/// report it.
pub fn aggregate(runs: &[RunReport]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<Variant, Vec<&RunReport>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.variant).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(variant, rs)| {
            let mut means = RunReport::new(rs[0].domain, variant, 0);
            for (k, slot) in means.metrics_mut().into_iter().enumerate() {
                let ms: Vec<&Metric> = rs.iter().map(|r| r.metrics()[k].1).collect();
                let vals: Vec<f64> = ms
                    .iter()
                    .filter_map(|m| match m.value {
                        Some(v) => Some(v),
                        None if m.infinite > 0 => Some(f64::INFINITY),
                        None => None,
                    })
                    .collect();
                if !vals.is_empty() {
                    *slot = Metric::mean_of(&vals, ms[0].draws);
                }
            }
            let n = rs.len() as f64;
            means.steps = rs.iter().map(|r| r.steps).max().unwrap_or(0);
            means.best_step = rs.iter().map(|r| r.best_step).max().unwrap_or(0);
            means.wall_clock_s = rs.iter().map(|r| r.wall_clock_s).sum::<f64>() / n;
            let failed = rs.iter().filter(|r| r.failure.is_some()).count();
            Aggregate {
                domain: rs[0].domain,
                variant,
                runs: rs.len(),
                failed,
                means,
            }
        })
        .collect()
}
