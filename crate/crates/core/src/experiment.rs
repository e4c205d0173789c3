//! End-to-end experiment: learn prior and posterior per seed and `α`, then
//! evaluate every requested bound at every posterior checkpoint.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{grid_search, BoundInputs, BoundKind, BoundResult, ParamGrid};
use crate::divergence::{mmd_estimate, MmdConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, CheckpointSchedule, MlpArchitecture, TrainConfig};
use crate::risk::{estimate_oracle, estimate_risks, lambda_rho_oracle, OracleEstimates, OracleMode, RiskEstimates};
use crate::rng::derive_seed;
use crate::stochastic::{kl_isotropic, learn_prior_posterior, sample_posterior, PriorPosteriorConfig};
use crate::tasks::{build_synthetic_task, load_task, SyntheticSpec, TaskInstance};

/// Where the task comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    /// Drawn afresh for every experiment seed.
    Synthetic(SyntheticSpec),
    /// Manifest written by `save_task`; relative paths resolve against the
    /// config file's directory.
    Manifest(PathBuf),
}

/// A single `α` or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Alphas {
    One(f64),
    Many(Vec<f64>),
}

impl Alphas {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Alphas::One(a) => vec![*a],
            Alphas::Many(v) => v.clone(),
        }
    }
}

/// Prior and posterior optimizer settings plus the checkpoint schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub prior: TrainConfig,
    pub posterior: TrainConfig,
    pub schedule: CheckpointSchedule,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let d = PriorPosteriorConfig::default();
        Self {
            prior: d.prior,
            posterior: d.posterior,
            schedule: d.schedule,
        }
    }
}

fn default_arch() -> MlpArchitecture {
    MlpArchitecture::new(vec![2, 16, 16, 1], Activation::Tanh).expect("valid default")
}

fn default_alpha() -> Alphas {
    Alphas::One(0.3)
}

fn default_sigma() -> f64 {
    0.03
}

fn default_delta() -> f64 {
    0.05
}

fn default_pairs() -> usize {
    5
}

fn default_bounds() -> Vec<BoundKind> {
    vec![BoundKind::Mcallester, BoundKind::Mult, BoundKind::Iw, BoundKind::Mmd]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Experiment description, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSource,
    #[serde(default = "default_arch")]
    pub arch: MlpArchitecture,
    #[serde(default = "default_alpha")]
    pub alpha: Alphas,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_pairs")]
    pub posterior_pairs: usize,
    #[serde(default = "default_bounds")]
    pub bounds: Vec<BoundKind>,
    #[serde(default)]
    pub oracle_mode: bool,
    /// Per-bound grid overrides; bounds not listed use the defaults.
    #[serde(default)]
    pub grids: BTreeMap<BoundKind, ParamGrid>,
    #[serde(default)]
    pub mmd: MmdConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Config with defaults for everything but the task.
    pub fn new(task: TaskSource) -> Self {
        Self {
            task,
            arch: default_arch(),
            alpha: default_alpha(),
            sigma: default_sigma(),
            delta: default_delta(),
            posterior_pairs: default_pairs(),
            bounds: default_bounds(),
            oracle_mode: false,
            grids: BTreeMap::new(),
            mmd: MmdConfig::default(),
            training: TrainingConfig::default(),
            seeds: default_seeds(),
        }
    }

    /// Parse a config file, resolving the task path against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("parsing {}", path.display())))?;
        if let TaskSource::Manifest(p) = &mut cfg.task {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self, kind: BoundKind) -> ParamGrid {
        self.grids.get(&kind).cloned().unwrap_or_else(|| ParamGrid::default_for(kind))
    }

    /// Checks that do not need the task data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.bounds.is_empty() {
            return bad("no bounds requested".into());
        }
        if self.bounds.contains(&BoundKind::Add) && !self.oracle_mode {
            return bad("the add bound needs target labels; set oracle_mode to true".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let alphas = self.alpha.values();
        if alphas.is_empty() {
            return bad("no alpha values".into());
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return bad(format!("alpha must lie in [0,1), got {a}"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if self.posterior_pairs == 0 {
            return bad("posterior_pairs must be >= 1".into());
        }
        for (kind, grid) in &self.grids {
            let names: Vec<&str> = grid.params().iter().map(|(n, _)| n.as_str()).collect();
            if names != kind.param_names() {
                return bad(format!("grid for {kind} must list {:?}, got {names:?}", kind.param_names()));
            }
        }
        self.training.prior.validate()?;
        self.training.posterior.validate()?;
        Ok(())
    }

    /// Checks against the loaded task.
    fn validate_task(&self, task: &TaskInstance) -> Result<()> {
        let weighted = self.bounds.iter().find(|b| matches!(b, BoundKind::Iw | BoundKind::Mult));
        if let Some(b) = weighted {
            if task.source.weights().is_none() {
                return Err(Error::InvalidConfig(format!("the {b} bound needs importance weights on the source")));
            }
        }
        if self.oracle_mode && task.target_labeled_oracle.is_none() {
            return Err(Error::InvalidConfig("oracle_mode needs a labeled target sample".into()));
        }
        if task.source.dim() != self.arch.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "task has {} features but the network expects {}",
                task.source.dim(),
                self.arch.input_dim()
            )));
        }
        task.source.ensure_binary()
    }

    fn task_for_seed(&self, seed: u64) -> Result<TaskInstance> {
        match &self.task {
            TaskSource::Synthetic(spec) => {
                let mut spec = spec.clone();
                spec.seed = derive_seed(&[spec.seed, seed]);
                build_synthetic_task(&spec)
            }
            TaskSource::Manifest(p) => load_task(p),
        }
    }
}

/// Everything measured at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub alpha: f64,
    pub checkpoint_index: usize,
    pub seen_fraction: f64,
    pub step: usize,
    /// `|S ∖ S_α|`, the `m` used by every bound in this row.
    pub m_eval: usize,
    pub n_target: usize,
    pub kl: f64,
    pub mmd: Option<f64>,
    pub estimates: RiskEstimates,
    /// Target-label quantities, never fed to a non-oracle bound.
    pub oracle: Option<OracleEstimates>,
    pub bounds: Vec<BoundResult>,
}

/// Time spent on one `(seed, α)` job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobTiming {
    pub seed: u64,
    pub alpha: f64,
    pub seconds: f64,
}

/// Rows sorted by seed, `α` and checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    /// Excluded from emitted files so identical configs give identical bytes.
    #[serde(skip)]
    pub timings: Vec<JobTiming>,
}

struct Job<'a> {
    cfg: &'a ExperimentConfig,
    task: &'a TaskInstance,
    mmd: Option<f64>,
    seed: u64,
    alpha: f64,
}

impl Job<'_> {
    fn run(&self) -> Result<(Vec<ReportRow>, JobTiming)> {
        let start = Instant::now();
        let cfg = self.cfg;
        let pp_cfg = PriorPosteriorConfig {
            alpha: self.alpha,
            sigma: cfg.sigma,
            prior: TrainConfig {
                seed: derive_seed(&[self.seed, 1]),
                ..cfg.training.prior.clone()
            },
            posterior: TrainConfig {
                seed: derive_seed(&[self.seed, 2]),
                ..cfg.training.posterior.clone()
            },
            schedule: cfg.training.schedule.clone(),
            seed: self.seed,
        };
        let pair = learn_prior_posterior(&self.task.source, &cfg.arch, &pp_cfg)?;
        let eval = pair.eval_set();
        let mut rows = Vec::with_capacity(pair.posterior_checkpoints().len());
        for (idx, ck) in pair.posterior_checkpoints().iter().enumerate() {
            let row = self
                .checkpoint_row(&pair, idx, ck)
                .map_err(|e| e.context(format!("checkpoint {idx}")))?;
            rows.push(row);
        }
        debug_assert!(rows.iter().all(|r| r.m_eval == eval.len()));
        let timing = JobTiming {
            seed: self.seed,
            alpha: self.alpha,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok((rows, timing))
    }

    fn checkpoint_row(
        &self,
        pair: &crate::stochastic::PriorPosteriorPair,
        idx: usize,
        ck: &crate::stochastic::PosteriorCheckpoint,
    ) -> Result<ReportRow> {
        let cfg = self.cfg;
        let arch = pair.arch();
        let eval = pair.eval_set();
        let draws_seed = derive_seed(&[self.seed, self.alpha.to_bits(), idx as u64]);
        let draws = sample_posterior(&ck.distribution, cfg.posterior_pairs, draws_seed)?;
        let kl = kl_isotropic(&ck.distribution, pair.prior())?;
        let estimates = estimate_risks(arch, &draws, eval, &self.task.target_x)?;
        let oracle = match &self.task.target_labeled_oracle {
            Some(t) => Some(estimate_oracle(arch, &draws, t)?),
            None => None,
        };
        let lambda_rho = match (&self.task.target_labeled_oracle, cfg.bounds.contains(&BoundKind::Add)) {
            (Some(t), true) => {
                let mode = if cfg.oracle_mode { OracleMode::Enabled } else { OracleMode::Disabled };
                Some(lambda_rho_oracle(arch, &draws, eval, t, mode)?)
            }
            _ => None,
        };
        let inputs = BoundInputs {
            beta_inf: eval.weights().map(|_| self.task.beta_inf),
            mmd_value: self.mmd,
            lambda_rho,
            ..BoundInputs::new(eval.len(), self.task.target_x.len(), kl, cfg.delta, estimates.clone())
        };
        let bounds = cfg
            .bounds
            .iter()
            .map(|&b| grid_search(b, &inputs, &cfg.grid(b)).map_err(|e| e.context(format!("{b} bound"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReportRow {
            seed: self.seed,
            alpha: self.alpha,
            checkpoint_index: idx,
            seen_fraction: ck.seen_fraction,
            step: ck.step,
            m_eval: eval.len(),
            n_target: self.task.target_x.len(),
            kl,
            mmd: self.mmd,
            estimates,
            oracle,
            bounds,
        })
    }
}

/// Run every `(seed, α)` job. Errors carry the job and checkpoint.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let alphas = cfg.alpha.values();
    let tasks = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let task = cfg.task_for_seed(seed).map_err(|e| e.context(format!("seed {seed}: task")))?;
            cfg.validate_task(&task)?;
            // input-space MMD does not depend on the hypothesis: once per task
            let mmd = if cfg.bounds.contains(&BoundKind::Mmd) {
                let mmd_cfg = MmdConfig {
                    seed: derive_seed(&[cfg.mmd.seed, seed]),
                    ..cfg.mmd.clone()
                };
                let est = mmd_estimate(&task.source.to_unlabeled(), &task.target_x, &mmd_cfg)
                    .map_err(|e| e.context(format!("seed {seed}: mmd")))?;
                Some(est.value)
            } else {
                None
            };
            Ok((seed, task, mmd))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<Job> = tasks
        .iter()
        .flat_map(|(seed, task, mmd)| {
            alphas.iter().map(move |&alpha| Job {
                cfg,
                task,
                mmd: *mmd,
                seed: *seed,
                alpha,
            })
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|j| j.run().map_err(|e| e.context(format!("seed {} alpha {}", j.seed, j.alpha))))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        timings.push(t);
    }
    rows.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.checkpoint_index.cmp(&b.checkpoint_index))
    });
    Ok(RunReport { rows, timings })
}

/// Flat CSV record: one per `(row, bound)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub seed: u64,
    pub alpha: f64,
    pub checkpoint_index: usize,
    pub seen_fraction: f64,
    pub bound_name: BoundKind,
    pub bound_value: f64,
    pub param_json: String,
    pub delta_effective: f64,
    pub gibbs_source_risk: f64,
    pub gibbs_weighted_risk: Option<f64>,
    pub disagreement_source: f64,
    pub disagreement_target: f64,
    pub joint_error_source: f64,
    pub kl: f64,
    pub mmd: Option<f64>,
    pub oracle_target_gibbs_risk: Option<f64>,
    pub oracle_used: bool,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "seed",
    "alpha",
    "checkpoint_index",
    "seen_fraction",
    "bound_name",
    "bound_value",
    "param_json",
    "delta_effective",
    "gibbs_source_risk",
    "gibbs_weighted_risk",
    "disagreement_source",
    "disagreement_target",
    "joint_error_source",
    "kl",
    "mmd",
    "oracle_target_gibbs_risk",
    "oracle_used",
];

impl RunReport {
    pub fn csv_records(&self) -> Result<Vec<CsvRecord>> {
        let mut out = Vec::new();
        for r in &self.rows {
            for b in &r.bounds {
                out.push(CsvRecord {
                    seed: r.seed,
                    alpha: r.alpha,
                    checkpoint_index: r.checkpoint_index,
                    seen_fraction: r.seen_fraction,
                    bound_name: b.name,
                    bound_value: b.value,
                    param_json: serde_json::to_string(&b.params)?,
                    delta_effective: b.delta_effective,
                    gibbs_source_risk: r.estimates.gibbs_risk.value,
                    gibbs_weighted_risk: r.estimates.gibbs_weighted_risk.map(|e| e.value),
                    disagreement_source: r.estimates.disagreement_source.value,
                    disagreement_target: r.estimates.disagreement_target.value,
                    joint_error_source: r.estimates.joint_error_source.value,
                    kl: r.kl,
                    mmd: r.mmd,
                    oracle_target_gibbs_risk: r.oracle.as_ref().map(|o| o.target_gibbs_risk.value),
                    oracle_used: b.oracle_used,
                });
            }
        }
        Ok(out)
    }
}

/// Output format for [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Write the report. An empty report gives a header-only CSV.
pub fn emit<W: Write>(report: &RunReport, format: Format, mut out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for rec in report.csv_records()? {
                w.serialize(rec)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

/// Parse CSV written by [`emit`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CsvRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::InvalidArgument(format!("unexpected report header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Minimum of one bound over the checkpoints of a `(seed, α)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub alpha: f64,
    pub bound_name: BoundKind,
    pub min_bound: f64,
    pub argmin_checkpoint: usize,
    pub oracle_target_risk_at_argmin: Option<f64>,
    pub best_oracle_target_risk: Option<f64>,
}

/// Per `(seed, α, bound)`: smallest bound value over checkpoints (first on
/// ties), where it happened, and the oracle target risk there and at its best.
pub fn report_summary(records: &[CsvRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, u64, BoundKind), Vec<&CsvRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.seed, r.alpha.to_bits(), r.bound_name)).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|r| r.checkpoint_index);
            let best = g.iter().fold(g[0], |b, r| if r.bound_value < b.bound_value { r } else { b });
            let best_oracle = g
                .iter()
                .filter_map(|r| r.oracle_target_gibbs_risk)
                .reduce(f64::min);
            SummaryRow {
                seed: best.seed,
                alpha: best.alpha,
                bound_name: best.bound_name,
                min_bound: best.bound_value,
                argmin_checkpoint: best.checkpoint_index,
                oracle_target_risk_at_argmin: best.oracle_target_gibbs_risk,
                best_oracle_target_risk: best_oracle,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.bound_name.cmp(&b.bound_name))
    });
    out
}

/// Fixed-width text table of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
    let mut s = format!(
        "{:>6} {:>6} {:>10} {:>12} {:>10} {:>14} {:>14}\n",
        "seed", "alpha", "bound", "min_bound", "argmin", "target@argmin", "best_target"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>6} {:>10} {:>12.6} {:>10} {:>14} {:>14}\n",
            r.seed,
            r.alpha,
            r.bound_name.as_str(),
            r.min_bound,
            r.argmin_checkpoint,
            opt(r.oracle_target_risk_at_argmin),
            opt(r.best_oracle_target_risk)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(idx: usize, value: f64, oracle: Option<f64>) -> CsvRecord {
        CsvRecord {
            seed: 0,
            alpha: 0.3,
            checkpoint_index: idx,
            seen_fraction: 0.1 * idx as f64,
            bound_name: BoundKind::Iw,
            bound_value: value,
            param_json: "{\"gamma\":0.5}".into(),
            delta_effective: 0.05 / 7.0,
            gibbs_source_risk: 0.1,
            gibbs_weighted_risk: Some(0.12),
            disagreement_source: 0.01,
            disagreement_target: 0.02,
            joint_error_source: 0.05,
            kl: 3.0,
            mmd: None,
            oracle_target_gibbs_risk: oracle,
            oracle_used: false,
        }
    }

    #[test]
    fn summary_of_single_row_is_that_row() {
        let s = report_summary(&[record(4, 0.7, Some(0.2))]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].min_bound, 0.7);
        assert_eq!(s[0].argmin_checkpoint, 4);
        assert_eq!(s[0].oracle_target_risk_at_argmin, Some(0.2));
        assert_eq!(s[0].best_oracle_target_risk, Some(0.2));
    }

    #[test]
    fn increasing_bound_has_argmin_first() {
        let recs: Vec<_> = (0..5).map(|i| record(i, 0.5 + i as f64, Some(0.3 - 0.01 * i as f64))).collect();
        let s = report_summary(&recs);
        assert_eq!(s[0].argmin_checkpoint, 0);
        assert_eq!(s[0].oracle_target_risk_at_argmin, Some(0.3));
        assert_eq!(s[0].best_oracle_target_risk, Some(0.26));
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        emit(&RunReport { rows: vec![], timings: vec![] }, Format::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), CSV_COLUMNS.join(",") + "\n");
        assert!(read_csv(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn add_without_oracle_is_rejected() {
        let mut cfg = ExperimentConfig::new(TaskSource::Synthetic(SyntheticSpec::two_blobs(100, 100, 0)));
        cfg.bounds = vec![BoundKind::Add];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.oracle_mode = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn config_json_defaults_and_alpha_forms() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"task": {"manifest": "t/manifest.json"}, "alpha": [0, 0.3]}"#).unwrap();
        assert_eq!(cfg.alpha.values(), vec![0.0, 0.3]);
        assert_eq!(cfg.sigma, 0.03);
        assert_eq!(cfg.delta, 0.05);
        assert_eq!(cfg.posterior_pairs, 5);
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.training.prior.epochs, 1);
        assert_eq!(cfg.training.posterior.epochs, 5);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"task": {"manifest": "x"}, "alhpa": 0.3}"#).is_err());
    }
}
