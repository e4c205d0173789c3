//! Domain-adaptation task construction and dataset files.
//!
//! Three constructions are provided, each satisfying covariate shift with
//! overlap and attaching exact importance weights to the source rows:
//!
//! * [`build_mixture_task`]: two base datasets mixed per class with a
//!   class-dependent share; the complement of the source is the target.
//! * [`build_one_sided_task`]: part of a shared pool joins a source-only pool.
//! * [`build_synthetic_task`]: Gaussian mixtures in the input space with a
//!   shared logistic label rule and closed-form density ratio.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, UnlabeledSample};
use crate::divergence::{mixture_weights, one_sided_weight, MixtureTaskSpec};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// `P(y = 1 | x) = sigmoid(sharpness · (direction · x + offset))`, identical in
/// both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub direction: Vec<f64>,
    pub offset: f64,
    /// `f64::INFINITY` gives a deterministic half-space rule.
    pub sharpness: f64,
}

impl LabelRule {
    pub fn prob_positive(&self, x: &[f64]) -> f64 {
        let z: f64 = self.direction.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offset;
        if self.sharpness.is_infinite() {
            return if z > 0.0 { 1.0 } else { 0.0 };
        }
        1.0 / (1.0 + (-self.sharpness * z).exp())
    }

    fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> u32 {
        u32::from(rng.random::<f64>() < self.prob_positive(x))
    }
}

/// Gaussian-mixture covariate shift: both domains mix the same isotropic
/// components with different weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub sd: f64,
    pub source_weights: Vec<f64>,
    pub target_weights: Vec<f64>,
    pub label_rule: LabelRule,
    pub n_source: usize,
    pub n_target: usize,
    /// Size of the separately drawn labeled target sample.
    pub n_oracle: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two blobs in the plane. The source favors the left blob 0.8 : 0.2, the
    /// target 0.2 : 0.8, so `β∞ = 4`. Labels follow a soft diagonal rule with
    /// roughly 3% Bayes error.
    pub fn two_blobs(n_source: usize, n_target: usize, seed: u64) -> Self {
        Self {
            dim: 2,
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            sd: 1.0,
            source_weights: vec![0.8, 0.2],
            target_weights: vec![0.2, 0.8],
            label_rule: LabelRule {
                direction: vec![1.0, 1.0],
                offset: -0.5,
                sharpness: 10.0,
            },
            n_source,
            n_target,
            n_oracle: 10_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if self.dim == 0 || k == 0 {
            return Err(Error::InvalidArgument("synthetic task needs dim >= 1 and a component".into()));
        }
        if let Some(m) = self.means.iter().find(|m| m.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: m.len(),
            });
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component means must be finite".into()));
        }
        if !(self.sd.is_finite() && self.sd > 0.0) {
            return Err(Error::InvalidArgument(format!("sd must be > 0, got {}", self.sd)));
        }
        for (name, w) in [("source", &self.source_weights), ("target", &self.target_weights)] {
            if w.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: w.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} mixing weights must be >= 0 with positive sum")));
            }
        }
        for (j, (&s, &t)) in self.source_weights.iter().zip(&self.target_weights).enumerate() {
            if s == 0.0 && t > 0.0 {
                return Err(Error::UnboundedRatio(format!(
                    "component {j} has target weight {t} but no source mass"
                )));
            }
        }
        if self.label_rule.direction.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.label_rule.direction.len(),
            });
        }
        if self.label_rule.sharpness.is_nan() || self.label_rule.sharpness <= 0.0 {
            return Err(Error::InvalidArgument("label sharpness must be > 0".into()));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::InvalidArgument("sample sizes must be >= 1".into()));
        }
        Ok(())
    }

    fn normalized(w: &[f64]) -> Vec<f64> {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    /// `T(x) / S(x)`, evaluated in log space.
    pub fn density_ratio(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                -d2 / (2.0 * self.sd * self.sd)
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mix = |w: &[f64]| -> f64 {
            Self::normalized(w)
                .iter()
                .zip(&logs)
                .map(|(p, l)| p * (l - top).exp())
                .sum()
        };
        mix(&self.target_weights) / mix(&self.source_weights)
    }

    /// `max_k t_k / s_k`. A ratio of mixtures never exceeds its largest
    /// component ratio, and approaches it far out along any direction in which
    /// that component's mean is extreme.
    pub fn beta_inf(&self) -> f64 {
        let s = Self::normalized(&self.source_weights);
        let t = Self::normalized(&self.target_weights);
        s.iter()
            .zip(&t)
            .filter(|(_, t)| **t > 0.0)
            .map(|(s, t)| t / s)
            .fold(0.0, f64::max)
    }

    fn draw<R: Rng>(&self, mixing: &[f64], n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<u32>)> {
        let pick = WeightedIndex::new(mixing).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mean = &self.means[pick.sample(rng)];
            let start = features.len();
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + self.sd * z);
            }
            labels.push(self.label_rule.sample(&features[start..], rng));
        }
        Ok((features, labels))
    }
}

/// Settings of a one-sided task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedSpec {
    pub move_fraction: f64,
    pub seed: u64,
}

/// How a task was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Mixture { spec: MixtureTaskSpec, seed: u64 },
    OneSided(OneSidedSpec),
    Synthetic(SyntheticSpec),
}

/// A constructed task. Target labels, when present, are kept apart from the
/// unlabeled target features and only feed oracle quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub source: LabeledSample,
    pub target_x: UnlabeledSample,
    pub target_labeled_oracle: Option<LabeledSample>,
    pub spec: TaskSpec,
    pub beta_inf: f64,
}

/// `[origin-0, origin-1]` row counts per class.
pub fn class_counts(pool0: &LabeledSample, pool1: &LabeledSample, num_classes: usize) -> Result<Vec<[usize; 2]>> {
    let mut counts = vec![[0usize; 2]; num_classes];
    for (o, pool) in [pool0, pool1].into_iter().enumerate() {
        for &y in pool.labels() {
            let c = y as usize;
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {y} outside {num_classes} declared classes"
                )));
            }
            counts[c][o] += 1;
        }
    }
    Ok(counts)
}

/// Per class and origin, a uniformly random subset of the realized size goes
/// to the source and the rest to the target. Labels are binarized.
pub fn build_mixture_task(
    pool0: &LabeledSample,
    pool1: &LabeledSample,
    spec: &MixtureTaskSpec,
    seed: u64,
) -> Result<TaskInstance> {
    spec.validate()?;
    if pool0.dim() != pool1.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool0.dim(),
            got: pool1.dim(),
        });
    }
    let counts = class_counts(pool0, pool1, spec.num_classes)?;
    if counts != spec.per_class_counts {
        return Err(Error::InvalidArgument(format!(
            "pool class counts {counts:?} differ from spec {:?}",
            spec.per_class_counts
        )));
    }
    let table = mixture_weights(spec)?;
    let mut rng = stream_rng(seed, Stream::TaskSplit);
    let mut source_parts = Vec::new();
    let mut target_parts = Vec::new();
    for c in 0..spec.num_classes {
        for (o, pool) in [pool0, pool1].into_iter().enumerate() {
            let mut idx: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels()[i] as usize == c).collect();
            idx.shuffle(&mut rng);
            let (n_src, _) = spec.cell_counts(c, o);
            let w = table.lookup(c, o).expect("table covers every cell");
            let (src, tgt) = idx.split_at(n_src);
            source_parts.push(relabel(pool, src, o as u8, spec, Some(w))?);
            target_parts.push(relabel(pool, tgt, o as u8, spec, None)?);
        }
    }
    let source = concat_all(source_parts)?;
    let target = concat_all(target_parts)?;
    Ok(TaskInstance {
        target_x: target.to_unlabeled(),
        target_labeled_oracle: Some(target),
        source,
        spec: TaskSpec::Mixture {
            spec: spec.clone(),
            seed,
        },
        beta_inf: table.max_weight(),
    })
}

fn relabel(
    pool: &LabeledSample,
    idx: &[usize],
    origin: u8,
    spec: &MixtureTaskSpec,
    weight: Option<f64>,
) -> Result<LabeledSample> {
    let part = pool.subset(idx);
    let labels = part.labels().iter().map(|&y| spec.binary_label(y)).collect();
    let out = LabeledSample::new(part.dim(), part.features().to_vec(), labels)?.with_origin(vec![origin; idx.len()])?;
    match weight {
        Some(w) => out.with_weights(vec![w; idx.len()]),
        None => Ok(out),
    }
}

fn concat_all(parts: Vec<LabeledSample>) -> Result<LabeledSample> {
    let mut it = parts.into_iter();
    let first = it.next().ok_or(Error::EmptyData("task parts"))?;
    it.try_fold(first, |acc, p| acc.concat(&p))
}

/// `move_fraction` of the shared pool joins the source-only pool to form the
/// source; the rest of the shared pool is the target. Source-only rows lie
/// outside the target support and get weight 0 (origin 0); moved rows get the
/// exact ratio `#S / #moved` (origin 1). Labels must already be binary.
pub fn build_one_sided_task(
    pool_source_only: &LabeledSample,
    pool_shared: &LabeledSample,
    move_fraction: f64,
    seed: u64,
) -> Result<TaskInstance> {
    if !(move_fraction > 0.0 && move_fraction < 1.0) {
        return Err(Error::OverlapViolated(format!(
            "move fraction {move_fraction} must lie strictly inside (0,1)"
        )));
    }
    pool_source_only.ensure_binary()?;
    pool_shared.ensure_binary()?;
    let n = pool_shared.len();
    let n_target = ((1.0 - move_fraction) * n as f64).round() as usize;
    let n_moved = n - n_target;
    if n_moved == 0 || n_target == 0 {
        return Err(Error::OverlapViolated(format!(
            "moving {move_fraction} of {n} shared rows leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::TaskSplit));
    let (moved, rest) = idx.split_at(n_moved);
    let n_source = pool_source_only.len() + n_moved;
    let w = n_source as f64 / n_moved as f64;
    let only = pool_source_only
        .subset(&(0..pool_source_only.len()).collect::<Vec<_>>())
        .with_origin(vec![0; pool_source_only.len()])?
        .with_weights(vec![0.0; pool_source_only.len()])?;
    let moved = pool_shared
        .subset(moved)
        .with_origin(vec![1; n_moved])?
        .with_weights(vec![w; n_moved])?;
    let source = if only.is_empty() { moved } else { only.concat(&moved)? };
    let target = pool_shared.subset(rest).with_origin(vec![1; n_target])?;
    Ok(TaskInstance {
        target_x: target.to_unlabeled(),
        target_labeled_oracle: Some(target),
        source,
        spec: TaskSpec::OneSided(OneSidedSpec { move_fraction, seed }),
        beta_inf: w,
    })
}

/// Nominal one-sided weight from the construction's counts; equals the exact
/// ratio whenever `#moved / #T = f / (1 − f)`.
pub fn nominal_one_sided_weight(move_fraction: f64, source_total: usize, target_total: usize) -> Result<f64> {
    one_sided_weight(move_fraction, source_total, target_total)
}

/// Draw source, unlabeled target and an independent labeled target sample.
pub fn build_synthetic_task(spec: &SyntheticSpec) -> Result<TaskInstance> {
    spec.validate()?;
    let s = SyntheticSpec::normalized(&spec.source_weights);
    let t = SyntheticSpec::normalized(&spec.target_weights);
    let (xs, ys) = spec.draw(&s, spec.n_source, &mut stream_rng(spec.seed, Stream::SyntheticSource))?;
    let weights: Vec<f64> = xs.chunks_exact(spec.dim).map(|x| spec.density_ratio(x)).collect();
    let source = LabeledSample::new(spec.dim, xs, ys)?.with_weights(weights)?;
    let (xt, _) = spec.draw(&t, spec.n_target, &mut stream_rng(spec.seed, Stream::SyntheticTarget))?;
    let oracle = if spec.n_oracle > 0 {
        let (xo, yo) = spec.draw(&t, spec.n_oracle, &mut stream_rng(spec.seed, Stream::SyntheticOracle))?;
        Some(LabeledSample::new(spec.dim, xo, yo)?)
    } else {
        None
    };
    Ok(TaskInstance {
        source,
        target_x: UnlabeledSample::new(spec.dim, xt)?,
        target_labeled_oracle: oracle,
        spec: TaskSpec::Synthetic(spec.clone()),
        beta_inf: spec.beta_inf(),
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

struct Columns {
    dim: usize,
    label: Option<usize>,
    origin: Option<usize>,
    weight: Option<usize>,
}

fn columns(path: &Path, header: &csv::StringRecord) -> Result<Columns> {
    let mut dim = 0;
    while header.get(dim) == Some(format!("f{dim}").as_str()) {
        dim += 1;
    }
    if dim == 0 {
        return Err(parse_err(path, 1, "header must start with f0"));
    }
    let mut cols = Columns {
        dim,
        label: None,
        origin: None,
        weight: None,
    };
    for (i, name) in header.iter().enumerate().skip(dim) {
        let slot = match name {
            "label" => &mut cols.label,
            "origin" => &mut cols.origin,
            "weight" => &mut cols.weight,
            other => return Err(parse_err(path, 1, format!("unexpected column {other:?}"))),
        };
        if slot.replace(i).is_some() {
            return Err(parse_err(path, 1, format!("duplicate column {name:?}")));
        }
    }
    Ok(cols)
}

struct Parsed {
    dim: usize,
    features: Vec<f64>,
    labels: Option<Vec<u32>>,
    origin: Option<Vec<u8>>,
    weights: Option<Vec<f64>>,
}

fn parse_csv<R: Read>(path: &Path, input: R, num_classes: Option<u32>) -> Result<Parsed> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let cols = columns(path, &header)?;
    let mut out = Parsed {
        dim: cols.dim,
        features: Vec::new(),
        labels: cols.label.map(|_| Vec::new()),
        origin: cols.origin.map(|_| Vec::new()),
        weights: cols.weight.map(|_| Vec::new()),
    };
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        for j in 0..cols.dim {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("feature f{j}: cannot parse {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("feature f{j} is not finite")));
            }
            out.features.push(v);
        }
        if let (Some(c), Some(labels)) = (cols.label, out.labels.as_mut()) {
            let y: u32 = rec[c]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("label: cannot parse {:?}", &rec[c])))?;
            if let Some(k) = num_classes {
                if y >= k {
                    return Err(parse_err(path, line, format!("label {y} outside {k} declared classes")));
                }
            }
            labels.push(y);
        }
        if let (Some(c), Some(origin)) = (cols.origin, out.origin.as_mut()) {
            let o: u8 = rec[c]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("origin: cannot parse {:?}", &rec[c])))?;
            origin.push(o);
        }
        if let (Some(c), Some(weights)) = (cols.weight, out.weights.as_mut()) {
            let w: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("weight: cannot parse {:?}", &rec[c])))?;
            if !(w.is_finite() && w >= 0.0) {
                return Err(parse_err(path, line, format!("weight {w} must be finite and >= 0")));
            }
            weights.push(w);
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).context(format!("opening {}", path.display())))
}

/// Read a labeled CSV with header `f0,…,f{d−1},label[,origin][,weight]`.
/// With `num_classes` set, labels must lie in `0..num_classes`.
pub fn load_dataset(path: &Path, num_classes: Option<u32>) -> Result<LabeledSample> {
    read_dataset(path, open(path)?, num_classes)
}

/// [`load_dataset`] over any reader; `path` only labels diagnostics.
pub fn read_dataset<R: Read>(path: &Path, input: R, num_classes: Option<u32>) -> Result<LabeledSample> {
    let p = parse_csv(path, input, num_classes)?;
    let labels = p.labels.ok_or_else(|| parse_err(path, 1, "missing label column"))?;
    if labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let mut s = LabeledSample::new(p.dim, p.features, labels)?;
    if let Some(o) = p.origin {
        s = s.with_origin(o)?;
    }
    if let Some(w) = p.weights {
        s = s.with_weights(w)?;
    }
    Ok(s)
}

/// Read an unlabeled CSV with header `f0,…,f{d−1}[,origin]`. A label column,
/// if present, is rejected so target labels cannot leak in by accident.
pub fn load_unlabeled(path: &Path) -> Result<UnlabeledSample> {
    let p = parse_csv(path, open(path)?, None)?;
    if p.labels.is_some() {
        return Err(parse_err(path, 1, "unlabeled sample must not carry a label column"));
    }
    if p.features.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let s = UnlabeledSample::new(p.dim, p.features)?;
    match p.origin {
        Some(o) => s.with_origin(o),
        None => Ok(s),
    }
}

fn header(dim: usize, extra: &[&str]) -> Vec<String> {
    (0..dim)
        .map(|j| format!("f{j}"))
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

/// Write a labeled sample; optional columns appear when present.
pub fn write_dataset<W: Write>(out: W, sample: &LabeledSample) -> Result<()> {
    let mut extra = vec!["label"];
    if sample.origin().is_some() {
        extra.push("origin");
    }
    if sample.weights().is_some() {
        extra.push("weight");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(sample.dim(), &extra))?;
    for (i, row) in sample.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(sample.labels()[i].to_string());
        if let Some(o) = sample.origin() {
            rec.push(o[i].to_string());
        }
        if let Some(ws) = sample.weights() {
            rec.push(ws[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unlabeled<W: Write>(out: W, sample: &UnlabeledSample) -> Result<()> {
    let extra: &[&str] = if sample.origin().is_some() { &["origin"] } else { &[] };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(sample.dim(), extra))?;
    for (i, row) in sample.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        if let Some(o) = sample.origin() {
            rec.push(o[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Files of a saved task, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFiles {
    pub source: PathBuf,
    pub target_x: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_oracle: Option<PathBuf>,
}

/// Manifest JSON written next to the task CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub spec: TaskSpec,
    pub beta_inf: f64,
    pub files: TaskFiles,
}

impl TaskManifest {
    pub fn seed(&self) -> u64 {
        match &self.spec {
            TaskSpec::Mixture { seed, .. } => *seed,
            TaskSpec::OneSided(s) => s.seed,
            TaskSpec::Synthetic(s) => s.seed,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))
}

/// Write `source.csv`, `target_x.csv`, `target_oracle.csv` (if labels exist)
/// and `manifest.json` into `dir`.
pub fn save_task(task: &TaskInstance, dir: &Path) -> Result<TaskManifest> {
    std::fs::create_dir_all(dir)?;
    let files = TaskFiles {
        source: "source.csv".into(),
        target_x: "target_x.csv".into(),
        target_oracle: task.target_labeled_oracle.as_ref().map(|_| "target_oracle.csv".into()),
    };
    write_dataset(create(&dir.join(&files.source))?, &task.source)?;
    write_unlabeled(create(&dir.join(&files.target_x))?, &task.target_x)?;
    if let (Some(o), Some(p)) = (&task.target_labeled_oracle, &files.target_oracle) {
        write_dataset(create(&dir.join(p))?, o)?;
    }
    let manifest = TaskManifest {
        spec: task.spec.clone(),
        beta_inf: task.beta_inf,
        files,
    };
    let mut f = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(manifest)
}

/// Load a task from its manifest; file paths resolve against the manifest's
/// directory.
pub fn load_task(manifest_path: &Path) -> Result<TaskInstance> {
    let manifest: TaskManifest = serde_json::from_reader(open(manifest_path)?)
        .map_err(|e| Error::from(e).context(format!("reading {}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let source = load_dataset(&base.join(&manifest.files.source), None)?;
    if source.weights().is_none() {
        return Err(Error::InvalidConfig(format!(
            "{} carries no weight column",
            manifest.files.source.display()
        )));
    }
    source.ensure_binary()?;
    let target_x = load_unlabeled(&base.join(&manifest.files.target_x))?;
    let target_labeled_oracle = match &manifest.files.target_oracle {
        Some(p) => Some(load_dataset(&base.join(p), Some(2))?),
        None => None,
    };
    Ok(TaskInstance {
        source,
        target_x,
        target_labeled_oracle,
        spec: manifest.spec,
        beta_inf: manifest.beta_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(per_class: usize, classes: u32, offset: f64) -> LabeledSample {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                rows.push(vec![offset + c as f64, i as f64]);
                labels.push(c);
            }
        }
        LabeledSample::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn mixture_partition_and_weights() {
        let (p0, p1) = (pool(120, 10, 0.0), pool(120, 10, 100.0));
        let spec = MixtureTaskSpec::digit_schedule(class_counts(&p0, &p1, 10).unwrap());
        let task = build_mixture_task(&p0, &p1, &spec, 3).unwrap();
        let target = task.target_labeled_oracle.as_ref().unwrap();
        assert_eq!(task.source.len() + target.len(), 2400);
        assert_eq!(task.beta_inf, 11.0);
        let max_w = task.source.weights().unwrap().iter().copied().fold(0.0, f64::max);
        assert_eq!(max_w, task.beta_inf);
        // rows are unique, so the union is exactly the two pools
        let mut all: Vec<(i64, i64)> = task
            .source
            .rows()
            .chain(target.rows())
            .map(|r| (r[0] as i64, r[1] as i64))
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 2400);
        // per-cell frequencies reproduce the weight table
        let table = mixture_weights(&spec).unwrap();
        for c in 0..10usize {
            for o in 0..2u8 {
                let in_cell = |s: &LabeledSample| {
                    s.rows()
                        .zip(s.origin().unwrap())
                        .filter(|(r, &oo)| oo == o && (r[0] - if o == 1 { 100.0 } else { 0.0 }) as usize == c)
                        .count()
                };
                let (ns, nt) = (in_cell(&task.source), in_cell(target));
                assert_eq!((ns, nt), spec.cell_counts(c, o as usize));
                let w = (nt as f64 * task.source.len() as f64) / (ns as f64 * target.len() as f64);
                assert_eq!(w, table.lookup(c, o as usize).unwrap());
            }
        }
        assert!(task.source.labels().iter().all(|&y| y <= 1));
    }

    #[test]
    fn mixture_even_share_is_unweighted() {
        let (p0, p1) = (pool(10, 4, 0.0), pool(10, 4, 100.0));
        let mut spec = MixtureTaskSpec::digit_schedule(class_counts(&p0, &p1, 4).unwrap());
        spec.source_share = vec![0.5; 4];
        let task = build_mixture_task(&p0, &p1, &spec, 0).unwrap();
        assert!(task.source.weights().unwrap().iter().all(|&w| w == 1.0));
        assert_eq!(task.source.len(), task.target_x.len());
        spec.source_share[2] = 1.0;
        assert!(matches!(build_mixture_task(&p0, &p1, &spec, 0), Err(Error::OverlapViolated(_))));
    }

    #[test]
    fn one_sided_counts_and_weight() {
        let only = LabeledSample::from_rows(&vec![vec![9.0]; 30], vec![0; 30]).unwrap();
        let shared = LabeledSample::from_rows(&(0..100).map(|i| vec![i as f64]).collect::<Vec<_>>(), vec![1; 100]).unwrap();
        let task = build_one_sided_task(&only, &shared, 0.2, 1).unwrap();
        assert_eq!(task.target_x.len(), 80);
        assert_eq!(task.source.len(), 50);
        let w = task.source.weights().unwrap();
        assert_eq!(w.iter().filter(|&&v| v == 0.0).count(), 30);
        assert_eq!(task.beta_inf, 50.0 / 20.0);
        assert_eq!(task.beta_inf, nominal_one_sided_weight(0.2, 50, 80).unwrap());
        // weighted mass on the shared part equals the source size
        let mass: f64 = w.iter().sum();
        assert!((mass - 50.0).abs() < 1e-12);
        assert!(build_one_sided_task(&only, &shared, 1.0, 1).is_err());
        assert!(build_one_sided_task(&only, &shared, 0.0, 1).is_err());

        let even = build_one_sided_task(&only.subset(&[]), &shared, 0.5, 1).unwrap();
        assert_eq!(even.beta_inf, 1.0);
    }

    #[test]
    fn synthetic_identical_mixtures_have_unit_weights() {
        let mut spec = SyntheticSpec::two_blobs(200, 50, 5);
        spec.target_weights = spec.source_weights.clone();
        let task = build_synthetic_task(&spec).unwrap();
        assert!(task.source.weights().unwrap().iter().all(|&w| (w - 1.0).abs() < 1e-15));
        assert_eq!(task.beta_inf, 1.0);
    }

    #[test]
    fn synthetic_ratio_supremum() {
        let spec = SyntheticSpec {
            dim: 1,
            means: vec![vec![-2.0], vec![2.0]],
            sd: 1.0,
            source_weights: vec![0.9, 0.1],
            target_weights: vec![0.1, 0.9],
            label_rule: LabelRule {
                direction: vec![1.0],
                offset: 0.0,
                sharpness: f64::INFINITY,
            },
            n_source: 10,
            n_target: 10,
            n_oracle: 0,
            seed: 0,
        };
        assert!((spec.beta_inf() - 9.0).abs() < 1e-12);
        let grid_max = (0..=20_000)
            .map(|i| spec.density_ratio(&[-20.0 + i as f64 * 0.002]))
            .fold(0.0, f64::max);
        assert!(grid_max <= 9.0 + 1e-12);
        assert!(grid_max > 9.0 - 1e-6);
        let mut bad = spec.clone();
        bad.source_weights = vec![1.0, 0.0];
        assert!(matches!(build_synthetic_task(&bad), Err(Error::UnboundedRatio(_))));
    }

    #[test]
    fn synthetic_is_covariate_shift() {
        let mut spec = SyntheticSpec::two_blobs(50, 50, 1);
        spec.label_rule.sharpness = f64::INFINITY;
        let task = build_synthetic_task(&spec).unwrap();
        let oracle = task.target_labeled_oracle.unwrap();
        for s in [&task.source, &oracle] {
            for (x, &y) in s.rows().zip(s.labels()) {
                assert_eq!(spec.label_rule.prob_positive(x) as u32, y);
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::two_blobs(100, 100, 9);
        assert_eq!(build_synthetic_task(&spec).unwrap(), build_synthetic_task(&spec).unwrap());
    }

    #[test]
    fn csv_roundtrip_and_diagnostics() {
        let s = LabeledSample::from_rows(&[vec![0.1, -2.5e-7], vec![1.0 / 3.0, 4.0], vec![5.0, 6.0]], vec![7, 0, 1])
            .unwrap()
            .with_origin(vec![0, 1, 1])
            .unwrap()
            .with_weights(vec![0.0, 1.5, 2.0 / 3.0])
            .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,label,origin,weight\n"));
        let p = Path::new("mem.csv");
        assert_eq!(read_dataset(p, buf.as_slice(), Some(10)).unwrap(), s);

        let bad = "f0,label\n1.0,0\n2.0,11\n";
        let err = read_dataset(p, bad.as_bytes(), Some(10)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let nan = "f0,label\nNaN,0\n";
        assert!(matches!(read_dataset(p, nan.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
        let short = "f0,f1,label\n1.0,0\n";
        assert!(matches!(read_dataset(p, short.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
        let junk = "f0,label,colour\n1,0,red\n";
        assert!(read_dataset(p, junk.as_bytes(), None).is_err());
    }

    #[test]
    fn task_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let task = build_synthetic_task(&SyntheticSpec {
            n_oracle: 40,
            ..SyntheticSpec::two_blobs(30, 20, 2)
        })
        .unwrap();
        let manifest = save_task(&task, dir.path()).unwrap();
        assert_eq!(manifest.seed(), 2);
        let back = load_task(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, task);
    }
}
