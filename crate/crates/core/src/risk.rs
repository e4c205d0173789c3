//! Empirical estimators of every risk-like quantity the bounds consume.
//!
//! Posterior expectations are Monte-Carlo averages over the draws of a
//! [`PosteriorSampleSet`]. Pair-based quantities (disagreement, joint error)
//! use the `P` consecutive pairs only, not all cross pairings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, UnlabeledSample};
use crate::error::{Error, Result};
use crate::nn::{self, MlpArchitecture, WeightVector};
use crate::stochastic::PosteriorSampleSet;

/// Monte-Carlo average with its standard error over draws or pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Estimate {
    pub value: f64,
    pub mc_std: f64,
}

impl Estimate {
    /// Mean and `std/√n` (sample std, zero for a single value).
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let value = values.iter().sum::<f64>() / n;
        let mc_std = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { value, mc_std }
    }
}

/// Whether quantities that need target labels may be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    #[default]
    Disabled,
    Enabled,
}

/// Estimable quantities: everything here uses source labels and unlabeled
/// target inputs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RiskEstimates {
    /// Gibbs risk on the bound-evaluation sample.
    pub gibbs_risk: Estimate,
    /// Importance-weighted Gibbs risk (requires source weights).
    pub gibbs_weighted_risk: Option<Estimate>,
    pub disagreement_source: Estimate,
    pub disagreement_target: Estimate,
    pub joint_error_source: Estimate,
}

/// Quantities that need target labels. Never an input to estimable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OracleEstimates {
    pub target_gibbs_risk: Estimate,
    pub joint_error_target: Estimate,
}

fn check_dim(arch: &MlpArchitecture, dim: usize) -> Result<()> {
    if dim != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: dim,
        });
    }
    Ok(())
}

/// Predicted labels of every draw on every row.
fn predictions(arch: &MlpArchitecture, samples: &PosteriorSampleSet, features: &[f64]) -> Result<Vec<Vec<u32>>> {
    samples
        .draws()
        .par_iter()
        .map(|w| nn::predict_rows(arch, w, features))
        .collect()
}

fn error_rate(pred: &[u32], labels: &[u32]) -> f64 {
    let wrong = pred.iter().zip(labels).filter(|(p, y)| p != y).count();
    wrong as f64 / labels.len() as f64
}

fn weighted_error_rate(pred: &[u32], labels: &[u32], weights: &[f64]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(labels)
        .zip(weights)
        .filter(|((p, y), _)| p != y)
        .map(|(_, w)| w)
        .sum();
    total / labels.len() as f64
}

fn disagreement_rate(a: &[u32], b: &[u32]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

fn joint_error_rate(a: &[u32], b: &[u32], labels: &[u32]) -> f64 {
    let both = a
        .iter()
        .zip(b)
        .zip(labels)
        .filter(|((p, q), y)| p != y && q != y)
        .count();
    both as f64 / labels.len() as f64
}

fn per_pair(preds: &[Vec<u32>], f: impl Fn(&[u32], &[u32]) -> f64) -> Estimate {
    let vals: Vec<f64> = preds.chunks_exact(2).map(|p| f(&p[0], &p[1])).collect();
    Estimate::from_values(&vals)
}

fn labeled_input(arch: &MlpArchitecture, data: &LabeledSample, what: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData(what));
    }
    check_dim(arch, data.dim())?;
    data.ensure_binary()
}

/// `(1/m) Σ 1[h(x_i) ≠ y_i]`.
pub fn empirical_risk(arch: &MlpArchitecture, w: &WeightVector, data: &LabeledSample) -> Result<f64> {
    labeled_input(arch, data, "risk sample")?;
    Ok(error_rate(&nn::predict_rows(arch, w, data.features())?, data.labels()))
}

/// `(1/m) Σ w(x_i)·1[h(x_i) ≠ y_i]`.
pub fn weighted_empirical_risk(arch: &MlpArchitecture, w: &WeightVector, data: &LabeledSample) -> Result<f64> {
    labeled_input(arch, data, "risk sample")?;
    let weights = data.weights().ok_or(Error::MissingInput {
        bound: "weighted risk",
        field: "importance weights",
    })?;
    let pred = nn::predict_rows(arch, w, data.features())?;
    Ok(weighted_error_rate(&pred, data.labels(), weights))
}

/// Posterior-averaged 0-1 risk over all draws.
pub fn gibbs_risk(arch: &MlpArchitecture, samples: &PosteriorSampleSet, data: &LabeledSample) -> Result<Estimate> {
    labeled_input(arch, data, "risk sample")?;
    let preds = predictions(arch, samples, data.features())?;
    let vals: Vec<f64> = preds.iter().map(|p| error_rate(p, data.labels())).collect();
    Ok(Estimate::from_values(&vals))
}

/// Posterior-averaged importance-weighted risk.
pub fn gibbs_weighted_risk(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    data: &LabeledSample,
) -> Result<Estimate> {
    labeled_input(arch, data, "risk sample")?;
    let weights = data.weights().ok_or(Error::MissingInput {
        bound: "weighted risk",
        field: "importance weights",
    })?;
    let preds = predictions(arch, samples, data.features())?;
    let vals: Vec<f64> = preds
        .iter()
        .map(|p| weighted_error_rate(p, data.labels(), weights))
        .collect();
    Ok(Estimate::from_values(&vals))
}

/// Mean over pairs of the fraction of points where the two draws disagree.
pub fn expected_disagreement(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    data: &UnlabeledSample,
) -> Result<Estimate> {
    if data.is_empty() {
        return Err(Error::EmptyData("disagreement sample"));
    }
    check_dim(arch, data.dim())?;
    let preds = predictions(arch, samples, data.features())?;
    Ok(per_pair(&preds, disagreement_rate))
}

/// Mean over pairs of the fraction of points where both draws err.
pub fn expected_joint_error(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    data: &LabeledSample,
) -> Result<Estimate> {
    labeled_input(arch, data, "joint-error sample")?;
    let preds = predictions(arch, samples, data.features())?;
    Ok(per_pair(&preds, |a, b| joint_error_rate(a, b, data.labels())))
}

/// `|d̂_T − d̂_S|`.
pub fn domain_disagreement(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    source_x: &UnlabeledSample,
    target_x: &UnlabeledSample,
) -> Result<f64> {
    let ds = expected_disagreement(arch, samples, source_x)?;
    let dt = expected_disagreement(arch, samples, target_x)?;
    Ok((dt.value - ds.value).abs())
}

/// `λ_ρ = |ê_T − ê_S|`, which needs target labels. Refuses unless oracle mode
/// is enabled.
pub fn lambda_rho_oracle(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    source: &LabeledSample,
    target_labeled: &LabeledSample,
    mode: OracleMode,
) -> Result<f64> {
    if mode != OracleMode::Enabled {
        return Err(Error::OracleRefused("lambda_rho needs target labels"));
    }
    let es = expected_joint_error(arch, samples, source)?;
    let et = expected_joint_error(arch, samples, target_labeled)?;
    Ok((et.value - es.value).abs())
}

/// All estimable quantities in one pass: predictions are computed once per
/// draw per sample.
pub fn estimate_risks(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    eval: &LabeledSample,
    target_x: &UnlabeledSample,
) -> Result<RiskEstimates> {
    labeled_input(arch, eval, "evaluation sample")?;
    if target_x.is_empty() {
        return Err(Error::EmptyData("target sample"));
    }
    check_dim(arch, target_x.dim())?;
    let src = predictions(arch, samples, eval.features())?;
    let tgt = predictions(arch, samples, target_x.features())?;
    let risks: Vec<f64> = src.iter().map(|p| error_rate(p, eval.labels())).collect();
    let weighted = eval.weights().map(|w| {
        let vals: Vec<f64> = src
            .iter()
            .map(|p| weighted_error_rate(p, eval.labels(), w))
            .collect();
        Estimate::from_values(&vals)
    });
    Ok(RiskEstimates {
        gibbs_risk: Estimate::from_values(&risks),
        gibbs_weighted_risk: weighted,
        disagreement_source: per_pair(&src, disagreement_rate),
        disagreement_target: per_pair(&tgt, disagreement_rate),
        joint_error_source: per_pair(&src, |a, b| joint_error_rate(a, b, eval.labels())),
    })
}

/// Target-label quantities, reported for analysis only.
pub fn estimate_oracle(
    arch: &MlpArchitecture,
    samples: &PosteriorSampleSet,
    target_labeled: &LabeledSample,
) -> Result<OracleEstimates> {
    labeled_input(arch, target_labeled, "oracle target sample")?;
    let preds = predictions(arch, samples, target_labeled.features())?;
    let risks: Vec<f64> = preds.iter().map(|p| error_rate(p, target_labeled.labels())).collect();
    Ok(OracleEstimates {
        target_gibbs_risk: Estimate::from_values(&risks),
        joint_error_target: per_pair(&preds, |a, b| joint_error_rate(a, b, target_labeled.labels())),
    })
}
