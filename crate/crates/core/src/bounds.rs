//! Target-risk bounds and union-bound corrected grid search over their free
//! parameters.
//!
//! Every evaluation returns an ordered term breakdown whose sum is the bound
//! value. Values are never clipped to `[0, 1]`; a vacuous bound is reported
//! as-is.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskEstimates;

/// The five bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Mcallester,
    Mult,
    Add,
    Iw,
    Mmd,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::Mcallester,
        BoundKind::Mult,
        BoundKind::Add,
        BoundKind::Iw,
        BoundKind::Mmd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Mcallester => "mcallester",
            BoundKind::Mult => "mult",
            BoundKind::Add => "add",
            BoundKind::Iw => "iw",
            BoundKind::Mmd => "mmd",
        }
    }

    /// Free-parameter names, in grid order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            BoundKind::Mcallester | BoundKind::Iw | BoundKind::Mmd => &["gamma"],
            BoundKind::Mult => &["a", "b"],
            BoundKind::Add => &["omega", "gamma"],
        }
    }

    /// Whether the bound needs target labels.
    pub fn needs_oracle(self) -> bool {
        self == BoundKind::Add
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bound {s:?}")))
    }
}

/// Everything the bounds consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Size of the labeled bound-evaluation sample.
    pub m_source: usize,
    /// Size of the unlabeled target sample.
    pub n_target: usize,
    pub kl: f64,
    pub delta: f64,
    pub estimates: RiskEstimates,
    pub beta_inf: Option<f64>,
    pub mmd_value: Option<f64>,
    /// Uniform bound `K` on the kernel.
    pub kernel_bound: f64,
    /// Oracle `λ_ρ`; only ever set when target labels are deliberately used.
    pub lambda_rho: Option<f64>,
}

impl BoundInputs {
    pub fn new(m_source: usize, n_target: usize, kl: f64, delta: f64, estimates: RiskEstimates) -> Self {
        Self {
            m_source,
            n_target,
            kl,
            delta,
            estimates,
            beta_inf: None,
            mmd_value: None,
            kernel_bound: 1.0,
            lambda_rho: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.kl.is_finite() && self.kl >= 0.0) {
            return Err(Error::InvalidArgument(format!("kl must be finite and >= 0, got {}", self.kl)));
        }
        if self.m_source == 0 || self.n_target == 0 {
            return Err(Error::InvalidArgument("sample sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Common size for bounds that draw equally sized source and target samples.
    fn m_joint(&self) -> f64 {
        self.m_source.min(self.n_target) as f64
    }

    fn beta(&self, bound: &'static str) -> Result<f64> {
        match self.beta_inf {
            Some(b) if b.is_finite() && b > 0.0 => Ok(b),
            Some(b) => Err(Error::InvalidArgument(format!("beta_inf must be > 0, got {b}"))),
            None => Err(Error::MissingInput { bound, field: "beta_inf" }),
        }
    }
}

/// One labeled part of a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub value: f64,
}

/// A single bound evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub terms: Vec<Term>,
}

impl Evaluation {
    fn from_terms(terms: Vec<(&str, f64)>) -> Self {
        let terms: Vec<Term> = terms
            .into_iter()
            .map(|(label, value)| Term {
                label: label.to_owned(),
                value,
            })
            .collect();
        Self {
            value: terms.iter().map(|t| t.value).sum(),
            terms,
        }
    }
}

/// `a / (1 − e^{−a})`, with a series fallback near zero.
pub fn convexity_constant(a: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::InvalidArgument(format!("convexity parameter must be > 0, got {a}")));
    }
    if a < 1e-8 {
        return Ok(1.0 + a / 2.0 + a * a / 12.0);
    }
    Ok(a / -(-a).exp_m1())
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0,1), got {v}")))
    }
}

fn pac_bayes_kl_term(kl: f64, log_term: f64, gamma: f64, m: f64) -> f64 {
    (kl + log_term) / (2.0 * gamma * (1.0 - gamma) * m)
}

/// `(1/γ)·R̂ + (KL + ln(1/δ)) / (2γ(1−γ)m)`.
pub fn mcallester_bound(inputs: &BoundInputs, gamma: f64) -> Result<Evaluation> {
    inputs.validate()?;
    unit_interval("gamma", gamma)?;
    let m = inputs.m_source as f64;
    Ok(Evaluation::from_terms(vec![
        ("risk", inputs.estimates.gibbs_risk.value / gamma),
        ("kl", pac_bayes_kl_term(inputs.kl, (1.0 / inputs.delta).ln(), gamma, m)),
    ]))
}

/// Multiplicative bound. The out-of-support term is zero under overlap.
pub fn mult_bound(inputs: &BoundInputs, a: f64, b: f64) -> Result<Evaluation> {
    inputs.validate()?;
    let beta = inputs.beta("mult")?;
    let (ap, bp) = (convexity_constant(a)?, convexity_constant(b)?);
    let (m, n) = (inputs.m_source as f64, inputs.n_target as f64);
    let est = &inputs.estimates;
    let complexity = ap / (n * a) + bp * beta / (m * b);
    Ok(Evaluation::from_terms(vec![
        ("risk", bp * beta * est.joint_error_source.value),
        ("kl", complexity * (2.0 * inputs.kl + (2.0 / inputs.delta).ln())),
        ("domain", ap * 0.5 * est.disagreement_target.value),
        ("constant", 0.0),
    ]))
}

/// Additive bound with domain disagreement. Needs the oracle `λ_ρ`.
pub fn add_bound(inputs: &BoundInputs, omega: f64, gamma: f64) -> Result<Evaluation> {
    inputs.validate()?;
    let lambda = inputs
        .lambda_rho
        .ok_or(Error::OracleRefused("add bound needs lambda_rho from target labels"))?;
    let wp = convexity_constant(omega)?;
    let gp = convexity_constant(2.0 * gamma)?;
    let m = inputs.m_joint();
    let est = &inputs.estimates;
    let dis = (est.disagreement_target.value - est.disagreement_source.value).abs();
    Ok(Evaluation::from_terms(vec![
        ("risk", wp * est.gibbs_risk.value),
        ("kl", (wp / omega + gp / gamma) * (inputs.kl + (3.0 / inputs.delta).ln()) / m),
        ("domain", gp * 0.5 * dis),
        ("lambda_rho", lambda),
        ("constant", 0.5 * (gp - 1.0)),
    ]))
}

/// Importance-weighted bound:
/// `(1/γ)·R̂^w + β∞·(KL + ln(1/δ)) / (2γ(1−γ)m)`.
pub fn iw_bound(inputs: &BoundInputs, gamma: f64) -> Result<Evaluation> {
    inputs.validate()?;
    unit_interval("gamma", gamma)?;
    let beta = inputs.beta("iw")?;
    let weighted = inputs.estimates.gibbs_weighted_risk.ok_or(Error::MissingInput {
        bound: "iw",
        field: "gibbs_weighted_risk",
    })?;
    let m = inputs.m_source as f64;
    Ok(Evaluation::from_terms(vec![
        ("risk", weighted.value / gamma),
        ("kl", beta * pac_bayes_kl_term(inputs.kl, (1.0 / inputs.delta).ln(), gamma, m)),
    ]))
}

/// PAC-Bayes plus MMD between input marginals and its finite-sample term.
pub fn mmd_bound(inputs: &BoundInputs, gamma: f64) -> Result<Evaluation> {
    inputs.validate()?;
    unit_interval("gamma", gamma)?;
    let mmd = inputs.mmd_value.ok_or(Error::MissingInput {
        bound: "mmd",
        field: "mmd_value",
    })?;
    let k = inputs.kernel_bound;
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel bound must be > 0, got {k}")));
    }
    let m = inputs.m_joint();
    let d = inputs.delta;
    Ok(Evaluation::from_terms(vec![
        ("risk", inputs.estimates.gibbs_risk.value / gamma),
        ("kl", pac_bayes_kl_term(inputs.kl, (2.0 / d).ln(), gamma, m)),
        ("domain", mmd),
        ("constant", 2.0 * (k / m).sqrt() * (2.0 + (4.0 / d).ln().sqrt())),
    ]))
}

/// Evaluate `kind` at a parameter tuple in [`BoundKind::param_names`] order.
pub fn evaluate(kind: BoundKind, inputs: &BoundInputs, params: &[f64]) -> Result<Evaluation> {
    let want = kind.param_names().len();
    if params.len() != want {
        return Err(Error::DimensionMismatch {
            expected: want,
            got: params.len(),
        });
    }
    match kind {
        BoundKind::Mcallester => mcallester_bound(inputs, params[0]),
        BoundKind::Mult => mult_bound(inputs, params[0], params[1]),
        BoundKind::Add => add_bound(inputs, params[0], params[1]),
        BoundKind::Iw => iw_bound(inputs, params[0]),
        BoundKind::Mmd => mmd_bound(inputs, params[0]),
    }
}

/// Candidate values `1e-3, 5e-3, 1e-2, …, 5e4, 1e5` for the
/// `a, b, ω, γ` parameters of the mult and add bounds.
pub fn scale_values() -> Vec<f64> {
    let mut v = Vec::with_capacity(17);
    for e in -3..=5 {
        v.push(10f64.powi(e));
        if e < 5 {
            v.push(5.0 * 10f64.powi(e));
        }
    }
    v
}

/// `γ` candidates for the McAllester, IW and MMD bounds.
pub fn gamma_values() -> Vec<f64> {
    vec![1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 9.9e-1]
}

/// Candidate values per free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    params: Vec<(String, Vec<f64>)>,
}

impl ParamGrid {
    /// Each list is sorted ascending and deduplicated.
    pub fn new(params: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidArgument("grid has no parameters".into()));
        }
        let mut params = params;
        for (name, vals) in &mut params {
            if vals.is_empty() {
                return Err(Error::InvalidArgument(format!("grid for {name} is empty")));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("grid for {name} has non-finite values")));
            }
            vals.sort_by(f64::total_cmp);
            vals.dedup();
        }
        Ok(Self { params })
    }

    /// Default grid for a bound.
    pub fn default_for(kind: BoundKind) -> Self {
        let values = match kind {
            BoundKind::Mult | BoundKind::Add => scale_values(),
            _ => gamma_values(),
        };
        Self {
            params: kind
                .param_names()
                .iter()
                .map(|n| (n.to_string(), values.clone()))
                .collect(),
        }
    }

    pub fn params(&self) -> &[(String, Vec<f64>)] {
        &self.params
    }

    /// Number of grid points `k`.
    pub fn size(&self) -> usize {
        self.params.iter().map(|(_, v)| v.len()).product()
    }

    /// All tuples in lexicographic order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for (_, vals) in &self.params {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Grid-searched bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub name: BoundKind,
    pub value: f64,
    pub params: BTreeMap<String, f64>,
    /// `δ / k`, the confidence actually used at every grid point.
    pub delta_effective: f64,
    pub terms: Vec<Term>,
    pub oracle_used: bool,
}

/// Evaluate `kind` at every grid point with `δ/k` and return the minimum.
/// Ties go to the lexicographically smallest parameter tuple.
pub fn grid_search(kind: BoundKind, inputs: &BoundInputs, grid: &ParamGrid) -> Result<BoundResult> {
    let names: Vec<&str> = grid.params.iter().map(|(n, _)| n.as_str()).collect();
    if names != kind.param_names() {
        return Err(Error::InvalidArgument(format!(
            "{kind} bound expects parameters {:?}, grid has {names:?}",
            kind.param_names()
        )));
    }
    let k = grid.size();
    let mut corrected = inputs.clone();
    corrected.delta = inputs.delta / k as f64;
    let points = grid.points();
    let evals = points
        .par_iter()
        .map(|p| evaluate(kind, &corrected, p))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.value < evals[best].value {
            best = i;
        }
    }
    let eval = &evals[best];
    Ok(BoundResult {
        name: kind,
        value: eval.value,
        params: names
            .iter()
            .zip(&points[best])
            .map(|(n, v)| (n.to_string(), *v))
            .collect(),
        delta_effective: corrected.delta,
        terms: eval.terms.clone(),
        oracle_used: kind.needs_oracle(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::Estimate;
    use approx::assert_relative_eq;

    fn est(v: f64) -> Estimate {
        Estimate { value: v, mc_std: 0.0 }
    }

    fn inputs(m: usize, n: usize, kl: f64, delta: f64) -> BoundInputs {
        BoundInputs::new(m, n, kl, delta, RiskEstimates::default())
    }

    #[test]
    fn convexity_constant_values() {
        assert_relative_eq!(convexity_constant(1e-12).unwrap(), 1.0, epsilon = 1e-11);
        assert!((convexity_constant(1.0).unwrap() - 1.581977).abs() < 1e-6);
        assert!((convexity_constant(5.0).unwrap() - 5.033918).abs() < 1e-6);
        let mut last = 1.0;
        for i in 1..200 {
            let v = convexity_constant(i as f64 * 0.05).unwrap();
            assert!(v > last);
            last = v;
        }
        // series and closed form agree across the switch point
        assert_relative_eq!(convexity_constant(1.1e-8).unwrap(), 1.0 + 0.55e-8, epsilon = 1e-15);
        assert!(convexity_constant(0.0).is_err());
        assert!(convexity_constant(-1.0).is_err());
    }

    #[test]
    fn mcallester_worked_example() {
        let mut inp = inputs(10_000, 10_000, 10.0, 0.05);
        inp.estimates.gibbs_risk = est(0.1);
        let v = mcallester_bound(&inp, 0.5).unwrap().value;
        assert!((v - 0.202599).abs() < 1e-6);
        assert!(mcallester_bound(&inp, 1.0).is_err());
        assert!(mcallester_bound(&inp, 0.0).is_err());
        // with zero risk γ = 1/2 beats γ = 1/4
        inp.estimates.gibbs_risk = est(0.0);
        assert!(mcallester_bound(&inp, 0.5).unwrap().value <= mcallester_bound(&inp, 0.25).unwrap().value);
        // bound → 0 as m grows with zero risk and KL
        let big = inputs(usize::MAX / 4, 1, 0.0, 0.05);
        assert!(mcallester_bound(&big, 0.5).unwrap().value < 1e-15);
    }

    #[test]
    fn mult_worked_example_and_linearity() {
        let mut inp = inputs(1000, 1000, 0.0, 0.05);
        inp.beta_inf = Some(1.0);
        let v = mult_bound(&inp, 1.0, 1.0).unwrap().value;
        assert!((v - 0.011672).abs() < 1e-6);
        inp.estimates.joint_error_source = est(0.07);
        let r1 = mult_bound(&inp, 2.0, 3.0).unwrap().terms[0].value;
        inp.beta_inf = Some(2.0);
        let r2 = mult_bound(&inp, 2.0, 3.0).unwrap().terms[0].value;
        assert_eq!(r2, 2.0 * r1);
        inp.beta_inf = None;
        assert!(matches!(mult_bound(&inp, 1.0, 1.0), Err(Error::MissingInput { .. })));
    }

    #[test]
    fn add_worked_example_and_limits() {
        let mut inp = inputs(1000, 1000, 0.0, 0.05);
        assert!(matches!(add_bound(&inp, 1.0, 1.0), Err(Error::OracleRefused(_))));
        inp.lambda_rho = Some(0.0);
        let v = add_bound(&inp, 1.0, 1.0).unwrap().value;
        // independent evaluation of the closed form
        let e = |x: f64| x / (1.0 - (-x).exp());
        let want = (e(1.0) + e(2.0)) * 60f64.ln() / 1000.0 + 0.5 * (e(2.0) - 1.0);
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.672465).abs() < 1e-6);
        // γ → 0: γ' → 1 and the constant term vanishes
        let tiny = add_bound(&inp, 1.0, 1e-10).unwrap();
        assert!(tiny.terms.last().unwrap().value.abs() < 1e-9);
        // unequal sizes use the smaller sample
        let mut unequal = inp.clone();
        unequal.n_target = 5000;
        assert_eq!(add_bound(&unequal, 1.0, 1.0).unwrap().value, v);
    }

    #[test]
    fn iw_worked_example_and_reduction() {
        let mut inp = inputs(10_000, 10_000, 10.0, 0.05);
        inp.beta_inf = Some(11.0);
        inp.estimates.gibbs_weighted_risk = Some(est(0.1));
        let v = iw_bound(&inp, 0.5).unwrap().value;
        assert!((v - 0.228590).abs() < 1e-6);
        // β∞ = 1 with unit weights collapses to the McAllester bound
        inp.beta_inf = Some(1.0);
        inp.estimates.gibbs_risk = est(0.1);
        for g in gamma_values() {
            assert_eq!(iw_bound(&inp, g).unwrap().value, mcallester_bound(&inp, g).unwrap().value);
        }
        let mut last = 0.0;
        for b in [1.0, 2.0, 5.0, 11.0] {
            inp.beta_inf = Some(b);
            let v = iw_bound(&inp, 0.3).unwrap().value;
            assert!(v > last);
            last = v;
        }
        inp.estimates.gibbs_weighted_risk = None;
        assert!(iw_bound(&inp, 0.5).is_err());
    }

    #[test]
    fn mmd_worked_example_and_linearity() {
        let mut inp = inputs(10_000, 10_000, 0.0, 0.05);
        inp.mmd_value = Some(0.0);
        let v0 = mmd_bound(&inp, 0.5).unwrap().value;
        let want = 40f64.ln() / 5000.0 + 0.02 * (2.0 + 80f64.ln().sqrt());
        assert!((v0 - want).abs() < 1e-15);
        assert!((v0 - 0.082604).abs() < 1e-6);
        inp.mmd_value = Some(0.3);
        let v1 = mmd_bound(&inp, 0.5).unwrap().value;
        assert!((v1 - v0 - 0.3).abs() < 1e-15);
        inp.mmd_value = None;
        assert!(mmd_bound(&inp, 0.5).is_err());
    }

    #[test]
    fn default_grid_sizes() {
        assert_eq!(scale_values().len(), 17);
        assert_eq!(scale_values()[0], 1e-3);
        assert_eq!(*scale_values().last().unwrap(), 1e5);
        assert_eq!(ParamGrid::default_for(BoundKind::Mult).size(), 289);
        assert_eq!(ParamGrid::default_for(BoundKind::Add).size(), 289);
        assert_eq!(ParamGrid::default_for(BoundKind::Iw).size(), 7);
        assert_eq!(ParamGrid::default_for(BoundKind::Mmd).size(), 7);
        assert_eq!(ParamGrid::default_for(BoundKind::Mult).points().len(), 289);
    }

    #[test]
    fn singleton_grid_is_direct_evaluation() {
        let mut inp = inputs(500, 700, 3.0, 0.05);
        inp.estimates.gibbs_risk = est(0.2);
        let grid = ParamGrid::new(vec![("gamma".into(), vec![0.4])]).unwrap();
        let r = grid_search(BoundKind::Mcallester, &inp, &grid).unwrap();
        assert_eq!(r.delta_effective, 0.05);
        assert_eq!(r.value, mcallester_bound(&inp, 0.4).unwrap().value);
        assert!(!r.oracle_used);
    }

    #[test]
    fn grid_uses_corrected_delta_and_minimum() {
        let mut inp = inputs(500, 700, 3.0, 0.05);
        inp.estimates.gibbs_risk = est(0.2);
        let grid = ParamGrid::new(vec![("gamma".into(), vec![0.9, 0.1, 0.5])]).unwrap();
        let r = grid_search(BoundKind::Mcallester, &inp, &grid).unwrap();
        assert!((r.delta_effective - 0.016667).abs() < 1e-6);
        let mut corrected = inp.clone();
        corrected.delta = 0.05 / 3.0;
        let min = [0.1, 0.5, 0.9]
            .iter()
            .map(|g| mcallester_bound(&corrected, *g).unwrap().value)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.value, min);
        let wrong = ParamGrid::new(vec![("a".into(), vec![1.0])]).unwrap();
        assert!(grid_search(BoundKind::Mcallester, &inp, &wrong).is_err());
    }

    #[test]
    fn ties_resolve_to_smallest_tuple() {
        let grid = ParamGrid::new(vec![("a".into(), vec![3.0, 1.0]), ("b".into(), vec![2.0, 1.0, 1.0])]).unwrap();
        assert_eq!(grid.size(), 4);
        assert_eq!(
            grid.points(),
            vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![3.0, 1.0], vec![3.0, 2.0]]
        );
        // the kl term of the McAllester bound is symmetric in γ ↔ 1 − γ, so
        // with zero risk γ = 0.25 and γ = 0.75 tie exactly
        let inp = inputs(100, 100, 1.0, 0.05);
        let grid = ParamGrid::new(vec![("gamma".into(), vec![0.75, 0.25])]).unwrap();
        let r = grid_search(BoundKind::Mcallester, &inp, &grid).unwrap();
        let mut c = inp.clone();
        c.delta = 0.025;
        assert_eq!(
            mcallester_bound(&c, 0.25).unwrap().value,
            mcallester_bound(&c, 0.75).unwrap().value
        );
        assert_eq!(r.params["gamma"], 0.25);
    }

    #[test]
    fn bound_kind_names() {
        for k in BoundKind::ALL {
            assert_eq!(k.as_str().parse::<BoundKind>().unwrap(), k);
        }
        assert!("vc".parse::<BoundKind>().is_err());
        assert_eq!(serde_json::to_string(&BoundKind::Iw).unwrap(), "\"iw\"");
    }
}
