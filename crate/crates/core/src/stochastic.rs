//! Gaussian distributions over weight space and the data-dependent
//! prior/posterior learning procedure.
//!
//! The sample `S` is split into `S_α` and `S ∖ S_α`. A fresh network is trained
//! for one epoch on `S_α` to get the prior mean; training then continues from
//! there on all of `S`, and each checkpoint becomes a posterior mean. Bounds
//! must only ever be evaluated on `S ∖ S_α`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::nn::{self, CheckpointSchedule, MlpArchitecture, TrainConfig, WeightVector};
use crate::rng::{stream_rng, Stream};

/// `N(mean, σ²I)` with a single scalar standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    mean: WeightVector,
    sigma: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: WeightVector, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        if mean.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        Ok(Self { mean, sigma })
    }

    pub fn mean(&self) -> &WeightVector {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density up to nothing (fully normalized).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let var = self.sigma * self.sigma;
        let sq: f64 = x
            .iter()
            .zip(self.mean.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - sq / (2.0 * var)
    }
}

/// KL(ρ ‖ π) between isotropic Gaussians:
/// `d·[ln(σ_π/σ_ρ) + σ_ρ²/(2σ_π²) − ½] + ‖μ_ρ − μ_π‖²/(2σ_π²)`.
pub fn kl_isotropic(rho: &IsotropicGaussian, pi: &IsotropicGaussian) -> Result<f64> {
    if rho.dim() != pi.dim() {
        return Err(Error::DimensionMismatch {
            expected: pi.dim(),
            got: rho.dim(),
        });
    }
    let d = rho.dim() as f64;
    let var_pi = pi.sigma * pi.sigma;
    let mean_term = rho.mean.squared_distance(&pi.mean) / (2.0 * var_pi);
    if rho.sigma == pi.sigma {
        return Ok(mean_term);
    }
    let ratio = rho.sigma / pi.sigma;
    let spread = d * (-ratio.ln() + 0.5 * ratio * ratio - 0.5);
    Ok((spread + mean_term).max(0.0))
}

/// `2P` posterior draws; draws `(2i, 2i+1)` form pair `i`.
#[derive(Debug, Clone)]
pub struct PosteriorSampleSet {
    draws: Vec<WeightVector>,
    source: IsotropicGaussian,
    seed: u64,
}

impl PosteriorSampleSet {
    /// Build from explicit draws (must be an even, non-zero count).
    pub fn from_draws(draws: Vec<WeightVector>, source: IsotropicGaussian, seed: u64) -> Result<Self> {
        if draws.is_empty() || !draws.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "need a positive even number of draws, got {}",
                draws.len()
            )));
        }
        if let Some(d) = draws.iter().find(|d| d.len() != source.dim()) {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                got: d.len(),
            });
        }
        Ok(Self { draws, source, seed })
    }

    pub fn draws(&self) -> &[WeightVector] {
        &self.draws
    }

    pub fn num_pairs(&self) -> usize {
        self.draws.len() / 2
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&WeightVector, &WeightVector)> + '_ {
        self.draws.chunks_exact(2).map(|p| (&p[0], &p[1]))
    }

    pub fn source(&self) -> &IsotropicGaussian {
        &self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw `2·pairs` weight vectors `μ + σz`, `z ~ N(0, I)`.
pub fn sample_posterior(g: &IsotropicGaussian, pairs: usize, seed: u64) -> Result<PosteriorSampleSet> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("pairs must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Posterior);
    let draws = (0..2 * pairs)
        .map(|_| {
            let v = g
                .mean
                .values()
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + g.sigma * z
                })
                .collect();
            WeightVector::from_vec_unchecked(v)
        })
        .collect();
    Ok(PosteriorSampleSet {
        draws,
        source: g.clone(),
        seed,
    })
}

/// Settings for [`learn_prior_posterior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPosteriorConfig {
    /// Fraction of `S` used to train the prior mean, in `[0, 1)`.
    pub alpha: f64,
    pub sigma: f64,
    /// Prior training (one epoch by default).
    pub prior: TrainConfig,
    /// Posterior training on all of `S` (five epochs by default).
    pub posterior: TrainConfig,
    pub schedule: CheckpointSchedule,
    /// Seeds the split and the network initialization.
    pub seed: u64,
}

impl Default for PriorPosteriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            sigma: 0.03,
            prior: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            posterior: TrainConfig::default(),
            schedule: CheckpointSchedule::default(),
            seed: 0,
        }
    }
}

/// One posterior snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorCheckpoint {
    pub seen_fraction: f64,
    pub step: usize,
    pub distribution: IsotropicGaussian,
}

/// Prior, posterior trajectory, and the held-out evaluation set.
#[derive(Debug, Clone)]
pub struct PriorPosteriorPair {
    arch: MlpArchitecture,
    alpha: f64,
    prior: IsotropicGaussian,
    posteriors: Vec<PosteriorCheckpoint>,
    prior_indices: Vec<usize>,
    eval_indices: Vec<usize>,
    eval_set: LabeledSample,
    posterior_steps: usize,
}

impl PriorPosteriorPair {
    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn prior(&self) -> &IsotropicGaussian {
        &self.prior
    }

    pub fn posterior_checkpoints(&self) -> &[PosteriorCheckpoint] {
        &self.posteriors
    }

    /// Row indices of `S_α` in the original sample (ascending).
    pub fn prior_indices(&self) -> &[usize] {
        &self.prior_indices
    }

    /// Row indices of `S ∖ S_α` (ascending).
    pub fn eval_indices(&self) -> &[usize] {
        &self.eval_indices
    }

    /// `S ∖ S_α`, the only sample bounds may be evaluated on.
    pub fn eval_set(&self) -> &LabeledSample {
        &self.eval_set
    }

    /// Optimizer steps taken while training the posterior.
    pub fn posterior_steps(&self) -> usize {
        self.posterior_steps
    }

    /// Persist as a directory: `prior.ckpt`, `posterior_NNN.ckpt`,
    /// `split_indices.txt` (rows of `S_α`, one per line) and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let prior_seen = if self.prior_indices.is_empty() { 0.0 } else { 1.0 };
        nn::write_checkpoint(
            BufWriter::new(File::create(dir.join("prior.ckpt"))?),
            &self.arch,
            prior_seen,
            self.prior.mean(),
        )?;
        for (i, p) in self.posteriors.iter().enumerate() {
            nn::write_checkpoint(
                BufWriter::new(File::create(dir.join(format!("posterior_{i:03}.ckpt")))?),
                &self.arch,
                p.seen_fraction,
                p.distribution.mean(),
            )?;
        }
        let mut idx = String::new();
        for i in &self.prior_indices {
            idx.push_str(&i.to_string());
            idx.push('\n');
        }
        fs::write(dir.join("split_indices.txt"), idx)?;
        let meta = PairMeta {
            alpha: self.alpha,
            sigma: self.prior.sigma(),
            num_posteriors: self.posteriors.len(),
            posterior_steps: self.posterior_steps,
            steps: self.posteriors.iter().map(|p| p.step).collect(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Inverse of [`save`](Self::save); `sample` must be the original `S`.
    pub fn load(dir: &Path, sample: &LabeledSample) -> Result<Self> {
        let meta: PairMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let read = |name: String| -> Result<(MlpArchitecture, f64, WeightVector)> {
            nn::read_checkpoint(BufReader::new(File::open(dir.join(&name))?))
                .map_err(|e| e.context(name))
        };
        let (arch, _, prior_mean) = read("prior.ckpt".into())?;
        let prior = IsotropicGaussian::new(prior_mean, meta.sigma)?;
        let mut posteriors = Vec::with_capacity(meta.num_posteriors);
        for i in 0..meta.num_posteriors {
            let (a, seen, w) = read(format!("posterior_{i:03}.ckpt"))?;
            if a != arch {
                return Err(Error::Checkpoint(format!("posterior {i} architecture differs from prior")));
            }
            posteriors.push(PosteriorCheckpoint {
                seen_fraction: seen,
                step: meta.steps.get(i).copied().unwrap_or(0),
                distribution: IsotropicGaussian::new(w, meta.sigma)?,
            });
        }
        let path = dir.join("split_indices.txt");
        let text = fs::read_to_string(&path)?;
        let mut in_prior = vec![false; sample.len()];
        for (line_no, line) in text.lines().enumerate() {
            let i: usize = line.trim().parse().map_err(|_| Error::Parse {
                path: path.clone(),
                line: line_no + 1,
                msg: format!("bad index {line:?}"),
            })?;
            if i >= sample.len() || in_prior[i] {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: line_no + 1,
                    msg: format!("index {i} out of range or repeated"),
                });
            }
            in_prior[i] = true;
        }
        let prior_indices: Vec<usize> = (0..sample.len()).filter(|&i| in_prior[i]).collect();
        let eval_indices: Vec<usize> = (0..sample.len()).filter(|&i| !in_prior[i]).collect();
        Ok(Self {
            eval_set: sample.subset(&eval_indices),
            arch,
            alpha: meta.alpha,
            prior,
            posteriors,
            prior_indices,
            eval_indices,
            posterior_steps: meta.posterior_steps,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    alpha: f64,
    sigma: f64,
    num_posteriors: usize,
    posterior_steps: usize,
    steps: Vec<usize>,
}

/// Split `0..m` into `(S_α, S ∖ S_α)` index sets with `|S_α| = ⌊αm⌋`.
pub fn split_indices(m: usize, alpha: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0,1), got {alpha}")));
    }
    let k = (alpha * m as f64).floor() as usize;
    if alpha > 0.0 && k == 0 {
        return Err(Error::InvalidArgument(format!(
            "alpha={alpha} leaves an empty prior split for m={m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let (head, tail) = order.split_at(k);
    let mut prior = head.to_vec();
    let mut eval = tail.to_vec();
    prior.sort_unstable();
    eval.sort_unstable();
    Ok((prior, eval))
}

/// Learn a data-dependent prior and the posterior trajectory.
///
/// With `alpha = 0` the prior is centered at the fresh initialization.
pub fn learn_prior_posterior(
    sample: &LabeledSample,
    arch: &MlpArchitecture,
    cfg: &PriorPosteriorConfig,
) -> Result<PriorPosteriorPair> {
    if sample.is_empty() {
        return Err(Error::EmptyData("prior/posterior sample"));
    }
    let (prior_indices, eval_indices) = split_indices(sample.len(), cfg.alpha, cfg.seed)?;
    let w_init = nn::init_weights(arch, cfg.seed);
    let w_alpha = if prior_indices.is_empty() {
        w_init
    } else {
        let prior_set = sample.subset(&prior_indices);
        let only_final = CheckpointSchedule {
            first_epoch_checkpoints: 0,
            per_epoch_after: false,
        };
        nn::train(arch, &w_init, &prior_set, &cfg.prior, &only_final)
            .map_err(|e| e.context("prior training"))?
            .weights
    };
    let post = nn::train(arch, &w_alpha, sample, &cfg.posterior, &cfg.schedule)
        .map_err(|e| e.context("posterior training"))?;
    let posteriors = post
        .checkpoints
        .into_iter()
        .map(|c| {
            Ok(PosteriorCheckpoint {
                seen_fraction: c.seen_fraction,
                step: c.step,
                distribution: IsotropicGaussian::new(c.weights, cfg.sigma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PriorPosteriorPair {
        arch: arch.clone(),
        alpha: cfg.alpha,
        prior: IsotropicGaussian::new(w_alpha, cfg.sigma)?,
        posteriors,
        eval_set: sample.subset(&eval_indices),
        prior_indices,
        eval_indices,
        posterior_steps: post.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(mean: Vec<f64>, sigma: f64) -> IsotropicGaussian {
        IsotropicGaussian::new(WeightVector::from_vec_unchecked(mean), sigma).unwrap()
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let g = gaussian(vec![0.1, -0.2, 0.3], 0.5);
        assert_eq!(kl_isotropic(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn kl_equal_sigma_worked_example() {
        // ‖Δμ‖² = 0.0018 spread over two coordinates, σ = 0.03
        let d = (0.0009f64).sqrt();
        let rho = gaussian(vec![d, d], 0.03);
        let pi = gaussian(vec![0.0, 0.0], 0.03);
        assert!((kl_isotropic(&rho, &pi).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_mismatch_and_bad_sigma() {
        assert!(kl_isotropic(&gaussian(vec![0.0], 1.0), &gaussian(vec![0.0, 0.0], 1.0)).is_err());
        assert!(IsotropicGaussian::new(WeightVector::from_vec_unchecked(vec![0.0]), 0.0).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = gaussian((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), 0.7);
        let pi = gaussian((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), 1.1);
        let exact = kl_isotropic(&rho, &pi).unwrap();
        let draws = sample_posterior(&rho, 20_000, 9).unwrap();
        let vals: Vec<f64> = draws
            .draws()
            .iter()
            .map(|w| rho.log_density(w.values()) - pi.log_density(w.values()))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - exact).abs() < 4.0 * sd / n.sqrt());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_monotone(
            mean in proptest::collection::vec(-2.0f64..2.0, 5),
            s1 in 0.01f64..2.0,
            s2 in 0.01f64..2.0,
            scale in 1.01f64..3.0,
        ) {
            let pi = gaussian(vec![0.0; 5], s2);
            let rho = gaussian(mean.clone(), s1);
            let k = kl_isotropic(&rho, &pi).unwrap();
            prop_assert!(k >= 0.0);
            if mean.iter().any(|v| v.abs() > 1e-6) {
                let far = gaussian(mean.iter().map(|v| v * scale).collect(), s1);
                prop_assert!(kl_isotropic(&far, &pi).unwrap() > k);
            }
        }
    }

    #[test]
    fn degenerate_posterior_sits_on_mean() {
        let g = gaussian(vec![0.5, -1.5, 2.0], 1e-12);
        let s = sample_posterior(&g, 5, 3).unwrap();
        assert_eq!(s.draws().len(), 10);
        for d in s.draws() {
            for (a, b) in d.values().iter().zip(g.mean().values()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posterior_sampling_is_seeded() {
        let g = gaussian(vec![0.0; 6], 0.1);
        let a = sample_posterior(&g, 3, 42).unwrap();
        let b = sample_posterior(&g, 3, 42).unwrap();
        assert_eq!(a.draws(), b.draws());
        assert_ne!(a.draws(), sample_posterior(&g, 3, 43).unwrap().draws());
        assert!(sample_posterior(&g, 0, 1).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        let mu = vec![0.3, -0.7];
        let sigma = 0.2;
        let g = gaussian(mu.clone(), sigma);
        let s = sample_posterior(&g, 50_000, 5).unwrap();
        let n = s.draws().len() as f64;
        for k in 0..2 {
            let mean = s.draws().iter().map(|d| d.values()[k]).sum::<f64>() / n;
            assert!((mean - mu[k]).abs() < 4.0 * sigma / n.sqrt());
        }
    }

    #[test]
    fn split_arithmetic() {
        let (p, e) = split_indices(1000, 0.3, 7).unwrap();
        assert_eq!((p.len(), e.len()), (300, 700));
        let mut all: Vec<usize> = p.iter().chain(&e).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(split_indices(3, 0.2, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
        let (p0, e0) = split_indices(10, 0.0, 1).unwrap();
        assert!(p0.is_empty());
        assert_eq!(e0.len(), 10);
    }

    fn blobs(m: usize, seed: u64) -> LabeledSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..m {
            let y = (i % 2) as u32;
            let c = if y == 1 { 1.5 } else { -1.5 };
            rows.push(vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(y);
        }
        LabeledSample::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn uninformed_prior_is_initialization() {
        let arch = MlpArchitecture::new(vec![2, 4, 1], Activation::Relu).unwrap();
        let s = blobs(200, 1);
        let cfg = PriorPosteriorConfig {
            alpha: 0.0,
            seed: 5,
            ..PriorPosteriorConfig::default()
        };
        let pair = learn_prior_posterior(&s, &arch, &cfg).unwrap();
        assert_eq!(pair.prior().mean(), &nn::init_weights(&arch, 5));
        assert_eq!(pair.eval_set().len(), 200);
        let kls: Vec<f64> = pair
            .posterior_checkpoints()
            .iter()
            .map(|p| kl_isotropic(&p.distribution, pair.prior()).unwrap())
            .collect();
        assert!(kls.first().unwrap() < kls.last().unwrap());
    }

    #[test]
    fn posterior_trains_on_all_of_s() {
        let arch = MlpArchitecture::new(vec![2, 4, 1], Activation::Relu).unwrap();
        let s = blobs(1000, 2);
        let cfg = PriorPosteriorConfig {
            alpha: 0.3,
            ..PriorPosteriorConfig::default()
        };
        let pair = learn_prior_posterior(&s, &arch, &cfg).unwrap();
        assert_eq!(pair.prior_indices().len(), 300);
        assert_eq!(pair.eval_set().len(), 700);
        // 5 epochs over all 1000 rows with batch 128
        assert_eq!(pair.posterior_steps(), 5 * 8);
        assert_eq!(pair.posterior_checkpoints().len(), 12);
        let eval: std::collections::HashSet<_> = pair.eval_indices().iter().collect();
        assert!(pair.prior_indices().iter().all(|i| !eval.contains(i)));
    }

    #[test]
    fn pair_persistence_roundtrip() {
        let arch = MlpArchitecture::new(vec![2, 3, 1], Activation::Tanh).unwrap();
        let s = blobs(300, 3);
        let pair = learn_prior_posterior(&s, &arch, &PriorPosteriorConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        pair.save(dir.path()).unwrap();
        let back = PriorPosteriorPair::load(dir.path(), &s).unwrap();
        assert_eq!(back.prior(), pair.prior());
        assert_eq!(back.posterior_checkpoints(), pair.posterior_checkpoints());
        assert_eq!(back.prior_indices(), pair.prior_indices());
        assert_eq!(back.eval_set(), pair.eval_set());
        let text = fs::read_to_string(dir.path().join("split_indices.txt")).unwrap();
        assert_eq!(text.lines().count(), 90);
    }
}
