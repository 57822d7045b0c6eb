//! Seeded synthetic benchmarks emulating a stochastic comprehension model.
//!
//! Each expression has a quality `theta` in `[0, 1]` drawn from a Beta distribution.
//! Candidate logits are standard normal and the target's logit is boosted by
//! `logit_scale * theta`. The single-pass output is `softmax(logits / temperature)`;
//! each dropout pass perturbs the logits with Gaussian noise of standard deviation
//! `dropout_sigma * (1 - theta)`, so passes for poor phrasings disagree more.
//! Candidates are disjoint unit boxes, which makes correctness a pure function of
//! the argmax.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Benchmark, BenchmarkMetadata, BoxSource, ExpressionEvidence, Instance};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_T_PASSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub k_candidates: usize,
    /// Inclusive range of expressions per object, initial expression included.
    pub pool_size_range: (usize, usize),
    /// Beta parameters for expression quality. A zero `quality_beta` pins quality
    /// at 1 and a zero `quality_alpha` pins it at 0.
    pub quality_alpha: f64,
    pub quality_beta: f64,
    pub logit_scale: f64,
    pub dropout_sigma: f64,
    pub t_passes: usize,
    pub detection_rate: f64,
    pub spread_temperature: f64,
    pub seed: u64,
    /// Emit direct-prediction evidence (predicted box + confidence) instead of
    /// candidate distributions.
    #[serde(default)]
    pub direct_prediction: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Preset::PaperShape.config()
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.pool_size_range;
        if self.n_instances == 0 || self.k_candidates == 0 || lo == 0 || self.t_passes == 0 {
            return Err(Error::input("instance, candidate, expression, and pass counts must be at least 1"));
        }
        if lo > hi {
            return Err(Error::input(format!("pool size range ({lo}, {hi}) is empty")));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.quality_alpha) || !finite_nonneg(self.quality_beta) {
            return Err(Error::input("quality parameters must be finite and non-negative"));
        }
        if self.quality_alpha == 0.0 && self.quality_beta == 0.0 {
            return Err(Error::input("quality_alpha and quality_beta cannot both be zero"));
        }
        if !finite_nonneg(self.logit_scale) || !finite_nonneg(self.dropout_sigma) {
            return Err(Error::input("logit_scale and dropout_sigma must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.detection_rate) {
            return Err(Error::input(format!("detection rate {} outside [0, 1]", self.detection_rate)));
        }
        if !(self.spread_temperature.is_finite() && self.spread_temperature > 0.0) {
            return Err(Error::input("spread_temperature must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Peaked outputs, every target detected.
    Easy,
    /// Many candidates, a high temperature, and phrasings that are either good or
    /// nearly useless: flat outputs that need several fused responses.
    Spread,
    /// Like `paper-shape` but 15% of targets are missing from the candidates.
    LowDetection,
    /// Mixed-quality phrasings with informative dropout noise.
    PaperShape,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Easy, Preset::Spread, Preset::LowDetection, Preset::PaperShape];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Easy => "easy",
            Preset::Spread => "spread",
            Preset::LowDetection => "low-detection",
            Preset::PaperShape => "paper-shape",
        }
    }

    pub fn config(&self) -> SynthConfig {
        match self {
            Preset::Easy => SynthConfig {
                n_instances: 200,
                k_candidates: 4,
                pool_size_range: (3, 5),
                quality_alpha: 4.0,
                quality_beta: 1.0,
                logit_scale: 8.0,
                dropout_sigma: 1.0,
                t_passes: DEFAULT_T_PASSES,
                detection_rate: 1.0,
                spread_temperature: 1.0,
                seed: 0,
                direct_prediction: false,
            },
            Preset::Spread => SynthConfig {
                n_instances: 200,
                k_candidates: 10,
                pool_size_range: (4, 8),
                quality_alpha: 0.5,
                quality_beta: 0.5,
                logit_scale: 6.0,
                dropout_sigma: 1.0,
                t_passes: DEFAULT_T_PASSES,
                detection_rate: 1.0,
                spread_temperature: 2.5,
                seed: 0,
                direct_prediction: false,
            },
            Preset::LowDetection => SynthConfig { detection_rate: 0.85, ..Preset::PaperShape.config() },
            Preset::PaperShape => SynthConfig {
                n_instances: 300,
                k_candidates: 6,
                pool_size_range: (3, 5),
                quality_alpha: 2.0,
                quality_beta: 1.5,
                logit_scale: 4.0,
                dropout_sigma: 2.0,
                t_passes: DEFAULT_T_PASSES,
                detection_rate: 1.0,
                spread_temperature: 1.0,
                seed: 0,
                direct_prediction: false,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            Error::input(format!("unknown preset {s:?} (expected easy, spread, low-detection, paper-shape)"))
        })
    }
}

pub fn preset(name: &str) -> Result<SynthConfig> {
    Ok(name.parse::<Preset>()?.config())
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn grid_box(index: usize, columns: usize) -> BBox {
    let (col, row) = ((index % columns) as f64, (index / columns) as f64);
    BBox::new(2.0 * col, 2.0 * row, 2.0 * col + 1.0, 2.0 * row + 1.0).expect("grid boxes are valid")
}

enum Quality {
    Fixed(f64),
    Beta(Beta<f64>),
}

impl Quality {
    fn new(alpha: f64, beta: f64) -> Result<Self> {
        if beta == 0.0 {
            return Ok(Quality::Fixed(1.0));
        }
        if alpha == 0.0 {
            return Ok(Quality::Fixed(0.0));
        }
        Beta::new(alpha, beta)
            .map(Quality::Beta)
            .map_err(|e| Error::input(format!("invalid quality distribution: {e}")))
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Quality::Fixed(q) => *q,
            Quality::Beta(b) => b.sample(rng).clamp(0.0, 1.0),
        }
    }
}

/// Generates a benchmark; a deterministic function of the config.
pub fn generate(config: &SynthConfig) -> Result<Benchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let quality = Quality::new(config.quality_alpha, config.quality_beta)?;
    let k = config.k_candidates;
    let columns = (k as f64).sqrt().ceil() as usize;
    let candidates: Vec<BBox> = (0..k).map(|j| grid_box(j, columns)).collect();
    let off_grid = BBox::new(-2.0, -2.0, -1.0, -1.0).expect("valid box");

    let mut instances = Vec::with_capacity(config.n_instances);
    for i in 0..config.n_instances {
        let instance_id = format!("i{i:06}");
        let target = rng.random_range(0..k);
        let detected = rng.random::<f64>() < config.detection_rate;
        let n_expr = rng.random_range(config.pool_size_range.0..=config.pool_size_range.1);

        let mut expressions = Vec::with_capacity(n_expr);
        for e in 0..n_expr {
            let theta = quality.sample(&mut rng);
            let mut logits: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            logits[target] += config.logit_scale * theta;
            let single = softmax(&logits, config.spread_temperature);

            let noise_sd = config.dropout_sigma * (1.0 - theta);
            let passes: Vec<Vec<f64>> = (0..config.t_passes)
                .map(|_| {
                    let noisy: Vec<f64> =
                        logits.iter().map(|l| l + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
                    softmax(&noisy, config.spread_temperature)
                })
                .collect();

            let expression_id = format!("{instance_id}-e{e}");
            let evidence = if config.direct_prediction {
                let best = crate::confidence::argmax(&single);
                ExpressionEvidence::direct(expression_id, candidates[best], single[best])
            } else {
                ExpressionEvidence::candidate(expression_id, single).with_dropout_samples(passes)
            };
            expressions.push(evidence);
        }
        let initial = expressions.remove(0);
        instances.push(Instance {
            image_id: format!("img{i:06}"),
            object_id: format!("obj{i:06}"),
            instance_id,
            candidates: candidates.clone(),
            gold_box: if detected { candidates[target] } else { off_grid },
            gold_index: detected.then_some(target),
            initial,
            pool: expressions,
        });
    }

    let metadata = BenchmarkMetadata {
        name: format!("synthetic-{}", config.seed),
        box_source: if config.detection_rate < 1.0 { BoxSource::Detected } else { BoxSource::GroundTruth },
        config_hash: Some(config.content_hash()),
    };
    Benchmark::new(metadata, instances)
}
