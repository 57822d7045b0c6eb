//! Accuracy under the four definitions of a correct answer: per expression, and per
//! object using a random, the best, or the worst of the object's expressions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::DistributionChoice;
use crate::dataset::Benchmark;
use crate::error::{Error, Result};
use crate::geometry::CORRECT;
use crate::stats::mean_and_standard_error;

/// Default number of random one-expression-per-object draws.
pub const DEFAULT_RANDOM_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    PerExpression,
    PerObjectRandom,
    PerObjectBest,
    PerObjectWorst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub mode: AccuracyMode,
    /// Percent.
    pub mean: f64,
    /// Percent; 0 for deterministic modes.
    pub standard_error: f64,
    pub n_samples: usize,
}

impl AccuracyReport {
    fn deterministic(mode: AccuracyMode, mean: f64) -> Self {
        Self { mode, mean, standard_error: 0.0, n_samples: 1 }
    }
}

/// Per-instance correctness of every expression, initial first.
pub fn expression_correctness(benchmark: &Benchmark, choice: DistributionChoice) -> Result<Vec<Vec<bool>>> {
    if benchmark.is_empty() {
        return Err(Error::input("accuracy of an empty benchmark"));
    }
    benchmark
        .instances()
        .iter()
        .map(|inst| inst.expressions().map(|e| Ok(inst.evidence_loss(e, choice)? == CORRECT)).collect())
        .collect()
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

pub fn per_expression(benchmark: &Benchmark, choice: DistributionChoice) -> Result<AccuracyReport> {
    let c = expression_correctness(benchmark, choice)?;
    let total: usize = c.iter().map(Vec::len).sum();
    let correct = c.iter().flatten().filter(|ok| **ok).count();
    Ok(AccuracyReport::deterministic(AccuracyMode::PerExpression, percent(correct, total)))
}

pub fn per_object_best(benchmark: &Benchmark, choice: DistributionChoice) -> Result<AccuracyReport> {
    let c = expression_correctness(benchmark, choice)?;
    let correct = c.iter().filter(|obj| obj.iter().any(|ok| *ok)).count();
    Ok(AccuracyReport::deterministic(AccuracyMode::PerObjectBest, percent(correct, c.len())))
}

pub fn per_object_worst(benchmark: &Benchmark, choice: DistributionChoice) -> Result<AccuracyReport> {
    let c = expression_correctness(benchmark, choice)?;
    let correct = c.iter().filter(|obj| obj.iter().all(|ok| *ok)).count();
    Ok(AccuracyReport::deterministic(AccuracyMode::PerObjectWorst, percent(correct, c.len())))
}

/// Accuracy per draw of one uniformly random expression per object.
pub fn per_object_random_samples(
    benchmark: &Benchmark,
    choice: DistributionChoice,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::input("per-object random accuracy needs at least one sample"));
    }
    let c = expression_correctness(benchmark, choice)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_samples)
        .map(|_| {
            let correct = c.iter().filter(|obj| obj[rng.random_range(0..obj.len())]).count();
            percent(correct, c.len())
        })
        .collect())
}

pub fn per_object_random(
    benchmark: &Benchmark,
    choice: DistributionChoice,
    n_samples: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    let samples = per_object_random_samples(benchmark, choice, n_samples, seed)?;
    let (mean, standard_error) = mean_and_standard_error(&samples);
    Ok(AccuracyReport { mode: AccuracyMode::PerObjectRandom, mean, standard_error, n_samples })
}

/// All four reports, in table order.
pub fn all_modes(
    benchmark: &Benchmark,
    choice: DistributionChoice,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<AccuracyReport>> {
    Ok(vec![
        per_expression(benchmark, choice)?,
        per_object_random(benchmark, choice, n_samples, seed)?,
        per_object_best(benchmark, choice)?,
        per_object_worst(benchmark, choice)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BenchmarkMetadata, ExpressionEvidence, Instance};
    use crate::geometry::BBox;

    fn instance(id: &str, exprs: &[[f64; 2]], detected: bool) -> Instance {
        let mut evs: Vec<ExpressionEvidence> = exprs
            .iter()
            .enumerate()
            .map(|(i, p)| ExpressionEvidence::candidate(format!("e{}", i + 1), p.to_vec()))
            .collect();
        let initial = evs.remove(0);
        let (gold_box, gold_index) = if detected {
            (BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), Some(0))
        } else {
            (BBox::new(50.0, 50.0, 60.0, 60.0).unwrap(), None)
        };
        Instance {
            instance_id: id.into(),
            image_id: "img".into(),
            object_id: id.into(),
            candidates: vec![BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), BBox::new(20.0, 0.0, 30.0, 10.0).unwrap()],
            gold_box,
            gold_index,
            initial,
            pool: evs,
        }
    }

    fn bench(instances: Vec<Instance>) -> Benchmark {
        Benchmark::new(BenchmarkMetadata::default(), instances).unwrap()
    }

    const SP: DistributionChoice = DistributionChoice::SinglePass;

    fn b1() -> Benchmark {
        bench(vec![instance("b1", &[[0.6, 0.4], [0.3, 0.7], [0.9, 0.1]], true)])
    }

    #[test]
    fn b1_deterministic_modes() {
        let b = b1();
        assert!((per_expression(&b, SP).unwrap().mean - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(per_object_best(&b, SP).unwrap().mean, 100.0);
        assert_eq!(per_object_worst(&b, SP).unwrap().mean, 0.0);
    }

    #[test]
    fn b1_random_mode_converges_to_two_thirds() {
        let r = per_object_random(&b1(), SP, 100, 42).unwrap();
        assert_eq!(r.n_samples, 100);
        assert!(r.standard_error > 0.0);
        assert!((r.mean - 200.0 / 3.0).abs() <= 3.0 * r.standard_error, "{r:?}");
    }

    #[test]
    fn single_sample_has_zero_standard_error() {
        let r = per_object_random(&b1(), SP, 1, 0).unwrap();
        assert_eq!(r.standard_error, 0.0);
        assert!(per_object_random(&b1(), SP, 0, 0).is_err());
    }

    #[test]
    fn uniform_outcomes() {
        let all_right = bench(vec![instance("a", &[[0.9, 0.1], [0.6, 0.4]], true)]);
        let all_wrong = bench(vec![instance("a", &[[0.1, 0.9], [0.4, 0.6]], true)]);
        for r in all_modes(&all_right, SP, 10, 1).unwrap() {
            assert_eq!(r.mean, 100.0);
        }
        for r in all_modes(&all_wrong, SP, 10, 1).unwrap() {
            assert_eq!(r.mean, 0.0);
        }
    }

    #[test]
    fn undetected_object_counts_incorrect() {
        let b = bench(vec![instance("a", &[[0.9, 0.1]], false), instance("b", &[[0.9, 0.1]], true)]);
        assert_eq!(per_object_best(&b, SP).unwrap().mean, 50.0);
        assert!(per_object_best(&b, SP).unwrap().mean <= 100.0 * b.detection_rate());
    }

    #[test]
    fn single_expression_objects_have_equal_best_and_worst() {
        let b = bench(vec![instance("a", &[[0.9, 0.1]], true), instance("b", &[[0.2, 0.8]], true)]);
        assert_eq!(per_object_best(&b, SP).unwrap().mean, per_object_worst(&b, SP).unwrap().mean);
    }
}
