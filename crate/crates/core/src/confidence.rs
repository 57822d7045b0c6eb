//! Distributions built from expression evidence and the confidence measures that
//! turn them into re-query priorities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ExpressionEvidence;
use crate::error::{Error, Result};

/// Probability vector over an instance's candidates; non-empty and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Normalizes `weights` to sum to one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("empty distribution"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::input(format!("distribution has invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::input("distribution has zero total mass"));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { probs })
    }

    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::input(format!("one-hot index {index} out of range for {k} entries")));
        }
        let mut probs = vec![0.0; k];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionChoice {
    SinglePass,
    DropoutMean,
    VariationRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    SoftmaxResponse,
    Entropy,
}

impl DistributionChoice {
    pub const ALL: [DistributionChoice; 3] =
        [DistributionChoice::SinglePass, DistributionChoice::DropoutMean, DistributionChoice::VariationRatio];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistributionChoice::SinglePass => "single",
            DistributionChoice::DropoutMean => "dropout-mean",
            DistributionChoice::VariationRatio => "variation-ratio",
        }
    }
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::SoftmaxResponse, Measure::Entropy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::SoftmaxResponse => "softmax",
            Measure::Entropy => "entropy",
        }
    }
}

impl fmt::Display for DistributionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistributionChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single-pass" => Ok(DistributionChoice::SinglePass),
            "dropout-mean" => Ok(DistributionChoice::DropoutMean),
            "variation-ratio" => Ok(DistributionChoice::VariationRatio),
            other => Err(Error::input(format!(
                "unknown distribution {other:?} (expected single, dropout-mean, variation-ratio)"
            ))),
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "softmax-response" => Ok(Measure::SoftmaxResponse),
            "entropy" => Ok(Measure::Entropy),
            other => Err(Error::input(format!("unknown measure {other:?} (expected softmax, entropy)"))),
        }
    }
}

/// Re-query priority. Higher values are re-queried first.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequeryPriority(f64);

impl RequeryPriority {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::input(format!("priority {value} is not finite")));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

pub(crate) fn dropout_incompatible(evidence: &ExpressionEvidence) -> Error {
    Error::capability(format!(
        "expression {} is a direct prediction; end-to-end detectors do not produce stable \
         candidates across stochastic passes, so dropout distributions are unavailable",
        evidence.expression_id
    ))
}

fn candidate_probs(evidence: &ExpressionEvidence) -> Result<&[f64]> {
    if evidence.is_direct() {
        return Err(Error::capability(format!(
            "expression {} is a direct prediction and has no candidate distribution",
            evidence.expression_id
        )));
    }
    evidence
        .single_pass
        .as_deref()
        .ok_or_else(|| Error::input(format!("expression {} has no single_pass", evidence.expression_id)))
}

fn samples(evidence: &ExpressionEvidence) -> Result<&[Vec<f64>]> {
    if evidence.is_direct() {
        return Err(dropout_incompatible(evidence));
    }
    match evidence.dropout_samples.as_deref() {
        Some(rows) if !rows.is_empty() => Ok(rows),
        _ => Err(Error::capability(format!("expression {} has no dropout samples", evidence.expression_id))),
    }
}

/// The network's single-pass distribution, renormalized.
pub fn single_pass(evidence: &ExpressionEvidence) -> Result<Distribution> {
    Distribution::new(candidate_probs(evidence)?.to_vec())
}

/// Elementwise mean of the stochastic passes.
pub fn dropout_mean(evidence: &ExpressionEvidence) -> Result<Distribution> {
    let rows = samples(evidence)?;
    let k = rows[0].len();
    let mut acc = vec![0.0; k];
    for row in rows {
        if row.len() != k {
            return Err(Error::input("dropout sample rows differ in length"));
        }
        for (a, p) in acc.iter_mut().zip(row) {
            *a += p;
        }
    }
    let t = rows.len() as f64;
    Distribution::new(acc.into_iter().map(|a| a / t).collect())
}

/// Fraction of passes voting for each candidate.
pub fn variation_ratio(evidence: &ExpressionEvidence) -> Result<Distribution> {
    let rows = samples(evidence)?;
    let k = rows[0].len();
    let mut votes = vec![0usize; k];
    for row in rows {
        if row.len() != k {
            return Err(Error::input("dropout sample rows differ in length"));
        }
        votes[argmax(row)] += 1;
    }
    let t = rows.len() as f64;
    Distribution::new(votes.into_iter().map(|v| v as f64 / t).collect())
}

pub fn build(evidence: &ExpressionEvidence, choice: DistributionChoice) -> Result<Distribution> {
    match choice {
        DistributionChoice::SinglePass => single_pass(evidence),
        DistributionChoice::DropoutMean => dropout_mean(evidence),
        DistributionChoice::VariationRatio => variation_ratio(evidence),
    }
}

pub fn softmax_response(dist: &Distribution) -> f64 {
    dist.max_prob()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &Distribution) -> f64 {
    -dist.probs().iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn score(dist: &Distribution, measure: Measure) -> RequeryPriority {
    match measure {
        Measure::SoftmaxResponse => RequeryPriority(-softmax_response(dist)),
        Measure::Entropy => RequeryPriority(entropy(dist)),
    }
}

/// Re-query priority of one expression.
///
/// Direct-prediction evidence is scored by its negated confidence and supports only
/// the single-pass softmax-response combination.
pub fn priority(
    evidence: &ExpressionEvidence,
    choice: DistributionChoice,
    measure: Measure,
) -> Result<RequeryPriority> {
    if let Some(direct) = &evidence.direct {
        if choice != DistributionChoice::SinglePass {
            return Err(dropout_incompatible(evidence));
        }
        return match measure {
            Measure::SoftmaxResponse => RequeryPriority::new(-direct.confidence),
            Measure::Entropy => Err(Error::capability(format!(
                "expression {} is a direct prediction carrying only a scalar confidence; entropy needs a distribution",
                evidence.expression_id
            ))),
        };
    }
    Ok(score(&build(evidence, choice)?, measure))
}
