//! Benchmark data model: instances, candidate sets, expression evidence, and the
//! line-delimited benchmark file format.
//!
//! A benchmark file holds one JSON object per line. An optional first line of the
//! form `{"metadata": {...}}` carries the benchmark metadata; every other line is
//! one [`Instance`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{self, Distribution, DistributionChoice};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, IOU_THRESHOLD};
use crate::report;

/// Tolerance on stored probability vectors summing to one.
pub const FILE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    /// Two-stage model: a distribution over externally supplied candidates.
    CandidateClassification,
    /// End-to-end model: one predicted box with a scalar confidence.
    DirectPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectPrediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
}

/// Model output for one referring expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionEvidence {
    pub expression_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub kind: EvidenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_pass: Option<Vec<f64>>,
    /// `T x K` per-pass distributions from stochastic forward passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_samples: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<DirectPrediction>,
}

impl ExpressionEvidence {
    pub fn candidate(id: impl Into<String>, single_pass: Vec<f64>) -> Self {
        Self {
            expression_id: id.into(),
            text: None,
            kind: EvidenceKind::CandidateClassification,
            single_pass: Some(single_pass),
            dropout_samples: None,
            direct: None,
        }
    }

    pub fn direct(id: impl Into<String>, bbox: BBox, confidence: f64) -> Self {
        Self {
            expression_id: id.into(),
            text: None,
            kind: EvidenceKind::DirectPrediction,
            single_pass: None,
            dropout_samples: None,
            direct: Some(DirectPrediction { bbox, confidence }),
        }
    }

    pub fn with_dropout_samples(mut self, samples: Vec<Vec<f64>>) -> Self {
        self.dropout_samples = Some(samples);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn is_direct(&self) -> bool {
        self.kind == EvidenceKind::DirectPrediction
    }

    fn validate(&self, k: usize) -> std::result::Result<(), String> {
        let id = &self.expression_id;
        match self.kind {
            EvidenceKind::CandidateClassification => {
                if self.direct.is_some() {
                    return Err(format!(
                        "expression {id}: candidate-classification evidence carries a direct prediction"
                    ));
                }
                let probs = self.single_pass.as_ref().ok_or_else(|| format!("expression {id}: missing single_pass"))?;
                if k == 0 {
                    return Err(format!(
                        "expression {id}: candidate-classification evidence needs at least one candidate"
                    ));
                }
                check_probability_row(probs, k).map_err(|e| format!("expression {id}: single_pass {e}"))?;
                if let Some(samples) = &self.dropout_samples {
                    if samples.is_empty() {
                        return Err(format!("expression {id}: dropout_samples is empty"));
                    }
                    for (t, row) in samples.iter().enumerate() {
                        check_probability_row(row, k).map_err(|e| format!("expression {id}: dropout pass {t} {e}"))?;
                    }
                }
            }
            EvidenceKind::DirectPrediction => {
                if self.single_pass.is_some() || self.dropout_samples.is_some() {
                    return Err(format!(
                        "expression {id}: direct-prediction evidence carries a candidate distribution"
                    ));
                }
                let direct =
                    self.direct.as_ref().ok_or_else(|| format!("expression {id}: missing direct prediction"))?;
                if !(0.0..=1.0).contains(&direct.confidence) {
                    return Err(format!("expression {id}: confidence {} outside [0, 1]", direct.confidence));
                }
            }
        }
        Ok(())
    }
}

fn check_probability_row(row: &[f64], k: usize) -> std::result::Result<(), String> {
    if row.len() != k {
        return Err(format!("has length {} but there are {k} candidates", row.len()));
    }
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("has invalid entry {p}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > FILE_SUM_TOLERANCE {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

/// One evaluation tuple: an object occurrence, its candidate set, the initial
/// expression, and the pool of alternative expressions available on re-query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub image_id: String,
    pub object_id: String,
    pub candidates: Vec<BBox>,
    pub gold_box: BBox,
    /// Index of the candidate matching the gold box; `None` when the target was not detected.
    pub gold_index: Option<usize>,
    pub initial: ExpressionEvidence,
    pub pool: Vec<ExpressionEvidence>,
}

impl Instance {
    /// Initial expression followed by the pool.
    pub fn expressions(&self) -> impl Iterator<Item = &ExpressionEvidence> {
        std::iter::once(&self.initial).chain(self.pool.iter())
    }

    /// Expression by position in [`Instance::expressions`]: 0 is the initial expression,
    /// `i + 1` is `pool[i]`.
    pub fn expression(&self, index: usize) -> Option<&ExpressionEvidence> {
        match index {
            0 => Some(&self.initial),
            i => self.pool.get(i - 1),
        }
    }

    pub fn n_expressions(&self) -> usize {
        1 + self.pool.len()
    }

    pub fn is_detected(&self) -> bool {
        self.gold_index.is_some()
    }

    /// Box selected by `dist`: the candidate with the highest probability, lowest index on ties.
    pub fn predict(&self, dist: &Distribution) -> Result<BBox> {
        if dist.len() != self.candidates.len() {
            return Err(Error::input(format!(
                "distribution has {} entries but instance {} has {} candidates",
                dist.len(),
                self.instance_id,
                self.candidates.len()
            )));
        }
        Ok(self.candidates[dist.argmax()])
    }

    pub fn loss(&self, dist: &Distribution) -> Result<u32> {
        Ok(geometry::loss(&self.predict(dist)?, &self.gold_box))
    }

    /// Loss of a single expression under the chosen distribution. Direct-prediction
    /// evidence is scored on its own box and only supports the single-pass choice.
    pub fn evidence_loss(&self, evidence: &ExpressionEvidence, choice: DistributionChoice) -> Result<u32> {
        match (&evidence.direct, evidence.kind) {
            (Some(direct), EvidenceKind::DirectPrediction) => {
                if choice != DistributionChoice::SinglePass {
                    return Err(confidence::dropout_incompatible(evidence));
                }
                Ok(geometry::loss(&direct.bbox, &self.gold_box))
            }
            _ => self.loss(&confidence::build(evidence, choice)?),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let k = self.candidates.len();
        match self.gold_index {
            Some(g) => {
                let cand =
                    self.candidates.get(g).ok_or_else(|| format!("gold_index {g} out of range for {k} candidates"))?;
                let overlap = geometry::iou(cand, &self.gold_box);
                if overlap <= IOU_THRESHOLD {
                    return Err(format!("gold candidate {g} has IoU {overlap} with the gold box"));
                }
            }
            None => {
                if let Some(i) = self.candidates.iter().position(|c| geometry::iou(c, &self.gold_box) > IOU_THRESHOLD) {
                    return Err(format!("gold_index is absent but candidate {i} matches the gold box"));
                }
            }
        }
        let mut ids = HashSet::new();
        for ev in self.expressions() {
            ev.validate(k)?;
            if !ids.insert(ev.expression_id.as_str()) {
                return Err(format!("duplicate expression_id {}", ev.expression_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSource {
    #[default]
    GroundTruth,
    Detected,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub name: String,
    #[serde(default)]
    pub box_source: BoxSource,
    /// Content hash of the generator configuration, for synthetic benchmarks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct MetadataRecord {
    metadata: BenchmarkMetadata,
}

/// A validated, immutable set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    metadata: BenchmarkMetadata,
    instances: Vec<Instance>,
}

impl Benchmark {
    pub fn new(metadata: BenchmarkMetadata, instances: Vec<Instance>) -> Result<Self> {
        let mut ids = HashSet::new();
        for inst in &instances {
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(Error::Validation {
                    instance_id: inst.instance_id.clone(),
                    reason: "duplicate instance_id".into(),
                });
            }
            inst.validate().map_err(|reason| Error::Validation { instance_id: inst.instance_id.clone(), reason })?;
        }
        Ok(Self { metadata, instances })
    }

    pub fn metadata(&self) -> &BenchmarkMetadata {
        &self.metadata
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Fraction of instances whose target is among the candidates.
    pub fn detection_rate(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        let detected = self.instances.iter().filter(|i| i.is_detected()).count();
        detected as f64 / self.instances.len() as f64
    }

    /// True if any expression in the benchmark is a direct prediction.
    pub fn has_direct_predictions(&self) -> bool {
        self.instances.iter().flat_map(|i| i.expressions()).any(|e| e.is_direct())
    }

    /// Copy of the benchmark in which each instance's initial expression is drawn
    /// uniformly from its initial and pool expressions. The drawn expression swaps
    /// places with the old initial.
    pub fn with_resampled_initials<R: Rng + ?Sized>(&self, rng: &mut R) -> Benchmark {
        let instances = self
            .instances
            .iter()
            .map(|inst| {
                let mut inst = inst.clone();
                let pick = rng.random_range(0..inst.n_expressions());
                if pick > 0 {
                    std::mem::swap(&mut inst.initial, &mut inst.pool[pick - 1]);
                }
                inst
            })
            .collect();
        Benchmark { metadata: self.metadata.clone(), instances }
    }

    pub fn read_from<R: BufRead>(reader: R, default_name: &str) -> Result<Self> {
        let mut metadata = None;
        let mut instances = Vec::new();
        let mut seen_record = false;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse { line: line_no, message: e.to_string() };
            if !seen_record {
                seen_record = true;
                let value: serde_json::Value = serde_json::from_str(trimmed).map_err(parse_err)?;
                if value.get("metadata").is_some() {
                    let record: MetadataRecord = serde_json::from_value(value).map_err(parse_err)?;
                    metadata = Some(record.metadata);
                } else {
                    instances.push(serde_json::from_value(value).map_err(parse_err)?);
                }
                continue;
            }
            instances.push(serde_json::from_str(trimmed).map_err(parse_err)?);
        }
        let metadata =
            metadata.unwrap_or_else(|| BenchmarkMetadata { name: default_name.to_string(), ..Default::default() });
        Benchmark::new(metadata, instances)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = MetadataRecord { metadata: self.metadata.clone() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Benchmark> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("benchmark");
    let file = File::open(path)?;
    Benchmark::read_from(BufReader::new(file), name)
}

/// Writes the benchmark atomically.
pub fn save_benchmark(benchmark: &Benchmark, path: impl AsRef<Path>) -> Result<()> {
    report::write_atomic(path.as_ref(), &benchmark.to_bytes()?)
}
