//! Rephrase re-query: the only answer to a re-query is another referring expression.
//!
//! Two selection functions decide what to do with several expressions for the same
//! object. Smart replacement keeps the single most confident expression; combined
//! replacement multiplies the candidate distributions and renormalizes, which
//! converges to a one-hot at the weighted geometric-mean argmax as re-queries grow.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{self, argmax, Distribution, DistributionChoice, Measure, RequeryPriority};
use crate::dataset::{Benchmark, ExpressionEvidence, Instance};
use crate::error::{Error, Result};
use crate::geometry;
use crate::multimodal::{additional_error, CoverageCurve};

/// Entries are floored to this before fusing so a single zero cannot veto a candidate.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    None,
    Smart,
    Combined,
}

impl Selection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Selection::None => "none",
            Selection::Smart => "smart",
            Selection::Combined => "combined",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Selection::None),
            "smart" => Ok(Selection::Smart),
            "combined" => Ok(Selection::Combined),
            other => Err(Error::input(format!("unknown selection {other:?} (expected none, smart, combined)"))),
        }
    }
}

/// Selection function together with the score used to rank expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub selection: Selection,
    pub distribution: DistributionChoice,
    pub measure: Measure,
}

impl SelectionPolicy {
    pub fn new(selection: Selection, distribution: DistributionChoice, measure: Measure) -> Self {
        Self { selection, distribution, measure }
    }
}

/// Running product of distributions, kept as a sum of floored log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFusion {
    log_sum: Vec<f64>,
    count: usize,
}

impl LogFusion {
    pub fn new(k: usize) -> Self {
        Self { log_sum: vec![0.0; k], count: 0 }
    }

    pub fn add(&mut self, dist: &Distribution) -> Result<()> {
        if dist.len() != self.log_sum.len() {
            return Err(Error::input(format!(
                "cannot fuse a distribution over {} candidates with one over {}",
                dist.len(),
                self.log_sum.len()
            )));
        }
        for (acc, p) in self.log_sum.iter_mut().zip(dist.probs()) {
            *acc += p.max(PROBABILITY_FLOOR).ln();
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The normalized product.
    pub fn distribution(&self) -> Result<Distribution> {
        if self.count == 0 {
            return Err(Error::input("fusion of zero distributions"));
        }
        let max = self.log_sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Distribution::new(self.log_sum.iter().map(|l| (l - max).exp()).collect())
    }
}

/// Elementwise product of the distributions, renormalized. A single distribution
/// is returned unchanged.
pub fn combine(dists: &[Distribution]) -> Result<Distribution> {
    let first = dists.first().ok_or_else(|| Error::input("combine needs at least one distribution"))?;
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let mut fusion = LogFusion::new(first.len());
    for d in dists {
        fusion.add(d)?;
    }
    fusion.distribution()
}

fn combined_incompatible(evidence: &ExpressionEvidence) -> Error {
    Error::capability(format!(
        "combined replacement requires candidate distributions that are constant across \
         expressions for an image; expression {} is a direct prediction from an end-to-end detector",
        evidence.expression_id
    ))
}

/// Fuses the chosen distribution of every expression.
pub fn combine_evidence(evidence: &[&ExpressionEvidence], choice: DistributionChoice) -> Result<Distribution> {
    let dists = evidence
        .iter()
        .map(|e| {
            if e.is_direct() {
                return Err(combined_incompatible(e));
            }
            confidence::build(e, choice)
        })
        .collect::<Result<Vec<_>>>()?;
    combine(&dists)
}

/// Index of the most confident expression (lowest priority); earliest on ties.
pub fn smart_select(evidence: &[&ExpressionEvidence], choice: DistributionChoice, measure: Measure) -> Result<usize> {
    if evidence.is_empty() {
        return Err(Error::input("smart selection over zero expressions"));
    }
    let mut best = 0;
    let mut best_priority = confidence::priority(evidence[0], choice, measure)?;
    for (i, e) in evidence.iter().enumerate().skip(1) {
        let p = confidence::priority(e, choice, measure)?;
        if p.value() < best_priority.value() {
            best = i;
            best_priority = p;
        }
    }
    Ok(best)
}

/// Expressions gathered for one instance, as positions in [`Instance::expressions`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequerySession {
    pub instance_id: String,
    pub evidence_used: Vec<usize>,
}

impl RequerySession {
    /// A session holding only the initial expression.
    pub fn initial(instance: &Instance) -> Self {
        Self { instance_id: instance.instance_id.clone(), evidence_used: vec![0] }
    }

    pub fn evidence<'a>(&self, instance: &'a Instance) -> Result<Vec<&'a ExpressionEvidence>> {
        if self.evidence_used.is_empty() {
            return Err(Error::input(format!("session for {} is empty", self.instance_id)));
        }
        self.evidence_used
            .iter()
            .map(|&i| {
                instance.expression(i).ok_or_else(|| {
                    Error::input(format!("session refers to missing expression {i} of {}", instance.instance_id))
                })
            })
            .collect()
    }
}

/// Output of a selection function for one session.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Position within the session of the chosen expression.
    Chosen(usize),
    Fused(Distribution),
}

pub fn decide(instance: &Instance, session: &RequerySession, policy: &SelectionPolicy) -> Result<Decision> {
    let evidence = session.evidence(instance)?;
    match policy.selection {
        Selection::None => Ok(Decision::Chosen(0)),
        Selection::Smart => Ok(Decision::Chosen(smart_select(&evidence, policy.distribution, policy.measure)?)),
        Selection::Combined => Ok(Decision::Fused(combine_evidence(&evidence, policy.distribution)?)),
    }
}

pub fn session_loss(instance: &Instance, session: &RequerySession, policy: &SelectionPolicy) -> Result<u32> {
    match decide(instance, session, policy)? {
        Decision::Chosen(i) => {
            let evidence = session.evidence(instance)?;
            instance.evidence_loss(evidence[i], policy.distribution)
        }
        Decision::Fused(d) => instance.loss(&d),
    }
}

/// Error rate (percent) over all instances using each session's expressions.
pub fn rmae(benchmark: &Benchmark, sessions: &[RequerySession], policy: &SelectionPolicy) -> Result<f64> {
    if sessions.len() != benchmark.len() {
        return Err(Error::input(format!("{} sessions for {} instances", sessions.len(), benchmark.len())));
    }
    if benchmark.is_empty() {
        return Err(Error::input("RMAE of an empty benchmark"));
    }
    let mut total = 0u64;
    for (inst, session) in benchmark.instances().iter().zip(sessions) {
        if session.instance_id != inst.instance_id {
            return Err(Error::input(format!(
                "session {} does not match instance {}",
                session.instance_id, inst.instance_id
            )));
        }
        total += u64::from(additional_error(session_loss(inst, session, policy)?));
    }
    Ok(total as f64 / benchmark.len() as f64)
}

/// How an instance's priority is computed during a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityMode {
    /// Score the current decision: the fused distribution for combined replacement,
    /// the selected expression for smart replacement.
    #[default]
    Current,
    /// Score the initial expression throughout.
    Initial,
    /// Use the current additional error itself: a perfect re-query function.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SweepOptions {
    pub priority_mode: PriorityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub step: usize,
    pub instance_id: String,
    /// Priority of the instance when it was selected.
    pub priority: f64,
    pub expression_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// RMAE after `r` re-queries, for `r = 0..=total_requeries`.
    pub curve: CoverageCurve,
    pub total_requeries: usize,
    pub steps: Vec<SweepStep>,
    /// True when the sweep ran out of eligible instances before `|P|` re-queries.
    pub truncated: bool,
}

/// Per-expression quantities a sweep needs, computed once.
struct Prepared {
    priorities: Vec<RequeryPriority>,
    losses: Vec<u32>,
    dists: Vec<Distribution>,
}

fn prepare(instance: &Instance, policy: &SelectionPolicy) -> Result<Prepared> {
    let mut out = Prepared { priorities: Vec::new(), losses: Vec::new(), dists: Vec::new() };
    for e in instance.expressions() {
        match policy.selection {
            Selection::Combined => {
                if e.is_direct() {
                    return Err(combined_incompatible(e));
                }
                out.dists.push(confidence::build(e, policy.distribution)?);
            }
            _ => out.losses.push(instance.evidence_loss(e, policy.distribution)?),
        }
        out.priorities.push(confidence::priority(e, policy.distribution, policy.measure)?);
    }
    Ok(out)
}

struct SweepState {
    used: Vec<usize>,
    unused_pool: Vec<usize>,
    requeries: usize,
    fusion: Option<LogFusion>,
    loss: u32,
    priority: f64,
}

/// Seed for trial `trial` derived from a base seed; trials get independent streams.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = base ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Greedy re-query sweep seeded with `seed`.
pub fn rmae_sweep(
    benchmark: &Benchmark,
    policy: &SelectionPolicy,
    options: SweepOptions,
    seed: u64,
) -> Result<SweepResult> {
    rmae_sweep_with_rng(benchmark, policy, options, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Greedy re-query sweep.
///
/// Each step re-queries the eligible instance with the highest current priority
/// (lowest instance id on ties) and appends a response drawn uniformly from its
/// unused pool expressions, or from the whole pool once every expression has been
/// used. Under smart replacement each instance is re-queried at most once; instances
/// with an empty pool are never eligible.
pub fn rmae_sweep_with_rng<R: Rng + ?Sized>(
    benchmark: &Benchmark,
    policy: &SelectionPolicy,
    options: SweepOptions,
    rng: &mut R,
) -> Result<SweepResult> {
    let n = benchmark.len();
    if n == 0 {
        return Err(Error::input("sweep over an empty benchmark"));
    }
    if policy.selection == Selection::None {
        return Err(Error::input("a re-query sweep needs smart or combined selection"));
    }
    let instances = benchmark.instances();
    let prepared = instances.iter().map(|i| prepare(i, policy)).collect::<Result<Vec<_>>>()?;

    let mut states = Vec::with_capacity(n);
    for (inst, prep) in instances.iter().zip(&prepared) {
        let (fusion, loss) = match policy.selection {
            Selection::Combined => {
                let mut fusion = LogFusion::new(prep.dists[0].len());
                fusion.add(&prep.dists[0])?;
                let loss = inst.loss(&prep.dists[0])?;
                (Some(fusion), loss)
            }
            _ => (None, prep.losses[0]),
        };
        let priority = match options.priority_mode {
            PriorityMode::Oracle => f64::from(loss),
            _ => prep.priorities[0].value(),
        };
        states.push(SweepState {
            used: vec![0],
            unused_pool: (0..inst.pool.len()).collect(),
            requeries: 0,
            fusion,
            loss,
            priority,
        });
    }

    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by(|&a, &b| instances[a].instance_id.cmp(&instances[b].instance_id));

    let mut total_loss: u64 = states.iter().map(|s| u64::from(s.loss)).sum();
    let mut values = vec![total_loss as f64 / n as f64];
    let mut steps = Vec::new();
    let mut truncated = false;

    for step in 1..=n {
        let eligible = |i: usize| {
            !instances[i].pool.is_empty() && (policy.selection != Selection::Smart || states[i].requeries == 0)
        };
        let mut target: Option<usize> = None;
        for &i in &by_id {
            if eligible(i) && target.is_none_or(|t| states[i].priority > states[t].priority) {
                target = Some(i);
            }
        }
        let Some(t) = target else {
            truncated = true;
            break;
        };

        let inst = &instances[t];
        let prep = &prepared[t];
        let state = &mut states[t];
        let selected_priority = state.priority;

        let pool_idx = if state.unused_pool.is_empty() {
            rng.random_range(0..inst.pool.len())
        } else {
            let j = rng.random_range(0..state.unused_pool.len());
            state.unused_pool.remove(j)
        };
        let expr = pool_idx + 1;
        state.used.push(expr);
        state.requeries += 1;

        total_loss -= u64::from(state.loss);
        match policy.selection {
            Selection::Combined => {
                let fusion = state.fusion.as_mut().expect("combined sweep keeps a fusion");
                fusion.add(&prep.dists[expr])?;
                let fused = fusion.distribution()?;
                state.loss = inst.loss(&fused)?;
                if options.priority_mode == PriorityMode::Current {
                    state.priority = confidence::score(&fused, policy.measure).value();
                }
            }
            _ => {
                // smallest priority among used expressions, earliest on ties
                let mut best = state.used[0];
                for &u in &state.used[1..] {
                    if prep.priorities[u].value() < prep.priorities[best].value() {
                        best = u;
                    }
                }
                state.loss = prep.losses[best];
                if options.priority_mode == PriorityMode::Current {
                    state.priority = prep.priorities[best].value();
                }
            }
        }
        total_loss += u64::from(state.loss);
        if options.priority_mode == PriorityMode::Oracle {
            state.priority = f64::from(state.loss);
        }

        steps.push(SweepStep {
            step,
            instance_id: inst.instance_id.clone(),
            priority: selected_priority,
            expression_id: inst.pool[pool_idx].expression_id.clone(),
        });
        values.push(total_loss as f64 / n as f64);
    }

    Ok(SweepResult { curve: CoverageCurve::from_values(n, values)?, total_requeries: steps.len(), steps, truncated })
}

/// Largest grid coverage `c` such that combined replacement has strictly lower RMAE
/// than smart replacement at every common grid point below `c`. `None` when smart is
/// at least as good at the lowest common coverage.
pub fn crossover_coverage(combined: &CoverageCurve, smart: &CoverageCurve) -> Result<Option<f64>> {
    if combined.grid_size() != smart.grid_size() {
        return Err(Error::input(format!(
            "curves on different grids ({} vs {} points)",
            combined.grid_size(),
            smart.grid_size()
        )));
    }
    let len = combined.points().len().min(smart.points().len());
    if len == 0 {
        return Ok(None);
    }
    let below = |r: usize| combined.points()[r].value < smart.points()[r].value;
    if !below(len - 1) {
        return Ok(None);
    }
    for r in (0..len - 1).rev() {
        if !below(r) {
            return Ok(Some(combined.points()[r].coverage));
        }
    }
    Ok(Some(1.0))
}

/// `sum_c w_c * ln(max(p_c(o), floor))` for every candidate `o`.
pub fn weighted_log_means(pool: &[Distribution], occurrence: Option<&[f64]>) -> Result<Vec<f64>> {
    let first = pool.first().ok_or_else(|| Error::input("convergence over an empty pool"))?;
    let k = first.len();
    if pool.iter().any(|d| d.len() != k) {
        return Err(Error::input("pool distributions differ in length"));
    }
    let uniform;
    let weights = match occurrence {
        Some(w) => {
            if w.len() != pool.len() {
                return Err(Error::input(format!("{} occurrence weights for {} expressions", w.len(), pool.len())));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::input("occurrence weights must be a probability vector"));
            }
            w
        }
        None => {
            uniform = vec![1.0 / pool.len() as f64; pool.len()];
            &uniform[..]
        }
    };
    let mut scores = vec![0.0; k];
    for (d, w) in pool.iter().zip(weights) {
        for (s, p) in scores.iter_mut().zip(d.probs()) {
            *s += w * p.max(PROBABILITY_FLOOR).ln();
        }
    }
    Ok(scores)
}

/// Limit of combined replacement under unlimited re-queries: a one-hot at the
/// candidate with the largest weighted geometric mean. Occurrence defaults to uniform.
pub fn converged_distribution(pool: &[Distribution], occurrence: Option<&[f64]>) -> Result<Distribution> {
    let scores = weighted_log_means(pool, occurrence)?;
    Distribution::one_hot(scores.len(), argmax(&scores))
}

/// Accuracy (percent) reachable with unlimited re-queries, treating each instance's
/// initial and pool expressions as the full set of phrasings.
pub fn converged_accuracy(benchmark: &Benchmark, policy: &SelectionPolicy) -> Result<f64> {
    if benchmark.is_empty() {
        return Err(Error::input("accuracy of an empty benchmark"));
    }
    let mut correct = 0usize;
    for inst in benchmark.instances() {
        let evidence: Vec<&ExpressionEvidence> = inst.expressions().collect();
        let loss = match policy.selection {
            Selection::None => inst.evidence_loss(&inst.initial, policy.distribution)?,
            Selection::Smart => {
                let i = smart_select(&evidence, policy.distribution, policy.measure)?;
                inst.evidence_loss(evidence[i], policy.distribution)?
            }
            Selection::Combined => {
                let dists = evidence
                    .iter()
                    .map(|e| {
                        if e.is_direct() {
                            return Err(combined_incompatible(e));
                        }
                        confidence::build(e, policy.distribution)
                    })
                    .collect::<Result<Vec<_>>>()?;
                inst.loss(&converged_distribution(&dists, None)?)?
            }
        };
        if loss == geometry::CORRECT {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / benchmark.len() as f64)
}
