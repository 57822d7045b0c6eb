//! Brute-force reference simulator. Works from the raw numbers in a benchmark and
//! shares no code with the library beyond its data types.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use requery_core::dataset::ExpressionEvidence;
use requery_core::{BBox, Benchmark, Instance};

pub const FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dist {
    Single,
    DropoutMean,
    VariationRatio,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Score {
    Softmax,
    Entropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Smart,
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Current,
    Initial,
    Oracle,
}

fn coords(b: &BBox) -> [f64; 4] {
    [b.x_min(), b.y_min(), b.x_max(), b.y_max()]
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (a, b) = (coords(a), coords(b));
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn box_loss(pred: &BBox, gold: &BBox) -> u32 {
    if iou(pred, gold) > 0.5 {
        0
    } else {
        100
    }
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn distribution(e: &ExpressionEvidence, d: Dist) -> Vec<f64> {
    match d {
        Dist::Single => normalized(e.single_pass.clone().unwrap()),
        Dist::DropoutMean => {
            let rows = e.dropout_samples.as_ref().unwrap();
            let mut sum = vec![0.0; rows[0].len()];
            for row in rows {
                for k in 0..row.len() {
                    sum[k] += row[k];
                }
            }
            normalized(sum.into_iter().map(|s| s / rows.len() as f64).collect())
        }
        Dist::VariationRatio => {
            let rows = e.dropout_samples.as_ref().unwrap();
            let mut votes = vec![0usize; rows[0].len()];
            for row in rows {
                votes[first_max(row)] += 1;
            }
            normalized(votes.into_iter().map(|v| v as f64 / rows.len() as f64).collect())
        }
    }
}

pub fn score(p: &[f64], s: Score) -> f64 {
    match s {
        Score::Softmax => -p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Score::Entropy => {
            let mut h = 0.0;
            for &x in p {
                if x > 0.0 {
                    h += x * x.ln();
                }
            }
            -h
        }
    }
}

pub fn priority(e: &ExpressionEvidence, d: Dist, s: Score) -> f64 {
    match &e.direct {
        Some(direct) => -direct.confidence,
        None => score(&distribution(e, d), s),
    }
}

pub fn dist_loss(inst: &Instance, p: &[f64]) -> u32 {
    box_loss(&inst.candidates[first_max(p)], &inst.gold_box)
}

pub fn expr_loss(inst: &Instance, e: &ExpressionEvidence, d: Dist) -> u32 {
    match &e.direct {
        Some(direct) => box_loss(&direct.bbox, &inst.gold_box),
        None => dist_loss(inst, &distribution(e, d)),
    }
}

fn expr(inst: &Instance, i: usize) -> &ExpressionEvidence {
    if i == 0 {
        &inst.initial
    } else {
        &inst.pool[i - 1]
    }
}

/// Product of floored distributions, accumulated as log sums in the given order.
/// One distribution fuses to itself.
pub fn fuse(ps: &[Vec<f64>]) -> Vec<f64> {
    if ps.len() == 1 {
        return ps[0].clone();
    }
    let k = ps[0].len();
    let mut logs = vec![0.0; k];
    for p in ps {
        for j in 0..k {
            logs[j] += p[j].max(FLOOR).ln();
        }
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalized(logs.iter().map(|l| (l - m).exp()).collect())
}

/// Loss and priority of an instance after using expressions `used`, in order.
pub fn session(inst: &Instance, used: &[usize], policy: Policy, d: Dist, s: Score) -> (u32, f64) {
    match policy {
        Policy::Smart => {
            let mut best = used[0];
            for &u in used {
                if priority(expr(inst, u), d, s) < priority(expr(inst, best), d, s) {
                    best = u;
                }
            }
            (expr_loss(inst, expr(inst, best), d), priority(expr(inst, best), d, s))
        }
        Policy::Combined => {
            let ps: Vec<Vec<f64>> = used.iter().map(|&u| distribution(expr(inst, u), d)).collect();
            let fused = fuse(&ps);
            (dist_loss(inst, &fused), score(&fused, s))
        }
    }
}

pub fn coverage(n: usize, r: usize) -> f64 {
    (n - r) as f64 / n as f64
}

/// MAE at `r = 0..n` re-queries when instances are re-queried in `order`.
pub fn mae_for_order(aes: &[u32], order: &[usize]) -> Vec<f64> {
    let n = aes.len();
    (0..n)
        .map(|r| {
            let total: u64 = order[r..].iter().map(|&i| u64::from(aes[i])).sum();
            total as f64 / (n - r) as f64
        })
        .collect()
}

pub fn area(values: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for &v in values.iter().take(n) {
        s += v;
    }
    s / n as f64
}

/// Re-query order by repeatedly taking the highest priority, lowest id on ties.
pub fn greedy_order(ids: &[String], priorities: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..ids.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut pick = 0;
        for j in 1..left.len() {
            let (a, b) = (left[j], left[pick]);
            if priorities[a] > priorities[b] || (priorities[a] == priorities[b] && ids[a] < ids[b]) {
                pick = j;
            }
        }
        order.push(left.remove(pick));
    }
    order
}

pub struct Mae {
    pub aes: Vec<u32>,
    pub values: Vec<f64>,
    pub area: f64,
}

pub fn mae(b: &Benchmark, d: Dist, s: Score) -> Mae {
    let insts = b.instances();
    let aes: Vec<u32> = insts.iter().map(|i| expr_loss(i, &i.initial, d)).collect();
    let pr: Vec<f64> = insts.iter().map(|i| priority(&i.initial, d, s)).collect();
    let ids: Vec<String> = insts.iter().map(|i| i.instance_id.clone()).collect();
    let values = mae_for_order(&aes, &greedy_order(&ids, &pr));
    let area = area(&values, insts.len());
    Mae { aes, values, area }
}

pub fn rmae(b: &Benchmark, sessions: &[Vec<usize>], policy: Option<Policy>, d: Dist, s: Score) -> f64 {
    let mut total = 0u64;
    for (inst, used) in b.instances().iter().zip(sessions) {
        total += u64::from(match policy {
            None => expr_loss(inst, &inst.initial, d),
            Some(p) => session(inst, used, p, d, s).0,
        });
    }
    total as f64 / b.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub instance_id: String,
    pub priority: f64,
    pub expression_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub values: Vec<f64>,
    pub steps: Vec<Step>,
    pub truncated: bool,
}

/// Step-by-step sweep; every quantity is recomputed from scratch at each step.
pub fn sweep(b: &Benchmark, policy: Policy, d: Dist, s: Score, mode: Mode, seed: u64) -> Sweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let insts = b.instances();
    let n = insts.len();
    let mut used: Vec<Vec<usize>> = vec![vec![0]; n];
    let mut unused: Vec<Vec<usize>> = insts.iter().map(|i| (1..=i.pool.len()).collect()).collect();
    let state = |i: usize, used: &[usize]| session(&insts[i], used, policy, d, s);
    let prio = |i: usize, used: &[usize]| match mode {
        Mode::Current => state(i, used).1,
        Mode::Initial => priority(&insts[i].initial, d, s),
        Mode::Oracle => f64::from(state(i, used).0),
    };
    let total = |used: &[Vec<usize>]| -> f64 {
        let t: u64 = (0..n).map(|i| u64::from(state(i, &used[i]).0)).sum();
        t as f64 / n as f64
    };

    let mut values = vec![total(&used)];
    let mut steps = Vec::new();
    let mut truncated = false;
    while steps.len() < n {
        let mut pick: Option<usize> = None;
        for i in 0..n {
            let ok = !insts[i].pool.is_empty() && (policy == Policy::Combined || used[i].len() == 1);
            if !ok {
                continue;
            }
            pick = match pick {
                None => Some(i),
                Some(p) => {
                    let (pi, pp) = (prio(i, &used[i]), prio(p, &used[p]));
                    if pi > pp || (pi == pp && insts[i].instance_id < insts[p].instance_id) {
                        Some(i)
                    } else {
                        Some(p)
                    }
                }
            };
        }
        let Some(t) = pick else {
            truncated = true;
            break;
        };
        let selected = prio(t, &used[t]);
        let e = if unused[t].is_empty() {
            1 + rng.random_range(0..insts[t].pool.len())
        } else {
            let j = rng.random_range(0..unused[t].len());
            unused[t].remove(j)
        };
        used[t].push(e);
        steps.push(Step {
            instance_id: insts[t].instance_id.clone(),
            priority: selected,
            expression_id: insts[t].pool[e - 1].expression_id.clone(),
        });
        values.push(total(&used));
    }
    Sweep { values, steps, truncated }
}

/// `sum_c w_c ln(max(p_c, floor))` per candidate, with uniform weights.
pub fn weighted_log_means(pool: &[Vec<f64>]) -> Vec<f64> {
    let w = 1.0 / pool.len() as f64;
    (0..pool[0].len()).map(|o| pool.iter().map(|p| w * p[o].max(FLOOR).ln()).sum()).collect()
}
