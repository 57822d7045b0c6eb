//! Multimodal re-query: re-queried expressions are answered by a second, reliable
//! input mode, so only the accepted instances contribute error.
//!
//! Curves are indexed by the number of re-queries `r`; the point at index `r` sits at
//! coverage `(n - r) / n`.

use serde::{Deserialize, Serialize};

use crate::confidence::{self, DistributionChoice, Measure, RequeryPriority};
use crate::dataset::Benchmark;
use crate::error::{Error, Result};

/// Additional error of a candidate expression given the gold-standard expression
/// always localizes correctly.
pub fn additional_error(candidate_loss: u32) -> u32 {
    candidate_loss
}

/// `max(candidate_loss - gold_loss, 0)`, for callers that relax the perfect-gold assumption.
pub fn additional_error_relaxed(candidate_loss: u32, gold_loss: u32) -> u32 {
    candidate_loss.saturating_sub(gold_loss)
}

/// Fraction of the initial set accepted without re-query.
pub fn coverage(p_size: usize, r_size: usize) -> Result<f64> {
    if p_size == 0 {
        return Err(Error::input("coverage of an empty set"));
    }
    if r_size > p_size {
        return Err(Error::input(format!("{r_size} re-queries exceed {p_size} expressions")));
    }
    Ok((p_size - r_size) as f64 / p_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub value: f64,
}

/// Metric values on the uniform coverage grid `1, (n-1)/n, ...`, ordered by
/// decreasing coverage, with the rectangular-integral area.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    grid_size: usize,
    points: Vec<CurvePoint>,
    area: f64,
}

impl CoverageCurve {
    /// `values[r]` is the metric after `r` re-queries. At most `grid_size + 1` values.
    pub fn from_values(grid_size: usize, values: Vec<f64>) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::input("curve over an empty set"));
        }
        if values.len() > grid_size + 1 {
            return Err(Error::input(format!("{} curve values exceed grid of size {grid_size}", values.len())));
        }
        let points: Vec<CurvePoint> = values
            .into_iter()
            .enumerate()
            .map(|(r, value)| CurvePoint { coverage: (grid_size - r) as f64 / grid_size as f64, value })
            .collect();
        let area = points.iter().filter(|p| p.coverage > 0.0).map(|p| p.value).sum::<f64>() / grid_size as f64;
        Ok(Self { grid_size, points, area })
    }

    /// Number of initial expressions, `|P|`; the grid step is `1 / grid_size`.
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.value)
    }

    /// Sum of `value / grid_size` over realized points with positive coverage.
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Area restricted to points with coverage at or above `min_coverage`.
    pub fn area_from(&self, min_coverage: f64) -> f64 {
        self.points.iter().filter(|p| p.coverage > 0.0 && p.coverage >= min_coverage).map(|p| p.value).sum::<f64>()
            / self.grid_size as f64
    }

    /// Lowest realized coverage.
    pub fn min_coverage(&self) -> f64 {
        self.points.last().map_or(1.0, |p| p.coverage)
    }

    /// Pointwise mean over curves on the same grid, truncated to the shortest curve.
    pub fn mean(curves: &[CoverageCurve]) -> Result<CoverageCurve> {
        let first = curves.first().ok_or_else(|| Error::input("mean of zero curves"))?;
        if curves.iter().any(|c| c.grid_size != first.grid_size) {
            return Err(Error::input("curves are on different coverage grids"));
        }
        let len = curves.iter().map(|c| c.points.len()).min().unwrap_or(0);
        let values =
            (0..len).map(|r| curves.iter().map(|c| c.points[r].value).sum::<f64>() / curves.len() as f64).collect();
        CoverageCurve::from_values(first.grid_size, values)
    }
}

/// Priority and additional error of one instance's initial expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub instance_id: String,
    pub priority: RequeryPriority,
    pub additional_error: u32,
}

/// Scores every instance's initial expression.
pub fn score_instances(
    benchmark: &Benchmark,
    choice: DistributionChoice,
    measure: Measure,
) -> Result<Vec<ScoredInstance>> {
    benchmark
        .instances()
        .iter()
        .map(|inst| {
            Ok(ScoredInstance {
                instance_id: inst.instance_id.clone(),
                priority: confidence::priority(&inst.initial, choice, measure)?,
                additional_error: additional_error(inst.evidence_loss(&inst.initial, choice)?),
            })
        })
        .collect()
}

/// Indices in re-query order: priority descending, instance id ascending on ties.
pub fn requery_order(scored: &[ScoredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&scored[a], &scored[b]);
        sb.priority.value().total_cmp(&sa.priority.value()).then_with(|| sa.instance_id.cmp(&sb.instance_id))
    });
    order
}

/// MAE at every coverage `1, (n-1)/n, ..., 1/n`; the area is the mean of those values.
pub fn mae_curve(scored: &[ScoredInstance]) -> Result<CoverageCurve> {
    let n = scored.len();
    if n == 0 {
        return Err(Error::input("MAE curve of an empty benchmark"));
    }
    let order = requery_order(scored);
    // suffix[r] = total AE of the instances still accepted after r re-queries
    let mut suffix = vec![0u64; n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] + u64::from(scored[order[r]].additional_error);
    }
    let values = (0..n).map(|r| suffix[r] as f64 / (n - r) as f64).collect();
    CoverageCurve::from_values(n, values)
}

/// Area under the MAE curve for the chosen distribution and measure.
pub fn amae(benchmark: &Benchmark, choice: DistributionChoice, measure: Measure) -> Result<f64> {
    Ok(mae_curve(&score_instances(benchmark, choice, measure)?)?.area())
}

/// Largest coverage at which overall accuracy, counting re-queried instances as
/// correct, reaches `upper_bound_accuracy` (percent).
pub fn coverage_at_upper_bound(scored: &[ScoredInstance], upper_bound_accuracy: f64) -> Result<f64> {
    let n = scored.len();
    if n == 0 {
        return Err(Error::input("coverage of an empty benchmark"));
    }
    if !(0.0..=100.0).contains(&upper_bound_accuracy) {
        return Err(Error::input(format!("upper bound accuracy {upper_bound_accuracy} outside [0, 100]")));
    }
    let order = requery_order(scored);
    let mut correct_accepted = scored.iter().filter(|s| s.additional_error == 0).count();
    for r in 0..=n {
        let accuracy = 100.0 * (correct_accepted + r) as f64 / n as f64;
        if accuracy >= upper_bound_accuracy - 1e-9 {
            return Ok((n - r) as f64 / n as f64);
        }
        if r < n && scored[order[r]].additional_error == 0 {
            correct_accepted -= 1;
        }
    }
    Ok(0.0)
}
