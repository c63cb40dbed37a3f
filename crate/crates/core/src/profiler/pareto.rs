//! Pareto-front extraction, tradeoff selection and hypervolume.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::TradeoffPoint;
use crate::error::{Error, Result};

/// Indices of the non-dominated entries of `(quality, cost_reduction, hash)`,
/// ordered by decreasing quality.
///
/// Entries equal on both coordinates collapse to the one with the smallest
/// hash.
pub fn pareto_indices(points: &[(f64, f64, &str)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (qa, ca, ha) = points[a];
        let (qb, cb, hb) = points[b];
        qb.total_cmp(&qa)
            .then(cb.total_cmp(&ca))
            .then(ha.cmp(hb))
    });
    let mut best_cost = f64::NEG_INFINITY;
    let mut front = Vec::new();
    for i in order {
        let cost = points[i].1;
        // Everything seen so far has quality >= this one; it survives only
        // by beating all of them on cost.
        if cost > best_cost {
            best_cost = cost;
            front.push(i);
        }
    }
    front
}

/// Non-dominated points. `P` dominates `Q` when it is at least as good on
/// both quality and cost reduction and strictly better on one.
pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let coords: Vec<(f64, f64, &str)> = points
        .iter()
        .map(|p| (p.quality, p.cost_reduction, p.config_hash.as_str()))
        .collect();
    pareto_indices(&coords)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffWeights {
    pub quality: f64,
    pub cost: f64,
}

impl TradeoffWeights {
    pub const BALANCED: Self = Self {
        quality: 1.0,
        cost: 1.0,
    };
    pub const QUALITY_FOCUS: Self = Self {
        quality: 1.0,
        cost: 0.0,
    };
    pub const COST_FOCUS: Self = Self {
        quality: 0.0,
        cost: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.quality) || !ok(self.cost) || self.quality + self.cost == 0.0 {
            return Err(Error::Config(
                "tradeoff weights must be nonnegative and not both zero".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TradeoffWeights {
    fn default() -> Self {
        Self::BALANCED
    }
}

/// Upper ends of the normalization ranges. `None` uses the front's maximum;
/// an anchor below the front's maximum is raised to it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub quality_max: Option<f64>,
    pub cost_max: Option<f64>,
}

fn normalizer(values: impl Iterator<Item = f64> + Clone, anchor: Option<f64>) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let hi = anchor.map_or(hi, |a| a.max(hi));
    let span = hi - lo;
    move |v| if span > 0.0 { (v - lo) / span } else { 0.0 }
}

/// Weighted scores `w_q·q̂ + w_c·ĉ` after min-max normalization.
pub fn tradeoff_scores(coords: &[(f64, f64)], weights: TradeoffWeights, anchors: Anchors) -> Vec<f64> {
    let nq = normalizer(coords.iter().map(|c| c.0), anchors.quality_max);
    let nc = normalizer(coords.iter().map(|c| c.1), anchors.cost_max);
    coords
        .iter()
        .map(|&(q, c)| weights.quality * nq(q) + weights.cost * nc(c))
        .collect()
}

/// Index of the best-scoring entry; ties go to the earliest.
pub fn choose_index(coords: &[(f64, f64)], weights: TradeoffWeights, anchors: Anchors) -> Result<usize> {
    if coords.is_empty() {
        return Err(Error::EmptyFront);
    }
    let scores = tradeoff_scores(coords, weights, anchors);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.total_cmp(&scores[best]) == Ordering::Greater {
            best = i;
        }
    }
    Ok(best)
}

/// The front member with the highest weighted normalized score, each
/// coordinate min-max normalized over the front.
pub fn choose_tradeoff(front: &[TradeoffPoint], weights: TradeoffWeights) -> Result<&TradeoffPoint> {
    choose_tradeoff_anchored(front, weights, Anchors::default())
}

pub fn choose_tradeoff_anchored(
    front: &[TradeoffPoint],
    weights: TradeoffWeights,
    anchors: Anchors,
) -> Result<&TradeoffPoint> {
    let coords: Vec<(f64, f64)> = front.iter().map(|p| (p.quality, p.cost_reduction)).collect();
    Ok(&front[choose_index(&coords, weights, anchors)?])
}

/// Area dominated by `points` (each `(x, y)` clamped to `[0, 1]²`) relative
/// to the origin.
pub fn hypervolume(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)))
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut top = 0.0;
    for (x, y) in pts {
        if y > top {
            area += x * (y - top);
            top = y;
        }
    }
    area
}
