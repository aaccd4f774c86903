//! Multi-level training objective: weighted per-level cross entropy plus a
//! squared-hinge penalty on tree edges whose child probability exceeds the
//! parent's, with exact gradients through a row softmax.
//!
//! Every term is a mean over points, so the loss scale does not depend on
//! batch size.

use crate::ensemble::{softmax_in_place, LevelDistributions};
use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 0.05;

/// Per-level cross-entropy weights (`beta`, one per level) and per-edge-level
/// consistency weights (`gamma[k]` covers edges between levels `k+1` and `k+2`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl LossWeights {
    /// beta = 1 on every level, gamma = 0.05 on every level pair.
    pub fn standard(depth: usize) -> Self {
        Self::uniform(depth, DEFAULT_BETA, DEFAULT_GAMMA)
    }

    pub fn uniform(depth: usize, beta: f64, gamma: f64) -> Self {
        LossWeights {
            beta: vec![beta; depth],
            gamma: vec![gamma; depth.saturating_sub(1)],
        }
    }

    /// Same weights with the consistency term switched off.
    pub fn without_consistency(&self) -> Self {
        LossWeights {
            beta: self.beta.clone(),
            gamma: vec![0.0; self.gamma.len()],
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.beta.len() != depth || self.gamma.len() != depth.saturating_sub(1) {
            return Err(Error::shape(format!(
                "{} beta and {} gamma weights for {depth} levels (expected {depth} and {})",
                self.beta.len(),
                self.gamma.len(),
                depth.saturating_sub(1)
            )));
        }
        if self.beta.iter().chain(&self.gamma).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A loss evaluation. `prediction_levels` holds the unweighted mean cross
/// entropy of each level; `consistency_levels[k]` the unweighted mean hinge
/// sum over edges between levels `k+1` and `k+2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub prediction: f64,
    pub consistency: f64,
    pub prediction_levels: Vec<f64>,
    pub consistency_levels: Vec<f64>,
}

/// Raw (pre-softmax) per-level scores, row-major like [`LevelDistributions`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScores {
    points: usize,
    widths: Vec<usize>,
    data: Vec<Vec<f64>>,
}

impl LevelScores {
    pub fn new(points: usize, widths: Vec<usize>, data: Vec<Vec<f64>>) -> Result<Self> {
        if widths.len() != data.len() {
            return Err(Error::shape(format!(
                "{} level widths but {} score matrices",
                widths.len(),
                data.len()
            )));
        }
        for (pos, (&w, level)) in widths.iter().zip(&data).enumerate() {
            if w == 0 || level.len() != points * w {
                return Err(Error::shape(format!(
                    "level {} holds {} scores, expected {points} x {w}",
                    pos + 1,
                    level.len()
                )));
            }
            if let Some(i) = level.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "level {} point {} class {}",
                    pos + 1,
                    i / w,
                    i % w
                )));
            }
        }
        Ok(LevelScores { points, widths, data })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn level(&self, pos: usize) -> &[f64] {
        &self.data[pos]
    }

    pub fn level_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.data[pos]
    }

    pub fn softmax(&self) -> LevelDistributions {
        let mut data = self.data.clone();
        for (level, &w) in data.iter_mut().zip(&self.widths) {
            for row in level.chunks_exact_mut(w) {
                softmax_in_place(row);
            }
        }
        LevelDistributions::from_unnormalized(self.points, self.widths.clone(), data)
            .expect("softmax rows are valid")
    }
}

fn check_targets(d: &LevelDistributions, targets: &[HierLabel]) -> Result<()> {
    if d.points() == 0 {
        return Err(Error::Empty("loss over an empty batch"));
    }
    if targets.len() != d.points() {
        return Err(Error::shape(format!(
            "{} targets for {} points",
            targets.len(),
            d.points()
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.depth() != d.depth() {
            return Err(Error::shape(format!(
                "target {i} has {} levels, distributions have {}",
                t.depth(),
                d.depth()
            )));
        }
        for (pos, (&c, &w)) in t.values().iter().zip(d.widths()).enumerate() {
            if c >= w {
                return Err(Error::IndexOutOfRange {
                    offset: i,
                    level: pos + 1,
                    index: c,
                    width: w,
                });
            }
        }
    }
    Ok(())
}

/// Weighted sum over levels of the mean cross entropy against `targets`.
pub fn prediction_loss(d: &LevelDistributions, targets: &[HierLabel], w: &LossWeights) -> Result<LossValue> {
    w.validate(d.depth())?;
    check_targets(d, targets)?;
    let n = d.points() as f64;
    let levels: Vec<f64> = (0..d.depth())
        .map(|pos| {
            targets
                .iter()
                .enumerate()
                .map(|(i, t)| -d.prob(pos, i, t.0[pos]).max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n
        })
        .collect();
    let prediction = levels.iter().zip(&w.beta).map(|(ce, b)| b * ce).sum();
    Ok(LossValue {
        total: prediction,
        prediction,
        consistency: 0.0,
        prediction_levels: levels,
        consistency_levels: vec![0.0; d.depth().saturating_sub(1)],
    })
}

/// Weighted sum over adjacent level pairs of the mean squared hinge
/// `max(P(child) - P(parent), 0)^2`, summed over every tree edge.
pub fn consistency_loss(h: &LabelHierarchy, d: &LevelDistributions, w: &LossWeights) -> Result<LossValue> {
    d.check_against(h)?;
    w.validate(h.depth())?;
    if d.points() == 0 {
        return Err(Error::Empty("loss over an empty batch"));
    }
    let n = d.points() as f64;
    let levels: Vec<f64> = (1..h.depth())
        .map(|pos| {
            let level = pos + 1;
            (0..d.points())
                .map(|i| {
                    (0..h.width(level))
                        .map(|c| {
                            let parent = h.parent_index(level, c);
                            let x = d.prob(pos, i, c) - d.prob(pos - 1, i, parent);
                            if x > 0.0 {
                                x * x
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n
        })
        .collect();
    let consistency = levels.iter().zip(&w.gamma).map(|(v, g)| g * v).sum();
    Ok(LossValue {
        total: consistency,
        prediction: 0.0,
        consistency,
        prediction_levels: vec![0.0; h.depth()],
        consistency_levels: levels,
    })
}

/// Prediction loss plus consistency loss. With all gamma zero this is the
/// prediction loss alone.
pub fn total_loss(
    h: &LabelHierarchy,
    d: &LevelDistributions,
    targets: &[HierLabel],
    w: &LossWeights,
) -> Result<LossValue> {
    let pred = prediction_loss(d, targets, w)?;
    let cons = consistency_loss(h, d, w)?;
    Ok(LossValue {
        total: pred.prediction + cons.consistency,
        prediction: pred.prediction,
        consistency: cons.consistency,
        prediction_levels: pred.prediction_levels,
        consistency_levels: cons.consistency_levels,
    })
}

/// Total loss of `softmax(scores)` and its exact gradient with respect to
/// the raw scores, one matrix per level shaped like the input.
pub fn total_loss_grad(
    h: &LabelHierarchy,
    scores: &LevelScores,
    targets: &[HierLabel],
    w: &LossWeights,
) -> Result<(LossValue, Vec<Vec<f64>>)> {
    let d = scores.softmax();
    let value = total_loss(h, &d, targets, w)?;
    let n = d.points() as f64;

    // Gradient with respect to probabilities.
    let mut grad: Vec<Vec<f64>> = (0..d.depth()).map(|pos| vec![0.0; d.level(pos).len()]).collect();
    let widths = d.widths().to_vec();
    for (i, t) in targets.iter().enumerate() {
        for pos in 0..d.depth() {
            let p = d.prob(pos, i, t.0[pos]);
            if p > PROB_FLOOR {
                grad[pos][i * widths[pos] + t.0[pos]] -= w.beta[pos] / (n * p);
            }
        }
        for pos in 1..d.depth() {
            let level = pos + 1;
            let g = w.gamma[pos - 1];
            for c in 0..widths[pos] {
                let parent = h.parent_index(level, c);
                let x = d.prob(pos, i, c) - d.prob(pos - 1, i, parent);
                if x > 0.0 {
                    let dx = 2.0 * g * x / n;
                    grad[pos][i * widths[pos] + c] += dx;
                    grad[pos - 1][i * widths[pos - 1] + parent] -= dx;
                }
            }
        }
    }

    // Back through the row softmax: ds = p * (dp - <dp, p>).
    for (pos, level) in grad.iter_mut().enumerate() {
        let w = widths[pos];
        for (row_idx, row) in level.chunks_exact_mut(w).enumerate() {
            let p = d.row(pos, row_idx);
            let dot: f64 = row.iter().zip(p).map(|(g, p)| g * p).sum();
            for (g, &p) in row.iter_mut().zip(p) {
                *g = p * (*g - dot);
            }
        }
    }
    Ok((value, grad))
}
