//! Consistency and segmentation metrics.
//!
//! All accumulators keep integer counts and divide only when a value is
//! read, so partial results computed over point chunks can be merged in any
//! order without changing the outcome.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy, PathScorer};

/// Slack applied when comparing a consistency proportion against a float
/// threshold, so that e.g. `alpha = 0.6000000000000001` still admits 3/5.
const ALPHA_SLACK: f64 = 1e-9;

/// Consistency proportion of one label: `agree / depth`, kept as a rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cp {
    pub agree: usize,
    pub depth: usize,
}

impl Cp {
    pub fn value(&self) -> f64 {
        self.agree as f64 / self.depth as f64
    }

    pub fn meets(&self, alpha: f64) -> bool {
        self.agree as f64 >= alpha * self.depth as f64 - ALPHA_SLACK
    }

    pub fn is_full(&self) -> bool {
        self.agree == self.depth
    }
}

impl PartialOrd for Cp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cp {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.agree * other.depth).cmp(&(other.agree * self.depth))
    }
}

/// Computes CP values for many labels, reusing one set of tree buffers.
pub struct CpScorer<'h> {
    hierarchy: &'h LabelHierarchy,
    scorer: PathScorer,
}

impl<'h> CpScorer<'h> {
    pub fn new(hierarchy: &'h LabelHierarchy) -> Self {
        CpScorer {
            hierarchy,
            scorer: PathScorer::new(hierarchy),
        }
    }

    /// Largest number of levels on which `label` agrees with some
    /// root-to-leaf path, over the hierarchy depth.
    pub fn score(&mut self, label: &HierLabel) -> Cp {
        let v = label.values();
        let (_, best) = self
            .scorer
            .best_leaf(self.hierarchy, |pos, class| if v[pos] == class { 1.0 } else { 0.0 });
        Cp {
            agree: best as usize,
            depth: self.hierarchy.depth(),
        }
    }
}

pub fn consistency_proportion(h: &LabelHierarchy, label: &HierLabel) -> Cp {
    CpScorer::new(h).score(label)
}

pub fn consistency_rate(h: &LabelHierarchy, labels: &[HierLabel], alpha: f64) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("consistency rate needs at least one label"));
    }
    let mut stats = ConsistencyStats::new(h.depth());
    stats.accumulate(h, labels);
    Ok(stats.rate(alpha).expect("non-empty"))
}

/// Histogram of consistency proportions: `histogram[k]` counts labels
/// agreeing with their best path on exactly `k` levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyStats {
    histogram: Vec<u64>,
}

impl ConsistencyStats {
    pub fn new(depth: usize) -> Self {
        ConsistencyStats {
            histogram: vec![0; depth + 1],
        }
    }

    pub fn depth(&self) -> usize {
        self.histogram.len() - 1
    }

    pub fn histogram(&self) -> &[u64] {
        &self.histogram
    }

    pub fn add(&mut self, cp: Cp) {
        debug_assert_eq!(cp.depth, self.depth());
        self.histogram[cp.agree] += 1;
    }

    pub fn accumulate(&mut self, h: &LabelHierarchy, labels: &[HierLabel]) {
        let mut scorer = CpScorer::new(h);
        for l in labels {
            self.add(scorer.score(l));
        }
    }

    pub fn merge(&mut self, other: &ConsistencyStats) {
        assert_eq!(self.histogram.len(), other.histogram.len(), "depth mismatch");
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.histogram.iter().sum()
    }

    /// Fraction of labels whose CP is at least `alpha`; `None` when empty.
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let depth = self.depth();
        let hits: u64 = self
            .histogram
            .iter()
            .enumerate()
            .filter(|&(agree, _)| Cp { agree, depth }.meets(alpha))
            .map(|(_, &c)| c)
            .sum();
        Some(hits as f64 / total as f64)
    }
}

/// Confusion counts for one level. Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelConfusion {
    level: usize,
    classes: usize,
    ignore: Option<usize>,
    counts: Vec<u64>,
    ignored: u64,
}

impl LevelConfusion {
    pub fn new(level: usize, classes: usize, ignore: Option<usize>) -> Self {
        LevelConfusion {
            level,
            classes,
            ignore,
            counts: vec![0; classes * classes],
            ignored: 0,
        }
    }

    pub fn for_level(h: &LabelHierarchy, level: usize) -> Self {
        Self::new(level, h.width(level), h.ignore_class(level))
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignore(&self) -> Option<usize> {
        self.ignore
    }

    /// Records one point. Points whose ground truth is the ignore class are
    /// only counted in [`ignored`](Self::ignored).
    pub fn add(&mut self, gt: usize, pred: usize) {
        if Some(gt) == self.ignore {
            self.ignored += 1;
        } else {
            self.counts[gt * self.classes + pred] += 1;
        }
    }

    pub fn accumulate(&mut self, gt: &[usize], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::shape(format!(
                "{} ground-truth labels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        for (i, (&g, &p)) in gt.iter().zip(pred).enumerate() {
            for idx in [g, p] {
                if idx >= self.classes {
                    return Err(Error::IndexOutOfRange {
                        offset: i,
                        level: self.level,
                        index: idx,
                        width: self.classes,
                    });
                }
            }
            self.add(g, p);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &LevelConfusion) {
        assert_eq!(self.classes, other.classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored += other.ignored;
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Evaluated (non-ignored) points.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("every point has an ignored ground-truth class"));
        }
        Ok(self.correct() as f64 / total as f64)
    }

    /// IoU per class; `None` for the ignore class and for classes absent from
    /// both ground truth and predictions.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                if Some(c) == self.ignore {
                    return None;
                }
                let tp = self.count(c, c);
                let row: u64 = (0..self.classes).map(|p| self.count(c, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.count(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::Empty("no class with a defined IoU"));
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Per-point instance ids; negative ids mark points outside every instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    ids: Vec<i64>,
}

impl InstanceSet {
    pub fn new(ids: Vec<i64>) -> Self {
        InstanceSet { ids }
    }

    /// Keeps only the points where `keep` is true; all others get id -1.
    pub fn restricted(ids: &[i64], keep: impl Fn(usize) -> bool) -> Self {
        InstanceSet {
            ids: ids
                .iter()
                .enumerate()
                .map(|(i, &id)| if keep(i) { id } else { -1 })
                .collect(),
        }
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn sizes(&self) -> HashMap<i64, u64> {
        let mut sizes = HashMap::new();
        for &id in self.ids.iter().filter(|&&id| id >= 0) {
            *sizes.entry(id).or_insert(0) += 1;
        }
        sizes
    }
}

/// Weighted coverage: each ground-truth instance contributes its best IoU
/// against any predicted instance, weighted by its share of all
/// ground-truth instance points.
pub fn wcov(gt: &InstanceSet, pred: &InstanceSet) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} ground-truth points vs {} predicted points",
            gt.len(),
            pred.len()
        )));
    }
    let gt_sizes = gt.sizes();
    if gt_sizes.is_empty() {
        return Err(Error::Empty("no ground-truth instances"));
    }
    let pred_sizes = pred.sizes();
    let mut overlap: HashMap<(i64, i64), u64> = HashMap::new();
    for (&g, &p) in gt.ids.iter().zip(&pred.ids) {
        if g >= 0 && p >= 0 {
            *overlap.entry((g, p)).or_insert(0) += 1;
        }
    }
    let mut best: HashMap<i64, f64> = HashMap::new();
    for (&(g, p), &inter) in &overlap {
        let union = gt_sizes[&g] + pred_sizes[&p] - inter;
        let iou = inter as f64 / union as f64;
        let slot = best.entry(g).or_insert(0.0);
        if iou > *slot {
            *slot = iou;
        }
    }
    let total: u64 = gt_sizes.values().sum();
    // Sum in id order so the result does not depend on hash iteration order.
    let mut ids: Vec<i64> = gt_sizes.keys().copied().collect();
    ids.sort_unstable();
    Ok(ids
        .iter()
        .map(|g| gt_sizes[g] as f64 / total as f64 * best.get(g).copied().unwrap_or(0.0))
        .sum())
}
