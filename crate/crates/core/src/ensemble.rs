//! Decoding per-level class distributions into hierarchical labels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy, PathScorer};

/// Row sums of normalized distributions must be within this of 1.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

const CHUNK: usize = 4096;

/// Per-level probability rows for a batch of points.
///
/// `level(pos)` is a row-major `points × width(pos)` matrix. Rows are always
/// non-negative and sum to 1 within [`NORMALIZED_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDistributions {
    points: usize,
    widths: Vec<usize>,
    data: Vec<Vec<f64>>,
}

impl LevelDistributions {
    /// Wraps already-normalized rows, rejecting any row that is negative,
    /// non-finite, or does not sum to 1.
    pub fn new(points: usize, widths: Vec<usize>, data: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(points, &widths, &data)?;
        for (pos, (level, &w)) in data.iter().zip(&widths).enumerate() {
            for (row_idx, row) in level.chunks_exact(w.max(1)).enumerate() {
                check_row(row, pos, row_idx)?;
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > NORMALIZED_TOLERANCE {
                    return Err(Error::shape(format!(
                        "level {} row {row_idx} sums to {sum}, expected 1",
                        pos + 1
                    )));
                }
            }
        }
        Ok(LevelDistributions { points, widths, data })
    }

    /// Normalizes non-negative scores per row. An all-zero row becomes uniform.
    pub fn from_unnormalized(points: usize, widths: Vec<usize>, mut data: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(points, &widths, &data)?;
        for (pos, (level, &w)) in data.iter_mut().zip(&widths).enumerate() {
            for (row_idx, row) in level.chunks_exact_mut(w.max(1)).enumerate() {
                check_row(row, pos, row_idx)?;
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|v| *v /= sum);
                } else {
                    let u = 1.0 / w as f64;
                    row.iter_mut().for_each(|v| *v = u);
                }
            }
        }
        Ok(LevelDistributions { points, widths, data })
    }

    /// Row-wise softmax of raw per-level scores.
    pub fn softmax(points: usize, widths: Vec<usize>, mut data: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(points, &widths, &data)?;
        for (pos, (level, &w)) in data.iter_mut().zip(&widths).enumerate() {
            for (row_idx, row) in level.chunks_exact_mut(w.max(1)).enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("level {} row {row_idx}", pos + 1)));
                }
                softmax_in_place(row);
            }
        }
        Ok(LevelDistributions { points, widths, data })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Row-major matrix for the level at 0-based position `pos`.
    pub fn level(&self, pos: usize) -> &[f64] {
        &self.data[pos]
    }

    pub fn row(&self, pos: usize, point: usize) -> &[f64] {
        let w = self.widths[pos];
        &self.data[pos][point * w..(point + 1) * w]
    }

    pub fn prob(&self, pos: usize, point: usize, class: usize) -> f64 {
        self.data[pos][point * self.widths[pos] + class]
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.data
    }

    pub fn check_against(&self, h: &LabelHierarchy) -> Result<()> {
        let expected = h.widths();
        if self.widths != expected {
            return Err(Error::shape(format!(
                "distribution level widths {:?} do not match hierarchy widths {:?}",
                self.widths, expected
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn check_shape(points: usize, widths: &[usize], data: &[Vec<f64>]) -> Result<()> {
    if widths.len() != data.len() {
        return Err(Error::shape(format!(
            "{} level widths but {} level matrices",
            widths.len(),
            data.len()
        )));
    }
    for (pos, (&w, level)) in widths.iter().zip(data).enumerate() {
        if w == 0 {
            return Err(Error::shape(format!("level {} has zero classes", pos + 1)));
        }
        if level.len() != points * w {
            return Err(Error::shape(format!(
                "level {} holds {} values, expected {points} x {w}",
                pos + 1,
                level.len()
            )));
        }
    }
    Ok(())
}

fn check_row(row: &[f64], pos: usize, row_idx: usize) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::shape(format!(
            "level {} row {row_idx} has invalid probability {v}",
            pos + 1
        )));
    }
    Ok(())
}

/// Decodes every point to the root-to-leaf path with the largest summed
/// probability, breaking ties toward the smallest leaf index.
pub fn hierarchical_ensemble(h: &LabelHierarchy, d: &LevelDistributions) -> Result<Vec<HierLabel>> {
    hierarchical_ensemble_weighted(h, d, None)
}

/// As [`hierarchical_ensemble`], scaling each level's probabilities by a
/// non-negative weight before summing. `None` means every weight is 1.
pub fn hierarchical_ensemble_weighted(
    h: &LabelHierarchy,
    d: &LevelDistributions,
    weights: Option<&[f64]>,
) -> Result<Vec<HierLabel>> {
    d.check_against(h)?;
    if let Some(w) = weights {
        if w.len() != h.depth() {
            return Err(Error::shape(format!(
                "{} level weights for {} levels",
                w.len(),
                h.depth()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("level weights must be finite and non-negative".into()));
        }
    }
    let starts: Vec<usize> = (0..d.points()).step_by(CHUNK).collect();
    let chunks: Vec<Vec<HierLabel>> = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(d.points());
            let mut scorer = PathScorer::new(h);
            (start..end)
                .map(|point| {
                    let (leaf, _) = scorer.best_leaf(h, |pos, class| {
                        let p = d.prob(pos, point, class);
                        match weights {
                            Some(w) => w[pos] * p,
                            None => p,
                        }
                    });
                    h.leaf_path(leaf).clone()
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Independent per-level argmax (smallest class index on ties). The result
/// need not be a tree path.
pub fn mc_decision(h: &LabelHierarchy, d: &LevelDistributions) -> Result<Vec<HierLabel>> {
    d.check_against(h)?;
    Ok((0..d.points())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|point| HierLabel((0..d.depth()).map(|pos| argmax(d.row(pos, point))).collect()))
        .collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::consistency_proportion;

    fn two_level() -> LabelHierarchy {
        LabelHierarchy::parse(
            "levels 2\nlevel 1: A,B\nlevel 2: a1,a2,b1\n\
             edge 2:a1 -> 1:A\nedge 2:a2 -> 1:A\nedge 2:b1 -> 1:B\n",
        )
        .unwrap()
    }

    fn enumerate_best(h: &LabelHierarchy, d: &LevelDistributions, point: usize) -> HierLabel {
        let mut best: Option<(f64, &HierLabel)> = None;
        for p in h.fc_paths() {
            let s: f64 = p.values().iter().enumerate().map(|(pos, &c)| d.prob(pos, point, c)).sum();
            if best.map_or(true, |(b, _)| s > b) {
                best = Some((s, p));
            }
        }
        best.unwrap().1.clone()
    }

    #[test]
    fn tie_goes_to_smaller_leaf() {
        let h = two_level();
        let d = LevelDistributions::new(1, vec![2, 3], vec![vec![0.5, 0.5], vec![0.0, 0.5, 0.5]]).unwrap();
        // path scores: 0.5, 1.0, 1.0
        assert_eq!(enumerate_best(&h, &d, 0), HierLabel(vec![0, 1]));
        assert_eq!(hierarchical_ensemble(&h, &d).unwrap(), vec![HierLabel(vec![0, 1])]);
    }

    #[test]
    fn one_hot_path_is_recovered() {
        let h = LabelHierarchy::campus3d();
        for path in h.fc_paths() {
            let data = h
                .widths()
                .iter()
                .enumerate()
                .map(|(pos, &w)| (0..w).map(|c| if c == path.0[pos] { 1.0 } else { 0.0 }).collect())
                .collect();
            let d = LevelDistributions::new(1, h.widths(), data).unwrap();
            assert_eq!(&hierarchical_ensemble(&h, &d).unwrap()[0], path);
            assert_eq!(&mc_decision(&h, &d).unwrap()[0], path);
        }
    }

    #[test]
    fn uniform_campus_picks_first_leaf() {
        let h = LabelHierarchy::campus3d();
        let data = h.widths().iter().map(|&w| vec![1.0 / w as f64; w]).collect();
        let d = LevelDistributions::new(1, h.widths(), data).unwrap();
        assert_eq!(&hierarchical_ensemble(&h, &d).unwrap()[0], h.leaf_path(0));
    }

    #[test]
    fn mc_can_be_inconsistent() {
        let h = LabelHierarchy::campus3d();
        let peak = |level: usize, name: &str| {
            let w = h.width(level);
            let hot = h.class_ref(level, name).unwrap().index;
            (0..w).map(|c| if c == hot { 0.9 } else { 0.1 / (w - 1) as f64 }).collect::<Vec<_>>()
        };
        let data = vec![
            peak(1, "ground"),
            peak(2, "construction"),
            peak(3, "construction"),
            peak(4, "building"),
            peak(5, "roof"),
        ];
        let d = LevelDistributions::new(1, h.widths(), data).unwrap();
        let mc = mc_decision(&h, &d).unwrap();
        let cp = consistency_proportion(&h, &mc[0]);
        assert_eq!((cp.agree, cp.depth), (4, 5));
        let he = hierarchical_ensemble(&h, &d).unwrap();
        assert!(h.is_fully_consistent(&he[0]));
        assert_eq!(h.classes(5)[he[0].leaf()], "roof");
    }

    #[test]
    fn single_level_mc_is_argmax() {
        let h = LabelHierarchy::parse("levels 1\nlevel 1: a,b,c\n").unwrap();
        let d = LevelDistributions::new(2, vec![3], vec![vec![0.2, 0.5, 0.3, 0.4, 0.4, 0.2]]).unwrap();
        assert_eq!(mc_decision(&h, &d).unwrap(), vec![HierLabel(vec![1]), HierLabel(vec![0])]);
    }

    #[test]
    fn weights_change_decision() {
        let h = two_level();
        let d = LevelDistributions::new(1, vec![2, 3], vec![vec![0.1, 0.9], vec![0.5, 0.45, 0.05]]).unwrap();
        assert_eq!(hierarchical_ensemble(&h, &d).unwrap()[0], HierLabel(vec![1, 2]));
        let w = [0.1, 1.0];
        assert_eq!(
            hierarchical_ensemble_weighted(&h, &d, Some(&w)).unwrap()[0],
            HierLabel(vec![0, 0])
        );
    }

    #[test]
    fn shape_errors() {
        let h = two_level();
        let d = LevelDistributions::new(1, vec![2, 2], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(hierarchical_ensemble(&h, &d), Err(Error::Shape(_))));
        assert!(matches!(mc_decision(&h, &d), Err(Error::Shape(_))));
        assert!(LevelDistributions::new(1, vec![2], vec![vec![0.5, 0.6]]).is_err());
        assert!(LevelDistributions::new(1, vec![2], vec![vec![0.5]]).is_err());
        assert!(LevelDistributions::new(1, vec![2], vec![vec![-0.5, 1.5]]).is_err());
    }

    #[test]
    fn unnormalized_rows_are_scaled() {
        let d = LevelDistributions::from_unnormalized(2, vec![2], vec![vec![1.0, 3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(d.level(0), &[0.25, 0.75, 0.5, 0.5]);
    }

    #[test]
    fn empty_batch() {
        let h = LabelHierarchy::campus3d();
        let d = LevelDistributions::new(0, h.widths(), vec![Vec::new(); 5]).unwrap();
        assert!(hierarchical_ensemble(&h, &d).unwrap().is_empty());
    }
}
