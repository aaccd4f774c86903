//! Synthetic ground truth and classifier outputs with controllable noise.
//!
//! Everything here is a pure function of the spec and its seed. Points are
//! generated in fixed-size chunks, each with its own RNG stream, so output
//! does not depend on the thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::cloud::{CloudLabels, PointCloud};
use crate::ensemble::LevelDistributions;
use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy};
use crate::sampling::stream_rng;

const CHUNK: usize = 4096;
const SCENE_EXTENT: [f64; 3] = [100.0, 100.0, 30.0];
const BLOB_HALF_WIDTH: f64 = 2.0;
// Stream offsets keep ground-truth and prediction draws independent.
const GT_STREAM: u64 = 1;
const PRED_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    /// Points uniform in a 100 x 100 x 30 m box.
    Uniform,
    /// `blobs_per_class` compact blobs per labelled leaf class; each blob is
    /// one instance.
    Clustered { blobs_per_class: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub points: usize,
    pub geometry: Geometry,
    /// Probability that a point's leaf class is replaced by a random one.
    pub label_noise: f64,
    /// Probability that a point's predicted levels are corrupted
    /// independently of each other.
    pub inconsistency: f64,
    /// Weight of the predicted class relative to each other class (which
    /// weighs 1). Infinity gives one-hot rows.
    pub sharpness: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(points: usize, seed: u64) -> Self {
        SynthSpec {
            points,
            geometry: Geometry::Uniform,
            label_noise: 0.0,
            inconsistency: 0.0,
            sharpness: 8.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("label noise", self.label_noise), ("inconsistency", self.inconsistency)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("{name} rate {rate} outside [0, 1]")));
            }
        }
        if self.sharpness.is_nan() || self.sharpness <= 0.0 {
            return Err(Error::InvalidArgument(format!("sharpness must be positive, got {}", self.sharpness)));
        }
        if let Geometry::Clustered { blobs_per_class: 0 } = self.geometry {
            return Err(Error::InvalidArgument("clustered geometry needs at least one blob per class".into()));
        }
        Ok(())
    }
}

fn labelled_leaves(h: &LabelHierarchy) -> Vec<usize> {
    let depth = h.depth();
    let leaves: Vec<usize> = (0..h.leaf_count()).filter(|&l| !h.is_ignored(depth, l)).collect();
    if leaves.is_empty() {
        (0..h.leaf_count()).collect()
    } else {
        leaves
    }
}

type GeneratedChunk = (Vec<[f64; 3]>, Vec<u16>, Vec<i32>);

fn chunk_ranges(n: usize) -> Vec<(u64, usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .enumerate()
        .map(|(k, start)| (k as u64, start, (start + CHUNK).min(n)))
        .collect()
}

/// Cloud with leaf labels (every point's label tuple is a tree path) and,
/// for clustered geometry, one instance id per blob.
pub fn gen_ground_truth(h: &LabelHierarchy, spec: &SynthSpec) -> Result<PointCloud> {
    spec.validate()?;
    let leaves = labelled_leaves(h);
    let blobs: Vec<(usize, [f64; 3])> = match spec.geometry {
        Geometry::Uniform => Vec::new(),
        Geometry::Clustered { blobs_per_class } => {
            let mut rng = stream_rng(spec.seed, 0);
            leaves
                .iter()
                .flat_map(|&leaf| std::iter::repeat_n(leaf, blobs_per_class))
                .map(|leaf| (leaf, random_point(&mut rng)))
                .collect()
        }
    };

    let chunks: Vec<GeneratedChunk> = chunk_ranges(spec.points)
        .into_par_iter()
        .map(|(k, start, end)| {
            let mut rng = stream_rng(spec.seed, GT_STREAM + k);
            let mut xyz = Vec::with_capacity(end - start);
            let mut labels = Vec::with_capacity(end - start);
            let mut ids = Vec::with_capacity(end - start);
            for _ in start..end {
                let (mut leaf, p, mut id) = if blobs.is_empty() {
                    (leaves[rng.gen_range(0..leaves.len())], random_point(&mut rng), -1)
                } else {
                    let b = rng.gen_range(0..blobs.len());
                    let (leaf, c) = blobs[b];
                    let p = [
                        c[0] + rng.gen_range(-BLOB_HALF_WIDTH..BLOB_HALF_WIDTH),
                        c[1] + rng.gen_range(-BLOB_HALF_WIDTH..BLOB_HALF_WIDTH),
                        c[2] + rng.gen_range(-BLOB_HALF_WIDTH..BLOB_HALF_WIDTH),
                    ];
                    (leaf, p, b as i32)
                };
                if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                    let noisy = leaves[rng.gen_range(0..leaves.len())];
                    if noisy != leaf {
                        leaf = noisy;
                        id = -1;
                    }
                }
                xyz.push(p);
                labels.push(leaf as u16);
                ids.push(id);
            }
            (xyz, labels, ids)
        })
        .collect();

    let mut pc = PointCloud::default();
    let mut labels = Vec::with_capacity(spec.points);
    let mut ids = Vec::with_capacity(spec.points);
    for (xyz, l, i) in chunks {
        pc.xyz.extend(xyz);
        labels.extend(l);
        ids.extend(i);
    }
    pc.labels = Some(CloudLabels::Leaf(labels));
    if matches!(spec.geometry, Geometry::Clustered { .. }) {
        pc.instance = Some(ids);
    }
    Ok(pc)
}

fn random_point(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.gen_range(0.0..SCENE_EXTENT[0]),
        rng.gen_range(0.0..SCENE_EXTENT[1]),
        rng.gen_range(0.0..SCENE_EXTENT[2]),
    ]
}

/// Simulated per-level classifier output for ground truth `gt`.
///
/// Each row puts weight `sharpness` on one class and weight 1 on every other
/// class. That class is the true one, except on points selected with
/// probability `inconsistency`, where every level independently draws a
/// uniformly random class instead.
pub fn gen_predictions(h: &LabelHierarchy, spec: &SynthSpec, gt: &[HierLabel]) -> Result<LevelDistributions> {
    spec.validate()?;
    for (i, l) in gt.iter().enumerate() {
        h.check_label(l, i)?;
    }
    let widths = h.widths();
    let depth = h.depth();
    let rows: Vec<Vec<usize>> = chunk_ranges(gt.len())
        .into_par_iter()
        .map(|(k, start, end)| {
            let mut rng = stream_rng(spec.seed, PRED_STREAM + k);
            let mut out = Vec::with_capacity((end - start) * depth);
            for label in &gt[start..end] {
                let corrupt = spec.inconsistency > 0.0 && rng.gen_bool(spec.inconsistency);
                for (pos, &w) in widths.iter().enumerate() {
                    out.push(if corrupt { rng.gen_range(0..w) } else { label.0[pos] });
                }
            }
            out
        })
        .collect();
    let targets: Vec<usize> = rows.into_iter().flatten().collect();

    let data = widths
        .iter()
        .enumerate()
        .map(|(pos, &w)| {
            let (hot, cold) = row_values(spec.sharpness, w);
            let mut level = vec![cold; gt.len() * w];
            for i in 0..gt.len() {
                level[i * w + targets[i * depth + pos]] = hot;
            }
            level
        })
        .collect();
    LevelDistributions::new(gt.len(), widths, data)
}

fn row_values(sharpness: f64, width: usize) -> (f64, f64) {
    if width == 1 || sharpness.is_infinite() {
        return (1.0, 0.0);
    }
    let total = sharpness + (width - 1) as f64;
    (sharpness / total, 1.0 / total)
}

/// A random valid hierarchy with `1..=max_depth` levels and at most
/// `max_leaves` leaves. With `with_ignore`, class 0 on every level forms a
/// single ignored chain.
pub fn random_hierarchy(rng: &mut impl Rng, max_depth: usize, max_leaves: usize, with_ignore: bool) -> LabelHierarchy {
    assert!(max_depth >= 1 && max_leaves >= 2);
    let depth = rng.gen_range(1..=max_depth);
    let first = rng.gen_range(if with_ignore { 2 } else { 1 }..=max_leaves.clamp(2, 4));
    let mut parents: Vec<Vec<usize>> = vec![Vec::new()];
    let mut widths = vec![first];
    for _ in 1..depth {
        let above = *widths.last().expect("non-empty");
        let mut budget = max_leaves - above;
        let mut level = Vec::new();
        for p in 0..above {
            let mut kids = 1;
            if !(with_ignore && p == 0) && budget > 0 && rng.gen_bool(0.5) {
                let extra = rng.gen_range(1..=budget.min(3));
                kids += extra;
                budget -= extra;
            }
            level.extend(std::iter::repeat_n(p, kids));
        }
        widths.push(level.len());
        parents.push(level);
    }
    let names = widths
        .iter()
        .enumerate()
        .map(|(pos, &w)| (0..w).map(|i| format!("l{}c{i}", pos + 1)).collect())
        .collect();
    let ignore = vec![with_ignore.then_some(0); depth];
    LabelHierarchy::new(names, parents, ignore).expect("generated hierarchy is valid")
}
