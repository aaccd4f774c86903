//! Point subsampling: voxel-grid reduction, l-w random block sampling (RBS)
//! and random-centered k nearest neighbors (RC-KNN).
//!
//! Random samplers draw from a ChaCha stream selected by `(seed, draw)`, so a
//! batch of samples is reproducible however it is scheduled across threads.

pub mod kdtree;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use kdtree::KdTree;

/// Voxel size used for the reduced benchmark clouds, in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.15;
/// Points per training sample.
pub const DEFAULT_SAMPLE_SIZE: usize = 2048;
/// RBS block side length, in meters.
pub const DEFAULT_BLOCK: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    Voxel,
    Rbs,
    RcKnn,
}

impl FromStr for SampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxel" => Ok(SampleMethod::Voxel),
            "rbs" => Ok(SampleMethod::Rbs),
            "rc-knn" | "rc_knn" => Ok(SampleMethod::RcKnn),
            other => Err(Error::InvalidArgument(format!("unknown sampling method `{other}`"))),
        }
    }
}

impl fmt::Display for SampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMethod::Voxel => "voxel",
            SampleMethod::Rbs => "rbs",
            SampleMethod::RcKnn => "rc-knn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub method: SampleMethod,
    pub voxel_size: f64,
    pub block_length: f64,
    pub block_width: f64,
    pub points: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(method: SampleMethod) -> Self {
        SampleSpec {
            method,
            voxel_size: DEFAULT_VOXEL_SIZE,
            block_length: DEFAULT_BLOCK,
            block_width: DEFAULT_BLOCK,
            points: DEFAULT_SAMPLE_SIZE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.voxel_size) {
            return Err(Error::InvalidArgument(format!("voxel size must be positive, got {}", self.voxel_size)));
        }
        if !positive(self.block_length) || !positive(self.block_width) {
            return Err(Error::InvalidArgument(format!(
                "block size must be positive, got {} x {}",
                self.block_length, self.block_width
            )));
        }
        if self.points == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One drawn sample. `center` is set for RBS and RC-KNN; `padded` marks an
/// RBS block that held fewer points than requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub center: Option<usize>,
    pub padded: bool,
}

/// RNG for draw number `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integer voxel coordinates of `p`. Cell boundaries sit on multiples of
/// `size`, cells are half-open.
pub fn voxel_key(p: &[f64; 3], size: f64) -> [i64; 3] {
    [
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    ]
}

/// Keeps one point per occupied voxel: the one nearest the voxel's centroid
/// (smallest index on ties). Returns retained indices in ascending order.
pub fn voxel_downsample(pc: &PointCloud, voxel_size: f64) -> Result<Vec<usize>> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel size must be positive, got {voxel_size}")));
    }
    if pc.is_empty() {
        return Err(Error::Empty("cannot downsample an empty cloud"));
    }
    let mut voxel_of = Vec::with_capacity(pc.len());
    let mut ids: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<([f64; 3], usize)> = Vec::new();
    for p in &pc.xyz {
        let next = ids.len();
        let id = *ids.entry(voxel_key(p, voxel_size)).or_insert(next);
        if id == sums.len() {
            sums.push(([0.0; 3], 0));
        }
        let (sum, count) = &mut sums[id];
        for a in 0..3 {
            sum[a] += p[a];
        }
        *count += 1;
        voxel_of.push(id);
    }
    let centroids: Vec<[f64; 3]> = sums
        .iter()
        .map(|(s, c)| {
            let c = *c as f64;
            [s[0] / c, s[1] / c, s[2] / c]
        })
        .collect();
    let mut best: Vec<Option<(f64, usize)>> = vec![None; sums.len()];
    for (i, (p, &id)) in pc.xyz.iter().zip(&voxel_of).enumerate() {
        let d = kdtree::squared_distance(p, &centroids[id]);
        match best[id] {
            Some((bd, _)) if bd <= d => {}
            _ => best[id] = Some((d, i)),
        }
    }
    let mut kept: Vec<usize> = best.into_iter().map(|b| b.expect("every voxel has a point").1).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Random block sampler over a cloud, with a 2-D bucket index sized to the
/// block so each query touches at most nine buckets.
pub struct BlockSampler<'a> {
    points: &'a [[f64; 3]],
    length: f64,
    width: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> BlockSampler<'a> {
    pub fn new(pc: &'a PointCloud, length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(Error::InvalidArgument(format!("block size must be positive, got {length} x {width}")));
        }
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in pc.xyz.iter().enumerate() {
            buckets
                .entry(((p[0] / length).floor() as i64, (p[1] / width).floor() as i64))
                .or_default()
                .push(i);
        }
        Ok(BlockSampler {
            points: &pc.xyz,
            length,
            width,
            buckets,
        })
    }

    /// Indices inside the block centered on point `center`, ascending.
    pub fn block(&self, center: usize) -> Vec<usize> {
        let c = self.points[center];
        let (half_l, half_w) = (self.length / 2.0, self.width / 2.0);
        let bx = (c[0] / self.length).floor() as i64;
        let by = (c[1] / self.width).floor() as i64;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = self.buckets.get(&(bx + dx, by + dy)) else { continue };
                out.extend(bucket.iter().copied().filter(|&i| {
                    let p = self.points[i];
                    c[0] - half_l <= p[0] && p[0] <= c[0] + half_l && c[1] - half_w <= p[1] && p[1] <= c[1] + half_w
                }));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Sample> {
        if self.points.is_empty() {
            return Err(Error::Empty("cannot sample an empty cloud"));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let center = rng.gen_range(0..self.points.len());
        let others: Vec<usize> = self.block(center).into_iter().filter(|&i| i != center).collect();
        let mut indices = Vec::with_capacity(n);
        indices.push(center);
        let padded = others.len() + 1 < n;
        if !padded {
            indices.extend(index::sample(rng, others.len(), n - 1).into_iter().map(|j| others[j]));
        } else {
            let all = others.len();
            indices.extend(index::sample(rng, all, all).into_iter().map(|j| others[j]));
            while indices.len() < n {
                let j = rng.gen_range(0..=all);
                indices.push(if j == all { center } else { others[j] });
            }
        }
        Ok(Sample {
            indices,
            center: Some(center),
            padded,
        })
    }
}

/// RC-KNN sampler: a kd-tree built once, queried per draw.
pub struct KnnSampler<'a> {
    tree: KdTree<'a>,
    points: &'a [[f64; 3]],
}

impl<'a> KnnSampler<'a> {
    pub fn new(pc: &'a PointCloud) -> Self {
        KnnSampler {
            tree: KdTree::build(&pc.xyz),
            points: &pc.xyz,
        }
    }

    /// The `k` nearest points to point `center` (itself included), ordered by
    /// distance then index.
    pub fn around(&self, center: usize, k: usize) -> Result<Vec<usize>> {
        if k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds cloud size {}",
                self.points.len()
            )));
        }
        if center >= self.points.len() {
            return Err(Error::InvalidArgument(format!("center {center} outside cloud")));
        }
        Ok(self
            .tree
            .nearest(&self.points[center], k)
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Sample> {
        if self.points.is_empty() {
            return Err(Error::Empty("cannot sample an empty cloud"));
        }
        if k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds cloud size {}",
                self.points.len()
            )));
        }
        let center = rng.gen_range(0..self.points.len());
        Ok(Sample {
            indices: self.around(center, k)?,
            center: Some(center),
            padded: false,
        })
    }
}

/// One RBS draw (stream 0 of `seed`).
pub fn rbs(pc: &PointCloud, length: f64, width: f64, n: usize, seed: u64) -> Result<Sample> {
    BlockSampler::new(pc, length, width)?.sample(n, &mut stream_rng(seed, 0))
}

/// One RC-KNN draw (stream 0 of `seed`).
pub fn rc_knn(pc: &PointCloud, k: usize, seed: u64) -> Result<Sample> {
    KnnSampler::new(pc).sample(k, &mut stream_rng(seed, 0))
}

/// Draws `count` samples according to `spec`; draw `b` uses stream `b`.
/// Voxel reduction is deterministic, so it yields one sample regardless of
/// `count`.
pub fn sample_batch(pc: &PointCloud, spec: &SampleSpec, count: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    match spec.method {
        SampleMethod::Voxel => Ok(vec![Sample {
            indices: voxel_downsample(pc, spec.voxel_size)?,
            center: None,
            padded: false,
        }]),
        SampleMethod::Rbs => {
            let sampler = BlockSampler::new(pc, spec.block_length, spec.block_width)?;
            (0..count as u64)
                .into_par_iter()
                .map(|b| sampler.sample(spec.points, &mut stream_rng(spec.seed, b)))
                .collect()
        }
        SampleMethod::RcKnn => {
            let sampler = KnnSampler::new(pc);
            (0..count as u64)
                .into_par_iter()
                .map(|b| sampler.sample(spec.points, &mut stream_rng(spec.seed, b)))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(xyz: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_xyz(xyz.to_vec())
    }

    #[test]
    fn voxel_merges_close_points() {
        let close = cloud(&[[0.2, 1.0, 1.0], [0.25, 1.0, 1.0]]);
        assert_eq!(voxel_downsample(&close, 0.15).unwrap().len(), 1);
        let apart = cloud(&[[1.0, 1.0, 1.0], [1.2, 1.0, 1.0]]);
        assert_eq!(voxel_downsample(&apart, 0.15).unwrap(), vec![0, 1]);
    }

    #[test]
    fn voxel_keeps_point_nearest_centroid() {
        let pc = cloud(&[[0.01, 0.0, 0.0], [0.05, 0.0, 0.0], [0.14, 0.0, 0.0]]);
        // centroid x = 0.0666..., nearest is index 1
        assert_eq!(voxel_downsample(&pc, 0.15).unwrap(), vec![1]);
        let tie = cloud(&[[0.02, 0.0, 0.0], [0.12, 0.0, 0.0]]);
        assert_eq!(voxel_downsample(&tie, 0.15).unwrap(), vec![0]);
    }

    #[test]
    fn voxel_errors() {
        assert!(voxel_downsample(&PointCloud::default(), 0.15).is_err());
        assert!(voxel_downsample(&cloud(&[[0.0; 3]]), 0.0).is_err());
    }

    #[test]
    fn rbs_padding() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 5.0], [100.0, 100.0, 0.0]]);
        let sampler = BlockSampler::new(&pc, 12.0, 12.0).unwrap();
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 0);
            let s = sampler.sample(5, &mut rng).unwrap();
            assert_eq!(s.indices.len(), 5);
            assert_eq!(s.indices[0], s.center.unwrap());
            if s.center == Some(3) {
                assert!(s.indices.iter().all(|&i| i == 3));
            } else {
                assert!(s.padded);
                assert!(s.indices.iter().all(|&i| i < 3));
                for i in 0..3 {
                    assert!(s.indices.contains(&i));
                }
            }
        }
    }

    #[test]
    fn rbs_whole_block_once() {
        let pts: Vec<[f64; 3]> = (0..30).map(|i| [(i % 6) as f64, (i / 6) as f64, i as f64]).collect();
        let pc = cloud(&pts);
        let s = rbs(&pc, 12.0, 12.0, 30, 9).unwrap();
        let mut idx = s.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..30).collect::<Vec<_>>());
        assert!(!s.padded);
    }

    #[test]
    fn rc_knn_line_tie_breaks_to_smaller_index() {
        let pc = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let sampler = KnnSampler::new(&pc);
        assert_eq!(sampler.around(1, 2).unwrap(), vec![1, 0]);
        let mut all = rc_knn(&pc, 4, 3).unwrap().indices;
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(rc_knn(&pc, 5, 3).is_err());
    }

    #[test]
    fn batch_is_deterministic() {
        let pts: Vec<[f64; 3]> = (0..500).map(|i| [(i * 7 % 50) as f64, (i * 13 % 40) as f64, 0.0]).collect();
        let pc = cloud(&pts);
        let mut spec = SampleSpec::new(SampleMethod::Rbs);
        spec.points = 32;
        spec.seed = 11;
        let a = sample_batch(&pc, &spec, 8).unwrap();
        let b = sample_batch(&pc, &spec, 8).unwrap();
        assert_eq!(a, b);
        let single = rbs(&pc, 12.0, 12.0, 32, 11).unwrap();
        assert_eq!(a[0], single);
    }

    #[test]
    fn method_names() {
        for m in [SampleMethod::Voxel, SampleMethod::Rbs, SampleMethod::RcKnn] {
            assert_eq!(m.to_string().parse::<SampleMethod>().unwrap(), m);
        }
        assert!("fps".parse::<SampleMethod>().is_err());
    }
}
