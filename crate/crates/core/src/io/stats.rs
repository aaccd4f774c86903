use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Descriptive statistics of a cloud. `density` is points per square meter
/// of the axis-aligned x/y bounding-box footprint, not of surveyed land area;
/// it is `None` when the footprint is degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudStats {
    pub count: u64,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub mean_height: f64,
    pub footprint_area: f64,
    pub density: Option<f64>,
}

/// Single-pass accumulator; chunks can be merged.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: u64,
    min: [f64; 3],
    max: [f64; 3],
    z_sum: f64,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        StatsAccumulator {
            count: 0,
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
            z_sum: 0.0,
        }
    }
}

impl StatsAccumulator {
    pub fn push(&mut self, p: &[f64; 3]) {
        self.count += 1;
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
        self.z_sum += p[2];
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.count += other.count;
        for a in 0..3 {
            self.min[a] = self.min[a].min(other.min[a]);
            self.max[a] = self.max[a].max(other.max[a]);
        }
        self.z_sum += other.z_sum;
    }

    pub fn finish(&self) -> Result<CloudStats> {
        if self.count == 0 {
            return Err(Error::Empty("statistics of an empty cloud"));
        }
        let area = (self.max[0] - self.min[0]) * (self.max[1] - self.min[1]);
        Ok(CloudStats {
            count: self.count,
            min: self.min,
            max: self.max,
            mean_height: self.z_sum / self.count as f64,
            footprint_area: area,
            density: (area > 0.0).then(|| self.count as f64 / area),
        })
    }
}

pub fn cloud_stats(pc: &PointCloud) -> Result<CloudStats> {
    let mut acc = StatsAccumulator::default();
    for p in &pc.xyz {
        acc.push(p);
    }
    acc.finish()
}
