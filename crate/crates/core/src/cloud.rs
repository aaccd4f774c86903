use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy};

/// Per-point class labels stored with a cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CloudLabels {
    /// Finest-level class only; coarser levels follow from the hierarchy.
    Leaf(Vec<u16>),
    /// Explicit label tuple per point, column-major (`levels[pos][point]`).
    /// Used for ground truth that is not fully consistent.
    Full(Vec<Vec<u16>>),
}

impl CloudLabels {
    pub fn len(&self) -> usize {
        match self {
            CloudLabels::Leaf(v) => v.len(),
            CloudLabels::Full(cols) => cols.first().map_or(0, Vec::len),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level_count(&self) -> usize {
        match self {
            CloudLabels::Leaf(_) => 1,
            CloudLabels::Full(cols) => cols.len(),
        }
    }

    /// Label tuples for every point, checked against `h`.
    pub fn to_hier_labels(&self, h: &LabelHierarchy) -> Result<Vec<HierLabel>> {
        match self {
            CloudLabels::Leaf(leaves) => {
                let leaves: Vec<usize> = leaves.iter().map(|&l| l as usize).collect();
                h.lift_leaf_labels(&leaves)
            }
            CloudLabels::Full(cols) => {
                if cols.len() != h.depth() {
                    return Err(Error::shape(format!(
                        "cloud stores {} label levels, hierarchy has {}",
                        cols.len(),
                        h.depth()
                    )));
                }
                (0..self.len())
                    .map(|i| {
                        let label = HierLabel(cols.iter().map(|c| c[i] as usize).collect());
                        h.check_label(&label, i)?;
                        Ok(label)
                    })
                    .collect()
            }
        }
    }

    /// Stores labels compactly: leaf-only when every tuple is a tree path.
    pub fn from_hier_labels(h: &LabelHierarchy, labels: &[HierLabel]) -> Result<Self> {
        for (i, l) in labels.iter().enumerate() {
            h.check_label(l, i)?;
        }
        if labels.iter().all(|l| h.is_fully_consistent(l)) {
            Ok(CloudLabels::Leaf(labels.iter().map(|l| l.leaf() as u16).collect()))
        } else {
            Ok(CloudLabels::Full(
                (0..h.depth())
                    .map(|pos| labels.iter().map(|l| l.0[pos] as u16).collect())
                    .collect(),
            ))
        }
    }

    fn select(&self, indices: &[usize]) -> Self {
        match self {
            CloudLabels::Leaf(v) => CloudLabels::Leaf(indices.iter().map(|&i| v[i]).collect()),
            CloudLabels::Full(cols) => CloudLabels::Full(
                cols.iter()
                    .map(|c| indices.iter().map(|&i| c[i]).collect())
                    .collect(),
            ),
        }
    }
}

/// Columnar point cloud: coordinates in meters plus optional attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub xyz: Vec<[f64; 3]>,
    pub color: Option<Vec<[u8; 3]>>,
    pub labels: Option<CloudLabels>,
    pub instance: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn from_xyz(xyz: Vec<[f64; 3]>) -> Self {
        PointCloud {
            xyz,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(i) = self.xyz.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i}")));
        }
        let check = |what: &str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::shape(format!("{what} column has {len} rows, cloud has {n} points")))
            }
        };
        if let Some(c) = &self.color {
            check("color", c.len())?;
        }
        if let Some(l) = &self.labels {
            if let CloudLabels::Full(cols) = l {
                for c in cols {
                    check("label", c.len())?;
                }
            } else {
                check("label", l.len())?;
            }
        }
        if let Some(ids) = &self.instance {
            check("instance", ids.len())?;
        }
        Ok(())
    }

    /// Sub-cloud of the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            xyz: indices.iter().map(|&i| self.xyz[i]).collect(),
            color: self
                .color
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            instance: self
                .instance
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}
