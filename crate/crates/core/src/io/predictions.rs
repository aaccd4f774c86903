//! `HCPD` per-level prediction files and `HCPL` decoded-label files.
//!
//! ```text
//! HCPD: magic | version u16 | flags u16 (0) | N u64 | H u16 | width[H] u32
//!       then per level an N x width f32 matrix, row-major
//! HCPL: magic | version u16 | flags u16 (0) | N u64 | H u16
//!       then per level N u16 class indices
//! ```

use std::fs;
use std::path::Path;

use crate::ensemble::LevelDistributions;
use crate::error::{Error, Result};
use crate::hierarchy::{HierLabel, LabelHierarchy};
use crate::io::bytes::{put_u16, put_u32, put_u64, Reader};

pub const PREDICTION_MAGIC: &[u8; 4] = b"HCPD";
pub const LABELS_MAGIC: &[u8; 4] = b"HCPL";
pub const FORMAT_VERSION: u16 = 1;

/// Raw per-level scores as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub points: usize,
    pub widths: Vec<usize>,
    pub levels: Vec<Vec<f32>>,
}

impl PredictionFile {
    pub fn from_distributions(d: &LevelDistributions) -> Self {
        PredictionFile {
            points: d.points(),
            widths: d.widths().to_vec(),
            levels: (0..d.depth())
                .map(|pos| d.level(pos).iter().map(|&v| v as f32).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.levels.len() {
            return Err(Error::shape(format!(
                "{} widths but {} level matrices",
                self.widths.len(),
                self.levels.len()
            )));
        }
        for (pos, (&w, level)) in self.widths.iter().zip(&self.levels).enumerate() {
            if w == 0 || level.len() != self.points * w {
                return Err(Error::shape(format!(
                    "level {} holds {} values, expected {} x {w}",
                    pos + 1,
                    level.len(),
                    self.points
                )));
            }
            if let Some(i) = level.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("level {} entry {i}", pos + 1)));
            }
        }
        Ok(())
    }

    pub fn check_against(&self, h: &LabelHierarchy) -> Result<()> {
        if self.widths != h.widths() {
            return Err(Error::shape(format!(
                "prediction level widths {:?} do not match hierarchy widths {:?}",
                self.widths,
                h.widths()
            )));
        }
        Ok(())
    }

    /// Converts to probability rows, renormalizing each row in f64.
    pub fn to_distributions(&self) -> Result<LevelDistributions> {
        self.validate()?;
        LevelDistributions::from_unnormalized(
            self.points,
            self.widths.clone(),
            self.levels
                .iter()
                .map(|l| l.iter().map(|&v| v as f64).collect())
                .collect(),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let values: usize = self.levels.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(18 + 4 * self.widths.len() + 4 * values);
        out.extend_from_slice(PREDICTION_MAGIC);
        put_u16(&mut out, FORMAT_VERSION);
        put_u16(&mut out, 0);
        put_u64(&mut out, self.points as u64);
        put_u16(&mut out, self.widths.len() as u16);
        for &w in &self.widths {
            put_u32(&mut out, w as u32);
        }
        for level in &self.levels {
            for v in level {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "prediction file");
        r.magic(PREDICTION_MAGIC)?;
        read_version_and_flags(&mut r)?;
        let points = r.u64()?;
        let depth = r.u16()? as usize;
        if depth == 0 {
            return Err(Error::Format {
                offset: 16,
                message: "prediction file declares zero levels".into(),
            });
        }
        let widths = (0..depth)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::Format {
                offset: 18 + 4 * pos as u64,
                message: format!("level {} has zero classes", pos + 1),
            });
        }
        let payload = widths
            .iter()
            .try_fold(0u64, |acc, &w| points.checked_mul(w as u64 * 4).and_then(|b| acc.checked_add(b)))
            .ok_or_else(|| Error::Format {
                offset: 8,
                message: format!("point count {points} overflows"),
            })?;
        r.expect_remaining(payload)?;
        let points = points as usize;
        let mut levels = Vec::with_capacity(depth);
        for (pos, &w) in widths.iter().enumerate() {
            let start = r.offset();
            let level = r.f32_column(points * w)?;
            if let Some(i) = level.iter().position(|v| !v.is_finite()) {
                return Err(Error::Format {
                    offset: start + 4 * i as u64,
                    message: format!("non-finite score at level {}", pos + 1),
                });
            }
            levels.push(level);
        }
        Ok(PredictionFile { points, widths, levels })
    }
}

fn read_version_and_flags(r: &mut Reader<'_>) -> Result<()> {
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let flags = r.u16()?;
    if flags != 0 {
        return Err(Error::Format {
            offset: 6,
            message: format!("unknown flags {flags:#06x}"),
        });
    }
    Ok(())
}

pub fn write_predictions(path: &Path, p: &PredictionFile) -> Result<()> {
    Ok(fs::write(path, p.encode()?)?)
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile> {
    PredictionFile::decode(&fs::read(path)?)
}

pub fn encode_labels(labels: &[HierLabel], depth: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(18 + 2 * depth * labels.len());
    out.extend_from_slice(LABELS_MAGIC);
    put_u16(&mut out, FORMAT_VERSION);
    put_u16(&mut out, 0);
    put_u64(&mut out, labels.len() as u64);
    put_u16(&mut out, depth as u16);
    for pos in 0..depth {
        for (i, l) in labels.iter().enumerate() {
            if l.depth() != depth {
                return Err(Error::shape(format!("label {i} has {} levels, expected {depth}", l.depth())));
            }
            let v = u16::try_from(l.0[pos]).map_err(|_| {
                Error::InvalidArgument(format!("class index {} does not fit in 16 bits", l.0[pos]))
            })?;
            put_u16(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<HierLabel>> {
    let mut r = Reader::new(bytes, "label file");
    r.magic(LABELS_MAGIC)?;
    read_version_and_flags(&mut r)?;
    let points = r.u64()?;
    let depth = r.u16()? as usize;
    let payload = points.checked_mul(2 * depth as u64).ok_or_else(|| Error::Format {
        offset: 8,
        message: format!("point count {points} overflows"),
    })?;
    r.expect_remaining(payload)?;
    let n = points as usize;
    let cols = (0..depth).map(|_| r.u16_column(n)).collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|i| HierLabel(cols.iter().map(|c| c[i] as usize).collect()))
        .collect())
}

pub fn write_labels(path: &Path, labels: &[HierLabel], depth: usize) -> Result<()> {
    Ok(fs::write(path, encode_labels(labels, depth)?)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<HierLabel>> {
    decode_labels(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_prediction_file_is_valid() {
        let h = LabelHierarchy::campus3d();
        let p = PredictionFile {
            points: 0,
            widths: h.widths(),
            levels: vec![Vec::new(); h.depth()],
        };
        let back = PredictionFile::decode(&p.encode().unwrap()).unwrap();
        assert_eq!(back, p);
        back.check_against(&h).unwrap();
        let d = back.to_distributions().unwrap();
        assert!(crate::ensemble::hierarchical_ensemble(&h, &d).unwrap().is_empty());
    }

    #[test]
    fn width_mismatch_with_hierarchy() {
        let h = LabelHierarchy::campus3d();
        let mut widths = h.widths();
        widths[2] += 1;
        let p = PredictionFile {
            points: 1,
            levels: widths.iter().map(|&w| vec![1.0 / w as f32; w]).collect(),
            widths,
        };
        assert!(matches!(p.check_against(&h), Err(Error::Shape(_))));
    }

    #[test]
    fn truncated_and_nan_rejected() {
        let p = PredictionFile {
            points: 2,
            widths: vec![2],
            levels: vec![vec![0.5, 0.5, 0.25, 0.75]],
        };
        let bytes = p.encode().unwrap();
        assert!(matches!(
            PredictionFile::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut nan = bytes.clone();
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(PredictionFile::decode(&nan), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![HierLabel(vec![1, 2, 3]), HierLabel(vec![0, 0, 7])];
        let bytes = encode_labels(&labels, 3).unwrap();
        assert_eq!(decode_labels(&bytes).unwrap(), labels);
        assert!(decode_labels(&bytes[..bytes.len() - 2]).is_err());
    }
}
