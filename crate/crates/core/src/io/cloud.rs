//! `HCPC` binary point clouds and CSV point clouds.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic "HCPC" | version u16 | flags u16 | N u64 | [label levels u16]
//! x[N] f64 | y[N] f64 | z[N] f64
//! [r[N] u8 | g[N] u8 | b[N] u8]          flags & COLOR
//! [labels[L][N] u16]                      flags & LABELS (L = 1 unless FULL_LABELS)
//! [instance[N] i32]                       flags & INSTANCE
//! ```

use std::fs;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use crate::cloud::{CloudLabels, PointCloud};
use crate::error::{Error, Result};
use crate::io::bytes::{put_u16, put_u64, Reader};
use crate::io::stats::{CloudStats, StatsAccumulator};

pub const CLOUD_MAGIC: &[u8; 4] = b"HCPC";
pub const CLOUD_VERSION: u16 = 1;

pub const FLAG_COLOR: u16 = 1;
pub const FLAG_LABELS: u16 = 1 << 1;
pub const FLAG_FULL_LABELS: u16 = 1 << 2;
pub const FLAG_INSTANCE: u16 = 1 << 3;
const KNOWN_FLAGS: u16 = FLAG_COLOR | FLAG_LABELS | FLAG_FULL_LABELS | FLAG_INSTANCE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Binary,
    Csv,
}

impl CloudFormat {
    /// `.csv` means CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CloudFormat::Csv,
            _ => CloudFormat::Binary,
        }
    }
}

pub fn encode_cloud(pc: &PointCloud) -> Result<Vec<u8>> {
    pc.validate()?;
    let n = pc.len();
    let mut flags = 0;
    if pc.color.is_some() {
        flags |= FLAG_COLOR;
    }
    if let Some(l) = &pc.labels {
        flags |= FLAG_LABELS;
        if matches!(l, CloudLabels::Full(_)) {
            flags |= FLAG_FULL_LABELS;
        }
    }
    if pc.instance.is_some() {
        flags |= FLAG_INSTANCE;
    }
    let mut out = Vec::with_capacity(16 + n * 36);
    out.extend_from_slice(CLOUD_MAGIC);
    put_u16(&mut out, CLOUD_VERSION);
    put_u16(&mut out, flags);
    put_u64(&mut out, n as u64);
    if let Some(l) = &pc.labels {
        put_u16(&mut out, l.level_count() as u16);
    }
    for axis in 0..3 {
        for p in &pc.xyz {
            out.extend_from_slice(&p[axis].to_le_bytes());
        }
    }
    if let Some(color) = &pc.color {
        for channel in 0..3 {
            out.extend(color.iter().map(|c| c[channel]));
        }
    }
    match &pc.labels {
        Some(CloudLabels::Leaf(v)) => v.iter().for_each(|l| put_u16(&mut out, *l)),
        Some(CloudLabels::Full(cols)) => cols.iter().flatten().for_each(|l| put_u16(&mut out, *l)),
        None => {}
    }
    if let Some(ids) = &pc.instance {
        for id in ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
    }
    Ok(out)
}

struct CloudHeader {
    flags: u16,
    points: u64,
    label_levels: u16,
    header_len: u64,
}

fn read_header(r: &mut Reader<'_>) -> Result<CloudHeader> {
    r.magic(CLOUD_MAGIC)?;
    let version = r.u16()?;
    if version != CLOUD_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported cloud version {version}"),
        });
    }
    let flags = r.u16()?;
    if flags & !KNOWN_FLAGS != 0 || (flags & FLAG_FULL_LABELS != 0 && flags & FLAG_LABELS == 0) {
        return Err(Error::Format {
            offset: 6,
            message: format!("invalid flags {flags:#06x}"),
        });
    }
    let points = r.u64()?;
    let label_levels = if flags & FLAG_LABELS != 0 {
        let l = r.u16()?;
        let full = flags & FLAG_FULL_LABELS != 0;
        if l == 0 || (!full && l != 1) {
            return Err(Error::Format {
                offset: 16,
                message: format!("invalid label level count {l}"),
            });
        }
        l
    } else {
        0
    };
    Ok(CloudHeader {
        flags,
        points,
        label_levels,
        header_len: r.offset(),
    })
}

fn payload_len(h: &CloudHeader) -> Option<u64> {
    let mut per_point: u64 = 24;
    if h.flags & FLAG_COLOR != 0 {
        per_point += 3;
    }
    per_point += 2 * h.label_levels as u64;
    if h.flags & FLAG_INSTANCE != 0 {
        per_point += 4;
    }
    h.points.checked_mul(per_point)
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes, "cloud file");
    let header = read_header(&mut r)?;
    let payload = payload_len(&header).ok_or_else(|| Error::Format {
        offset: 8,
        message: format!("point count {} overflows", header.points),
    })?;
    r.expect_remaining(payload)?;
    let n = header.points as usize;
    let xs = r.f64_column(n)?;
    let ys = r.f64_column(n)?;
    let zs = r.f64_column(n)?;
    let xyz: Vec<[f64; 3]> = (0..n).map(|i| [xs[i], ys[i], zs[i]]).collect();
    if let Some(i) = xyz.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::Format {
            offset: header.header_len + (i as u64) * 8,
            message: format!("non-finite coordinate for point {i}"),
        });
    }
    let color = if header.flags & FLAG_COLOR != 0 {
        let r_ = r.take(n)?;
        let g_ = r.take(n)?;
        let b_ = r.take(n)?;
        Some((0..n).map(|i| [r_[i], g_[i], b_[i]]).collect())
    } else {
        None
    };
    let labels = if header.flags & FLAG_LABELS != 0 {
        if header.flags & FLAG_FULL_LABELS != 0 {
            let cols = (0..header.label_levels)
                .map(|_| r.u16_column(n))
                .collect::<Result<Vec<_>>>()?;
            Some(CloudLabels::Full(cols))
        } else {
            Some(CloudLabels::Leaf(r.u16_column(n)?))
        }
    } else {
        None
    };
    let instance = if header.flags & FLAG_INSTANCE != 0 {
        Some(r.i32_column(n)?)
    } else {
        None
    };
    Ok(PointCloud {
        xyz,
        color,
        labels,
        instance,
    })
}

pub fn write_cloud(path: &Path, pc: &PointCloud, format: CloudFormat) -> Result<()> {
    match format {
        CloudFormat::Binary => Ok(fs::write(path, encode_cloud(pc)?)?),
        CloudFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            write_csv(&mut w, pc)?;
            w.flush()?;
            Ok(())
        }
    }
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::Binary => decode_cloud(&fs::read(path)?),
        CloudFormat::Csv => read_csv(fs::File::open(path)?),
    }
}

/// Reads a cloud, picking the format from the file extension.
pub fn read_cloud_auto(path: &Path) -> Result<PointCloud> {
    read_cloud(path, CloudFormat::from_path(path))
}

pub fn write_cloud_auto(path: &Path, pc: &PointCloud) -> Result<()> {
    write_cloud(path, pc, CloudFormat::from_path(path))
}

fn csv_header(pc: &PointCloud) -> Vec<String> {
    let mut cols: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    if pc.color.is_some() {
        cols.extend(["r", "g", "b"].iter().map(|s| s.to_string()));
    }
    match &pc.labels {
        Some(CloudLabels::Leaf(_)) => cols.push("label".into()),
        Some(CloudLabels::Full(c)) => cols.extend((1..=c.len()).map(|h| format!("label{h}"))),
        None => {}
    }
    if pc.instance.is_some() {
        cols.push("instance".into());
    }
    cols
}

pub fn write_csv<W: std::io::Write>(w: &mut csv::Writer<W>, pc: &PointCloud) -> Result<()> {
    pc.validate()?;
    w.write_record(csv_header(pc))?;
    let mut row: Vec<String> = Vec::new();
    for i in 0..pc.len() {
        row.clear();
        // `{}` on f64 prints the shortest string that parses back exactly.
        row.extend(pc.xyz[i].iter().map(|c| format!("{c}")));
        if let Some(color) = &pc.color {
            row.extend(color[i].iter().map(|c| c.to_string()));
        }
        match &pc.labels {
            Some(CloudLabels::Leaf(v)) => row.push(v[i].to_string()),
            Some(CloudLabels::Full(cols)) => row.extend(cols.iter().map(|c| c[i].to_string())),
            None => {}
        }
        if let Some(ids) = &pc.instance {
            row.push(ids[i].to_string());
        }
        w.write_record(&row)?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let bad_header = |msg: String| Error::parse(1, msg);
    if header.len() < 3 || header[..3] != ["x", "y", "z"] {
        return Err(bad_header(format!("header must start with x,y,z, got {}", header.join(","))));
    }
    let mut col = 3;
    let has_color = header.get(3).map(String::as_str) == Some("r");
    if has_color {
        if header.get(4..6) != Some(&["g".to_string(), "b".to_string()][..]) {
            return Err(bad_header("color columns must be r,g,b".into()));
        }
        col += 3;
    }
    let mut label_cols = 0;
    let mut full_labels = false;
    if header.get(col).map(String::as_str) == Some("label") {
        label_cols = 1;
    } else {
        while header.get(col + label_cols).map(String::as_str) == Some(&format!("label{}", label_cols + 1)) {
            label_cols += 1;
            full_labels = true;
        }
    }
    col += label_cols;
    let has_instance = header.get(col).map(String::as_str) == Some("instance");
    if has_instance {
        col += 1;
    }
    if col != header.len() {
        return Err(bad_header(format!("unexpected column `{}`", header[col])));
    }

    let mut pc = PointCloud {
        color: has_color.then(Vec::new),
        instance: has_instance.then(Vec::new),
        ..Default::default()
    };
    let mut labels: Vec<Vec<u16>> = vec![Vec::new(); label_cols];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::parse(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let field = |i: usize| &record[i];
        let num = |i: usize| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| Error::parse(line, format!("bad number `{}` in column {}", field(i), header[i])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("non-finite coordinate in column {}", header[i])));
            }
            Ok(v)
        };
        pc.xyz.push([num(0)?, num(1)?, num(2)?]);
        let mut c = 3;
        if let Some(color) = &mut pc.color {
            let mut rgb = [0u8; 3];
            for (k, slot) in rgb.iter_mut().enumerate() {
                *slot = field(c + k)
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad color value `{}`", field(c + k))))?;
            }
            color.push(rgb);
            c += 3;
        }
        for col in labels.iter_mut() {
            col.push(
                field(c)
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad label `{}` in column {}", field(c), header[c])))?,
            );
            c += 1;
        }
        if let Some(ids) = &mut pc.instance {
            ids.push(
                field(c)
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad instance id `{}`", field(c))))?,
            );
        }
    }
    if label_cols > 0 {
        pc.labels = Some(if full_labels {
            CloudLabels::Full(labels)
        } else {
            CloudLabels::Leaf(labels.pop().expect("one label column"))
        });
    }
    Ok(pc)
}

/// Statistics of a binary cloud file computed in fixed-size chunks, without
/// loading the whole cloud.
pub fn stream_cloud_stats(path: &Path) -> Result<CloudStats> {
    const CHUNK_POINTS: usize = 1 << 16;
    let mut head = [0u8; 18];
    let mut file = fs::File::open(path)?;
    let file_len = file.metadata()?.len();
    let got = read_up_to(&mut file, &mut head)?;
    let mut r = Reader::new(&head[..got], "cloud file");
    let header = read_header(&mut r)?;
    let payload = payload_len(&header).ok_or_else(|| Error::Format {
        offset: 8,
        message: "point count overflows".into(),
    })?;
    if file_len != header.header_len + payload {
        return Err(Error::Truncated {
            what: "cloud file",
            expected: header.header_len + payload,
            actual: file_len,
        });
    }
    let n = header.points;
    let mut readers = (0..3)
        .map(|axis| -> Result<BufReader<fs::File>> {
            let mut f = fs::File::open(path)?;
            f.seek(SeekFrom::Start(header.header_len + axis * n * 8))?;
            Ok(BufReader::with_capacity(CHUNK_POINTS * 8, f))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = StatsAccumulator::default();
    let mut remaining = n as usize;
    let mut bufs = vec![vec![0u8; CHUNK_POINTS * 8]; 3];
    while remaining > 0 {
        let take = remaining.min(CHUNK_POINTS);
        for (rd, buf) in readers.iter_mut().zip(bufs.iter_mut()) {
            rd.read_exact(&mut buf[..take * 8])?;
        }
        for i in 0..take {
            let c = |axis: usize| f64::from_le_bytes(bufs[axis][i * 8..i * 8 + 8].try_into().expect("8 bytes"));
            acc.push(&[c(0), c(1), c(2)]);
        }
        remaining -= take;
    }
    acc.finish()
}

fn read_up_to(file: &mut fs::File, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let k = file.read(&mut buf[filled..])?;
        if k == 0 {
            break;
        }
        filled += k;
    }
    Ok(filled)
}
