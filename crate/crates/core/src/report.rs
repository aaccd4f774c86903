//! Evaluation reports: per-level accuracy and IoU, consistency rates and
//! optional per-class weighted coverage.
//!
//! A report has two text forms. The machine form is one tab-separated
//! record per line with floats in shortest round-trip notation, and parses
//! back into an identical [`MetricReport`]. The table form lays several
//! methods side by side, one column each, with classes grouped by level and
//! values in percent to one decimal.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{ClassRef, HierLabel, LabelHierarchy};
use crate::metrics::{wcov, ConsistencyStats, CpScorer, InstanceSet, LevelConfusion};

const CHUNK: usize = 8192;
const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    /// `None` for the ignore class and for classes absent from both ground
    /// truth and prediction.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: usize,
    pub evaluated: u64,
    pub ignored: u64,
    pub oa: Option<f64>,
    pub miou: Option<f64>,
    pub classes: Vec<ClassReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub points: u64,
    pub levels: Vec<LevelReport>,
    /// `(alpha, CR_alpha)`; the rate is `None` when every point is ignored.
    pub consistency: Vec<(f64, Option<f64>)>,
    /// Per-class weighted coverage at one level, if instances were given.
    pub wcov: Option<WcovReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WcovReport {
    pub level: usize,
    pub classes: Vec<(String, f64)>,
}

struct Partial {
    confusion: Vec<LevelConfusion>,
    consistency: ConsistencyStats,
}

impl Partial {
    fn new(h: &LabelHierarchy) -> Self {
        Partial {
            confusion: (1..=h.depth()).map(|l| LevelConfusion::for_level(h, l)).collect(),
            consistency: ConsistencyStats::new(h.depth()),
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            a.merge(b);
        }
        self.consistency.merge(&other.consistency);
        self
    }
}

/// Scores `pred` against `gt`. Points whose ground truth is an ignore class
/// at any level are left out of the consistency rates.
pub fn evaluate(
    h: &LabelHierarchy,
    method: &str,
    gt: &[HierLabel],
    pred: &[HierLabel],
    alphas: &[f64],
) -> Result<MetricReport> {
    if gt.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} ground-truth labels vs {} predicted labels",
            gt.len(),
            pred.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("alpha {a} outside [0, 1]")));
    }
    for (i, (g, p)) in gt.iter().zip(pred).enumerate() {
        h.check_label(g, i)?;
        h.check_label(p, i)?;
    }

    let starts: Vec<usize> = (0..gt.len()).step_by(CHUNK).collect();
    let total = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(gt.len());
            let mut part = Partial::new(h);
            let mut scorer = CpScorer::new(h);
            for (g, p) in gt[start..end].iter().zip(&pred[start..end]) {
                for (pos, conf) in part.confusion.iter_mut().enumerate() {
                    conf.add(g.0[pos], p.0[pos]);
                }
                let ignored = g.0.iter().enumerate().any(|(pos, &c)| h.is_ignored(pos + 1, c));
                if !ignored {
                    part.consistency.add(scorer.score(p));
                }
            }
            part
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Partial::new(h), Partial::merge);

    let levels = total
        .confusion
        .iter()
        .map(|conf| LevelReport {
            level: conf.level(),
            evaluated: conf.total(),
            ignored: conf.ignored(),
            oa: conf.overall_accuracy().ok(),
            miou: conf.mean_iou().ok(),
            classes: h
                .classes(conf.level())
                .iter()
                .cloned()
                .zip(conf.per_class_iou())
                .map(|(name, iou)| ClassReport { name, iou })
                .collect(),
        })
        .collect();
    Ok(MetricReport {
        method: method.to_string(),
        points: gt.len() as u64,
        levels,
        consistency: alphas.iter().map(|&a| (a, total.consistency.rate(a))).collect(),
        wcov: None,
    })
}

/// Weighted coverage for every non-ignored class at `level` that has
/// ground-truth instances. Only points labelled with the class (in ground
/// truth for `gt_ids`, in the prediction for `pred_ids`) take part.
pub fn wcov_per_class(
    h: &LabelHierarchy,
    level: usize,
    gt: &[HierLabel],
    gt_ids: &[i64],
    pred: &[HierLabel],
    pred_ids: &[i64],
) -> Result<WcovReport> {
    if level == 0 || level > h.depth() {
        return Err(Error::LevelOutOfRange { level, depth: h.depth() });
    }
    let n = gt.len();
    if gt_ids.len() != n || pred.len() != n || pred_ids.len() != n {
        return Err(Error::shape(format!(
            "wcov inputs disagree in length: {n} labels, {} ids, {} predicted labels, {} predicted ids",
            gt_ids.len(),
            pred.len(),
            pred_ids.len()
        )));
    }
    let pos = level - 1;
    let mut classes = Vec::new();
    for class in 0..h.width(level) {
        if h.is_ignored(level, class) {
            continue;
        }
        let g = InstanceSet::restricted(gt_ids, |i| gt[i].0[pos] == class);
        if g.ids().iter().all(|&id| id < 0) {
            continue;
        }
        let p = InstanceSet::restricted(pred_ids, |i| pred[i].0[pos] == class);
        classes.push((h.name(ClassRef::new(level, class)).to_string(), wcov(&g, &p)?));
    }
    Ok(WcovReport { level, classes })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:?}"))
}

impl MetricReport {
    /// Machine-readable form; see [`parse_reports`].
    pub fn to_machine(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "report\t{}", self.method);
        let _ = writeln!(s, "points\t{}", self.points);
        for l in &self.levels {
            let _ = writeln!(
                s,
                "level\t{}\t{}\t{}\t{}\t{}",
                l.level,
                l.evaluated,
                l.ignored,
                fmt_opt(l.oa),
                fmt_opt(l.miou)
            );
            for c in &l.classes {
                let _ = writeln!(s, "iou\t{}\t{}\t{}", l.level, c.name, fmt_opt(c.iou));
            }
        }
        for &(a, r) in &self.consistency {
            let _ = writeln!(s, "cr\t{a:?}\t{}", fmt_opt(r));
        }
        if let Some(w) = &self.wcov {
            let _ = writeln!(s, "wcov_level\t{}", w.level);
            for (name, v) in &w.classes {
                let _ = writeln!(s, "wcov\t{name}\t{v:?}");
            }
        }
        s.push_str("end\n");
        s
    }
}

/// Parses one or more reports written by [`MetricReport::to_machine`].
pub fn parse_reports(text: &str) -> Result<Vec<MetricReport>> {
    let mut out = Vec::new();
    let mut current: Option<MetricReport> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::parse(lineno, msg.to_string());
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(lineno, format!("bad number `{s}`")));
        let opt = |s: &str| if s == UNDEFINED { Ok(None) } else { num(s).map(Some) };
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::parse(lineno, format!("bad integer `{s}`")));

        if f[0] == "report" {
            if current.is_some() {
                return Err(bad("`report` before `end` of the previous report"));
            }
            if f.len() != 2 {
                return Err(bad("expected `report<TAB>method`"));
            }
            current = Some(MetricReport {
                method: f[1].to_string(),
                points: 0,
                levels: Vec::new(),
                consistency: Vec::new(),
                wcov: None,
            });
            continue;
        }
        let r = current.as_mut().ok_or_else(|| bad("record outside a report"))?;
        match (f[0], f.len()) {
            ("points", 2) => r.points = int(f[1])?,
            ("level", 6) => r.levels.push(LevelReport {
                level: int(f[1])? as usize,
                evaluated: int(f[2])?,
                ignored: int(f[3])?,
                oa: opt(f[4])?,
                miou: opt(f[5])?,
                classes: Vec::new(),
            }),
            ("iou", 4) => {
                let level = int(f[1])? as usize;
                let l = r
                    .levels
                    .last_mut()
                    .filter(|l| l.level == level)
                    .ok_or_else(|| bad("`iou` record does not follow its `level` record"))?;
                l.classes.push(ClassReport {
                    name: f[2].to_string(),
                    iou: opt(f[3])?,
                });
            }
            ("cr", 3) => r.consistency.push((num(f[1])?, opt(f[2])?)),
            ("wcov_level", 2) => {
                r.wcov = Some(WcovReport {
                    level: int(f[1])? as usize,
                    classes: Vec::new(),
                })
            }
            ("wcov", 3) => r
                .wcov
                .as_mut()
                .ok_or_else(|| bad("`wcov` record before `wcov_level`"))?
                .classes
                .push((f[1].to_string(), num(f[2])?)),
            ("end", 1) => out.push(current.take().expect("checked above")),
            _ => return Err(bad(&format!("unrecognized record `{}`", f[0]))),
        }
    }
    if current.is_some() {
        return Err(Error::parse(text.lines().count(), "report not terminated by `end`"));
    }
    Ok(out)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

/// Side-by-side table of several reports over the same hierarchy. Rows are
/// the classes of each level followed by its OA and mIoU, then the
/// consistency rates and, if present, weighted coverage.
pub fn render_table(reports: &[&MetricReport]) -> Result<String> {
    let first = reports.first().ok_or(Error::Empty("no reports to tabulate"))?;
    for r in &reports[1..] {
        let same = r.levels.len() == first.levels.len()
            && r.levels.iter().zip(&first.levels).all(|(a, b)| {
                a.classes.len() == b.classes.len() && a.classes.iter().zip(&b.classes).all(|(x, y)| x.name == y.name)
            });
        if !same {
            return Err(Error::shape(format!(
                "reports `{}` and `{}` cover different class sets",
                first.method, r.method
            )));
        }
    }

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for (li, level) in first.levels.iter().enumerate() {
        rows.push((format!("Level {}", level.level), Vec::new()));
        for (ci, class) in level.classes.iter().enumerate() {
            rows.push((
                format!("  {}", class.name),
                reports.iter().map(|r| pct(r.levels[li].classes[ci].iou)).collect(),
            ));
        }
        rows.push(("  mIoU".into(), reports.iter().map(|r| pct(r.levels[li].miou)).collect()));
        rows.push(("  OA".into(), reports.iter().map(|r| pct(r.levels[li].oa)).collect()));
    }
    for (ai, &(alpha, _)) in first.consistency.iter().enumerate() {
        rows.push((
            format!("CR (alpha={alpha})"),
            reports
                .iter()
                .map(|r| pct(r.consistency.get(ai).and_then(|c| c.1)))
                .collect(),
        ));
    }
    if let Some(w) = &first.wcov {
        rows.push((format!("WCov (level {})", w.level), Vec::new()));
        for (name, _) in &w.classes {
            rows.push((
                format!("  {name}"),
                reports
                    .iter()
                    .map(|r| {
                        pct(r
                            .wcov
                            .as_ref()
                            .and_then(|w| w.classes.iter().find(|(n, _)| n == name))
                            .map(|c| c.1))
                    })
                    .collect(),
            ));
        }
    }

    let label_width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(5);
    let col_widths: Vec<usize> = reports.iter().map(|r| r.method.chars().count().max(6)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Class");
    for (r, w) in reports.iter().zip(&col_widths) {
        let _ = write!(out, "  {:>w$}", r.method);
    }
    out.push('\n');
    let rule = label_width + col_widths.iter().map(|w| w + 2).sum::<usize>();
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_width$}");
        for (cell, w) in cells.iter().zip(&col_widths) {
            let _ = write!(out, "  {cell:>w$}");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabelHierarchy {
        LabelHierarchy::parse(
            "levels 2\nlevel 1: none, A, B\nlevel 2: none, a1, a2, b1\nignore 1:none\nignore 2:none\n\
             edge 2:none -> 1:none\nedge 2:a1 -> 1:A\nedge 2:a2 -> 1:A\nedge 2:b1 -> 1:B\n",
        )
        .unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let h = tiny();
        let gt = vec![HierLabel(vec![1, 1]), HierLabel(vec![1, 2]), HierLabel(vec![2, 3])];
        let r = evaluate(&h, "gt", &gt, &gt, &[1.0]).unwrap();
        for l in &r.levels {
            assert_eq!(l.oa, Some(1.0));
            assert_eq!(l.miou, Some(1.0));
            assert_eq!(l.classes[0].iou, None);
        }
        assert_eq!(r.consistency, vec![(1.0, Some(1.0))]);
    }

    #[test]
    fn ignored_points_skip_consistency() {
        let h = tiny();
        let gt = vec![HierLabel(vec![0, 0]), HierLabel(vec![1, 1])];
        let pred = vec![HierLabel(vec![2, 1]), HierLabel(vec![1, 1])];
        let r = evaluate(&h, "m", &gt, &pred, &[1.0]).unwrap();
        assert_eq!(r.consistency[0].1, Some(1.0));
        assert_eq!(r.levels[0].ignored, 1);
        assert_eq!(r.levels[0].oa, Some(1.0));
    }

    #[test]
    fn machine_round_trip() {
        let h = tiny();
        let gt = vec![HierLabel(vec![1, 1]), HierLabel(vec![1, 2]), HierLabel(vec![2, 3])];
        let pred = vec![HierLabel(vec![2, 1]), HierLabel(vec![1, 1]), HierLabel(vec![2, 3])];
        let mut r = evaluate(&h, "MC", &gt, &pred, &[0.1, 0.5, 1.0]).unwrap();
        r.wcov = Some(wcov_per_class(&h, 2, &gt, &[0, 0, 1], &pred, &[0, 0, 1]).unwrap());
        let text = r.to_machine() + &r.to_machine();
        assert_eq!(parse_reports(&text).unwrap(), vec![r.clone(), r]);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_reports("points\t3\n").is_err());
        assert!(parse_reports("report\tx\npoints\tthree\nend\n").is_err());
        assert!(parse_reports("report\tx\n").is_err());
    }

    #[test]
    fn table_layout() {
        let h = tiny();
        let gt = vec![HierLabel(vec![1, 1]), HierLabel(vec![1, 2]), HierLabel(vec![2, 3])];
        let pred = vec![HierLabel(vec![2, 1]), HierLabel(vec![1, 1]), HierLabel(vec![2, 3])];
        let he = evaluate(&h, "HE", &gt, &gt, &[1.0]).unwrap();
        let mc = evaluate(&h, "MC", &gt, &pred, &[1.0]).unwrap();
        let t = render_table(&[&he, &mc]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Class") && lines[0].ends_with("HE      MC"));
        assert!(t.contains("Level 1\n"));
        assert!(t.contains("  A            100.0    50.0\n"));
        assert!(t.contains("CR (alpha=1)   100.0    66.7\n"));
    }
}
