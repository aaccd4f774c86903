//! Levelled class trees.
//!
//! A [`LabelHierarchy`] holds `H` granularity levels, coarse (level 1) to
//! fine (level `H`). Every class below level 1 has exactly one parent on the
//! level directly above, so each leaf at level `H` identifies one
//! root-to-leaf path. Classes that only pass a coarser class through to the
//! next level (a "duplicate" node) are ordinary classes, usually sharing the
//! parent's name.
//!
//! Levels are numbered from 1 in every public signature that takes a level
//! number, matching the config file. [`HierLabel`] values are positional:
//! `values[0]` is the level-1 class.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const CAMPUS3D_CONFIG: &str = include_str!("../data/campus3d.hier");

/// A class addressed by level number (1-based) and position within that level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassRef {
    pub level: usize,
    pub index: usize,
}

impl ClassRef {
    pub fn new(level: usize, index: usize) -> Self {
        ClassRef { level, index }
    }
}

/// One class index per level, coarse to fine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierLabel(pub Vec<usize>);

impl HierLabel {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn leaf(&self) -> usize {
        *self.0.last().expect("labels have at least one level")
    }
}

impl From<Vec<usize>> for HierLabel {
    fn from(values: Vec<usize>) -> Self {
        HierLabel(values)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Level {
    names: Vec<String>,
    // Parent index on the level above; empty for level 1.
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    ignore: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHierarchy {
    levels: Vec<Level>,
    fc_paths: Vec<HierLabel>,
}

impl LabelHierarchy {
    /// Builds and validates a hierarchy.
    ///
    /// `parents[k][i]` is the index, on level `k`, of the parent of class `i`
    /// on level `k + 1` (both 1-based); `parents[0]` must be empty.
    /// `ignore[k]` optionally flags one class of level `k + 1` as excluded
    /// from metrics.
    pub fn new(
        level_classes: Vec<Vec<String>>,
        parents: Vec<Vec<usize>>,
        ignore: Vec<Option<usize>>,
    ) -> Result<Self> {
        let depth = level_classes.len();
        if depth == 0 {
            return Err(Error::Hierarchy("hierarchy needs at least one level".into()));
        }
        if parents.len() != depth || ignore.len() != depth {
            return Err(Error::Hierarchy(format!(
                "expected {depth} parent and ignore entries, got {} and {}",
                parents.len(),
                ignore.len()
            )));
        }
        if !parents[0].is_empty() {
            return Err(Error::Hierarchy("level 1 classes cannot have parents".into()));
        }

        let mut levels: Vec<Level> = Vec::with_capacity(depth);
        for (pos, ((names, parent), ignore)) in level_classes
            .into_iter()
            .zip(parents)
            .zip(ignore)
            .enumerate()
        {
            let level = pos + 1;
            if names.is_empty() {
                return Err(Error::Hierarchy(format!("level {level} has no classes")));
            }
            let mut seen = HashMap::new();
            for (i, name) in names.iter().enumerate() {
                if name.is_empty() {
                    return Err(Error::Hierarchy(format!("empty class name at level {level}")));
                }
                if let Some(prev) = seen.insert(name.as_str(), i) {
                    return Err(Error::Hierarchy(format!(
                        "duplicate class `{name}` at level {level} (positions {prev} and {i})"
                    )));
                }
            }
            if pos > 0 {
                if parent.len() != names.len() {
                    return Err(Error::Hierarchy(format!(
                        "level {level}: {} classes but {} parent entries",
                        names.len(),
                        parent.len()
                    )));
                }
                let above = levels[pos - 1].names.len();
                for (i, &p) in parent.iter().enumerate() {
                    if p >= above {
                        return Err(Error::Hierarchy(format!(
                            "class `{}` at level {level} has parent index {p} outside level {}",
                            names[i],
                            level - 1
                        )));
                    }
                }
            }
            if let Some(ig) = ignore {
                if ig >= names.len() {
                    return Err(Error::Hierarchy(format!(
                        "ignore index {ig} out of range at level {level}"
                    )));
                }
            }
            let width = names.len();
            levels.push(Level {
                names,
                parent,
                children: vec![Vec::new(); width],
                ignore,
            });
        }

        for pos in 1..depth {
            let (upper, lower) = levels.split_at_mut(pos);
            let upper = &mut upper[pos - 1];
            let lower = &lower[0];
            for (child, &p) in lower.parent.iter().enumerate() {
                upper.children[p].push(child);
            }
        }

        for pos in 0..depth.saturating_sub(1) {
            let level = &levels[pos];
            if let Some(i) = level.children.iter().position(|c| c.is_empty()) {
                return Err(Error::Hierarchy(format!(
                    "class `{}` at level {} has no child on level {}",
                    level.names[i],
                    pos + 1,
                    pos + 2
                )));
            }
        }

        for pos in 0..depth {
            let Some(ig) = levels[pos].ignore else { continue };
            let name = &levels[pos].names[ig];
            if pos > 0 {
                let parent = levels[pos].parent[ig];
                if levels[pos - 1].ignore != Some(parent) {
                    return Err(Error::Hierarchy(format!(
                        "ignored class `{name}` at level {} has non-ignored parent `{}`",
                        pos + 1,
                        levels[pos - 1].names[parent]
                    )));
                }
            }
            if pos + 1 < depth {
                for &c in &levels[pos].children[ig] {
                    if levels[pos + 1].ignore != Some(c) {
                        return Err(Error::Hierarchy(format!(
                            "ignored class `{name}` at level {} has non-ignored child `{}`",
                            pos + 1,
                            levels[pos + 1].names[c]
                        )));
                    }
                }
            }
        }

        let leaves = levels[depth - 1].names.len();
        let fc_paths = (0..leaves)
            .map(|leaf| {
                let mut values = vec![0; depth];
                let mut idx = leaf;
                for pos in (0..depth).rev() {
                    values[pos] = idx;
                    if pos > 0 {
                        idx = levels[pos].parent[idx];
                    }
                }
                HierLabel(values)
            })
            .collect();

        Ok(LabelHierarchy { levels, fc_paths })
    }

    /// Parses the line-based hierarchy config format.
    pub fn parse(source: &str) -> Result<Self> {
        parse_config(source)
    }

    /// The bundled five-level Campus3D tree.
    pub fn campus3d() -> Self {
        Self::parse(CAMPUS3D_CONFIG).expect("bundled campus3d.hier is valid")
    }

    pub fn campus3d_config() -> &'static str {
        CAMPUS3D_CONFIG
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Number of classes at `level` (1-based). Panics when out of range.
    pub fn width(&self, level: usize) -> usize {
        self.levels[level - 1].names.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.names.len()).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[self.depth() - 1].names.len()
    }

    pub fn class_count(&self) -> usize {
        self.levels.iter().map(|l| l.names.len()).sum()
    }

    pub fn classes(&self, level: usize) -> &[String] {
        &self.levels[level - 1].names
    }

    pub fn name(&self, class: ClassRef) -> &str {
        &self.levels[class.level - 1].names[class.index]
    }

    pub fn class_ref(&self, level: usize, name: &str) -> Option<ClassRef> {
        let lvl = self.levels.get(level.checked_sub(1)?)?;
        lvl.names
            .iter()
            .position(|n| n == name)
            .map(|index| ClassRef { level, index })
    }

    pub fn parent(&self, class: ClassRef) -> Option<ClassRef> {
        if class.level <= 1 {
            return None;
        }
        Some(ClassRef {
            level: class.level - 1,
            index: self.levels[class.level - 1].parent[class.index],
        })
    }

    /// Parent index (on `level - 1`) of class `index` at `level`.
    pub(crate) fn parent_index(&self, level: usize, index: usize) -> usize {
        self.levels[level - 1].parent[index]
    }

    /// Child indices (on `level + 1`) of class `index` at `level`.
    pub fn children(&self, level: usize, index: usize) -> &[usize] {
        &self.levels[level - 1].children[index]
    }

    pub fn ignore_class(&self, level: usize) -> Option<usize> {
        self.levels[level - 1].ignore
    }

    pub fn is_ignored(&self, level: usize, index: usize) -> bool {
        self.levels[level - 1].ignore == Some(index)
    }

    /// All root-to-leaf paths, one per leaf, in leaf order.
    pub fn fc_paths(&self) -> &[HierLabel] {
        &self.fc_paths
    }

    pub fn leaf_path(&self, leaf: usize) -> &HierLabel {
        &self.fc_paths[leaf]
    }

    /// The ancestor of `class` at `target_level`.
    pub fn project(&self, class: ClassRef, target_level: usize) -> Result<ClassRef> {
        let depth = self.depth();
        if class.level == 0 || class.level > depth {
            return Err(Error::LevelOutOfRange {
                level: class.level,
                depth,
            });
        }
        if target_level == 0 || target_level > class.level {
            return Err(Error::LevelOutOfRange {
                level: target_level,
                depth: class.level,
            });
        }
        let width = self.width(class.level);
        if class.index >= width {
            return Err(Error::IndexOutOfRange {
                offset: 0,
                level: class.level,
                index: class.index,
                width,
            });
        }
        let mut cur = class;
        while cur.level > target_level {
            cur = ClassRef {
                level: cur.level - 1,
                index: self.parent_index(cur.level, cur.index),
            };
        }
        Ok(cur)
    }

    /// True when every adjacent pair of levels in `label` is a tree edge.
    pub fn is_fully_consistent(&self, label: &HierLabel) -> bool {
        let v = &label.0;
        v.len() == self.depth()
            && (1..v.len()).all(|pos| self.levels[pos].parent[v[pos]] == v[pos - 1])
    }

    pub fn check_label(&self, label: &HierLabel, offset: usize) -> Result<()> {
        if label.0.len() != self.depth() {
            return Err(Error::shape(format!(
                "point {offset}: label has {} levels, hierarchy has {}",
                label.0.len(),
                self.depth()
            )));
        }
        for (pos, &idx) in label.0.iter().enumerate() {
            let width = self.levels[pos].names.len();
            if idx >= width {
                return Err(Error::IndexOutOfRange {
                    offset,
                    level: pos + 1,
                    index: idx,
                    width,
                });
            }
        }
        Ok(())
    }

    /// Expands per-point leaf indices into full root-to-leaf labels.
    pub fn lift_leaf_labels(&self, leaves: &[usize]) -> Result<Vec<HierLabel>> {
        let width = self.leaf_count();
        leaves
            .iter()
            .enumerate()
            .map(|(offset, &leaf)| {
                if leaf >= width {
                    Err(Error::IndexOutOfRange {
                        offset,
                        level: self.depth(),
                        index: leaf,
                        width,
                    })
                } else {
                    Ok(self.fc_paths[leaf].clone())
                }
            })
            .collect()
    }

    /// Serializes back to the config format.
    pub fn to_config_string(&self) -> String {
        let mut out = format!("levels {}\n", self.depth());
        for (pos, level) in self.levels.iter().enumerate() {
            out.push_str(&format!("level {}: {}\n", pos + 1, level.names.join(",")));
        }
        for (pos, level) in self.levels.iter().enumerate() {
            if let Some(ig) = level.ignore {
                out.push_str(&format!("ignore {}:{}\n", pos + 1, level.names[ig]));
            }
        }
        for pos in 1..self.depth() {
            let level = &self.levels[pos];
            let above = &self.levels[pos - 1];
            for (i, &p) in level.parent.iter().enumerate() {
                out.push_str(&format!(
                    "edge {}:{} -> {}:{}\n",
                    pos + 1,
                    level.names[i],
                    pos,
                    above.names[p]
                ));
            }
        }
        out
    }
}

impl FromStr for LabelHierarchy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for LabelHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config_string())
    }
}

/// Reusable buffers for best-path searches over the tree.
///
/// Each node's score is the running sum of its ancestors' scores plus its
/// own, accumulated level by level in the same order a per-path sum would
/// use, so results are bit-identical to scoring every path separately.
#[derive(Debug, Default, Clone)]
pub(crate) struct PathScorer {
    acc: Vec<Vec<f64>>,
}

impl PathScorer {
    pub(crate) fn new(h: &LabelHierarchy) -> Self {
        PathScorer {
            acc: h.widths().into_iter().map(|w| vec![0.0; w]).collect(),
        }
    }

    /// Returns the leaf of the highest-scoring path (smallest leaf on ties)
    /// and its score. `score(pos, class)` takes a 0-based level position.
    pub(crate) fn best_leaf(
        &mut self,
        h: &LabelHierarchy,
        mut score: impl FnMut(usize, usize) -> f64,
    ) -> (usize, f64) {
        for (i, slot) in self.acc[0].iter_mut().enumerate() {
            *slot = score(0, i);
        }
        for pos in 1..h.levels.len() {
            let (done, rest) = self.acc.split_at_mut(pos);
            let above = &done[pos - 1];
            let parents = &h.levels[pos].parent;
            for (i, slot) in rest[0].iter_mut().enumerate() {
                *slot = above[parents[i]] + score(pos, i);
            }
        }
        let leaves = self.acc.last().expect("non-empty hierarchy");
        let mut best = 0;
        for (i, &s) in leaves.iter().enumerate().skip(1) {
            if s > leaves[best] {
                best = i;
            }
        }
        (best, leaves[best])
    }
}

fn parse_config(source: &str) -> Result<LabelHierarchy> {
    let mut depth: Option<usize> = None;
    let mut names: Vec<Option<Vec<String>>> = Vec::new();
    let mut ignores: Vec<(usize, usize, String)> = Vec::new();
    let mut edges: Vec<(usize, usize, String, usize, String)> = Vec::new();

    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (keyword, rest) = line
            .split_once(char::is_whitespace)
            .map(|(k, r)| (k, r.trim()))
            .unwrap_or((line, ""));
        match keyword {
            "levels" => {
                if depth.is_some() {
                    return Err(Error::parse(line_no, "repeated `levels` header"));
                }
                let h: usize = rest
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad level count `{rest}`")))?;
                if h == 0 {
                    return Err(Error::parse(line_no, "level count must be at least 1"));
                }
                depth = Some(h);
                names = vec![None; h];
            }
            "level" => {
                let h = depth.ok_or_else(|| Error::parse(line_no, "`level` before `levels` header"))?;
                let (num, list) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line_no, "expected `level h: name1,name2,...`"))?;
                let level = parse_level(num, h, line_no)?;
                if names[level - 1].is_some() {
                    return Err(Error::parse(line_no, format!("level {level} declared twice")));
                }
                let list: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
                if list.iter().any(|s| s.is_empty()) {
                    return Err(Error::parse(line_no, "empty class name"));
                }
                names[level - 1] = Some(list);
            }
            "ignore" => {
                let h = depth.ok_or_else(|| Error::parse(line_no, "`ignore` before `levels` header"))?;
                let (level, name) = parse_node(rest, h, line_no)?;
                ignores.push((line_no, level, name));
            }
            "edge" => {
                let h = depth.ok_or_else(|| Error::parse(line_no, "`edge` before `levels` header"))?;
                let (child, parent) = rest
                    .split_once("->")
                    .ok_or_else(|| Error::parse(line_no, "expected `edge h+1:child -> h:parent`"))?;
                let (cl, cn) = parse_node(child, h, line_no)?;
                let (pl, pn) = parse_node(parent, h, line_no)?;
                edges.push((line_no, cl, cn, pl, pn));
            }
            other => {
                return Err(Error::parse(line_no, format!("unknown directive `{other}`")));
            }
        }
    }

    let depth = depth.ok_or_else(|| Error::parse(0, "missing `levels` header"))?;
    let level_classes: Vec<Vec<String>> = names
        .into_iter()
        .enumerate()
        .map(|(pos, n)| n.ok_or_else(|| Error::parse(0, format!("level {} never declared", pos + 1))))
        .collect::<Result<_>>()?;

    let lookup = |level: usize, name: &str, line_no: usize| -> Result<usize> {
        level_classes[level - 1]
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::parse(line_no, format!("unknown class `{name}` at level {level}")))
    };

    let mut parents: Vec<Vec<Option<usize>>> =
        level_classes.iter().map(|l| vec![None; l.len()]).collect();
    for (line_no, cl, cn, pl, pn) in &edges {
        if *cl == 1 || *pl + 1 != *cl {
            return Err(Error::Hierarchy(format!(
                "edge from `{cn}` (level {cl}) to `{pn}` (level {pl}) must go to the level directly above"
            )));
        }
        let c = lookup(*cl, cn, *line_no)?;
        let p = lookup(*pl, pn, *line_no)?;
        let slot = &mut parents[cl - 1][c];
        match slot {
            Some(prev) if *prev != p => {
                return Err(Error::Hierarchy(format!(
                    "class `{cn}` at level {cl} has multiple parents (`{}` and `{pn}`)",
                    level_classes[pl - 1][*prev]
                )));
            }
            Some(_) => {
                return Err(Error::Hierarchy(format!(
                    "duplicate edge `{cn}` -> `{pn}` at level {cl}"
                )));
            }
            None => *slot = Some(p),
        }
    }

    let mut resolved: Vec<Vec<usize>> = vec![Vec::new()];
    for pos in 1..depth {
        let level = parents[pos]
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| {
                    Error::Hierarchy(format!(
                        "class `{}` at level {} has no parent",
                        level_classes[pos][i],
                        pos + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        resolved.push(level);
    }

    let mut ignore = vec![None; depth];
    for (line_no, level, name) in &ignores {
        let idx = lookup(*level, name, *line_no)?;
        if ignore[level - 1].replace(idx).is_some() {
            return Err(Error::parse(*line_no, format!("level {level} has two ignore classes")));
        }
    }

    LabelHierarchy::new(level_classes, resolved, ignore)
}

fn parse_level(text: &str, depth: usize, line_no: usize) -> Result<usize> {
    let text = text.trim();
    let level: usize = text
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad level number `{text}`")))?;
    if level == 0 || level > depth {
        return Err(Error::parse(
            line_no,
            format!("level {level} outside 1..={depth}"),
        ));
    }
    Ok(level)
}

fn parse_node(text: &str, depth: usize, line_no: usize) -> Result<(usize, String)> {
    let (level, name) = text
        .split_once(':')
        .ok_or_else(|| Error::parse(line_no, format!("expected `level:name`, got `{}`", text.trim())))?;
    let level = parse_level(level, depth, line_no)?;
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::parse(line_no, "empty class name"));
    }
    Ok((level, name.to_string()))
}
