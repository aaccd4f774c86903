//! Region-level train/validation/test splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

impl FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" | "validation" => Ok(SplitRole::Validation),
            "test" => Ok(SplitRole::Test),
            other => Err(Error::InvalidArgument(format!("unknown split role `{other}`"))),
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "val",
            SplitRole::Test => "test",
        })
    }
}

/// Region name to split role, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitTable {
    entries: Vec<(String, SplitRole)>,
}

impl SplitTable {
    pub fn new(entries: Vec<(String, SplitRole)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("split table lists no regions".into()));
        }
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("region `{name}` listed twice")));
            }
        }
        Ok(SplitTable { entries })
    }

    /// The six-region Campus3D split: FASS, YIH, RA, UCC train; PGP
    /// validation; FOE test.
    pub fn campus3d() -> Self {
        Self::parse("FASS=train\nYIH=train\nRA=train\nUCC=train\nPGP=val\nFOE=test\n")
            .expect("valid table")
    }

    /// Parses `region=train|val|test` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (region, role) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected `region=train|val|test`"))?;
            let region = region.trim();
            if region.is_empty() {
                return Err(Error::parse(i + 1, "empty region name"));
            }
            let role: SplitRole = role
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("unknown split role `{}`", role.trim())))?;
            if !seen.insert(region.to_string()) {
                return Err(Error::parse(i + 1, format!("region `{region}` listed twice")));
            }
            entries.push((region.to_string(), role));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(String, SplitRole)] {
        &self.entries
    }

    pub fn role(&self, region: &str) -> Option<SplitRole> {
        self.entries.iter().find(|(r, _)| r == region).map(|(_, role)| *role)
    }

    pub fn regions(&self, role: SplitRole) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, r)| *r == role)
            .map(|(name, _)| name.as_str())
            .collect()
    }

    /// Picks one region of `role` uniformly, e.g. before drawing a training
    /// sample from it.
    pub fn choose_region(&self, role: SplitRole, rng: &mut impl Rng) -> Option<&str> {
        let regions = self.regions(role);
        if regions.is_empty() {
            None
        } else {
            Some(regions[rng.gen_range(0..regions.len())])
        }
    }
}

impl fmt::Display for SplitTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (region, role) in &self.entries {
            writeln!(f, "{region}={role}")?;
        }
        Ok(())
    }
}

/// Regions grouped by role, each keeping its name. `unassigned` lists input
/// regions the table does not mention.
#[derive(Debug, Clone, Default)]
pub struct SplitGroups {
    pub train: Vec<(String, PointCloud)>,
    pub validation: Vec<(String, PointCloud)>,
    pub test: Vec<(String, PointCloud)>,
    pub unassigned: Vec<String>,
}

impl SplitGroups {
    pub fn group(&self, role: SplitRole) -> &[(String, PointCloud)] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Validation => &self.validation,
            SplitRole::Test => &self.test,
        }
    }

    pub fn names(&self, role: SplitRole) -> Vec<&str> {
        self.group(role).iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn point_count(&self, role: SplitRole) -> usize {
        self.group(role).iter().map(|(_, c)| c.len()).sum()
    }
}

pub fn apply_split(mut clouds: BTreeMap<String, PointCloud>, table: &SplitTable) -> Result<SplitGroups> {
    if let Some((missing, _)) = table.entries.iter().find(|(r, _)| !clouds.contains_key(r)) {
        return Err(Error::MissingRegion(missing.clone()));
    }
    let mut groups = SplitGroups::default();
    for (region, role) in &table.entries {
        let cloud = clouds.remove(region).expect("checked above");
        let slot = match role {
            SplitRole::Train => &mut groups.train,
            SplitRole::Validation => &mut groups.validation,
            SplitRole::Test => &mut groups.test,
        };
        slot.push((region.clone(), cloud));
    }
    groups.unassigned = clouds.into_keys().collect();
    Ok(groups)
}
