//! Two-level semantic class tree: root -> coarse superclasses -> fine classes.

use crate::detections::DetectionSet;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("'{0}' is not a fine-grained class")]
    NotFine(String),
    #[error("'{0}' is not a coarse class")]
    NotCoarse(String),
    #[error("class name '{0}' appears more than once in the taxonomy")]
    DuplicateName(String),
    #[error("coarse class '{0}' has no children")]
    EmptySuperclass(String),
    #[error("taxonomy is deeper than two levels below the root (under '{0}')")]
    TooDeep(String),
    #[error("missing train count for fine class '{0}'")]
    MissingCount(String),
    #[error("train count given for '{0}', which is not a fine class")]
    StrayCount(String),
    #[error("lca level must be 0, 1 or 2, got {0}")]
    BadLevel(u8),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("failed to read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed taxonomy {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Root,
    Coarse,
    Fine,
}

/// Training-set cardinality bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CardinalityGroup {
    Many,
    Medium,
    Few,
}

impl CardinalityGroup {
    pub const ALL: [CardinalityGroup; 3] = [Self::Many, Self::Medium, Self::Few];

    /// Many above 50k instances, Few below 5k, Medium in between with both
    /// boundaries inclusive.
    pub fn from_count(count: u64) -> Self {
        if count > 50_000 {
            Self::Many
        } else if count >= 5_000 {
            Self::Medium
        } else {
            Self::Few
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Many => "Many",
            Self::Medium => "Medium",
            Self::Few => "Few",
        }
    }
}

impl fmt::Display for CardinalityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CoarseRecord {
    name: String,
    children: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaxonomyRecord {
    root: String,
    coarse: Vec<CoarseRecord>,
    train_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superclass {
    pub name: String,
    pub children: Vec<String>,
}

/// Immutable class hierarchy with per-class training cardinalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    root: String,
    coarse: Vec<Superclass>,
    /// Fine classes in declaration order.
    fine: Vec<String>,
    parent: HashMap<String, usize>,
    train_count: HashMap<String, u64>,
}

impl Taxonomy {
    pub fn new(
        root: impl Into<String>,
        coarse: Vec<Superclass>,
        train_counts: BTreeMap<String, u64>,
    ) -> Result<Self, TaxonomyError> {
        let root = root.into();
        let mut seen = HashSet::new();
        seen.insert(root.clone());
        let mut fine = Vec::new();
        let mut parent = HashMap::new();
        for (ci, sc) in coarse.iter().enumerate() {
            if !seen.insert(sc.name.clone()) {
                return Err(TaxonomyError::DuplicateName(sc.name.clone()));
            }
            if sc.children.is_empty() {
                return Err(TaxonomyError::EmptySuperclass(sc.name.clone()));
            }
            for child in &sc.children {
                if !seen.insert(child.clone()) {
                    return Err(TaxonomyError::DuplicateName(child.clone()));
                }
                fine.push(child.clone());
                parent.insert(child.clone(), ci);
            }
        }
        for name in train_counts.keys() {
            if !parent.contains_key(name) {
                return Err(TaxonomyError::StrayCount(name.clone()));
            }
        }
        let mut train_count = HashMap::new();
        for f in &fine {
            let n = train_counts
                .get(f)
                .ok_or_else(|| TaxonomyError::MissingCount(f.clone()))?;
            train_count.insert(f.clone(), *n);
        }
        Ok(Self {
            root,
            coarse,
            fine,
            parent,
            train_count,
        })
    }

    pub fn from_json_str(text: &str, path: &str) -> Result<Self, TaxonomyError> {
        let rec: TaxonomyRecord =
            serde_json::from_str(text).map_err(|source| TaxonomyError::Parse {
                path: path.to_owned(),
                source,
            })?;
        let mut coarse = Vec::with_capacity(rec.coarse.len());
        for c in rec.coarse {
            let mut children = Vec::with_capacity(c.children.len());
            for child in c.children {
                match child {
                    serde_json::Value::String(s) => children.push(s),
                    _ => return Err(TaxonomyError::TooDeep(c.name.clone())),
                }
            }
            coarse.push(Superclass {
                name: c.name,
                children,
            });
        }
        Self::new(rec.root, coarse, rec.train_counts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_json_str(&text, &display)
    }

    pub fn to_json_string(&self) -> String {
        let rec = TaxonomyRecord {
            root: self.root.clone(),
            coarse: self
                .coarse
                .iter()
                .map(|s| CoarseRecord {
                    name: s.name.clone(),
                    children: s.children.iter().cloned().map(Into::into).collect(),
                })
                .collect(),
            train_counts: self
                .train_count
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        };
        serde_json::to_string_pretty(&rec).expect("taxonomy always serializes")
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn superclasses(&self) -> &[Superclass] {
        &self.coarse
    }

    /// Fine classes in declaration order.
    pub fn fine_classes(&self) -> &[String] {
        &self.fine
    }

    pub fn level(&self, name: &str) -> Option<Level> {
        if name == self.root {
            Some(Level::Root)
        } else if self.parent.contains_key(name) {
            Some(Level::Fine)
        } else if self.coarse.iter().any(|c| c.name == name) {
            Some(Level::Coarse)
        } else {
            None
        }
    }

    pub fn is_fine(&self, name: &str) -> bool {
        self.parent.contains_key(name)
    }

    fn fine_parent(&self, name: &str) -> Result<usize, TaxonomyError> {
        match self.parent.get(name) {
            Some(i) => Ok(*i),
            None if self.level(name).is_some() => Err(TaxonomyError::NotFine(name.to_owned())),
            None => Err(TaxonomyError::UnknownClass(name.to_owned())),
        }
    }

    /// Superclass of a fine class.
    pub fn parent_of(&self, fine: &str) -> Result<&str, TaxonomyError> {
        Ok(&self.coarse[self.fine_parent(fine)?].name)
    }

    pub fn superclass(&self, name: &str) -> Result<&Superclass, TaxonomyError> {
        self.coarse
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| match self.level(name) {
                Some(_) => TaxonomyError::NotCoarse(name.to_owned()),
                None => TaxonomyError::UnknownClass(name.to_owned()),
            })
    }

    pub fn train_count(&self, fine: &str) -> Result<u64, TaxonomyError> {
        self.fine_parent(fine)?;
        Ok(self.train_count[fine])
    }

    /// 0 for the same class, 1 for siblings under one superclass, 2 otherwise.
    pub fn lca_distance(&self, a: &str, b: &str) -> Result<u8, TaxonomyError> {
        let pa = self.fine_parent(a)?;
        let pb = self.fine_parent(b)?;
        Ok(if a == b {
            0
        } else if pa == pb {
            1
        } else {
            2
        })
    }

    /// Fine classes within `max_lca` of `c`, excluding `c` itself, in
    /// declaration order.
    pub fn siblings_within(&self, c: &str, max_lca: u8) -> Result<Vec<&str>, TaxonomyError> {
        if max_lca > 2 {
            return Err(TaxonomyError::BadLevel(max_lca));
        }
        let pc = self.fine_parent(c)?;
        Ok(self
            .fine
            .iter()
            .filter(|d| d.as_str() != c)
            .filter(|d| match max_lca {
                0 => false,
                1 => self.parent[d.as_str()] == pc,
                _ => true,
            })
            .map(String::as_str)
            .collect())
    }

    pub fn group_by_cardinality(&self) -> BTreeMap<String, CardinalityGroup> {
        self.fine
            .iter()
            .map(|f| (f.clone(), CardinalityGroup::from_count(self.train_count[f])))
            .collect()
    }

    pub fn group_of(&self, fine: &str) -> Result<CardinalityGroup, TaxonomyError> {
        Ok(CardinalityGroup::from_count(self.train_count(fine)?))
    }

    /// Fine classes sorted by descending training cardinality; ties keep
    /// declaration order.
    pub fn classes_by_cardinality(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.fine.iter().map(String::as_str).collect();
        v.sort_by_key(|c| std::cmp::Reverse(self.train_count[*c]));
        v
    }

    /// Removes detections whose class is a coarse (or root) label.
    pub fn drop_coarse_detections(&self, dets: &DetectionSet) -> DetectionSet {
        dets.filter(|d| self.is_fine(&d.class))
    }
}

/// Test-time composition of hierarchical class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreComposition {
    /// Fine score only.
    A,
    /// Object score times fine score.
    B,
    /// Coarse score times fine score.
    C,
    /// Object, coarse and fine scores multiplied.
    D,
}

pub fn compose_hierarchical_scores(
    fine: f64,
    coarse: f64,
    object: f64,
    variant: ScoreComposition,
) -> Result<f64, TaxonomyError> {
    for s in [fine, coarse, object] {
        if !(0.0..=1.0).contains(&s) {
            return Err(TaxonomyError::ScoreOutOfRange(s));
        }
    }
    Ok(match variant {
        ScoreComposition::A => fine,
        ScoreComposition::B => object * fine,
        ScoreComposition::C => coarse * fine,
        ScoreComposition::D => object * coarse * fine,
    })
}
