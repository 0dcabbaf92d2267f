//! Domain types shared across the pipeline: identifiers, vocabularies and the
//! linear classification head.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tsv;

/// Identifier of an annotated concept. `0` is reserved for "no concept".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(pub u32);

impl ConceptId {
    pub const NONE: ConceptId = ConceptId(0);
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Identifier of a scene label. Dense from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SceneId(pub u32);

impl SceneId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered set of concept ids. Ordered so every report iterates concepts
/// identically run to run.
pub type ConceptSet = BTreeSet<ConceptId>;

/// Lowercases, trims and replaces whitespace runs with `_`.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConceptCategory {
    Object,
    Part,
    Color,
    Material,
    Scene,
    Other,
}

impl ConceptCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ConceptCategory::Object => "object",
            ConceptCategory::Part => "part",
            ConceptCategory::Color => "color",
            ConceptCategory::Material => "material",
            ConceptCategory::Scene => "scene",
            ConceptCategory::Other => "other",
        }
    }
}

impl FromStr for ConceptCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "object" => ConceptCategory::Object,
            "part" => ConceptCategory::Part,
            "color" | "colour" => ConceptCategory::Color,
            "material" => ConceptCategory::Material,
            "scene" => ConceptCategory::Scene,
            "other" => ConceptCategory::Other,
            other => return Err(format!("unknown concept category `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptEntry {
    pub id: ConceptId,
    pub name: String,
    pub category: ConceptCategory,
}

/// The overall concept set of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptVocab {
    entries: Vec<ConceptEntry>,
    by_name: HashMap<String, ConceptId>,
}

impl ConceptVocab {
    /// Builds a vocabulary, checking ids are dense from 1 and normalized
    /// names are unique. Entries may arrive in any order.
    pub fn new(entries: impl IntoIterator<Item = ConceptEntry>) -> Result<Self> {
        let mut entries: Vec<ConceptEntry> = entries
            .into_iter()
            .map(|mut e| {
                e.name = normalize_name(&e.name);
                e
            })
            .collect();
        entries.sort_by_key(|e| e.id);
        let mut by_name = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.id.0 as usize != i + 1 {
                return Err(Error::VocabMismatch(format!(
                    "concept ids must be dense from 1; found {} at position {}",
                    e.id,
                    i + 1
                )));
            }
            if e.name.is_empty() {
                return Err(Error::VocabMismatch(format!(
                    "concept {} has an empty name",
                    e.id
                )));
            }
            if by_name.insert(e.name.clone(), e.id).is_some() {
                return Err(Error::VocabMismatch(format!(
                    "duplicate concept name `{}`",
                    e.name
                )));
            }
        }
        Ok(ConceptVocab { entries, by_name })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ConceptEntry] {
        &self.entries
    }

    pub fn get(&self, id: ConceptId) -> Option<&ConceptEntry> {
        if id == ConceptId::NONE {
            return None;
        }
        self.entries.get(id.0 as usize - 1)
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        self.get(id).is_some()
    }

    pub fn name(&self, id: ConceptId) -> Option<&str> {
        self.get(id).map(|e| e.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<ConceptId> {
        self.by_name.get(&normalize_name(name)).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for row in tsv::read_rows(path)? {
            let row = row?;
            row.expect_fields(3)?;
            entries.push(ConceptEntry {
                id: ConceptId(row.parse(0)?),
                name: row.field(1).to_string(),
                category: row.parse_with(2, ConceptCategory::from_str)?,
            });
        }
        Self::new(entries).map_err(|e| match e {
            Error::VocabMismatch(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, e.name, e.category.as_str()));
        }
        tsv::write_file(path, &out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneEntry {
    pub id: SceneId,
    pub name: String,
}

/// The scene label set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SceneVocab {
    entries: Vec<SceneEntry>,
}

impl SceneVocab {
    pub fn new(entries: impl IntoIterator<Item = SceneEntry>) -> Result<Self> {
        let mut entries: Vec<SceneEntry> = entries
            .into_iter()
            .map(|mut e| {
                e.name = normalize_name(&e.name);
                e
            })
            .collect();
        entries.sort_by_key(|e| e.id);
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.id.index() != i {
                return Err(Error::VocabMismatch(format!(
                    "scene ids must be dense from 0; found {} at position {i}",
                    e.id
                )));
            }
            if !seen.insert(e.name.clone()) {
                return Err(Error::VocabMismatch(format!(
                    "duplicate scene name `{}`",
                    e.name
                )));
            }
        }
        Ok(SceneVocab { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SceneEntry] {
        &self.entries
    }

    pub fn contains(&self, id: SceneId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn name(&self, id: SceneId) -> Option<&str> {
        self.entries.get(id.index()).map(|e| e.name.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = SceneId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// Scene files carry a category column like concept files; it is
    /// accepted and ignored so both vocabularies share one layout.
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for row in tsv::read_rows(path)? {
            let row = row?;
            if row.len() < 2 {
                return Err(row.error("expected at least 2 fields"));
            }
            entries.push(SceneEntry {
                id: SceneId(row.parse(0)?),
                name: row.field(1).to_string(),
            });
        }
        Self::new(entries).map_err(|e| match e {
            Error::VocabMismatch(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\tscene\n", e.id, e.name));
        }
        tsv::write_file(path, &out)
    }
}

/// Scene classifier over pooled unit features: `logits = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    scenes: usize,
    units: usize,
    /// Row-major `[scenes][units]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl LinearHead {
    pub fn new(scenes: usize, units: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if scenes == 0 || units == 0 {
            return Err(Error::DimensionMismatch(
                "linear head needs at least one scene and unit".into(),
            ));
        }
        if weights.len() != scenes * units || bias.len() != scenes {
            return Err(Error::DimensionMismatch(format!(
                "linear head {scenes}x{units} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "linear head has non-finite parameters".into(),
            ));
        }
        Ok(LinearHead {
            scenes,
            units,
            weights,
            bias,
        })
    }

    pub fn scenes(&self) -> usize {
        self.scenes
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn weight_row(&self, scene: usize) -> &[f32] {
        &self.weights[scene * self.units..(scene + 1) * self.units]
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Logits for one pooled feature vector. Accumulates in `f64` in unit
    /// order, so results are reproducible bit for bit.
    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        assert_eq!(features.len(), self.units, "feature width must match head");
        (0..self.scenes)
            .map(|s| {
                let dot: f64 = self
                    .weight_row(s)
                    .iter()
                    .zip(features)
                    .map(|(&w, &x)| w as f64 * x as f64)
                    .sum();
                (dot + self.bias[s] as f64) as f32
            })
            .collect()
    }

    pub fn predict(&self, features: &[f32]) -> SceneId {
        argmax(&self.logits(features))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<tsv::Row> = tsv::read_rows(path)?.collect::<Result<_>>()?;
        let Some((header, body)) = rows.split_first() else {
            return Err(Error::format(path, "empty linear head file"));
        };
        header.expect_fields(2)?;
        let scenes: usize = header.parse(0)?;
        let units: usize = header.parse(1)?;
        if body.len() != scenes + 1 {
            return Err(Error::format(
                path,
                format!(
                    "expected {} rows after header, found {}",
                    scenes + 1,
                    body.len()
                ),
            ));
        }
        let mut weights = Vec::with_capacity(scenes * units);
        for row in &body[..scenes] {
            row.expect_fields(units)?;
            for i in 0..units {
                weights.push(row.parse::<f32>(i)?);
            }
        }
        let bias_row = &body[scenes];
        bias_row.expect_fields(scenes)?;
        let bias = (0..scenes)
            .map(|i| bias_row.parse::<f32>(i))
            .collect::<Result<_>>()?;
        Self::new(scenes, units, weights, bias).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!("{}\t{}\n", self.scenes, self.units);
        for s in 0..self.scenes {
            out.push_str(&tsv::join_floats(self.weight_row(s)));
            out.push('\n');
        }
        out.push_str(&tsv::join_floats(&self.bias));
        out.push('\n');
        tsv::write_file(path, &out)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> SceneId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    SceneId(best as u32)
}
