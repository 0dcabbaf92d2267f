//! Neuron-concept alignment.
//!
//! A unit's activation map is upsampled to mask resolution, binarized at the
//! unit's dataset-wide threshold and compared against every candidate
//! concept's pixel set by IoU. Per image, a selection strategy turns the IoU
//! table into the set of concepts the layer learned for that image.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::model::{ConceptId, ConceptSet};
use crate::tsv;
use crate::volume::{ActivationVolume, PixelMask, SegmentationMask};

/// Fraction of each unit's activations that lies above its threshold.
pub const DEFAULT_QUANTILE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitThresholds {
    pub thresholds: Vec<f32>,
    pub quantile_level: f64,
}

impl UnitThresholds {
    pub fn units(&self) -> usize {
        self.thresholds.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!("#quantile {}\n", self.quantile_level);
        for (t, v) in self.thresholds.iter().enumerate() {
            out.push_str(&format!("{t}\t{v}\n"));
        }
        tsv::write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut quantile_level = None;
        let mut thresholds = Vec::new();
        for (line, text) in tsv::read_lines(path)? {
            if let Some(q) = text.strip_prefix("#quantile") {
                quantile_level = Some(
                    q.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, line, e.to_string()))?,
                );
                continue;
            }
            if text.trim().is_empty() || text.starts_with('#') {
                continue;
            }
            let row = tsv::Row::new(path, line, &text);
            row.expect_fields(2)?;
            let unit: usize = row.parse(0)?;
            if unit != thresholds.len() {
                return Err(row.error(format!("expected unit {}, found {unit}", thresholds.len())));
            }
            thresholds.push(row.parse::<f32>(1)?);
        }
        Ok(UnitThresholds {
            thresholds,
            quantile_level: quantile_level
                .ok_or_else(|| Error::format(path, "missing #quantile header"))?,
        })
    }
}

fn check_quantile(quantile: f64) -> Result<()> {
    if !(quantile > 0.0 && quantile <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "quantile level {quantile} outside (0, 0.5]"
        )));
    }
    Ok(())
}

/// The `(1 − quantile)` empirical quantile with linear interpolation between
/// order statistics (position `(n − 1)(1 − quantile)`). Reorders `values`.
pub fn upper_quantile(values: &mut [f32], quantile: f64) -> f32 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let pos = (values.len() - 1) as f64 * (1.0 - quantile);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_val = *lo_val as f64;
    if frac == 0.0 || upper.is_empty() {
        return lo_val as f32;
    }
    let hi_val = upper.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    (lo_val + frac * (hi_val - lo_val)) as f32
}

/// Per-unit thresholds over a set of activation volumes.
pub fn thresholds_from_volumes(
    volumes: &[ActivationVolume],
    quantile: f64,
) -> Result<UnitThresholds> {
    check_quantile(quantile)?;
    let first = volumes.first().ok_or(Error::EmptyDataset)?;
    let units = first.units();
    if let Some(v) = volumes.iter().find(|v| v.units() != units) {
        return Err(Error::DimensionMismatch(format!(
            "activation volumes disagree on unit count ({units} vs {})",
            v.units()
        )));
    }
    let thresholds = (0..units)
        .into_par_iter()
        .map(|t| {
            let mut values: Vec<f32> = volumes
                .iter()
                .flat_map(|v| v.unit_map(t).iter().copied())
                .collect();
            upper_quantile(&mut values, quantile)
        })
        .collect();
    Ok(UnitThresholds {
        thresholds,
        quantile_level: quantile,
    })
}

/// Per-unit thresholds over every image of the dataset.
pub fn compute_thresholds(dataset: &DatasetManifest, quantile: f64) -> Result<UnitThresholds> {
    check_quantile(quantile)?;
    if dataset.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let volumes: Vec<ActivationVolume> = dataset
        .images
        .par_iter()
        .map(|r| ActivationVolume::load(&r.activation_path))
        .collect::<Result<_>>()?;
    thresholds_from_volumes(&volumes, quantile)
}

/// Bilinear upsampling with corner-aligned sampling: target pixel `i` samples
/// source coordinate `i·(H − 1)/(H' − 1)`.
pub fn upsample_bilinear(
    map: &[f32],
    source: (usize, usize),
    target: (usize, usize),
) -> Result<Vec<f32>> {
    let (h, w) = source;
    let (th, tw) = target;
    if map.len() != h * w || h == 0 || w == 0 {
        return Err(Error::DimensionMismatch(format!(
            "map of {} values is not {h}x{w}",
            map.len()
        )));
    }
    if th < h || tw < w {
        return Err(Error::DimensionMismatch(format!(
            "cannot upsample {h}x{w} to smaller {th}x{tw}"
        )));
    }
    if (th, tw) == (h, w) {
        return Ok(map.to_vec());
    }
    let axis = |n: usize, tn: usize| -> Vec<(usize, usize, f64)> {
        (0..tn)
            .map(|i| {
                let s = if tn > 1 {
                    i as f64 * (n - 1) as f64 / (tn - 1) as f64
                } else {
                    0.0
                };
                let lo = (s.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let rows = axis(h, th);
    let cols = axis(w, tw);
    let at = |y: usize, x: usize| map[y * w + x] as f64;
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x1);
            let bottom = (1.0 - fx) * at(y1, x0) + fx * at(y1, x1);
            out.push(((1.0 - fy) * top + fy * bottom) as f32);
        }
    }
    Ok(out)
}

/// Pixels whose value strictly exceeds `threshold`.
pub fn binarize(map: &[f32], height: usize, width: usize, threshold: f32) -> PixelMask {
    let mut mask = PixelMask::new(height, width);
    for (i, &v) in map.iter().enumerate() {
        if v > threshold {
            mask.insert(i);
        }
    }
    mask
}

/// Intersection over union of two pixel sets on the same grid. Two empty
/// sets score 0.
pub fn iou(a: &PixelMask, b: &PixelMask) -> f64 {
    assert!(a.same_grid(b), "IoU operands must share a grid");
    let union = a.union_count(b);
    if union == 0 {
        return 0.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

/// Which concepts a unit is scored against.
#[derive(Debug, Clone, Copy)]
pub enum ConceptScope<'a> {
    /// A fixed candidate set, typically the concepts of one scene.
    Concepts(&'a ConceptSet),
    /// Every concept annotated in the image itself.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronConceptScores {
    pub unit: usize,
    pub scores: BTreeMap<ConceptId, f64>,
}

impl NeuronConceptScores {
    /// Highest IoU and its concept; ties go to the lowest concept id.
    pub fn best(&self) -> Option<(ConceptId, f64)> {
        let mut best: Option<(ConceptId, f64)> = None;
        for (&c, &s) in &self.scores {
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        best
    }

    pub fn max_iou(&self) -> f64 {
        self.best().map_or(0.0, |(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub image_id: u64,
    pub units: Vec<NeuronConceptScores>,
}

/// Scores every unit of one volume against the concepts in `scope`.
pub fn score_volume(
    volume: &ActivationVolume,
    mask: &SegmentationMask,
    thresholds: &UnitThresholds,
    scope: ConceptScope<'_>,
) -> Result<Vec<NeuronConceptScores>> {
    if thresholds.units() != volume.units() {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {} units",
            thresholds.units(),
            volume.units()
        )));
    }
    let (mh, mw) = (mask.height(), mask.width());
    let concept_masks = mask.concept_masks();
    let empty = PixelMask::new(mh, mw);
    let candidates: Vec<(ConceptId, &PixelMask)> = match scope {
        ConceptScope::Concepts(set) => set
            .iter()
            .map(|c| (*c, concept_masks.get(c).unwrap_or(&empty)))
            .collect(),
        ConceptScope::All => concept_masks.iter().map(|(c, m)| (*c, m)).collect(),
    };
    (0..volume.units())
        .map(|t| {
            let up = upsample_bilinear(
                volume.unit_map(t),
                (volume.height(), volume.width()),
                (mh, mw),
            )?;
            let active = binarize(&up, mh, mw, thresholds.thresholds[t]);
            let scores = candidates
                .iter()
                .map(|(c, m)| (*c, iou(&active, m)))
                .collect();
            Ok(NeuronConceptScores { unit: t, scores })
        })
        .collect()
}

/// Loads one image's activation and mask and scores every unit.
pub fn score_image(
    record: &ImageRecord,
    thresholds: &UnitThresholds,
    scope: ConceptScope<'_>,
) -> Result<ImageScores> {
    if let ConceptScope::Concepts(set) = scope {
        if set.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "image {}: empty scene concept set",
                record.image_id
            )));
        }
    }
    let volume = ActivationVolume::load(&record.activation_path)?;
    let mask = SegmentationMask::load(&record.mask_path)?;
    Ok(ImageScores {
        image_id: record.image_id,
        units: score_volume(&volume, &mask, thresholds, scope)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Every concept with positive IoU.
    WholeLayer,
    /// The single best concept per unit.
    HighestIou,
    /// Concepts at or above the smallest per-unit maximum IoU of the image.
    MinMaxThreshold,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::WholeLayer,
        Strategy::HighestIou,
        Strategy::MinMaxThreshold,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::WholeLayer => "whole_layer",
            Strategy::HighestIou => "highest_iou",
            Strategy::MinMaxThreshold => "threshold",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "whole_layer" | "whole" => Ok(Strategy::WholeLayer),
            "highest_iou" | "highest" => Ok(Strategy::HighestIou),
            "threshold" | "minmax" | "minmax_threshold" => Ok(Strategy::MinMaxThreshold),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnedConcepts {
    pub image_id: u64,
    pub strategy: Strategy,
    /// Indexed by unit.
    pub per_unit: Vec<ConceptSet>,
    pub union: ConceptSet,
}

impl LearnedConcepts {
    pub fn from_per_unit(image_id: u64, strategy: Strategy, per_unit: Vec<ConceptSet>) -> Self {
        let union = per_unit.iter().flatten().copied().collect();
        LearnedConcepts {
            image_id,
            strategy,
            per_unit,
            union,
        }
    }
}

/// Turns one image's per-unit IoU table into learned concepts.
///
/// `scores[i]` must describe unit `i`.
pub fn select_learned_concepts(
    image_id: u64,
    scores: &[NeuronConceptScores],
    strategy: Strategy,
) -> Result<LearnedConcepts> {
    if scores.is_empty() {
        return Err(Error::NoScores);
    }
    if let Some((i, s)) = scores.iter().enumerate().find(|(i, s)| s.unit != *i) {
        return Err(Error::DimensionMismatch(format!(
            "score row {i} describes unit {}",
            s.unit
        )));
    }
    let per_unit: Vec<ConceptSet> = match strategy {
        Strategy::WholeLayer => scores
            .iter()
            .map(|u| {
                u.scores
                    .iter()
                    .filter(|(_, &s)| s > 0.0)
                    .map(|(c, _)| *c)
                    .collect()
            })
            .collect(),
        Strategy::HighestIou => scores
            .iter()
            .map(|u| {
                u.best()
                    .filter(|&(_, s)| s > 0.0)
                    .map(|(c, _)| c)
                    .into_iter()
                    .collect()
            })
            .collect(),
        Strategy::MinMaxThreshold => {
            let theta = scores
                .iter()
                .map(NeuronConceptScores::max_iou)
                .filter(|&m| m > 0.0)
                .fold(f64::INFINITY, f64::min);
            scores
                .iter()
                .map(|u| {
                    u.scores
                        .iter()
                        .filter(|(_, &s)| s > 0.0 && s >= theta)
                        .map(|(c, _)| *c)
                        .collect()
                })
                .collect()
        }
    };
    Ok(LearnedConcepts::from_per_unit(image_id, strategy, per_unit))
}

/// Scores every image in parallel. `scope_of` picks each image's candidate
/// concepts.
pub fn dissect_images<'a, F>(
    records: &[&ImageRecord],
    thresholds: &UnitThresholds,
    scope_of: F,
) -> Result<Vec<ImageScores>>
where
    F: Fn(&ImageRecord) -> Result<ConceptScope<'a>> + Sync,
{
    records
        .par_iter()
        .map(|r| score_image(r, thresholds, scope_of(r)?))
        .collect()
}

/// Dataset-level IoU of every (unit, concept) pair: summed intersections over
/// summed unions across all images, as in classic network dissection.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIou {
    /// Indexed by unit.
    pub per_unit: Vec<BTreeMap<ConceptId, f64>>,
}

impl DatasetIou {
    /// Each unit's best IoU over all concepts (0 for a unit with none).
    pub fn best_per_unit(&self) -> Vec<f64> {
        self.per_unit
            .iter()
            .map(|m| m.values().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Mean over units of each unit's best IoU.
    pub fn mean_best_iou(&self) -> f64 {
        let best = self.best_per_unit();
        if best.is_empty() {
            return 0.0;
        }
        best.iter().sum::<f64>() / best.len() as f64
    }
}

struct IouCounts {
    active: Vec<u64>,
    concept: BTreeMap<ConceptId, u64>,
    inter: Vec<BTreeMap<ConceptId, u64>>,
}

impl IouCounts {
    fn empty(units: usize) -> Self {
        IouCounts {
            active: vec![0; units],
            concept: BTreeMap::new(),
            inter: vec![BTreeMap::new(); units],
        }
    }

    fn merge(mut self, other: IouCounts) -> Self {
        for (a, b) in self.active.iter_mut().zip(other.active) {
            *a += b;
        }
        for (c, n) in other.concept {
            *self.concept.entry(c).or_default() += n;
        }
        for (mine, theirs) in self.inter.iter_mut().zip(other.inter) {
            for (c, n) in theirs {
                *mine.entry(c).or_default() += n;
            }
        }
        self
    }
}

/// Merges concept pixel sets through `relabel` (concepts absent from the map
/// keep their own id).
pub fn relabel_masks(
    masks: BTreeMap<ConceptId, PixelMask>,
    relabel: &BTreeMap<ConceptId, ConceptId>,
) -> BTreeMap<ConceptId, PixelMask> {
    let mut out: BTreeMap<ConceptId, PixelMask> = BTreeMap::new();
    for (c, m) in masks {
        let target = relabel.get(&c).copied().unwrap_or(c);
        match out.get_mut(&target) {
            Some(existing) => existing.union_with(&m),
            None => {
                out.insert(target, m);
            }
        }
    }
    out
}

fn volume_counts(
    volume: &ActivationVolume,
    mask: &SegmentationMask,
    thresholds: &UnitThresholds,
    relabel: Option<&BTreeMap<ConceptId, ConceptId>>,
) -> Result<IouCounts> {
    let (mh, mw) = (mask.height(), mask.width());
    let mut concept_masks = mask.concept_masks();
    if let Some(map) = relabel {
        concept_masks = relabel_masks(concept_masks, map);
    }
    let mut counts = IouCounts::empty(volume.units());
    for (c, m) in &concept_masks {
        counts.concept.insert(*c, m.count() as u64);
    }
    for t in 0..volume.units() {
        let up = upsample_bilinear(
            volume.unit_map(t),
            (volume.height(), volume.width()),
            (mh, mw),
        )?;
        let active = binarize(&up, mh, mw, thresholds.thresholds[t]);
        counts.active[t] = active.count() as u64;
        for (c, m) in &concept_masks {
            let n = active.intersection_count(m) as u64;
            if n > 0 {
                counts.inter[t].insert(*c, n);
            }
        }
    }
    Ok(counts)
}

/// Dataset-level IoU from in-memory volumes and masks.
pub fn dataset_iou_from_pairs(
    pairs: &[(ActivationVolume, SegmentationMask)],
    thresholds: &UnitThresholds,
    relabel: Option<&BTreeMap<ConceptId, ConceptId>>,
) -> Result<DatasetIou> {
    let units = thresholds.units();
    if let Some((v, _)) = pairs.iter().find(|(v, _)| v.units() != units) {
        return Err(Error::DimensionMismatch(format!(
            "{units} thresholds for {} units",
            v.units()
        )));
    }
    let parts: Vec<IouCounts> = pairs
        .par_iter()
        .map(|(v, m)| volume_counts(v, m, thresholds, relabel))
        .collect::<Result<_>>()?;
    Ok(finish_counts(
        parts
            .into_iter()
            .fold(IouCounts::empty(units), IouCounts::merge),
    ))
}

/// Dataset-level IoU over every image of the manifest, optionally after
/// relabeling concepts (concept filtering).
pub fn dataset_iou(
    dataset: &DatasetManifest,
    thresholds: &UnitThresholds,
    relabel: Option<&BTreeMap<ConceptId, ConceptId>>,
) -> Result<DatasetIou> {
    if dataset.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let units = thresholds.units();
    // Image order is fixed so the integer reduction is reproducible.
    let parts: Vec<IouCounts> = dataset
        .images
        .par_iter()
        .map(|r| {
            let v = ActivationVolume::load(&r.activation_path)?;
            let m = SegmentationMask::load(&r.mask_path)?;
            if v.units() != units {
                return Err(Error::DimensionMismatch(format!(
                    "{units} thresholds for {} units",
                    v.units()
                )));
            }
            volume_counts(&v, &m, thresholds, relabel)
        })
        .collect::<Result<_>>()?;
    Ok(finish_counts(
        parts
            .into_iter()
            .fold(IouCounts::empty(units), IouCounts::merge),
    ))
}

fn finish_counts(counts: IouCounts) -> DatasetIou {
    let per_unit = counts
        .inter
        .iter()
        .zip(&counts.active)
        .map(|(inter, &active)| {
            counts
                .concept
                .iter()
                .map(|(c, &area)| {
                    let i = inter.get(c).copied().unwrap_or(0);
                    let union = active + area - i;
                    let score = if union == 0 {
                        0.0
                    } else {
                        i as f64 / union as f64
                    };
                    (*c, score)
                })
                .collect()
        })
        .collect();
    DatasetIou { per_unit }
}

/// `image_id  unit  concept_id  iou`, one row per scored pair.
pub fn write_scores_tsv(path: &Path, images: &[ImageScores]) -> Result<()> {
    let mut out = String::from("#image_id\tunit\tconcept_id\tiou\n");
    for img in images {
        for u in &img.units {
            for (c, s) in &u.scores {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", img.image_id, u.unit, c, s));
            }
        }
    }
    tsv::write_file(path, &out)
}

/// `image_id  strategy  unit  concept_id`. Images whose learned set is empty
/// get one row with `-` in the unit and concept columns so that every
/// dissected image appears in the file.
pub fn write_learned_tsv(path: &Path, learned: &[LearnedConcepts]) -> Result<()> {
    let mut out = String::from("#image_id\tstrategy\tunit\tconcept_id\n");
    for lc in learned {
        if lc.union.is_empty() {
            out.push_str(&format!("{}\t{}\t-\t-\n", lc.image_id, lc.strategy));
            continue;
        }
        for (t, set) in lc.per_unit.iter().enumerate() {
            for c in set {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", lc.image_id, lc.strategy, t, c));
            }
        }
    }
    tsv::write_file(path, &out)
}

/// Learned concepts keyed by strategy, then image id.
pub type LearnedTable = BTreeMap<Strategy, BTreeMap<u64, LearnedConcepts>>;

/// Reads a file produced by [`write_learned_tsv`]; `units` sizes the per-unit
/// vectors.
pub fn read_learned_tsv(path: &Path, units: usize) -> Result<LearnedTable> {
    let mut raw: BTreeMap<Strategy, BTreeMap<u64, Vec<ConceptSet>>> = BTreeMap::new();
    for row in tsv::read_rows(path)? {
        let row = row?;
        row.expect_fields(4)?;
        let image_id: u64 = row.parse(0)?;
        let strategy: Strategy = row.parse(1)?;
        let per_unit = raw
            .entry(strategy)
            .or_default()
            .entry(image_id)
            .or_insert_with(|| vec![ConceptSet::new(); units]);
        if row.field(2).trim() == "-" {
            continue;
        }
        let unit: usize = row.parse(2)?;
        if unit >= units {
            return Err(row.error(format!("unit {unit} out of range for {units} units")));
        }
        per_unit[unit].insert(ConceptId(row.parse(3)?));
    }
    Ok(raw
        .into_iter()
        .map(|(s, images)| {
            let images = images
                .into_iter()
                .map(|(id, per_unit)| (id, LearnedConcepts::from_per_unit(id, s, per_unit)))
                .collect();
            (s, images)
        })
        .collect())
}
