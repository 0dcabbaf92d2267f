use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{argmax, LinearHead, SceneId};
use crate::tsv;

use super::contribution::NeuronContribution;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub disabled_units: BTreeSet<usize>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub predictions_before: Vec<SceneId>,
    pub predictions_after: Vec<SceneId>,
}

fn check_units(head: &LinearHead, disabled: &BTreeSet<usize>) -> Result<()> {
    match disabled.last() {
        Some(&unit) if unit >= head.units() => Err(Error::UnitOutOfRange {
            unit,
            units: head.units(),
        }),
        _ => Ok(()),
    }
}

fn check_features(head: &LinearHead, features: &[Vec<f32>]) -> Result<()> {
    match features.iter().find(|f| f.len() != head.units()) {
        Some(f) => Err(Error::DimensionMismatch(format!(
            "feature vector of width {} for a head over {} units",
            f.len(),
            head.units()
        ))),
        None => Ok(()),
    }
}

/// Logits with the `disabled` features set to zero.
pub fn ablated_logits(
    head: &LinearHead,
    features: &[f32],
    disabled: &BTreeSet<usize>,
) -> Result<Vec<f32>> {
    check_units(head, disabled)?;
    if disabled.is_empty() {
        return Ok(head.logits(features));
    }
    let mut masked = features.to_vec();
    for &u in disabled {
        masked[u] = 0.0;
    }
    Ok(head.logits(&masked))
}

fn accuracy(predicted: &[SceneId], targets: &[SceneId]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / targets.len() as f64
}

/// Accuracy of the head before and after zeroing `disabled` in every feature
/// vector.
pub fn ablate(
    head: &LinearHead,
    features: &[Vec<f32>],
    targets: &[SceneId],
    disabled: &BTreeSet<usize>,
) -> Result<AblationResult> {
    check_units(head, disabled)?;
    check_features(head, features)?;
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature vectors for {} targets",
            features.len(),
            targets.len()
        )));
    }
    let predictions_before: Vec<SceneId> = features.par_iter().map(|f| head.predict(f)).collect();
    let predictions_after: Vec<SceneId> = features
        .par_iter()
        .map(|f| ablated_logits(head, f, disabled).map(|l| argmax(&l)))
        .collect::<Result<_>>()?;
    Ok(AblationResult {
        disabled_units: disabled.clone(),
        accuracy_before: accuracy(&predictions_before, targets),
        accuracy_after: accuracy(&predictions_after, targets),
        predictions_before,
        predictions_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Positive, Direction::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive" | "pos" => Ok(Direction::Positive),
            "negative" | "neg" => Ok(Direction::Negative),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// One point of a disable-k sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub direction: Direction,
    pub accuracy: f64,
    pub per_scene: BTreeMap<SceneId, f64>,
}

/// Each image loses the top-`k` positive (or negative) units of its target
/// scene; returns overall and per-scene accuracy. Scenes without a
/// contribution ranking lose nothing.
pub fn ablation_sweep(
    head: &LinearHead,
    features: &[Vec<f32>],
    targets: &[SceneId],
    contributions: &BTreeMap<SceneId, NeuronContribution>,
    direction: Direction,
    k: usize,
) -> Result<SweepRow> {
    check_features(head, features)?;
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature vectors for {} targets",
            features.len(),
            targets.len()
        )));
    }
    let disabled: BTreeMap<SceneId, BTreeSet<usize>> = contributions
        .iter()
        .map(|(&s, c)| {
            let units: BTreeSet<usize> = match direction {
                Direction::Positive => c.top_positive(k).iter().copied().collect(),
                Direction::Negative => c.top_negative(k).into_iter().collect(),
            };
            (s, units)
        })
        .collect();
    let empty = BTreeSet::new();
    let predicted: Vec<SceneId> = features
        .par_iter()
        .zip(targets)
        .map(|(f, t)| {
            ablated_logits(head, f, disabled.get(t).unwrap_or(&empty)).map(|l| argmax(&l))
        })
        .collect::<Result<_>>()?;

    let mut per_scene_hits: BTreeMap<SceneId, (usize, usize)> = BTreeMap::new();
    for (p, t) in predicted.iter().zip(targets) {
        let e = per_scene_hits.entry(*t).or_default();
        e.0 += usize::from(p == t);
        e.1 += 1;
    }
    Ok(SweepRow {
        k,
        direction,
        accuracy: accuracy(&predicted, targets),
        per_scene: per_scene_hits
            .into_iter()
            .map(|(s, (h, n))| (s, h as f64 / n as f64))
            .collect(),
    })
}

/// `k  direction  accuracy`
pub fn write_sweep_tsv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("#k\tdirection\taccuracy\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.k, r.direction, r.accuracy));
    }
    tsv::write_file(path, &out)
}

/// `k  direction  scene_id  accuracy`
pub fn write_sweep_per_scene_tsv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("#k\tdirection\tscene_id\taccuracy\n");
    for r in rows {
        for (s, a) in &r.per_scene {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.k, r.direction, s, a));
        }
    }
    tsv::write_file(path, &out)
}
