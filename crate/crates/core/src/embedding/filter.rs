//! Concept filtering: every concept is replaced by its cluster's
//! representative, and the dataset-level IoU is recomputed on the merged
//! masks.

use std::collections::BTreeMap;

use crate::dissection::{dataset_iou, UnitThresholds};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{ConceptId, ConceptSet};

use super::cluster::ConceptClustering;

/// Maps each concept of `scene_concepts` to its representative. Returns the
/// filtered set and the map that produced it.
pub fn concept_filter(
    scene_concepts: &ConceptSet,
    clustering: &ConceptClustering,
) -> Result<(ConceptSet, BTreeMap<ConceptId, ConceptId>)> {
    let relabel = clustering.relabel_map();
    let mut map = BTreeMap::new();
    for &c in scene_concepts {
        let rep = *relabel.get(&c).ok_or(Error::UnclusteredConcept(c))?;
        map.insert(c, rep);
    }
    let filtered = map.values().copied().collect();
    Ok((filtered, map))
}

/// `100 · (b − a) / a`.
pub fn gain_percent(a: f64, b: f64) -> Result<f64> {
    if a == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (b - a) / a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouGain {
    /// Mean best per-unit IoU before filtering.
    pub a: f64,
    /// Same, after relabeling concepts to their representatives.
    pub b: f64,
    pub gain: f64,
}

/// IoU before and after filtering every dataset concept through
/// `clustering`. Concepts outside the clustering keep their own label.
pub fn iou_gain(
    dataset: &DatasetManifest,
    thresholds: &UnitThresholds,
    clustering: &ConceptClustering,
) -> Result<IouGain> {
    let a = dataset_iou(dataset, thresholds, None)?.mean_best_iou();
    let b = dataset_iou(dataset, thresholds, Some(&clustering.relabel_map()))?.mean_best_iou();
    Ok(IouGain {
        a,
        b,
        gain: gain_percent(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissection::dataset_iou_from_pairs;
    use crate::volume::{ActivationVolume, SegmentationMask};

    fn clustering(groups: &[(&[u32], u32)]) -> ConceptClustering {
        ConceptClustering {
            k: groups.len(),
            clusters: groups
                .iter()
                .map(|(m, _)| m.iter().map(|&c| ConceptId(c)).collect())
                .collect(),
            representatives: groups.iter().map(|&(_, r)| ConceptId(r)).collect(),
            cost: 0.0,
        }
    }

    fn set(ids: &[u32]) -> ConceptSet {
        ids.iter().map(|&c| ConceptId(c)).collect()
    }

    #[test]
    fn synonyms_fuse() {
        // 1 = chair, 2 = armchair, 3 = table
        let cl = clustering(&[(&[1, 2], 1), (&[3], 3)]);
        let (filtered, map) = concept_filter(&set(&[2, 3]), &cl).unwrap();
        assert_eq!(filtered, set(&[1, 3]));
        assert_eq!(map[&ConceptId(2)], ConceptId(1));
        let (again, _) = concept_filter(&filtered, &cl).unwrap();
        assert_eq!(again, filtered);
    }

    #[test]
    fn unclustered_concept_is_an_error() {
        let cl = clustering(&[(&[1], 1)]);
        assert!(matches!(
            concept_filter(&set(&[1, 4]), &cl),
            Err(Error::UnclusteredConcept(ConceptId(4)))
        ));
    }

    #[test]
    fn gain_examples() {
        assert!((gain_percent(0.10, 0.126).unwrap() - 26.0).abs() < 1e-9);
        assert_eq!(gain_percent(0.2, 0.2).unwrap(), 0.0);
        assert!(gain_percent(0.2, 0.1).unwrap() < 0.0);
        assert!(matches!(gain_percent(0.0, 0.1), Err(Error::ZeroBaseline)));
    }

    /// One unit firing on the left half; concepts 1 and 2 each cover one
    /// quarter of it, so merging them doubles the overlap.
    fn half_mask_pairs() -> (Vec<(ActivationVolume, SegmentationMask)>, UnitThresholds) {
        let (h, w) = (4, 4);
        let act: Vec<f32> = (0..h * w)
            .map(|i| if i % w < 2 { 1.0 } else { 0.0 })
            .collect();
        let volume = ActivationVolume::new(1, h, w, act).unwrap();
        let labels: Vec<u32> = (0..h * w)
            .map(|i| match (i / w, i % w) {
                (r, c) if c < 2 && r < 2 => 1,
                (_, c) if c < 2 => 2,
                _ => 3,
            })
            .collect();
        let mask = SegmentationMask::new(1, h, w, labels).unwrap();
        let thresholds = UnitThresholds {
            thresholds: vec![0.5],
            quantile_level: 0.5,
        };
        (vec![(volume, mask)], thresholds)
    }

    #[test]
    fn merging_halves_raises_iou() {
        let (pairs, th) = half_mask_pairs();
        let before = dataset_iou_from_pairs(&pairs, &th, None)
            .unwrap()
            .mean_best_iou();
        let merge = clustering(&[(&[1, 2], 1), (&[3], 3)]).relabel_map();
        let after = dataset_iou_from_pairs(&pairs, &th, Some(&merge))
            .unwrap()
            .mean_best_iou();
        assert!((before - 0.5).abs() < 1e-12);
        assert!((after - 1.0).abs() < 1e-12);
        assert!(gain_percent(before, after).unwrap() > 0.0);
    }

    #[test]
    fn identity_clustering_has_zero_gain() {
        let (pairs, th) = half_mask_pairs();
        let identity = ConceptClustering::identity(&set(&[1, 2, 3])).relabel_map();
        let before = dataset_iou_from_pairs(&pairs, &th, None)
            .unwrap()
            .mean_best_iou();
        let after = dataset_iou_from_pairs(&pairs, &th, Some(&identity))
            .unwrap()
            .mean_best_iou();
        assert_eq!(gain_percent(before, after).unwrap(), 0.0);
    }
}
