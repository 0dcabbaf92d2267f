use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConceptSet, SceneId};
use crate::tsv;

/// Per-unit contribution of a layer to one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronContribution {
    pub scene: SceneId,
    /// Indexed by unit.
    pub scores: Vec<i64>,
    /// Units by descending score, ties to the lower unit.
    pub ranking: Vec<usize>,
}

impl NeuronContribution {
    pub fn from_scores(scene: SceneId, scores: Vec<i64>) -> Self {
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        NeuronContribution {
            scene,
            scores,
            ranking,
        }
    }

    /// The `k` highest-scoring units.
    pub fn top_positive(&self, k: usize) -> &[usize] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    /// The `k` lowest-scoring units, most negative first.
    pub fn top_negative(&self, k: usize) -> Vec<usize> {
        self.ranking.iter().rev().take(k).copied().collect()
    }

    /// Element-wise sum; scores over disjoint image sets add up.
    pub fn combine(&self, other: &NeuronContribution) -> Result<NeuronContribution> {
        if self.scene != other.scene || self.scores.len() != other.scores.len() {
            return Err(Error::DimensionMismatch(
                "contributions of different scenes or layers".into(),
            ));
        }
        let scores = self
            .scores
            .iter()
            .zip(&other.scores)
            .map(|(a, b)| a + b)
            .collect();
        Ok(NeuronContribution::from_scores(self.scene, scores))
    }
}

/// Sums `|LC_t ∩ CC| − |LC_t \ CC|` for every unit `t` over the correctly
/// predicted images of `scene`. Each entry of `images` is one image's
/// per-unit learned concepts.
pub fn contribution_scores(
    scene: SceneId,
    images: &[&[ConceptSet]],
    cc: &ConceptSet,
) -> Result<NeuronContribution> {
    let Some(first) = images.first() else {
        return Err(Error::NoTruePredictions(scene));
    };
    let units = first.len();
    let mut scores = vec![0i64; units];
    for per_unit in images {
        if per_unit.len() != units {
            return Err(Error::DimensionMismatch(format!(
                "learned concepts for {} units, expected {units}",
                per_unit.len()
            )));
        }
        for (s, lc) in scores.iter_mut().zip(per_unit.iter()) {
            let p = lc.intersection(cc).count() as i64;
            let n = lc.len() as i64 - p;
            *s += p - n;
        }
    }
    Ok(NeuronContribution::from_scores(scene, scores))
}

/// `scene_id  unit  score  rank`
pub fn write_contributions_tsv(
    path: &Path,
    contributions: &BTreeMap<SceneId, NeuronContribution>,
) -> Result<()> {
    let mut out = String::from("#scene_id\tunit\tscore\trank\n");
    for c in contributions.values() {
        for (rank, &u) in c.ranking.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.scene,
                u,
                c.scores[u],
                rank + 1
            ));
        }
    }
    tsv::write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConceptId;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> ConceptSet {
        ids.iter().map(|&c| ConceptId(c)).collect()
    }

    #[test]
    fn two_image_hand_case() {
        let a = [set(&[1, 2])];
        let b = [set(&[1])];
        let c = contribution_scores(SceneId(0), &[&a, &b], &set(&[1])).unwrap();
        assert_eq!(c.scores, vec![1]);
    }

    #[test]
    fn subset_and_disjoint_units() {
        let img = [set(&[1, 2]), set(&[5]), set(&[])];
        let c = contribution_scores(SceneId(0), &[&img, &img], &set(&[1, 2, 3])).unwrap();
        assert_eq!(c.scores, vec![4, -2, 0]);
        assert_eq!(c.ranking, vec![0, 2, 1]);
        assert_eq!(c.top_positive(1), &[0]);
        assert_eq!(c.top_negative(1), vec![1]);
    }

    #[test]
    fn ranking_ties_go_to_lower_unit() {
        let c = NeuronContribution::from_scores(SceneId(1), vec![2, 5, 5, 2]);
        assert_eq!(c.ranking, vec![1, 2, 0, 3]);
    }

    #[test]
    fn no_images_is_an_error() {
        assert!(matches!(
            contribution_scores(SceneId(2), &[], &set(&[1])),
            Err(Error::NoTruePredictions(SceneId(2)))
        ));
    }

    fn arb_image(units: usize) -> impl Strategy<Value = Vec<ConceptSet>> {
        prop::collection::vec(
            prop::collection::btree_set((0u32..8).prop_map(ConceptId), 0..5),
            units,
        )
    }

    proptest! {
        #[test]
        fn additive_over_disjoint_subsets(
            images in prop::collection::vec(arb_image(4), 2..10),
            cc in prop::collection::btree_set((0u32..8).prop_map(ConceptId), 1..5),
            split in 1usize..9,
        ) {
            let split = split.min(images.len() - 1);
            let refs: Vec<&[ConceptSet]> = images.iter().map(|v| v.as_slice()).collect();
            let whole = contribution_scores(SceneId(0), &refs, &cc).unwrap();
            let left = contribution_scores(SceneId(0), &refs[..split], &cc).unwrap();
            let right = contribution_scores(SceneId(0), &refs[split..], &cc).unwrap();
            prop_assert_eq!(left.combine(&right).unwrap(), whole.clone());
            let mut perm = whole.ranking.clone();
            perm.sort();
            prop_assert_eq!(perm, (0..4).collect::<Vec<_>>());
        }
    }
}
