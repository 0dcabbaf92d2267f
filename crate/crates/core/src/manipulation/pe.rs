use crate::error::{Error, Result};
use crate::explanation::{CoreConceptLookup, Metrics};
use crate::model::{ConceptSet, SceneId};

/// Explanation features of one image: its metrics against every scene's core
/// concepts, the reciprocal-rank summary of those metrics, and the pooled
/// unit features.
#[derive(Debug, Clone, PartialEq)]
pub struct PEFeatureVector {
    /// Indexed by scene.
    pub metrics: Vec<Metrics>,
    pub mrr: Vec<f64>,
    pub hidden: Vec<f32>,
}

impl PEFeatureVector {
    /// Every scene in `0..scenes` must have a non-empty core concept set.
    pub fn build(
        learned: &ConceptSet,
        cc: &CoreConceptLookup,
        scenes: usize,
        hidden: Vec<f32>,
    ) -> Result<Self> {
        let metrics = (0..scenes)
            .map(|s| {
                let core = cc.get(&SceneId(s as u32)).ok_or(Error::EmptyCoreConcepts)?;
                Metrics::compute(learned, core)
            })
            .collect::<Result<Vec<_>>>()?;
        let mrr = mrr_feature(&metrics);
        Ok(PEFeatureVector {
            metrics,
            mrr,
            hidden,
        })
    }

    /// `3|Y| + |Y| + U`
    pub fn len(&self) -> usize {
        4 * self.metrics.len() + self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout: `cm, sm, dm` per scene, then MRR per scene, then hidden.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for m in &self.metrics {
            out.extend([m.cm, m.sm, m.dm]);
        }
        out.extend(&self.mrr);
        out.extend(self.hidden.iter().map(|&h| h as f64));
        out
    }
}

fn ranks(values: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    let mut rank = vec![0; values.len()];
    for (pos, &s) in order.iter().enumerate() {
        rank[s] = pos + 1;
    }
    rank
}

/// Mean reciprocal rank of each scene over the three metrics. CM and SM rank
/// descending, DM ascending; ties go to the lower scene id.
pub fn mrr_feature(per_scene: &[Metrics]) -> Vec<f64> {
    let cm: Vec<f64> = per_scene.iter().map(|m| m.cm).collect();
    let sm: Vec<f64> = per_scene.iter().map(|m| m.sm).collect();
    let dm: Vec<f64> = per_scene.iter().map(|m| m.dm).collect();
    let (rc, rs, rd) = (ranks(&cm, true), ranks(&sm, true), ranks(&dm, false));
    (0..per_scene.len())
        .map(|s| (1.0 / rc[s] as f64 + 1.0 / rs[s] as f64 + 1.0 / rd[s] as f64) / 3.0)
        .collect()
}
