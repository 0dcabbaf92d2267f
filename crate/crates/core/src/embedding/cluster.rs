//! k-medoids (PAM: greedy BUILD, then best-improvement SWAP) over concept
//! embeddings. Medoids are actual concepts, so each cluster's representative
//! is one of its members.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::knowledge::ConceptAlignment;
use crate::model::{ConceptId, ConceptSet};
use crate::tsv;

use super::transe::EmbeddingTable;

const MAX_SWAP_ROUNDS: usize = 1000;
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptClustering {
    pub k: usize,
    /// Members of each cluster, sorted by id. Clusters are ordered by their
    /// representative's id.
    pub clusters: Vec<Vec<ConceptId>>,
    pub representatives: Vec<ConceptId>,
    /// Sum of member-to-representative distances.
    pub cost: f64,
}

impl ConceptClustering {
    /// Every clustered concept mapped to its cluster representative.
    pub fn relabel_map(&self) -> BTreeMap<ConceptId, ConceptId> {
        self.clusters
            .iter()
            .zip(&self.representatives)
            .flat_map(|(members, &rep)| members.iter().map(move |&c| (c, rep)))
            .collect()
    }

    pub fn cluster_of(&self, concept: ConceptId) -> Option<usize> {
        self.clusters
            .iter()
            .position(|m| m.binary_search(&concept).is_ok())
    }

    /// Every concept is its own cluster.
    pub fn identity(concepts: &ConceptSet) -> Self {
        ConceptClustering {
            k: concepts.len(),
            clusters: concepts.iter().map(|&c| vec![c]).collect(),
            representatives: concepts.iter().copied().collect(),
            cost: 0.0,
        }
    }

    /// `concept_id  cluster  representative_id`
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("#concept_id\tcluster\trepresentative_id\n");
        let mut rows: Vec<(ConceptId, usize, ConceptId)> = Vec::new();
        for (i, (members, &rep)) in self.clusters.iter().zip(&self.representatives).enumerate() {
            rows.extend(members.iter().map(|&c| (c, i, rep)));
        }
        rows.sort();
        for (c, i, rep) in rows {
            out.push_str(&format!("{c}\t{i}\t{rep}\n"));
        }
        tsv::write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut by_cluster: BTreeMap<usize, (ConceptId, Vec<ConceptId>)> = BTreeMap::new();
        for row in tsv::read_rows(path)? {
            let row = row?;
            row.expect_fields(3)?;
            let c = ConceptId(row.parse(0)?);
            let i: usize = row.parse(1)?;
            let rep = ConceptId(row.parse(2)?);
            let entry = by_cluster.entry(i).or_insert((rep, Vec::new()));
            if entry.0 != rep {
                return Err(row.error(format!("cluster {i} has two representatives")));
            }
            entry.1.push(c);
        }
        let mut clusters = Vec::new();
        let mut representatives = Vec::new();
        for (_, (rep, mut members)) in by_cluster {
            members.sort();
            if members.binary_search(&rep).is_err() {
                return Err(Error::format(
                    path,
                    format!("representative {rep} is not a member of its cluster"),
                ));
            }
            clusters.push(members);
            representatives.push(rep);
        }
        Ok(ConceptClustering {
            k: clusters.len(),
            clusters,
            representatives,
            cost: f64::NAN,
        })
    }
}

/// Dense symmetric Euclidean distance matrix.
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &[&[f32]]) -> Self {
        let n = points.len();
        let d = (0..n * n)
            .into_par_iter()
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                points[i]
                    .iter()
                    .zip(points[j])
                    .map(|(a, b)| {
                        let x = *a as f64 - *b as f64;
                        x * x
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Nearest and second-nearest medoid (positions into the medoid list).
#[derive(Clone, Copy)]
struct Nearest {
    first: usize,
    d1: f64,
    d2: f64,
}

fn nearest(dm: &DistanceMatrix, medoids: &[usize]) -> Vec<Nearest> {
    (0..dm.len())
        .map(|j| {
            let mut n = Nearest {
                first: 0,
                d1: f64::INFINITY,
                d2: f64::INFINITY,
            };
            for (pos, &m) in medoids.iter().enumerate() {
                // A medoid is always nearest to itself.
                let d = if m == j { -1.0 } else { dm.get(j, m) };
                if d < n.d1 {
                    n.d2 = n.d1;
                    n = Nearest {
                        first: pos,
                        d1: d,
                        d2: n.d2,
                    };
                } else if d < n.d2 {
                    n.d2 = d;
                }
            }
            n.d1 = n.d1.max(0.0);
            n.d2 = n.d2.max(0.0);
            n
        })
        .collect()
}

/// PAM on a precomputed distance matrix. Returns medoid indices.
pub fn pam(dm: &DistanceMatrix, k: usize) -> Result<Vec<usize>> {
    let n = dm.len();
    if k == 0 || k > n {
        return Err(Error::KTooLarge { k, n });
    }

    // BUILD: start at the overall medoid, then greedily add the point that
    // lowers total cost most. Ties go to the lowest index.
    let first = (0..n)
        .map(|i| (i, (0..n).map(|j| dm.get(i, j)).sum::<f64>()))
        .fold(
            (0, f64::INFINITY),
            |best, (i, c)| if c < best.1 { (i, c) } else { best },
        );
    let mut medoids = vec![first.0];
    let mut is_medoid = vec![false; n];
    is_medoid[first.0] = true;
    let mut dist: Vec<f64> = (0..n).map(|j| dm.get(j, first.0)).collect();
    while medoids.len() < k {
        let (best, _) = (0..n)
            .filter(|&o| !is_medoid[o])
            .map(|o| {
                (
                    o,
                    (0..n)
                        .map(|j| (dist[j] - dm.get(j, o)).max(0.0))
                        .sum::<f64>(),
                )
            })
            .fold((usize::MAX, f64::NEG_INFINITY), |b, (o, g)| {
                if g > b.1 {
                    (o, g)
                } else {
                    b
                }
            });
        medoids.push(best);
        is_medoid[best] = true;
        for (j, d) in dist.iter_mut().enumerate() {
            *d = d.min(dm.get(j, best));
        }
    }

    // SWAP: apply the best improving (medoid, non-medoid) exchange until none
    // improves.
    for _ in 0..MAX_SWAP_ROUNDS {
        let near = nearest(dm, &medoids);
        let candidates: Vec<usize> = (0..n).filter(|&o| !is_medoid[o]).collect();
        let best = candidates
            .par_iter()
            .map(|&o| {
                let mut best = (f64::INFINITY, usize::MAX, o);
                for pos in 0..medoids.len() {
                    let delta: f64 = (0..n)
                        .map(|j| {
                            let d_new = dm.get(j, o);
                            let current = near[j].d1;
                            if near[j].first == pos {
                                d_new.min(near[j].d2) - current
                            } else {
                                d_new.min(current) - current
                            }
                        })
                        .sum();
                    if delta < best.0 {
                        best = (delta, pos, o);
                    }
                }
                best
            })
            .reduce(
                || (f64::INFINITY, usize::MAX, usize::MAX),
                |a, b| {
                    // Deterministic: smaller delta, then lower candidate, then lower position.
                    if b.0 < a.0 || (b.0 == a.0 && (b.2, b.1) < (a.2, a.1)) {
                        b
                    } else {
                        a
                    }
                },
            );
        if best.0.is_nan() || best.0 >= -IMPROVEMENT_EPS {
            break;
        }
        let (_, pos, o) = best;
        is_medoid[medoids[pos]] = false;
        is_medoid[o] = true;
        medoids[pos] = o;
    }
    Ok(medoids)
}

/// Clusters concepts by the Euclidean distance of their aligned nodes'
/// embeddings.
pub fn cluster_concepts(
    concepts: &ConceptSet,
    emb: &EmbeddingTable,
    alignment: &ConceptAlignment,
    k: usize,
) -> Result<ConceptClustering> {
    let ids: Vec<ConceptId> = concepts.iter().copied().collect();
    let points: Vec<&[f32]> = ids
        .iter()
        .map(|&c| {
            alignment
                .node(c)
                .and_then(|n| emb.entity(n))
                .ok_or(Error::UnalignedConcept(c))
        })
        .collect::<Result<_>>()?;
    if k == 0 || k > ids.len() {
        return Err(Error::KTooLarge { k, n: ids.len() });
    }
    let dm = DistanceMatrix::from_points(&points);
    let mut medoids = pam(&dm, k)?;
    medoids.sort();

    let near = nearest(&dm, &medoids);
    let mut clusters = vec![Vec::new(); k];
    let mut cost = 0.0;
    for (j, n) in near.iter().enumerate() {
        clusters[n.first].push(ids[j]);
        cost += n.d1;
    }
    Ok(ConceptClustering {
        k,
        clusters,
        representatives: medoids.iter().map(|&m| ids[m]).collect(),
        cost,
    })
}
