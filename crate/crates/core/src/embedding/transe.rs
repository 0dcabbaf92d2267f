//! TransE: relations as translations, `h + r ≈ t`, trained with the margin
//! ranking loss `max(0, γ + d(h + r, t) − d(h' + r, t'))` against uniformly
//! corrupted triples.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeGraph;
use crate::tsv;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub margin: f32,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 50,
            epochs: 500,
            learning_rate: 0.01,
            margin: 1.0,
            negatives: 5,
            seed: 0,
        }
    }
}

impl TransEConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.negatives == 0 {
            return Err(Error::InvalidParameter(
                "dim, epochs and negatives must be positive".into(),
            ));
        }
        if !(self.margin > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "margin and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learned vectors for every node and relation of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    entity_names: Vec<String>,
    entity_vectors: Vec<Vec<f32>>,
    relation_names: Vec<String>,
    relation_vectors: Vec<Vec<f32>>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    pub config: Option<TransEConfig>,
    /// Mean margin loss of each training epoch.
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(
        dim: usize,
        entities: Vec<(String, Vec<f32>)>,
        relations: Vec<(String, Vec<f32>)>,
    ) -> Result<Self> {
        let check = |name: &str, v: &[f32]| -> Result<()> {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "`{name}` has {} components, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::DimensionMismatch(format!(
                    "`{name}` has non-finite components"
                )));
            }
            Ok(())
        };
        for (n, v) in entities.iter().chain(&relations) {
            check(n, v)?;
        }
        let (entity_names, entity_vectors): (Vec<_>, Vec<_>) = entities.into_iter().unzip();
        let (relation_names, relation_vectors): (Vec<_>, Vec<_>) = relations.into_iter().unzip();
        let index = |names: &[String]| {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect()
        };
        Ok(EmbeddingTable {
            dim,
            entity_index: index(&entity_names),
            relation_index: index(&relation_names),
            entity_names,
            entity_vectors,
            relation_names,
            relation_vectors,
            config: None,
            epoch_losses: Vec::new(),
        })
    }

    pub fn entity(&self, name: &str) -> Option<&[f32]> {
        self.entity_index
            .get(name)
            .map(|&i| self.entity_vectors[i].as_slice())
    }

    pub fn relation(&self, name: &str) -> Option<&[f32]> {
        self.relation_index
            .get(name)
            .map(|&i| self.relation_vectors[i].as_slice())
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// `‖h + r − t‖₂` for named nodes and relation.
    pub fn translation_distance(&self, head: &str, relation: &str, tail: &str) -> Option<f32> {
        Some(translation_distance(
            self.entity(head)?,
            self.relation(relation)?,
            self.entity(tail)?,
        ))
    }

    /// `node<TAB>v1..vd` rows under `#entities` and `#relations` section
    /// markers, after a `#dim d` line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "#dim {}", self.dim).unwrap();
        writeln!(out, "#entities").unwrap();
        for (n, v) in self.entity_names.iter().zip(&self.entity_vectors) {
            writeln!(out, "{n}\t{}", tsv::join_floats(v)).unwrap();
        }
        writeln!(out, "#relations").unwrap();
        for (n, v) in self.relation_names.iter().zip(&self.relation_vectors) {
            writeln!(out, "{n}\t{}", tsv::join_floats(v)).unwrap();
        }
        tsv::write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut in_relations = false;
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        for (line, text) in tsv::read_lines(path)? {
            if text.trim().is_empty() {
                continue;
            }
            if let Some(d) = text.strip_prefix("#dim") {
                dim = Some(
                    d.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::parse(path, line, e.to_string()))?,
                );
                continue;
            }
            match text.trim() {
                "#entities" => {
                    in_relations = false;
                    continue;
                }
                "#relations" => {
                    in_relations = true;
                    continue;
                }
                t if t.starts_with('#') => continue,
                _ => {}
            }
            let row = tsv::Row::new(path, line, &text);
            let v = (1..row.len())
                .map(|i| row.parse::<f32>(i))
                .collect::<Result<Vec<_>>>()?;
            let entry = (row.field(0).to_string(), v);
            if in_relations {
                relations.push(entry);
            } else {
                entities.push(entry);
            }
        }
        let dim = dim.ok_or_else(|| Error::format(path, "missing #dim header"))?;
        Self::new(dim, entities, relations).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn translation_distance(h: &[f32], r: &[f32], t: &[f32]) -> f32 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum::<f32>()
        .sqrt()
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Unit-scaled residual `(h + r − t) / ‖h + r − t‖` and the norm.
fn residual(h: &[f32], r: &[f32], t: &[f32]) -> (Vec<f32>, f32) {
    let diff: Vec<f32> = h
        .iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| h + r - t)
        .collect();
    let norm = diff.iter().map(|x| x * x).sum::<f32>().sqrt();
    let grad = if norm > 0.0 {
        diff.iter().map(|x| x / norm).collect()
    } else {
        vec![0.0; diff.len()]
    };
    (grad, norm)
}

/// Trains TransE by per-sample SGD. Deterministic for a given seed.
pub fn train_transe(kg: &KnowledgeGraph, config: TransEConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    if kg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / (dim as f32).sqrt();
    let init = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| {
                let mut v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-bound..bound)).collect();
                normalize(&mut v);
                v
            })
            .collect()
    };
    let mut ent = init(kg.nodes().len(), &mut rng);
    let mut rel = init(kg.relations().len(), &mut rng);

    let triples: Vec<(usize, usize, usize)> = kg
        .triples()
        .iter()
        .map(|t| {
            (
                kg.node_id(&t.head).unwrap(),
                kg.relation_id(&t.relation).unwrap(),
                kg.node_id(&t.tail).unwrap(),
            )
        })
        .collect();
    let n_entities = ent.len();
    let lr = config.learning_rate;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for &i in &order {
            let (h, r, t) = triples[i];
            for _ in 0..config.negatives {
                let corrupt_head = rng.gen_bool(0.5);
                let other = rng.gen_range(0..n_entities);
                let (nh, nt) = if corrupt_head { (other, t) } else { (h, other) };

                let (g_pos, d_pos) = residual(&ent[h], &rel[r], &ent[t]);
                let (g_neg, d_neg) = residual(&ent[nh], &rel[r], &ent[nt]);
                let loss = config.margin + d_pos - d_neg;
                if loss <= 0.0 {
                    continue;
                }
                total += loss as f64;
                for k in 0..dim {
                    ent[h][k] -= lr * g_pos[k];
                    ent[t][k] += lr * g_pos[k];
                    rel[r][k] -= lr * (g_pos[k] - g_neg[k]);
                    ent[nh][k] += lr * g_neg[k];
                    ent[nt][k] -= lr * g_neg[k];
                }
            }
        }
        ent.iter_mut().for_each(|v| normalize(v));
        epoch_losses.push(total / (triples.len() * config.negatives) as f64);
    }

    let mut table = EmbeddingTable::new(
        dim,
        kg.nodes().iter().cloned().zip(ent).collect(),
        kg.relations().iter().cloned().zip(rel).collect(),
    )?;
    table.config = Some(config);
    table.epoch_losses = epoch_losses;
    Ok(table)
}
