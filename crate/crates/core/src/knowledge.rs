//! Knowledge-graph access and core-concept derivation.
//!
//! Scoping core concepts (SCC) keep the dataset concepts of a scene that the
//! graph relates to the scene. Identifier core concepts (ICC) keep the
//! concepts that cover enough of a scene's images to tell every scene apart,
//! found by scanning a descending percentage grid.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{normalize_name, ConceptId, ConceptSet, ConceptVocab, SceneId};
use crate::tsv;
use crate::volume::SegmentationMask;

pub const DEFAULT_FUZZY_FLOOR: f64 = 0.85;
pub const DEFAULT_GRID_STEP: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 2;
pub const DEFAULT_HOPS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// An immutable triple store with an undirected adjacency index.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    nodes: Vec<String>,
    node_index: HashMap<String, usize>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    /// `(neighbor, relation)` per node, both directions.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl KnowledgeGraph {
    /// Normalizes node names and drops duplicate triples, keeping the first.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut kg = KnowledgeGraph::default();
        let mut seen = BTreeSet::new();
        for t in triples {
            let t = Triple {
                head: normalize_name(&t.head),
                relation: t.relation.trim().to_string(),
                tail: normalize_name(&t.tail),
            };
            if !seen.insert(t.clone()) {
                continue;
            }
            let h = kg.intern_node(&t.head);
            let r = match kg.relation_index.get(&t.relation) {
                Some(&r) => r,
                None => {
                    kg.relations.push(t.relation.clone());
                    kg.relation_index
                        .insert(t.relation.clone(), kg.relations.len() - 1);
                    kg.relations.len() - 1
                }
            };
            let tl = kg.intern_node(&t.tail);
            kg.adjacency[h].push((tl, r));
            if h != tl {
                kg.adjacency[tl].push((h, r));
            }
            kg.triples.push(t);
        }
        kg
    }

    fn intern_node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.node_index.get(name) {
            return i;
        }
        self.nodes.push(name.to_string());
        self.adjacency.push(Vec::new());
        self.node_index
            .insert(name.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    pub fn node_name(&self, id: usize) -> &str {
        &self.nodes[id]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    /// Nodes reachable from `start` in `1..=hops` undirected steps, excluding
    /// `start`. With `relations`, only edges of those relation ids are walked.
    pub fn neighborhood(
        &self,
        start: usize,
        hops: u32,
        relations: Option<&BTreeSet<usize>>,
    ) -> BTreeSet<usize> {
        let mut depth = vec![u32::MAX; self.nodes.len()];
        depth[start] = 0;
        let mut queue = VecDeque::from([start]);
        let mut out = BTreeSet::new();
        while let Some(n) = queue.pop_front() {
            if depth[n] == hops {
                continue;
            }
            for &(m, r) in &self.adjacency[n] {
                if relations.is_some_and(|allowed| !allowed.contains(&r)) {
                    continue;
                }
                if depth[m] == u32::MAX {
                    depth[m] = depth[n] + 1;
                    out.insert(m);
                    queue.push_back(m);
                }
            }
        }
        out
    }

    /// Reads `head<TAB>relation<TAB>tail` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let mut triples = Vec::new();
        for row in tsv::read_rows(path)? {
            let row = row?;
            row.expect_fields(3)?;
            if row.fields().iter().any(|f| f.trim().is_empty()) {
                return Err(row.error("empty triple component"));
            }
            triples.push(Triple {
                head: row.field(0).to_string(),
                relation: row.field(1).to_string(),
                tail: row.field(2).to_string(),
            });
        }
        Ok(Self::from_triples(triples))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
        }
        tsv::write_file(path, &out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Exact,
    Fuzzy,
}

impl MatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchKind::Exact => "exact",
            MatchKind::Fuzzy => "fuzzy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedNode {
    pub node: String,
    pub kind: MatchKind,
    pub similarity: f64,
}

/// Finds the graph node for a (normalized) name: exact match first, then the
/// most similar node by normalized Levenshtein similarity if it reaches
/// `floor`. Similarity ties go to the lexicographically smallest node.
pub fn align_name(name: &str, kg: &KnowledgeGraph, floor: f64) -> Option<AlignedNode> {
    let name = normalize_name(name);
    if kg.node_id(&name).is_some() {
        return Some(AlignedNode {
            node: name,
            kind: MatchKind::Exact,
            similarity: 1.0,
        });
    }
    let mut best: Option<(f64, &str)> = None;
    for node in kg.nodes() {
        let s = strsim::normalized_levenshtein(&name, node);
        let better = match best {
            None => true,
            Some((b, n)) => s > b || (s == b && node.as_str() < n),
        };
        if better {
            best = Some((s, node));
        }
    }
    best.filter(|&(s, _)| s >= floor).map(|(s, n)| AlignedNode {
        node: n.to_string(),
        kind: MatchKind::Fuzzy,
        similarity: s,
    })
}

/// Concept ids mapped onto graph nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptAlignment {
    pub aligned: BTreeMap<ConceptId, AlignedNode>,
    pub unaligned: Vec<ConceptId>,
    pub floor: f64,
}

impl ConceptAlignment {
    pub fn build(vocab: &ConceptVocab, kg: &KnowledgeGraph, floor: f64) -> Self {
        let results: Vec<(ConceptId, Option<AlignedNode>)> = vocab
            .entries()
            .par_iter()
            .map(|e| (e.id, align_name(&e.name, kg, floor)))
            .collect();
        let mut alignment = ConceptAlignment {
            floor,
            ..Default::default()
        };
        for (id, node) in results {
            match node {
                Some(n) => {
                    alignment.aligned.insert(id, n);
                }
                None => alignment.unaligned.push(id),
            }
        }
        alignment
    }

    pub fn node(&self, id: ConceptId) -> Option<&str> {
        self.aligned.get(&id).map(|a| a.node.as_str())
    }

    pub fn fuzzy_count(&self) -> usize {
        self.aligned
            .values()
            .filter(|a| a.kind == MatchKind::Fuzzy)
            .count()
    }

    /// `concept_id  node  match  similarity`
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("#concept_id\tnode\tmatch\tsimilarity\n");
        for (id, a) in &self.aligned {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\n",
                a.node,
                a.kind.as_str(),
                a.similarity
            ));
        }
        for id in &self.unaligned {
            out.push_str(&format!("{id}\t-\tnone\t0\n"));
        }
        tsv::write_file(path, &out)
    }
}

/// Options for related-concept retrieval.
#[derive(Debug, Clone)]
pub struct RelatedOptions {
    pub hops: u32,
    /// Relation names to traverse; `None` walks every relation.
    pub relations: Option<BTreeSet<String>>,
    pub fuzzy_floor: f64,
}

impl Default for RelatedOptions {
    fn default() -> Self {
        RelatedOptions {
            hops: DEFAULT_HOPS,
            relations: None,
            fuzzy_floor: DEFAULT_FUZZY_FLOOR,
        }
    }
}

/// Concepts whose aligned node lies within `hops` undirected steps of the
/// scene's node. The scene node itself is excluded.
pub fn related_concepts(
    scene_name: &str,
    kg: &KnowledgeGraph,
    alignment: &ConceptAlignment,
    options: &RelatedOptions,
) -> Result<ConceptSet> {
    if !(1..=2).contains(&options.hops) {
        return Err(Error::InvalidParameter(format!(
            "hops must be 1 or 2, got {}",
            options.hops
        )));
    }
    let scene_node = align_name(scene_name, kg, options.fuzzy_floor)
        .and_then(|a| kg.node_id(&a.node))
        .ok_or_else(|| Error::SceneNotInKg(scene_name.to_string()))?;
    let relations = options.relations.as_ref().map(|names| {
        names
            .iter()
            .filter_map(|n| kg.relation_id(n))
            .collect::<BTreeSet<_>>()
    });
    let reachable = kg.neighborhood(scene_node, options.hops, relations.as_ref());
    Ok(alignment
        .aligned
        .iter()
        .filter(|(_, a)| kg.node_id(&a.node).is_some_and(|n| reachable.contains(&n)))
        .map(|(id, _)| *id)
        .collect())
}

/// Which concepts appear in each image, grouped by target scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneCoverage {
    per_scene: BTreeMap<SceneId, Vec<ConceptSet>>,
}

impl SceneCoverage {
    pub fn from_images(images: impl IntoIterator<Item = (SceneId, ConceptSet)>) -> Self {
        let mut per_scene: BTreeMap<SceneId, Vec<ConceptSet>> = BTreeMap::new();
        for (scene, concepts) in images {
            per_scene.entry(scene).or_default().push(concepts);
        }
        SceneCoverage { per_scene }
    }

    /// Reads every mask of the manifest.
    pub fn from_manifest(dataset: &DatasetManifest) -> Result<Self> {
        let sets: Vec<(SceneId, ConceptSet)> = dataset
            .images
            .par_iter()
            .map(|r| Ok((r.scene, SegmentationMask::load(&r.mask_path)?.concepts())))
            .collect::<Result<_>>()?;
        Ok(Self::from_images(sets))
    }

    /// Scenes with at least one image.
    pub fn scenes(&self) -> Vec<SceneId> {
        self.per_scene.keys().copied().collect()
    }

    pub fn image_count(&self, scene: SceneId) -> usize {
        self.per_scene.get(&scene).map_or(0, Vec::len)
    }

    fn images(&self, scene: SceneId) -> Result<&[ConceptSet]> {
        match self.per_scene.get(&scene) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::NoImagesForScene(scene)),
        }
    }

    /// `C_y`: every concept annotated in any image of the scene.
    pub fn scene_concepts(&self, scene: SceneId) -> ConceptSet {
        self.per_scene
            .get(&scene)
            .map(|v| v.iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    /// Number of the scene's images containing `concept`.
    pub fn count(&self, scene: SceneId, concept: ConceptId) -> usize {
        self.per_scene
            .get(&scene)
            .map_or(0, |v| v.iter().filter(|s| s.contains(&concept)).count())
    }

    pub fn coverage(&self, scene: SceneId, concept: ConceptId) -> f64 {
        let n = self.image_count(scene);
        if n == 0 {
            return 0.0;
        }
        self.count(scene, concept) as f64 / n as f64
    }

    /// True when `concept` appears in at least `p` percent of the scene's
    /// images. Compared as `count·100 ≥ p·n` to avoid dividing.
    fn covers(&self, scene: SceneId, concept: ConceptId, p: f64) -> bool {
        self.count(scene, concept) as f64 * 100.0 >= p * self.image_count(scene) as f64
    }
}

/// `Count(y, p)`: concepts of the scene present in at least `p`% of its images.
///
/// Percentages above 100 are accepted and select nothing, so maximality can
/// be probed one grid step above 100.
pub fn count_set(coverage: &SceneCoverage, scene: SceneId, p: f64) -> Result<ConceptSet> {
    if p.is_nan() || p < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "percentage {p} outside [0, 100]"
        )));
    }
    coverage.images(scene)?;
    Ok(coverage
        .scene_concepts(scene)
        .into_iter()
        .filter(|&c| coverage.covers(scene, c, p))
        .collect())
}

/// The descending percentage grid `100, 100 − step, …` down to 0.
pub fn percentage_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grid step {step} must be positive"
        )));
    }
    let n = (100.0 / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| 100.0 - i as f64 * step)
        .filter(|p| *p >= -1e-9)
        .map(|p| p.max(0.0))
        .collect())
}

/// True when the sets are pairwise different. Two empty sets collide.
pub fn pairwise_distinct<'a>(sets: impl IntoIterator<Item = &'a ConceptSet>) -> bool {
    let mut seen = BTreeSet::new();
    sets.into_iter().all(|s| seen.insert(s))
}

/// Largest grid percentage at which `set_fn` yields pairwise-distinct sets
/// for `scenes`, or `None`.
pub fn find_distinguishing_percentage<F>(
    scenes: &[SceneId],
    set_fn: F,
    grid_step: f64,
) -> Result<Option<f64>>
where
    F: Fn(SceneId, f64) -> Result<ConceptSet> + Sync,
{
    for p in percentage_grid(grid_step)? {
        let sets: Vec<ConceptSet> = scenes
            .par_iter()
            .map(|&s| set_fn(s, p))
            .collect::<Result<_>>()?;
        if pairwise_distinct(&sets) {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoreConceptKind {
    Scc,
    Icc,
}

impl CoreConceptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoreConceptKind::Scc => "SCC",
            CoreConceptKind::Icc => "ICC",
        }
    }
}

impl fmt::Display for CoreConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoreConceptKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scc" => Ok(CoreConceptKind::Scc),
            "icc" => Ok(CoreConceptKind::Icc),
            other => Err(format!("unknown core concept kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    KgRelated,
    DatasetTopk,
    Both,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::KgRelated => "kg_related",
            Provenance::DatasetTopk => "dataset_topk",
            Provenance::Both => "both",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kg_related" => Ok(Provenance::KgRelated),
            "dataset_topk" => Ok(Provenance::DatasetTopk),
            "both" => Ok(Provenance::Both),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IccParams {
    pub p_c: f64,
    pub p_sc: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreConceptSet {
    pub scene: SceneId,
    pub kind: CoreConceptKind,
    pub concepts: BTreeMap<ConceptId, Provenance>,
    pub params: Option<IccParams>,
}

impl CoreConceptSet {
    pub fn set(&self) -> ConceptSet {
        self.concepts.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// `SCC(y) = RC(y) ∩ C_y`.
pub fn scc(
    scene: SceneId,
    related: &ConceptSet,
    coverage: &SceneCoverage,
) -> Result<CoreConceptSet> {
    coverage.images(scene)?;
    let concepts = coverage
        .scene_concepts(scene)
        .intersection(related)
        .map(|&c| (c, Provenance::KgRelated))
        .collect();
    Ok(CoreConceptSet {
        scene,
        kind: CoreConceptKind::Scc,
        concepts,
        params: None,
    })
}

/// Top `k` concepts of `set` by coverage of `scene`, ties to the lowest id.
pub fn top_k_by_coverage(
    coverage: &SceneCoverage,
    scene: SceneId,
    set: &ConceptSet,
    k: usize,
) -> ConceptSet {
    let mut ranked: Vec<(usize, ConceptId)> =
        set.iter().map(|&c| (coverage.count(scene, c), c)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Intermediate results of the ICC derivation, kept for reporting and for
/// re-checking maximality.
#[derive(Debug, Clone, PartialEq)]
pub struct IccDerivation {
    pub p_c: f64,
    pub p_sc: f64,
    pub k: usize,
    pub grid_step: f64,
    pub top_k: BTreeMap<SceneId, ConceptSet>,
    pub pools: BTreeMap<SceneId, ConceptSet>,
    pub related: BTreeMap<SceneId, ConceptSet>,
    pub icc: BTreeMap<SceneId, CoreConceptSet>,
}

impl IccDerivation {
    /// `SCount(y, p)`: pool concepts present in at least `p`% of the scene's images.
    pub fn scount(&self, coverage: &SceneCoverage, scene: SceneId, p: f64) -> Result<ConceptSet> {
        scount(coverage, &self.pools, scene, p)
    }
}

fn scount(
    coverage: &SceneCoverage,
    pools: &BTreeMap<SceneId, ConceptSet>,
    scene: SceneId,
    p: f64,
) -> Result<ConceptSet> {
    let counted = count_set(coverage, scene, p)?;
    Ok(pools
        .get(&scene)
        .map(|pool| pool.intersection(&counted).copied().collect())
        .unwrap_or_default())
}

/// Derives ICC for every scene with images.
///
/// `related` holds `RC(y)` per scene; scenes missing from it contribute no
/// graph-related concepts.
pub fn identifier_core_concepts(
    coverage: &SceneCoverage,
    related: &BTreeMap<SceneId, ConceptSet>,
    k: usize,
    grid_step: f64,
) -> Result<IccDerivation> {
    let scenes = coverage.scenes();
    let p_c = find_distinguishing_percentage(&scenes, |s, p| count_set(coverage, s, p), grid_step)?
        .ok_or(Error::IndistinguishableScenes("Count"))?;

    let mut top_k = BTreeMap::new();
    let mut pools = BTreeMap::new();
    for &s in &scenes {
        let counted = count_set(coverage, s, p_c)?;
        let top = top_k_by_coverage(coverage, s, &counted, k);
        let kg_part: ConceptSet = related
            .get(&s)
            .map(|rc| {
                rc.intersection(&coverage.scene_concepts(s))
                    .copied()
                    .collect()
            })
            .unwrap_or_default();
        pools.insert(s, kg_part.union(&top).copied().collect::<ConceptSet>());
        top_k.insert(s, top);
    }

    let p_sc =
        find_distinguishing_percentage(&scenes, |s, p| scount(coverage, &pools, s, p), grid_step)?
            .ok_or(Error::IndistinguishableScenes("SCount"))?;

    let mut icc = BTreeMap::new();
    for &s in &scenes {
        let rc = related.get(&s);
        let concepts = scount(coverage, &pools, s, p_sc)?
            .into_iter()
            .map(|c| {
                let in_kg = rc.is_some_and(|r| r.contains(&c));
                let in_top = top_k[&s].contains(&c);
                let prov = match (in_kg, in_top) {
                    (true, true) => Provenance::Both,
                    (false, true) => Provenance::DatasetTopk,
                    _ => Provenance::KgRelated,
                };
                (c, prov)
            })
            .collect();
        icc.insert(
            s,
            CoreConceptSet {
                scene: s,
                kind: CoreConceptKind::Icc,
                concepts,
                params: Some(IccParams { p_c, p_sc, k }),
            },
        );
    }
    Ok(IccDerivation {
        p_c,
        p_sc,
        k,
        grid_step,
        top_k,
        pools,
        related: related.clone(),
        icc,
    })
}

/// Core concepts keyed by kind, then scene.
pub type CoreConceptTable = BTreeMap<CoreConceptKind, BTreeMap<SceneId, CoreConceptSet>>;

/// `scene_id  kind  concept_id  provenance  params`. A scene with an empty
/// set gets one row with `-` in the concept and provenance columns.
pub fn write_core_concepts_tsv(path: &Path, sets: &[&CoreConceptSet]) -> Result<()> {
    let mut out = String::from("#scene_id\tkind\tconcept_id\tprovenance\tparams\n");
    for cc in sets {
        let params = cc.params.map_or_else(
            || "-".to_string(),
            |p| format!("P_c={};P_sc={};k={}", p.p_c, p.p_sc, p.k),
        );
        if cc.concepts.is_empty() {
            out.push_str(&format!("{}\t{}\t-\t-\t{params}\n", cc.scene, cc.kind));
        }
        for (c, prov) in &cc.concepts {
            out.push_str(&format!(
                "{}\t{}\t{c}\t{}\t{params}\n",
                cc.scene,
                cc.kind,
                prov.as_str()
            ));
        }
    }
    tsv::write_file(path, &out)
}

fn parse_params(raw: &str) -> std::result::Result<Option<IccParams>, String> {
    if raw == "-" {
        return Ok(None);
    }
    let mut fields = BTreeMap::new();
    for part in raw.split(';') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("bad parameter `{part}`"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| format!("missing parameter {k}"))
    };
    Ok(Some(IccParams {
        p_c: get("P_c")?.parse().map_err(|e| format!("P_c: {e}"))?,
        p_sc: get("P_sc")?.parse().map_err(|e| format!("P_sc: {e}"))?,
        k: get("k")?.parse().map_err(|e| format!("k: {e}"))?,
    }))
}

pub fn read_core_concepts_tsv(path: &Path) -> Result<CoreConceptTable> {
    let mut table = CoreConceptTable::new();
    for row in tsv::read_rows(path)? {
        let row = row?;
        row.expect_fields(5)?;
        let scene = SceneId(row.parse(0)?);
        let kind: CoreConceptKind = row.parse(1)?;
        let params = row.parse_with(4, parse_params)?;
        let cc = table
            .entry(kind)
            .or_default()
            .entry(scene)
            .or_insert_with(|| CoreConceptSet {
                scene,
                kind,
                concepts: BTreeMap::new(),
                params,
            });
        if row.field(2).trim() == "-" {
            continue;
        }
        cc.concepts.insert(ConceptId(row.parse(2)?), row.parse(3)?);
    }
    Ok(table)
}
