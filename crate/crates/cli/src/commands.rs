use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use log::{info, warn};

use neurodissect::dissection::{
    compute_thresholds, dissect_images, read_learned_tsv, select_learned_concepts,
    write_learned_tsv, write_scores_tsv, ConceptScope, LearnedConcepts, Strategy, UnitThresholds,
    DEFAULT_QUANTILE,
};
use neurodissect::embedding::{
    cluster_concepts, concept_filter, gain_percent, train_transe, TransEConfig,
};
use neurodissect::explanation::{
    ppe_report, render_ppe_table, write_ppe_tsv, CoreConceptLookup, Metrics, PredictionCase,
};
use neurodissect::knowledge::{
    identifier_core_concepts, read_core_concepts_tsv, related_concepts, scc,
    write_core_concepts_tsv, ConceptAlignment, CoreConceptKind, CoreConceptSet, KnowledgeGraph,
    RelatedOptions, SceneCoverage, DEFAULT_FUZZY_FLOOR, DEFAULT_GRID_STEP, DEFAULT_HOPS,
    DEFAULT_TOP_K,
};
use neurodissect::manipulation::ablation::{write_sweep_per_scene_tsv, write_sweep_tsv};
use neurodissect::manipulation::contribution::write_contributions_tsv;
use neurodissect::manipulation::{
    ablation_sweep, contribution_scores, train_pe_svm, Direction, NeuronContribution,
    PEFeatureVector, SvmConfig,
};
use neurodissect::synth::{self, SynthConfig};
use neurodissect::{tsv, ConceptSet, DatasetManifest, Error, SceneId, Split};

use crate::args::*;
use crate::config::{pick, require, FileConfig};
use crate::report::{Echo, Summary};
use crate::CliError;

const DEFAULT_DISABLE_K: usize = 20;
const DEFAULT_STRATEGY: Strategy = Strategy::MinMaxThreshold;
const DEFAULT_KIND: CoreConceptKind = CoreConceptKind::Icc;

fn parse<T: FromStr<Err = String>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(CliError::input)
}

fn load_dataset(path: &Path) -> Result<DatasetManifest, CliError> {
    let ds = DatasetManifest::load(path)?;
    for w in &ds.warnings {
        warn!("{w}");
    }
    info!(
        "{} images, {} units, {} scenes",
        ds.images.len(),
        ds.units,
        ds.scenes.len()
    );
    Ok(ds)
}

fn concept_names(ds: &DatasetManifest, set: &ConceptSet) -> String {
    if set.is_empty() {
        return "-".into();
    }
    set.iter()
        .map(|c| ds.concepts.name(*c).unwrap_or("?"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn scene_name(ds: &DatasetManifest, s: SceneId) -> &str {
    ds.scenes.name(s).unwrap_or("?")
}

fn cc_lookup(
    table: &BTreeMap<CoreConceptKind, BTreeMap<SceneId, CoreConceptSet>>,
    kind: CoreConceptKind,
) -> Result<CoreConceptLookup, CliError> {
    let sets = table
        .get(&kind)
        .ok_or_else(|| CliError::input(format!("core concept file has no {kind} sets")))?;
    Ok(sets.iter().map(|(s, c)| (*s, c.set())).collect())
}

fn learned_for(
    table: &BTreeMap<Strategy, BTreeMap<u64, LearnedConcepts>>,
    strategy: Strategy,
) -> Result<&BTreeMap<u64, LearnedConcepts>, CliError> {
    table
        .get(&strategy)
        .ok_or_else(|| CliError::input(format!("learned-concept file has no `{strategy}` rows")))
}

fn image_learned(
    table: &BTreeMap<u64, LearnedConcepts>,
    image_id: u64,
) -> Result<&LearnedConcepts, CliError> {
    table.get(&image_id).ok_or_else(|| {
        CliError::input(format!(
            "learned-concept file has no rows for image {image_id}"
        ))
    })
}

struct Reports {
    ds: DatasetManifest,
    learned_path: PathBuf,
    core_path: PathBuf,
    learned: BTreeMap<Strategy, BTreeMap<u64, LearnedConcepts>>,
    core: BTreeMap<CoreConceptKind, BTreeMap<SceneId, CoreConceptSet>>,
    predictions: Vec<SceneId>,
}

fn load_reports(
    data: &DatasetArgs,
    inputs: &ReportInputs,
    file: &FileConfig,
) -> Result<Reports, CliError> {
    let manifest = require(data.manifest.clone(), file.manifest.clone(), "manifest")?;
    let learned_path = require(inputs.learned.clone(), file.learned.clone(), "learned")?;
    let core_path = require(inputs.core.clone(), file.core.clone(), "core")?;
    let ds = load_dataset(&manifest)?;
    let learned = read_learned_tsv(&learned_path, ds.units)?;
    let core = read_core_concepts_tsv(&core_path)?;
    let predictions = ds.all_predictions()?;
    Ok(Reports {
        ds,
        learned_path,
        core_path,
        learned,
        core,
        predictions,
    })
}

pub fn synth(a: SynthArgs, file: &FileConfig) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: pick(a.seed, file.seed, 0),
        scenes: a.scenes,
        images_per_scene: a.images,
        units: a.units,
        height: a.height,
        width: a.width,
        train_fraction: a.train_fraction,
        forged_errors: a.forged_errors,
    };
    let out = synth::generate(&a.out, &cfg)?;
    let mut s = Summary::new("Synthetic dataset");
    s.kv("scenes", cfg.scenes)
        .kv("images per scene", cfg.images_per_scene)
        .kv("units", cfg.units)
        .kv("grid", format!("{}x{}", cfg.height, cfg.width))
        .kv("seed", cfg.seed)
        .kv("forged errors", cfg.forged_errors)
        .kv("suggested quantile", synth::SYNTH_QUANTILE);
    s.write(&a.out)?;
    println!("wrote {}", out.manifest.display());
    Ok(())
}

pub fn dissect(a: DissectArgs, file: &FileConfig) -> Result<(), CliError> {
    let manifest = require(a.data.manifest, file.manifest.clone(), "manifest")?;
    let quantile = pick(a.quantile, file.quantile, DEFAULT_QUANTILE);
    let scope = match (a.scope, &file.scope) {
        (Some(s), _) => s,
        (None, Some(s)) => Scope::from_str(s, true).map_err(CliError::input)?,
        (None, None) => Scope::Predicted,
    };
    let ds = load_dataset(&manifest)?;
    let out = &a.data.out;

    let thresholds = compute_thresholds(&ds, quantile)?;
    let scene_sets: BTreeMap<SceneId, ConceptSet> = if scope == Scope::All {
        BTreeMap::new()
    } else {
        let coverage = SceneCoverage::from_manifest(&ds)?;
        coverage
            .scenes()
            .into_iter()
            .map(|s| (s, coverage.scene_concepts(s)))
            .collect()
    };
    let predictions = ds.all_predictions()?;
    let scope_scene: HashMap<u64, SceneId> = ds
        .images
        .iter()
        .zip(&predictions)
        .map(|(r, p)| {
            (
                r.image_id,
                if scope == Scope::Target { r.scene } else { *p },
            )
        })
        .collect();
    let mut fallback = 0usize;
    for (id, s) in &scope_scene {
        if scope != Scope::All && scene_sets.get(s).map_or(true, |c| c.is_empty()) {
            warn!("image {id}: scene {s} has no images, scoring against the image's own concepts");
            fallback += 1;
        }
    }
    let records: Vec<_> = ds.images.iter().collect();
    let scores = dissect_images(&records, &thresholds, |r| {
        if scope == Scope::All {
            return Ok(ConceptScope::All);
        }
        Ok(match scene_sets.get(&scope_scene[&r.image_id]) {
            Some(set) if !set.is_empty() => ConceptScope::Concepts(set),
            _ => ConceptScope::All,
        })
    })?;

    let mut learned = Vec::with_capacity(scores.len() * Strategy::ALL.len());
    for img in &scores {
        for strategy in Strategy::ALL {
            learned.push(select_learned_concepts(img.image_id, &img.units, strategy)?);
        }
    }

    thresholds.write(&out.join("thresholds.tsv"))?;
    write_scores_tsv(&out.join("scores.tsv"), &scores)?;
    write_learned_tsv(&out.join("learned.tsv"), &learned)?;

    let mut echo = Echo::new("dissect");
    echo.path("manifest", &manifest)
        .set("quantile", quantile)
        .set("scope", scope.as_str());
    echo.write(out)?;

    let mut s = Summary::new("Dissection");
    s.kv("images", ds.images.len())
        .kv("units", ds.units)
        .kv("quantile", quantile)
        .kv("scope", scope.as_str());
    if fallback > 0 {
        s.kv("images scored on all", fallback);
    }
    let silent = (0..ds.units)
        .filter(|&t| scores.iter().all(|img| img.units[t].max_iou() == 0.0))
        .count();
    s.kv("units never aligned", silent)
        .line("")
        .line("strategy      mean |LC|  mean active units");
    for strategy in Strategy::ALL {
        let mine: Vec<&LearnedConcepts> =
            learned.iter().filter(|l| l.strategy == strategy).collect();
        let n = mine.len().max(1) as f64;
        let size = mine.iter().map(|l| l.union.len()).sum::<usize>() as f64 / n;
        let active = mine
            .iter()
            .map(|l| l.per_unit.iter().filter(|u| !u.is_empty()).count())
            .sum::<usize>() as f64
            / n;
        s.line(format!(
            "{:<13} {:>9.3}  {:>17.3}",
            strategy.as_str(),
            size,
            active
        ));
    }
    s.write(out)?;
    Ok(())
}

pub fn core_concepts(a: CoreConceptsArgs, file: &FileConfig) -> Result<(), CliError> {
    let manifest = require(a.data.manifest, file.manifest.clone(), "manifest")?;
    let kg_path = require(a.kg, file.kg.clone(), "kg")?;
    let hops = pick(a.hops, file.hops, DEFAULT_HOPS);
    let relations = a.relations.or(file.relations.clone());
    let floor = pick(a.fuzzy_floor, file.fuzzy_floor, DEFAULT_FUZZY_FLOOR);
    let top_k = pick(a.top_k, file.top_k, DEFAULT_TOP_K);
    let step = pick(a.grid_step, file.grid_step, DEFAULT_GRID_STEP);
    let out = &a.data.out;

    let ds = load_dataset(&manifest)?;
    let kg = KnowledgeGraph::load(&kg_path)?;
    let alignment = ConceptAlignment::build(&ds.concepts, &kg, floor);
    alignment.write(&out.join("alignment.tsv"))?;
    let coverage = SceneCoverage::from_manifest(&ds)?;
    let opts = RelatedOptions {
        hops,
        relations: relations.clone().map(|r| r.into_iter().collect()),
        fuzzy_floor: floor,
    };

    let mut related = BTreeMap::new();
    let mut missing = Vec::new();
    for s in coverage.scenes() {
        let name = scene_name(&ds, s);
        match related_concepts(name, &kg, &alignment, &opts) {
            Ok(rc) => {
                related.insert(s, rc);
            }
            Err(Error::SceneNotInKg(n)) => {
                warn!("scene `{n}` has no node in the knowledge graph; its related set is empty");
                missing.push(n);
                related.insert(s, ConceptSet::new());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let sccs: Vec<CoreConceptSet> = coverage
        .scenes()
        .into_iter()
        .map(|s| scc(s, &related[&s], &coverage))
        .collect::<neurodissect::Result<_>>()?;
    let icc = identifier_core_concepts(&coverage, &related, top_k, step)?;

    let mut all: Vec<&CoreConceptSet> = sccs.iter().collect();
    all.extend(icc.icc.values());
    write_core_concepts_tsv(&out.join("core_concepts.tsv"), &all)?;
    let mut rc_out = String::from("#scene_id\tconcept_id\n");
    for (s, set) in &related {
        for c in set {
            writeln!(rc_out, "{s}\t{c}").unwrap();
        }
    }
    tsv::write_file(&out.join("related.tsv"), &rc_out)?;

    let mut echo = Echo::new("core-concepts");
    echo.path("manifest", &manifest)
        .path("kg", &kg_path)
        .set("hops", hops as i64)
        .set("fuzzy_floor", floor)
        .set("top_k", top_k as i64)
        .set("grid_step", step);
    if let Some(r) = &relations {
        echo.list("relations", r);
    }
    echo.write(out)?;

    let mut s = Summary::new("Core concepts");
    s.kv(
        "concepts aligned",
        format!("{} of {}", alignment.aligned.len(), ds.concepts.len()),
    )
    .kv("fuzzy matches", alignment.fuzzy_count())
    .kv("P_c", icc.p_c)
    .kv("P_sc", icc.p_sc)
    .kv("top-k", top_k);
    if !missing.is_empty() {
        s.kv("scenes missing in graph", missing.join(", "));
    }
    for (scc_set, (scene, icc_set)) in sccs.iter().zip(&icc.icc) {
        s.line("")
            .line(format!("[{}] {}", scene, scene_name(&ds, *scene)))
            .kv("  SCC", concept_names(&ds, &scc_set.set()))
            .kv("  ICC", concept_names(&ds, &icc_set.set()));
    }
    s.write(out)?;
    Ok(())
}

fn strategies_from(
    flag: Option<Vec<String>>,
    file: Option<&String>,
    available: impl Iterator<Item = Strategy>,
) -> Result<Vec<Strategy>, CliError> {
    match flag.or_else(|| file.map(|f| vec![f.clone()])) {
        Some(names) => names.iter().map(|n| parse(n)).collect(),
        None => Ok(available.collect()),
    }
}

fn kinds_from(
    flag: Option<Vec<String>>,
    file: Option<&String>,
    available: impl Iterator<Item = CoreConceptKind>,
) -> Result<Vec<CoreConceptKind>, CliError> {
    match flag.or_else(|| file.map(|f| vec![f.clone()])) {
        Some(names) => names.iter().map(|n| parse(n)).collect(),
        None => Ok(available.collect()),
    }
}

pub fn explain(a: ExplainArgs, file: &FileConfig) -> Result<(), CliError> {
    let r = load_reports(&a.data, &a.inputs, file)?;
    let strategies = strategies_from(
        a.strategy,
        file.strategy.as_ref(),
        r.learned.keys().copied(),
    )?;
    let kinds = kinds_from(a.cc, file.cc.as_ref(), r.core.keys().copied())?;
    let out = &a.data.out;

    let mut reports = Vec::new();
    let mut rows = String::from("#image_id\tlc\tcc\ttarget\tpredicted\tcm_target\tsm_target\tdm_target\tcm_predicted\tsm_predicted\tdm_predicted\n");
    for &strategy in &strategies {
        let table = learned_for(&r.learned, strategy)?;
        for &kind in &kinds {
            let lookup = cc_lookup(&r.core, kind)?;
            let cases =
                r.ds.images
                    .iter()
                    .zip(&r.predictions)
                    .map(|(rec, &predicted)| {
                        Ok(PredictionCase {
                            image_id: rec.image_id,
                            target: rec.scene,
                            predicted,
                            learned: &image_learned(table, rec.image_id)?.union,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
            reports.push(ppe_report(
                strategy.as_str(),
                kind.as_str(),
                &cases,
                &lookup,
            )?);
            for c in &cases {
                let metrics = |scene: SceneId| -> Result<Metrics, CliError> {
                    let cc = lookup.get(&scene).ok_or(Error::EmptyCoreConcepts)?;
                    Ok(Metrics::compute(c.learned, cc)?)
                };
                let (t, p) = (metrics(c.target)?, metrics(c.predicted)?);
                writeln!(
                    rows,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    c.image_id,
                    strategy,
                    kind,
                    c.target,
                    c.predicted,
                    t.cm,
                    t.sm,
                    t.dm,
                    p.cm,
                    p.sm,
                    p.dm
                )
                .unwrap();
            }
        }
    }
    write_ppe_tsv(&out.join("ppe.tsv"), &reports)?;
    tsv::write_file(&out.join("image_metrics.tsv"), &rows)?;

    let mut echo = Echo::new("explain");
    let strategy_names: Vec<String> = strategies.iter().map(|s| s.to_string()).collect();
    let kind_names: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    echo.path("manifest", &r.ds.path)
        .path("learned", &r.learned_path)
        .path("core", &r.core_path)
        .list("strategy", &strategy_names)
        .list("cc", &kind_names);
    echo.write(out)?;

    let n_false =
        r.ds.images
            .iter()
            .zip(&r.predictions)
            .filter(|(i, p)| i.scene != **p)
            .count();
    let mut s = Summary::new("Prediction explanations");
    s.kv("images", r.ds.images.len())
        .kv("false predictions", n_false)
        .line("")
        .block(&render_ppe_table(&reports));
    s.write(out)?;
    Ok(())
}

pub fn filter(a: FilterArgs, file: &FileConfig) -> Result<(), CliError> {
    let manifest = require(a.data.manifest, file.manifest.clone(), "manifest")?;
    let kg_path = require(a.kg, file.kg.clone(), "kg")?;
    let ks = require(a.k, file.clusters.clone(), "k")?;
    let floor = pick(a.fuzzy_floor, file.fuzzy_floor, DEFAULT_FUZZY_FLOOR);
    let thresholds_path = a.thresholds.or(file.thresholds.clone());
    let quantile = pick(a.quantile, file.quantile, DEFAULT_QUANTILE);
    let defaults = TransEConfig::default();
    let transe = TransEConfig {
        dim: a.dim.unwrap_or(defaults.dim),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        margin: a.margin.unwrap_or(defaults.margin),
        negatives: a.negatives.unwrap_or(defaults.negatives),
        seed: pick(a.seed, file.seed, defaults.seed),
    };
    if ks.is_empty() {
        return Err(CliError::input("--k needs at least one cluster count"));
    }
    let out = &a.data.out;

    let ds = load_dataset(&manifest)?;
    let kg = KnowledgeGraph::load(&kg_path)?;
    let thresholds = match &thresholds_path {
        Some(p) => UnitThresholds::load(p)?,
        None => compute_thresholds(&ds, quantile)?,
    };
    let alignment = ConceptAlignment::build(&ds.concepts, &kg, floor);
    let coverage = SceneCoverage::from_manifest(&ds)?;
    let present: ConceptSet = coverage
        .scenes()
        .into_iter()
        .flat_map(|s| coverage.scene_concepts(s))
        .collect();
    let (aligned, unaligned): (ConceptSet, ConceptSet) =
        present.iter().partition(|c| alignment.node(**c).is_some());
    if !unaligned.is_empty() {
        warn!(
            "{} dataset concepts have no graph node and keep their own label",
            unaligned.len()
        );
    }

    let emb = train_transe(&kg, transe)?;
    emb.write(&out.join("embeddings.tsv"))?;
    let mut loss = String::from("#epoch\tloss\n");
    for (e, l) in emb.epoch_losses.iter().enumerate() {
        writeln!(loss, "{}\t{l}", e + 1).unwrap();
    }
    tsv::write_file(&out.join("transe_loss.tsv"), &loss)?;

    let before = neurodissect::dissection::dataset_iou(&ds, &thresholds, None)?.mean_best_iou();
    let mut gains = String::from("#k\tA\tB\tgain\n");
    let mut s = Summary::new("Concept filtering");
    s.kv("dataset concepts", present.len())
        .kv("aligned", aligned.len())
        .kv("graph triples", kg.triples().len())
        .kv("embedding dim", transe.dim)
        .kv(
            "first epoch loss",
            emb.epoch_losses.first().copied().unwrap_or(f64::NAN),
        )
        .kv(
            "last epoch loss",
            emb.epoch_losses.last().copied().unwrap_or(f64::NAN),
        )
        .kv("A (mean best IoU)", before);
    for &k in &ks {
        let clustering = cluster_concepts(&aligned, &emb, &alignment, k)?;
        clustering.write(&out.join(format!("clusters_k{k}.tsv")))?;
        let after = neurodissect::dissection::dataset_iou(
            &ds,
            &thresholds,
            Some(&clustering.relabel_map()),
        )?
        .mean_best_iou();
        let gain = gain_percent(before, after)?;
        writeln!(gains, "{k}\t{before}\t{after}\t{gain}").unwrap();
        s.line("")
            .line(format!("k = {k}: B = {after:.6}, gain = {gain:+.2}%"));
        for scene in coverage.scenes() {
            let c_y: ConceptSet = coverage
                .scene_concepts(scene)
                .intersection(&aligned)
                .copied()
                .collect();
            let (filtered, _) = concept_filter(&c_y, &clustering)?;
            s.line(format!(
                "  {:<20} {} -> {} concepts",
                scene_name(&ds, scene),
                c_y.len(),
                filtered.len()
            ));
        }
        for (members, rep) in clustering.clusters.iter().zip(&clustering.representatives) {
            if members.len() > 1 {
                let set: ConceptSet = members.iter().copied().collect();
                s.line(format!(
                    "  {} <- {}",
                    ds.concepts.name(*rep).unwrap_or("?"),
                    concept_names(&ds, &set)
                ));
            }
        }
    }
    tsv::write_file(&out.join("iou_gain.tsv"), &gains)?;

    let mut echo = Echo::new("filter");
    echo.path("manifest", &manifest).path("kg", &kg_path);
    match &thresholds_path {
        Some(p) => echo.path("thresholds", p),
        None => echo.set("quantile", quantile),
    };
    let k_values: Vec<i64> = ks.iter().map(|&k| k as i64).collect();
    echo.list("k", &k_values)
        .set("fuzzy_floor", floor)
        .set("seed", transe.seed as i64)
        .set("dim", transe.dim as i64)
        .set("epochs", transe.epochs as i64)
        .set("learning_rate", transe.learning_rate as f64)
        .set("margin", transe.margin as f64)
        .set("negatives", transe.negatives as i64);
    echo.write(out)?;
    s.write(out)?;
    Ok(())
}

fn contributions(
    r: &Reports,
    table: &BTreeMap<u64, LearnedConcepts>,
    lookup: &CoreConceptLookup,
) -> Result<BTreeMap<SceneId, NeuronContribution>, CliError> {
    let mut out = BTreeMap::new();
    let empty = ConceptSet::new();
    for scene in r.ds.scenes.ids() {
        let images =
            r.ds.images
                .iter()
                .zip(&r.predictions)
                .filter(|(rec, p)| rec.scene == scene && **p == scene)
                .map(|(rec, _)| image_learned(table, rec.image_id).map(|l| l.per_unit.as_slice()))
                .collect::<Result<Vec<_>, CliError>>()?;
        let cc = lookup.get(&scene).unwrap_or(&empty);
        if cc.is_empty() {
            warn!("scene {scene} has no core concepts; every learned concept counts against it");
        }
        match contribution_scores(scene, &images, cc) {
            Ok(c) => {
                out.insert(scene, c);
            }
            Err(Error::NoTruePredictions(s)) => {
                warn!("scene {s} has no correctly predicted images; skipped")
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

pub fn ablate(a: AblateArgs, file: &FileConfig) -> Result<(), CliError> {
    let r = load_reports(&a.data, &a.inputs, file)?;
    let strategy = match a.strategy.as_ref().or(file.strategy.as_ref()) {
        Some(s) => parse(s)?,
        None => DEFAULT_STRATEGY,
    };
    let kind = match a.cc.as_ref().or(file.cc.as_ref()) {
        Some(s) => parse(s)?,
        None => DEFAULT_KIND,
    };
    let direction = a.direction.unwrap_or(DirectionArg::Both);
    let k_max = pick(a.k, file.disable_k, DEFAULT_DISABLE_K);
    let out = &a.data.out;

    let table = learned_for(&r.learned, strategy)?;
    let lookup = cc_lookup(&r.core, kind)?;
    let contrib = contributions(&r, table, &lookup)?;
    let features = r.ds.all_pooled_features()?;
    let targets: Vec<SceneId> = r.ds.images.iter().map(|i| i.scene).collect();
    let directions: Vec<Direction> = match direction {
        DirectionArg::Positive => vec![Direction::Positive],
        DirectionArg::Negative => vec![Direction::Negative],
        DirectionArg::Both => Direction::ALL.to_vec(),
    };
    let k_eff = k_max.min(r.ds.units);
    let mut rows = Vec::new();
    for &d in &directions {
        for k in 0..=k_eff {
            rows.push(ablation_sweep(
                &r.ds.head, &features, &targets, &contrib, d, k,
            )?);
        }
    }
    write_contributions_tsv(&out.join("contributions.tsv"), &contrib)?;
    write_sweep_tsv(&out.join("ablation.tsv"), &rows)?;
    write_sweep_per_scene_tsv(&out.join("ablation_per_scene.tsv"), &rows)?;

    let mut echo = Echo::new("ablate");
    let dir_names: Vec<String> = directions.iter().map(|d| d.to_string()).collect();
    echo.path("manifest", &r.ds.path)
        .path("learned", &r.learned_path)
        .path("core", &r.core_path)
        .set("strategy", strategy.as_str())
        .set("cc", kind.as_str())
        .list("direction", &dir_names)
        .set("k", k_max as i64);
    echo.write(out)?;

    let mut s = Summary::new("Neuron ablation");
    s.kv("strategy", strategy)
        .kv("core concepts", kind)
        .kv("k", k_eff);
    if let Some(base) = rows.first() {
        s.kv("baseline accuracy", format!("{:.4}", base.accuracy));
    }
    s.line("").line("direction   k    accuracy");
    for row in rows.iter().filter(|r| r.k == k_eff || r.k == 1) {
        s.line(format!(
            "{:<9} {:>3}  {:>10.4}",
            row.direction, row.k, row.accuracy
        ));
    }
    s.line("");
    for (scene, c) in &contrib {
        let top: Vec<String> = c
            .top_positive(3)
            .iter()
            .map(|u| format!("{u}({})", c.scores[*u]))
            .collect();
        let bottom: Vec<String> = c
            .top_negative(3)
            .iter()
            .map(|u| format!("{u}({})", c.scores[*u]))
            .collect();
        s.line(format!(
            "{:<20} positive {}  negative {}",
            scene_name(&r.ds, *scene),
            top.join(" "),
            bottom.join(" ")
        ));
    }
    s.write(out)?;
    Ok(())
}

pub fn retrain_pe(a: RetrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let r = load_reports(&a.data, &a.inputs, file)?;
    let strategy = match a.strategy.as_ref().or(file.strategy.as_ref()) {
        Some(s) => parse(s)?,
        None => DEFAULT_STRATEGY,
    };
    let kind = match a.cc.as_ref().or(file.cc.as_ref()) {
        Some(s) => parse(s)?,
        None => DEFAULT_KIND,
    };
    let defaults = SvmConfig::default();
    let cfg = SvmConfig {
        c: a.c.unwrap_or(defaults.c),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        seed: pick(a.seed, file.seed, defaults.seed),
    };
    let out = &a.data.out;

    let table = learned_for(&r.learned, strategy)?;
    let lookup = cc_lookup(&r.core, kind)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut test_preds = Vec::new();
    let mut train_preds = Vec::new();
    for (rec, &pred) in r.ds.images.iter().zip(&r.predictions) {
        let lc = &image_learned(table, rec.image_id)?.union;
        let pe =
            PEFeatureVector::build(lc, &lookup, r.ds.scenes.len(), r.ds.pooled_features(rec)?)?;
        let sample = (pe.to_vec(), rec.scene);
        match rec.split {
            Split::Train => {
                train.push(sample);
                train_preds.push(pred);
            }
            Split::Test => {
                test.push(sample);
                test_preds.push(pred);
            }
        }
    }
    let model = train_pe_svm(&train, cfg)?;
    model.write(&out.join("svm_model.tsv"))?;
    let mut obj = String::from("#epoch\tobjective\n");
    for (e, v) in model.objective.iter().enumerate() {
        writeln!(obj, "{}\t{v}", e + 1).unwrap();
    }
    tsv::write_file(&out.join("svm_objective.tsv"), &obj)?;

    let mut report = String::from("#split\tn\tmodel_accuracy\tsvm_accuracy\trelative_gain\n");
    let mut s = Summary::new("Re-training on explanation features");
    s.kv("strategy", strategy)
        .kv("core concepts", kind)
        .kv("features", model.features)
        .kv("C", cfg.c)
        .kv("epochs", cfg.epochs)
        .line("")
        .line("split     n   model     SVM   gain");
    for (name, samples, preds) in [
        ("train", &train, &train_preds),
        ("test", &test, &test_preds),
    ] {
        if samples.is_empty() {
            warn!("{name} split is empty");
            continue;
        }
        let hits = samples
            .iter()
            .zip(preds.iter())
            .filter(|((_, y), p)| y == *p)
            .count();
        let model_acc = hits as f64 / samples.len() as f64;
        let svm_acc = model.accuracy(samples)?;
        let gain = if model_acc > 0.0 {
            format!("{}", 100.0 * (svm_acc - model_acc) / model_acc)
        } else {
            "-".into()
        };
        writeln!(
            report,
            "{name}\t{}\t{model_acc}\t{svm_acc}\t{gain}",
            samples.len()
        )
        .unwrap();
        s.line(format!(
            "{name:<6} {:>4}  {model_acc:.4}  {svm_acc:.4}  {gain}",
            samples.len()
        ));
    }
    tsv::write_file(&out.join("pe_report.tsv"), &report)?;

    let mut echo = Echo::new("retrain-pe");
    echo.path("manifest", &r.ds.path)
        .path("learned", &r.learned_path)
        .path("core", &r.core_path)
        .set("strategy", strategy.as_str())
        .set("cc", kind.as_str())
        .set("c", cfg.c)
        .set("epochs", cfg.epochs as i64)
        .set("learning_rate", cfg.learning_rate)
        .set("seed", cfg.seed as i64);
    echo.write(out)?;
    s.write(out)?;
    Ok(())
}
