//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the table shows up in plain `cargo test` output.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neurodissect::dissection::{
    compute_thresholds, dataset_iou, dataset_iou_from_pairs, iou, score_volume,
    select_learned_concepts, upsample_bilinear, ConceptScope, NeuronConceptScores, Strategy,
    UnitThresholds,
};
use neurodissect::embedding::{
    cluster_concepts, gain_percent, train_transe, ConceptClustering, EmbeddingTable, TransEConfig,
};
use neurodissect::explanation::{cm, dm, sm};
use neurodissect::knowledge::{
    identifier_core_concepts, pairwise_distinct, related_concepts, scc, AlignedNode,
    ConceptAlignment, KnowledgeGraph, MatchKind, RelatedOptions, SceneCoverage, Triple,
    DEFAULT_FUZZY_FLOOR, DEFAULT_GRID_STEP, DEFAULT_TOP_K,
};
use neurodissect::manipulation::{
    ablate, ablated_logits, contribution_scores, train_pe_svm, SvmConfig,
};
use neurodissect::model::argmax;
use neurodissect::synth::{self, SynthConfig, SYNTH_QUANTILE};
use neurodissect::{
    ActivationVolume, ConceptId, ConceptSet, DatasetManifest, LinearHead, PixelMask, SceneId,
    SegmentationMask,
};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn random_set(rng: &mut ChaCha8Rng, universe: u32, min: usize) -> ConceptSet {
    loop {
        let s: ConceptSet = (0..universe)
            .filter(|_| rng.gen_bool(0.3))
            .map(ConceptId)
            .collect();
        if s.len() >= min {
            return s;
        }
    }
}

fn metric_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lc = random_set(&mut rng, 20, 0);
        let cc = random_set(&mut rng, 20, 1);
        let (c, s, d) = (
            cm(&lc, &cc).unwrap(),
            sm(&lc, &cc).unwrap(),
            dm(&lc, &cc).unwrap(),
        );
        // Exact rational identity on the counts behind the ratios.
        let n = cc.len() as f64;
        let inter = lc.intersection(&cc).count();
        let diff = lc.difference(&cc).count();
        ensure!(
            c == inter as f64 / n && d == diff as f64 / n,
            "CM or DM is not its count ratio"
        );
        ensure!(inter + diff == lc.len(), "|LC ∩ CC| + |LC \\ CC| != |LC|");
        worst = worst.max((c + d - lc.len() as f64 / n).abs());
        ensure!(s <= c, "SM {s} > CM {c}");
        if let Some(&extra) = cc.difference(&lc).next() {
            let mut grown = lc.clone();
            grown.insert(extra);
            let (c2, s2, d2) = (
                cm(&grown, &cc).unwrap(),
                sm(&grown, &cc).unwrap(),
                dm(&grown, &cc).unwrap(),
            );
            ensure!(
                c2 > c && s2 >= s && d2 == d,
                "adding a core concept to LC was not monotone"
            );
        }
    }
    ensure!(
        worst <= 4.0 * f64::EPSILON,
        "CM + DM deviates from |LC|/|CC| by {worst:e}"
    );
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!(
        "1000 pairs in {took:.1?}, max float deviation {worst:e}"
    ))
}

fn iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..500 {
        let density_a = rng.gen_range(0.0..1.0);
        let density_b = rng.gen_range(0.0..1.0);
        let a: Vec<bool> = (0..64).map(|_| rng.gen_bool(density_a)).collect();
        let b: Vec<bool> = (0..64).map(|_| rng.gen_bool(density_b)).collect();
        let (mut inter, mut union) = (0usize, 0usize);
        for p in 0..64 {
            inter += usize::from(a[p] && b[p]);
            union += usize::from(a[p] || b[p]);
        }
        let oracle = if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        let ma = PixelMask::from_fn(8, 8, |y, x| a[y * 8 + x]);
        let mb = PixelMask::from_fn(8, 8, |y, x| b[y * 8 + x]);
        let got = iou(&ma, &mb);
        ensure!(got == oracle, "pair {i}: {got} != {oracle}");
    }
    Ok("500 random 8x8 pairs equal the pixel loop exactly".into())
}

fn upsampling() -> Outcome {
    let constant = vec![0.7f32; 3 * 5];
    let up = upsample_bilinear(&constant, (3, 5), (17, 23)).map_err(|e| e.to_string())?;
    let dev = up.iter().map(|v| (v - 0.7).abs()).fold(0.0f32, f32::max);
    ensure!(dev < 1e-6, "constant map deviates by {dev}");
    let line = upsample_bilinear(&[0.0, 1.0], (1, 2), (1, 4)).map_err(|e| e.to_string())?;
    let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    for (g, w) in line.iter().zip(want) {
        ensure!((*g as f64 - w).abs() < 1e-6, "1x2 -> 1x4 gave {line:?}");
    }
    Ok(format!("constant dev {dev:e}, 1x2 -> 1x4 = {line:?}"))
}

fn strategy_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for table in 0..200 {
        let units = rng.gen_range(1..8);
        let concepts = rng.gen_range(1..10u32);
        let scores: Vec<NeuronConceptScores> = (0..units)
            .map(|unit| {
                let mut scores: BTreeMap<ConceptId, f64> = (0..concepts)
                    .map(|c| {
                        (
                            ConceptId(c),
                            if rng.gen_bool(0.4) {
                                0.0
                            } else {
                                rng.gen_range(0.0..1.0)
                            },
                        )
                    })
                    .collect();
                // Every unit's maximum is positive.
                let c = ConceptId(rng.gen_range(0..concepts));
                scores.insert(c, rng.gen_range(0.01..1.0));
                NeuronConceptScores { unit, scores }
            })
            .collect();
        let lc = |s| select_learned_concepts(table, &scores, s).unwrap();
        let (h, m, w) = (
            lc(Strategy::HighestIou),
            lc(Strategy::MinMaxThreshold),
            lc(Strategy::WholeLayer),
        );
        for u in 0..units {
            ensure!(
                h.per_unit[u].is_subset(&m.per_unit[u]) && m.per_unit[u].is_subset(&w.per_unit[u]),
                "table {table}, unit {u}: nesting broken"
            );
        }
    }
    Ok("200 tables: HighestIoU ⊆ MinMax ⊆ WholeLayer on every unit".into())
}

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: SynthConfig,
    ds: DatasetManifest,
    kg: KnowledgeGraph,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let out = synth::generate(dir.path(), &cfg).unwrap();
    let ds = DatasetManifest::load(&out.manifest).unwrap();
    let kg = KnowledgeGraph::load(&out.kg).unwrap();
    Fixture {
        _dir: dir,
        cfg,
        ds,
        kg,
    }
}

fn related_map(f: &Fixture, alignment: &ConceptAlignment) -> BTreeMap<SceneId, ConceptSet> {
    f.ds.scenes
        .ids()
        .map(|s| {
            let rc = related_concepts(
                f.ds.scenes.name(s).unwrap(),
                &f.kg,
                alignment,
                &RelatedOptions::default(),
            )
            .unwrap();
            (s, rc)
        })
        .collect()
}

fn icc_correctness(f: &Fixture) -> Outcome {
    ensure!(
        f.ds.images.len() == 30 && f.ds.scenes.len() == 3,
        "fixture is not 3 scenes x 10 images"
    );
    let alignment = ConceptAlignment::build(&f.ds.concepts, &f.kg, DEFAULT_FUZZY_FLOOR);
    let coverage = SceneCoverage::from_manifest(&f.ds).map_err(|e| e.to_string())?;
    let d = identifier_core_concepts(
        &coverage,
        &related_map(f, &alignment),
        DEFAULT_TOP_K,
        DEFAULT_GRID_STEP,
    )
    .map_err(|e| e.to_string())?;
    for s in f.ds.scenes.ids() {
        let icc = d.icc[&s].set();
        ensure!(
            icc.contains(&f.cfg.identifier(s)),
            "ICC of scene {s} lacks its identifier: {icc:?}"
        );
    }
    let sets: Vec<ConceptSet> = d.icc.values().map(|c| c.set()).collect();
    ensure!(
        pairwise_distinct(&sets),
        "ICC sets are not pairwise distinct"
    );
    let next = d.p_sc + DEFAULT_GRID_STEP;
    let above: Vec<ConceptSet> = coverage
        .scenes()
        .iter()
        .map(|&s| d.scount(&coverage, s, next).unwrap())
        .collect();
    ensure!(
        !pairwise_distinct(&above),
        "SCount at P_sc + 0.5 is still distinct"
    );
    Ok(format!(
        "P_c = {}, P_sc = {}, identifiers present, maximal",
        d.p_c, d.p_sc
    ))
}

fn scc_oracle(f: &Fixture) -> Outcome {
    let alignment = ConceptAlignment::build(&f.ds.concepts, &f.kg, DEFAULT_FUZZY_FLOOR);
    let coverage = SceneCoverage::from_manifest(&f.ds).map_err(|e| e.to_string())?;
    let related = related_map(f, &alignment);
    for s in f.ds.scenes.ids() {
        let scene = f.ds.scenes.name(s).unwrap();
        // Oracle RC: names one undirected edge away from the scene, mapped to
        // concept ids by exact name.
        let neighbours: BTreeSet<&str> =
            f.kg.triples()
                .iter()
                .filter_map(|t| {
                    if t.head == scene {
                        Some(t.tail.as_str())
                    } else if t.tail == scene {
                        Some(t.head.as_str())
                    } else {
                        None
                    }
                })
                .collect();
        let rc: ConceptSet =
            f.ds.concepts
                .entries()
                .iter()
                .filter(|e| neighbours.contains(e.name.as_str()))
                .map(|e| e.id)
                .collect();
        // Oracle C_y: raw mask labels of the scene's images.
        let mut c_y = ConceptSet::new();
        for rec in f.ds.images.iter().filter(|r| r.scene == s) {
            let bytes = std::fs::read(&rec.mask_path).unwrap();
            for chunk in bytes[20..].chunks_exact(4) {
                let id = u32::from_le_bytes(chunk.try_into().unwrap());
                if id != 0 {
                    c_y.insert(ConceptId(id));
                }
            }
        }
        let oracle: ConceptSet = rc.intersection(&c_y).copied().collect();
        let got = scc(s, &related[&s], &coverage)
            .map_err(|e| e.to_string())?
            .set();
        ensure!(got == oracle, "scene {s}: SCC {got:?} != oracle {oracle:?}");
    }
    Ok("SCC = RC ∩ C_y for all 3 scenes".into())
}

fn desk_graph() -> KnowledgeGraph {
    let raw = [
        ("bed", "at_location", "bedroom"),
        ("pillow", "at_location", "bedroom"),
        ("wardrobe", "at_location", "bedroom"),
        ("stove", "at_location", "kitchen"),
        ("sink", "at_location", "kitchen"),
        ("fridge", "at_location", "kitchen"),
        ("bathtub", "at_location", "bathroom"),
        ("toilet", "at_location", "bathroom"),
        ("sink", "at_location", "bathroom"),
        ("desk", "at_location", "office"),
        ("monitor", "at_location", "office"),
        ("chair", "at_location", "office"),
        ("bed", "is_a", "furniture"),
        ("wardrobe", "is_a", "furniture"),
        ("desk", "is_a", "furniture"),
        ("chair", "is_a", "furniture"),
        ("stove", "is_a", "appliance"),
        ("fridge", "is_a", "appliance"),
        ("monitor", "is_a", "appliance"),
        ("pillow", "part_of", "bed"),
    ];
    KnowledgeGraph::from_triples(raw.iter().map(|(h, r, t)| Triple {
        head: h.to_string(),
        relation: r.to_string(),
        tail: t.to_string(),
    }))
}

fn transe() -> Outcome {
    let start = Instant::now();
    let kg = desk_graph();
    ensure!(
        kg.triples().len() == 20,
        "desk graph has {} triples",
        kg.triples().len()
    );
    let cfg = TransEConfig {
        seed: 7,
        ..TransEConfig::default()
    };
    let emb = train_transe(&kg, cfg).map_err(|e| e.to_string())?;
    let (first, last) = (emb.epoch_losses[0], *emb.epoch_losses.last().unwrap());
    ensure!(last < first, "loss went from {first} to {last}");

    let nodes = kg.nodes();
    let mut below = 0;
    for t in kg.triples() {
        let d = emb
            .translation_distance(&t.head, &t.relation, &t.tail)
            .unwrap();
        let mut corrupted = Vec::new();
        for n in nodes {
            if *n != t.head {
                corrupted.push(emb.translation_distance(n, &t.relation, &t.tail).unwrap());
            }
            if *n != t.tail {
                corrupted.push(emb.translation_distance(&t.head, &t.relation, n).unwrap());
            }
        }
        corrupted.sort_by(f32::total_cmp);
        let m = corrupted.len();
        let median = if m % 2 == 1 {
            corrupted[m / 2]
        } else {
            0.5 * (corrupted[m / 2 - 1] + corrupted[m / 2])
        };
        below += usize::from(d < median);
    }
    let frac = below as f64 / kg.triples().len() as f64;
    ensure!(
        frac >= 0.8,
        "only {:.0}% of triples beat the corrupted median",
        100.0 * frac
    );
    let again = train_transe(&kg, cfg).map_err(|e| e.to_string())?;
    ensure!(again == emb, "two runs with the same seed differ");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!(
        "loss {first:.3} -> {last:.3}, {:.0}% below median, deterministic, {took:.1?}",
        100.0 * frac
    ))
}

fn planted_embedding(points: &[Vec<f32>]) -> (ConceptSet, EmbeddingTable, ConceptAlignment) {
    let entities = points
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("n{i}"), p.clone()))
        .collect();
    let emb = EmbeddingTable::new(points[0].len(), entities, vec![]).unwrap();
    let mut alignment = ConceptAlignment::default();
    for i in 0..points.len() {
        alignment.aligned.insert(
            ConceptId(i as u32 + 1),
            AlignedNode {
                node: format!("n{i}"),
                kind: MatchKind::Exact,
                similarity: 1.0,
            },
        );
    }
    (
        (1..=points.len() as u32).map(ConceptId).collect(),
        emb,
        alignment,
    )
}

fn clustering(f: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let points: Vec<Vec<f32>> = (0..15)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let (concepts, emb, al) = planted_embedding(&points);
    for k in 1..=15 {
        let c = cluster_concepts(&concepts, &emb, &al, k).map_err(|e| e.to_string())?;
        ensure!(
            c.clusters.len() == k && c.clusters.iter().all(|m| !m.is_empty()),
            "k = {k}: wrong cluster count"
        );
        let members: usize = c.clusters.iter().map(Vec::len).sum();
        ensure!(
            members == 15,
            "k = {k}: clusters do not partition the concepts"
        );
    }

    // k = 1 against every possible medoid.
    let one = cluster_concepts(&concepts, &emb, &al, 1).map_err(|e| e.to_string())?;
    let dist = |a: &[f32], b: &[f32]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let best = (0..points.len())
        .map(|i| (i, points.iter().map(|p| dist(&points[i], p)).sum::<f64>()))
        .fold(
            (0, f64::INFINITY),
            |b, (i, c)| if c < b.1 { (i, c) } else { b },
        );
    ensure!(
        one.representatives == vec![ConceptId(best.0 as u32 + 1)],
        "k = 1 medoid differs from exhaustive search"
    );

    // Two planted groups.
    let mut groups = Vec::new();
    for center in [-4.0f32, 4.0] {
        for _ in 0..8 {
            groups.push((0..3).map(|_| center + rng.gen_range(-0.3..0.3)).collect());
        }
    }
    let (gc, gemb, gal) = planted_embedding(&groups);
    let two = cluster_concepts(&gc, &gemb, &gal, 2).map_err(|e| e.to_string())?;
    let want: Vec<Vec<ConceptId>> = vec![
        (1..=8).map(ConceptId).collect(),
        (9..=16).map(ConceptId).collect(),
    ];
    ensure!(
        two.clusters == want,
        "planted groups not recovered: {:?}",
        two.clusters
    );

    // Identity clustering on the synthetic dataset.
    let thresholds = compute_thresholds(&f.ds, SYNTH_QUANTILE).map_err(|e| e.to_string())?;
    let all: ConceptSet = f.ds.concepts.ids().collect();
    let a = dataset_iou(&f.ds, &thresholds, None)
        .map_err(|e| e.to_string())?
        .mean_best_iou();
    let b = dataset_iou(
        &f.ds,
        &thresholds,
        Some(&ConceptClustering::identity(&all).relabel_map()),
    )
    .map_err(|e| e.to_string())?
    .mean_best_iou();
    let identity_gain = gain_percent(a, b).map_err(|e| e.to_string())?;
    ensure!(
        identity_gain == 0.0,
        "identity clustering gain {identity_gain}"
    );

    // Half-mask merge: one unit on the left half, concepts 1 and 2 on its two
    // quarters.
    let act: Vec<f32> = (0..16).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect();
    let labels: Vec<u32> = (0..16)
        .map(|i| {
            if i % 4 >= 2 {
                3
            } else if i / 4 < 2 {
                1
            } else {
                2
            }
        })
        .collect();
    let pairs = vec![(
        ActivationVolume::new(1, 4, 4, act).unwrap(),
        SegmentationMask::new(1, 4, 4, labels).unwrap(),
    )];
    let th = UnitThresholds {
        thresholds: vec![0.5],
        quantile_level: 0.5,
    };
    let merge: BTreeMap<ConceptId, ConceptId> = [(ConceptId(2), ConceptId(1))].into();
    let ha = dataset_iou_from_pairs(&pairs, &th, None)
        .map_err(|e| e.to_string())?
        .mean_best_iou();
    let hb = dataset_iou_from_pairs(&pairs, &th, Some(&merge))
        .map_err(|e| e.to_string())?
        .mean_best_iou();
    let merge_gain = gain_percent(ha, hb).map_err(|e| e.to_string())?;
    ensure!(merge_gain > 0.0, "half-mask merge gain {merge_gain}");

    let formula = gain_percent(0.10, 0.126).map_err(|e| e.to_string())?;
    ensure!(
        (formula - 26.0).abs() < 1e-9,
        "gain(0.10, 0.126) = {formula}"
    );
    Ok(format!(
        "k = 1..15 exact, medoid oracle ok, groups recovered, identity gain 0, merge gain {merge_gain:+.1}%, formula {formula:.9}"
    ))
}

fn ablation(f: &Fixture) -> Outcome {
    // Random head: empty set is a no-op, full set leaves the bias.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (scenes, units) = (4, 12);
    let head = LinearHead::new(
        scenes,
        units,
        (0..scenes * units)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        (0..scenes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let all_units: BTreeSet<usize> = (0..units).collect();
    for _ in 0..50 {
        let x: Vec<f32> = (0..units).map(|_| rng.gen_range(0.0..3.0)).collect();
        let base = head.logits(&x);
        let same = ablated_logits(&head, &x, &BTreeSet::new()).unwrap();
        ensure!(
            base.iter()
                .zip(&same)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "empty ablation changed logits"
        );
        let zeroed = ablated_logits(&head, &x, &all_units).unwrap();
        ensure!(
            argmax(&zeroed) == argmax(head.bias()),
            "full ablation does not predict argmax(bias)"
        );
    }

    // Planted dataset: rank units per scene and disable the extremes.
    let thresholds = compute_thresholds(&f.ds, SYNTH_QUANTILE).map_err(|e| e.to_string())?;
    let alignment = ConceptAlignment::build(&f.ds.concepts, &f.kg, DEFAULT_FUZZY_FLOOR);
    let coverage = SceneCoverage::from_manifest(&f.ds).map_err(|e| e.to_string())?;
    let icc = identifier_core_concepts(
        &coverage,
        &related_map(f, &alignment),
        DEFAULT_TOP_K,
        DEFAULT_GRID_STEP,
    )
    .map_err(|e| e.to_string())?;
    let predictions = f.ds.all_predictions().map_err(|e| e.to_string())?;
    let features = f.ds.all_pooled_features().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for s in f.ds.scenes.ids() {
        let c_y = coverage.scene_concepts(s);
        let mut per_image = Vec::new();
        for (rec, p) in f.ds.images.iter().zip(&predictions) {
            if rec.scene != s || *p != s {
                continue;
            }
            let vol = ActivationVolume::load(&rec.activation_path).unwrap();
            let mask = SegmentationMask::load(&rec.mask_path).unwrap();
            let scores =
                score_volume(&vol, &mask, &thresholds, ConceptScope::Concepts(&c_y)).unwrap();
            per_image.push(
                select_learned_concepts(rec.image_id, &scores, Strategy::MinMaxThreshold)
                    .unwrap()
                    .per_unit,
            );
        }
        let refs: Vec<&[ConceptSet]> = per_image.iter().map(Vec::as_slice).collect();
        let contrib =
            contribution_scores(s, &refs, &icc.icc[&s].set()).map_err(|e| e.to_string())?;

        let idx: Vec<usize> =
            f.ds.images
                .iter()
                .enumerate()
                .filter(|(_, r)| r.scene == s)
                .map(|(i, _)| i)
                .collect();
        let feats: Vec<Vec<f32>> = idx.iter().map(|&i| features[i].clone()).collect();
        let targets = vec![s; idx.len()];
        let top: BTreeSet<usize> = contrib.top_positive(1).iter().copied().collect();
        let bottom: BTreeSet<usize> = contrib.top_negative(1).into_iter().collect();
        let pos = ablate(&f.ds.head, &feats, &targets, &top).map_err(|e| e.to_string())?;
        let neg = ablate(&f.ds.head, &feats, &targets, &bottom).map_err(|e| e.to_string())?;
        ensure!(
            pos.accuracy_after < pos.accuracy_before,
            "scene {s}: disabling top positive unit {top:?} did not lower accuracy"
        );
        ensure!(
            neg.accuracy_after >= neg.accuracy_before,
            "scene {s}: disabling most negative unit {bottom:?} lowered accuracy"
        );
        lines.push(format!(
            "s{s}: +{:?} {:.2}->{:.2}, -{:?} {:.2}->{:.2}",
            top,
            pos.accuracy_before,
            pos.accuracy_after,
            bottom,
            neg.accuracy_before,
            neg.accuracy_after
        ));
    }
    Ok(format!("empty/full ablation exact; {}", lines.join("; ")))
}

fn contribution_hand_case() -> Outcome {
    let a = ConceptId(1);
    let b = ConceptId(2);
    let img1 = [ConceptSet::from([a, b])];
    let img2 = [ConceptSet::from([a])];
    let c = contribution_scores(SceneId(0), &[&img1, &img2], &ConceptSet::from([a]))
        .map_err(|e| e.to_string())?;
    ensure!(c.scores == vec![1], "score {:?}", c.scores);
    Ok("(1 - 1) + (1 - 0) = 1".into())
}

fn pe_svm() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // PE-shaped features for 2 scenes and 16 units: 3*2 + 2 + 16 columns.
    let width = 3 * 2 + 2 + 16;
    let direction: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut samples = Vec::new();
    while samples.len() < 400 {
        let x: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m: f64 = x.iter().zip(&direction).map(|(a, b)| a * b).sum();
        if m.abs() < 0.2 {
            continue;
        }
        samples.push((x, SceneId(u32::from(m > 0.0))));
    }
    samples.shuffle(&mut rng);
    let model = train_pe_svm(
        &samples,
        SvmConfig {
            seed: 3,
            ..SvmConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let acc = model.accuracy(&samples).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure!(acc >= 0.95, "training accuracy {acc}");
    ensure!(took < Duration::from_secs(5), "took {took:?}");
    ensure!(
        model.objective.windows(2).all(|w| w[1] <= w[0]),
        "hinge objective increased"
    );
    Ok(format!(
        "accuracy {acc:.3} in {took:.1?}, objective {:.4} -> {:.4} non-increasing",
        model.objective[0],
        model.objective.last().unwrap()
    ))
}

fn run_cli(root: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_neurodissect"))
        .current_dir(root)
        .env("NEURODISSECT_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let learned = [
        "--learned",
        "rep/dissect/learned.tsv",
        "--core",
        "rep/core/core_concepts.tsv",
    ];
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", "data", "--seed", "5"],
        vec![
            "--config",
            "data/pipeline.toml",
            "dissect",
            "--out",
            "rep/dissect",
        ],
        vec![
            "--config",
            "data/pipeline.toml",
            "core-concepts",
            "--out",
            "rep/core",
        ],
        [
            &[
                "--config",
                "data/pipeline.toml",
                "explain",
                "--out",
                "rep/explain",
            ][..],
            &learned,
        ]
        .concat(),
        vec![
            "--config",
            "data/pipeline.toml",
            "filter",
            "--k",
            "2,4,7",
            "--epochs",
            "100",
            "--out",
            "rep/filter",
        ],
        [
            &[
                "--config",
                "data/pipeline.toml",
                "ablate",
                "--k",
                "4",
                "--out",
                "rep/ablate",
            ][..],
            &learned,
        ]
        .concat(),
        [
            &[
                "--config",
                "data/pipeline.toml",
                "retrain-pe",
                "--out",
                "rep/pe",
            ][..],
            &learned,
        ]
        .concat(),
    ];
    for s in &steps {
        run_cli(root, threads, s)?;
    }
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut queue = VecDeque::from([root.to_path_buf()]);
    while let Some(dir) = queue.pop_front() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                queue.push_back(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "1")?;
    pipeline(b.path(), "4")?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    ensure!(ta.len() > 20, "only {} files produced", ta.len());
    ensure!(ta.keys().eq(tb.keys()), "file sets differ");
    for (p, bytes) in &ta {
        ensure!(tb[p] == *bytes, "{} differs between runs", p.display());
    }
    Ok(format!(
        "{} files byte-identical across 1 and 4 threads",
        ta.len()
    ))
}

fn main() {
    let f = fixture();
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("metric identities", Box::new(metric_identities)),
        ("IoU oracle", Box::new(iou_oracle)),
        ("bilinear upsampling", Box::new(upsampling)),
        ("strategy nesting", Box::new(strategy_nesting)),
        ("ICC on planted fixture", Box::new(|| icc_correctness(&f))),
        ("SCC oracle", Box::new(|| scc_oracle(&f))),
        ("TransE desk graph", Box::new(transe)),
        ("clustering and IoU gain", Box::new(|| clustering(&f))),
        ("ablation", Box::new(|| ablation(&f))),
        ("contribution hand case", Box::new(contribution_hand_case)),
        ("PE-SVM", Box::new(pe_svm)),
        ("end-to-end determinism", Box::new(end_to_end_determinism)),
    ];
    let mut failed = 0;
    println!("\nacceptance criteria");
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name:<26} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<26} {why}");
            }
        }
    }
    println!("{} passed, {failed} failed\n", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
