//! A small planted dataset whose answers are known by construction.
//!
//! Each scene `s` gets an identifier concept (id `s + 1`) drawn as a
//! rectangle on mask plane 0 over a wall/floor background, present in every
//! image of that scene and nowhere else. Plane 1 carries a `clutter` square in
//! every image and, in about half of them, a `lamp` strip.
//!
//! Unit layout for `S` scenes:
//!
//! - unit `s` fires exactly on scene `s`'s identifier rectangle,
//! - unit `S + s` fires exactly on the clutter square of scene-`s` images,
//! - the remaining units fire on part of the clutter square in some images.
//!
//! The head weighs unit `s` by 20 toward scene `s` and unit `S + s` by 1
//! toward scene `s + 1`, so pooled features classify perfectly and zeroing
//! unit `s` flips scene `s` to `s + 1`. The graph links every scene to its
//! identifier, `wall` and `floor`; `clutter` and `lamp` hang off unrelated
//! nodes.
//!
//! Activations are exactly zero off their plant, so dissection needs an upper
//! quantile above the active-pixel fraction. The generated `pipeline.toml`
//! sets it to [`SYNTH_QUANTILE`].

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeGraph, Triple};
use crate::manifest::{write_manifest, ImageRecord, Split};
use crate::model::{
    ConceptCategory, ConceptEntry, ConceptId, ConceptVocab, LinearHead, SceneEntry, SceneId,
    SceneVocab,
};
use crate::tsv;
use crate::volume::{ActivationVolume, SegmentationMask};

pub const SYNTH_QUANTILE: f64 = 0.3;

const IDENTIFIERS: [&str; 12] = [
    "bed",
    "stove",
    "bathtub",
    "desk",
    "sofa",
    "toilet",
    "bookshelf",
    "piano",
    "altar",
    "locker",
    "conveyor",
    "pew",
];
const SCENES: [&str; 12] = [
    "bedroom",
    "kitchen",
    "bathroom",
    "office",
    "living_room",
    "restroom",
    "library",
    "music_room",
    "church",
    "locker_room",
    "factory",
    "chapel",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub scenes: usize,
    pub images_per_scene: usize,
    pub units: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of each scene's images assigned to the train split.
    pub train_fraction: f64,
    /// Images whose recorded prediction is set to the next scene.
    pub forged_errors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            scenes: 3,
            images_per_scene: 10,
            units: 16,
            height: 8,
            width: 8,
            train_fraction: 0.7,
            forged_errors: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes < 2 {
            return Err(Error::InvalidParameter(
                "synthetic data needs at least 2 scenes".into(),
            ));
        }
        if self.images_per_scene == 0 {
            return Err(Error::InvalidParameter(
                "images per scene must be at least 1".into(),
            ));
        }
        if self.units < 2 * self.scenes {
            return Err(Error::InvalidParameter(format!(
                "{} units cannot hold a discriminative and a decoy unit for {} scenes",
                self.units, self.scenes
            )));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidParameter("grid must be at least 4x4".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidParameter(
                "train fraction must lie in [0, 1]".into(),
            ));
        }
        if self.forged_errors > self.scenes * self.images_per_scene {
            return Err(Error::InvalidParameter(
                "more forged errors than images".into(),
            ));
        }
        Ok(())
    }

    pub fn identifier(&self, scene: SceneId) -> ConceptId {
        ConceptId(scene.0 + 1)
    }

    pub fn wall(&self) -> ConceptId {
        ConceptId(self.scenes as u32 + 1)
    }

    pub fn floor(&self) -> ConceptId {
        ConceptId(self.scenes as u32 + 2)
    }

    pub fn clutter(&self) -> ConceptId {
        ConceptId(self.scenes as u32 + 3)
    }

    pub fn lamp(&self) -> ConceptId {
        ConceptId(self.scenes as u32 + 4)
    }

    pub fn discriminative_unit(&self, scene: SceneId) -> usize {
        scene.index()
    }

    pub fn decoy_unit(&self, scene: SceneId) -> usize {
        self.scenes + scene.index()
    }

    fn identifier_name(&self, s: usize) -> String {
        IDENTIFIERS
            .get(s)
            .map_or_else(|| format!("landmark_{s}"), |n| n.to_string())
    }

    fn scene_name(&self, s: usize) -> String {
        SCENES
            .get(s)
            .map_or_else(|| format!("scene_{s}"), |n| n.to_string())
    }
}

/// Paths of a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub kg: PathBuf,
    pub config: PathBuf,
}

#[derive(Clone, Copy)]
struct Rect {
    row: usize,
    col: usize,
    height: usize,
    width: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.row..self.row + self.height).contains(&r)
            && (self.col..self.col + self.width).contains(&c)
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.row < o.row + o.height
            && o.row < self.row + self.height
            && self.col < o.col + o.width
            && o.col < self.col + self.width
    }

    fn pixels(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        (self.row..self.row + self.height)
            .flat_map(move |r| (self.col..self.col + self.width).map(move |c| r * w + c))
    }
}

/// Uniformly placed `height x width` rectangle avoiding `avoid`.
fn place(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    height: usize,
    width: usize,
    avoid: &[Rect],
) -> Option<Rect> {
    let spots: Vec<Rect> = (0..=h - height)
        .flat_map(|row| {
            (0..=w - width).map(move |col| Rect {
                row,
                col,
                height,
                width,
            })
        })
        .filter(|r| avoid.iter().all(|a| !r.overlaps(a)))
        .collect();
    spots.choose(rng).copied()
}

struct Image {
    mask: SegmentationMask,
    volume: ActivationVolume,
}

fn draw_image(cfg: &SynthConfig, scene: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let clutter = place(rng, h, w, 2, 2, &[]).expect("grid fits a 2x2 square");
    let ident = loop {
        let rh = rng.gen_range(2..=(h / 2).max(2));
        let rw = rng.gen_range(2..=(w / 2).max(2));
        if let Some(r) = place(rng, h, w, rh, rw, &[clutter]) {
            break r;
        }
    };
    let lamp = if rng.gen_bool(0.5) {
        place(rng, h, w, 1, 2, &[clutter])
    } else {
        None
    };

    let mut labels = vec![0u32; 2 * n];
    for r in 0..h {
        for c in 0..w {
            let id = if ident.contains(r, c) {
                cfg.identifier(SceneId(scene as u32))
            } else if r < h / 2 {
                cfg.wall()
            } else {
                cfg.floor()
            };
            labels[r * w + c] = id.0;
        }
    }
    for p in clutter.pixels(w) {
        labels[n + p] = cfg.clutter().0;
    }
    if let Some(l) = lamp {
        for p in l.pixels(w) {
            labels[n + p] = cfg.lamp().0;
        }
    }

    let mut act = vec![0f32; cfg.units * n];
    for p in ident.pixels(w) {
        act[cfg.discriminative_unit(SceneId(scene as u32)) * n + p] = 1.0;
    }
    for p in clutter.pixels(w) {
        act[cfg.decoy_unit(SceneId(scene as u32)) * n + p] = 1.0;
    }
    let clutter_pixels: Vec<usize> = clutter.pixels(w).collect();
    for u in 2 * cfg.scenes..cfg.units {
        if !rng.gen_bool(0.5) {
            continue;
        }
        let take = rng.gen_range(1..=clutter_pixels.len());
        for &p in clutter_pixels.choose_multiple(rng, take) {
            act[u * n + p] = rng.gen_range(0.5f32..=1.0);
        }
    }
    Ok(Image {
        mask: SegmentationMask::new(2, h, w, labels)?,
        volume: ActivationVolume::new(cfg.units, h, w, act)?,
    })
}

pub fn concept_vocab(cfg: &SynthConfig) -> Result<ConceptVocab> {
    let mut entries: Vec<ConceptEntry> = (0..cfg.scenes)
        .map(|s| ConceptEntry {
            id: cfg.identifier(SceneId(s as u32)),
            name: cfg.identifier_name(s),
            category: ConceptCategory::Object,
        })
        .collect();
    for (id, name, category) in [
        (cfg.wall(), "wall", ConceptCategory::Part),
        (cfg.floor(), "floor", ConceptCategory::Part),
        (cfg.clutter(), "clutter", ConceptCategory::Object),
        (cfg.lamp(), "lamp", ConceptCategory::Object),
    ] {
        entries.push(ConceptEntry {
            id,
            name: name.into(),
            category,
        });
    }
    ConceptVocab::new(entries)
}

pub fn scene_vocab(cfg: &SynthConfig) -> Result<SceneVocab> {
    SceneVocab::new((0..cfg.scenes).map(|s| SceneEntry {
        id: SceneId(s as u32),
        name: cfg.scene_name(s),
    }))
}

pub fn head(cfg: &SynthConfig) -> Result<LinearHead> {
    let (s_n, u_n) = (cfg.scenes, cfg.units);
    let mut weights = vec![0f32; s_n * u_n];
    for s in 0..s_n {
        weights[s * u_n + cfg.discriminative_unit(SceneId(s as u32))] = 20.0;
        weights[((s + 1) % s_n) * u_n + cfg.decoy_unit(SceneId(s as u32))] = 1.0;
    }
    LinearHead::new(s_n, u_n, weights, vec![0.0; s_n])
}

pub fn knowledge_graph(cfg: &SynthConfig) -> KnowledgeGraph {
    let t = |h: &str, r: &str, tl: &str| Triple {
        head: h.into(),
        relation: r.into(),
        tail: tl.into(),
    };
    let mut triples = Vec::new();
    for s in 0..cfg.scenes {
        let scene = cfg.scene_name(s);
        triples.push(t(&cfg.identifier_name(s), "at_location", &scene));
        triples.push(t("wall", "part_of", &scene));
        triples.push(t("floor", "part_of", &scene));
        triples.push(t(&cfg.identifier_name(s), "is_a", "furniture"));
    }
    triples.push(t("lamp", "is_a", "furniture"));
    triples.push(t("lamp", "used_for", "lighting"));
    triples.push(t("clutter", "is_a", "object"));
    triples.push(t("furniture", "is_a", "object"));
    triples.push(t("wall", "made_of", "plaster"));
    triples.push(t("floor", "made_of", "wood"));
    KnowledgeGraph::from_triples(triples)
}

/// Writes the dataset under `out`. The same config always yields the same
/// bytes.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let concepts_path = out.join("concepts.tsv");
    let scenes_path = out.join("scenes.tsv");
    let head_path = out.join("head.tsv");
    let kg_path = out.join("kg.tsv");
    let manifest_path = out.join("manifest.tsv");
    let config_path = out.join("pipeline.toml");

    concept_vocab(cfg)?.write(&concepts_path)?;
    scene_vocab(cfg)?.write(&scenes_path)?;
    head(cfg)?.write(&head_path)?;
    knowledge_graph(cfg).write(&kg_path)?;

    let n_train = (cfg.train_fraction * cfg.images_per_scene as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.scenes * cfg.images_per_scene);
    for s in 0..cfg.scenes {
        for i in 0..cfg.images_per_scene {
            let image_id = (s * cfg.images_per_scene + i) as u64;
            let img = draw_image(cfg, s, &mut rng)?;
            let activation_path = out
                .join("activations")
                .join(format!("img_{image_id:05}.nact"));
            let mask_path = out.join("masks").join(format!("img_{image_id:05}.nmsk"));
            img.volume.write(&activation_path)?;
            img.mask.write(&mask_path)?;
            // Forged errors are spread round-robin over scenes.
            let forged = (0..cfg.forged_errors).any(|j| j % cfg.scenes == s && j / cfg.scenes == i);
            records.push(ImageRecord {
                image_id,
                scene: SceneId(s as u32),
                predicted: forged.then(|| SceneId(((s + 1) % cfg.scenes) as u32)),
                activation_path,
                mask_path,
                split: if i < n_train {
                    Split::Train
                } else {
                    Split::Test
                },
                pooled_path: None,
                pooled_features: None,
            });
        }
    }
    write_manifest(
        &manifest_path,
        &concepts_path,
        &scenes_path,
        &head_path,
        &records,
    )?;
    tsv::write_file(
        &config_path,
        &format!(
            "# Settings for the planted dataset. Activations are zero off their\n\
             # plant, so the upper quantile must exceed the active fraction.\n\
             manifest = \"manifest.tsv\"\n\
             kg = \"kg.tsv\"\n\
             quantile = {SYNTH_QUANTILE}\n\
             seed = {}\n",
            cfg.seed
        ),
    )?;
    Ok(SynthOutput {
        manifest: manifest_path,
        kg: kg_path,
        config: config_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::DatasetManifest;

    #[test]
    fn rejects_bad_configs() {
        let ok = SynthConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SynthConfig { scenes: 1, ..ok },
            SynthConfig { units: 5, ..ok },
            SynthConfig { height: 3, ..ok },
            SynthConfig {
                images_per_scene: 0,
                ..ok
            },
            SynthConfig {
                forged_errors: 31,
                ..ok
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn plant_is_consistent() {
        let cfg = SynthConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let out = generate(dir.path(), &cfg).unwrap();
        let ds = DatasetManifest::load(&out.manifest).unwrap();
        assert!(ds.warnings.is_empty());
        for rec in &ds.images {
            let mask = SegmentationMask::load(&rec.mask_path).unwrap();
            let vol = ActivationVolume::load(&rec.activation_path).unwrap();
            let concepts = mask.concepts();
            assert!(concepts.contains(&cfg.identifier(rec.scene)));
            assert!(
                concepts.contains(&cfg.wall())
                    && concepts.contains(&cfg.floor())
                    && concepts.contains(&cfg.clutter())
            );
            for s in 0..cfg.scenes as u32 {
                if SceneId(s) != rec.scene {
                    assert!(!concepts.contains(&cfg.identifier(SceneId(s))));
                }
            }
            // Discriminative unit equals the identifier mask.
            let ident = &mask.concept_masks()[&cfg.identifier(rec.scene)];
            let unit = vol.unit_map(cfg.discriminative_unit(rec.scene));
            for (p, &v) in unit.iter().enumerate() {
                assert_eq!(v > 0.0, ident.contains(p / cfg.width, p % cfg.width));
            }
            assert_eq!(ds.head.predict(&vol.pool_features()), rec.scene);
        }
    }

    #[test]
    fn output_is_deterministic() {
        let cfg = SynthConfig {
            seed: 11,
            ..SynthConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(a.path(), &cfg).unwrap();
        generate(b.path(), &cfg).unwrap();
        for name in [
            "manifest.tsv",
            "concepts.tsv",
            "kg.tsv",
            "activations/img_00007.nact",
            "masks/img_00029.nmsk",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap()
            );
        }
    }
}
