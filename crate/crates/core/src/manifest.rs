//! The dataset manifest: one line per image plus `#key value` headers naming
//! the vocabulary and linear-head files.
//!
//! ```text
//! #concept_vocab concepts.tsv
//! #scene_vocab scenes.tsv
//! #head head.tsv
//! image_id  scene_id  predicted|-  activation_path  mask_path  split  [pooled_path]
//! ```
//!
//! Relative paths resolve against the manifest's directory. The optional
//! seventh column names a `NACT` file of shape `U×1×1` holding precomputed
//! pooled features; without it features are pooled from the activation volume.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ConceptVocab, LinearHead, SceneId, SceneVocab};
use crate::tsv;
use crate::volume::{ActivationVolume, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    /// Target scene.
    pub scene: SceneId,
    /// Scene recorded as the model's prediction, when the exporter had one.
    pub predicted: Option<SceneId>,
    pub activation_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub pooled_path: Option<PathBuf>,
    pub pooled_features: Option<Vec<f32>>,
}

/// A validated dataset: vocabularies, the linear head and every image record,
/// with all cross references checked.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub concept_vocab_path: PathBuf,
    pub scene_vocab_path: PathBuf,
    pub head_path: PathBuf,
    pub concepts: ConceptVocab,
    pub scenes: SceneVocab,
    pub head: LinearHead,
    pub images: Vec<ImageRecord>,
    /// Units of the dissected layer; equals the head's input width.
    pub units: usize,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };

        let mut concept_vocab_path = None;
        let mut scene_vocab_path = None;
        let mut head_path = None;
        let mut images = Vec::new();
        for (line, text) in tsv::read_lines(path)? {
            if text.trim().is_empty() {
                continue;
            }
            if let Some(header) = text.strip_prefix('#') {
                let mut parts = header.trim().splitn(2, char::is_whitespace);
                let key = parts.next().unwrap_or("");
                let value = parts.next().map(str::trim).unwrap_or("");
                let slot = match key {
                    "concept_vocab" => &mut concept_vocab_path,
                    "scene_vocab" => &mut scene_vocab_path,
                    "head" => &mut head_path,
                    // Other comment lines are free text.
                    _ => continue,
                };
                if value.is_empty() {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("header `#{key}` has no value"),
                    ));
                }
                *slot = Some(resolve(value));
                continue;
            }
            let row = tsv::Row::new(path, line, &text);
            if row.len() != 6 && row.len() != 7 {
                return Err(row.error(format!("expected 6 or 7 fields, found {}", row.len())));
            }
            let predicted = match row.field(2).trim() {
                "-" => None,
                _ => Some(SceneId(row.parse(2)?)),
            };
            let pooled_path = match row.fields().get(6).map(|s| s.trim()) {
                None | Some("-") => None,
                Some(p) => Some(resolve(p)),
            };
            images.push(ImageRecord {
                image_id: row.parse(0)?,
                scene: SceneId(row.parse(1)?),
                predicted,
                activation_path: resolve(row.field(3).trim()),
                mask_path: resolve(row.field(4).trim()),
                split: row.parse(5)?,
                pooled_path,
                pooled_features: None,
            });
        }

        let missing = |k: &str| Error::format(path, format!("missing `#{k}` header"));
        let concept_vocab_path = concept_vocab_path.ok_or_else(|| missing("concept_vocab"))?;
        let scene_vocab_path = scene_vocab_path.ok_or_else(|| missing("scene_vocab"))?;
        let head_path = head_path.ok_or_else(|| missing("head"))?;
        let concepts = ConceptVocab::load(&concept_vocab_path)?;
        let scenes = SceneVocab::load(&scene_vocab_path)?;
        let head = LinearHead::load(&head_path)?;
        if head.scenes() != scenes.len() {
            return Err(Error::DimensionMismatch(format!(
                "linear head has {} scene rows but the scene vocabulary has {} scenes",
                head.scenes(),
                scenes.len()
            )));
        }

        let mut manifest = DatasetManifest {
            path: path.to_path_buf(),
            concept_vocab_path,
            scene_vocab_path,
            head_path,
            units: head.units(),
            concepts,
            scenes,
            head,
            images,
            warnings: Vec::new(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&mut self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.images.len());
        for rec in &self.images {
            if !seen.insert(rec.image_id) {
                return Err(Error::VocabMismatch(format!(
                    "duplicate image id {}",
                    rec.image_id
                )));
            }
            for scene in std::iter::once(rec.scene).chain(rec.predicted) {
                if !self.scenes.contains(scene) {
                    return Err(Error::VocabMismatch(format!(
                        "image {} references scene {scene} absent from the scene vocabulary",
                        rec.image_id
                    )));
                }
            }
        }

        let pooled: Vec<Option<Vec<f32>>> = self
            .images
            .par_iter()
            .map(|rec| self.validate_record(rec))
            .collect::<Result<_>>()?;
        for (rec, features) in self.images.iter_mut().zip(pooled) {
            rec.pooled_features = features;
        }

        if self.images.is_empty() {
            let msg = format!("manifest {} lists no images", self.path.display());
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
        Ok(())
    }

    fn validate_record(&self, rec: &ImageRecord) -> Result<Option<Vec<f32>>> {
        let [units, height, width] = ActivationVolume::peek_shape(&rec.activation_path)?;
        if units != self.units {
            return Err(Error::DimensionMismatch(format!(
                "image {}: activation has {units} units, head expects {}",
                rec.image_id, self.units
            )));
        }
        let expected_len = 20 + 4 * (units * height * width) as u64;
        let actual_len = std::fs::metadata(&rec.activation_path)
            .map_err(|e| Error::io(&rec.activation_path, e))?
            .len();
        if actual_len != expected_len {
            return Err(Error::format(
                &rec.activation_path,
                format!("expected {expected_len} bytes, found {actual_len}"),
            ));
        }

        let mask = SegmentationMask::load(&rec.mask_path)?;
        if mask.height() < height || mask.width() < width {
            return Err(Error::DimensionMismatch(format!(
                "image {}: mask {}x{} is smaller than activation {height}x{width}",
                rec.image_id,
                mask.height(),
                mask.width()
            )));
        }
        if let Some(bad) = mask
            .concepts()
            .into_iter()
            .find(|c| !self.concepts.contains(*c))
        {
            return Err(Error::VocabMismatch(format!(
                "image {}: mask references concept {bad} absent from the concept vocabulary",
                rec.image_id
            )));
        }

        let Some(pooled_path) = &rec.pooled_path else {
            return Ok(None);
        };
        let pooled = ActivationVolume::load(pooled_path).map_err(|e| match e {
            Error::MissingActivation(p) => Error::MissingFile(p),
            other => other,
        })?;
        if pooled.units() != self.units || pooled.height() != 1 || pooled.width() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "image {}: pooled features must be {}x1x1, found {}x{}x{}",
                rec.image_id,
                self.units,
                pooled.units(),
                pooled.height(),
                pooled.width()
            )));
        }
        Ok(Some(pooled.data().to_vec()))
    }

    pub fn scene_images(&self, scene: SceneId) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.scene == scene)
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }

    /// Pooled features of one image: the stored vector if the manifest
    /// provided one, else the global average pool of its activation volume.
    pub fn pooled_features(&self, rec: &ImageRecord) -> Result<Vec<f32>> {
        match &rec.pooled_features {
            Some(f) => Ok(f.clone()),
            None => Ok(ActivationVolume::load(&rec.activation_path)?.pool_features()),
        }
    }

    /// Pooled features for every image, in manifest order.
    pub fn all_pooled_features(&self) -> Result<Vec<Vec<f32>>> {
        self.images
            .par_iter()
            .map(|r| self.pooled_features(r))
            .collect()
    }

    /// The recorded prediction, or the linear head's prediction when the
    /// manifest has none.
    pub fn predicted_scene(&self, rec: &ImageRecord) -> Result<SceneId> {
        match rec.predicted {
            Some(p) => Ok(p),
            None => Ok(self.head.predict(&self.pooled_features(rec)?)),
        }
    }

    pub fn all_predictions(&self) -> Result<Vec<SceneId>> {
        self.images
            .par_iter()
            .map(|r| self.predicted_scene(r))
            .collect()
    }
}

/// Writes a manifest. Paths under the manifest's directory are written
/// relative to it.
pub fn write_manifest(
    path: &Path,
    concept_vocab: &Path,
    scene_vocab: &Path,
    head: &Path,
    images: &[ImageRecord],
) -> Result<()> {
    let root = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> String {
        let p = p.strip_prefix(root).unwrap_or(p);
        p.to_string_lossy().replace('\\', "/")
    };
    let mut out = String::new();
    out.push_str(&format!("#concept_vocab {}\n", rel(concept_vocab)));
    out.push_str(&format!("#scene_vocab {}\n", rel(scene_vocab)));
    out.push_str(&format!("#head {}\n", rel(head)));
    for r in images {
        let predicted = r
            .predicted
            .map_or_else(|| "-".to_string(), |p| p.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.image_id,
            r.scene,
            predicted,
            rel(&r.activation_path),
            rel(&r.mask_path),
            r.split
        ));
        if let Some(p) = &r.pooled_path {
            out.push('\t');
            out.push_str(&rel(p));
        }
        out.push('\n');
    }
    tsv::write_file(path, &out)
}
