//! Per-image activation volumes, multi-plane segmentation masks and their
//! little-endian binary encodings.
//!
//! ```text
//! NACT | u32 version=1 | u32 U | u32 H | u32 W | U·H·W × f32
//! NMSK | u32 version=1 | u32 P | u32 H | u32 W | P·H·W × u32
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ConceptId, ConceptSet};
use crate::tsv;

pub const ACTIVATION_MAGIC: &[u8; 4] = b"NACT";
pub const MASK_MAGIC: &[u8; 4] = b"NMSK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Activation maps of every unit of one layer for one image, `[U][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVolume {
    units: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ActivationVolume {
    pub fn new(units: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if units == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "activation volume {units}x{height}x{width} has an empty axis"
            )));
        }
        if data.len() != units * height * width {
            return Err(Error::DimensionMismatch(format!(
                "activation volume {units}x{height}x{width} given {} values",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "non-finite activation at index {i}"
            )));
        }
        Ok(ActivationVolume {
            units,
            height,
            width,
            data,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row-major `[H][W]` map of one unit.
    pub fn unit_map(&self, unit: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[unit * plane..(unit + 1) * plane]
    }

    /// Global average pool: the mean of each unit's map.
    pub fn pool_features(&self) -> Vec<f32> {
        (0..self.units)
            .map(|t| {
                let map = self.unit_map(t);
                let sum: f64 = map.iter().map(|&v| v as f64).sum();
                (sum / map.len() as f64) as f32
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(
            ACTIVATION_MAGIC,
            [self.units, self.height, self.width],
            self.data.len(),
        );
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let [units, height, width] = parse_header(bytes, ACTIVATION_MAGIC, path)?;
        let values = payload(bytes, [units, height, width], path)?
            .map(f32::from_le_bytes)
            .collect();
        Self::new(units, height, width, values).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingActivation(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Reads only the `(U, H, W)` header.
    pub fn peek_shape(path: &Path) -> Result<[usize; 3]> {
        let bytes = read_prefix(path, HEADER_LEN).map_err(|e| match e {
            Error::MissingFile(p) => Error::MissingActivation(p),
            other => other,
        })?;
        parse_header(&bytes, ACTIVATION_MAGIC, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tsv::write_bytes(path, &self.to_bytes())
    }
}

/// Per-pixel concept ids in `P` planes at input resolution, `[P][H][W]`.
/// Planes hold overlapping annotation layers (objects, parts, colors...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    planes: usize,
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(planes: usize, height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if planes == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "segmentation mask {planes}x{height}x{width} has an empty axis"
            )));
        }
        if data.len() != planes * height * width {
            return Err(Error::DimensionMismatch(format!(
                "segmentation mask {planes}x{height}x{width} given {} values",
                data.len()
            )));
        }
        Ok(SegmentationMask {
            planes,
            height,
            width,
            data,
        })
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn plane(&self, p: usize) -> &[u32] {
        let n = self.height * self.width;
        &self.data[p * n..(p + 1) * n]
    }

    /// Every nonzero concept id in any plane.
    pub fn concepts(&self) -> ConceptSet {
        self.data
            .iter()
            .filter(|&&c| c != 0)
            .map(|&c| ConceptId(c))
            .collect()
    }

    /// Pixel set of each concept: a pixel belongs to `c` if any plane holds `c`.
    pub fn concept_masks(&self) -> BTreeMap<ConceptId, PixelMask> {
        let n = self.height * self.width;
        let mut masks: BTreeMap<ConceptId, PixelMask> = BTreeMap::new();
        for (i, &c) in self.data.iter().enumerate() {
            if c == 0 {
                continue;
            }
            masks
                .entry(ConceptId(c))
                .or_insert_with(|| PixelMask::new(self.height, self.width))
                .insert(i % n);
        }
        masks
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(
            MASK_MAGIC,
            [self.planes, self.height, self.width],
            self.data.len(),
        );
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let dims = parse_header(bytes, MASK_MAGIC, path)?;
        let values = payload(bytes, dims, path)?
            .map(u32::from_le_bytes)
            .collect();
        Self::new(dims[0], dims[1], dims[2], values).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingMask(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tsv::write_bytes(path, &self.to_bytes())
    }
}

/// A set of pixels on an `H×W` grid, stored as a bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelMask {
    height: usize,
    width: usize,
    words: Vec<u64>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize) -> Self {
        PixelMask {
            height,
            width,
            words: vec![0; (height * width).div_ceil(64)],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                if f(y, x) {
                    m.insert(y * width + x);
                }
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn same_grid(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Inserts a pixel by flat row-major index.
    pub fn insert(&mut self, index: usize) {
        debug_assert!(index < self.height * self.width);
        self.words[index / 64] |= 1 << (index % 64);
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let i = y * self.width + x;
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_count(&self, other: &PixelMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_count(&self, other: &PixelMask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn union_with(&mut self, other: &PixelMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

fn header(magic: &[u8; 4], dims: [usize; 3], payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<[usize; 3]> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = le_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    Ok([
        le_u32(bytes, 8) as usize,
        le_u32(bytes, 12) as usize,
        le_u32(bytes, 16) as usize,
    ])
}

fn payload<'a>(
    bytes: &'a [u8],
    dims: [usize; 3],
    path: &Path,
) -> Result<impl Iterator<Item = [u8; 4]> + 'a> {
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for {dims:?}, found {}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| c.try_into().unwrap()))
}

fn read_prefix(path: &Path, n: usize) -> Result<Vec<u8>> {
    use std::io::Read;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(n);
    file.take(n as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
