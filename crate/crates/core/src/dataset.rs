//! Dataset ingestion, stratified splitting and the synthetic splice generator.
//!
//! A manifest is a list of labeled image paths (relative to a dataset root)
//! kept in lexicographic id order. It is persisted as JSON Lines, one
//! `{"id":…,"label":…,"split":…}` object per line.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{self, ChromaSubsampling, CodecError, ImageTensor};
use crate::util::{atomic_write, mix_seed};

#[derive(thiserror::Error, Debug)]
pub enum DatasetError {
    #[error("missing directory: {0}")]
    MissingDirectory(PathBuf),

    #[error("class {0:?} has no images")]
    EmptyClass(Label),

    #[error("class {label:?} would get an empty {split:?} set ({count} records, ratio {ratio})")]
    DegenerateClass {
        label: Label,
        split: Split,
        count: usize,
        ratio: f64,
    },

    #[error("invalid split ratio: {0}")]
    InvalidRatio(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid synthetic dataset request: {0}")]
    InvalidRequest(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ground-truth class. Tampered is the positive class everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Authentic = 0,
    Tampered = 1,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Tampered
    }

    pub fn as_f64(self) -> f64 {
        u8::from(self) as f64
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Authentic),
            1 => Ok(Label::Tampered),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: Label,
    pub split: Split,
}

/// Fractions of each class assigned to train and validation; the rest is test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: f64,
    pub val: f64,
}

impl SplitPlan {
    /// Train/test only (the validation role is then played by the test split).
    pub fn two_way(train: f64) -> Self {
        Self { train, val: 0.0 }
    }

    pub fn three_way(train: f64, val: f64) -> Self {
        Self { train, val }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.train > 0.0
            && self.train < 1.0
            && self.val >= 0.0
            && self.train + self.val < 1.0
            && self.train.is_finite()
            && self.val.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DatasetError::InvalidRatio(format!(
                "train {} / val {} must satisfy 0 < train, 0 <= val, train + val < 1",
                self.train, self.val
            )))
        }
    }
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::three_way(0.7, 0.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    records: Vec<SampleRecord>,
    /// Seed and plan of the last split, when known.
    pub split: Option<(u64, SplitPlan)>,
}

impl Manifest {
    /// Builds a manifest, sorting records into canonical id order.
    pub fn new(mut records: Vec<SampleRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DatasetError::DuplicateId(w[0].id.clone()));
        }
        Ok(Self { records, split: None })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.in_split(split).filter(|r| r.label == label).count()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serialization");
            out.push(b'\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_jsonl()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_jsonl(&text)
    }
}

/// Per-class subdirectory names. Defaults follow the CASIA v2.0 layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub authentic_dir: String,
    pub tampered_dir: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            authentic_dir: "Au".into(),
            tampered_dir: "Tp".into(),
        }
    }
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        .unwrap_or(false)
}

fn is_decodable(path: &Path) -> bool {
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map(|r| {
            matches!(r.format(), Some(image::ImageFormat::Jpeg | image::ImageFormat::Png))
                && r.into_dimensions().is_ok()
        })
        .unwrap_or(false)
}

/// Lists decodable `.jpg/.jpeg/.png` files (non-recursive) under each class
/// directory and labels them by directory.
pub fn scan_dataset(root: &Path, layout: &Layout) -> Result<Manifest> {
    let mut records = Vec::new();
    for (dir_name, label) in [
        (&layout.authentic_dir, Label::Authentic),
        (&layout.tampered_dir, Label::Tampered),
    ] {
        let dir = root.join(dir_name);
        if !dir.is_dir() {
            return Err(DatasetError::MissingDirectory(dir));
        }
        let mut found = 0usize;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if !path.is_file() || !has_image_extension(&path) {
                continue;
            }
            if !is_decodable(&path) {
                log::warn!("skipping undecodable file {}", path.display());
                continue;
            }
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                log::warn!("skipping non-UTF-8 file name {}", path.display());
                continue;
            };
            records.push(SampleRecord {
                id: format!("{dir_name}/{name}"),
                label,
                split: Split::Unassigned,
            });
            found += 1;
        }
        if found == 0 {
            return Err(DatasetError::EmptyClass(label));
        }
    }
    Manifest::new(records)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Assigns splits independently within each class.
///
/// Each class is shuffled with a PRNG seeded from `(seed, class)`; the first
/// `round(train * n)` records go to Train, the next `round((train + val) * n) -
/// round(train * n)` to Val and the rest to Test. Rounding is half-up.
pub fn stratified_split(manifest: &Manifest, plan: SplitPlan, seed: u64) -> Result<Manifest> {
    plan.validate()?;
    let mut records = manifest.records.clone();
    for label in [Label::Authentic, Label::Tampered] {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        let n = idx.len();
        let n_train = round_half_up(plan.train * n as f64);
        let n_train_val = round_half_up((plan.train + plan.val) * n as f64).max(n_train);
        let degenerate = |split: Split, ratio: f64| DatasetError::DegenerateClass {
            label,
            split,
            count: n,
            ratio,
        };
        if n_train == 0 {
            return Err(degenerate(Split::Train, plan.train));
        }
        if n_train_val >= n {
            return Err(degenerate(Split::Test, 1.0 - plan.train - plan.val));
        }
        if plan.val > 0.0 && n_train_val == n_train {
            return Err(degenerate(Split::Val, plan.val));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u8::from(label) as u64));
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            records[i].split = if pos < n_train {
                Split::Train
            } else if pos < n_train_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(Manifest {
        records,
        split: Some((seed, plan)),
    })
}

/// Rectangle `[x, x + width) × [y, y + height)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperRegion {
    pub id: String,
    pub region: Region,
}

/// Parameters of the synthetic splice generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_authentic: usize,
    pub n_tampered: usize,
    pub size: usize,
    pub seed: u64,
    /// Quality of the single compression every host image goes through.
    pub host_quality: u8,
    /// Range of qualities for the donor images spliced into tampered samples.
    pub donor_quality: (u8, u8),
}

impl SynthConfig {
    pub fn new(n_authentic: usize, n_tampered: usize, size: usize, seed: u64) -> Self {
        Self {
            n_authentic,
            n_tampered,
            size,
            seed,
            host_quality: 90,
            donor_quality: (50, 70),
        }
    }
}

pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub regions: Vec<TamperRegion>,
}

pub const TAMPER_REGIONS_FILE: &str = "tamper_regions.jsonl";

/// Smooth random gradients with low-frequency waves and mild sensor-like noise.
fn smooth_base(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let noise = Normal::new(0.0, 3.0).expect("valid sigma");
    let s = size as f64;
    let mut channel_params = Vec::with_capacity(3);
    for _ in 0..3 {
        let base: f64 = rng.random_range(60.0..196.0);
        let gx: f64 = rng.random_range(-50.0..50.0);
        let gy: f64 = rng.random_range(-50.0..50.0);
        let amp: f64 = rng.random_range(5.0..25.0);
        let fx: f64 = rng.random_range(0.5..3.0);
        let fy: f64 = rng.random_range(0.5..3.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        channel_params.push((base, gx, gy, amp, fx, fy, phase));
    }
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 / s;
            let v = y as f64 / s;
            for &(base, gx, gy, amp, fx, fy, phase) in &channel_params {
                let wave = amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
                let value = base + gx * (u - 0.5) + gy * (v - 0.5) + wave + noise.sample(rng);
                data.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageTensor::new(size, size, 3, data).expect("consistent dimensions")
}

fn splice(rng: &mut ChaCha8Rng, host: &mut ImageTensor, donor: &ImageTensor) -> Region {
    let size = host.width();
    let lo = (size / 4).max(2);
    let hi = (size / 2).max(lo + 1);
    let width = rng.random_range(lo..hi);
    let height = rng.random_range(lo..hi);
    let x = rng.random_range(0..=size - width);
    let y = rng.random_range(0..=size - height);
    let sx = rng.random_range(0..=size - width);
    let sy = rng.random_range(0..=size - height);
    for dy in 0..height {
        for dx in 0..width {
            let src = donor.pixel(sx + dx, sy + dy).to_vec();
            host.pixel_mut(x + dx, y + dy).copy_from_slice(&src);
        }
    }
    Region { x, y, width, height }
}

/// Writes a deterministic CASIA-style dataset under `out`: `Au/` holds
/// single-compressed smooth images, `Tp/` holds the same kind of image with a
/// rectangle spliced in from a differently compressed donor. Images are
/// stored as PNG so no further compression is introduced on disk.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out: &Path) -> Result<SyntheticDataset> {
    if cfg.n_authentic == 0 || cfg.n_tampered == 0 {
        return Err(DatasetError::InvalidRequest(
            "both class counts must be at least 1".into(),
        ));
    }
    if cfg.size < 16 || cfg.size > u16::MAX as usize {
        return Err(DatasetError::InvalidRequest(format!(
            "size must be in 16..=65535, got {}",
            cfg.size
        )));
    }
    let (dq_lo, dq_hi) = cfg.donor_quality;
    if !(1..=100).contains(&cfg.host_quality) || dq_lo == 0 || dq_lo > dq_hi || dq_hi > 100 {
        return Err(DatasetError::InvalidRequest("qualities must lie in 1..=100".into()));
    }
    let layout = Layout::default();
    let au_dir = out.join(&layout.authentic_dir);
    let tp_dir = out.join(&layout.tampered_dir);
    for d in [&au_dir, &tp_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let sub = ChromaSubsampling::Yuv420;
    let mut records = Vec::with_capacity(cfg.n_authentic + cfg.n_tampered);
    let mut regions = Vec::with_capacity(cfg.n_tampered);

    for i in 0..cfg.n_authentic {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2 * i as u64));
        let base = smooth_base(&mut rng, cfg.size);
        let img = codec::jpeg_roundtrip(&base, cfg.host_quality, sub)?;
        let name = format!("Au_{i:05}.png");
        let path = au_dir.join(&name);
        atomic_write(&path, &img.to_png()?).map_err(io_err(&path))?;
        records.push(SampleRecord {
            id: format!("{}/{name}", layout.authentic_dir),
            label: Label::Authentic,
            split: Split::Unassigned,
        });
    }

    for i in 0..cfg.n_tampered {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2 * i as u64 + 1));
        let base = smooth_base(&mut rng, cfg.size);
        let mut host = codec::jpeg_roundtrip(&base, cfg.host_quality, sub)?;
        let donor_base = smooth_base(&mut rng, cfg.size);
        let donor_q = rng.random_range(dq_lo..=dq_hi);
        let donor = codec::jpeg_roundtrip(&donor_base, donor_q, sub)?;
        let region = splice(&mut rng, &mut host, &donor);
        let name = format!("Tp_{i:05}.png");
        let path = tp_dir.join(&name);
        atomic_write(&path, &host.to_png()?).map_err(io_err(&path))?;
        let id = format!("{}/{name}", layout.tampered_dir);
        regions.push(TamperRegion { id: id.clone(), region });
        records.push(SampleRecord {
            id,
            label: Label::Tampered,
            split: Split::Unassigned,
        });
    }

    let mut region_lines = Vec::new();
    for r in &regions {
        serde_json::to_writer(&mut region_lines, r).expect("region serialization");
        region_lines.push(b'\n');
    }
    let region_path = out.join(TAMPER_REGIONS_FILE);
    atomic_write(&region_path, &region_lines).map_err(io_err(&region_path))?;

    Ok(SyntheticDataset {
        manifest: Manifest::new(records)?,
        regions,
    })
}
