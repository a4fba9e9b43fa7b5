//! Data augmentation: rotation, translation, Gaussian and salt-and-pepper
//! noise, horizontal flips and scaled rotation, plus seeded dataset
//! expansion.

mod ops;
mod raster;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use ops::{add_gaussian_noise, add_salt_pepper, hflip, rotate, scale_rotate, translate};
pub use raster::{Raster, Rgb};

use crate::error::{Error, Result};

/// Prefix of files written by [`expand_dataset`]; such files are never used
/// as augmentation sources.
pub const AUG_PREFIX: &str = "aug_";

pub const MANIFEST_NAME: &str = "augment_manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Rotation range in degrees.
    pub rotation_deg: (f64, f64),
    /// Maximum shift as a fraction of each dimension.
    pub translate_frac: f64,
    /// Gaussian noise std in normalized `[0, 1]` units.
    pub gauss_std: f64,
    pub sp_density: f64,
    pub hflip_prob: f64,
    pub scale_range: (f64, f64),
    pub per_class_new: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: (-90.0, 90.0),
            translate_frac: 0.10,
            gauss_std: 0.02,
            sp_density: 0.02,
            hflip_prob: 0.5,
            scale_range: (0.8, 1.25),
            per_class_new: 100,
            seed: 0,
        }
    }
}

/// Grid resolution of sampled rotation angles, in degrees.
const ROTATION_STEP_DEG: f64 = 1.0;
/// Number of log-spaced intervals in the sampled scale grid.
const SCALE_STEPS: u32 = 100;

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augment: {m}")));
        if !(self.rotation_deg.0 <= self.rotation_deg.1) {
            return bad("rotation range is reversed");
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return bad("scale range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("hflip_prob must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.sp_density) {
            return bad("sp_density must be in [0, 1)");
        }
        if !(self.gauss_std >= 0.0) || !(self.translate_frac >= 0.0) {
            return bad("gauss_std and translate_frac must be non-negative");
        }
        Ok(())
    }

    /// Rotation angle on a 1° grid spanning the configured range; both
    /// endpoints are reachable.
    pub fn sample_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.rotation_deg;
        let steps = ((hi - lo) / ROTATION_STEP_DEG).round().max(1.0) as u32;
        let k = rng.gen_range(0..=steps);
        if k == steps {
            hi
        } else {
            lo + (hi - lo) * k as f64 / steps as f64
        }
    }

    /// Integer shift with `|d| ≤ floor(translate_frac · dim)`.
    pub fn sample_shift<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> i64 {
        let bound = (self.translate_frac * dim as f64 + 1e-9).floor() as i64;
        rng.gen_range(-bound..=bound)
    }

    /// Scale on a log-spaced grid over the configured range.
    pub fn sample_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.scale_range;
        let k = rng.gen_range(0..=SCALE_STEPS);
        match k {
            0 => lo,
            k if k == SCALE_STEPS => hi,
            k => lo * (hi / lo).powf(k as f64 / SCALE_STEPS as f64),
        }
    }

    pub fn sample_op<R: Rng + ?Sized>(&self, width: usize, height: usize, rng: &mut R) -> AugOp {
        match rng.gen_range(0..6) {
            0 => AugOp::Rotate {
                angle: self.sample_angle(rng),
            },
            1 => AugOp::Translate {
                dx: self.sample_shift(width, rng),
                dy: self.sample_shift(height, rng),
            },
            2 => AugOp::GaussianNoise {
                std: self.gauss_std,
                seed: rng.gen(),
            },
            3 => AugOp::SaltPepper {
                density: self.sp_density,
                seed: rng.gen(),
            },
            4 => AugOp::HFlip {
                flipped: rng.gen_bool(self.hflip_prob),
            },
            _ => AugOp::ScaleRotate {
                scale: self.sample_scale(rng),
                angle: self.sample_angle(rng),
            },
        }
    }
}

/// One sampled augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    Rotate { angle: f64 },
    Translate { dx: i64, dy: i64 },
    GaussianNoise { std: f64, seed: u64 },
    SaltPepper { density: f64, seed: u64 },
    HFlip { flipped: bool },
    ScaleRotate { scale: f64, angle: f64 },
}

impl AugOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugOp::Rotate { .. } => "rotate",
            AugOp::Translate { .. } => "translate",
            AugOp::GaussianNoise { .. } => "gaussian_noise",
            AugOp::SaltPepper { .. } => "salt_pepper",
            AugOp::HFlip { .. } => "hflip",
            AugOp::ScaleRotate { .. } => "scale_rotate",
        }
    }

    pub fn params(&self) -> String {
        match *self {
            AugOp::Rotate { angle } => format!("angle={angle}"),
            AugOp::Translate { dx, dy } => format!("dx={dx} dy={dy}"),
            AugOp::GaussianNoise { std, seed } => format!("std={std} seed={seed}"),
            AugOp::SaltPepper { density, seed } => format!("density={density} seed={seed}"),
            AugOp::HFlip { flipped } => format!("flipped={}", u8::from(flipped)),
            AugOp::ScaleRotate { scale, angle } => format!("scale={scale} angle={angle}"),
        }
    }

    pub fn apply(&self, img: &Raster) -> Raster {
        match *self {
            AugOp::Rotate { angle } => rotate(img, angle),
            AugOp::Translate { dx, dy } => translate(img, dx, dy),
            AugOp::GaussianNoise { std, seed } => add_gaussian_noise(img, std, seed),
            AugOp::SaltPepper { density, seed } => add_salt_pepper(img, density, seed),
            AugOp::HFlip { flipped } => {
                if flipped {
                    hflip(img)
                } else {
                    img.clone()
                }
            }
            AugOp::ScaleRotate { scale, angle } => scale_rotate(img, scale, angle),
        }
    }
}

/// Per-class generator stream derived from the config seed.
pub fn class_rng(seed: u64, class_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_index as u64);
    rng
}

/// Generate `count` augmented rasters from `sources` with `rng`. Each picks a
/// source uniformly and applies one sampled op.
pub fn augment_samples<R: Rng + ?Sized>(
    sources: &[Raster],
    count: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Vec<(usize, AugOp, Raster)> {
    if sources.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let src = rng.gen_range(0..sources.len());
            let img = &sources[src];
            let op = config.sample_op(img.width(), img.height(), rng);
            (src, op, op.apply(img))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Written file, relative to the output root.
    pub path: String,
    /// Source file, relative to the dataset root.
    pub source: String,
    pub op: &'static str,
    pub params: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<String>,
    pub warnings: Vec<String>,
}

impl Manifest {
    /// Tab-separated text: `#` header lines for skipped classes and
    /// warnings, then one `path  source  op  params` line per file.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in &self.skipped {
            let _ = writeln!(out, "# skipped\t{class}\tno readable images");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "# warning\t{w}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.path, e.source, e.op, e.params);
        }
        out
    }
}

/// Sorted subdirectories of a dataset root.
pub fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Sorted regular files of a class directory.
pub fn class_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Write `per_class_new` augmented images per class under
/// `out_root/<class>/aug_<seed>_<k>.ppm` plus a manifest at
/// `out_root/augment_manifest.tsv`. `out_root` may equal `root`.
pub fn expand_dataset(root: &Path, out_root: &Path, config: &AugmentConfig) -> Result<Manifest> {
    config.validate()?;
    let mut manifest = Manifest::default();
    std::fs::create_dir_all(out_root)?;
    for (ci, (class, dir)) in class_dirs(root)?.into_iter().enumerate() {
        let mut sources = Vec::new();
        let mut source_names = Vec::new();
        for path in class_files(&dir)? {
            let name = file_name(&path);
            if name.starts_with(AUG_PREFIX) {
                continue;
            }
            match Raster::read(&path) {
                Ok(r) => {
                    sources.push(r);
                    source_names.push(format!("{class}/{name}"));
                }
                Err(e) => manifest.warnings.push(format!("{class}/{name}\t{e}")),
            }
        }
        if sources.is_empty() {
            manifest.skipped.push(class);
            continue;
        }
        if config.per_class_new == 0 {
            continue;
        }
        let out_dir = out_root.join(&class);
        std::fs::create_dir_all(&out_dir)?;
        let mut rng = class_rng(config.seed, ci);
        for (k, (src, op, img)) in augment_samples(&sources, config.per_class_new, config, &mut rng)
            .into_iter()
            .enumerate()
        {
            let name = format!("{AUG_PREFIX}{}_{k}.ppm", config.seed);
            img.write(&out_dir.join(&name))?;
            manifest.entries.push(ManifestEntry {
                path: format!("{class}/{name}"),
                source: source_names[src].clone(),
                op: op.name(),
                params: op.params(),
            });
        }
    }
    std::fs::write(out_root.join(MANIFEST_NAME), manifest.to_text())?;
    Ok(manifest)
}

/// Parse the flat `key = value` augmentation config. Ranges are written as
/// `lo,hi`.
pub fn parse_config(text: &str) -> Result<AugmentConfig> {
    let mut cfg = AugmentConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Config(format!("line {}: {m}", lineno + 1));
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        let float = |s: &str| s.trim().parse::<f64>().map_err(|_| err(format!("{k}: bad number {s:?}")));
        let range = |s: &str| -> Result<(f64, f64)> {
            let (a, b) = s.split_once(',').ok_or_else(|| err(format!("{k}: expected lo,hi")))?;
            Ok((float(a)?, float(b)?))
        };
        match k {
            "rotation_deg" => cfg.rotation_deg = range(v)?,
            "translate_frac" => cfg.translate_frac = float(v)?,
            "gauss_std" => cfg.gauss_std = float(v)?,
            "sp_density" => cfg.sp_density = float(v)?,
            "hflip_prob" => cfg.hflip_prob = float(v)?,
            "scale_range" => cfg.scale_range = range(v)?,
            "per_class_new" => cfg.per_class_new = v.parse().map_err(|_| err(format!("bad count {v:?}")))?,
            "seed" => cfg.seed = v.parse().map_err(|_| err(format!("bad seed {v:?}")))?,
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
