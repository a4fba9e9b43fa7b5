//! Browser bindings for the cenet demo page.
//!
//! The page exposes three operations: applying one augmentation to an
//! uploaded image, plotting SAFM parameter counts for standard versus
//! depthwise-separable branches, and showing the four pooled branch maps
//! SAFM mixes. The logic lives in plain functions so it runs natively in
//! tests; the `#[wasm_bindgen]` wrappers only convert errors.

use cenet::augment::{AugOp, AugmentConfig, Raster};
use cenet::ops::{self, PoolKind};
use cenet::safm::{safm_param_count, SafmMode};
use cenet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Drops alpha; fails if the buffer is not `4·width·height` bytes.
pub fn raster_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Raster, String> {
    if width == 0 || height == 0 || rgba.len() != 4 * width * height {
        return Err(format!("expected {}×{} RGBA ({} bytes), got {} bytes", width, height, 4 * width * height, rgba.len()));
    }
    let pixels = rgba.chunks_exact(4).map(|p| [p[0], p[1], p[2]]).collect();
    Raster::new(width, height, pixels).map_err(|e| e.to_string())
}

pub fn raster_to_rgba(img: &Raster) -> Vec<u8> {
    img.pixels().iter().flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// Build the op named `op`. `amount` is the angle for rotations, the shift
/// as a fraction of each side for translation, the std or density for the
/// noises and the scale for `scale_rotate`. `random` samples an op from the
/// default configuration.
pub fn make_op(op: &str, amount: f64, width: usize, height: usize, seed: u64) -> Result<AugOp, String> {
    Ok(match op {
        "rotate" => AugOp::Rotate { angle: amount },
        "translate" => AugOp::Translate {
            dx: (amount * width as f64).round() as i64,
            dy: (amount * height as f64).round() as i64,
        },
        "gaussian_noise" => AugOp::GaussianNoise { std: amount.max(0.0), seed },
        "salt_pepper" => AugOp::SaltPepper {
            density: amount.clamp(0.0, 0.999),
            seed,
        },
        "hflip" => AugOp::HFlip { flipped: true },
        "scale_rotate" => AugOp::ScaleRotate {
            scale: amount.max(0.05),
            angle: 0.0,
        },
        "random" => AugmentConfig::default().sample_op(width, height, &mut ChaCha8Rng::seed_from_u64(seed)),
        other => return Err(format!("unknown augmentation {other:?}")),
    })
}

pub fn augment_rgba(rgba: &[u8], width: usize, height: usize, op: &str, amount: f64, seed: u64) -> Result<(Vec<u8>, String), String> {
    let img = raster_from_rgba(rgba, width, height)?;
    let op = make_op(op, amount, width, height, seed)?;
    Ok((raster_to_rgba(&op.apply(&img)), format!("{} {}", op.name(), op.params())))
}

/// `[c, standard, separable]` triplets for `c = 4, 8, …, max_channels`.
pub fn param_curve(max_channels: usize) -> Vec<f64> {
    (4..=max_channels)
        .step_by(4)
        .flat_map(|c| {
            [
                c as f64,
                safm_param_count(c, SafmMode::Standard) as f64,
                safm_param_count(c, SafmMode::DepthwiseSeparable) as f64,
            ]
        })
        .collect()
}

/// Luma max-pooled by 1, 2, 4 and 8, brought back to full size with
/// nearest-neighbour upsampling and laid out left to right.
pub fn branch_maps(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, String> {
    let img = raster_from_rgba(rgba, width, height)?;
    let luma: Vec<f64> = img
        .pixels()
        .iter()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect();
    let x = Tensor::from_vec([1, 1, height, width], luma).map_err(|e| e.to_string())?;
    let mut tiles = Vec::with_capacity(4);
    for i in 0..4 {
        let k = 1usize << i;
        let pooled = if k == 1 {
            x.clone()
        } else if k > width && k > height {
            ops::pool(&x, PoolKind::GlobalMax, k, k).map_err(|e| e.to_string())?
        } else {
            ops::pool(&x, PoolKind::WindowMax, k, k).map_err(|e| e.to_string())?
        };
        tiles.push(ops::upsample_to(&pooled, height, width).map_err(|e| e.to_string())?);
    }
    let mut out = Vec::with_capacity(4 * 4 * width * height);
    for y in 0..height {
        for tile in &tiles {
            for xx in 0..width {
                let v = (tile.at(0, 0, y, xx) * 255.0).round().clamp(0.0, 255.0) as u8;
                out.extend_from_slice(&[v, v, v, 255]);
            }
        }
    }
    Ok(out)
}

/// Result of [`augment_image`]: RGBA pixels plus a description of the op.
#[wasm_bindgen]
pub struct Augmented {
    pixels: Vec<u8>,
    description: String,
}

#[wasm_bindgen]
impl Augmented {
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn description(&self) -> String {
        self.description.clone()
    }
}

#[wasm_bindgen]
pub fn augment_image(rgba: &[u8], width: usize, height: usize, op: &str, amount: f64, seed: u32) -> Result<Augmented, JsError> {
    let (pixels, description) = augment_rgba(rgba, width, height, op, amount, seed as u64).map_err(|e| JsError::new(&e))?;
    Ok(Augmented { pixels, description })
}

#[wasm_bindgen]
pub fn safm_param_curve(max_channels: usize) -> Vec<f64> {
    param_curve(max_channels)
}

#[wasm_bindgen]
pub fn safm_branch_maps(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    branch_maps(rgba, width, height).map_err(|e| JsError::new(&e))
}

/// Names accepted by [`augment_image`].
#[wasm_bindgen]
pub fn augmentation_names() -> Vec<String> {
    ["random", "rotate", "translate", "gaussian_noise", "salt_pepper", "hflip", "scale_rotate"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Resize helper for the page, which downsamples large uploads first.
pub fn resize_rgba(rgba: &[u8], width: usize, height: usize, to_w: usize, to_h: usize) -> Result<Vec<u8>, String> {
    Ok(raster_to_rgba(&raster_from_rgba(rgba, width, height)?.resize(to_w, to_h)))
}

#[wasm_bindgen]
pub fn resize_image(rgba: &[u8], width: usize, height: usize, to_w: usize, to_h: usize) -> Result<Vec<u8>, JsError> {
    resize_rgba(rgba, width, height, to_w, to_h).map_err(|e| JsError::new(&e))
}

