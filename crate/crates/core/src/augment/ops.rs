//! Pure raster transforms. Vacated or out-of-bounds regions are black.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raster::{quantize, Raster, Rgb};

const BLACK: Rgb = [0, 0, 0];
const WHITE: Rgb = [255, 255, 255];

/// Bilinear sample at a fractional position; neighbours outside the image
/// contribute black.
fn sample(img: &Raster, x: f64, y: f64) -> [f64; 3] {
    // Snap near-integer coordinates so right-angle rotations copy exactly.
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (x, y) = (snap(x), snap(y));
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (x - x0, y - y0);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut acc = [0.0; 3];
    for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let c = img.get(px as usize, py as usize);
            for ch in 0..3 {
                acc[ch] += weight * c[ch] as f64;
            }
        }
    }
    acc
}

/// Scale about the image centre, then rotate by `angle_deg`. Positive
/// angles turn content counter-clockwise on screen: at 90° the input pixel
/// `(x, y)` lands on `(y, W − 1 − x)` of a square image.
pub fn scale_rotate(img: &Raster, scale: f64, angle_deg: f64) -> Raster {
    let (w, h) = (img.width(), img.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = img.clone();
    for oy in 0..h {
        for ox in 0..w {
            let (dx, dy) = (ox as f64 - cx, oy as f64 - cy);
            let sx = cx + (cos * dx - sin * dy) / scale;
            let sy = cy + (sin * dx + cos * dy) / scale;
            let v = sample(img, sx, sy);
            out.set(ox, oy, [quantize(v[0]), quantize(v[1]), quantize(v[2])]);
        }
    }
    out
}

pub fn rotate(img: &Raster, angle_deg: f64) -> Raster {
    if angle_deg == 0.0 {
        return img.clone();
    }
    scale_rotate(img, 1.0, angle_deg)
}

/// Shift content by whole pixels.
pub fn translate(img: &Raster, dx: i64, dy: i64) -> Raster {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = Raster::filled(img.width(), img.height(), BLACK);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx, y - dy);
            if sx >= 0 && sy >= 0 && sx < w && sy < h {
                out.set(x as usize, y as usize, img.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

pub fn hflip(img: &Raster) -> Raster {
    let w = img.width();
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..w {
            out.set(x, y, img.get(w - 1 - x, y));
        }
    }
    out
}

/// Adds `N(0, std²)` to every channel in normalized `[0, 1]` units, clamps
/// and requantizes.
pub fn add_gaussian_noise(img: &Raster, std: f64, seed: u64) -> Raster {
    if std == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("noise std must be finite and non-negative");
    let mut out = img.clone();
    for px in out.pixels_mut() {
        for v in px.iter_mut() {
            let t = (*v as f64 / 255.0 + normal.sample(&mut rng)).clamp(0.0, 1.0);
            *v = quantize(t * 255.0);
        }
    }
    out
}

/// Replaces each pixel by white with probability `density/2` and by black
/// with probability `density/2`.
pub fn add_salt_pepper(img: &Raster, density: f64, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for px in out.pixels_mut() {
        let u: f64 = rng.gen();
        if u < density / 2.0 {
            *px = WHITE;
        } else if u < density {
            *px = BLACK;
        }
    }
    out
}
