//! 8-bit RGB rasters and binary PPM/PGM I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(
                "raster",
                format!("{width}x{height} raster with {} pixels", pixels.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Bilinear resample to `w × h` (pixel-centre aligned, edge clamped).
    pub fn resize(&self, w: usize, h: usize) -> Raster {
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        let mut out = Vec::with_capacity(w * h);
        for oy in 0..h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for ox in 0..w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let mut px = [0u8; 3];
                for (ch, slot) in px.iter_mut().enumerate() {
                    let top = self.get(x0, y0)[ch] as f64 * (1.0 - tx) + self.get(x1, y0)[ch] as f64 * tx;
                    let bot = self.get(x0, y1)[ch] as f64 * (1.0 - tx) + self.get(x1, y1)[ch] as f64 * tx;
                    *slot = quantize(top * (1.0 - ty) + bot * ty);
                }
                out.push(px);
            }
        }
        Raster {
            width: w,
            height: h,
            pixels: out,
        }
    }

    /// `1×3×H×W` tensor with values divided by 255.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.iter().enumerate() {
            for ch in 0..3 {
                data[ch * plane + i] = px[ch] as f64 / 255.0;
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], data).expect("raster tensor shape")
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }

    /// Decode binary PPM (`P6`) or PGM (`P5`, promoted to RGB) with
    /// maxval ≤ 255.
    pub fn from_pnm(bytes: &[u8]) -> std::result::Result<Raster, String> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or("missing magic number")?;
        let channels = match magic.as_slice() {
            b"P6" => 3,
            b"P5" => 1,
            other => return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(other))),
        };
        let mut header = [0usize; 3];
        for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"))?;
            *slot = std::str::from_utf8(&tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("bad {what}"))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err("zero image dimension".into());
        }
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width * height * channels;
        let data = bytes
            .get(pos..pos + need)
            .ok_or_else(|| format!("truncated raster: need {need} bytes"))?;
        let scale = |v: u8| -> u8 {
            if maxval == 255 {
                v
            } else {
                ((v.min(maxval as u8) as usize * 255 + maxval / 2) / maxval) as u8
            }
        };
        let pixels = if channels == 3 {
            data.chunks(3).map(|c| [scale(c[0]), scale(c[1]), scale(c[2])]).collect()
        } else {
            data.iter().map(|&v| [scale(v); 3]).collect()
        };
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn read(path: &Path) -> Result<Raster> {
        let bytes = std::fs::read(path)?;
        Raster::from_pnm(&bytes).map_err(|detail| Error::Image {
            path: path.to_path_buf(),
            detail,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| bytes[start..*pos].to_vec())
}
