use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::Result;

/// Interleaved (HWC) image with intensities in 0..=255 and a per-pixel
/// validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub mask: Vec<u8>,
}

impl MaskedImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f32>,
        mask: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        let expected = width * height * channels;
        if pixels.len() != expected || mask.len() != width * height || channels == 0 {
            return Err(DatasetError::ImageShape {
                width,
                height,
                channels,
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            mask,
        })
    }

    /// RGBA bytes with the mask as alpha; 8-bit images with an all-opaque
    /// or binary alpha channel round-trip exactly.
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Self, DatasetError> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        let mut mask = Vec::with_capacity(width * height);
        for px in rgba.chunks_exact(4) {
            pixels.extend(px[..3].iter().map(|&v| v as f32));
            mask.push(u8::from(px[3] > 0));
        }
        Self::new(width, height, 3, pixels, mask)
    }

    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for (i, &m) in self.mask.iter().enumerate() {
            let px = &self.pixels[i * self.channels..(i + 1) * self.channels];
            for c in 0..3 {
                let v = px[c.min(self.channels - 1)];
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
            out.push(if m != 0 { 255 } else { 0 });
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        crate::geo::io::write_rgba_png(path, self.width as u32, self.height as u32, &self.to_rgba())
    }

    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}

/// Loads a section PNG; alpha > 0 marks pixels inside the section.
pub fn load_masked_png(path: &Path) -> Result<MaskedImage> {
    let decode = |message: String| DatasetError::Decode {
        path: path.display().to_string(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| crate::Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| crate::Error::io(path, e))?
        .decode()
        .map_err(|e| decode(e.to_string()))?
        .to_rgba8();
    let (w, h) = img.dimensions();
    Ok(MaskedImage::from_rgba(w as usize, h as usize, img.as_raw())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Smooths thin structures, so augmented inputs differ systematically
    /// from unaugmented ones.
    Bilinear,
    #[default]
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub rotation_max_deg: f64,
    pub horizontal_flip_prob: f64,
    pub vertical_flip_prob: f64,
    pub zoom_range: (f64, f64),
    pub shift_max_fraction: f64,
    pub brightness_range: (f64, f64),
    pub interpolation: Interpolation,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            horizontal_flip_prob: 0.5,
            vertical_flip_prob: 0.0,
            zoom_range: (0.9, 1.1),
            shift_max_fraction: 0.1,
            brightness_range: (0.8, 1.2),
            interpolation: Interpolation::Nearest,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Every transform pinned at identity.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            horizontal_flip_prob: 0.0,
            vertical_flip_prob: 0.0,
            zoom_range: (1.0, 1.0),
            shift_max_fraction: 0.0,
            brightness_range: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(format!("augmentation: {m}")));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let around_one = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= 1.0 && hi >= 1.0 && hi.is_finite();
        if !(self.rotation_max_deg >= 0.0 && self.rotation_max_deg <= 180.0) {
            return bad("rotation_max_deg must lie in [0, 180]");
        }
        if !prob(self.horizontal_flip_prob) || !prob(self.vertical_flip_prob) {
            return bad("flip probabilities must lie in [0, 1]");
        }
        if !around_one(self.zoom_range) {
            return bad("zoom_range must be positive and contain 1");
        }
        if !around_one(self.brightness_range) {
            return bad("brightness_range must be positive and contain 1");
        }
        if !(0.0..1.0).contains(&self.shift_max_fraction) {
            return bad("shift_max_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub zoom: f64,
    /// Shift as a fraction of width / height.
    pub shift: (f64, f64),
    pub brightness: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        flip_horizontal: false,
        flip_vertical: false,
        zoom: 1.0,
        shift: (0.0, 0.0),
        brightness: 1.0,
    };

    /// Always consumes exactly seven uniform draws, in transform order.
    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentationConfig, rng: &mut R) -> Self {
        let mut u = || rng.random::<f64>();
        let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
        let rotation_deg = cfg.rotation_max_deg * (2.0 * u() - 1.0);
        let flip_horizontal = u() < cfg.horizontal_flip_prob;
        let flip_vertical = u() < cfg.vertical_flip_prob;
        let zoom = lerp(cfg.zoom_range, u());
        let sx = cfg.shift_max_fraction * (2.0 * u() - 1.0);
        let sy = cfg.shift_max_fraction * (2.0 * u() - 1.0);
        let brightness = lerp(cfg.brightness_range, u());
        Self {
            rotation_deg,
            flip_horizontal,
            flip_vertical,
            zoom,
            shift: (sx, sy),
            brightness,
        }
    }
}

/// Draws parameters from `rng` and applies them.
pub fn augment<R: Rng + ?Sized>(img: &MaskedImage, cfg: &AugmentationConfig, rng: &mut R) -> MaskedImage {
    let p = AugmentParams::draw(cfg, rng);
    apply_augmentation(img, &p, cfg.interpolation)
}

/// Rotate, flip, zoom and shift as one inverse mapping about the image
/// center, then scale brightness. An output pixel is inside the mask only
/// if every source pixel it reads is in bounds and inside.
pub fn apply_augmentation(img: &MaskedImage, p: &AugmentParams, interp: Interpolation) -> MaskedImage {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let theta = p.rotation_deg.to_radians();
    let (sin, cos) = if p.rotation_deg == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let (shift_x, shift_y) = (p.shift.0 * w as f64, p.shift.1 * h as f64);
    let mut out = MaskedImage {
        width: w,
        height: h,
        channels: ch,
        pixels: vec![0.0; w * h * ch],
        mask: vec![0; w * h],
    };
    let inside = |c: i64, r: i64| {
        c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h && img.mask[r as usize * w + c as usize] != 0
    };
    let mut acc = vec![0.0f64; ch];
    for row in 0..h {
        for col in 0..w {
            let mut x = col as f64 + 0.5 - shift_x;
            let mut y = row as f64 + 0.5 - shift_y;
            x = cx + (x - cx) / p.zoom;
            y = cy + (y - cy) / p.zoom;
            if p.flip_horizontal {
                x = w as f64 - x;
            }
            if p.flip_vertical {
                y = h as f64 - y;
            }
            let (dx, dy) = (x - cx, y - cy);
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;

            acc.iter_mut().for_each(|a| *a = 0.0);
            let ok = match interp {
                Interpolation::Nearest => {
                    let (c, r) = (sx.floor() as i64, sy.floor() as i64);
                    let ok = inside(c, r);
                    if ok {
                        let base = (r as usize * w + c as usize) * ch;
                        for (k, a) in acc.iter_mut().enumerate() {
                            *a = img.pixels[base + k] as f64;
                        }
                    }
                    ok
                }
                Interpolation::Bilinear => {
                    let (u, v) = (sx - 0.5, sy - 0.5);
                    let (c0, r0) = (u.floor(), v.floor());
                    let (fx, fy) = (u - c0, v - r0);
                    let (c0, r0) = (c0 as i64, r0 as i64);
                    let taps = [
                        (c0, r0, (1.0 - fx) * (1.0 - fy)),
                        (c0 + 1, r0, fx * (1.0 - fy)),
                        (c0, r0 + 1, (1.0 - fx) * fy),
                        (c0 + 1, r0 + 1, fx * fy),
                    ];
                    let mut ok = true;
                    for &(c, r, wt) in &taps {
                        if wt == 0.0 {
                            continue;
                        }
                        if !inside(c, r) {
                            ok = false;
                            break;
                        }
                        let base = (r as usize * w + c as usize) * ch;
                        for (k, a) in acc.iter_mut().enumerate() {
                            *a += wt * img.pixels[base + k] as f64;
                        }
                    }
                    ok
                }
            };
            if ok {
                let i = row * w + col;
                out.mask[i] = 1;
                for (k, a) in acc.iter().enumerate() {
                    let v = if p.brightness == 1.0 { *a } else { (a * p.brightness).clamp(0.0, 255.0) };
                    out.pixels[i * ch + k] = v as f32;
                }
            }
        }
    }
    out
}

/// Source pixels and overlap weights for each output index when `n_in`
/// pixels are box-resampled to `n_out`.
fn box_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let step = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
            let first = lo.floor() as usize;
            let last = ((hi.ceil() as usize).min(n_in)).max(first + 1);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / step))
                })
                .collect()
        })
        .collect()
}

/// Letterboxes into `target = (height, width)` preserving aspect ratio,
/// box-filtering intensities with masked pixels read as zero, and scales
/// to [0, 1]. Output is planar (CHW) `f32`.
pub fn normalize(img: &MaskedImage, target: (usize, usize)) -> Result<Vec<f32>, DatasetError> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(DatasetError::InvalidConfig("normalize target must be nonzero".into()));
    }
    if img.inside_count() == 0 {
        return Err(DatasetError::FullyMasked(format!("{}x{} image", img.width, img.height)));
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let scale = (tw as f64 / w as f64).min(th as f64 / h as f64);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, tw);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, th);
    let (ox, oy) = ((tw - nw) / 2, (th - nh) / 2);
    let wx = box_weights(w, nw);
    let wy = box_weights(h, nh);
    let mut out = vec![0.0f32; ch * th * tw];
    let mut acc = vec![0.0f64; ch];
    for (r, rows) in wy.iter().enumerate() {
        for (c, cols) in wx.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(sr, wr) in rows {
                for &(sc, wc) in cols {
                    let i = sr * w + sc;
                    if img.mask[i] == 0 {
                        continue;
                    }
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += wr * wc * img.pixels[i * ch + k] as f64;
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                out[k * th * tw + (r + oy) * tw + (c + ox)] = (a / 255.0).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(out)
}
