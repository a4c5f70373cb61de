//! Deterministic image augmentation keyed by (sample id, epoch).

use crate::data::ImageSample;
use crate::error::{CoreError, Result};
use crate::rng::{fnv1a, split64, Pcg32};
use crate::tensor::Tensor;

/// Augmentation parameter ranges. Each `(lo, hi)` pair is sampled uniformly;
/// a zero-width range pins the parameter.
#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub rotation_deg: (f64, f64),
    pub zoom: (f64, f64),
    pub shear_deg: (f64, f64),
    pub flip_h_prob: f64,
    pub brightness: (f64, f64),
    pub crop_fraction: (f64, f64),
}

impl AugmentSpec {
    /// The spec that maps every image to itself.
    pub fn identity() -> Self {
        AugmentSpec {
            rotation_deg: (0.0, 0.0),
            zoom: (1.0, 1.0),
            shear_deg: (0.0, 0.0),
            flip_h_prob: 0.0,
            brightness: (0.0, 0.0),
            crop_fraction: (1.0, 1.0),
        }
    }

    /// Mild geometric + photometric jitter.
    pub fn default_train() -> Self {
        AugmentSpec {
            rotation_deg: (-15.0, 15.0),
            zoom: (0.9, 1.1),
            shear_deg: (-8.0, 8.0),
            flip_h_prob: 0.5,
            brightness: (-0.1, 0.1),
            crop_fraction: (0.85, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_deg", self.rotation_deg),
            ("zoom", self.zoom),
            ("shear_deg", self.shear_deg),
            ("brightness", self.brightness),
            ("crop_fraction", self.crop_fraction),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(CoreError::Config(format!("augment {name}: bad range ({lo}, {hi})")));
            }
        }
        if self.zoom.0 <= 0.0 {
            return Err(CoreError::Config("augment zoom must be positive".into()));
        }
        if self.crop_fraction.0 <= 0.0 || self.crop_fraction.1 > 1.0 {
            return Err(CoreError::Config("augment crop_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_h_prob) {
            return Err(CoreError::Config("augment flip_h_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mirror a [3,H,W] image along the horizontal axis. Applying it twice is
/// the identity, bit for bit.
pub fn flip_horizontal(sample: &ImageSample) -> ImageSample {
    let shape = sample.pixels.shape().to_vec();
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    let src = sample.pixels.data();
    let mut out = vec![0.0f32; src.len()];
    for c in 0..ch {
        for y in 0..h {
            let row = (c * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + (w - 1 - x)];
            }
        }
    }
    ImageSample { pixels: Tensor::from_vec(&shape, out), ..sample.clone() }
}

/// Apply the spec with all randomness derived from `(sample.id, epoch)`,
/// so the result is independent of call order or worker scheduling.
pub fn augment(sample: &ImageSample, spec: &AugmentSpec, epoch: u64) -> Result<ImageSample> {
    spec.validate()?;
    let key = split64(fnv1a(sample.id.as_bytes()) ^ split64(epoch));
    let mut rng = Pcg32::new(key, 0xA06);

    let rotation = rng.uniform(spec.rotation_deg.0, spec.rotation_deg.1).to_radians();
    let zoom = rng.uniform(spec.zoom.0, spec.zoom.1);
    let shear = rng.uniform(spec.shear_deg.0, spec.shear_deg.1).to_radians();
    let flip = rng.bernoulli(spec.flip_h_prob);
    let brightness = rng.uniform(spec.brightness.0, spec.brightness.1);
    let crop = rng.uniform(spec.crop_fraction.0, spec.crop_fraction.1);

    let shape = sample.pixels.shape().to_vec();
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    let src = sample.pixels.data();

    // Crop window, uniformly placed; width-1 windows pin the offset to 0.
    let crop_h = ((h as f64 * crop).round() as usize).clamp(1, h);
    let crop_w = ((w as f64 * crop).round() as usize).clamp(1, w);
    let off_y = if crop_h < h { rng.below(h - crop_h + 1) } else { 0 };
    let off_x = if crop_w < w { rng.below(w - crop_w + 1) } else { 0 };

    // Inverse affine map: output pixel -> source coordinate. Rotation, shear
    // and zoom act about the crop window center.
    let (sin, cos) = rotation.sin_cos();
    let tan_shear = shear.tan();
    let cy = off_y as f64 + (crop_h as f64 - 1.0) / 2.0;
    let cx = off_x as f64 + (crop_w as f64 - 1.0) / 2.0;
    let scale_y = crop_h as f64 / h as f64;
    let scale_x = crop_w as f64 / w as f64;

    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let xo = if flip { (w - 1 - x) as f64 } else { x as f64 };
            // Into crop-window coordinates, centered.
            let uy = (y as f64 - (h as f64 - 1.0) / 2.0) * scale_y;
            let ux = (xo - (w as f64 - 1.0) / 2.0) * scale_x;
            // Inverse zoom, then inverse shear (x sheared by y), then inverse rotation.
            let (uy, ux) = (uy / zoom, ux / zoom);
            let ux = ux - tan_shear * uy;
            let sy = cy + (cos * uy + sin * ux);
            let sx = cx + (-sin * uy + cos * ux);
            for c in 0..ch {
                out[(c * h + y) * w + x] = sample_bilinear(src, c, h, w, sy, sx);
            }
        }
    }

    let bright = brightness as f32;
    for v in &mut out {
        *v = (*v + bright).clamp(0.0, 1.0);
    }

    Ok(ImageSample { pixels: Tensor::from_vec(&shape, out), ..sample.clone() })
}

fn sample_bilinear(src: &[f32], c: usize, h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let wy = (sy - y0 as f64) as f32;
    let wx = (sx - x0 as f64) as f32;
    let plane = &src[c * h * w..][..h * w];
    let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
    let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
    top * (1.0 - wy) + bot * wy
}
