//! Heatmap overlay rendering: a blue-to-red ramp alpha-blended onto the
//! query image and encoded as PNG.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

const ALPHA: f32 = 0.45;

/// index.json entry mapping a request to its output file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverlayIndexEntry {
    pub query_id: String,
    pub method: String,
    pub class_name: String,
    pub file: String,
}

/// `<query_id>__<method>__<class_name>.png`, with path separators in the id
/// flattened so the value is a bare file name.
pub fn overlay_filename(query_id: &str, method: &str, class_name: &str) -> String {
    let sanitize = |s: &str| s.replace(['/', '\\'], "-").replace("..", "_");
    format!("{}__{}__{}.png", sanitize(query_id), sanitize(method), sanitize(class_name))
}

fn ramp(t: f32) -> [f32; 3] {
    // Blue (cold) to red (hot), linear.
    [t, 0.0, 1.0 - t]
}

/// Blend the normalized heatmap over the query image at fixed alpha and
/// encode as PNG. Deterministic: identical inputs give identical bytes.
pub fn render_overlay<S: Scalar>(normalized: &Tensor<S>, query: &ImageSample) -> Result<Vec<u8>> {
    let (hm_h, hm_w) = normalized.dims2("render_overlay")?;
    let shape = query.pixels.shape();
    let (h, w) = (shape[1], shape[2]);
    if (hm_h, hm_w) != (h, w) {
        return Err(CoreError::Shape {
            op: "render_overlay",
            msg: format!("heatmap {hm_h}x{hm_w} vs image {h}x{w}"),
        });
    }
    let data = query.pixels.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let t = normalized.data()[y * w + x].to_f64() as f32;
            let heat = ramp(t.clamp(0.0, 1.0));
            let mut px = [0u8; 3];
            for c in 0..3 {
                let base = data[(c * h + y) * w + x];
                let v = (1.0 - ALPHA) * base + ALPHA * heat[c];
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| CoreError::Decode { path: "<overlay>".into(), msg: e.to_string() })?;
    Ok(bytes.into_inner())
}
