//! CAM explainability over a frozen encoder and episode prototypes.

mod overlay;

pub use overlay::{overlay_filename, render_overlay, OverlayIndexEntry};

use crate::data::{preprocess, Episode, ImageSample};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::models::{compute_prototypes, FewShotModel};
use crate::ops::Mode;
use crate::rng::Pcg32;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamMethod {
    GradCam,
    GradCamPp,
    EigenCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 3] = [CamMethod::GradCam, CamMethod::GradCamPp, CamMethod::EigenCam];

    pub fn as_str(self) -> &'static str {
        match self {
            CamMethod::GradCam => "grad_cam",
            CamMethod::GradCamPp => "grad_cam_pp",
            CamMethod::EigenCam => "eigen_cam",
        }
    }

    pub fn parse(s: &str) -> Result<CamMethod> {
        match s {
            "grad_cam" => Ok(CamMethod::GradCam),
            "grad_cam_pp" => Ok(CamMethod::GradCamPp),
            "eigen_cam" => Ok(CamMethod::EigenCam),
            other => Err(CoreError::Config(format!(
                "unknown CAM method '{other}' (expected grad_cam, grad_cam_pp, eigen_cam, or all)"
            ))),
        }
    }
}

/// Frozen support context: per-class prototype embeddings.
#[derive(Debug, Clone)]
pub struct PrototypeSet<S> {
    pub prototypes: Tensor<S>,
    pub class_map: Vec<String>,
}

/// Build prototypes from an episode's support set with the encoder frozen.
pub fn prototypes_from_episode<S: Scalar>(
    model: &FewShotModel<S>,
    episode: &Episode,
) -> Result<PrototypeSet<S>> {
    let batch = episode.to_batch::<S>();
    let g = Graph::inference();
    let x = g.leaf(batch.support.clone(), false);
    let out = model.encoder.forward(&g, x, Mode::Eval)?;
    let protos = compute_prototypes(&g, out.embedding, batch.n_way, batch.k_shot)?;
    Ok(PrototypeSet { prototypes: g.value(protos), class_map: batch.class_map })
}

/// One explanation request.
pub struct CamRequest<'a, S: Scalar> {
    pub method: CamMethod,
    pub query: &'a ImageSample,
    pub target_class: usize,
    pub protos: &'a PrototypeSet<S>,
}

/// A per-query, per-class activation map.
#[derive(Debug, Clone)]
pub struct Heatmap<S: Scalar> {
    /// Non-negative map at feature-map resolution.
    pub raw: Tensor<S>,
    /// Bilinearly upsampled to the input size and scaled into [0,1];
    /// identically zero when the raw map is degenerate.
    pub normalized: Tensor<S>,
    pub method: CamMethod,
    pub class_index: usize,
    /// Channel weights for the gradient-weighted methods.
    pub alphas: Option<Vec<S>>,
    /// True when the raw map was identically zero.
    pub degenerate: bool,
}

/// Class score for CAM: the prototype logit g_d = -||f(query) - p_d||^2,
/// differentiable w.r.t. the encoder's final feature map. Returns the score
/// node and the feature-map node.
pub fn cam_class_score<S: Scalar>(
    g: &Graph<S>,
    model: &FewShotModel<S>,
    query: &ImageSample,
    protos: &PrototypeSet<S>,
    target_class: usize,
) -> Result<(Var, Var)> {
    let n_classes = protos.prototypes.shape()[0];
    if target_class >= n_classes {
        return Err(CoreError::Config(format!(
            "target class {target_class} out of range for {n_classes} prototypes"
        )));
    }
    let size = model.config.image_size;
    let pixels = preprocess::<S>(query, size);
    let x = g.leaf(pixels.reshaped(&[1, 3, size, size])?, false);
    let out = model.encoder.forward(g, x, Mode::Eval)?;
    let Some(feature_map) = out.feature_map else {
        return Err(CoreError::State(
            "this encoder does not expose a feature map; CAM requires the residual encoder".into(),
        ));
    };
    let protos_var = g.constant(protos.prototypes.clone());
    let dists = g.pairwise_sq_dist(out.embedding, protos_var)?;
    let logits = g.neg(dists)?;
    let mut pick = vec![S::ZERO; n_classes];
    pick[target_class] = S::ONE;
    let selector = g.constant(Tensor::from_vec(&[1, n_classes], pick));
    let selected = g.matmul_nt(logits, selector)?;
    let score = g.reshape(selected, &[1])?;
    Ok((score, feature_map))
}

/// The class score rebuilt from a feature-map tensor supplied as a leaf:
/// global average pooling, the encoder's projection, then the negative
/// squared distance to prototype d. Matches the post-feature-map slice of
/// [`cam_class_score`], so central differences of this function verify the
/// gradient that Grad-CAM consumes.
pub fn cam_score_from_feature_map<S: Scalar>(
    g: &Graph<S>,
    model: &FewShotModel<S>,
    feature_map: Var,
    protos: &PrototypeSet<S>,
    target_class: usize,
) -> Result<Var> {
    let crate::models::EncoderArch::Residual(encoder) = &model.encoder else {
        return Err(CoreError::State("feature-map scoring requires the residual encoder".into()));
    };
    let pooled = g.global_avg_pool(feature_map)?;
    let embedding = encoder.project(g, pooled)?;
    let protos_var = g.constant(protos.prototypes.clone());
    let dists = g.pairwise_sq_dist(embedding, protos_var)?;
    let logits = g.neg(dists)?;
    let n_classes = protos.prototypes.shape()[0];
    let mut pick = vec![S::ZERO; n_classes];
    pick[target_class] = S::ONE;
    let selector = g.constant(Tensor::from_vec(&[1, n_classes], pick));
    let selected = g.matmul_nt(logits, selector)?;
    g.reshape(selected, &[1])
}

/// Prototype logits for a single query against frozen prototypes; the CAM
/// score for class d equals entry d of this row.
pub fn query_logits<S: Scalar>(
    model: &FewShotModel<S>,
    query: &ImageSample,
    protos: &PrototypeSet<S>,
) -> Result<Tensor<S>> {
    let g = Graph::inference();
    let size = model.config.image_size;
    let pixels = preprocess::<S>(query, size);
    let x = g.leaf(pixels.reshaped(&[1, 3, size, size])?, false);
    let out = model.encoder.forward(&g, x, Mode::Eval)?;
    let protos_var = g.constant(protos.prototypes.clone());
    let dists = g.pairwise_sq_dist(out.embedding, protos_var)?;
    Ok(g.value(g.neg(dists)?))
}

pub fn compute_cam<S: Scalar>(model: &FewShotModel<S>, request: &CamRequest<'_, S>) -> Result<Heatmap<S>> {
    match request.method {
        CamMethod::GradCam => gradient_cam(model, request, false),
        CamMethod::GradCamPp => gradient_cam(model, request, true),
        CamMethod::EigenCam => eigen_cam(model, request),
    }
}

/// Shared Grad-CAM / Grad-CAM++ pipeline: channel weights from the score
/// gradient, ReLU of the weighted channel sum, upsample, normalize.
fn gradient_cam<S: Scalar>(
    model: &FewShotModel<S>,
    request: &CamRequest<'_, S>,
    plus_plus: bool,
) -> Result<Heatmap<S>> {
    let g = Graph::new();
    let (score, fm) = cam_class_score(&g, model, request.query, request.protos, request.target_class)?;
    g.backward(score)?;
    let grads = g
        .grad(fm)
        .ok_or_else(|| CoreError::State("no gradient reached the feature map".into()))?;
    let activations = g.value(fm);
    let (raw, alphas) = weighted_cam_map(&grads, &activations, plus_plus)?;
    finish_heatmap(
        raw,
        model.config.image_size,
        request.method,
        request.target_class,
        Some(alphas),
    )
}

/// The gradient-weighted map: per-channel weights alpha from the score
/// gradient (spatial mean for Grad-CAM; the second/third-derivative-ratio
/// closed form for Grad-CAM++), then ReLU(sum_r alpha_r B_r). Inputs are
/// [1,C,H,W]; the raw output is [H,W] and non-negative.
pub fn weighted_cam_map<S: Scalar>(
    grads: &Tensor<S>,
    activations: &Tensor<S>,
    plus_plus: bool,
) -> Result<(Tensor<S>, Vec<S>)> {
    let (_b, ch, h, w) = activations.dims4("weighted_cam_map")?;
    if grads.shape() != activations.shape() {
        return Err(CoreError::Shape {
            op: "weighted_cam_map",
            msg: format!("gradients {:?} vs activations {:?}", grads.shape(), activations.shape()),
        });
    }
    let plane = h * w;

    let alphas: Vec<S> = if plus_plus {
        // w_ij = g^2 / (2 g^2 + sum(B) g^3), alpha = sum_ij w_ij relu(g_ij).
        let stabilizer = S::from_f64(1e-6);
        let two = S::from_f64(2.0);
        (0..ch)
            .map(|c| {
                let gr = &grads.data()[c * plane..][..plane];
                let act = &activations.data()[c * plane..][..plane];
                let mut act_sum = S::ZERO;
                for &a in act {
                    act_sum += a;
                }
                let mut alpha = S::ZERO;
                for &gi in gr {
                    if gi == S::ZERO {
                        continue;
                    }
                    let g2 = gi * gi;
                    let g3 = g2 * gi;
                    let weight = g2 / (two * g2 + act_sum * g3 + stabilizer);
                    alpha += weight * gi.maximum(S::ZERO);
                }
                alpha
            })
            .collect()
    } else {
        // Spatial mean of the gradient per channel.
        let inv = S::from_f64(1.0 / plane as f64);
        (0..ch)
            .map(|c| {
                let mut acc = S::ZERO;
                for &gi in &grads.data()[c * plane..][..plane] {
                    acc += gi;
                }
                acc * inv
            })
            .collect()
    };

    let mut raw = vec![S::ZERO; plane];
    for (c, &alpha) in alphas.iter().enumerate() {
        for (r, &a) in raw.iter_mut().zip(&activations.data()[c * plane..][..plane]) {
            *r += alpha * a;
        }
    }
    for v in &mut raw {
        *v = v.maximum(S::ZERO);
    }
    Ok((Tensor::from_vec(&[h, w], raw), alphas))
}

/// Eigen-CAM: project the activation matrix onto its first right singular
/// vector (computed by f64 power iteration on M^T M) and take magnitudes.
/// Uses activations only, so the target class does not influence the map.
fn eigen_cam<S: Scalar>(model: &FewShotModel<S>, request: &CamRequest<'_, S>) -> Result<Heatmap<S>> {
    let g = Graph::inference();
    let (_score, fm) = cam_class_score(&g, model, request.query, request.protos, request.target_class)?;
    let activations = g.value(fm);
    let shape = activations.shape();
    let (ch, h, w) = (shape[1], shape[2], shape[3]);
    let plane = h * w;

    let m: Vec<f64> = activations.data().iter().map(|v| v.to_f64()).collect();
    let v1 = first_right_singular_vector(&m, ch, plane);
    let raw: Vec<S> = v1.iter().map(|&v| S::from_f64(v.abs())).collect();

    finish_heatmap(
        Tensor::from_vec(&[h, w], raw),
        model.config.image_size,
        request.method,
        request.target_class,
        None,
    )
}

/// First right singular vector of an (rows x cols) matrix via power
/// iteration on M^T M, deterministic start vector, f64 throughout.
pub fn first_right_singular_vector(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let norm: f64 = m.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return vec![0.0; cols];
    }
    let mut rng = Pcg32::new(0x51D_CAFE, 17);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut mv = vec![0.0f64; rows];
    for _ in 0..500 {
        // mv = M v
        for (r, out) in mv.iter_mut().enumerate() {
            let row = &m[r * cols..(r + 1) * cols];
            *out = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        // next = M^T mv
        let mut next = vec![0.0f64; cols];
        for (r, &s) in mv.iter().enumerate() {
            for (n, &a) in next.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
                *n += s * a;
            }
        }
        normalize(&mut next);
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .min(next.iter().zip(&v).map(|(a, b)| (a + b) * (a + b)).sum::<f64>());
        v = next;
        if delta < 1e-26 {
            break;
        }
    }
    v
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn finish_heatmap<S: Scalar>(
    raw: Tensor<S>,
    image_size: usize,
    method: CamMethod,
    class_index: usize,
    alphas: Option<Vec<S>>,
) -> Result<Heatmap<S>> {
    let (h, w) = raw.dims2("heatmap")?;
    let mut max = S::ZERO;
    for &v in raw.data() {
        max = max.maximum(v);
    }
    let degenerate = max == S::ZERO;
    let upsampled = upsample_bilinear(&raw, h, w, image_size);
    let normalized = if degenerate {
        Tensor::zeros(&[image_size, image_size])
    } else {
        upsampled.map(|v| v / max)
    };
    Ok(Heatmap { raw, normalized, method, class_index, alphas, degenerate })
}

fn upsample_bilinear<S: Scalar>(map: &Tensor<S>, h: usize, w: usize, size: usize) -> Tensor<S> {
    let mut out = vec![S::ZERO; size * size];
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    for oy in 0..size {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..size {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let at = |y: usize, x: usize| map.data()[y * w + x].to_f64();
            let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
            let bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
            out[oy * size + ox] = S::from_f64(top * (1.0 - wy) + bot * wy);
        }
    }
    Tensor::from_vec(&[size, size], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_activations_recover_the_spatial_factor() {
        // M = u w^T: the first right singular vector is w (up to sign).
        let u = [1.0, -2.0, 0.5];
        let w = [0.2, -0.7, 0.4, 0.1];
        let mut m = vec![0.0; 12];
        for (r, &ur) in u.iter().enumerate() {
            for (c, &wc) in w.iter().enumerate() {
                m[r * 4 + c] = ur * wc;
            }
        }
        let v = first_right_singular_vector(&m, 3, 4);
        let wn: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        // |v| should equal |w| / ||w||.
        for (a, b) in v.iter().zip(&w) {
            assert!((a.abs() - (b / wn).abs()).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let v = first_right_singular_vector(&[0.0; 12], 3, 4);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn upsample_preserves_constant_maps() {
        let m: Tensor<f64> = Tensor::full(&[2, 2], 0.5);
        let up = upsample_bilinear(&m, 2, 2, 8);
        assert!(up.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }
}
