//! The five classification heads over a shared encoder.

use crate::data::{EpisodeBatch, TripletBatch};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::models::encoders::EncoderOutput;
use crate::models::layers::{BatchNorm2d, Conv2d, Linear};
use crate::models::EncoderArch;
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::rng::Pcg32;
use crate::tensor::{Scalar, Tensor};

/// Encode support and query in one batch (one batch-norm population) and
/// split the outputs.
pub struct EpisodeEncoding {
    pub support_embedding: Var,
    pub query_embedding: Var,
    pub support_feature_map: Option<Var>,
    pub query_feature_map: Option<Var>,
}

pub fn encode_episode<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    batch: &EpisodeBatch<S>,
    mode: Mode,
) -> Result<EpisodeEncoding> {
    let n_support = batch.support.shape()[0];
    let n_query = batch.query.shape()[0];
    let joint = Tensor::from_vec(
        &[
            n_support + n_query,
            batch.support.shape()[1],
            batch.support.shape()[2],
            batch.support.shape()[3],
        ],
        [batch.support.data(), batch.query.data()].concat(),
    );
    let x = g.leaf(joint, false);
    let EncoderOutput { embedding, feature_map } = encoder.forward(g, x, mode)?;
    let support_embedding = g.slice_rows(embedding, 0, n_support)?;
    let query_embedding = g.slice_rows(embedding, n_support, n_support + n_query)?;
    let (support_feature_map, query_feature_map) = match feature_map {
        Some(fm) => (
            Some(g.slice_rows(fm, 0, n_support)?),
            Some(g.slice_rows(fm, n_support, n_support + n_query)?),
        ),
        None => (None, None),
    };
    Ok(EpisodeEncoding { support_embedding, query_embedding, support_feature_map, query_feature_map })
}

/// Class prototypes as the mean of each class's support embeddings,
/// realized as a constant averaging matrix so gradients flow to the encoder.
pub fn compute_prototypes<S: Scalar>(
    g: &Graph<S>,
    support_embeddings: Var,
    n_way: usize,
    k_shot: usize,
) -> Result<Var> {
    let shape = g.shape_of(support_embeddings);
    if shape.first() != Some(&(n_way * k_shot)) {
        return Err(CoreError::Capacity(format!(
            "prototype aggregation expects {} support embeddings ({n_way} classes x {k_shot}), got {:?}",
            n_way * k_shot,
            shape
        )));
    }
    let inv_k = S::from_f64(1.0 / k_shot as f64);
    let mut avg = vec![S::ZERO; n_way * n_way * k_shot];
    for c in 0..n_way {
        for j in 0..k_shot {
            avg[c * n_way * k_shot + c * k_shot + j] = inv_k;
        }
    }
    let avg = g.constant(Tensor::from_vec(&[n_way, n_way * k_shot], avg));
    g.matmul(avg, support_embeddings)
}

/// Negative squared distances to the prototypes, plus softmax probabilities.
/// The argmin distance is the argmax probability by construction.
pub fn proto_classify<S: Scalar>(
    g: &Graph<S>,
    query_embeddings: Var,
    prototypes: Var,
) -> Result<(Var, Var)> {
    let dists = g.pairwise_sq_dist(query_embeddings, prototypes)?;
    let logits = g.neg(dists)?;
    let probs = g.softmax_rows(logits)?;
    Ok((logits, probs))
}

/// Episode logits for the prototypical and hybrid heads.
pub fn proto_episode_logits<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    batch: &EpisodeBatch<S>,
    mode: Mode,
) -> Result<Var> {
    let enc = encode_episode(g, encoder, batch, mode)?;
    let protos = compute_prototypes(g, enc.support_embedding, batch.n_way, batch.k_shot)?;
    let (logits, _probs) = proto_classify(g, enc.query_embedding, protos)?;
    Ok(logits)
}

/// Cross-entropy episode loss for the prototypical and hybrid heads.
pub fn proto_episode_loss<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    batch: &EpisodeBatch<S>,
    mode: Mode,
) -> Result<Var> {
    let logits = proto_episode_logits(g, encoder, batch, mode)?;
    g.cross_entropy_from_logits(logits, &batch.query_labels)
}

pub struct MatchingOutput {
    /// Attention-weighted class scores, rows summing to one: [N*Q, N].
    pub scores: Var,
    /// Per-support attention rows: [N*Q, N*K].
    pub attention: Var,
}

/// Cosine-attention matching: L2-normalized embeddings, dot-product
/// similarities, row softmax over all supports, then one-hot label mixing.
pub fn matching_forward<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    batch: &EpisodeBatch<S>,
    mode: Mode,
) -> Result<MatchingOutput> {
    let enc = encode_episode(g, encoder, batch, mode)?;
    let s_hat = g.l2_normalize_rows(enc.support_embedding)?;
    let q_hat = g.l2_normalize_rows(enc.query_embedding)?;
    let similarities = g.matmul_nt(q_hat, s_hat)?;
    let attention = g.softmax_rows(similarities)?;
    let (n, k) = (batch.n_way, batch.k_shot);
    let mut onehot = vec![S::ZERO; n * k * n];
    for c in 0..n {
        for j in 0..k {
            onehot[(c * k + j) * n + c] = S::ONE;
        }
    }
    let labels = g.constant(Tensor::from_vec(&[n * k, n], onehot));
    let scores = g.matmul(attention, labels)?;
    Ok(MatchingOutput { scores, attention })
}

pub fn matching_loss<S: Scalar>(
    g: &Graph<S>,
    output: &MatchingOutput,
    query_labels: &[usize],
) -> Result<Var> {
    g.nll_from_probs(output.scores, query_labels)
}

/// Two conv blocks, global average pooling, and a sigmoid-squashed linear
/// relation score. Pooling is applied while the spatial extent allows it.
#[derive(Debug)]
pub struct RelationModule<S> {
    conv1: Conv2d<S>,
    bn1: BatchNorm2d<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    fc: Linear<S>,
    hidden: usize,
}

impl<S: Scalar> RelationModule<S> {
    pub fn new(store: &mut ParamStore<S>, in_channels: usize, hidden: usize, rng: &mut Pcg32) -> Self {
        RelationModule {
            conv1: Conv2d::new(store, "relation.conv1", in_channels, hidden, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(store, "relation.bn1", hidden),
            conv2: Conv2d::new(store, "relation.conv2", hidden, hidden, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(store, "relation.bn2", hidden),
            fc: Linear::new(store, "relation.fc", hidden, 1, rng),
            hidden,
        }
    }

    pub fn forward(&self, g: &Graph<S>, pairs: Var, mode: Mode) -> Result<Var> {
        let mut x = self.conv1.forward(g, pairs)?;
        x = self.bn1.forward(g, x, mode)?;
        x = g.relu(x)?;
        if g.shape_of(x)[2] >= 2 {
            x = g.max_pool2d(x, 2, 2)?;
        }
        x = self.conv2.forward(g, x)?;
        x = self.bn2.forward(g, x, mode)?;
        x = g.relu(x)?;
        if g.shape_of(x)[2] >= 2 {
            x = g.max_pool2d(x, 2, 2)?;
        }
        let pooled = g.global_avg_pool(x)?;
        let score = self.fc.forward(g, pooled)?;
        let score = g.sigmoid(score)?;
        let rows = g.shape_of(score)[0];
        g.reshape(score, &[rows])
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

pub struct RelationPair<S: Scalar> {
    /// Relation scores in (0,1): [N*Q, N].
    pub scores: Var,
    /// One-hot same-class targets: [N*Q, N].
    pub targets: Tensor<S>,
}

/// Pair every query with every class's aggregated support feature map
/// (element-wise sum over the K shots), channel-concatenated support-first.
pub fn relation_forward<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    relation: &RelationModule<S>,
    batch: &EpisodeBatch<S>,
    mode: Mode,
) -> Result<RelationPair<S>> {
    let enc = encode_episode(g, encoder, batch, mode)?;
    let (Some(s_fm), Some(q_fm)) = (enc.support_feature_map, enc.query_feature_map) else {
        return Err(CoreError::State(
            "relation head needs an encoder that exposes feature maps".into(),
        ));
    };
    let (n, k) = (batch.n_way, batch.k_shot);
    let fm_shape = g.shape_of(s_fm);
    let (ch, h, w) = (fm_shape[1], fm_shape[2], fm_shape[3]);
    let n_query = g.shape_of(q_fm)[0];

    // Per-class sum over the K support maps, via a constant 0/1 matrix.
    let flat = g.reshape(s_fm, &[n * k, ch * h * w])?;
    let mut sum = vec![S::ZERO; n * n * k];
    for c in 0..n {
        for j in 0..k {
            sum[c * n * k + c * k + j] = S::ONE;
        }
    }
    let sum = g.constant(Tensor::from_vec(&[n, n * k], sum));
    let class_flat = g.matmul(sum, flat)?;
    let class_maps = g.reshape(class_flat, &[n, ch, h, w])?;

    // Pair p = q * n + c.
    let support_part = g.tile_rows(class_maps, n_query)?;
    let query_part = g.repeat_interleave_rows(q_fm, n)?;
    let combined = g.concat_channels(support_part, query_part)?;
    let scores_flat = relation.forward(g, combined, mode)?;
    let scores = g.reshape(scores_flat, &[n_query, n])?;

    let mut targets = vec![S::ZERO; n_query * n];
    for (q, &label) in batch.query_labels.iter().enumerate() {
        targets[q * n + label] = S::ONE;
    }
    Ok(RelationPair { scores, targets: Tensor::from_vec(&[n_query, n], targets) })
}

pub fn relation_loss<S: Scalar>(g: &Graph<S>, pair: &RelationPair<S>) -> Result<Var> {
    g.binary_cross_entropy(pair.scores, &pair.targets)
}

/// Triplet loss over one batch: anchors, positives, and negatives are
/// embedded jointly, distances are squared Euclidean.
pub fn siamese_triplet_loss<S: Scalar>(
    g: &Graph<S>,
    encoder: &EncoderArch<S>,
    batch: &TripletBatch<S>,
    margin: f64,
    mode: Mode,
) -> Result<Var> {
    let b = batch.anchors.shape()[0];
    let shape = batch.anchors.shape();
    let joint = Tensor::from_vec(
        &[3 * b, shape[1], shape[2], shape[3]],
        [batch.anchors.data(), batch.positives.data(), batch.negatives.data()].concat(),
    );
    let x = g.leaf(joint, false);
    let out = encoder.forward(g, x, mode)?;
    let anchors = g.slice_rows(out.embedding, 0, b)?;
    let positives = g.slice_rows(out.embedding, b, 2 * b)?;
    let negatives = g.slice_rows(out.embedding, 2 * b, 3 * b)?;
    let d_pos = g.rowwise_sq_dist(anchors, positives)?;
    let d_neg = g.rowwise_sq_dist(anchors, negatives)?;
    g.triplet_loss(d_pos, d_neg, margin)
}

/// Pair-distance evaluation: a triplet counts as correct iff the positive
/// is strictly closer than the negative.
pub fn siamese_pair_eval<S: Scalar>(
    encoder: &EncoderArch<S>,
    batch: &TripletBatch<S>,
) -> Result<Vec<bool>> {
    let g = Graph::inference();
    let b = batch.anchors.shape()[0];
    let shape = batch.anchors.shape();
    let joint = Tensor::from_vec(
        &[3 * b, shape[1], shape[2], shape[3]],
        [batch.anchors.data(), batch.positives.data(), batch.negatives.data()].concat(),
    );
    let x = g.leaf(joint, false);
    let out = encoder.forward(&g, x, Mode::Eval)?;
    let anchors = g.slice_rows(out.embedding, 0, b)?;
    let positives = g.slice_rows(out.embedding, b, 2 * b)?;
    let negatives = g.slice_rows(out.embedding, 2 * b, 3 * b)?;
    let d_pos = g.value(g.rowwise_sq_dist(anchors, positives)?);
    let d_neg = g.value(g.rowwise_sq_dist(anchors, negatives)?);
    Ok(d_pos
        .data()
        .iter()
        .zip(d_neg.data())
        .map(|(&p, &n)| p < n)
        .collect())
}
