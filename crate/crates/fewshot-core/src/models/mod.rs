//! Encoders, heads, and the assembled per-head model.

pub mod encoders;
pub mod heads;
pub mod layers;

pub use encoders::{EncoderOutput, ResidualBlock, ResidualEncoder, SiameseCnn};
pub use heads::{
    compute_prototypes, encode_episode, matching_forward, matching_loss, proto_classify,
    proto_episode_logits, proto_episode_loss, relation_forward, relation_loss,
    siamese_pair_eval, siamese_triplet_loss, EpisodeEncoding, MatchingOutput, RelationModule,
    RelationPair,
};

use serde::{Deserialize, Serialize};

use crate::data::{EpisodeBatch, TripletBatch};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::rng::Pcg32;
use crate::tensor::Scalar;

/// Which classification head a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Siamese,
    Relation,
    Matching,
    Proto,
    Hybrid,
}

impl Head {
    pub const ALL: [Head; 5] = [Head::Siamese, Head::Relation, Head::Matching, Head::Proto, Head::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Siamese => "siamese",
            Head::Relation => "relation",
            Head::Matching => "matching",
            Head::Proto => "proto",
            Head::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Head> {
        match s {
            "siamese" => Ok(Head::Siamese),
            "relation" => Ok(Head::Relation),
            "matching" => Ok(Head::Matching),
            "proto" => Ok(Head::Proto),
            "hybrid" => Ok(Head::Hybrid),
            other => Err(CoreError::Config(format!(
                "unknown head '{other}' (expected one of siamese, relation, matching, proto, hybrid)"
            ))),
        }
    }

    /// True for heads trained on episodes rather than triplet batches.
    pub fn is_episodic(self) -> bool {
        !matches!(self, Head::Siamese)
    }
}

/// Encoder architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    SiameseCnn,
    Residual,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::SiameseCnn => "siamese_cnn",
            EncoderKind::Residual => "residual",
        }
    }
}

/// Everything needed to rebuild a model skeleton: recorded in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub head: Head,
    pub encoder: EncoderKind,
    pub image_size: usize,
    pub feature_dim: usize,
    /// Channel plan: (c1, c2) for the siamese CNN, [stem, b1, b2, b3] for
    /// the residual encoder.
    pub channels: Vec<usize>,
    /// Triplet margin; meaningful for the siamese head only.
    pub margin: f64,
}

impl ModelConfig {
    /// Per-head defaults at a given input resolution. Embedding widths:
    /// 64 for the siamese/matching/proto heads, 512 for the hybrid, and the
    /// final channel count for the relation head (whose encoder is truncated
    /// before any projection).
    pub fn defaults(head: Head, image_size: usize) -> ModelConfig {
        match head {
            Head::Siamese => ModelConfig {
                head,
                encoder: EncoderKind::SiameseCnn,
                image_size,
                feature_dim: 64,
                channels: vec![8, 16],
                margin: 1.0,
            },
            Head::Hybrid => ModelConfig {
                head,
                encoder: EncoderKind::Residual,
                image_size,
                feature_dim: 512,
                channels: vec![8, 8, 16, 32],
                margin: 1.0,
            },
            Head::Relation => ModelConfig {
                head,
                encoder: EncoderKind::Residual,
                image_size,
                feature_dim: 32,
                channels: vec![8, 8, 16, 32],
                margin: 1.0,
            },
            _ => ModelConfig {
                head,
                encoder: EncoderKind::Residual,
                image_size,
                feature_dim: 64,
                channels: vec![8, 8, 16, 32],
                margin: 1.0,
            },
        }
    }

    pub fn exposes_feature_map(&self) -> bool {
        self.encoder == EncoderKind::Residual
    }
}

pub enum EncoderArch<S> {
    Siamese(SiameseCnn<S>),
    Residual(ResidualEncoder<S>),
}

impl<S: Scalar> EncoderArch<S> {
    pub fn forward(&self, g: &Graph<S>, batch: Var, mode: Mode) -> Result<EncoderOutput> {
        match self {
            EncoderArch::Siamese(enc) => enc.forward(g, batch, mode),
            EncoderArch::Residual(enc) => enc.forward(g, batch, mode),
        }
    }

    pub fn exposes_feature_map(&self) -> bool {
        matches!(self, EncoderArch::Residual(_))
    }
}

/// A head, its encoder, and the parameter store that owns the weights.
pub struct FewShotModel<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub encoder: EncoderArch<S>,
    pub relation: Option<RelationModule<S>>,
}

impl<S: Scalar> FewShotModel<S> {
    /// Build a freshly initialized model. Weight init is derived from the
    /// seed alone, so identical (config, seed) pairs are bit-identical.
    pub fn build(config: ModelConfig, seed: u64) -> Result<FewShotModel<S>> {
        if config.feature_dim == 0 {
            return Err(CoreError::Config("feature_dim must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = Pcg32::keyed(seed, "model-init");
        let encoder = match config.encoder {
            EncoderKind::SiameseCnn => {
                if config.channels.len() != 2 {
                    return Err(CoreError::Config(format!(
                        "siamese encoder takes 2 channel widths, got {}",
                        config.channels.len()
                    )));
                }
                EncoderArch::Siamese(SiameseCnn::new(
                    &mut store,
                    config.image_size,
                    (config.channels[0], config.channels[1]),
                    config.feature_dim,
                    &mut rng,
                )?)
            }
            EncoderKind::Residual => EncoderArch::Residual(ResidualEncoder::new(
                &mut store,
                config.image_size,
                &config.channels,
                config.feature_dim,
                config.head != Head::Relation,
                &mut rng,
            )?),
        };
        let relation = match config.head {
            Head::Relation => {
                let EncoderArch::Residual(enc) = &encoder else {
                    return Err(CoreError::Config("relation head requires the residual encoder".into()));
                };
                let ch = enc.feature_map_channels();
                Some(RelationModule::new(&mut store, 2 * ch, ch, &mut rng))
            }
            _ => None,
        };
        if config.head == Head::Hybrid && config.encoder != EncoderKind::Residual {
            return Err(CoreError::Config("hybrid head requires the residual encoder".into()));
        }
        store.freeze();
        Ok(FewShotModel { config, store, encoder, relation })
    }

    /// Per-query class scores for an episode: prototype logits for the
    /// proto/hybrid heads, attention-mixed scores for matching, relation
    /// scores for the relation head. Rows argmax to the predicted class.
    pub fn episode_scores(&self, g: &Graph<S>, batch: &EpisodeBatch<S>, mode: Mode) -> Result<Var> {
        match self.config.head {
            Head::Proto | Head::Hybrid => proto_episode_logits(g, &self.encoder, batch, mode),
            Head::Matching => Ok(matching_forward(g, &self.encoder, batch, mode)?.scores),
            Head::Relation => {
                let relation = self.relation.as_ref().expect("relation module present");
                Ok(relation_forward(g, &self.encoder, relation, batch, mode)?.scores)
            }
            Head::Siamese => Err(CoreError::Config(
                "the siamese head is evaluated on triplets, not episodes".into(),
            )),
        }
    }

    /// Training loss for one episode (episodic heads only).
    pub fn episode_loss(&self, g: &Graph<S>, batch: &EpisodeBatch<S>) -> Result<Var> {
        match self.config.head {
            Head::Proto | Head::Hybrid => {
                proto_episode_loss(g, &self.encoder, batch, Mode::Train)
            }
            Head::Matching => {
                let out = matching_forward(g, &self.encoder, batch, Mode::Train)?;
                matching_loss(g, &out, &batch.query_labels)
            }
            Head::Relation => {
                let relation = self.relation.as_ref().expect("relation module present");
                let pair = relation_forward(g, &self.encoder, relation, batch, Mode::Train)?;
                relation_loss(g, &pair)
            }
            Head::Siamese => Err(CoreError::Config(
                "the siamese head trains on triplet batches, not episodes".into(),
            )),
        }
    }

    /// Training loss for one triplet batch (siamese head only).
    pub fn triplet_loss(&self, g: &Graph<S>, batch: &TripletBatch<S>) -> Result<Var> {
        if self.config.head != Head::Siamese {
            return Err(CoreError::Config(format!(
                "head '{}' does not train on triplets",
                self.config.head.as_str()
            )));
        }
        siamese_triplet_loss(g, &self.encoder, batch, self.config.margin, Mode::Train)
    }
}
