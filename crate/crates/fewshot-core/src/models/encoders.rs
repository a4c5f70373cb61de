//! The two encoders: a small siamese CNN and the residual encoder used by
//! the relation, matching, prototypical, and hybrid heads.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::models::layers::{BatchNorm2d, Conv2d, Linear};
use crate::ops::Mode;
use crate::params::ParamStore;
use crate::rng::Pcg32;
use crate::tensor::Scalar;

/// Encoder forward output: the embedding and, when the architecture exposes
/// it, the final conv feature map the CAM methods attach to.
pub struct EncoderOutput {
    pub embedding: Var,
    pub feature_map: Option<Var>,
}

/// Two conv blocks (conv -> BN -> relu -> maxpool) followed by a linear
/// projection to the embedding.
#[derive(Debug)]
pub struct SiameseCnn<S> {
    conv1: Conv2d<S>,
    bn1: BatchNorm2d<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    fc: Linear<S>,
    image_size: usize,
    channels: (usize, usize),
    embed_dim: usize,
}

impl<S: Scalar> SiameseCnn<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        image_size: usize,
        channels: (usize, usize),
        embed_dim: usize,
        rng: &mut Pcg32,
    ) -> Result<Self> {
        if image_size % 4 != 0 {
            return Err(CoreError::Config(format!(
                "siamese encoder needs image_size divisible by 4, got {image_size}"
            )));
        }
        let (c1, c2) = channels;
        let flat = c2 * (image_size / 4) * (image_size / 4);
        Ok(SiameseCnn {
            conv1: Conv2d::new(store, "encoder.conv1", 3, c1, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(store, "encoder.bn1", c1),
            conv2: Conv2d::new(store, "encoder.conv2", c1, c2, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(store, "encoder.bn2", c2),
            fc: Linear::new(store, "encoder.fc", flat, embed_dim, rng),
            image_size,
            channels,
            embed_dim,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Closed-form parameter count for the declared dims.
    pub fn expected_param_count(&self) -> usize {
        let (c1, c2) = self.channels;
        let s4 = self.image_size / 4;
        let conv1 = c1 * 3 * 3 * 3 + c1;
        let bn1 = 2 * c1;
        let conv2 = c2 * c1 * 3 * 3 + c2;
        let bn2 = 2 * c2;
        let fc = self.embed_dim * (c2 * s4 * s4) + self.embed_dim;
        conv1 + bn1 + conv2 + bn2 + fc
    }

    pub fn forward(&self, g: &Graph<S>, batch: Var, mode: Mode) -> Result<EncoderOutput> {
        let shape = g.shape_of(batch);
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.image_size || shape[3] != self.image_size {
            return Err(CoreError::Shape {
                op: "siamese_cnn",
                msg: format!(
                    "expected [B,3,{0},{0}], got {shape:?}",
                    self.image_size
                ),
            });
        }
        let b = shape[0];
        let x = self.conv1.forward(g, batch)?;
        let x = self.bn1.forward(g, x, mode)?;
        let x = g.relu(x)?;
        let x = g.max_pool2d(x, 2, 2)?;
        let x = self.conv2.forward(g, x)?;
        let x = self.bn2.forward(g, x, mode)?;
        let x = g.relu(x)?;
        let x = g.max_pool2d(x, 2, 2)?;
        let flat = self.channels.1 * (self.image_size / 4) * (self.image_size / 4);
        let x = g.reshape(x, &[b, flat])?;
        let embedding = self.fc.forward(g, x)?;
        Ok(EncoderOutput { embedding, feature_map: None })
    }
}

/// One residual block: two 3x3 convs with batch norm, plus a skip.
/// Stride-2 blocks project the skip with a 1x1 conv; stride-1 same-width
/// blocks use the identity skip.
#[derive(Debug)]
pub struct ResidualBlock<S> {
    conv1: Conv2d<S>,
    bn1: BatchNorm2d<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    projection: Option<Conv2d<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut Pcg32,
    ) -> Self {
        let projection = (stride != 1 || cin != cout)
            .then(|| Conv2d::new(store, &format!("{name}.proj"), cin, cout, 1, stride, 0, rng));
        ResidualBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
            projection,
        }
    }

    pub fn forward(&self, g: &Graph<S>, x: Var, mode: Mode) -> Result<Var> {
        let branch = self.conv1.forward(g, x)?;
        let branch = self.bn1.forward(g, branch, mode)?;
        let branch = g.relu(branch)?;
        let branch = self.conv2.forward(g, branch)?;
        let branch = self.bn2.forward(g, branch, mode)?;
        let skip = match &self.projection {
            Some(proj) => proj.forward(g, x)?,
            None => x,
        };
        let sum = g.add(branch, skip)?;
        g.relu(sum)
    }

    /// Zero the residual branch so the block reduces to relu(skip(x)).
    pub fn zero_branch(&self) {
        use crate::tensor::Tensor;
        self.conv2.weight.set(Tensor::zeros(&self.conv2.weight.shape()));
        self.conv2.bias.set(Tensor::zeros(&self.conv2.bias.shape()));
        self.bn2.beta.set(Tensor::zeros(&self.bn2.beta.shape()));
    }
}

/// Stem conv followed by three downsampling residual blocks; exposes the
/// final conv feature map (spatial side = image_size / 8), then global
/// average pooling and a linear projection to `feature_dim`.
#[derive(Debug)]
pub struct ResidualEncoder<S> {
    stem: Conv2d<S>,
    stem_bn: BatchNorm2d<S>,
    blocks: Vec<ResidualBlock<S>>,
    /// Final projection to `feature_dim`. The relation head truncates it and
    /// consumes the pooled features directly, mirroring a backbone with its
    /// head layers removed.
    fc: Option<Linear<S>>,
    image_size: usize,
    channels: Vec<usize>,
    feature_dim: usize,
}

impl<S: Scalar> ResidualEncoder<S> {
    /// `channels`: [stem, block1, block2, block3] output widths. With
    /// `project = false` the embedding is the pooled final feature map and
    /// no projection parameters exist.
    pub fn new(
        store: &mut ParamStore<S>,
        image_size: usize,
        channels: &[usize],
        feature_dim: usize,
        project: bool,
        rng: &mut Pcg32,
    ) -> Result<Self> {
        if channels.len() != 4 {
            return Err(CoreError::Config(format!(
                "residual encoder takes 4 channel widths, got {}",
                channels.len()
            )));
        }
        if image_size % 8 != 0 {
            return Err(CoreError::Config(format!(
                "residual encoder needs image_size divisible by 8, got {image_size}"
            )));
        }
        if !project && feature_dim != channels[3] {
            return Err(CoreError::Config(format!(
                "without a projection the embedding width is the final channel count {}, not {feature_dim}",
                channels[3]
            )));
        }
        let stem = Conv2d::new(store, "encoder.stem", 3, channels[0], 3, 1, 1, rng);
        let stem_bn = BatchNorm2d::new(store, "encoder.stem_bn", channels[0]);
        let mut blocks = Vec::with_capacity(3);
        for i in 0..3 {
            blocks.push(ResidualBlock::new(
                store,
                &format!("encoder.block{}", i + 1),
                channels[i],
                channels[i + 1],
                2,
                rng,
            ));
        }
        let fc = project.then(|| Linear::new(store, "encoder.fc", channels[3], feature_dim, rng));
        Ok(ResidualEncoder {
            stem,
            stem_bn,
            blocks,
            fc,
            image_size,
            channels: channels.to_vec(),
            feature_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_map_side(&self) -> usize {
        self.image_size / 8
    }

    pub fn feature_map_channels(&self) -> usize {
        self.channels[3]
    }

    /// The embedding head applied to an already-pooled [B,C3] tensor:
    /// the final projection when present, identity otherwise. This is the
    /// exact path `forward` takes after global average pooling.
    pub fn project(&self, g: &Graph<S>, pooled: Var) -> Result<Var> {
        match &self.fc {
            Some(fc) => fc.forward(g, pooled),
            None => Ok(pooled),
        }
    }

    pub fn forward(&self, g: &Graph<S>, batch: Var, mode: Mode) -> Result<EncoderOutput> {
        let shape = g.shape_of(batch);
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.image_size || shape[3] != self.image_size {
            return Err(CoreError::Shape {
                op: "residual_encoder",
                msg: format!("expected [B,3,{0},{0}], got {shape:?}", self.image_size),
            });
        }
        let x = self.stem.forward(g, batch)?;
        let x = self.stem_bn.forward(g, x, mode)?;
        let mut x = g.relu(x)?;
        for block in &self.blocks {
            x = block.forward(g, x, mode)?;
        }
        let pooled = g.global_avg_pool(x)?;
        let embedding = self.project(g, pooled)?;
        Ok(EncoderOutput { embedding, feature_map: Some(x) })
    }
}
