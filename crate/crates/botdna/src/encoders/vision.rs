//! Trainable vision encoder over rendered DNA images.
//!
//! Pixels scale to [0, 1] and pass through two 3×3 convolutions with
//! stride/pooling downsampling sized so the flattened spatial map has
//! exactly T positions at channel width d_v, matching the shape of the
//! pretrained model each mode stands in for: 64×512 (VGG16 mode) or
//! 49×256 (AlexNet mode). One dense layer projects channels to 768.

use rand_chacha::ChaCha8Rng;

use super::{EncoderError, D_MODEL};
use crate::imagify::DnaImage;
use crate::tensor::{Graph, NodeId, ParamStore, Tensor, TensorError};

pub const INPUT_SIDE: usize = 256;
const C_MID: usize = 4;

const PARAM_CONV1_W: &str = "vision.conv1.w";
const PARAM_CONV1_B: &str = "vision.conv1.b";
const PARAM_CONV2_W: &str = "vision.conv2.w";
const PARAM_CONV2_B: &str = "vision.conv2.b";
const PARAM_PROJ_W: &str = "vision.proj.w";
const PARAM_PROJ_B: &str = "vision.proj.b";

/// Output geometry presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisionMode {
    /// T = 64 positions, d_v = 512.
    Vgg16Shape,
    /// T = 49 positions, d_v = 256.
    AlexnetShape,
}

impl VisionMode {
    pub fn positions(self) -> usize {
        match self {
            VisionMode::Vgg16Shape => 64,
            VisionMode::AlexnetShape => 49,
        }
    }

    pub fn channel_width(self) -> usize {
        match self {
            VisionMode::Vgg16Shape => 512,
            VisionMode::AlexnetShape => 256,
        }
    }

    /// conv2 padding: the only geometric difference between the modes
    /// (16→8 with padding, 16→7 without).
    fn conv2_pad(self) -> usize {
        match self {
            VisionMode::Vgg16Shape => 1,
            VisionMode::AlexnetShape => 0,
        }
    }

    pub fn parse(name: &str) -> Option<VisionMode> {
        match name {
            "vgg16" | "vgg16_shape" => Some(VisionMode::Vgg16Shape),
            "alexnet" | "alexnet_shape" => Some(VisionMode::AlexnetShape),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub mode: VisionMode,
}

impl VisionEncoder {
    pub fn new(mode: VisionMode) -> VisionEncoder {
        VisionEncoder { mode }
    }

    pub fn register_params(
        &self,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TensorError> {
        let d_v = self.mode.channel_width();
        store.register_weight(PARAM_CONV1_W, &[C_MID, 3, 3, 3], 3 * 9, rng)?;
        store.register_bias(PARAM_CONV1_B, C_MID)?;
        store.register_weight(PARAM_CONV2_W, &[d_v, C_MID, 3, 3], C_MID * 9, rng)?;
        store.register_bias(PARAM_CONV2_B, d_v)?;
        store.register_weight(PARAM_PROJ_W, &[d_v, D_MODEL], d_v, rng)?;
        store.register_bias(PARAM_PROJ_B, D_MODEL)?;
        Ok(())
    }

    /// [0, 1]-scaled input tensor for a rendered 3×256×256 image.
    pub fn image_input(&self, img: &DnaImage) -> Result<Tensor, EncoderError> {
        if img.channels != 3 || img.side != INPUT_SIDE {
            return Err(EncoderError::WrongImageShape {
                expected: INPUT_SIDE,
                channels: img.channels,
                side: img.side,
            });
        }
        let data: Vec<f64> = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Ok(Tensor::from_vec(&[3, INPUT_SIDE, INPUT_SIDE], data)?)
    }

    /// Conv stack up to the [T, d_v] position matrix.
    fn positions_node(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        image: NodeId,
    ) -> Result<NodeId, EncoderError> {
        let w1 = graph.param(store, PARAM_CONV1_W)?;
        let b1 = graph.param(store, PARAM_CONV1_B)?;
        let c1 = graph.conv2d(image, w1, b1, 4, 1)?;
        let a1 = graph.tanh(c1)?;
        let p1 = graph.avg_pool2d(a1, 4)?;
        let w2 = graph.param(store, PARAM_CONV2_W)?;
        let b2 = graph.param(store, PARAM_CONV2_B)?;
        let c2 = graph.conv2d(p1, w2, b2, 2, self.mode.conv2_pad())?;
        let a2 = graph.tanh(c2)?;
        let d_v = self.mode.channel_width();
        let t = self.mode.positions();
        let flat = graph.reshape(a2, &[d_v, t])?;
        Ok(graph.transpose(flat)?)
    }

    /// Full [T, 768] sequence feature.
    pub fn forward_sequence(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        image: NodeId,
    ) -> Result<NodeId, EncoderError> {
        let positions = self.positions_node(graph, store, image)?;
        let w = graph.param(store, PARAM_PROJ_W)?;
        let b = graph.param(store, PARAM_PROJ_B)?;
        Ok(graph.dense(positions, w, b)?)
    }

    /// Pooled [768] feature: the mean over positions of the projected
    /// sequence, computed as the projection of the position mean (the
    /// projection is affine, so the two orders define the same
    /// function and the same gradients).
    pub fn forward_pooled(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        image: NodeId,
    ) -> Result<NodeId, EncoderError> {
        let positions = self.positions_node(graph, store, image)?;
        let mean = graph.mean_rows(positions)?;
        let w = graph.param(store, PARAM_PROJ_W)?;
        let b = graph.param(store, PARAM_PROJ_B)?;
        Ok(graph.dense(mean, w, b)?)
    }

    /// Inference convenience: `(pooled, sequence)` tensors for one image.
    pub fn encode(
        &self,
        store: &ParamStore,
        img: &DnaImage,
    ) -> Result<(Tensor, Tensor), EncoderError> {
        let input = self.image_input(img)?;
        let mut graph = Graph::new();
        let image = graph.input(input);
        let sequence = self.forward_sequence(&mut graph, store, image)?;
        let pooled = graph.mean_rows(sequence)?;
        Ok((
            graph.value(pooled).clone(),
            graph.value(sequence).clone(),
        ))
    }
}
