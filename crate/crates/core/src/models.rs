//! Classifier architectures: the compact separable-convolution HS-CNN with
//! its ablation switches, plus ResNet-18 and AlexNet adapted to take a
//! hyperspectral band count in their first convolution.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    AdaptiveAvgPool2d, AvgPool2d, BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear,
    MaxPool2d, ReLU, ResidualBlock, Sequential,
};

pub const N_CLASSES: usize = 3;
/// Network input resolution; recordings are resized to this before training.
pub const INPUT_SIZE: usize = 64;
/// Band count the default widths were tuned for (Specim FX 10).
pub const REFERENCE_BANDS: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvType {
    /// Depthwise spatial + pointwise 1x1 factorization.
    Separable,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Global average pooling, one hidden linear layer, 3-way output.
    GapPlusLinear,
    /// Global average pooling straight into the 3-way output layer.
    GapOnly,
    /// Flattened feature map through fully connected layers.
    FullyConnected,
}

/// Every ablation switch plus the architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_bands: usize,
    pub n_classes: usize,
    pub conv_type: ConvType,
    pub pooling: Pooling,
    pub head: Head,
    /// Channel count after each of the three blocks.
    pub widths: [usize; 3],
    /// Spatial kernel size of the block convolutions.
    pub kernel: usize,
    /// Hidden width of the head's linear layer.
    pub hidden: usize,
}

impl ModelConfig {
    /// Default configuration for a given band count. The widths are tuned
    /// for ~200-channel cameras and scaled proportionally (rounded to
    /// multiples of 8) for other band counts.
    pub fn default_for(in_bands: usize) -> Self {
        let scale = in_bands as f64 / REFERENCE_BANDS as f64;
        let adapt = |w: usize| -> usize {
            let scaled = (w as f64 * scale / 8.0).round() as usize * 8;
            scaled.max(8)
        };
        let widths = if in_bands == REFERENCE_BANDS {
            [32, 64, 128]
        } else {
            [adapt(32), adapt(64), adapt(128)]
        };
        Self {
            in_bands,
            n_classes: N_CLASSES,
            conv_type: ConvType::Separable,
            pooling: Pooling::Average,
            head: Head::GapPlusLinear,
            widths,
            kernel: 3,
            hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_bands == 0 {
            return Err(Error::InvalidArgument("in_bands must be > 0".into()));
        }
        if self.widths.iter().any(|&w| w == 0) || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "widths {:?} / hidden {} incompatible with in_bands {}",
                self.widths, self.hidden, self.in_bands
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument("kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Architecture descriptor stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArch {
    HsCnn(ModelConfig),
    ResNet18 { in_bands: usize },
    AlexNet { in_bands: usize },
}

impl ModelArch {
    pub fn in_bands(&self) -> usize {
        match self {
            Self::HsCnn(cfg) => cfg.in_bands,
            Self::ResNet18 { in_bands } | Self::AlexNet { in_bands } => *in_bands,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::HsCnn(_) => "hscnn",
            Self::ResNet18 { .. } => "resnet18",
            Self::AlexNet { .. } => "alexnet",
        }
    }
}

/// A built classifier: architecture descriptor plus the layer stack.
pub struct ClassifierModel {
    pub arch: ModelArch,
    pub net: Sequential,
}

impl ClassifierModel {
    pub fn build(arch: ModelArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match &arch {
            ModelArch::HsCnn(cfg) => build_hscnn_net(cfg, &mut rng)?,
            ModelArch::ResNet18 { in_bands } => build_resnet18_net(*in_bands, &mut rng)?,
            ModelArch::AlexNet { in_bands } => build_alexnet_net(*in_bands, &mut rng)?,
        };
        Ok(Self { arch, net })
    }

    /// Logits for a batch of `(n, bands, h, w)` cubes.
    pub fn forward_logits(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let out = self.net.forward(x, train);
        let n = out.shape()[0];
        out.into_shape((n, N_CLASSES)).expect("3-way output")
    }

    /// Softmax class probabilities in inference mode.
    pub fn predict_probs(&mut self, x: &Array4<f32>) -> Array2<f32> {
        let logits = self.forward_logits(x, false);
        crate::nn::softmax_rows(&logits)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    // -- checkpoint format: length-prefixed JSON header + f32 LE blob -------

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, Vec<f32>)> = self.state_tensors();
        let header = serde_json::json!({
            "version": 1,
            "arch": self.arch,
            "tensors": tensors.iter().map(|(n, v)| {
                serde_json::json!({"name": n, "len": v.len()})
            }).collect::<Vec<_>>(),
        });
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = fs::File::create(path)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for (_, values) in &tensors {
            for v in values {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path)?;
        let mut len_buf = [0u8; 8];
        file.read_exact(&mut len_buf)?;
        let header_len = u64::from_le_bytes(len_buf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
        if header["version"].as_u64() != Some(1) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header["version"]
            )));
        }
        let arch: ModelArch = serde_json::from_value(header["arch"].clone())?;
        let mut model = Self::build(arch, 0)?;

        let mut blob = Vec::new();
        file.read_to_end(&mut blob)?;
        let expected: usize = header["tensors"]
            .as_array()
            .ok_or_else(|| Error::Checkpoint("missing tensor table".into()))?
            .iter()
            .map(|t| t["len"].as_u64().unwrap_or(0) as usize)
            .sum();
        if blob.len() != expected * 4 {
            return Err(Error::Checkpoint(format!(
                "parameter blob holds {} bytes, expected {}",
                blob.len(),
                expected * 4
            )));
        }
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut snapshot = Vec::new();
        for t in header["tensors"].as_array().unwrap() {
            let len = t["len"].as_u64().unwrap() as usize;
            snapshot.push(values.by_ref().take(len).collect::<Vec<f32>>());
        }
        model.net.restore_snapshot(&snapshot);
        Ok(model)
    }

    fn state_tensors(&self) -> Vec<(String, Vec<f32>)> {
        let mut out: Vec<(String, Vec<f32>)> = self
            .net
            .named_params_ref()
            .into_iter()
            .map(|(n, p)| (n, p.value.clone()))
            .collect();
        for (i, (name, b)) in self.net.buffers_ref().into_iter().enumerate() {
            out.push((format!("buffer{i}.{name}"), b.clone()));
        }
        out
    }
}

/// Exact count of trainable scalars.
pub fn count_parameters(model: &ClassifierModel) -> usize {
    model.param_count()
}

/// The compact three-block separable-convolution classifier.
pub fn build_hscnn(cfg: &ModelConfig, seed: u64) -> Result<ClassifierModel> {
    ClassifierModel::build(ModelArch::HsCnn(cfg.clone()), seed)
}

pub fn build_resnet18_adapted(in_bands: usize, seed: u64) -> Result<ClassifierModel> {
    ClassifierModel::build(ModelArch::ResNet18 { in_bands }, seed)
}

pub fn build_alexnet_adapted(in_bands: usize, seed: u64) -> Result<ClassifierModel> {
    ClassifierModel::build(ModelArch::AlexNet { in_bands }, seed)
}

fn build_hscnn_net(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    cfg.validate()?;
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    let mut in_c = cfg.in_bands;
    for &width in &cfg.widths {
        match cfg.conv_type {
            ConvType::Separable => {
                layers.push(Box::new(Conv2d::depthwise(rng, in_c, cfg.kernel)));
                layers.push(Box::new(Conv2d::pointwise(rng, in_c, width)));
            }
            ConvType::Normal => {
                layers.push(Box::new(Conv2d::new(
                    rng,
                    in_c,
                    width,
                    cfg.kernel,
                    1,
                    cfg.kernel / 2,
                    1,
                    true,
                )));
            }
        }
        layers.push(Box::new(BatchNorm2d::new(width)));
        layers.push(Box::new(ReLU::new()));
        match cfg.pooling {
            Pooling::Average => layers.push(Box::new(AvgPool2d::new(2, 2))),
            Pooling::Max => layers.push(Box::new(MaxPool2d::new(2, 2))),
        }
        in_c = width;
    }
    match cfg.head {
        Head::GapPlusLinear => {
            layers.push(Box::new(GlobalAvgPool::new()));
            layers.push(Box::new(Linear::new(rng, in_c, cfg.hidden)));
            layers.push(Box::new(ReLU::new()));
            layers.push(Box::new(Linear::new(rng, cfg.hidden, cfg.n_classes)));
        }
        Head::GapOnly => {
            layers.push(Box::new(GlobalAvgPool::new()));
            layers.push(Box::new(Linear::new(rng, in_c, cfg.n_classes)));
        }
        Head::FullyConnected => {
            // feature map size after three 2x2 pools of the 64x64 input
            let spatial = INPUT_SIZE / 8;
            layers.push(Box::new(Flatten::new()));
            layers.push(Box::new(Linear::new(rng, in_c * spatial * spatial, cfg.hidden)));
            layers.push(Box::new(ReLU::new()));
            layers.push(Box::new(Linear::new(rng, cfg.hidden, cfg.n_classes)));
        }
    }
    Ok(Sequential::new(layers))
}

fn build_resnet18_net(in_bands: usize, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    if in_bands == 0 {
        return Err(Error::InvalidArgument("in_bands must be > 0".into()));
    }
    let mut layers: Vec<Box<dyn Layer>> = vec![
        Box::new(Conv2d::new(rng, in_bands, 64, 7, 2, 3, 1, false)),
        Box::new(BatchNorm2d::new(64)),
        Box::new(ReLU::new()),
        Box::new(MaxPool2d::new(3, 2)),
    ];
    let stages: [(usize, usize, usize); 8] = [
        (64, 64, 1),
        (64, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 256, 2),
        (256, 256, 1),
        (256, 512, 2),
        (512, 512, 1),
    ];
    for (in_c, out_c, stride) in stages {
        layers.push(Box::new(ResidualBlock::new(rng, in_c, out_c, stride)));
    }
    layers.push(Box::new(GlobalAvgPool::new()));
    layers.push(Box::new(Linear::new(rng, 512, N_CLASSES)));
    Ok(Sequential::new(layers))
}

fn build_alexnet_net(in_bands: usize, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    if in_bands == 0 {
        return Err(Error::InvalidArgument("in_bands must be > 0".into()));
    }
    let layers: Vec<Box<dyn Layer>> = vec![
        Box::new(Conv2d::new(rng, in_bands, 64, 11, 4, 2, 1, true)),
        Box::new(ReLU::new()),
        Box::new(MaxPool2d::new(3, 2)),
        Box::new(Conv2d::new(rng, 64, 192, 5, 1, 2, 1, true)),
        Box::new(ReLU::new()),
        Box::new(MaxPool2d::new(3, 2)),
        Box::new(Conv2d::new(rng, 192, 384, 3, 1, 1, 1, true)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::new(rng, 384, 256, 3, 1, 1, 1, true)),
        Box::new(ReLU::new()),
        Box::new(Conv2d::new(rng, 256, 256, 3, 1, 1, 1, true)),
        Box::new(ReLU::new()),
        Box::new(MaxPool2d::new(3, 2)),
        Box::new(AdaptiveAvgPool2d::new(6, 6)),
        Box::new(Flatten::new()),
        Box::new(Linear::new(rng, 256 * 6 * 6, 4096)),
        Box::new(ReLU::new()),
        Box::new(Linear::new(rng, 4096, 4096)),
        Box::new(ReLU::new()),
        Box::new(Linear::new(rng, 4096, N_CLASSES)),
    ];
    Ok(Sequential::new(layers))
}
