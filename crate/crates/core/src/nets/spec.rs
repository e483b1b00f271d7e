//! Serializable layer lists. A spec fully determines parameter names, shapes
//! and the forward computation, so checkpoints carrying one are self-describing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::{Layout, N_FRAMES, N_MFCC};
use crate::tensor::conv_out_len;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "td-resnet7")]
    TdResnet7,
    #[serde(rename = "tc-resnet8")]
    TcResnet8,
    #[serde(rename = "cnn-trad-fpool3")]
    CnnTradFpool3,
    #[serde(rename = "c64")]
    C64,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [ArchKind::TdResnet7, ArchKind::TcResnet8, ArchKind::CnnTradFpool3, ArchKind::C64];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::TdResnet7 => "td-resnet7",
            ArchKind::TcResnet8 => "tc-resnet8",
            ArchKind::CnnTradFpool3 => "cnn-trad-fpool3",
            ArchKind::C64 => "c64",
        }
    }

    /// Feature layout the network consumes.
    pub fn layout(self) -> Layout {
        match self {
            ArchKind::TdResnet7 | ArchKind::TcResnet8 => Layout::TemporalConv,
            ArchKind::CnnTradFpool3 | ArchKind::C64 => Layout::FrameMajor,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidHyperparameter(format!("unknown architecture `{s}`")))
    }
}

/// Per-sample input shape (batch axis excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    /// `[channels, length]`, coefficients as channels.
    Temporal { channels: usize, length: usize },
    /// `[1, height, width]`, time × frequency image.
    Image { height: usize, width: usize },
}

impl InputShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            InputShape::Temporal { channels, length } => vec![channels, length],
            InputShape::Image { height, width } => vec![1, height, width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum LayerSpec {
    Conv1d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, dilation: usize, padding: usize, bias: bool },
    Conv2d { in_ch: usize, out_ch: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2], bias: bool },
    BatchNorm { channels: usize },
    Relu,
    MaxPool2d { kernel: [usize; 2], stride: [usize; 2] },
    GlobalAvgPool,
    Flatten,
    Linear { in_features: usize, out_features: usize, bias: bool },
    /// `main(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual { main: Vec<LayerSpec>, shortcut: Vec<LayerSpec> },
}

impl LayerSpec {
    /// Output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::ShapeMismatch(format!("{self:?} cannot take input {input:?}"));
        match self {
            LayerSpec::Conv1d { in_ch, out_ch, kernel, stride, dilation, padding, .. } => {
                if input.len() != 2 || input[0] != *in_ch {
                    return Err(bad());
                }
                let len = conv_out_len(input[1], *kernel, *stride, *dilation, *padding).ok_or_else(bad)?;
                Ok(vec![*out_ch, len])
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding, .. } => {
                if input.len() != 3 || input[0] != *in_ch {
                    return Err(bad());
                }
                let h = conv_out_len(input[1], kernel[0], stride[0], 1, padding[0]).ok_or_else(bad)?;
                let w = conv_out_len(input[2], kernel[1], stride[1], 1, padding[1]).ok_or_else(bad)?;
                Ok(vec![*out_ch, h, w])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.len() < 2 || input[0] != *channels {
                    return Err(bad());
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { kernel, stride } => {
                if input.len() != 3 {
                    return Err(bad());
                }
                let h = conv_out_len(input[1], kernel[0], stride[0], 1, 0).ok_or_else(bad)?;
                let w = conv_out_len(input[2], kernel[1], stride[1], 1, 0).ok_or_else(bad)?;
                Ok(vec![input[0], h, w])
            }
            LayerSpec::GlobalAvgPool => {
                if input.len() < 2 {
                    return Err(bad());
                }
                Ok(vec![input[0]])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear { in_features, out_features, .. } => {
                if input != [*in_features] {
                    return Err(bad());
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Residual { main, shortcut } => {
                let a = chain_shape(main, input)?;
                let b = chain_shape(shortcut, input)?;
                if a != b {
                    return Err(Error::ShapeMismatch(format!("residual branches give {a:?} and {b:?}")));
                }
                Ok(a)
            }
        }
    }
}

/// Shape after running `layers` in order.
pub fn chain_shape(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    layers.iter().try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    pub embedding_dim: usize,
}

impl ArchitectureSpec {
    /// Type-checks the chain and confirms the embedding width.
    pub fn validate(&self) -> Result<()> {
        let out = chain_shape(&self.layers, &self.input.dims())?;
        if out != [self.embedding_dim] {
            return Err(Error::ShapeMismatch(format!(
                "network ends in {out:?}, declared embedding dim {}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter, in the order a network stores them.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        collect_params(&self.layers, "layers", &mut out);
        out
    }

    /// Names of the batchnorm layers, in pre-order.
    pub fn batchnorm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        collect_bn(&self.layers, "layers", &mut out);
        out
    }

    /// Per-sample shape after each top-level layer.
    pub fn trace_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input.dims();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Receptive field, in input frames, of one activation just before the
    /// pooling head of a temporal network (`None` for the 2-D networks).
    pub fn receptive_field(&self) -> Option<usize> {
        if !matches!(self.input, InputShape::Temporal { .. }) {
            return None;
        }
        let (rf, _) = rf_of(&self.layers, (1, 1));
        Some(rf)
    }
}

fn rf_of(layers: &[LayerSpec], start: (usize, usize)) -> (usize, usize) {
    layers.iter().fold(start, |(rf, jump), l| match l {
        LayerSpec::Conv1d { kernel, stride, dilation, .. } => (rf + (kernel - 1) * dilation * jump, jump * stride),
        LayerSpec::Residual { main, shortcut } => {
            let a = rf_of(main, (rf, jump));
            let b = rf_of(shortcut, (rf, jump));
            (a.0.max(b.0), a.1)
        }
        _ => (rf, jump),
    })
}

fn collect_params(layers: &[LayerSpec], prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
    for (i, l) in layers.iter().enumerate() {
        let p = format!("{prefix}.{i}");
        match l {
            LayerSpec::Conv1d { in_ch, out_ch, kernel, bias, .. } => {
                out.push((format!("{p}.weight"), vec![*out_ch, *in_ch, *kernel]));
                if *bias {
                    out.push((format!("{p}.bias"), vec![*out_ch]));
                }
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, bias, .. } => {
                out.push((format!("{p}.weight"), vec![*out_ch, *in_ch, kernel[0], kernel[1]]));
                if *bias {
                    out.push((format!("{p}.bias"), vec![*out_ch]));
                }
            }
            LayerSpec::BatchNorm { channels } => {
                out.push((format!("{p}.gamma"), vec![*channels]));
                out.push((format!("{p}.beta"), vec![*channels]));
            }
            LayerSpec::Linear { in_features, out_features, bias } => {
                out.push((format!("{p}.weight"), vec![*out_features, *in_features]));
                if *bias {
                    out.push((format!("{p}.bias"), vec![*out_features]));
                }
            }
            LayerSpec::Residual { main, shortcut } => {
                collect_params(main, &format!("{p}.main"), out);
                collect_params(shortcut, &format!("{p}.shortcut"), out);
            }
            LayerSpec::Relu | LayerSpec::MaxPool2d { .. } | LayerSpec::GlobalAvgPool | LayerSpec::Flatten => {}
        }
    }
}

fn collect_bn(layers: &[LayerSpec], prefix: &str, out: &mut Vec<(String, usize)>) {
    for (i, l) in layers.iter().enumerate() {
        let p = format!("{prefix}.{i}");
        match l {
            LayerSpec::BatchNorm { channels } => out.push((p, *channels)),
            LayerSpec::Residual { main, shortcut } => {
                collect_bn(main, &format!("{p}.main"), out);
                collect_bn(shortcut, &format!("{p}.shortcut"), out);
            }
            _ => {}
        }
    }
}

fn conv1d(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, dilation: usize) -> LayerSpec {
    // "same" padding for odd kernels
    LayerSpec::Conv1d { in_ch, out_ch, kernel, stride, dilation, padding: dilation * (kernel - 1) / 2, bias: false }
}

fn temporal_block(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, dilation: usize) -> Vec<LayerSpec> {
    let main = vec![
        conv1d(in_ch, out_ch, kernel, stride, dilation),
        LayerSpec::BatchNorm { channels: out_ch },
        LayerSpec::Relu,
        conv1d(out_ch, out_ch, kernel, 1, dilation),
        LayerSpec::BatchNorm { channels: out_ch },
    ];
    let shortcut = if in_ch != out_ch || stride != 1 {
        vec![conv1d(in_ch, out_ch, 1, stride, 1), LayerSpec::BatchNorm { channels: out_ch }]
    } else {
        Vec::new()
    };
    vec![LayerSpec::Residual { main, shortcut }, LayerSpec::Relu]
}

fn temporal_stem() -> Vec<LayerSpec> {
    vec![conv1d(N_MFCC, 16, 3, 1, 1), LayerSpec::BatchNorm { channels: 16 }, LayerSpec::Relu]
}

const TEMPORAL_INPUT: InputShape = InputShape::Temporal { channels: N_MFCC, length: N_FRAMES };
const IMAGE_INPUT: InputShape = InputShape::Image { height: N_FRAMES, width: N_MFCC };

/// Stem k=3 (40→16), then residual blocks 16→24→32→48 with k=7, stride 1 and
/// dilations 1, 2, 4; global average pooling gives a 48-dim embedding.
pub fn td_resnet7_spec() -> ArchitectureSpec {
    let mut layers = temporal_stem();
    for (cin, cout, d) in [(16, 24, 1), (24, 32, 2), (32, 48, 4)] {
        layers.extend(temporal_block(cin, cout, 7, 1, d));
    }
    layers.push(LayerSpec::GlobalAvgPool);
    ArchitectureSpec { kind: ArchKind::TdResnet7, input: TEMPORAL_INPUT, layers, embedding_dim: 48 }
}

/// Stem k=3 (40→16), residual blocks 16→24→32→48 with k=9 and stride 2 in the
/// first conv of each block; 48-dim pooled embedding.
pub fn tc_resnet8_spec() -> ArchitectureSpec {
    let mut layers = temporal_stem();
    for (cin, cout) in [(16, 24), (24, 32), (32, 48)] {
        layers.extend(temporal_block(cin, cout, 9, 2, 1));
    }
    layers.push(LayerSpec::GlobalAvgPool);
    ArchitectureSpec { kind: ArchKind::TcResnet8, input: TEMPORAL_INPUT, layers, embedding_dim: 48 }
}

/// conv 20×8 (64) → pool 1×3 over frequency → conv 10×4 (64) → low-rank
/// linear 32 → dense 128 + ReLU.
pub fn cnn_trad_fpool3_spec() -> ArchitectureSpec {
    let layers = vec![
        LayerSpec::Conv2d { in_ch: 1, out_ch: 64, kernel: [20, 8], stride: [1, 1], padding: [0, 0], bias: true },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { kernel: [1, 3], stride: [1, 3] },
        LayerSpec::Conv2d { in_ch: 64, out_ch: 64, kernel: [10, 4], stride: [1, 1], padding: [0, 0], bias: true },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Linear { in_features: 64 * 21 * 8, out_features: 32, bias: false },
        LayerSpec::Linear { in_features: 32, out_features: 128, bias: true },
        LayerSpec::Relu,
    ];
    ArchitectureSpec { kind: ArchKind::CnnTradFpool3, input: IMAGE_INPUT, layers, embedding_dim: 128 }
}

/// Four `[conv 3×3 (64), BN, ReLU, maxpool 2×2]` blocks, flattened to 384.
pub fn c64_spec() -> ArchitectureSpec {
    let mut layers = Vec::new();
    for i in 0..4 {
        layers.push(LayerSpec::Conv2d {
            in_ch: if i == 0 { 1 } else { 64 },
            out_ch: 64,
            kernel: [3, 3],
            stride: [1, 1],
            padding: [1, 1],
            bias: false,
        });
        layers.push(LayerSpec::BatchNorm { channels: 64 });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2d { kernel: [2, 2], stride: [2, 2] });
    }
    layers.push(LayerSpec::Flatten);
    ArchitectureSpec { kind: ArchKind::C64, input: IMAGE_INPUT, layers, embedding_dim: 384 }
}

pub fn arch_spec(kind: ArchKind) -> ArchitectureSpec {
    match kind {
        ArchKind::TdResnet7 => td_resnet7_spec(),
        ArchKind::TcResnet8 => tc_resnet8_spec(),
        ArchKind::CnnTradFpool3 => cnn_trad_fpool3_spec(),
        ArchKind::C64 => c64_spec(),
    }
}
