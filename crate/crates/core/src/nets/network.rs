use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{arch_spec, ArchKind, ArchitectureSpec, InputShape, LayerSpec};
use crate::features::{FeatureMatrix, Layout};
use crate::tensor::{Mode, ParamId, ParamSet, Real, RunningStats, Tape, Tensor, Var};
use crate::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// `B × embedding_dim` embeddings from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub values: Vec<f32>,
    pub batch: usize,
    pub dim: usize,
    pub kind: ArchKind,
}

impl EmbeddingBatch {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// An architecture spec with its parameters and batchnorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: ArchitectureSpec,
    params: ParamSet<T>,
    bn_stats: Vec<RunningStats<T>>,
}

struct Cursor {
    param: usize,
    bn: usize,
}

impl Cursor {
    fn next_param(&mut self) -> ParamId {
        self.param += 1;
        ParamId(self.param - 1)
    }
}

impl Network<f32> {
    /// Kaiming-uniform (fan-in) weights, zero biases, unit gamma and zero beta.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in spec.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let bound = Float::sqrt(6.0 / fan_in as f64);
                (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
            } else if name.ends_with(".gamma") {
                alloc::vec![1.0; n]
            } else {
                alloc::vec![0.0; n]
            };
            params.add(name, Tensor::new(&shape, data)?)?;
        }
        let bn_stats = spec.batchnorm_layers().iter().map(|(_, c)| RunningStats::new(*c)).collect();
        Ok(Self { spec, params, bn_stats })
    }

    pub fn build_kind(kind: ArchKind, seed: u64) -> Result<Self> {
        Self::build(arch_spec(kind), seed)
    }
}

pub fn build_td_resnet7(seed: u64) -> Network<f32> {
    Network::build_kind(ArchKind::TdResnet7, seed).expect("built-in spec type-checks")
}

pub fn build_tc_resnet8(seed: u64) -> Network<f32> {
    Network::build_kind(ArchKind::TcResnet8, seed).expect("built-in spec type-checks")
}

pub fn build_cnn_trad_fpool3(seed: u64) -> Network<f32> {
    Network::build_kind(ArchKind::CnnTradFpool3, seed).expect("built-in spec type-checks")
}

pub fn build_c64(seed: u64) -> Network<f32> {
    Network::build_kind(ArchKind::C64, seed).expect("built-in spec type-checks")
}

impl<T: Real> Network<T> {
    /// Reassembles a network from stored parts, checking them against the spec.
    pub fn from_parts(spec: ArchitectureSpec, params: ParamSet<T>, bn_stats: Vec<RunningStats<T>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "spec declares {} parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(params.iter()) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "parameter `{}` {:?} does not match spec `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let bns = spec.batchnorm_layers();
        if bns.len() != bn_stats.len()
            || bns.iter().zip(&bn_stats).any(|((_, c), s)| s.mean.len() != *c || s.var.len() != *c)
        {
            return Err(Error::EvalWithoutStats);
        }
        Ok(Self { spec, params, bn_stats })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn kind(&self) -> ArchKind {
        self.spec.kind
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[RunningStats<T>] {
        &self.bn_stats
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
            bn_stats: self.bn_stats.iter().map(|s| s.cast()).collect(),
        }
    }

    /// Stacks features into the network's batched input tensor.
    pub fn input_tensor<'a>(&self, batch: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Tensor<T>> {
        let want = self.spec.kind.layout();
        let dims = self.spec.input.dims();
        let per: usize = dims.iter().product();
        let mut data = Vec::new();
        let mut count = 0;
        for f in batch {
            count += 1;
            if f.layout() != want {
                return Err(Error::LayoutMismatch);
            }
            let ok = match self.spec.input {
                InputShape::Temporal { channels, length } => f.n_coeffs() == channels && f.n_frames() == length,
                InputShape::Image { height, width } => f.n_frames() == height && f.n_coeffs() == width,
            };
            if !ok || f.values().len() != per {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "{}x{} features for input {dims:?}",
                    f.n_frames(),
                    f.n_coeffs()
                )));
            }
            data.extend(f.values().iter().map(|&v| T::of(v as f64)));
        }
        let mut shape = alloc::vec![count];
        shape.extend(dims);
        Tensor::new(&shape, data)
    }

    /// Runs the layer list on `x` (`[B, ...input dims]`). In training mode the
    /// batchnorm running statistics are updated from the batch.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut cursor = Cursor { param: 0, bn: 0 };
        let Self { spec, params, bn_stats } = self;
        run_layers(&spec.layers, tape, x, mode, params, bn_stats, &mut cursor)
    }

    /// Batched embedding of feature matrices laid out for this network.
    pub fn embed(&mut self, batch: &[FeatureMatrix], mode: Mode) -> Result<EmbeddingBatch> {
        let mut tape = Tape::new();
        let x = tape.constant(self.input_tensor(batch)?);
        let y = self.forward(&mut tape, x, mode)?;
        Ok(EmbeddingBatch {
            values: tape.value(y).data().iter().map(|v| v.as_f64() as f32).collect(),
            batch: batch.len(),
            dim: self.embedding_dim(),
            kind: self.kind(),
        })
    }

    pub fn layout(&self) -> Layout {
        self.spec.kind.layout()
    }
}

fn run_layers<T: Real>(
    layers: &[LayerSpec],
    tape: &mut Tape<T>,
    mut x: Var,
    mode: Mode,
    params: &ParamSet<T>,
    bn_stats: &mut [RunningStats<T>],
    cursor: &mut Cursor,
) -> Result<Var> {
    for layer in layers {
        x = match layer {
            LayerSpec::Conv1d { stride, dilation, padding, bias, .. } => {
                let w = tape.param(params, cursor.next_param());
                let y = tape.conv1d(x, w, *stride, *dilation, *padding)?;
                with_bias(tape, y, *bias, params, cursor)?
            }
            LayerSpec::Conv2d { stride, padding, bias, .. } => {
                let w = tape.param(params, cursor.next_param());
                let y = tape.conv2d(x, w, (stride[0], stride[1]), (padding[0], padding[1]))?;
                with_bias(tape, y, *bias, params, cursor)?
            }
            LayerSpec::BatchNorm { .. } => {
                let gamma = tape.param(params, cursor.next_param());
                let beta = tape.param(params, cursor.next_param());
                let stats = &mut bn_stats[cursor.bn];
                cursor.bn += 1;
                let (y, batch) = tape.batchnorm(x, gamma, beta, mode, Some(stats), BN_EPS)?;
                if let Some(b) = batch {
                    stats.update(&b.mean, &b.var, b.count, T::of(BN_MOMENTUM));
                }
                y
            }
            LayerSpec::Relu => tape.relu(x),
            LayerSpec::MaxPool2d { kernel, stride } => {
                tape.maxpool2d(x, (kernel[0], kernel[1]), (stride[0], stride[1]))?
            }
            LayerSpec::GlobalAvgPool => tape.global_avg_pool(x)?,
            LayerSpec::Flatten => tape.flatten(x)?,
            LayerSpec::Linear { bias, .. } => {
                let w = tape.param(params, cursor.next_param());
                let b = bias.then(|| tape.param(params, cursor.next_param()));
                tape.linear(x, w, b)?
            }
            LayerSpec::Residual { main, shortcut } => {
                let a = run_layers(main, tape, x, mode, params, bn_stats, cursor)?;
                let b = run_layers(shortcut, tape, x, mode, params, bn_stats, cursor)?;
                tape.add(a, b)?
            }
        };
    }
    Ok(x)
}

fn with_bias<T: Real>(tape: &mut Tape<T>, y: Var, bias: bool, params: &ParamSet<T>, cursor: &mut Cursor) -> Result<Var> {
    if bias {
        let b = tape.param(params, cursor.next_param());
        tape.bias_add(y, b)
    } else {
        Ok(y)
    }
}
