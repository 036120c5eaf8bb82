//! U-Net regressing a pressure map from a stacked window of frames.
//!
//! Parameters live in a flat list of named tensors whose order and shapes
//! are a pure function of [`UNetConfig`].

pub mod checkpoint;
pub mod layers;
pub mod tensor;
mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{FrameWindow, PressureMap};

pub use tensor::{Scalar, Tensor};
pub use unet::{
    backward, forward, forward_trace, loss_grad, mse_loss, predict, predict_frames, predict_window, relative_error, stack_frames,
    window_tensor, ForwardCache, TraceEntry,
};

/// Number of stride-two halvings in the encoder.
pub const DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Window length in frames.
    #[serde(rename = "H")]
    pub h: usize,
    pub grid: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    /// Constant multiplier on the head output, so targets in the hundreds of
    /// kPa are reachable without large weights.
    #[serde(default = "unit_scale")]
    pub output_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            h: 15,
            grid: 256,
            base_channels: 64,
            leaky_slope: 0.01,
            output_scale: 1.0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::InvalidValue(
                "window length H must be at least 1".into(),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidValue(
                "base_channels must be at least 1".into(),
            ));
        }
        if self.grid == 0 || self.grid % (1 << DEPTH) != 0 {
            return Err(Error::InvalidValue(format!(
                "grid {} must be a positive multiple of {}",
                self.grid,
                1 << DEPTH
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return Err(Error::InvalidValue(format!(
                "leaky_slope {} must be positive",
                self.leaky_slope
            )));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::InvalidValue(format!(
                "output_scale {} must be positive",
                self.output_scale
            )));
        }
        Ok(())
    }

    /// Small configuration used by quick tests and the overfit recipe.
    pub fn tiny(h: usize, grid: usize, base_channels: usize) -> Self {
        Self {
            h,
            grid,
            base_channels,
            ..Self::default()
        }
    }

    pub fn in_channels(&self) -> usize {
        3 * self.h
    }

    /// Feature width at each resolution level.
    pub fn widths(&self) -> [usize; DEPTH + 1] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 8 * b]
    }
}

/// Indices of the first tensor of each block in the parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc: [usize; DEPTH + 1],
    pub down: [usize; DEPTH],
    pub up: [usize; DEPTH],
    pub dec: [usize; DEPTH],
    pub head: usize,
    pub specs: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input fan for kernels; `None` for biases and norm affine terms.
    fn fan_in(&self) -> Option<usize> {
        (self.shape.len() == 4).then(|| self.shape[1] * self.shape[2] * self.shape[3])
    }
}

/// Tensors per conv block: two convs and two norms, each with two tensors.
pub const BLOCK_TENSORS: usize = 8;

impl Layout {
    pub fn new(cfg: &UNetConfig) -> Self {
        let w = cfg.widths();
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<TensorSpec>, name: &str, cin: usize, cout: usize, k: usize| {
            specs.push(TensorSpec {
                name: format!("{name}.weight"),
                shape: vec![cout, cin, k, k],
            });
            specs.push(TensorSpec {
                name: format!("{name}.bias"),
                shape: vec![cout],
            });
        };
        let block = |specs: &mut Vec<TensorSpec>, name: &str, cin: usize, cout: usize| {
            let start = specs.len();
            for (i, c_in) in [cin, cout].into_iter().enumerate() {
                conv(specs, &format!("{name}.conv{}", i + 1), c_in, cout, 3);
                specs.push(TensorSpec {
                    name: format!("{name}.norm{}.gamma", i + 1),
                    shape: vec![cout],
                });
                specs.push(TensorSpec {
                    name: format!("{name}.norm{}.beta", i + 1),
                    shape: vec![cout],
                });
            }
            start
        };

        let mut enc = [0; DEPTH + 1];
        let mut down = [0; DEPTH];
        enc[0] = block(&mut specs, "enc0", cfg.in_channels(), w[0]);
        for i in 0..DEPTH {
            down[i] = specs.len();
            conv(&mut specs, &format!("down{i}"), w[i], w[i + 1], 3);
            enc[i + 1] = block(&mut specs, &format!("enc{}", i + 1), w[i + 1], w[i + 1]);
        }
        let mut up = [0; DEPTH];
        let mut dec = [0; DEPTH];
        for i in 0..DEPTH {
            let (hi, lo) = (w[DEPTH - i], w[DEPTH - 1 - i]);
            up[i] = specs.len();
            conv(&mut specs, &format!("up{i}"), hi, lo, 3);
            dec[i] = block(&mut specs, &format!("dec{i}"), 2 * lo, lo);
        }
        let head = specs.len();
        conv(&mut specs, "head", w[0], 1, 1);
        Self {
            enc,
            down,
            up,
            dec,
            head,
            specs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All learnable tensors of the network, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams<T = f32> {
    pub config: UNetConfig,
    pub tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> UNetParams<T> {
    /// Kaiming-normal kernels, zero biases, unit gamma, zero beta.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Layout::new(&config)
            .specs
            .into_iter()
            .map(|spec| {
                let n = spec.len();
                let data = match spec.fan_in() {
                    Some(fan_in) => {
                        let normal =
                            Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                        (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                    }
                    None if spec.name.ends_with(".gamma") => vec![T::one(); n],
                    None => vec![T::zero(); n],
                };
                ParamTensor {
                    name: spec.name,
                    shape: spec.shape,
                    data,
                }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Zero tensors shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        UNetParams {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    /// Check names, shapes and finiteness against the config's layout.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = Layout::new(&self.config);
        if layout.specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, t) in layout.specs.iter().zip(&self.tensors) {
            if spec.name != t.name {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` found where `{}` was expected",
                    t.name, spec.name
                )));
            }
            if spec.shape != t.shape || t.data.len() != spec.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?} ({} values), expected {:?}",
                    t.name,
                    t.shape,
                    t.data.len(),
                    spec.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` contains non-finite values",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn data(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }
}

impl UNetParams<f32> {
    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Clamped prediction for a window.
    pub fn infer(&self, window: &FrameWindow) -> Result<PressureMap> {
        let raw = predict_window(self, window)?;
        PressureMap::from_raw_clamped(self.config.grid, &raw)
    }
}
