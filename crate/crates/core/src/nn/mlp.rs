//! Fully connected layers with optional batch normalization.
//!
//! Layers compute `act(norm(x W + b))`. A normalized layer has no bias, the
//! normalization shift plays that role.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::store::{BlockRef, ParamReader, ParamWriter};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
            Activation::None => v,
        }
    }

    /// Derivative expressed through the pre-activation `y` and output `a`.
    fn derivative(self, y: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub normalize: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.width == 0) {
            return Err(Error::Config("an MLP needs at least one layer and positive widths".into()));
        }
        Ok(Self { layers })
    }

    /// Every layer normalized and rectified.
    pub fn encoder(widths: &[usize]) -> Result<Self> {
        Self::new(
            widths
                .iter()
                .map(|&width| LayerSpec {
                    width,
                    normalize: true,
                    activation: Activation::Relu,
                })
                .collect(),
        )
    }

    /// Rectified hidden layers and a linear output layer, no normalization.
    pub fn projection(widths: &[usize]) -> Result<Self> {
        let last = widths.len().saturating_sub(1);
        Self::new(
            widths
                .iter()
                .enumerate()
                .map(|(i, &width)| LayerSpec {
                    width,
                    normalize: false,
                    activation: if i == last { Activation::None } else { Activation::Relu },
                })
                .collect(),
        )
    }

    /// Normalized rectified hidden layers and a sigmoid output layer.
    pub fn classifier(widths: &[usize]) -> Result<Self> {
        let last = widths.len().saturating_sub(1);
        Self::new(
            widths
                .iter()
                .enumerate()
                .map(|(i, &width)| LayerSpec {
                    width,
                    normalize: i != last,
                    activation: if i == last { Activation::Sigmoid } else { Activation::Relu },
                })
                .collect(),
        )
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    /// Normalized pre-activations and the batch statistics behind them.
    norm: Option<(Array2<f64>, Array1<f64>, Array1<f64>)>,
    pre: Array2<f64>,
    out: Array2<f64>,
}

/// Intermediate values of a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    caches: Vec<LayerCache>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.caches.last().expect("at least one layer").out
    }

    pub fn last_pre_activation(&self) -> &Array2<f64> {
        &self.caches.last().expect("at least one layer").pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    /// Gradients in the same order as [`Mlp::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend(g.weight.iter());
            for v in [&g.bias, &g.gamma, &g.beta].into_iter().flatten() {
                out.extend(v.iter());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input_width: usize,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Uniform He-style initialization: weights in +-sqrt(6 / fan_in).
    pub fn new(input_width: usize, spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::Config("MLP input width must be positive".into()));
        }
        let mut fan_in = input_width;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_in, ls.width), |_| rng.random_range(-bound..bound));
            layers.push(Layer {
                weight,
                bias: (!ls.normalize).then(|| Array1::zeros(ls.width)),
                norm: ls.normalize.then(|| BatchNorm::new(ls.width)),
                activation: ls.activation,
            });
            fan_in = ls.width;
        }
        Ok(Self { input_width, layers })
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(self.input_width, |l| l.weight.ncols())
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    width: l.weight.ncols(),
                    normalize: l.norm.is_some(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<ForwardPass> {
        if x.ncols() != self.input_width {
            return Err(Error::Shape(format!(
                "network expects width {}, batch has {}",
                self.input_width,
                x.ncols()
            )));
        }
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = caches.last().map_or_else(|| x.clone(), |c| c.out.clone());
            let mut z = input.dot(&layer.weight);
            if let Some(b) = &layer.bias {
                z += b;
            }
            let (pre, norm) = match &layer.norm {
                None => (z, None),
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                            let var = z.var_axis(Axis(0), 0.0);
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                    let xhat = (z - &mean) * &inv_std;
                    let pre = &xhat * &bn.gamma + &bn.beta;
                    (pre, Some((xhat, inv_std, mean)))
                }
            };
            let act = layer.activation;
            let out = pre.mapv(|v| act.apply(v));
            caches.push(LayerCache {
                input,
                norm,
                pre,
                out,
            });
        }
        Ok(ForwardPass { caches })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Eval)?.output().clone())
    }

    /// Backpropagates `grad` through the pass. When `grad_is_preactivation`
    /// is set, `grad` is already taken with respect to the last layer's
    /// pre-activation (used for sigmoid outputs with cross-entropy).
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad: &Array2<f64>,
        grad_is_preactivation: bool,
    ) -> (MlpGrads, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad.clone();
        let last = self.layers.len() - 1;
        for (i, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            let act = layer.activation;
            let mut dy = upstream;
            if !(i == last && grad_is_preactivation) {
                ndarray::Zip::from(&mut dy)
                    .and(&cache.pre)
                    .and(&cache.out)
                    .for_each(|d, &y, &a| *d *= act.derivative(y, a));
            }
            let (dz, dgamma, dbeta) = match (&layer.norm, &cache.norm) {
                (Some(bn), Some((xhat, inv_std, _))) => {
                    let n = dy.nrows() as f64;
                    let dgamma = (&dy * xhat).sum_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let dz = (dxhat * n - &sum_dxhat - xhat * &sum_dxhat_xhat) * inv_std / n;
                    (dz, Some(dgamma), Some(dbeta))
                }
                _ => (dy, None, None),
            };
            let dweight = cache.input.t().dot(&dz);
            let dbias = layer.bias.as_ref().map(|_| dz.sum_axis(Axis(0)));
            upstream = dz.dot(&layer.weight.t());
            grads.push(LayerGrads {
                weight: dweight,
                bias: dbias,
                gamma: dgamma,
                beta: dbeta,
            });
        }
        grads.reverse();
        (MlpGrads { layers: grads }, upstream)
    }

    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weight.scaled_add(-lr, &g.weight);
            if let (Some(b), Some(gb)) = (&mut layer.bias, &g.bias) {
                b.scaled_add(-lr, gb);
            }
            if let Some(bn) = &mut layer.norm {
                if let Some(gg) = &g.gamma {
                    bn.gamma.scaled_add(-lr, gg);
                }
                if let Some(gb) = &g.beta {
                    bn.beta.scaled_add(-lr, gb);
                }
            }
        }
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            if let (Some(bn), Some((_, inv_std, mean))) = (&mut layer.norm, &cache.norm) {
                let var = inv_std.mapv(|s| 1.0 / (s * s) - BN_EPSILON);
                bn.running_mean = &bn.running_mean * BN_MOMENTUM + mean * (1.0 - BN_MOMENTUM);
                bn.running_var = &bn.running_var * BN_MOMENTUM + var * (1.0 - BN_MOMENTUM);
            }
        }
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            if let Some(b) = &mut layer.bias {
                out.push(b.as_slice_mut().expect("contiguous"));
            }
            if let Some(bn) = &mut layer.norm {
                out.push(bn.gamma.as_slice_mut().expect("contiguous"));
                out.push(bn.beta.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    /// All trainable parameters: per layer weight, bias, gamma, beta.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            if let Some(b) = &layer.bias {
                out.extend(b.iter());
            }
            if let Some(bn) = &layer.norm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        let mut at = 0;
        for slice in self.trainable_mut() {
            let end = at + slice.len();
            let src = values
                .get(at..end)
                .ok_or_else(|| Error::Shape("parameter vector too short".into()))?;
            slice.copy_from_slice(src);
            at = end;
        }
        if at != values.len() {
            return Err(Error::Shape("parameter vector too long".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params_flat().len()
    }

    pub fn all_finite(&self) -> bool {
        self.params_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    width: usize,
    activation: Activation,
    weight: BlockRef,
    bias: Option<BlockRef>,
    gamma: Option<BlockRef>,
    beta: Option<BlockRef>,
    running_mean: Option<BlockRef>,
    running_var: Option<BlockRef>,
}

#[derive(Serialize, Deserialize)]
struct MlpManifest {
    input_width: usize,
    layers: Vec<LayerManifest>,
}

impl Mlp {
    pub fn save(&self, params: &mut ParamWriter) -> Result<serde_json::Value> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let vec = |params: &mut ParamWriter, a: &Array1<f64>| params.put_vec(a.as_slice().expect("contiguous"));
                LayerManifest {
                    width: l.weight.ncols(),
                    activation: l.activation,
                    weight: params.put(
                        l.weight.as_slice().expect("standard layout"),
                        &[l.weight.nrows(), l.weight.ncols()],
                    ),
                    bias: l.bias.as_ref().map(|b| vec(params, b)),
                    gamma: l.norm.as_ref().map(|bn| vec(params, &bn.gamma)),
                    beta: l.norm.as_ref().map(|bn| vec(params, &bn.beta)),
                    running_mean: l.norm.as_ref().map(|bn| vec(params, &bn.running_mean)),
                    running_var: l.norm.as_ref().map(|bn| vec(params, &bn.running_var)),
                }
            })
            .collect();
        Ok(serde_json::to_value(MlpManifest {
            input_width: self.input_width,
            layers,
        })?)
    }

    pub fn load(manifest: &serde_json::Value, params: &ParamReader<'_>) -> Result<Self> {
        let m: MlpManifest = serde_json::from_value(manifest.clone())?;
        let mut fan_in = m.input_width;
        let mut layers = Vec::with_capacity(m.layers.len());
        for lm in m.layers {
            let w = lm.width;
            let vec = |b: &BlockRef| -> Result<Array1<f64>> { Ok(Array1::from(params.get_shaped(b, &[w])?.to_vec())) };
            let weight = Array2::from_shape_vec((fan_in, w), params.get_shaped(&lm.weight, &[fan_in, w])?.to_vec())
                .map_err(|e| Error::Corrupt(e.to_string()))?;
            let norm = match (&lm.gamma, &lm.beta, &lm.running_mean, &lm.running_var) {
                (Some(g), Some(b), Some(m), Some(v)) => Some(BatchNorm {
                    gamma: vec(g)?,
                    beta: vec(b)?,
                    running_mean: vec(m)?,
                    running_var: vec(v)?,
                }),
                (None, None, None, None) => None,
                _ => return Err(Error::Corrupt("partial normalization block".into())),
            };
            layers.push(Layer {
                weight,
                bias: lm.bias.as_ref().map(vec).transpose()?,
                norm,
                activation: lm.activation,
            });
            fan_in = w;
        }
        if layers.is_empty() {
            return Err(Error::Corrupt("network without layers".into()));
        }
        Ok(Self {
            input_width: m.input_width,
            layers,
        })
    }
}
