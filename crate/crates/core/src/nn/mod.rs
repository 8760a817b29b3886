//! Dense tanh networks over flat parameter vectors.
//!
//! Everything learnable in the crate (policy means, value baselines, the
//! discriminator) is an [`Mlp`] evaluated against a slice of a
//! [`ParamVector`]. Gradients are accumulated by an explicit reverse sweep
//! over the cached layer activations; [`Mlp::jvp`] provides the matching
//! forward-mode product needed for Fisher-vector products.

mod adam;
mod io;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{read_params, write_params, PARAM_FILE_MAGIC, PARAM_FILE_VERSION};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Named block of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Segment {
            name: name.into(),
            shape,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat `f64` parameters plus the segment layout that gives them meaning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<Segment>) -> Self {
        let n = layout.iter().map(Segment::size).sum();
        ParamVector {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_parts(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let n: usize = layout.iter().map(Segment::size).sum();
        check_len("parameter layout", n, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::from_parts(self.layout.clone(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    /// Offset and length of a named segment.
    pub fn segment_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for seg in &self.layout {
            let size = seg.size();
            if seg.name == name {
                return Some(offset..offset + size);
            }
            offset += size;
        }
        None
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segment_range(name).map(|r| &self.values[r])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Output nonlinearity of the last layer. Hidden layers are always tanh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            output_dim,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn with_output(mut self, act: OutputActivation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim", "must be at least 1"));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::invalid(
                format!("hidden[{i}]"),
                "layer width must be at least 1",
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Vec<Segment> {
        self.layout_with_prefix("")
    }

    pub fn layout_with_prefix(&self, prefix: &str) -> Vec<Segment> {
        self.layer_dims()
            .iter()
            .enumerate()
            .flat_map(|(l, &(i, o))| {
                [
                    Segment::new(format!("{prefix}layer{l}.weight"), vec![o, i]),
                    Segment::new(format!("{prefix}layer{l}.bias"), vec![o]),
                ]
            })
            .collect()
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases; the last layer's
    /// weights are further multiplied by `final_scale`.
    pub fn init_values<R: Rng + ?Sized>(&self, rng: &mut R, final_scale: f64) -> Vec<f64> {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut values = Vec::with_capacity(self.param_count());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l == last { final_scale } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                values.push(rng.random_range(-bound..=bound) * scale);
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        values
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, final_scale: f64) -> ParamVector {
        let values = self.init_values(rng, final_scale);
        ParamVector {
            values,
            layout: self.layout(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerInfo {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

/// Activations of one forward pass, kept for the reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// An [`MlpSpec`] with precomputed parameter offsets.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerInfo>,
    param_count: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let weight = offset;
                let bias = weight + fan_in * fan_out;
                offset = bias + fan_out;
                LayerInfo {
                    fan_in,
                    fan_out,
                    weight,
                    bias,
                }
            })
            .collect();
        Ok(Mlp {
            spec,
            layers,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers.len()
    }

    /// Forward pass recording every layer's output in `trace`.
    ///
    /// `params` may be longer than the network; only the leading
    /// `param_count()` entries are read.
    pub fn forward_trace(&self, params: &[f64], input: &[f64], trace: &mut Trace) -> Result<()> {
        check_len("mlp input", self.spec.input_dim, input.len())?;
        if params.len() < self.param_count {
            return Err(Error::DimensionMismatch {
                context: "mlp parameters",
                expected: self.param_count,
                got: params.len(),
            });
        }
        trace.acts.resize_with(self.layers.len() + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            let w = &params[layer.weight..layer.bias];
            let b = &params[layer.bias..layer.bias + layer.fan_out];
            for o in 0..layer.fan_out {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z = b[o] + dot(row, x);
                y.push(z);
            }
            if !self.is_last(l) {
                y.iter_mut().for_each(|v| *v = v.tanh());
            } else if self.spec.output_activation == OutputActivation::Sigmoid {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer {
                    context: "forward pass",
                    layer: l,
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(params, input, &mut trace)?;
        Ok(trace.acts.pop().unwrap_or_default())
    }

    /// Reverse sweep: adds `d(output . cotangent)/d params` into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        cotangent: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_len("mlp cotangent", self.spec.output_dim, cotangent.len())?;
        if grad.len() < self.param_count {
            return Err(Error::DimensionMismatch {
                context: "mlp gradient buffer",
                expected: self.param_count,
                got: grad.len(),
            });
        }
        let mut delta: Vec<f64> = cotangent.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.acts[l + 1];
            // Through the nonlinearity: delta becomes d/dz.
            if !self.is_last(l) {
                for (d, &a) in delta.iter_mut().zip(y) {
                    *d *= 1.0 - a * a;
                }
            } else if self.spec.output_activation == OutputActivation::Sigmoid {
                for (d, &a) in delta.iter_mut().zip(y) {
                    *d *= a * (1.0 - a);
                }
            }
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::NonFiniteLayer {
                    context: "backward pass",
                    layer: l,
                });
            }
            let x = &trace.acts[l];
            let w = &params[layer.weight..layer.bias];
            {
                let (gw, gb) = grad[layer.weight..layer.bias + layer.fan_out].split_at_mut(layer.bias - layer.weight);
                for o in 0..layer.fan_out {
                    let d = delta[o];
                    gb[o] += d;
                    if d != 0.0 {
                        let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (g, &xi) in row.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l > 0 {
                next.clear();
                next.resize(layer.fan_in, 0.0);
                for o in 0..layer.fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (n, &wi) in next.iter_mut().zip(row) {
                            *n += d * wi;
                        }
                    }
                }
                std::mem::swap(&mut delta, &mut next);
            }
        }
        Ok(())
    }

    /// Forward-mode product: derivative of the output along the parameter
    /// direction `tangent`, at the point recorded in `trace`.
    pub fn jvp(&self, params: &[f64], tangent: &[f64], trace: &Trace) -> Vec<f64> {
        let mut dx = vec![0.0; self.spec.input_dim];
        let mut dy = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &trace.acts[l];
            let y = &trace.acts[l + 1];
            let w = &params[layer.weight..layer.bias];
            let tw = &tangent[layer.weight..layer.bias];
            let tb = &tangent[layer.bias..layer.bias + layer.fan_out];
            dy.clear();
            for o in 0..layer.fan_out {
                let r = o * layer.fan_in..(o + 1) * layer.fan_in;
                let dz = tb[o] + dot(&tw[r.clone()], x) + dot(&w[r], &dx);
                let a = y[o];
                let dz = if !self.is_last(l) {
                    dz * (1.0 - a * a)
                } else if self.spec.output_activation == OutputActivation::Sigmoid {
                    dz * a * (1.0 - a)
                } else {
                    dz
                };
                dy.push(dz);
            }
            std::mem::swap(&mut dx, &mut dy);
        }
        dx
    }

    fn check_layout(&self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.spec.layout().as_slice() {
            return Err(Error::Config(
                "parameter layout does not match network spec".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Evaluate `spec` at `params` on one input.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let net = Mlp::new(spec.clone())?;
    net.check_layout(params)?;
    net.forward(params.values(), input)
}

/// Gradient of `output . cotangent` with respect to all parameters.
pub fn mlp_gradient(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    cotangent: &[f64],
) -> Result<ParamVector> {
    let net = Mlp::new(spec.clone())?;
    net.check_layout(params)?;
    let mut trace = Trace::default();
    net.forward_trace(params.values(), input, &mut trace)?;
    let mut grad = params.zeros_like();
    net.backward(params.values(), &trace, cotangent, grad.values_mut())?;
    Ok(grad)
}
