//! Diagonal Gaussian policy with a tanh MLP mean and a state-independent
//! log standard deviation.
//!
//! All trainable values live in one [`ParamVector`]: the mean network's
//! segments (`mean.layer{l}.*`) followed by `log_std`. Trust-region code
//! treats that vector as a single flat point.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{read_params, write_params, Mlp, MlpSpec, ParamVector, Segment, Trace};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    net: Mlp,
    params: ParamVector,
}

/// JSON sidecar written next to a saved parameter file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyMeta {
    pub mean_net: MlpSpec,
    pub log_std: Vec<f64>,
}

fn layout_for(spec: &MlpSpec) -> Vec<Segment> {
    let mut layout = spec.layout_with_prefix("mean.");
    layout.push(Segment::new("log_std", vec![spec.output_dim]));
    layout
}

impl GaussianPolicy {
    /// Mean weights scaled down in the last layer so initial actions are
    /// near zero; `log_std` starts at `init_log_std` in every dimension.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, init_log_std: f64, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(spec)?;
        if !init_log_std.is_finite() {
            return Err(Error::invalid("init_log_std", "must be finite"));
        }
        let mut values = net.spec().init_values(rng, 0.01);
        values.extend(std::iter::repeat_n(init_log_std, net.output_dim()));
        let params = ParamVector::from_parts(layout_for(net.spec()), values)?;
        Ok(GaussianPolicy { net, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        let net = Mlp::new(spec)?;
        if params.layout() != layout_for(net.spec()).as_slice() {
            return Err(Error::Config("policy parameter layout does not match its network spec".into()));
        }
        Ok(GaussianPolicy { net, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.net.spec()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Replace every value, keeping the layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(GaussianPolicy {
            net: self.net.clone(),
            params: self.params.with_values(values)?,
        })
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params.values()[self.net.param_count()..]
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(self.params.values(), state)
    }

    /// `a = mean(s) + exp(log_std) * z` with `z` standard normal.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.mean(state)?;
        for (ai, &ls) in a.iter_mut().zip(self.log_std()) {
            let z: f64 = StandardNormal.sample(rng);
            *ai += ls.exp() * z;
        }
        Ok(a)
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_len("policy action", self.action_dim(), action.len())?;
        let mu = self.mean(state)?;
        Ok(diag_gaussian_log_prob(&mu, self.log_std(), action))
    }

    /// `log pi(a|s)` and its gradient added, scaled by `scale`, into `grad`.
    pub fn log_prob_grad(&self, state: &[f64], action: &[f64], scale: f64, grad: &mut [f64], trace: &mut Trace) -> Result<f64> {
        check_len("policy action", self.action_dim(), action.len())?;
        check_len("policy gradient buffer", self.params.len(), grad.len())?;
        let values = self.params.values();
        self.net.forward_trace(values, state, trace)?;
        let mu = trace.output();
        let log_std = self.log_std();
        let n = self.net.param_count();
        let mut cot = Vec::with_capacity(mu.len());
        for (d, ((&m, &ls), &a)) in mu.iter().zip(log_std).zip(action).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - m;
            cot.push(scale * diff * inv_var);
            grad[n + d] += scale * (diff * diff * inv_var - 1.0);
        }
        let lp = diag_gaussian_log_prob(mu, log_std, action);
        self.net.backward(values, trace, &cot, &mut grad[..n])?;
        Ok(lp)
    }

    /// Differential entropy, a function of `log_std` only.
    pub fn entropy(&self) -> f64 {
        self.log_std().iter().map(|ls| ls + 0.5 * (LOG_2PI + 1.0)).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_params(BufWriter::new(File::create(path)?), &self.params)?;
        let meta = PolicyMeta {
            mean_net: self.spec().clone(),
            log_std: self.log_std().to_vec(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: PolicyMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let params = read_params(BufReader::new(File::open(path)?))?;
        let policy = GaussianPolicy::from_params(meta.mean_net, params)?;
        if policy.log_std() != meta.log_std.as_slice() {
            return Err(Error::Format("sidecar log_std disagrees with the parameter file".into()));
        }
        Ok(policy)
    }
}

/// `<file>.json` next to `<file>`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn diag_gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

/// Closed-form `KL(old || new)` of two diagonal Gaussians.
pub fn diag_gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for d in 0..mean_old.len() {
        let var_old = (2.0 * log_std_old[d]).exp();
        let var_new = (2.0 * log_std_new[d]).exp();
        let dm = mean_old[d] - mean_new[d];
        kl += log_std_new[d] - log_std_old[d] + (var_old + dm * dm) / (2.0 * var_new) - 0.5;
    }
    kl
}

pub fn sample_action<R: Rng + ?Sized>(policy: &GaussianPolicy, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    policy.sample_action(state, rng)
}

pub fn log_prob(policy: &GaussianPolicy, state: &[f64], action: &[f64]) -> Result<f64> {
    policy.log_prob(state, action)
}

/// Mean over `states` of `KL(old(.|s) || new(.|s))`.
pub fn kl(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<f64> {
    check_len("policy action dimension", old.action_dim(), new.action_dim())?;
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in states {
        total += diag_gaussian_kl(&old.mean(s)?, old.log_std(), &new.mean(s)?, new.log_std());
    }
    Ok(total / states.len() as f64)
}
