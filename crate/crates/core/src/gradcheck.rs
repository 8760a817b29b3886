//! Randomized central-difference checks of every analytic gradient.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::discriminator::{AlignmentConfig, Discriminator, LossKind, SequenceConfig};
use crate::error::Result;
use crate::nn::{Mlp, MlpSpec, OutputActivation, Trace};
use crate::policy::GaussianPolicy;
use crate::trpo::{surrogate_and_grad, PolicyBatch};

const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub component: &'static str,
    pub cases: usize,
    pub max_relative_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor `1e-4 * max(1, |f|)` sits
/// well above the ~1e-10 round-off of a central difference of `f`, so
/// coordinates whose gradient is essentially zero are judged on the scale
/// of the function rather than on noise.
pub fn relative_error(a: f64, b: f64, f_scale: f64) -> f64 {
    let floor = 1e-4 * f_scale.abs().max(1.0);
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`.
pub fn compare<F>(mut f: F, x: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let f0 = f(x)?;
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - STEP;
        let dn = f(&probe)?;
        probe[i] = x[i];
        let fd = (up - dn) / (2.0 * STEP);
        worst = worst.max(relative_error(fd, analytic[i], f0));
    }
    Ok(worst)
}

fn random_spec<R: Rng>(rng: &mut R, input_dim: usize, output_dim: usize) -> MlpSpec {
    let depth = rng.random_range(0..=2);
    let hidden = (0..depth).map(|_| rng.random_range(1..=6)).collect();
    MlpSpec::new(input_dim, hidden, output_dim)
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn check_mlp<R: Rng>(rng: &mut R) -> Result<f64> {
    let input_dim = rng.random_range(1..=5);
    let output_dim = rng.random_range(1..=3);
    let mut spec = random_spec(rng, input_dim, output_dim);
    if rng.random::<bool>() {
        spec = spec.with_output(OutputActivation::Sigmoid);
    }
    let net = Mlp::new(spec.clone())?;
    let params = spec.init_values(rng, 1.0);
    let input = random_vec(rng, input_dim, 1.0);
    let cot = random_vec(rng, output_dim, 1.0);
    let mut trace = Trace::default();
    net.forward_trace(&params, &input, &mut trace)?;
    let mut grad = vec![0.0; params.len()];
    net.backward(&params, &trace, &cot, &mut grad)?;
    compare(|p| Ok(net.forward(p, &input)?.iter().zip(&cot).map(|(y, c)| y * c).sum()), &params, &grad)
}

fn random_policy<R: Rng>(rng: &mut R) -> Result<GaussianPolicy> {
    let state_dim = rng.random_range(1..=4);
    let action_dim = rng.random_range(1..=3);
    let spec = random_spec(rng, state_dim, action_dim);
    let p = GaussianPolicy::new(spec, 0.0, rng)?;
    let mut v = p.params().values().to_vec();
    let n = v.len();
    for (i, x) in v.iter_mut().enumerate() {
        *x = if i >= n - action_dim {
            rng.random_range(-1.0..0.5)
        } else {
            *x + 0.3 * rng.sample::<f64, _>(StandardNormal)
        };
    }
    p.with_values(v)
}

fn check_log_prob<R: Rng>(rng: &mut R) -> Result<f64> {
    let p = random_policy(rng)?;
    let state = random_vec(rng, p.state_dim(), 1.0);
    let action = p.sample_action(&state, rng)?;
    let mut grad = vec![0.0; p.params().len()];
    p.log_prob_grad(&state, &action, 1.0, &mut grad, &mut Trace::default())?;
    compare(|v| p.with_values(v.to_vec())?.log_prob(&state, &action), p.params().values(), &grad)
}

fn check_surrogate<R: Rng>(rng: &mut R) -> Result<f64> {
    let old = random_policy(rng)?;
    let n = rng.random_range(2..=12);
    let mut batch = PolicyBatch::default();
    for _ in 0..n {
        let s = random_vec(rng, old.state_dim(), 1.0);
        batch.actions.push(old.sample_action(&s, rng)?);
        batch.states.push(s);
        batch.advantages.push(rng.sample(StandardNormal));
    }
    let shifted: Vec<f64> = old.params().values().iter().map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
    let p = old.with_values(shifted)?;
    let (_, grad) = surrogate_and_grad(&p, &old, &batch)?;
    compare(|v| Ok(surrogate_and_grad(&p.with_values(v.to_vec())?, &old, &batch)?.0), p.params().values(), &grad)
}

fn check_discriminator<R: Rng>(rng: &mut R) -> Result<f64> {
    let state_dim = rng.random_range(1..=3);
    let loss = if rng.random::<bool>() {
        LossKind::Confusion
    } else {
        LossKind::Wasserstein { clip: 1.0, critic_updates: 1 }
    };
    let seq = if rng.random::<bool>() {
        SequenceConfig::single_state()
    } else {
        SequenceConfig::pair(rng.random_range(1..=3))
    };
    let depth = rng.random_range(0..=2);
    let cfg = AlignmentConfig {
        loss,
        seq,
        hidden: (0..depth).map(|_| rng.random_range(1..=6)).collect(),
        ..AlignmentConfig::default()
    };
    let mut d = Discriminator::new(state_dim, &cfg, rng)?;
    let width = state_dim * seq.len();
    let set = |rng: &mut R, shift: f64| -> Vec<Vec<f64>> {
        (0..rng.random_range(1..=8)).map(|_| random_vec(rng, width, 1.0).into_iter().map(|v| v + shift).collect()).collect()
    };
    let sim = set(rng, 0.5);
    let robot = set(rng, -0.5);
    let s: Vec<&[f64]> = sim.iter().map(Vec::as_slice).collect();
    let r: Vec<&[f64]> = robot.iter().map(Vec::as_slice).collect();
    let (_, grad) = d.loss_and_grad(&s, &r)?;
    let base = d.params().values().to_vec();
    compare(
        |v| {
            d.set_values(v.to_vec())?;
            Ok(d.loss_and_grad(&s, &r)?.0)
        },
        &base,
        &grad,
    )
}

/// Run `cases` random checks per component from `seed`.
pub fn run(cases: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    type Check = fn(&mut ChaCha8Rng) -> Result<f64>;
    let checks: [(&'static str, Check); 4] = [
        ("mlp", check_mlp),
        ("log_prob", check_log_prob),
        ("surrogate", check_surrogate),
        ("discriminator_loss", check_discriminator),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(k, (component, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut worst = 0.0f64;
            for _ in 0..cases {
                worst = worst.max(check(&mut rng)?);
            }
            Ok(GradcheckReport {
                component,
                cases,
                max_relative_error: worst,
            })
        })
        .collect()
}
