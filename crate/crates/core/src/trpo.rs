//! Trust-region policy update: conjugate-gradient natural step on the
//! importance-ratio surrogate, scaled to the KL radius, then a
//! backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::Trace;
use crate::policy::{diag_gaussian_kl, GaussianPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub damping: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
    /// Fisher products use every `fvp_stride`-th state of the batch.
    pub fvp_stride: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            max_kl: 0.01,
            cg_iters: 10,
            cg_tol: 1e-10,
            damping: 0.1,
            backtrack_coeff: 0.5,
            max_backtracks: 10,
            fvp_stride: 5,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl.is_finite() && self.max_kl > 0.0) {
            return Err(Error::invalid("max_kl", "must be positive"));
        }
        if self.cg_iters == 0 {
            return Err(Error::invalid("cg_iters", "must be at least 1"));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::invalid("damping", "must be non-negative"));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return Err(Error::invalid("backtrack_coeff", "must lie in (0, 1)"));
        }
        if self.max_backtracks == 0 {
            return Err(Error::invalid("max_backtracks", "must be at least 1"));
        }
        if self.fvp_stride == 0 {
            return Err(Error::invalid("fvp_stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// States, actions and standardized advantages of one update batch.
#[derive(Clone, Debug, Default)]
pub struct PolicyBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
}

impl PolicyBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn validate(&self) -> Result<()> {
        check_len("batch actions", self.states.len(), self.actions.len())?;
        check_len("batch advantages", self.states.len(), self.advantages.len())?;
        if self.is_empty() {
            return Err(Error::Config("policy update on an empty batch".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TrpoStats {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Mean `KL(old || new)` on the batch at the accepted point, 0 if rejected.
    pub kl: f64,
    pub step_norm: f64,
    pub accepted: bool,
    pub backtracks: usize,
}

fn old_log_probs(old: &GaussianPolicy, batch: &PolicyBatch) -> Result<Vec<f64>> {
    batch.states.iter().zip(&batch.actions).map(|(s, a)| old.log_prob(s, a)).collect()
}

fn surrogate_loss(policy: &GaussianPolicy, batch: &PolicyBatch, old_logp: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch.len() {
        let ratio = (policy.log_prob(&batch.states[i], &batch.actions[i])? - old_logp[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!("non-finite importance ratio at sample {i}")));
        }
        total -= ratio * batch.advantages[i];
    }
    Ok(total / batch.len() as f64)
}

fn surrogate_with_grad(policy: &GaussianPolicy, batch: &PolicyBatch, old_logp: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut trace = Trace::default();
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let (s, a) = (&batch.states[i], &batch.actions[i]);
        let ratio = (policy.log_prob(s, a)? - old_logp[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!("non-finite importance ratio at sample {i}")));
        }
        let coeff = -ratio * batch.advantages[i] / n;
        loss += coeff;
        // d ratio = ratio * d log pi.
        policy.log_prob_grad(s, a, coeff, &mut grad, &mut trace)?;
    }
    Ok((loss, grad))
}

/// `-mean(exp(log pi_new - log pi_old) * A)` and its gradient in the
/// parameters of `policy`.
pub fn surrogate_and_grad(policy: &GaussianPolicy, old_policy: &GaussianPolicy, batch: &PolicyBatch) -> Result<(f64, Vec<f64>)> {
    batch.validate()?;
    surrogate_with_grad(policy, batch, &old_log_probs(old_policy, batch)?)
}

/// Gauss-Newton Fisher operator of the mean KL at the current policy.
///
/// For a diagonal Gaussian with state-independent `log_std`, the KL
/// Hessian at coincidence is block diagonal: `J^T diag(1/sigma^2) J` on
/// the mean-network block and `2 I` on `log_std`.
pub struct FisherOperator<'a> {
    policy: &'a GaussianPolicy,
    traces: Vec<Trace>,
    inv_var: Vec<f64>,
    damping: f64,
}

impl<'a> FisherOperator<'a> {
    pub fn new<'s>(policy: &'a GaussianPolicy, states: impl IntoIterator<Item = &'s Vec<f64>>, damping: f64) -> Result<Self> {
        let mut traces = Vec::new();
        for s in states {
            let mut t = Trace::default();
            policy.mean_net().forward_trace(policy.params().values(), s, &mut t)?;
            traces.push(t);
        }
        if traces.is_empty() {
            return Err(Error::Config("Fisher product over no states".into()));
        }
        let inv_var = policy.log_std().iter().map(|ls| (-2.0 * ls).exp()).collect();
        Ok(FisherOperator {
            policy,
            traces,
            inv_var,
            damping,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let params = self.policy.params().values();
        check_len("Fisher vector", params.len(), v.len())?;
        let net = self.policy.mean_net();
        let n = net.param_count();
        let scale = 1.0 / self.traces.len() as f64;
        let mut out = vec![0.0; v.len()];
        let mut cot = vec![0.0; self.inv_var.len()];
        for trace in &self.traces {
            let jv = net.jvp(params, v, trace);
            for ((c, j), iv) in cot.iter_mut().zip(&jv).zip(&self.inv_var) {
                *c = j * iv * scale;
            }
            net.backward(params, trace, &cot, &mut out[..n])?;
        }
        for d in n..v.len() {
            out[d] = 2.0 * v[d];
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += self.damping * x;
        }
        Ok(out)
    }
}

/// `(F + damping I) v` with `F` the Fisher matrix averaged over `states`.
pub fn fisher_vector_product(policy: &GaussianPolicy, states: &[Vec<f64>], v: &[f64], damping: f64) -> Result<Vec<f64>> {
    FisherOperator::new(policy, states, damping)?.apply(v)
}

/// Solve `A x = b` for symmetric positive semidefinite `A`, stopping once
/// `||A x - b|| <= tol ||b||` or after `iters` iterations.
pub fn conjugate_gradient<F>(mut apply_a: F, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        let ap = apply_a(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * b_norm {
            break;
        }
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(x)
}

/// One trust-region step. Returns the updated policy (unchanged when no
/// backtracking candidate satisfies both the KL bound and surrogate
/// improvement) and the step statistics.
pub fn trpo_update(policy: &GaussianPolicy, batch: &PolicyBatch, config: &TrpoConfig) -> Result<(GaussianPolicy, TrpoStats)> {
    batch.validate()?;
    let old_logp = old_log_probs(policy, batch)?;
    let (loss, grad) = surrogate_with_grad(policy, batch, &old_logp)?;
    let mut stats = TrpoStats {
        surrogate_before: loss,
        surrogate_after: loss,
        ..TrpoStats::default()
    };
    if grad.iter().all(|&g| g == 0.0) {
        return Ok((policy.clone(), stats));
    }
    let fisher = FisherOperator::new(policy, batch.states.iter().step_by(config.fvp_stride), config.damping)?;
    let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
    let dir = conjugate_gradient(|v| fisher.apply(v), &neg_grad, config.cg_iters, config.cg_tol)?;
    let shs = 0.5 * dot(&dir, &fisher.apply(&dir)?);
    if !(shs.is_finite() && shs > 0.0) {
        return Err(Error::Numeric(format!("degenerate natural-gradient direction (s^T F s / 2 = {shs})")));
    }
    let full_step: Vec<f64> = {
        let scale = (config.max_kl / shs).sqrt();
        dir.iter().map(|d| d * scale).collect()
    };
    if full_step.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite trust-region step".into()));
    }

    let base = policy.params().values();
    let mut frac = 1.0;
    for j in 0..config.max_backtracks {
        let candidate: Vec<f64> = base.iter().zip(&full_step).map(|(p, s)| p + frac * s).collect();
        let trial = policy.with_values(candidate)?;
        let trial_loss = surrogate_loss(&trial, batch, &old_logp)?;
        let kl = mean_kl(policy, &trial, &batch.states)?;
        if kl <= config.max_kl && trial_loss < loss {
            stats.surrogate_after = trial_loss;
            stats.kl = kl;
            stats.step_norm = frac * norm(&full_step);
            stats.accepted = true;
            stats.backtracks = j;
            return Ok((trial, stats));
        }
        frac *= config.backtrack_coeff;
    }
    stats.backtracks = config.max_backtracks;
    Ok((policy.clone(), stats))
}

fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for s in states {
        total += diag_gaussian_kl(&old.mean(s)?, old.log_std(), &new.mean(s)?, new.log_std());
    }
    Ok(total / states.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::standardize;
    use crate::nn::MlpSpec;
    use crate::policy::kl;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(seed: u64, spec: MlpSpec) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GaussianPolicy::new(spec.clone(), 0.0, &mut rng).unwrap();
        let mut v = spec.init_values(&mut rng, 1.0);
        v.extend((0..spec.output_dim).map(|_| rng.random_range(-0.5..0.5)));
        p.with_values(v).unwrap()
    }

    fn random_batch(policy: &GaussianPolicy, n: usize, seed: u64) -> PolicyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<Vec<f64>> = (0..n).map(|_| (0..policy.state_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let actions = states.iter().map(|s| policy.sample_action(s, &mut rng).unwrap()).collect();
        let mut advantages: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        standardize(&mut advantages);
        PolicyBatch { states, actions, advantages }
    }

    #[test]
    fn surrogate_at_old_is_minus_mean_advantage() {
        let p = random_policy(0, MlpSpec::new(3, vec![8], 2));
        let b = random_batch(&p, 64, 1);
        let (loss, _) = surrogate_and_grad(&p, &p, &b).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    /// At `new = old` the ratio is 1, so the surrogate gradient equals the
    /// plain score-function estimator `-mean(grad log pi * A)`.
    #[test]
    fn gradient_at_old_is_score_function_form() {
        let p = random_policy(2, MlpSpec::new(3, vec![8], 2));
        let b = random_batch(&p, 32, 3);
        let (_, g) = surrogate_and_grad(&p, &p, &b).unwrap();
        let mut want = vec![0.0; g.len()];
        let mut trace = Trace::default();
        for i in 0..b.len() {
            let mut gi = vec![0.0; g.len()];
            p.log_prob_grad(&b.states[i], &b.actions[i], 1.0, &mut gi, &mut trace).unwrap();
            for (w, x) in want.iter_mut().zip(gi) {
                *w -= x * b.advantages[i] / b.len() as f64;
            }
        }
        for (a, w) in g.iter().zip(want) {
            assert!((a - w).abs() < 1e-10);
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let old = random_policy(4, MlpSpec::new(2, vec![5], 2));
        let b = random_batch(&old, 16, 5);
        let mut v = old.params().values().to_vec();
        for x in v.iter_mut() {
            *x += 0.05;
        }
        let p = old.with_values(v).unwrap();
        let (_, g) = surrogate_and_grad(&p, &old, &b).unwrap();
        let h = 1e-6;
        for i in 0..g.len() {
            let mut v = p.params().values().to_vec();
            v[i] += h;
            let up = surrogate_and_grad(&p.with_values(v.clone()).unwrap(), &old, &b).unwrap().0;
            v[i] -= 2.0 * h;
            let dn = surrogate_and_grad(&p.with_values(v).unwrap(), &old, &b).unwrap().0;
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(err < 1e-5, "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fisher_product_basic_properties() {
        let p = random_policy(6, MlpSpec::new(3, vec![6], 2));
        let b = random_batch(&p, 20, 7);
        let zero = vec![0.0; p.params().len()];
        assert!(fisher_vector_product(&p, &b.states, &zero, 0.1).unwrap().iter().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let v: Vec<f64> = (0..zero.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fv = fisher_vector_product(&p, &b.states, &v, 0.1).unwrap();
            assert!(dot(&fv, &v) >= 0.1 * dot(&v, &v) - 1e-12);
        }
    }

    /// Explicit 10x10 KL Hessian by second-order central differences.
    #[test]
    fn fisher_product_matches_explicit_kl_hessian() {
        let spec = MlpSpec::new(2, vec![2], 1);
        let p = random_policy(9, spec);
        assert_eq!(p.params().len(), 10);
        let b = random_batch(&p, 12, 10);
        let n = p.params().len();
        let base = p.params().values().to_vec();
        let kl_at = |v: Vec<f64>| kl(&p, &p.with_values(v).unwrap(), &b.states).unwrap();
        let h = 1e-4;
        let mut hess = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let shifted = |si: f64, sj: f64| {
                    let mut v = base.clone();
                    v[i] += si * h;
                    v[j] += sj * h;
                    kl_at(v)
                };
                hess[i][j] = (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0)) / (4.0 * h * h);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fv = fisher_vector_product(&p, &b.states, &v, 0.0).unwrap();
            for i in 0..n {
                let want: f64 = (0..n).map(|j| hess[i][j] * v[j]).sum();
                assert!((fv[i] - want).abs() < 1e-5 * want.abs().max(1.0), "row {i}: {} vs {want}", fv[i]);
            }
        }
    }

    #[test]
    fn cg_identity_diagonal_and_zero() {
        let b = vec![1.0, -2.0, 3.0];
        let mut calls = 0;
        let x = conjugate_gradient(
            |v| {
                calls += 1;
                Ok(v.to_vec())
            },
            &b,
            10,
            1e-12,
        )
        .unwrap();
        assert_eq!(x, b);
        assert_eq!(calls, 1);

        let diag = [2.0, 5.0, 0.5, 4.0];
        let b = vec![1.0, 1.0, -3.0, 2.0];
        let x = conjugate_gradient(|v| Ok(v.iter().zip(&diag).map(|(a, d)| a * d).collect()), &b, 4, 0.0).unwrap();
        for i in 0..4 {
            assert!((x[i] - b[i] / diag[i]).abs() < 1e-12);
        }
        assert_eq!(conjugate_gradient(|v| Ok(v.to_vec()), &[0.0, 0.0], 5, 1e-10).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let p = random_policy(12, MlpSpec::new(3, vec![4], 1));
        let mut b = random_batch(&p, 30, 13);
        b.advantages.fill(0.0);
        let (q, stats) = trpo_update(&p, &b, &TrpoConfig::default()).unwrap();
        assert_eq!(q.params(), p.params());
        assert!(!stats.accepted);
    }

    #[test]
    fn accepted_steps_respect_the_trust_region() {
        let cfg = TrpoConfig::default();
        let mut accepted = 0;
        for trial in 0..200 {
            let p = random_policy(100 + trial, MlpSpec::new(3, vec![8], 2));
            let b = random_batch(&p, 50, 1000 + trial);
            let (q, stats) = trpo_update(&p, &b, &cfg).unwrap();
            if stats.accepted {
                accepted += 1;
                assert!(stats.kl <= 1.5 * cfg.max_kl);
                assert!(stats.surrogate_after < stats.surrogate_before);
                assert!((kl(&p, &q, &b.states).unwrap() - stats.kl).abs() < 1e-12);
            }
        }
        assert!(accepted > 150);
    }

    /// One-step linear-quadratic problem: reward `-(a - c(s))^2` on two
    /// unit-vector states. The optimal linear mean policy hits `c(s)`
    /// exactly, so the optimal deterministic return is 0.
    #[test]
    fn linear_quadratic_toy_improves_to_optimum() {
        let targets = [0.7, -0.4];
        let states = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let spec = MlpSpec::new(2, vec![], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut policy = GaussianPolicy::new(spec, -0.5, &mut rng).unwrap();
        let eval = |p: &GaussianPolicy| -> f64 {
            states.iter().zip(&targets).map(|(s, c)| -(p.mean(s).unwrap()[0] - c).powi(2)).sum::<f64>() / 2.0
        };
        let start = eval(&policy);
        let mut prev = start;
        let cfg = TrpoConfig { max_kl: 0.02, ..TrpoConfig::default() };
        for _ in 0..60 {
            let mut batch = PolicyBatch::default();
            for i in 0..400 {
                let s = states[i % 2].clone();
                let a = policy.sample_action(&s, &mut rng).unwrap();
                batch.advantages.push(-(a[0] - targets[i % 2]).powi(2));
                batch.states.push(s);
                batch.actions.push(a);
            }
            standardize(&mut batch.advantages);
            policy = trpo_update(&policy, &batch, &cfg).unwrap().0;
            let now = eval(&policy);
            assert!(now >= prev - 0.02 * start.abs(), "return fell from {prev} to {now}");
            prev = prev.max(now);
        }
        assert!(eval(&policy) >= 0.05 * start, "{} vs start {start}", eval(&policy));
    }
}
