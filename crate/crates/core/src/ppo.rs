//! Proximal policy optimization.
//!
//! The learner minimizes
//! `−mean(min(rÂ, clip(r)Â)) + c_v·mean((V−R)²) − c_e·mean(H) + c_kl·mean(KL(π_old‖π))`
//! with Adam, after clipping the global gradient norm.

use crate::env::Observation;
use crate::policy::{log_softmax, Network, PolicyError};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::borrow::Borrow;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("non-finite {what} ({detail})")]
    NonFinite { what: &'static str, detail: String },
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub type Result<T> = std::result::Result<T, PpoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    /// Samples per learner per iteration.
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub epochs_per_iter: usize,
    pub total_iterations: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            clip_eps: 0.3,
            lr: 1e-4,
            gae_lambda: 0.95,
            vf_coef: 1.0,
            entropy_coef: 0.5,
            kl_coef: 0.2,
            batch_size: 512,
            minibatch_size: 128,
            epochs_per_iter: 4,
            total_iterations: 15_000,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PpoError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail(format!(
                "gae_lambda must lie in [0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.clip_eps > 0.0) {
            return fail(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("vf_coef", self.vf_coef),
            ("entropy_coef", self.entropy_coef),
            ("kl_coef", self.kl_coef),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.max_grad_norm > 0.0) {
            return fail(format!(
                "max_grad_norm must be positive, got {}",
                self.max_grad_norm
            ));
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.epochs_per_iter == 0 {
            return fail("batch, minibatch and epoch counts must be positive".into());
        }
        Ok(())
    }
}

/// One recorded decision of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    /// Input of a separate critic network, when the learner has one.
    pub critic_obs: Option<Observation>,
    pub action: usize,
    pub reward: f64,
    pub log_prob_old: f64,
    /// Full behaviour-policy logits, for the KL penalty.
    pub logits_old: Vec<f64>,
    pub value_pred: f64,
    pub done: bool,
}

/// Contiguous steps of one episode; `bootstrap_value` is `V(s_T)` when the
/// piece was cut before the episode ended, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub normalized: bool,
}

/// Generalized advantage estimation over one trajectory.
pub fn compute_gae(traj: &Trajectory, cfg: &PpoConfig) -> Result<AdvantageBatch> {
    if traj.is_empty() {
        return Err(PpoError::EmptyTrajectory);
    }
    let n = traj.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = traj.bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let s = &traj.steps[t];
        let live = if s.done { 0.0 } else { 1.0 };
        let delta = s.reward + cfg.gamma * next_value * live - s.value_pred;
        next_adv = delta + cfg.gamma * cfg.gae_lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = s.value_pred;
    }
    let returns = advantages
        .iter()
        .zip(&traj.steps)
        .map(|(a, s)| a + s.value_pred)
        .collect();
    Ok(AdvantageBatch {
        advantages,
        returns,
        normalized: false,
    })
}

/// Shifts and scales to zero mean, unit standard deviation (population).
/// Batches with fewer than two entries or zero spread are only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = adv.len() >= 2 && std > 1e-12;
    for a in adv.iter_mut() {
        *a -= mean;
        if scale {
            *a /= std;
        }
    }
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `d clipped_surrogate / d ratio`.
fn clipped_surrogate_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|lp| -lp.exp() * lp).sum()
}

/// `KL(p‖q)` for categorical distributions given as logits.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Ready-to-train sample: a [`Step`] joined with its advantage and return.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub critic_obs: Option<Observation>,
    pub action: usize,
    pub log_prob_old: f64,
    pub logits_old: Vec<f64>,
    pub advantage: f64,
    pub ret: f64,
}

/// Runs GAE on every trajectory, flattens them in order and (optionally)
/// normalizes the advantages across the whole batch.
pub fn build_samples(trajectories: &[Trajectory], cfg: &PpoConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for traj in trajectories.iter().filter(|t| !t.is_empty()) {
        let gae = compute_gae(traj, cfg)?;
        for ((s, adv), ret) in traj.steps.iter().zip(gae.advantages).zip(gae.returns) {
            samples.push(Sample {
                obs: s.obs.clone(),
                critic_obs: s.critic_obs.clone(),
                action: s.action,
                log_prob_old: s.log_prob_old,
                logits_old: s.logits_old.clone(),
                advantage: adv,
                ret,
            });
        }
    }
    if cfg.normalize_advantages {
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize_advantages(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
    }
    Ok(samples)
}

/// Actor network, optionally paired with a separate critic. Parameters are
/// one flat vector: the actor's first, then the critic's.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Network,
    pub critic: Option<Network>,
}

impl ActorCritic {
    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.as_ref().map_or(0, Network::param_count)
    }

    pub fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.actor.param_count())
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.actor.init_params(rng).values;
        if let Some(c) = &self.critic {
            p.extend(c.init_params(rng).values);
        }
        p
    }

    /// Action logits from the actor and the value estimate from the critic
    /// (or the actor's own value head).
    pub fn evaluate(
        &self,
        params: &[f64],
        obs: &Observation,
        critic_obs: Option<&Observation>,
    ) -> Result<(Vec<f64>, f64)> {
        let (pa, pc) = self.split(params);
        let out = self.actor.forward(pa, obs)?;
        let value = match (&self.critic, critic_obs) {
            (Some(c), Some(co)) => c.forward(pc, co)?.value,
            (Some(_), None) => {
                return Err(PpoError::Config(
                    "critic input missing for centralized critic".into(),
                ))
            }
            (None, _) => out.value,
        };
        Ok((out.logits, value))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub kl: f64,
}

/// PPO loss over `samples` and, when `want_grad`, its gradient.
pub fn ppo_loss<S: Borrow<Sample> + Sync>(
    model: &ActorCritic,
    params: &[f64],
    samples: &[S],
    cfg: &PpoConfig,
    want_grad: bool,
) -> Result<(LossComponents, Option<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(PpoError::EmptyTrajectory);
    }
    if params.len() != model.param_count() {
        return Err(PpoError::Shape {
            what: "learner parameters",
            expected: model.param_count(),
            got: params.len(),
        });
    }
    let inv_n = 1.0 / samples.len() as f64;
    let per_sample: Vec<(LossComponents, Option<Vec<f64>>)> = samples
        .par_iter()
        .map(|s| sample_loss(model, params, s.borrow(), cfg, inv_n, want_grad))
        .collect::<Result<_>>()?;

    let mut comps = LossComponents::default();
    let mut grad = want_grad.then(|| vec![0.0; params.len()]);
    for (c, g) in &per_sample {
        comps.policy += c.policy;
        comps.value += c.value;
        comps.entropy += c.entropy;
        comps.kl += c.kl;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    comps.policy *= inv_n;
    comps.value *= inv_n;
    comps.entropy *= inv_n;
    comps.kl *= inv_n;
    comps.total = comps.policy + cfg.vf_coef * comps.value - cfg.entropy_coef * comps.entropy
        + cfg.kl_coef * comps.kl;
    if !comps.total.is_finite() {
        return Err(PpoError::NonFinite {
            what: "loss",
            detail: format!("{comps:?}"),
        });
    }
    Ok((comps, grad))
}

/// Per-sample contributions. `policy` holds `−surrogate`; the caller
/// averages. The gradient is already scaled by `inv_n`.
fn sample_loss(
    model: &ActorCritic,
    params: &[f64],
    s: &Sample,
    cfg: &PpoConfig,
    inv_n: f64,
    want_grad: bool,
) -> Result<(LossComponents, Option<Vec<f64>>)> {
    let (pa, pc) = model.split(params);
    let (out, cache) = model.actor.forward_cached(pa, &s.obs)?;
    let critic_pass = match (&model.critic, &s.critic_obs) {
        (Some(c), Some(co)) => Some(c.forward_cached(pc, co)?),
        (Some(_), None) => {
            return Err(PpoError::Config("sample lacks critic input".into()));
        }
        (None, _) => None,
    };
    let value = critic_pass.as_ref().map_or(out.value, |(o, _)| o.value);

    let logp = log_softmax(&out.logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let old_logp = log_softmax(&s.logits_old);
    let ratio = (logp[s.action] - s.log_prob_old).exp();
    let surrogate = clipped_surrogate(ratio, s.advantage, cfg.clip_eps);
    let ent: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    let kl: f64 = old_logp
        .iter()
        .zip(&logp)
        .map(|(o, n)| o.exp() * (o - n))
        .sum();
    let verr = value - s.ret;
    let comps = LossComponents {
        total: 0.0,
        policy: -surrogate,
        value: verr * verr,
        entropy: ent,
        kl,
    };
    if !want_grad {
        return Ok((comps, None));
    }

    // d loss / d logits, term by term.
    let slope = clipped_surrogate_slope(ratio, s.advantage, cfg.clip_eps);
    let d_logp_a = -slope * ratio;
    let mut up_logits = vec![0.0; probs.len()];
    for (j, g) in up_logits.iter_mut().enumerate() {
        let onehot = if j == s.action { 1.0 } else { 0.0 };
        let d_policy = d_logp_a * (onehot - probs[j]);
        let d_entropy = -probs[j] * (logp[j] + ent);
        let d_kl = probs[j] - old_logp[j].exp();
        *g = inv_n * (d_policy - cfg.entropy_coef * d_entropy + cfg.kl_coef * d_kl);
    }
    let up_value = inv_n * cfg.vf_coef * 2.0 * verr;

    let mut grad = vec![0.0; params.len()];
    let na = model.actor.param_count();
    let (ga, gc) = grad.split_at_mut(na);
    match (&model.critic, critic_pass) {
        (Some(critic), Some((_, ccache))) => {
            model.actor.backward_into(pa, &cache, &up_logits, 0.0, ga)?;
            let zeros = vec![0.0; critic.spec().n_actions];
            critic.backward_into(pc, &ccache, &zeros, up_value, gc)?;
        }
        _ => model
            .actor
            .backward_into(pa, &cache, &up_logits, up_value, ga)?,
    }
    Ok((comps, Some(grad)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam step descending on the loss whose gradient is `grad`.
pub fn update(
    params: &[f64],
    grad: &[f64],
    state: &AdamState,
    cfg: &PpoConfig,
) -> Result<(Vec<f64>, AdamState)> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(PpoError::Shape {
            what: "gradient",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(PpoError::NonFinite {
            what: "gradient",
            detail: format!("entry {i} is {}", grad[i]),
        });
    }
    let step = state.step + 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let mut next = AdamState {
        m: Vec::with_capacity(params.len()),
        v: Vec::with_capacity(params.len()),
        step,
    };
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let m = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        let v = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        out.push(params[i] - cfg.lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
        next.m.push(m);
        next.v.push(v);
    }
    Ok((out, next))
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Owns one parameter vector and its optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: ActorCritic,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
    pub cfg: PpoConfig,
}

impl Learner {
    pub fn new(model: ActorCritic, params: Vec<f64>, cfg: PpoConfig) -> Result<Self> {
        cfg.validate()?;
        if params.len() != model.param_count() {
            return Err(PpoError::Shape {
                what: "learner parameters",
                expected: model.param_count(),
                got: params.len(),
            });
        }
        let optimizer = AdamState::new(params.len());
        Ok(Self {
            model,
            params,
            optimizer,
            cfg,
        })
    }

    /// `epochs_per_iter` shuffled passes of minibatch updates. Returns loss
    /// components averaged over every minibatch.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        samples: &[Sample],
        rng: &mut R,
    ) -> Result<LossComponents> {
        if samples.is_empty() {
            return Err(PpoError::EmptyTrajectory);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut sum = LossComponents::default();
        let mut batches = 0usize;
        for _ in 0..self.cfg.epochs_per_iter {
            order.shuffle(rng);
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let mb: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let (c, grad) = ppo_loss(&self.model, &self.params, &mb, &self.cfg, true)?;
                let mut grad = grad.expect("gradient requested");
                clip_grad_norm(&mut grad, self.cfg.max_grad_norm);
                let (params, opt) = update(&self.params, &grad, &self.optimizer, &self.cfg)?;
                self.params = params;
                self.optimizer = opt;
                sum.total += c.total;
                sum.policy += c.policy;
                sum.value += c.value;
                sum.entropy += c.entropy;
                sum.kl += c.kl;
                batches += 1;
            }
        }
        let k = batches as f64;
        Ok(LossComponents {
            total: sum.total / k,
            policy: sum.policy / k,
            value: sum.value / k,
            entropy: sum.entropy / k,
            kl: sum.kl / k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(reward: f64, value: f64, done: bool) -> Step {
        Step {
            obs: Observation::zeros(1, 1),
            critic_obs: None,
            action: 0,
            reward,
            log_prob_old: -1.0,
            logits_old: vec![0.0, 0.0],
            value_pred: value,
            done,
        }
    }

    fn cfg(gamma: f64, lambda: f64) -> PpoConfig {
        PpoConfig {
            gamma,
            gae_lambda: lambda,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn gae_two_step_terminal() {
        let traj = Trajectory {
            steps: vec![step(1.0, 0.5, false), step(1.0, 0.5, true)],
            bootstrap_value: 0.0,
        };
        let b = compute_gae(&traj, &cfg(0.95, 0.95)).unwrap();
        assert!((b.advantages[0] - 1.42625).abs() < 1e-12);
        assert!((b.advantages[1] - 0.5).abs() < 1e-12);
        assert!((b.returns[0] - 1.92625).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let traj = Trajectory {
            steps: vec![
                step(0.3, 0.2, false),
                step(-0.1, 0.7, false),
                step(0.5, 0.1, false),
            ],
            bootstrap_value: 0.4,
        };
        let c = cfg(0.9, 0.0);
        let b = compute_gae(&traj, &c).unwrap();
        let deltas = [
            0.3 + 0.9 * 0.7 - 0.2,
            -0.1 + 0.9 * 0.1 - 0.7,
            0.5 + 0.9 * 0.4 - 0.1,
        ];
        assert_eq!(b.advantages, deltas.to_vec());
    }

    #[test]
    fn gae_lambda_one_is_discounted_return() {
        let traj = Trajectory {
            steps: vec![
                step(1.0, 0.0, false),
                step(1.0, 0.0, false),
                step(1.0, 0.0, true),
            ],
            bootstrap_value: 0.0,
        };
        let b = compute_gae(&traj, &cfg(0.95, 1.0)).unwrap();
        assert!((b.advantages[0] - 2.8525).abs() < 1e-12);
    }

    #[test]
    fn gae_empty_is_error() {
        assert!(matches!(
            compute_gae(&Trajectory::default(), &PpoConfig::default()),
            Err(PpoError::EmptyTrajectory)
        ));
    }

    #[test]
    fn surrogate_cases() {
        assert!((clipped_surrogate(1.5, 2.0, 0.3) - 2.6).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.3) + 0.7).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, 0.77, 0.3), 0.77);
        assert_eq!(clipped_surrogate(1.0, -3.5, 0.3), -3.5);
    }

    #[test]
    fn entropy_and_kl_basics() {
        assert!((entropy(&[0.0; 3]) - 3f64.ln()).abs() < 1e-15);
        assert!(kl_divergence(&[0.2, -1.0, 3.0], &[0.2, -1.0, 3.0]).abs() < 1e-12);
        assert!(kl_divergence(&[0.2, -1.0, 3.0], &[1.0, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / 4.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        let mut single = vec![3.0];
        normalize_advantages(&mut single);
        assert_eq!(single, vec![0.0]);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let c = PpoConfig::default();
        let (p, s) = update(&[0.5], &[1.0], &AdamState::new(1), &c).unwrap();
        assert!((p[0] - (0.5 - 1e-4)).abs() < 1e-12);
        assert_eq!(s.step, 1);

        // zero gradient on a fresh state: nothing moves
        let (p0, _) = update(&[0.25, -1.0], &[0.0, 0.0], &AdamState::new(2), &c).unwrap();
        assert_eq!(p0, vec![0.25, -1.0]);
        // after a step the moments only decay
        let (_, s2) = update(&p, &[0.0], &s, &c).unwrap();
        assert_eq!(s2.m[0], 0.9 * s.m[0]);
        assert_eq!(s2.v[0], 0.999 * s.v[0]);

        assert_eq!(
            update(&[0.1, 0.2], &[0.3, 0.4], &AdamState::new(2), &c).unwrap(),
            update(&[0.1, 0.2], &[0.3, 0.4], &AdamState::new(2), &c).unwrap()
        );
    }

    #[test]
    fn adam_rejects_nan() {
        let c = PpoConfig::default();
        assert!(matches!(
            update(&[0.0], &[f64::NAN], &AdamState::new(1), &c),
            Err(PpoError::NonFinite { .. })
        ));
    }

    #[test]
    fn grad_clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(cfg(1.5, 0.95).validate().is_err());
        assert!(cfg(0.0, 0.95).validate().is_err());
        assert!(PpoConfig {
            clip_eps: 0.0,
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
    }
}
