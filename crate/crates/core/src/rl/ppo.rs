use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{action_log_prob, StageTrajectory};
use crate::decoding::Termination;
use super::RlError;
use nalgebra::{DMatrix, DVector};

use crate::policy::{
    backward, forward, Adam, Block, Gradients, OutputGrads, PolicyParameters, TokenId, EOS, SEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// One trajectory per molecule, conditioned on the earlier ones.
    Multi,
    /// One trajectory per episode.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub kl_coef: f64,
    pub iterations: usize,
    /// Episodes rolled out per iteration.
    pub batch_size: usize,
    /// Episodes per gradient step.
    pub minibatch_size: usize,
    /// Passes over each rollout batch.
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub stage_mode: StageMode,
    /// Multi mode only: update after every stage instead of once per
    /// iteration over all stages.
    pub per_stage_updates: bool,
    pub checkpoint_every: usize,
    /// Rollout batches of the supervised policy used to fit the value head
    /// before the first update; 0 keeps the initial head.
    pub value_warmup: usize,
    /// Ridge penalty of the value head fit, per sample.
    pub value_ridge: f64,
    /// Train only the value head on the value loss, keeping its gradient
    /// out of the shared recurrent trunk.
    pub detach_value: bool,
    /// Token limit for one molecule.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 1.0,
            lambda: 0.95,
            value_coef: 0.5,
            kl_coef: 0.01,
            iterations: 200,
            batch_size: 64,
            minibatch_size: 4,
            epochs: 2,
            learning_rate: 1e-4,
            max_grad_norm: Some(1.0),
            stage_mode: StageMode::Multi,
            per_stage_updates: false,
            checkpoint_every: 25,
            value_warmup: 4,
            value_ridge: 1e-3,
            detach_value: true,
            max_tokens: 64,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.value_coef >= 0.0 && self.kl_coef >= 0.0) {
            return bad("value_coef and kl_coef must be non-negative");
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.epochs == 0 {
            return bad("batch_size, minibatch_size and epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.value_ridge > 0.0 && self.value_ridge.is_finite()) {
            return bad("value_ridge must be positive");
        }
        if self.checkpoint_every == 0 || self.max_tokens == 0 {
            return bad("checkpoint_every and max_tokens must be at least 1");
        }
        Ok(())
    }
}

/// Generalized advantage estimates and returns for one trajectory. The value
/// past the last action is 0.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        gae = delta + gamma * lambda * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

impl StageTrajectory {
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        (self.advantages, self.returns) =
            compute_advantages(&self.rewards, &self.values, gamma, lambda);
    }
}

/// Shifts and scales advantages across the whole batch to mean 0 and
/// standard deviation 1. A constant batch is only centered.
pub fn normalize_advantages(batch: &mut [StageTrajectory]) {
    let all: Vec<f64> = batch.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for t in batch {
        t.advantages.iter_mut().for_each(|a| *a = (*a - mean) * scale);
    }
}

/// `min(ρA, clip(ρ, 1-ε, 1+ε)A)` and whether the unclipped branch is the
/// minimum, i.e. whether the term has a gradient.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Token-weighted averages over every minibatch step of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean of `log π_old − log π_new` over actions.
    pub approx_kl: f64,
    /// Fraction of actions whose surrogate term was clipped.
    pub clip_fraction: f64,
    /// Mean pre-clip gradient norm per step.
    pub grad_norm: f64,
    pub steps: usize,
}

/// Runs of trajectories that continue one another's context and can share
/// one forward pass.
fn episode_groups(batch: &[StageTrajectory]) -> Vec<Range<usize>> {
    let mut groups: Vec<Range<usize>> = Vec::new();
    for i in 0..batch.len() {
        let chained = i > 0 && {
            let (prev, cur) = (&batch[i - 1], &batch[i]);
            cur.context.len() == prev.context.len() + prev.tokens.len()
                && cur.context.starts_with(&prev.context)
                && cur.context[prev.context.len()..] == prev.tokens[..]
        };
        match groups.last_mut() {
            Some(g) if chained => g.end = i + 1,
            _ => groups.push(i..i + 1),
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    policy: f64,
    value: f64,
    kl: f64,
    clipped: usize,
    tokens: usize,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.policy += o.policy;
        self.value += o.value;
        self.kl += o.kl;
        self.clipped += o.clipped;
        self.tokens += o.tokens;
    }
}

/// Groups per gradient accumulator, fixed so results do not depend on the
/// thread count.
const GROUP_CHUNK: usize = 4;

fn group_grad(
    p: &PolicyParameters,
    batch: &[StageTrajectory],
    group: Range<usize>,
    n_total: f64,
    cfg: &PpoConfig,
    grads: &mut Gradients,
) -> Sums {
    let first = &batch[group.start];
    let mut stream: Vec<TokenId> = first.context.clone();
    for t in &batch[group.clone()] {
        stream.extend_from_slice(&t.tokens);
    }
    let trace = forward(p, &stream[..stream.len() - 1]);
    let mut out = OutputGrads::zeros(trace.len());
    let mut sums = Sums::default();
    for t in &batch[group] {
        let offset = t.context.len();
        for (j, &tok) in t.tokens.iter().enumerate() {
            let pos = offset + j - 1;
            let lp_row = trace.log_probs_at(pos);
            let lp = action_log_prob(lp_row, tok);
            let ratio = (lp - t.log_probs[j]).exp();
            let adv = t.advantages[j];
            let (obj, active) = clipped_surrogate(ratio, adv, cfg.clip_epsilon);
            sums.policy -= obj;
            sums.kl += t.log_probs[j] - lp;
            sums.tokens += 1;
            if active {
                let coef = -ratio * adv / n_total;
                let mut dl: Vec<f64> = lp_row.iter().map(|l| -coef * l.exp()).collect();
                if Termination::of(tok).is_some() {
                    for end in [SEP, EOS] {
                        dl[end as usize] += coef * (lp_row[end as usize] - lp).exp();
                    }
                } else {
                    dl[tok as usize] += coef;
                }
                out.dlogits[pos] = Some(dl);
            } else {
                sums.clipped += 1;
            }
            let err = trace.values[pos] - t.returns[j];
            sums.value += err * err;
            let dv = cfg.value_coef * 2.0 * err / n_total;
            if cfg.detach_value {
                let g = grads.block_mut(Block::WValue);
                for (gi, hi) in g.iter_mut().zip(trace.hidden_at(pos)) {
                    *gi += dv * hi;
                }
                grads.block_mut(Block::BValue)[0] += dv;
            } else {
                out.dvalues[pos] = dv;
            }
        }
    }
    backward(p, &trace, &out, grads);
    sums
}

/// Least-squares fit of the linear value head to discounted reward-to-go,
/// with the rest of the network frozen. Returns the mean squared error of
/// the fitted head, or `None` when the batch has no actions or the system is
/// singular.
pub fn fit_value_head(
    params: &mut PolicyParameters,
    batch: &[StageTrajectory],
    gamma: f64,
    ridge: f64,
) -> Option<f64> {
    let d = params.dims().d_h + 1;
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::new();
    for group in episode_groups(batch) {
        let first = &batch[group.start];
        let mut stream: Vec<TokenId> = first.context.clone();
        for t in &batch[group.clone()] {
            stream.extend_from_slice(&t.tokens);
        }
        let trace = forward(params, &stream[..stream.len() - 1]);
        for t in &batch[group] {
            let (_, targets) = compute_advantages(&t.rewards, &vec![0.0; t.len()], gamma, 1.0);
            for (j, y) in targets.into_iter().enumerate() {
                let mut x = trace.hidden_at(t.context.len() + j - 1).to_vec();
                x.push(1.0);
                samples.push((x, y));
            }
        }
    }
    if samples.is_empty() {
        return None;
    }
    for (x, y) in &samples {
        let x = DVector::from_column_slice(x);
        xtx.ger(1.0, &x, &x, 1.0);
        xty.axpy(*y, &x, 1.0);
    }
    let n = samples.len() as f64;
    for i in 0..d {
        xtx[(i, i)] += ridge * n;
    }
    let w = xtx.cholesky()?.solve(&xty);
    params.block_mut(Block::WValue).copy_from_slice(&w.as_slice()[..d - 1]);
    params.block_mut(Block::BValue)[0] = w[d - 1];
    let mse = samples
        .iter()
        .map(|(x, y)| (x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() - y).powi(2))
        .sum::<f64>()
        / n;
    Some(mse)
}

/// Clipped-surrogate loss, its gradient, and the raw sums over one
/// minibatch of episode groups.
fn minibatch(
    p: &PolicyParameters,
    batch: &[StageTrajectory],
    groups: &[Range<usize>],
    cfg: &PpoConfig,
) -> (f64, Gradients, Sums) {
    let n_total: usize = groups
        .iter()
        .flat_map(|g| batch[g.clone()].iter())
        .map(|t| t.len())
        .sum();
    let n = n_total.max(1) as f64;
    let partials: Vec<(Gradients, Sums)> = groups
        .par_chunks(GROUP_CHUNK)
        .map(|chunk| {
            let mut grads = p.zeros_like();
            let mut sums = Sums::default();
            for g in chunk {
                sums.add(&group_grad(p, batch, g.clone(), n, cfg, &mut grads));
            }
            (grads, sums)
        })
        .collect();
    let mut grads = p.zeros_like();
    let mut sums = Sums::default();
    for (g, s) in &partials {
        grads.add_assign(g);
        sums.add(s);
    }
    let loss = sums.policy / n + cfg.value_coef * sums.value / n;
    (loss, grads, sums)
}

/// The PPO loss of a batch under `params` without updating anything.
#[cfg(test)]
pub(crate) fn batch_loss(
    params: &PolicyParameters,
    batch: &[StageTrajectory],
    cfg: &PpoConfig,
) -> (f64, f64, f64) {
    let groups = episode_groups(batch);
    let (loss, _, s) = minibatch(params, batch, &groups, cfg);
    let n = s.tokens.max(1) as f64;
    (loss, s.policy / n, s.value / n)
}

/// Several epochs of clipped-surrogate minibatch updates over a rollout
/// batch whose advantages and returns are filled in. On a non-finite loss
/// the parameters and optimizer state are left untouched.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    adam: &mut Adam,
    batch: &[StageTrajectory],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats, RlError> {
    for t in batch {
        assert_eq!(t.advantages.len(), t.len(), "advantages not computed");
    }
    let mut p = params.clone();
    let mut opt = adam.clone();
    let mut groups = episode_groups(batch);
    let mut total = Sums::default();
    let mut grad_norm = 0.0;
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        groups.shuffle(rng);
        for mb in groups.chunks(cfg.minibatch_size) {
            let (loss, grads, sums) = minibatch(&p, batch, mb, cfg);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(RlError::NonFiniteLoss);
            }
            grad_norm += opt.step(&mut p, &grads);
            steps += 1;
            total.add(&sums);
        }
    }
    if !p.all_finite() {
        return Err(RlError::NonFiniteLoss);
    }
    *params = p;
    *adam = opt;
    let n = total.tokens.max(1) as f64;
    Ok(PpoStats {
        policy_loss: total.policy / n,
        value_loss: total.value / n,
        approx_kl: total.kl / n,
        clip_fraction: total.clipped as f64 / n,
        grad_norm: grad_norm / steps.max(1) as f64,
        steps,
    })
}
