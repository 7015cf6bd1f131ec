use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ppo::{fit_value_head, normalize_advantages, ppo_update, PpoConfig, PpoStats, StageMode};
use super::reward::RewardConfig;
use super::rollout::{rollout_episode, rollout_single, rollout_stage, RolloutEnv, StageTrajectory};
use super::RlError;
use crate::fingerprints::{default_fingerprint, Fingerprint};
use crate::metrics::AcceptanceSpec;
use crate::policy::{Adam, AdamConfig, Policy, PolicyParameters, TokenId};
use crate::sft::PromptSpec;
use crate::smiles::parse_smiles;

/// One row of the training log. Rewards are unscaled means over molecules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_r_div: f64,
    pub mean_r_match: f64,
    /// Sampled KL to the reference policy per action.
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub validity: f64,
    pub molecules: usize,
    pub ppo: PpoStats,
    /// The update was skipped after a non-finite loss.
    pub skipped: bool,
}

/// Parameters after `iteration` updates, scored by the batch rolled out with
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub params: PolicyParameters,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    /// The checkpoint with the highest mean reward.
    pub params: PolicyParameters,
    pub best_iteration: usize,
    pub history: Vec<IterationStats>,
    pub checkpoints: Vec<Checkpoint>,
}

struct Task<'a> {
    policy: &'a Policy,
    reference: &'a PolicyParameters,
    acceptors: &'a [AcceptanceSpec],
    prompts: &'a [Vec<TokenId>],
    reward: &'a RewardConfig,
    cfg: &'a PpoConfig,
    k: usize,
}

impl<'a> Task<'a> {
    fn env(&self, prompt: usize) -> RolloutEnv<'a> {
        RolloutEnv {
            policy: self.policy,
            reference: self.reference,
            acceptor: &self.acceptors[prompt],
            reward: self.reward,
            kl_coef: self.cfg.kl_coef,
            max_tokens: self.cfg.max_tokens,
            episode_len: self.k,
        }
    }
}

fn episode_rng(seed: u64, iteration: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 24) | episode as u64);
    rng
}

fn prompt_of(cfg: &PpoConfig, n_prompts: usize, iteration: usize, episode: usize) -> usize {
    (iteration * cfg.batch_size + episode) % n_prompts
}

/// Whole episodes, in episode order. Failed episodes are logged and dropped.
fn rollout_batch(task: &Task<'_>, iteration: usize) -> Vec<StageTrajectory> {
    let cfg = task.cfg;
    let results: Vec<Result<Vec<StageTrajectory>, RlError>> = (0..cfg.batch_size)
        .into_par_iter()
        .map(|e| {
            let pi = prompt_of(cfg, task.prompts.len(), iteration, e);
            let env = task.env(pi);
            let mut rng = episode_rng(cfg.seed, iteration, e);
            match cfg.stage_mode {
                StageMode::Multi => rollout_episode(&env, &task.prompts[pi], &mut rng),
                StageMode::Single => {
                    rollout_single(&env, &task.prompts[pi], &mut rng).map(|t| vec![t])
                }
            }
        })
        .collect();
    flatten(results, iteration)
}

fn flatten(results: Vec<Result<Vec<StageTrajectory>, RlError>>, iteration: usize) -> Vec<StageTrajectory> {
    let mut out = Vec::new();
    for (e, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.extend(t),
            Err(err) => log::warn!("iteration {iteration}, episode {e}: {err}"),
        }
    }
    out
}

struct EpisodeState {
    prompt: usize,
    context: Vec<TokenId>,
    previous: Vec<Fingerprint>,
    rng: ChaCha8Rng,
    alive: bool,
}

fn fill_advantages(batch: &mut [StageTrajectory], cfg: &PpoConfig) {
    for t in batch.iter_mut() {
        t.compute_advantages(cfg.gamma, cfg.lambda);
    }
    normalize_advantages(batch);
}

/// Multi-stage rollout with one update after every stage.
fn per_stage_iteration(
    policy: &mut Policy,
    adam: &mut Adam,
    base: &Task<'_>,
    iteration: usize,
    upd_rng: &mut ChaCha8Rng,
) -> (Vec<StageTrajectory>, Vec<PpoStats>, bool) {
    let cfg = base.cfg;
    let mut states: Vec<EpisodeState> = (0..cfg.batch_size)
        .map(|e| {
            let prompt = prompt_of(cfg, base.prompts.len(), iteration, e);
            EpisodeState {
                prompt,
                context: base.prompts[prompt].clone(),
                previous: Vec::new(),
                rng: episode_rng(cfg.seed, iteration, e),
                alive: true,
            }
        })
        .collect();
    let mut all = Vec::new();
    let mut stats = Vec::new();
    let mut skipped = false;
    for stage in 1..=base.k {
        let task = Task {
            policy: &*policy,
            ..*base
        };
        let results: Vec<Result<Vec<StageTrajectory>, RlError>> = states
            .par_iter_mut()
            .map(|s| {
                if !s.alive {
                    return Ok(Vec::new());
                }
                let env = task.env(s.prompt);
                let t = rollout_stage(&env, &s.context, &s.previous, stage, &mut s.rng);
                match &t {
                    Ok(t) => {
                        if let Some(c) = &t.molecules[0].canonical {
                            let g = parse_smiles(c.as_str()).expect("canonical parses");
                            s.previous.push(default_fingerprint(&g));
                        }
                        s.context.extend_from_slice(&t.tokens);
                        s.alive = t.continues();
                    }
                    Err(_) => s.alive = false,
                }
                t.map(|t| vec![t])
            })
            .collect();
        let mut batch = flatten(results, iteration);
        if batch.is_empty() {
            break;
        }
        fill_advantages(&mut batch, cfg);
        match ppo_update(&mut policy.params, adam, &batch, cfg, upd_rng) {
            Ok(s) => stats.push(s),
            Err(e) => {
                log::warn!("iteration {iteration}, stage {stage}: {e}; update skipped");
                skipped = true;
            }
        }
        all.extend(batch);
    }
    (all, stats, skipped)
}

fn summarize(iteration: usize, batch: &[StageTrajectory], ppo: &[PpoStats], skipped: bool) -> IterationStats {
    let molecules: Vec<_> = batch.iter().flat_map(|t| t.molecules.iter()).collect();
    let n = molecules.len().max(1) as f64;
    let tokens: usize = batch.iter().map(|t| t.len()).sum();
    let mut merged = PpoStats::default();
    for s in ppo {
        merged.policy_loss += s.policy_loss / ppo.len() as f64;
        merged.value_loss += s.value_loss / ppo.len() as f64;
        merged.approx_kl += s.approx_kl / ppo.len() as f64;
        merged.clip_fraction += s.clip_fraction / ppo.len() as f64;
        merged.grad_norm += s.grad_norm / ppo.len() as f64;
        merged.steps += s.steps;
    }
    IterationStats {
        iteration,
        mean_reward: molecules.iter().map(|m| m.reward()).sum::<f64>() / n,
        mean_r_div: molecules.iter().map(|m| m.r_div).sum::<f64>() / n,
        mean_r_match: molecules.iter().map(|m| m.r_match).sum::<f64>() / n,
        mean_kl: batch.iter().map(|t| t.kl()).sum::<f64>() / tokens.max(1) as f64,
        clip_fraction: merged.clip_fraction,
        validity: molecules.iter().filter(|m| m.is_valid()).count() as f64 / n,
        molecules: molecules.len(),
        ppo: merged,
        skipped,
    }
}

/// PPO fine-tuning of `sft` on `prompts`, `k` molecules per episode. The
/// supervised parameters stay frozen as the KL reference. A checkpoint is
/// taken every `checkpoint_every` updates and after the last one, each
/// scored by a fresh rollout batch; the best-scoring one is returned.
pub fn train_rl(
    sft: &Policy,
    prompts: &[PromptSpec],
    cfg: &PpoConfig,
    reward: &RewardConfig,
    k: usize,
) -> Result<RlOutcome, RlError> {
    cfg.validate()?;
    reward.validate()?;
    if prompts.is_empty() {
        return Err(RlError::NoPrompts);
    }
    if k == 0 {
        return Err(RlError::InvalidConfig("k must be at least 1".into()));
    }
    let acceptors = prompts
        .iter()
        .map(|p| reward.acceptor(p))
        .collect::<Result<Vec<_>, _>>()?;
    let prompt_tokens: Vec<Vec<TokenId>> =
        prompts.iter().map(|p| p.desc_div_tokens(&sft.vocab)).collect();
    let reference = sft.params.clone();
    let mut policy = sft.clone();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            max_grad_norm: cfg.max_grad_norm,
            ..AdamConfig::default()
        },
        &policy.params,
    );
    if cfg.value_warmup > 0 {
        let task = Task {
            policy: &policy,
            reference: &reference,
            acceptors: &acceptors,
            prompts: &prompt_tokens,
            reward,
            cfg,
            k,
        };
        // Iteration indices past the last training iteration keep these
        // episodes' random streams distinct from the training ones.
        let batch: Vec<StageTrajectory> = (0..cfg.value_warmup)
            .flat_map(|w| rollout_batch(&task, cfg.iterations + 1 + w))
            .collect();
        match fit_value_head(&mut policy.params, &batch, cfg.gamma, cfg.value_ridge) {
            Some(mse) => log::info!("value head fitted on {} trajectories, mse {mse:.4}", batch.len()),
            None => log::warn!("value head fit failed; keeping the initial head"),
        }
    }
    let mut upd_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    upd_rng.set_stream(u64::MAX);
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();

    for it in 0..=cfg.iterations {
        let is_checkpoint = it > 0 && (it % cfg.checkpoint_every == 0 || it == cfg.iterations);
        if it < cfg.iterations && cfg.per_stage_updates && cfg.stage_mode == StageMode::Multi {
            let pre = policy.params.clone();
            // The policy field is replaced by the live policy at every stage.
            let base = Task {
                policy: sft,
                reference: &reference,
                acceptors: &acceptors,
                prompts: &prompt_tokens,
                reward,
                cfg,
                k,
            };
            let (batch, stats, skipped) =
                per_stage_iteration(&mut policy, &mut adam, &base, it, &mut upd_rng);
            let row = summarize(it, &batch, &stats, skipped);
            if is_checkpoint {
                checkpoints.push(Checkpoint {
                    iteration: it,
                    mean_reward: row.mean_reward,
                    params: pre,
                });
            }
            history.push(row);
            continue;
        }
        let task = Task {
            policy: &policy,
            reference: &reference,
            acceptors: &acceptors,
            prompts: &prompt_tokens,
            reward,
            cfg,
            k,
        };
        let mut batch = rollout_batch(&task, it);
        if is_checkpoint {
            checkpoints.push(Checkpoint {
                iteration: it,
                mean_reward: summarize(it, &batch, &[], false).mean_reward,
                params: policy.params.clone(),
            });
        }
        if it == cfg.iterations {
            history.push(summarize(it, &batch, &[], false));
            break;
        }
        fill_advantages(&mut batch, cfg);
        let (stats, skipped) = match ppo_update(&mut policy.params, &mut adam, &batch, cfg, &mut upd_rng) {
            Ok(s) => (vec![s], false),
            Err(e) => {
                log::warn!("iteration {it}: {e}; update skipped");
                (Vec::new(), true)
            }
        };
        let row = summarize(it, &batch, &stats, skipped);
        log::debug!(
            "rl iteration {it}: reward {:.4} div {:.4} match {:.4} kl {:.5} valid {:.3}",
            row.mean_reward,
            row.mean_r_div,
            row.mean_r_match,
            row.mean_kl,
            row.validity
        );
        history.push(row);
    }

    let best = checkpoints
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.mean_reward.total_cmp(&b.mean_reward).then(j.cmp(i)))
        .map(|(i, _)| i);
    let (params, best_iteration) = match best {
        Some(i) => (checkpoints[i].params.clone(), checkpoints[i].iteration),
        None => (policy.params.clone(), cfg.iterations),
    };
    Ok(RlOutcome {
        params,
        best_iteration,
        history,
        checkpoints,
    })
}

pub fn write_metrics_csv<W: Write>(mut w: W, history: &[IterationStats]) -> std::io::Result<()> {
    writeln!(
        w,
        "iteration,mean_reward,mean_r_div,mean_r_match,mean_kl,clip_fraction,validity"
    )?;
    for r in history {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.iteration,
            r.mean_reward,
            r.mean_r_div,
            r.mean_r_match,
            r.mean_kl,
            r.clip_fraction,
            r.validity
        )?;
    }
    Ok(())
}
