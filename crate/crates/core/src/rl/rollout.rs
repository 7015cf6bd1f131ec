use rand::Rng;

use super::reward::{reward_div, reward_match, RewardConfig};
use super::RlError;
use crate::decoding::{split_segments, Sampler, Termination};
use crate::fingerprints::{default_fingerprint, Fingerprint};
use crate::metrics::AcceptanceSpec;
use crate::policy::{log_softmax, step, Policy, PolicyParameters, TokenId, EOS, SEP};
use crate::smiles::{parse_smiles, CanonicalSmiles};

/// What a rollout needs besides the context: the policy being trained, the
/// frozen reference it is penalized against, and the reward settings.
#[derive(Debug, Clone, Copy)]
pub struct RolloutEnv<'a> {
    pub policy: &'a Policy,
    pub reference: &'a PolicyParameters,
    pub acceptor: &'a AcceptanceSpec,
    pub reward: &'a RewardConfig,
    pub kl_coef: f64,
    /// Token limit for one molecule.
    pub max_tokens: usize,
    /// Molecules per episode. Closing one writes a separator before this
    /// count is reached and the end token at it.
    pub episode_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeOutcome {
    pub raw: String,
    pub canonical: Option<CanonicalSmiles>,
    /// Index into the trajectory tokens of the action that completed the
    /// molecule.
    pub end: usize,
    pub termination: Termination,
    pub r_div: f64,
    pub r_match: f64,
}

impl MoleculeOutcome {
    pub fn is_valid(&self) -> bool {
        self.canonical.is_some()
    }

    /// Unscaled reward, in `[0, 2]`.
    pub fn reward(&self) -> f64 {
        self.r_div + self.r_match
    }
}

/// Generated actions after a context, with everything PPO needs per action.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrajectory {
    /// 1-based stage index; 0 marks a single-stage trajectory spanning the
    /// whole episode.
    pub stage: usize,
    /// Prompt followed by the previously generated molecules, each closed by
    /// its separator.
    pub context: Vec<TokenId>,
    /// Actions, terminators included.
    pub tokens: Vec<TokenId>,
    /// Rollout-time log-probabilities under the trained policy.
    pub log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// KL-shaped per-action rewards.
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub molecules: Vec<MoleculeOutcome>,
}

impl StageTrajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sampled estimate of the KL divergence to the reference, summed over
    /// actions.
    pub fn kl(&self) -> f64 {
        self.log_probs
            .iter()
            .zip(&self.ref_log_probs)
            .map(|(a, b)| a - b)
            .sum()
    }

    /// Whether generation stopped at a separator and the episode can go on.
    pub fn continues(&self) -> bool {
        self.molecules
            .last()
            .is_some_and(|m| m.termination == Termination::Separator)
    }
}

/// Log-probability of an action given the log-softmax row. Both
/// terminators count as the single action of closing the molecule, since the
/// episode length decides which one is written.
pub fn action_log_prob(log_probs: &[f64], token: TokenId) -> f64 {
    if Termination::of(token).is_some() {
        let (a, b) = (log_probs[SEP as usize], log_probs[EOS as usize]);
        a.max(b) + (-(a - b).abs()).exp().ln_1p()
    } else {
        log_probs[token as usize]
    }
}

struct Generated {
    tokens: Vec<TokenId>,
    log_probs: Vec<f64>,
    ref_log_probs: Vec<f64>,
    values: Vec<f64>,
}

/// Samples from the policy after `context` until `max_molecules` molecules
/// are closed or one molecule hits the token limit. `closed_before` counts
/// the molecules already in the context.
fn generate<R: Rng + ?Sized>(
    env: &RolloutEnv<'_>,
    context: &[TokenId],
    closed_before: usize,
    max_molecules: usize,
    rng: &mut R,
) -> Generated {
    assert!(!context.is_empty(), "context must contain at least BOS");
    let p = &env.policy.params;
    let mut h = crate::policy::initial_hidden(p);
    let mut h_ref = crate::policy::initial_hidden(env.reference);
    let (mut logits, mut ref_logits, mut value) = (Vec::new(), Vec::new(), 0.0);
    for &t in context {
        let out = step(p, &h, t);
        (h, logits, value) = (out.hidden, out.logits, out.value);
        let out = step(env.reference, &h_ref, t);
        (h_ref, ref_logits) = (out.hidden, out.logits);
    }
    let mut g = Generated {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        ref_log_probs: Vec::new(),
        values: Vec::new(),
    };
    let (mut closed, mut seg_len) = (0, 0);
    while seg_len < env.max_tokens {
        let mut tok = Sampler::Temperature(1.0).choose(&logits, rng);
        if Termination::of(tok).is_some() {
            tok = if closed_before + closed + 1 >= env.episode_len { EOS } else { SEP };
        }
        g.tokens.push(tok);
        g.log_probs.push(action_log_prob(&log_softmax(&logits), tok));
        g.ref_log_probs.push(action_log_prob(&log_softmax(&ref_logits), tok));
        g.values.push(value);
        match Termination::of(tok) {
            Some(Termination::End) => break,
            Some(_) => {
                closed += 1;
                seg_len = 0;
                if closed == max_molecules {
                    break;
                }
            }
            None => seg_len += 1,
        }
        let out = step(p, &h, tok);
        (h, logits, value) = (out.hidden, out.logits, out.value);
        let out = step(env.reference, &h_ref, tok);
        (h_ref, ref_logits) = (out.hidden, out.logits);
    }
    g
}

/// Scores the molecules of a generated stream in order, extending `previous`
/// with the fingerprint of every valid one.
fn score(
    env: &RolloutEnv<'_>,
    tokens: &[TokenId],
    previous: &mut Vec<Fingerprint>,
) -> Result<Vec<MoleculeOutcome>, RlError> {
    let mut out = Vec::new();
    for seg in split_segments(&env.policy.vocab, tokens) {
        let end = if seg.termination == Termination::MaxTokens {
            seg.end - 1
        } else {
            seg.end
        };
        let (mut r_div, mut r_match) = (0.0, 0.0);
        if let Some(c) = &seg.canonical {
            let graph = parse_smiles(c.as_str()).expect("canonical SMILES parse");
            let fp = default_fingerprint(&graph);
            r_match = reward_match(&env.policy.vocab, c, env.acceptor, env.reward.alpha)?;
            r_div = reward_div(&fp, previous, env.reward.beta)?;
            previous.push(fp);
        }
        out.push(MoleculeOutcome {
            raw: seg.raw,
            canonical: seg.canonical,
            end,
            termination: seg.termination,
            r_div,
            r_match,
        });
    }
    Ok(out)
}

fn assemble(
    env: &RolloutEnv<'_>,
    stage: usize,
    context: &[TokenId],
    g: Generated,
    molecules: Vec<MoleculeOutcome>,
) -> StageTrajectory {
    let mut rewards: Vec<f64> = g
        .log_probs
        .iter()
        .zip(&g.ref_log_probs)
        .map(|(lp, lr)| -env.kl_coef * (lp - lr))
        .collect();
    for m in &molecules {
        rewards[m.end] += env.reward.reward_scale * m.reward();
    }
    StageTrajectory {
        stage,
        context: context.to_vec(),
        tokens: g.tokens,
        log_probs: g.log_probs,
        ref_log_probs: g.ref_log_probs,
        values: g.values,
        rewards,
        advantages: Vec::new(),
        returns: Vec::new(),
        molecules,
    }
}

/// Samples molecule `stage` after `context` (prompt plus the earlier
/// molecules), whose valid members have fingerprints `previous`.
pub fn rollout_stage<R: Rng + ?Sized>(
    env: &RolloutEnv<'_>,
    context: &[TokenId],
    previous: &[Fingerprint],
    stage: usize,
    rng: &mut R,
) -> Result<StageTrajectory, RlError> {
    let g = generate(env, context, stage - 1, 1, rng);
    let mut prev = previous.to_vec();
    let molecules = score(env, &g.tokens, &mut prev)?;
    Ok(assemble(env, stage, context, g, molecules))
}

/// An episode of `env.episode_len` stages: one trajectory per molecule, each
/// conditioned on the molecules before it. Ends early at a truncated
/// molecule.
pub fn rollout_episode<R: Rng + ?Sized>(
    env: &RolloutEnv<'_>,
    prompt: &[TokenId],
    rng: &mut R,
) -> Result<Vec<StageTrajectory>, RlError> {
    let mut context = prompt.to_vec();
    let mut previous = Vec::new();
    let mut stages = Vec::with_capacity(env.episode_len);
    for stage in 1..=env.episode_len {
        let traj = rollout_stage(env, &context, &previous, stage, rng)?;
        if let Some(fp) = traj.molecules[0]
            .canonical
            .as_ref()
            .map(|c| default_fingerprint(&parse_smiles(c.as_str()).expect("canonical parses")))
        {
            previous.push(fp);
        }
        context.extend_from_slice(&traj.tokens);
        let more = traj.continues();
        stages.push(traj);
        if !more {
            break;
        }
    }
    Ok(stages)
}

/// One trajectory over all molecules of the episode, each molecule's reward
/// placed at its final action.
pub fn rollout_single<R: Rng + ?Sized>(
    env: &RolloutEnv<'_>,
    prompt: &[TokenId],
    rng: &mut R,
) -> Result<StageTrajectory, RlError> {
    let g = generate(env, prompt, 0, env.episode_len, rng);
    let molecules = score(env, &g.tokens, &mut Vec::new())?;
    Ok(assemble(env, 0, prompt, g, molecules))
}
