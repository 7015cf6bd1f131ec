use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::sampling::prime;
use super::{DecodeError, Termination};
use crate::policy::{log_softmax, step, Policy, TokenId};

/// A finished (or truncated) beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Tokens without the terminator.
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Unpenalized log-probability, terminator included.
    pub log_prob: f64,
    /// Beam objective divided by token count. Equals `log_prob / len`
    /// unless a diversity penalty applied.
    pub score: f64,
    pub termination: Termination,
    pub group: usize,
}

struct Beam {
    tokens: Vec<TokenId>,
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
    log_prob: f64,
    objective: f64,
}

struct Candidate {
    objective: f64,
    local: f64,
    beam: usize,
    token: TokenId,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.objective
        .total_cmp(&a.objective)
        .then(b.local.total_cmp(&a.local))
        .then(a.beam.cmp(&b.beam))
        .then(a.token.cmp(&b.token))
}

struct Group {
    width: usize,
    beams: Vec<Beam>,
    finished: Vec<Hypothesis>,
}

impl Group {
    fn done(&self) -> bool {
        self.beams.is_empty() || self.finished.len() >= self.width
    }

    /// Advances every beam by one token. `penalty[t]` is subtracted from the
    /// log-probability of token `t`. Returns the tokens chosen for live beams.
    fn advance(&mut self, policy: &Policy, penalty: &[f64], index: usize) -> Vec<TokenId> {
        let mut cands = Vec::with_capacity(self.beams.len() * penalty.len());
        for (bi, b) in self.beams.iter().enumerate() {
            for (t, (&lp, &pen)) in b.log_probs.iter().zip(penalty).enumerate() {
                let local = lp - pen;
                cands.push(Candidate {
                    objective: b.objective + local,
                    local,
                    beam: bi,
                    token: t as TokenId,
                });
            }
        }
        cands.sort_by(rank);
        let mut next = Vec::with_capacity(self.width);
        let mut chosen = Vec::with_capacity(self.width);
        for (r, c) in cands.iter().enumerate() {
            if next.len() == self.width {
                break;
            }
            let parent = &self.beams[c.beam];
            let log_prob = parent.log_prob + parent.log_probs[c.token as usize];
            if let Some(termination) = Termination::of(c.token) {
                if r < self.width {
                    let len = parent.tokens.len() + 1;
                    self.finished.push(Hypothesis {
                        text: policy.vocab.detokenize(&parent.tokens),
                        tokens: parent.tokens.clone(),
                        log_prob,
                        score: c.objective / len as f64,
                        termination,
                        group: index,
                    });
                }
                continue;
            }
            let out = step(&policy.params, &parent.hidden, c.token);
            let mut tokens = parent.tokens.clone();
            tokens.push(c.token);
            next.push(Beam {
                tokens,
                log_probs: log_softmax(&out.logits),
                hidden: out.hidden,
                log_prob,
                objective: c.objective,
            });
            chosen.push(c.token);
        }
        self.beams = next;
        chosen
    }

    fn into_results(mut self, policy: &Policy, index: usize) -> Vec<Hypothesis> {
        sort_hypotheses(&mut self.finished);
        self.finished.truncate(self.width);
        if self.finished.len() < self.width {
            let mut truncated: Vec<Hypothesis> = self
                .beams
                .into_iter()
                .map(|b| Hypothesis {
                    text: policy.vocab.detokenize(&b.tokens),
                    score: b.objective / b.tokens.len().max(1) as f64,
                    tokens: b.tokens,
                    log_prob: b.log_prob,
                    termination: Termination::MaxTokens,
                    group: index,
                })
                .collect();
            sort_hypotheses(&mut truncated);
            let room = self.width - self.finished.len();
            self.finished.extend(truncated.into_iter().take(room));
        }
        self.finished
    }
}

fn sort_hypotheses(h: &mut [Hypothesis]) {
    // Stable: equal scores keep finishing order.
    h.sort_by(|a, b| b.score.total_cmp(&a.score));
}

fn grouped_search(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    groups: usize,
    diversity_penalty: f64,
    max_tokens: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if width == 0 || groups == 0 || width % groups != 0 {
        return Err(DecodeError::InvalidConfig(format!(
            "width {width} must be a positive multiple of groups {groups}"
        )));
    }
    let (hidden, logits) = prime(&policy.params, prompt);
    let log_probs = log_softmax(&logits);
    let mut state: Vec<Group> = (0..groups)
        .map(|_| Group {
            width: width / groups,
            beams: vec![Beam {
                tokens: Vec::new(),
                hidden: hidden.clone(),
                log_probs: log_probs.clone(),
                log_prob: 0.0,
                objective: 0.0,
            }],
            finished: Vec::new(),
        })
        .collect();
    let vocab = policy.vocab.len();
    for _ in 0..max_tokens {
        if state.iter().all(Group::done) {
            break;
        }
        let mut counts = vec![0u32; vocab];
        for (g, group) in state.iter_mut().enumerate() {
            if group.done() {
                continue;
            }
            let penalty: Vec<f64> = counts
                .iter()
                .map(|&c| diversity_penalty * c as f64)
                .collect();
            for t in group.advance(policy, &penalty, g) {
                counts[t as usize] += 1;
            }
        }
    }
    Ok(state
        .into_iter()
        .enumerate()
        .flat_map(|(g, group)| group.into_results(policy, g))
        .collect())
}

/// Length-normalized beam search. Returns up to `width` hypotheses ranked by
/// score; beams still open after `max_tokens` steps fill any shortfall.
pub fn beam_search(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    max_tokens: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    grouped_search(policy, prompt, width, 1, 0.0, max_tokens)
}

/// Group-wise beam search with a Hamming diversity penalty between groups.
/// Results are concatenated in group order, each group ranked by score.
pub fn diverse_beam_search(
    policy: &Policy,
    prompt: &[TokenId],
    width: usize,
    groups: usize,
    diversity_penalty: f64,
    max_tokens: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    grouped_search(policy, prompt, width, groups, diversity_penalty, max_tokens)
}
