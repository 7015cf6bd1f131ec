use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, HarnessError};
use crate::policy::{PropertyConstraint, PropertyFamily, Vocabulary};
use crate::sft::PromptSpec;

/// How train and evaluation prompts are drawn from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptPlan {
    /// Fewest corpus molecules a training prompt must match.
    pub min_support: usize,
    /// Fewest corpus molecules an evaluation prompt must match.
    pub eval_min_support: usize,
    pub eval_count: usize,
    /// Constraints per evaluation prompt, 1 or 2.
    pub eval_arity: usize,
    /// Family kept out of the RL training prompts.
    pub holdout_family: Option<PropertyFamily>,
    /// Evaluation prompts that involve the held-out family.
    pub eval_holdout_count: usize,
    pub seed: u64,
}

impl Default for PromptPlan {
    fn default() -> Self {
        PromptPlan {
            min_support: 10,
            eval_min_support: 100,
            eval_count: 10,
            eval_arity: 1,
            holdout_family: Some(PropertyFamily::Rings),
            eval_holdout_count: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSets {
    /// Supervised fine-tuning prompts.
    pub train: Vec<PromptSpec>,
    /// The training prompts without the held-out family.
    pub rl_train: Vec<PromptSpec>,
    pub eval: Vec<PromptSpec>,
}

impl PromptSets {
    /// Errors when a prompt is unsatisfiable on the corpus, cannot be
    /// rendered, or appears in both sets.
    pub fn validate(&self, corpus: &Corpus, vocab: &Vocabulary) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::ConfigInvalid(m));
        let train: BTreeSet<Vec<PropertyConstraint>> = self
            .train
            .iter()
            .chain(&self.rl_train)
            .map(|p| p.constraints.clone())
            .collect();
        for p in &self.eval {
            if train.contains(&p.constraints) {
                return bad(format!("prompt {} is in both train and eval sets", p.id()));
            }
        }
        for p in self.train.iter().chain(&self.eval) {
            if p.constraints.is_empty() {
                return bad("prompt without constraints".into());
            }
            if !p.is_representable(vocab) {
                return bad(format!("prompt {} has no token rendering", p.id()));
            }
            if corpus.count_matching(&p.constraints) == 0 {
                return bad(format!("prompt {} matches no corpus molecule", p.id()));
            }
        }
        Ok(())
    }
}

/// Every one- and two-family prompt the corpus supports, each with the first
/// matching corpus molecule as its reference. Single-family prompts come
/// first.
fn candidates(corpus: &Corpus) -> Vec<(PromptSpec, usize)> {
    let mut raw = Vec::new();
    let fams = PropertyFamily::ALL;
    for &a in &fams {
        for la in 0..=a.max_level() {
            raw.push(vec![PropertyConstraint::new(a, la)]);
        }
    }
    for (i, &a) in fams.iter().enumerate() {
        for &b in &fams[i + 1..] {
            for la in 0..=a.max_level() {
                for lb in 0..=b.max_level() {
                    raw.push(vec![PropertyConstraint::new(a, la), PropertyConstraint::new(b, lb)]);
                }
            }
        }
    }
    let mut out = Vec::new();
    for constraints in raw {
        let spec = PromptSpec::new(constraints);
        let support = corpus.count_matching(&spec.constraints);
        if support == 0 {
            continue;
        }
        let reference = corpus.matching(&spec).next().expect("support > 0");
        let spec = spec.clone().with_reference(reference.smiles.clone());
        out.push((spec, support));
    }
    out
}

/// Disjoint train and evaluation prompt sets. Evaluation prompts are drawn
/// first among well-supported prompts of the configured arity; training
/// takes every remaining supported prompt, and RL training drops those that
/// involve the held-out family.
pub fn build_prompt_sets(corpus: &Corpus, plan: &PromptPlan) -> Result<PromptSets, HarnessError> {
    if !(1..=2).contains(&plan.eval_arity) {
        return Err(HarnessError::ConfigInvalid("eval_arity must be 1 or 2".into()));
    }
    let all = candidates(corpus);
    let arity = |p: &PromptSpec| p.constraints.len() == plan.eval_arity;
    let held = |p: &PromptSpec| plan.holdout_family.is_some_and(|f| p.involves(f));
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut pool_held: Vec<&PromptSpec> = all
        .iter()
        .filter(|(p, s)| *s >= plan.eval_min_support && arity(p) && held(p))
        .map(|(p, _)| p)
        .collect();
    let mut pool_other: Vec<&PromptSpec> = all
        .iter()
        .filter(|(p, s)| *s >= plan.eval_min_support && arity(p) && !held(p))
        .map(|(p, _)| p)
        .collect();
    pool_held.shuffle(&mut rng);
    pool_other.shuffle(&mut rng);
    let n_held = if plan.holdout_family.is_some() {
        plan.eval_holdout_count.min(plan.eval_count)
    } else {
        0
    };
    let n_other = plan.eval_count - n_held;
    if pool_held.len() < n_held || pool_other.len() < n_other {
        return Err(HarnessError::ConfigInvalid(format!(
            "corpus supports {} held-out and {} other evaluation prompts, need {n_held} and {n_other}",
            pool_held.len(),
            pool_other.len()
        )));
    }
    let mut eval: Vec<PromptSpec> = pool_other[..n_other]
        .iter()
        .chain(&pool_held[..n_held])
        .map(|p| (*p).clone())
        .collect();
    eval.sort_by(|a, b| a.constraints.cmp(&b.constraints));
    let train: Vec<PromptSpec> = all
        .iter()
        .filter(|(p, s)| *s >= plan.min_support && !eval.contains(p))
        .map(|(p, _)| p.clone())
        .collect();
    let rl_train: Vec<PromptSpec> = train.iter().filter(|p| !held(p)).cloned().collect();
    if rl_train.is_empty() {
        return Err(HarnessError::ConfigInvalid("no training prompts".into()));
    }
    Ok(PromptSets {
        train,
        rl_train,
        eval,
    })
}
