//! Analytic gradients against central finite differences on small models.

mod common;

use common::{compare, cross_entropy_errors, numeric_gradient, REL_TOL};
use divmol::policy::{backward, forward, ModelDims, OutputGrads, PolicyParameters, TokenId, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for seed in 0..10u64 {
        let errs = cross_entropy_errors(seed);
        let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
        eprintln!("seed {seed}: worst block relative error {worst:.2e}");
        for (block, err) in errs {
            assert!(
                err < REL_TOL,
                "seed {seed} block {} rel err {err:e}",
                block.name()
            );
        }
    }
}

#[test]
fn value_and_logit_paths_match_finite_differences() {
    let vocab = Vocabulary::standard();
    for seed in 100..103u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParameters::init(ModelDims::new(vocab.len(), 8, 12), &mut rng);
        p.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = *x * 4.0 + rng.gen_range(-0.05..0.05));
        let tokens: Vec<TokenId> = (0..9)
            .map(|_| rng.gen_range(0..vocab.len() as TokenId))
            .collect();
        let targets: Vec<f64> = (0..tokens.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let coef: Vec<f64> = (0..tokens.len() * vocab.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        // L = sum_t sum_v c_tv * logit_tv + sum_t (V_t - y_t)^2
        let objective = |q: &PolicyParameters| {
            let tr = forward(q, &tokens);
            let lin: f64 = tr.logits.iter().zip(&coef).map(|(a, b)| a * b).sum();
            let val: f64 = tr
                .values
                .iter()
                .zip(&targets)
                .map(|(v, y)| (v - y).powi(2))
                .sum();
            lin + val
        };
        let trace = forward(&p, &tokens);
        let mut out = OutputGrads::zeros(tokens.len());
        for t in 0..tokens.len() {
            out.dlogits[t] = Some(coef[t * vocab.len()..(t + 1) * vocab.len()].to_vec());
            out.dvalues[t] = 2.0 * (trace.values[t] - targets[t]);
        }
        let mut analytic = p.zeros_like();
        backward(&p, &trace, &out, &mut analytic);
        let numeric = numeric_gradient(&p, objective);
        for (block, err) in compare(&analytic, &numeric) {
            assert!(
                err < REL_TOL,
                "seed {seed} block {} rel err {err:e}",
                block.name()
            );
        }
    }
}
