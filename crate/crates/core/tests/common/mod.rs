//! Finite-difference helpers shared by the gradient and acceptance tests.
#![allow(dead_code)]

use divmol::policy::{
    loss, loss_and_grad, Block, ModelDims, PolicyParameters, Reduction, SequenceExample, TokenId, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

pub fn random_batch(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<SequenceExample> {
    (0..2)
        .map(|_| {
            let len = rng.gen_range(6..14);
            let tokens: Vec<TokenId> = (0..len)
                .map(|_| rng.gen_range(0..vocab as TokenId))
                .collect();
            let weights = (0..len - 1)
                .map(|_| {
                    if rng.gen_bool(0.8) {
                        rng.gen_range(0.2..1.5)
                    } else {
                        0.0
                    }
                })
                .collect();
            SequenceExample::new(tokens, weights)
        })
        .collect()
}

/// Worst per-coordinate relative error within each block. Coordinates whose
/// gradients are both tiny are compared absolutely.
pub fn compare(analytic: &PolicyParameters, numeric: &PolicyParameters) -> Vec<(Block, f64)> {
    Block::ALL
        .iter()
        .map(|&b| {
            let worst = analytic
                .block(b)
                .iter()
                .zip(numeric.block(b))
                .map(|(&a, &n)| {
                    let scale = a.abs().max(n.abs());
                    if scale < 1e-6 {
                        // Absolute comparison in the noise floor of the difference quotient.
                        if (a - n).abs() < 1e-9 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        (a - n).abs() / scale
                    }
                })
                .fold(0.0, f64::max);
            (b, worst)
        })
        .collect()
}

pub fn numeric_gradient(
    p: &PolicyParameters,
    f: impl Fn(&PolicyParameters) -> f64,
) -> PolicyParameters {
    let mut g = p.zeros_like();
    let mut q = p.clone();
    for i in 0..p.len() {
        let orig = q.as_slice()[i];
        q.as_mut_slice()[i] = orig + STEP;
        let plus = f(&q);
        q.as_mut_slice()[i] = orig - STEP;
        let minus = f(&q);
        q.as_mut_slice()[i] = orig;
        g.as_mut_slice()[i] = (plus - minus) / (2.0 * STEP);
    }
    g
}

/// Worst relative error per block of the cross-entropy gradient for one seed
/// of the small model.
pub fn cross_entropy_errors(seed: u64) -> Vec<(Block, f64)> {
    let vocab = Vocabulary::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PolicyParameters::init(ModelDims::new(vocab.len(), 8, 12), &mut rng);
    // Larger weights exercise the nonlinearities away from the linear regime.
    p.as_mut_slice().iter_mut().for_each(|x| *x *= 4.0);
    let batch = random_batch(&mut rng, vocab.len());
    let (_, analytic) = loss_and_grad(&p, &batch, Reduction::PerSequence).unwrap();
    let numeric = numeric_gradient(&p, |q| loss(q, &batch, Reduction::PerSequence));
    compare(&analytic, &numeric)
}
