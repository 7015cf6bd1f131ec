//! Single-layer GRU language model with a scalar value head, plus exact
//! backpropagation through time.

use rayon::prelude::*;

use super::params::{Block, Gradients, PolicyParameters};
use super::vocab::TokenId;
use super::PolicyError;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x (+ out)`, W row-major with `x.len()` columns.
#[inline]
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(x.len())) {
        *o += dot(row, x);
    }
}

/// `out += W^T v`.
#[inline]
fn matvec_t_acc(w: &[f64], v: &[f64], out: &mut [f64]) {
    for (&vi, row) in v.iter().zip(w.chunks_exact(out.len())) {
        if vi != 0.0 {
            axpy(vi, row, out);
        }
    }
}

/// `G += v x^T`.
#[inline]
fn outer_acc(g: &mut [f64], v: &[f64], x: &[f64]) {
    for (&vi, row) in v.iter().zip(g.chunks_exact_mut(x.len())) {
        if vi != 0.0 {
            axpy(vi, x, row);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Gate activations of one recurrence step.
#[derive(Debug, Clone)]
struct Gates {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

/// Activations of a full forward pass. Position `t` consumed `tokens[t]` and
/// its logits score the token at `t + 1`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    tokens: Vec<TokenId>,
    vocab: usize,
    d_h: usize,
    h0: Vec<f64>,
    /// Row `t` is h_t (T × d_h).
    pub hidden: Vec<f64>,
    gates: Vec<Gates>,
    /// T × V
    pub logits: Vec<f64>,
    /// T × V
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn logits_at(&self, t: usize) -> &[f64] {
        &self.logits[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn log_probs_at(&self, t: usize) -> &[f64] {
        &self.log_probs[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn hidden_at(&self, t: usize) -> &[f64] {
        &self.hidden[t * self.d_h..(t + 1) * self.d_h]
    }

    /// Final hidden state, for continuing generation.
    pub fn last_hidden(&self) -> &[f64] {
        if self.tokens.is_empty() {
            &self.h0
        } else {
            self.hidden_at(self.tokens.len() - 1)
        }
    }

    /// log p(tokens[t + 1] | tokens[..=t]) for every t.
    pub fn target_log_probs(&self) -> Vec<f64> {
        (0..self.tokens.len().saturating_sub(1))
            .map(|t| self.log_probs_at(t)[self.tokens[t + 1] as usize])
            .collect()
    }
}

/// Output of a single incremental step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

fn gru_cell(p: &PolicyParameters, h_prev: &[f64], token: TokenId) -> (Vec<f64>, Gates) {
    let d = p.dims();
    let (e_dim, h_dim) = (d.d_emb, d.d_h);
    let emb = &p.block(Block::Embedding)[token as usize * e_dim..(token as usize + 1) * e_dim];
    let mut az = p.block(Block::BZ).to_vec();
    let mut ar = p.block(Block::BR).to_vec();
    let mut an = p.block(Block::BN).to_vec();
    matvec_acc(p.block(Block::WZ), emb, &mut az);
    matvec_acc(p.block(Block::UZ), h_prev, &mut az);
    matvec_acc(p.block(Block::WR), emb, &mut ar);
    matvec_acc(p.block(Block::UR), h_prev, &mut ar);
    let z: Vec<f64> = az.iter().map(|&x| sigmoid(x)).collect();
    let r: Vec<f64> = ar.iter().map(|&x| sigmoid(x)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    matvec_acc(p.block(Block::WN), emb, &mut an);
    matvec_acc(p.block(Block::UN), &rh, &mut an);
    let n: Vec<f64> = an.iter().map(|x| x.tanh()).collect();
    let h: Vec<f64> = (0..h_dim)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    (h, Gates { z, r, n })
}

fn readout(p: &PolicyParameters, h: &[f64]) -> (Vec<f64>, f64) {
    let mut logits = p.block(Block::BOut).to_vec();
    matvec_acc(p.block(Block::WOut), h, &mut logits);
    let value = dot(p.block(Block::WValue), h) + p.block(Block::BValue)[0];
    (logits, value)
}

pub fn initial_hidden(p: &PolicyParameters) -> Vec<f64> {
    vec![0.0; p.dims().d_h]
}

/// Consumes one token from hidden state `h`.
pub fn step(p: &PolicyParameters, h: &[f64], token: TokenId) -> StepOutput {
    let (hidden, _) = gru_cell(p, h, token);
    let (logits, value) = readout(p, &hidden);
    StepOutput {
        hidden,
        logits,
        value,
    }
}

/// Hidden state after consuming `tokens` from the zero state.
pub fn encode(p: &PolicyParameters, tokens: &[TokenId]) -> Vec<f64> {
    let mut h = initial_hidden(p);
    for &t in tokens {
        h = gru_cell(p, &h, t).0;
    }
    h
}

pub fn forward(p: &PolicyParameters, tokens: &[TokenId]) -> ForwardTrace {
    forward_from(p, &initial_hidden(p), tokens)
}

pub fn forward_from(p: &PolicyParameters, h0: &[f64], tokens: &[TokenId]) -> ForwardTrace {
    let d = p.dims();
    let t_len = tokens.len();
    let mut hidden = Vec::with_capacity(t_len * d.d_h);
    let mut gates = Vec::with_capacity(t_len);
    let mut logits = Vec::with_capacity(t_len * d.vocab);
    let mut log_probs = Vec::with_capacity(t_len * d.vocab);
    let mut values = Vec::with_capacity(t_len);
    let mut h = h0.to_vec();
    for &tok in tokens {
        let (h_new, g) = gru_cell(p, &h, tok);
        let (l, v) = readout(p, &h_new);
        log_probs.extend(log_softmax(&l));
        logits.extend(l);
        values.push(v);
        hidden.extend_from_slice(&h_new);
        gates.push(g);
        h = h_new;
    }
    ForwardTrace {
        tokens: tokens.to_vec(),
        vocab: d.vocab,
        d_h: d.d_h,
        h0: h0.to_vec(),
        hidden,
        gates,
        logits,
        log_probs,
        values,
    }
}

/// Upstream gradients at the model outputs of one trace. Positions with
/// `dlogits[t] == None` contribute no logit gradient.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub dlogits: Vec<Option<Vec<f64>>>,
    pub dvalues: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(len: usize) -> Self {
        OutputGrads {
            dlogits: vec![None; len],
            dvalues: vec![0.0; len],
        }
    }
}

/// Backpropagation through time. Accumulates into `grads`.
pub fn backward(
    p: &PolicyParameters,
    trace: &ForwardTrace,
    out: &OutputGrads,
    grads: &mut Gradients,
) {
    let d = p.dims();
    let (e_dim, h_dim) = (d.d_emb, d.d_h);
    let t_len = trace.len();
    assert_eq!(out.dlogits.len(), t_len);
    assert_eq!(out.dvalues.len(), t_len);

    let w_out = p.block(Block::WOut);
    let w_value = p.block(Block::WValue);
    let (wz, wr, wn) = (p.block(Block::WZ), p.block(Block::WR), p.block(Block::WN));
    let (uz, ur, un) = (p.block(Block::UZ), p.block(Block::UR), p.block(Block::UN));

    // Separate accumulators avoid aliasing the flat gradient buffer.
    let mut g_wout = vec![0.0; w_out.len()];
    let mut g_bout = vec![0.0; d.vocab];
    let mut g_wv = vec![0.0; h_dim];
    let mut g_bv = 0.0;
    let mut g_w = [
        vec![0.0; h_dim * e_dim],
        vec![0.0; h_dim * e_dim],
        vec![0.0; h_dim * e_dim],
    ];
    let mut g_u = [
        vec![0.0; h_dim * h_dim],
        vec![0.0; h_dim * h_dim],
        vec![0.0; h_dim * h_dim],
    ];
    let mut g_b = [vec![0.0; h_dim], vec![0.0; h_dim], vec![0.0; h_dim]];
    let mut g_emb: Vec<(TokenId, Vec<f64>)> = Vec::with_capacity(t_len);

    let mut dh_next = vec![0.0; h_dim];
    let mut dh = vec![0.0; h_dim];
    let mut da_z = vec![0.0; h_dim];
    let mut da_r = vec![0.0; h_dim];
    let mut da_n = vec![0.0; h_dim];
    let mut rh = vec![0.0; h_dim];
    for t in (0..t_len).rev() {
        let h_t = trace.hidden_at(t);
        let h_prev: &[f64] = if t == 0 {
            &trace.h0
        } else {
            trace.hidden_at(t - 1)
        };
        let g = &trace.gates[t];

        dh.copy_from_slice(&dh_next);
        if let Some(dl) = &out.dlogits[t] {
            matvec_t_acc(w_out, dl, &mut dh);
            outer_acc(&mut g_wout, dl, h_t);
            axpy(1.0, dl, &mut g_bout);
        }
        let dv = out.dvalues[t];
        if dv != 0.0 {
            axpy(dv, w_value, &mut dh);
            axpy(dv, h_t, &mut g_wv);
            g_bv += dv;
        }

        dh_next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..h_dim {
            let (z, n) = (g.z[i], g.n[i]);
            let dn = dh[i] * (1.0 - z);
            let dz = dh[i] * (h_prev[i] - n);
            dh_next[i] = dh[i] * z;
            da_n[i] = dn * (1.0 - n * n);
            da_z[i] = dz * z * (1.0 - z);
            rh[i] = g.r[i] * h_prev[i];
        }
        // Candidate gate sees r ⊙ h_prev.
        let mut d_rh = vec![0.0; h_dim];
        matvec_t_acc(un, &da_n, &mut d_rh);
        for i in 0..h_dim {
            let r = g.r[i];
            dh_next[i] += d_rh[i] * r;
            da_r[i] = d_rh[i] * h_prev[i] * r * (1.0 - r);
        }
        let tok = trace.tokens[t] as usize;
        let emb = &p.block(Block::Embedding)[tok * e_dim..(tok + 1) * e_dim];
        let mut d_emb = vec![0.0; e_dim];
        for (k, (da, w, u)) in [(&da_z, wz, uz), (&da_r, wr, ur), (&da_n, wn, un)]
            .into_iter()
            .enumerate()
        {
            outer_acc(&mut g_w[k], da, emb);
            axpy(1.0, da, &mut g_b[k]);
            matvec_t_acc(w, da, &mut d_emb);
            if k == 2 {
                outer_acc(&mut g_u[k], da, &rh);
            } else {
                outer_acc(&mut g_u[k], da, h_prev);
                matvec_t_acc(u, da, &mut dh_next);
            }
        }
        g_emb.push((tok as TokenId, d_emb));
    }

    let add = |grads: &mut Gradients, b: Block, src: &[f64]| axpy(1.0, src, grads.block_mut(b));
    add(grads, Block::WOut, &g_wout);
    add(grads, Block::BOut, &g_bout);
    add(grads, Block::WValue, &g_wv);
    grads.block_mut(Block::BValue)[0] += g_bv;
    for (k, (bw, bu, bb)) in [
        (Block::WZ, Block::UZ, Block::BZ),
        (Block::WR, Block::UR, Block::BR),
        (Block::WN, Block::UN, Block::BN),
    ]
    .into_iter()
    .enumerate()
    {
        add(grads, bw, &g_w[k]);
        add(grads, bu, &g_u[k]);
        add(grads, bb, &g_b[k]);
    }
    let emb_grad = grads.block_mut(Block::Embedding);
    for (tok, de) in g_emb {
        let tok = tok as usize;
        axpy(1.0, &de, &mut emb_grad[tok * e_dim..(tok + 1) * e_dim]);
    }
}

/// One training sequence. `weights[t]` scales the loss of predicting
/// `tokens[t + 1]` from position `t`, so `weights.len() == tokens.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub tokens: Vec<TokenId>,
    pub weights: Vec<f64>,
}

impl SequenceExample {
    pub fn new(tokens: Vec<TokenId>, weights: Vec<f64>) -> Self {
        assert_eq!(
            weights.len() + 1,
            tokens.len(),
            "one weight per predicted token"
        );
        SequenceExample { tokens, weights }
    }
}

/// How the summed weighted negative log-likelihood is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Sum over tokens, mean over sequences: the negative sequence
    /// log-likelihood averaged over the batch.
    PerSequence,
    /// Divided by the total weight.
    PerToken,
}

/// Examples per gradient accumulator; fixed so results do not depend on the
/// thread count.
const GRAD_CHUNK: usize = 4;

/// Weighted negative log-likelihood and its exact gradient.
pub fn loss_and_grad(
    p: &PolicyParameters,
    batch: &[SequenceExample],
    reduction: Reduction,
) -> Result<(f64, Gradients), PolicyError> {
    let partials: Vec<(f64, f64, Gradients)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = p.zeros_like();
            let mut loss = 0.0;
            let mut weight = 0.0;
            for ex in chunk {
                let (l, w) = example_loss_grad(p, ex, &mut grads);
                loss += l;
                weight += w;
            }
            (loss, weight, grads)
        })
        .collect();
    let mut grads = p.zeros_like();
    let (mut loss, mut weight) = (0.0, 0.0);
    for (l, w, g) in &partials {
        loss += l;
        weight += w;
        grads.add_assign(g);
    }
    let denom = match reduction {
        Reduction::PerSequence => batch.len() as f64,
        Reduction::PerToken => weight,
    };
    if denom > 0.0 {
        loss /= denom;
        grads.scale(1.0 / denom);
    }
    if !loss.is_finite() || !grads.all_finite() {
        return Err(PolicyError::NonFiniteLoss);
    }
    Ok((loss, grads))
}

/// Loss only, without gradients; used for evaluation.
pub fn loss(p: &PolicyParameters, batch: &[SequenceExample], reduction: Reduction) -> f64 {
    let parts: Vec<(f64, f64)> = batch
        .par_iter()
        .map(|ex| {
            let trace = forward(p, &ex.tokens[..ex.tokens.len() - 1]);
            let mut l = 0.0;
            for (t, &w) in ex.weights.iter().enumerate() {
                if w != 0.0 {
                    l -= w * trace.log_probs_at(t)[ex.tokens[t + 1] as usize];
                }
            }
            (l, ex.weights.iter().sum::<f64>())
        })
        .collect();
    let (l, w) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let denom = match reduction {
        Reduction::PerSequence => batch.len() as f64,
        Reduction::PerToken => w,
    };
    if denom > 0.0 {
        l / denom
    } else {
        0.0
    }
}

fn example_loss_grad(
    p: &PolicyParameters,
    ex: &SequenceExample,
    grads: &mut Gradients,
) -> (f64, f64) {
    let inputs = &ex.tokens[..ex.tokens.len() - 1];
    let trace = forward(p, inputs);
    let mut out = OutputGrads::zeros(inputs.len());
    let mut loss = 0.0;
    for (t, &w) in ex.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let target = ex.tokens[t + 1] as usize;
        let lp = trace.log_probs_at(t);
        loss -= w * lp[target];
        let mut dl: Vec<f64> = lp.iter().map(|&x| w * x.exp()).collect();
        dl[target] -= w;
        out.dlogits[t] = Some(dl);
    }
    if loss != 0.0 || out.dlogits.iter().any(Option::is_some) {
        backward(p, &trace, &out, grads);
    }
    (loss, ex.weights.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params::ModelDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> PolicyParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyParameters::init(ModelDims::new(11, 8, 12), &mut rng)
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = small(3);
        let trace = forward(&p, &[1, 5, 7, 2, 9]);
        for t in 0..trace.len() {
            let s: f64 = trace.log_probs_at(t).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let mut p = small(4);
        p.block_mut(Block::WOut).iter_mut().for_each(|x| *x = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tokens: Vec<TokenId> = (0..30).map(|_| rng.gen_range(0..11)).collect();
        let ex = SequenceExample::new(tokens.clone(), vec![1.0; tokens.len() - 1]);
        let (l, _) = loss_and_grad(&p, &[ex], Reduction::PerToken).unwrap();
        assert!((l - (11f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_loss_and_gradient() {
        let p = small(5);
        let ex = SequenceExample::new(vec![1, 2, 3, 4], vec![0.0; 3]);
        let (l, g) = loss_and_grad(&p, &[ex], Reduction::PerSequence).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_traces() {
        let a = forward(&small(6), &[1, 3, 4, 5]);
        let b = forward(&small(6), &[1, 3, 4, 5]);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn step_matches_forward() {
        let p = small(7);
        let tokens = [1, 4, 6, 8];
        let trace = forward(&p, &tokens);
        let mut h = initial_hidden(&p);
        for (t, &tok) in tokens.iter().enumerate() {
            let out = step(&p, &h, tok);
            assert_eq!(out.logits, trace.logits_at(t));
            assert_eq!(out.value, trace.values[t]);
            h = out.hidden;
        }
        assert_eq!(h, trace.last_hidden());
    }

    #[test]
    fn sequence_loss_is_negative_log_likelihood() {
        let p = small(8);
        let tokens = vec![1, 4, 6, 8, 2];
        let trace = forward(&p, &tokens[..4]);
        let ll: f64 = (0..4)
            .map(|t| trace.log_probs_at(t)[tokens[t + 1] as usize])
            .sum();
        let (l, _) = loss_and_grad(
            &p,
            &[SequenceExample::new(tokens, vec![1.0; 4])],
            Reduction::PerSequence,
        )
        .unwrap();
        assert!((l + ll).abs() < 1e-8);
    }
}
