use criterion::{black_box, criterion_group, criterion_main, Criterion};
use divmol::decoding::{beam_search, generate_sequence, DecodeConfig, Scheme};
use divmol::policy::{backward, forward, ModelDims, OutputGrads, Policy, PolicyParameters, Vocabulary, BOS, DIVERSE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn policy() -> Policy {
    let vocab = Vocabulary::standard();
    let dims = ModelDims::new(vocab.len(), 64, 128);
    let params = PolicyParameters::init(dims, &mut ChaCha8Rng::seed_from_u64(0));
    Policy::new(vocab, params)
}

fn training_step(c: &mut Criterion) {
    let p = policy();
    let tokens = p.vocab.tokenize("CC(=O)Nc1ccc(O)cc1").unwrap();
    let mut stream = vec![BOS];
    stream.extend(&tokens);
    c.bench_function("forward+backward 20 tokens", |b| {
        b.iter(|| {
            let trace = forward(&p.params, black_box(&stream));
            let mut out = OutputGrads::zeros(trace.len());
            for (t, slot) in out.dlogits.iter_mut().enumerate().take(stream.len() - 1) {
                let mut g: Vec<f64> = trace.log_probs_at(t).iter().map(|l| l.exp()).collect();
                g[stream[t + 1] as usize] -= 1.0;
                *slot = Some(g);
            }
            let mut grads = PolicyParameters::zeros(p.params.dims());
            backward(&p.params, &trace, &out, &mut grads);
            grads
        })
    });
}

fn decoding(c: &mut Criterion) {
    let p = policy();
    let cfg = DecodeConfig {
        scheme: Scheme::Nucleus,
        max_tokens: 40,
        ..DecodeConfig::default()
    };
    c.bench_function("generate_sequence K=20", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            generate_sequence(&p, &[BOS, DIVERSE], 20, &cfg, &mut rng).unwrap()
        })
    });
    c.bench_function("beam width 20", |b| b.iter(|| beam_search(&p, &[BOS], 20, 40).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = training_step, decoding
}
criterion_main!(benches);
