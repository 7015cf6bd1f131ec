use criterion::{black_box, criterion_group, criterion_main, Criterion};
use divmol::fingerprints::{default_fingerprint, tanimoto, Fingerprint};
use divmol::metrics::{intdiv, ncircles_exact, ncircles_greedy, AcceptedMolecule};
use divmol::smiles::{canonical_smiles, parse_smiles};
use divmol_bench::corpus_smiles;

fn canonicalize(c: &mut Criterion) {
    let smiles = corpus_smiles(100);
    c.bench_function("canonicalize 100", |b| {
        b.iter(|| {
            for s in &smiles {
                black_box(canonical_smiles(s).unwrap());
            }
        })
    });
}

fn fingerprints(c: &mut Criterion) {
    let graphs: Vec<_> = corpus_smiles(100).iter().map(|s| parse_smiles(s).unwrap()).collect();
    c.bench_function("morgan 100", |b| {
        b.iter(|| {
            for g in &graphs {
                black_box(default_fingerprint(g));
            }
        })
    });
    let fps: Vec<Fingerprint> = graphs.iter().map(default_fingerprint).collect();
    c.bench_function("tanimoto 100x100", |b| {
        b.iter(|| {
            for x in &fps {
                for y in &fps {
                    black_box(tanimoto(x, y).unwrap());
                }
            }
        })
    });
}

fn diversity(c: &mut Criterion) {
    let accepted: Vec<AcceptedMolecule> = corpus_smiles(50)
        .iter()
        .map(|s| {
            let canonical = canonical_smiles(s).unwrap();
            let fingerprint = default_fingerprint(&parse_smiles(canonical.as_str()).unwrap());
            AcceptedMolecule {
                canonical,
                fingerprint,
                score: 1.0,
            }
        })
        .collect();
    let fps: Vec<Fingerprint> = accepted.iter().map(|a| a.fingerprint.clone()).collect();
    c.bench_function("ncircles greedy 50", |b| b.iter(|| ncircles_greedy(black_box(&accepted), 0.65).unwrap()));
    c.bench_function("ncircles exact 15", |b| b.iter(|| ncircles_exact(black_box(&fps[..15]), 0.65).unwrap()));
    c.bench_function("intdiv 50", |b| b.iter(|| intdiv(black_box(&fps)).unwrap()));
}

criterion_group!(benches, canonicalize, fingerprints, diversity);
criterion_main!(benches);
