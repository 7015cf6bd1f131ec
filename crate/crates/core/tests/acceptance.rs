//! Acceptance gate. Each criterion prints one line:
//! `criterion N PASS|FAIL name: detail`.
//!
//! `acceptance` runs every criterion except the RL orderings, which take
//! about half an hour and live in the ignored `acceptance_rl_orderings`:
//!
//! ```text
//! cargo test -p divmol --test acceptance -- --include-ignored --nocapture
//! ```

mod common;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use divmol::decoding::{
    beam_search, contrastive_beam_search, diverse_beam_search, greedy, sample, Sampler,
};
use divmol::fingerprints::{default_fingerprint, tanimoto, Fingerprint};
use divmol::harness::{ingest_corpus, load_reports, median, run_pipeline, Corpus, ExperimentConfig, Phase, Stage};
use divmol::metrics::{
    evaluate, greedy_centers, ncircles_exact, AcceptanceSpec, AcceptedMolecule, EvaluationReport,
    DEFAULT_THRESHOLDS,
};
use divmol::policy::{Block, ModelDims, Policy, PolicyParameters, PropertyFamily, TokenId, Vocabulary, BOS};
use divmol::rl::{div_from_similarity, match_from_score, reward_div, StageMode};
use divmol::smiles::{canonical_smiles, canonicalize, parse_smiles, write_randomized, MolecularGraph};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(id: u32, name: &'static str, pass: bool, detail: String) -> Self {
        let o = Outcome { id, name, pass, detail };
        println!(
            "criterion {} {} {}: {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        o
    }
}

fn corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.smi")
}

fn corpus() -> Corpus {
    ingest_corpus(&corpus_path(), 200).unwrap()
}

fn graphs(corpus: &Corpus, n: usize, seed: u64) -> Vec<MolecularGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, corpus.molecules.len(), n)
        .into_iter()
        .map(|i| parse_smiles(corpus.molecules[i].smiles.as_str()).unwrap())
        .collect()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn canonicalization(corpus: &Corpus) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut total, mut failures, mut differing) = (0, 0, 0);
    for g in graphs(corpus, 100, 11) {
        let reference = canonicalize(&g);
        for _ in 0..10 {
            let spelling = write_randomized(&g, &mut rng);
            total += 1;
            differing += usize::from(spelling != reference.as_str());
            if canonical_smiles(&spelling).ok().as_ref() != Some(&reference) {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        1,
        "canonicalization",
        failures == 0 && total == 1000 && elapsed < Duration::from_secs(10),
        format!(
            "{failures}/{total} respellings disagree ({differing} differ from the canonical text), {:.2}s",
            secs(elapsed)
        ),
    )
}

fn tanimoto_axioms(corpus: &Corpus) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = corpus.molecules.len();
    let mut violations = Vec::new();
    for pair in 0..500 {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let gi = parse_smiles(corpus.molecules[i].smiles.as_str()).unwrap();
        let gj = parse_smiles(corpus.molecules[j].smiles.as_str()).unwrap();
        let (a, b) = (default_fingerprint(&gi), default_fingerprint(&gj));
        let mut perm: Vec<usize> = (0..gi.atom_count()).collect();
        perm.shuffle(&mut rng);
        let a_perm = default_fingerprint(&gi.permuted(&perm));
        let ab = tanimoto(&a, &b).unwrap();
        let checks = [
            ("self", tanimoto(&a, &a).unwrap() == 1.0),
            ("symmetry", ab == tanimoto(&b, &a).unwrap()),
            ("range", (0.0..=1.0).contains(&ab)),
            ("isomorphism", a_perm == a && tanimoto(&a_perm, &b).unwrap() == ab),
        ];
        for (name, ok) in checks {
            if !ok {
                violations.push(format!("pair {pair} {name}"));
            }
        }
    }
    Outcome::new(
        2,
        "tanimoto axioms",
        violations.is_empty(),
        format!("500 pairs, {} violations {:?}", violations.len(), violations),
    )
}

const NCIRCLE_THRESHOLDS: [f64; 5] = [0.4, 0.55, 0.65, 0.75, 0.9];

fn ncircles(corpus: &Corpus) -> Outcome {
    let start = Instant::now();
    let fps: Vec<Fingerprint> = corpus
        .molecules
        .iter()
        .map(|m| default_fingerprint(&parse_smiles(m.smiles.as_str()).unwrap()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut bound, mut maximal, mut monotone, mut greedy_drops) = (0, 0, 0, 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=15);
        let picked = index::sample(&mut rng, fps.len(), n).into_vec();
        let set: Vec<AcceptedMolecule> = picked
            .iter()
            .map(|&i| AcceptedMolecule {
                canonical: corpus.molecules[i].smiles.clone(),
                fingerprint: fps[i].clone(),
                score: rng.gen_range(0.0..1.0),
            })
            .collect();
        let set_fps: Vec<Fingerprint> = set.iter().map(|m| m.fingerprint.clone()).collect();
        let mut prev: Option<(usize, usize)> = None;
        for h in NCIRCLE_THRESHOLDS {
            let centers = greedy_centers(&set, h).unwrap();
            let exact = ncircles_exact(&set_fps, h).unwrap();
            if centers.len() > exact {
                bound += 1;
            }
            let addable = (0..set.len()).any(|i| {
                !centers.contains(&i)
                    && centers
                        .iter()
                        .all(|&c| tanimoto(&set_fps[i], &set_fps[c]).unwrap() < h)
            });
            if addable {
                maximal += 1;
            }
            if let Some((g, e)) = prev {
                if exact < e {
                    monotone += 1;
                }
                if centers.len() < g {
                    greedy_drops += 1;
                }
            }
            prev = Some((centers.len(), exact));
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        3,
        "ncircles",
        bound + maximal + monotone + greedy_drops == 0 && elapsed < Duration::from_secs(60),
        format!(
            "200 sets: {bound} greedy>exact, {maximal} non-maximal, {monotone} exact decreases in h \
             ({greedy_drops} greedy decreases), {:.2}s",
            secs(elapsed)
        ),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0u64, Block::ALL[0]);
    for seed in 0..10 {
        for (block, err) in common::cross_entropy_errors(seed) {
            if err > worst.0 || err.is_nan() {
                worst = (err, seed, block);
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        4,
        "gradient check",
        worst.0 < common::REL_TOL && elapsed < Duration::from_secs(60),
        format!(
            "worst relative error {:.2e} (seed {}, block {}), {} blocks x 10 seeds, {:.2}s",
            worst.0,
            worst.1,
            worst.2.name(),
            Block::ALL.len(),
            secs(elapsed)
        ),
    )
}

fn reward_formulas(corpus: &Corpus) -> Outcome {
    let g = parse_smiles(corpus.molecules[0].smiles.as_str()).unwrap();
    let fp = default_fingerprint(&g);
    let other = default_fingerprint(&parse_smiles(corpus.molecules[1].smiles.as_str()).unwrap());
    let first = reward_div(&fp, &[], 2.0).unwrap();
    let dup = reward_div(&fp, &[other, fp.clone()], 2.0).unwrap();
    let half = div_from_similarity(0.5, 2.0);
    let m = match_from_score(0.49, 0.5);
    let pass = first == 0.0 && dup == 0.0 && half == 0.75 && (m - 0.7).abs() <= 1e-12;
    Outcome::new(
        5,
        "reward formulas",
        pass,
        format!("r_div first {first}, duplicate {dup}, sim 0.5 beta 2 -> {half}, r_match(0.49, 0.5) = {m}"),
    )
}

fn decoding_identities() -> Outcome {
    let vocab = Vocabulary::standard();
    let n = vocab.len() as TokenId;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = PolicyParameters::init(ModelDims::new(vocab.len(), 16, 32), &mut rng);
        params.block_mut(Block::WOut).iter_mut().for_each(|w| *w *= 8.0);
        let policy = Policy::new(vocab.clone(), params);
        let mut prompt = vec![BOS];
        prompt.extend((0..rng.gen_range(1..6)).map(|_| rng.gen_range(4..n)));
        let max = 30;

        let g = greedy(&policy, &prompt, max);
        let b1 = beam_search(&policy, &prompt, 1, max).unwrap();
        if b1[0].tokens != g.tokens {
            failures.push(format!("seed {seed} beam(1)"));
        }
        let beam = beam_search(&policy, &prompt, 3, max).unwrap();
        let diverse = diverse_beam_search(&policy, &prompt, 12, 4, 0.0, max).unwrap();
        for group in 0..4 {
            let got: Vec<_> = diverse.iter().filter(|h| h.group == group).map(|h| &h.tokens).collect();
            let want: Vec<_> = beam.iter().map(|h| &h.tokens).collect();
            if got != want {
                failures.push(format!("seed {seed} diverse group {group}"));
            }
        }
        let c = contrastive_beam_search(&policy, &prompt, 5, 0.0, max).unwrap();
        if c.tokens != g.tokens {
            failures.push(format!("seed {seed} contrastive"));
        }
        let plain = sample(&policy, &prompt, Sampler::Temperature(1.0), max, &mut ChaCha8Rng::seed_from_u64(seed));
        let nucleus = sample(
            &policy,
            &prompt,
            Sampler::Nucleus { temperature: 1.0, top_p: 1.0 },
            max,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        if plain.tokens != nucleus.tokens {
            failures.push(format!("seed {seed} nucleus"));
        }
    }
    Outcome::new(
        6,
        "decoding identities",
        failures.is_empty(),
        format!("20 prompts, mismatches {failures:?}"),
    )
}

fn dedup_observation() -> Outcome {
    let vocab = Vocabulary::standard();
    let reference = canonical_smiles("Oc1ccccc1").unwrap();
    let raws = vec!["Oc1ccccc1".to_string(), "c1ccc(O)cc1".to_string()];
    let report = evaluate(
        &vocab,
        "phenol",
        &raws,
        &AcceptanceSpec::Reference { reference: reference.clone() },
        Some(&reference),
        &DEFAULT_THRESHOLDS,
    )
    .unwrap();
    Outcome::new(
        9,
        "spelling dedup",
        report.distinct_raw == 2 && report.accepted_unique == 1,
        format!("{} spellings, accepted_unique {}", report.distinct_raw, report.accepted_unique),
    )
}

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        corpus: corpus_path(),
        output_dir: out.to_path_buf(),
        seed: 5,
        ..Default::default()
    };
    c.model.d_emb = 8;
    c.model.d_h = 16;
    c.pretrain.epochs = 1;
    c.collect.width = 6;
    c.collect.max_tokens = 24;
    c.sft.epochs = 1;
    c.rl.ppo.iterations = 2;
    c.rl.ppo.batch_size = 2;
    c.rl.ppo.minibatch_size = 1;
    c.rl.ppo.value_warmup = 1;
    c.rl.ppo.max_tokens = 24;
    c.rl.k = 3;
    c.decode.max_tokens = 24;
    c.eval.k = 5;
    c
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(&tiny(d.path()), &Phase::ALL, false).unwrap();
    }
    let csv = "reports/rl_ours.csv";
    let a = std::fs::read(dirs[0].path().join(csv)).unwrap();
    let b = std::fs::read(dirs[1].path().join(csv)).unwrap();
    Outcome::new(
        10,
        "determinism",
        a == b && !a.is_empty(),
        format!("evaluation CSVs of two runs: {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

/// The full-size experiment shared by criteria 7 and 8.
fn experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        corpus: corpus_path(),
        output_dir: PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"),
        ..Default::default()
    };
    c.collect.width = 300;
    c.rl.ppo.iterations = 50;
    c.eval.k = 20;
    c
}

// Criteria 7 and 8 write to the same run directory.
static RUN_DIR: Mutex<()> = Mutex::new(());

fn evaluate_as(cfg: &ExperimentConfig, label: &str) -> Vec<EvaluationReport> {
    let mut cfg = cfg.clone();
    cfg.eval.label = Some(label.to_string());
    run_pipeline(&cfg, &[Phase::Generate, Phase::Evaluate], false).unwrap();
    load_reports(&cfg.output_dir, label).unwrap()
}

fn sft_pipeline() -> Outcome {
    let _guard = RUN_DIR.lock().unwrap_or_else(|e| e.into_inner());
    let mut cfg = experiment();
    cfg.eval.policy = Stage::Sft;
    let start = Instant::now();
    run_pipeline(&cfg, &[Phase::Ingest, Phase::Pretrain, Phase::Collect, Phase::Sft], false).unwrap();
    let reports = evaluate_as(&cfg, "sft_ours");
    let elapsed = start.elapsed();
    let validity = median(&reports.iter().map(EvaluationReport::validity).collect::<Vec<_>>());
    let accepted = median(&reports.iter().map(|r| r.accepted_unique as f64).collect::<Vec<_>>());
    let corpus_size = corpus().molecules.len();
    Outcome::new(
        7,
        "pretrain and sft pipeline",
        validity >= 0.8 && accepted >= 10.0 && corpus_size <= 1000 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "corpus {corpus_size}, K=20 over {} prompts: median validity {validity:.3}, median accepted_unique {accepted}, {:.0}s",
            reports.len(),
            secs(elapsed)
        ),
    )
}

#[test]
fn acceptance() {
    let corpus = corpus();
    let outcomes = vec![
        canonicalization(&corpus),
        tanimoto_axioms(&corpus),
        ncircles(&corpus),
        gradient_check(),
        reward_formulas(&corpus),
        decoding_identities(),
        sft_pipeline(),
        dedup_observation(),
        determinism(),
    ];
    println!("criterion 8 is checked by the ignored test acceptance_rl_orderings");
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}

const RL_SEEDS: u64 = 5;

#[derive(Default)]
struct Medians {
    intdiv: Vec<f64>,
    nc65: Vec<f64>,
    held_intdiv: Vec<f64>,
    held_nc65: Vec<f64>,
}

impl Medians {
    fn push(&mut self, reports: &[EvaluationReport], held: &[bool]) {
        let pick = |f: &dyn Fn(&EvaluationReport) -> f64, only_held: bool| {
            median(
                &reports
                    .iter()
                    .zip(held)
                    .filter(|(_, &h)| h || !only_held)
                    .map(|(r, _)| f(r))
                    .collect::<Vec<_>>(),
            )
        };
        let nc = |r: &EvaluationReport| r.ncircles_at(0.65).unwrap() as f64;
        self.intdiv.push(pick(&|r| r.intdiv, false));
        self.nc65.push(pick(&nc, false));
        self.held_intdiv.push(pick(&|r| r.intdiv, true));
        self.held_nc65.push(pick(&nc, true));
    }

    fn summary(&self) -> [f64; 4] {
        [&self.intdiv, &self.nc65, &self.held_intdiv, &self.held_nc65].map(|v| median(v))
    }
}

#[test]
#[ignore = "about 35 minutes"]
fn acceptance_rl_orderings() {
    let _guard = RUN_DIR.lock().unwrap_or_else(|e| e.into_inner());
    let base = experiment();
    run_pipeline(&base, &[Phase::Ingest, Phase::Pretrain, Phase::Collect, Phase::Sft], true).unwrap();
    let prompts = divmol::harness::build_prompt_sets(&corpus(), &base.prompts.plan).unwrap();
    let held: Vec<bool> = prompts.eval.iter().map(|p| p.involves(PropertyFamily::Rings)).collect();
    assert!(prompts.rl_train.iter().all(|p| !p.involves(PropertyFamily::Rings)));

    let (mut sft, mut multi, mut single) = (Medians::default(), Medians::default(), Medians::default());
    let mut rl_time = Duration::ZERO;
    for s in 0..RL_SEEDS {
        let mut cfg = base.clone();
        cfg.decode.seed = s;
        cfg.rl.ppo.seed = s;
        cfg.eval.policy = Stage::Sft;
        sft.push(&evaluate_as(&cfg, &format!("sft_s{s}")), &held);
        cfg.eval.policy = Stage::Rl;
        for (mode, acc, name) in [(StageMode::Multi, &mut multi, "multi"), (StageMode::Single, &mut single, "single")] {
            cfg.rl.ppo.stage_mode = mode;
            let start = Instant::now();
            run_pipeline(&cfg, &[Phase::Rl], false).unwrap();
            rl_time = rl_time.max(start.elapsed());
            acc.push(&evaluate_as(&cfg, &format!("rl_{name}_s{s}")), &held);
        }
    }
    let [s_div, s_nc, s_hdiv, s_hnc] = sft.summary();
    let [m_div, m_nc, m_hdiv, m_hnc] = multi.summary();
    let [g_div, g_nc, g_hdiv, g_hnc] = single.summary();
    let a = m_div > s_div && m_nc > s_nc;
    let b = m_div > g_div && m_nc > g_nc;
    let c = m_hdiv > s_hdiv && m_hnc > s_hnc;
    let timely = rl_time < Duration::from_secs(45 * 60);
    let o = Outcome::new(
        8,
        "rl orderings",
        a && b && c && timely,
        format!(
            "intdiv/nc65 sft {s_div:.3}/{s_nc} multi {m_div:.3}/{m_nc} single {g_div:.3}/{g_nc}; \
             held-out sft {s_hdiv:.3}/{s_hnc} multi {m_hdiv:.3}/{m_hnc} single {g_hdiv:.3}/{g_hnc}; \
             (a) {a} (b) {b} (c) {c}; slowest RL phase {:.0}s",
            secs(rl_time)
        ),
    );
    assert!(o.pass);
}
