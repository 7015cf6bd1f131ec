use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::compare::{mean, median, metric_columns};
use super::config::{ExperimentConfig, Method, Stage};
use super::manifest::{record_timing, sha256_hex, ArtifactWriter, Phase, PhaseRecord, RunManifest};
use super::{build_prompt_sets, ingest_corpus, ingest_text, Corpus, HarnessError, PromptSets};
use crate::decoding::{
    beam_search, contrastive_search_many, diverse_beam_search, generate_sequence, greedy, sample, DecodeConfig,
    Scheme,
};
use crate::metrics::{evaluate, reports_to_json, write_reports_csv, EvaluationReport};
use crate::policy::{decode_checkpoint, encode_checkpoint, ModelDims, Policy, PolicyParameters, Vocabulary};
use crate::rl::{train_rl, write_metrics_csv};
use crate::sft::{collect, pretrain, train_sft, EpochStats, PromptSpec, Provenance, SftDataset};

/// Molecules decoded for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt: String,
    pub molecules: Vec<String>,
}

fn hash_json(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

fn record_name(phase: Phase, cfg: &ExperimentConfig) -> String {
    match phase {
        Phase::Generate | Phase::Evaluate => format!("{phase}:{}", cfg.eval_label()),
        p => p.name().to_string(),
    }
}

fn stage_phase(stage: Stage) -> Phase {
    match stage {
        Stage::Pretrain => Phase::Pretrain,
        Stage::Sft => Phase::Sft,
        Stage::Rl => Phase::Rl,
    }
}

/// Hash of everything `phase` depends on, its upstream phases included.
pub fn phase_key(cfg: &ExperimentConfig, phase: Phase) -> Result<String, HarnessError> {
    let v = match phase {
        Phase::Ingest => {
            let bytes = std::fs::read(&cfg.corpus).map_err(|e| HarnessError::io(&cfg.corpus, e))?;
            json!({
                "corpus": sha256_hex(&bytes),
                "min_corpus": cfg.min_corpus,
                "prompts": cfg.prompts,
            })
        }
        Phase::Pretrain => json!({
            "up": phase_key(cfg, Phase::Ingest)?,
            "model": cfg.model,
            "pretrain": cfg.pretrain,
            "seed": cfg.seed,
        }),
        Phase::Collect => json!({
            "up": phase_key(cfg, Phase::Pretrain)?,
            "collect": cfg.collect,
            "seed": cfg.seed,
        }),
        Phase::Sft => json!({
            "up": phase_key(cfg, Phase::Collect)?,
            "sft": cfg.sft,
            "seed": cfg.seed,
        }),
        Phase::Rl => json!({
            "up": phase_key(cfg, Phase::Sft)?,
            "rl": cfg.rl,
            "reward": cfg.reward,
            "seed": cfg.seed,
        }),
        Phase::Generate => json!({
            "up": phase_key(cfg, stage_phase(cfg.eval.policy))?,
            "k": cfg.eval.k,
            "policy": cfg.eval.policy,
            "method": cfg.eval.method,
            "decode": cfg.decode,
            "seed": cfg.seed,
        }),
        Phase::Evaluate => json!({
            "up": phase_key(cfg, Phase::Generate)?,
            "thresholds": cfg.eval.thresholds,
            "match_mode": cfg.reward.match_mode,
            "alpha": cfg.reward.alpha,
        }),
    };
    Ok(hash_json(&v))
}

fn upstream(phase: Phase, cfg: &ExperimentConfig) -> Option<Phase> {
    match phase {
        Phase::Ingest => None,
        Phase::Pretrain => Some(Phase::Ingest),
        Phase::Collect => Some(Phase::Pretrain),
        Phase::Sft => Some(Phase::Collect),
        Phase::Rl => Some(Phase::Sft),
        Phase::Generate => Some(stage_phase(cfg.eval.policy)),
        Phase::Evaluate => Some(Phase::Generate),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    vocab: Vocabulary,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>, HarnessError> {
        let p = self.path(rel);
        std::fs::read(&p).map_err(|e| HarnessError::io(&p, e))
    }

    fn read_text(&self, rel: &str) -> Result<String, HarnessError> {
        String::from_utf8(self.read(rel)?)
            .map_err(|_| HarnessError::MissingUpstream(format!("{rel} is not UTF-8")))
    }

    fn prompts(&self) -> Result<PromptSets, HarnessError> {
        serde_json::from_str(&self.read_text("prompts.json")?)
            .map_err(|e| HarnessError::MissingUpstream(format!("prompts.json: {e}")))
    }

    fn policy(&self, stage: Stage) -> Result<Policy, HarnessError> {
        let params = decode_checkpoint(&self.read(&format!("{}.ckpt", stage.name()))?, &self.vocab)?;
        Ok(Policy::new(self.vocab.clone(), params))
    }

    fn seed(&self, offset: u64) -> u64 {
        self.cfg.seed.wrapping_add(offset)
    }
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,heldout_loss\n");
    for e in history {
        let held = e.heldout_loss.map(|h| format!("{h:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{held}", e.epoch, e.train_loss).expect("string write");
    }
    out
}

fn checkpoint_bytes(params: &PolicyParameters, vocab: &Vocabulary) -> Vec<u8> {
    encode_checkpoint(params, vocab)
}

fn run_ingest(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let corpus = ingest_corpus(&cfg.corpus, cfg.min_corpus)?;
    let sets = prompt_sets(cfg, &corpus)?;
    sets.validate(&corpus, &ctx.vocab)?;
    out.write("corpus.smi", corpus.to_smi().as_bytes())?;
    let mut rejected = String::from("line\treason\ttext\n");
    for r in &corpus.rejected {
        writeln!(rejected, "{}\t{}\t{}", r.line, r.reason, r.text).expect("string write");
    }
    out.write("rejected.tsv", rejected.as_bytes())?;
    out.write(
        "index.json",
        serde_json::to_string_pretty(&corpus.index).expect("index serializes").as_bytes(),
    )?;
    out.write(
        "prompts.json",
        serde_json::to_string_pretty(&sets).expect("prompts serialize").as_bytes(),
    )?;
    log::info!(
        "ingested {} molecules, {} rejected, {} duplicates; {} train and {} eval prompts",
        corpus.len(),
        corpus.rejected.len(),
        corpus.duplicates,
        sets.train.len(),
        sets.eval.len()
    );
    Ok(())
}

/// Explicit prompt lists when configured, otherwise drawn from the corpus.
pub fn prompt_sets(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<PromptSets, HarnessError> {
    let p = &cfg.prompts;
    if p.train.is_empty() && p.eval.is_empty() {
        return build_prompt_sets(corpus, &p.plan);
    }
    if p.train.is_empty() || p.eval.is_empty() {
        return Err(HarnessError::ConfigInvalid(
            "explicit prompts need both train and eval lists".into(),
        ));
    }
    let with_ref = |spec: &PromptSpec| -> PromptSpec {
        match (&spec.reference, corpus.matching(spec).next()) {
            (None, Some(m)) => spec.clone().with_reference(m.smiles.clone()),
            _ => spec.clone(),
        }
    };
    let train: Vec<PromptSpec> = p.train.iter().map(with_ref).collect();
    let rl_train = train
        .iter()
        .filter(|s| !p.plan.holdout_family.is_some_and(|f| s.involves(f)))
        .cloned()
        .collect();
    Ok(PromptSets {
        train,
        rl_train,
        eval: p.eval.iter().map(with_ref).collect(),
    })
}

fn run_pretrain(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let corpus = ingest_text(&ctx.read_text("corpus.smi")?, 0)?;
    let dims = ModelDims::new(ctx.vocab.len(), cfg.model.d_emb, cfg.model.d_h);
    let train = crate::sft::TrainConfig {
        seed: ctx.seed(cfg.pretrain.seed),
        ..cfg.pretrain.clone()
    };
    let result = pretrain(&ctx.vocab, &corpus.molecules, dims, &train)?;
    out.write("pretrain.ckpt", &checkpoint_bytes(&result.params, &ctx.vocab))?;
    out.write("pretrain_history.csv", history_csv(&result.history).as_bytes())?;
    Ok(())
}

fn run_collect(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let sets = ctx.prompts()?;
    let pre = ctx.policy(Stage::Pretrain)?;
    let raws = collect(&pre, &sets.train, cfg.collect.width, cfg.collect.max_tokens);
    let mut collections = Vec::with_capacity(raws.len());
    for (p, r) in sets.train.iter().zip(raws) {
        collections.push((p.clone(), r?));
    }
    let provenance = Provenance {
        collect_width: cfg.collect.width,
        filter: cfg.collect.filter,
        max_k: cfg.collect.max_k,
        seed: cfg.seed,
    };
    let (dataset, excluded) = SftDataset::from_collections(&collections, &provenance);
    if dataset.is_empty() {
        return Err(HarnessError::Sft(crate::sft::SftError::Dataset(
            "every prompt was empty after filtering".into(),
        )));
    }
    out.write("collect.jsonl", dataset.to_jsonl().as_bytes())?;
    let mut ex = excluded.join("\n");
    if !ex.is_empty() {
        ex.push('\n');
    }
    out.write("collect_excluded.txt", ex.as_bytes())?;
    Ok(())
}

fn run_sft(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let dataset = SftDataset::from_jsonl(&ctx.read_text("collect.jsonl")?)?;
    let pre = ctx.policy(Stage::Pretrain)?;
    let train = crate::sft::TrainConfig {
        seed: ctx.seed(cfg.sft.seed),
        ..cfg.sft.clone()
    };
    let result = train_sft(&pre, &dataset, &train)?;
    out.write("sft.ckpt", &checkpoint_bytes(&result.params, &ctx.vocab))?;
    out.write("sft_history.csv", history_csv(&result.history).as_bytes())?;
    Ok(())
}

fn run_rl(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let sets = ctx.prompts()?;
    let sft = ctx.policy(Stage::Sft)?;
    let ppo = crate::rl::PpoConfig {
        seed: ctx.seed(cfg.rl.ppo.seed),
        ..cfg.rl.ppo.clone()
    };
    let result = train_rl(&sft, &sets.rl_train, &ppo, &cfg.reward, cfg.rl.k)?;
    out.write("rl.ckpt", &checkpoint_bytes(&result.params, &ctx.vocab))?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &result.history).map_err(|e| HarnessError::io(&ctx.path("rl_metrics.csv"), e))?;
    out.write("rl_metrics.csv", &csv)?;
    let summary = json!({
        "best_iteration": result.best_iteration,
        "checkpoints": result.checkpoints.iter()
            .map(|c| json!({"iteration": c.iteration, "mean_reward": format!("{:.6}", c.mean_reward)}))
            .collect::<Vec<_>>(),
    });
    out.write(
        "rl_summary.json",
        serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
    )?;
    Ok(())
}

/// Decodes `k` molecules for one prompt with the configured method.
pub fn decode_prompt(
    policy: &Policy,
    prompt: &PromptSpec,
    k: usize,
    method: Method,
    decode: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, HarnessError> {
    let vocab = &policy.vocab;
    if method == Method::Sequence {
        let seq = generate_sequence(policy, &prompt.desc_div_tokens(vocab), k, decode, rng)?;
        return Ok(seq.raw_texts());
    }
    let toks = prompt.desc_tokens(vocab);
    let max = decode.max_tokens;
    let raws = match decode.scheme {
        Scheme::Greedy => vec![greedy(policy, &toks, max).text],
        Scheme::Temperature | Scheme::Nucleus => {
            decode.validate()?;
            let sampler = decode.sampler();
            (0..k).map(|_| sample(policy, &toks, sampler, max, rng).text).collect()
        }
        Scheme::Beam => beam_search(policy, &toks, k.max(decode.beam_width), max)?
            .into_iter()
            .take(k)
            .map(|h| h.text)
            .collect(),
        Scheme::DiverseBeam => {
            let g = decode.group_count;
            let width = k.max(decode.beam_width).div_ceil(g) * g;
            diverse_beam_search(policy, &toks, width, g, decode.diversity_penalty, max)?
                .into_iter()
                .take(k)
                .map(|h| h.text)
                .collect()
        }
        Scheme::ContrastiveBeam => {
            contrastive_search_many(policy, &toks, decode.beam_width, decode.penalty_alpha, k, max)?
                .into_iter()
                .map(|d| d.text)
                .collect()
        }
    };
    Ok(raws)
}

fn generations_path(cfg: &ExperimentConfig) -> String {
    format!("generations/{}.jsonl", cfg.eval_label())
}

fn run_generate(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let sets = ctx.prompts()?;
    let policy = ctx.policy(cfg.eval.policy)?;
    let seed = ctx.seed(cfg.decode.seed);
    let gens: Vec<Generation> = sets
        .eval
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let molecules = decode_prompt(&policy, p, cfg.eval.k, cfg.eval.method, &cfg.decode, &mut rng)?;
            Ok(Generation {
                prompt: p.id(),
                molecules,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut text = String::new();
    for g in &gens {
        text.push_str(&serde_json::to_string(g).expect("generation serializes"));
        text.push('\n');
    }
    out.write(&generations_path(cfg), text.as_bytes())?;
    Ok(())
}

/// Scores each prompt's molecules; prompts run in parallel and results keep
/// prompt order.
pub fn evaluate_generations(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    prompts: &[PromptSpec],
    generations: &[Generation],
) -> Result<Vec<EvaluationReport>, HarnessError> {
    if prompts.len() != generations.len()
        || prompts.iter().zip(generations).any(|(p, g)| p.id() != g.prompt)
    {
        return Err(HarnessError::PromptSetMismatch(
            "generations do not match the evaluation prompts".into(),
        ));
    }
    prompts
        .par_iter()
        .zip(generations)
        .map(|(p, g)| {
            let acceptor = cfg
                .reward
                .acceptor(p)
                .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
            Ok(evaluate(
                vocab,
                &g.prompt,
                &g.molecules,
                &acceptor,
                p.reference.as_ref(),
                &cfg.eval.thresholds,
            )?)
        })
        .collect()
}

/// `metric,mean,median` over the prompts of one report set.
pub fn summary_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("metric,mean,median\n");
    for (name, get) in metric_columns(reports) {
        let v: Vec<f64> = reports.iter().map(&get).collect();
        writeln!(out, "{name},{:.6},{:.6}", mean(&v), median(&v)).expect("string write");
    }
    out
}

fn run_evaluate(ctx: &Ctx, out: &mut ArtifactWriter) -> Result<(), HarnessError> {
    let cfg = ctx.cfg;
    let sets = ctx.prompts()?;
    let text = ctx.read_text(&generations_path(cfg))?;
    let gens: Vec<Generation> = text
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::MissingUpstream(format!("generations: {e}"))))
        .collect::<Result<_, _>>()?;
    let reports = evaluate_generations(cfg, &ctx.vocab, &sets.eval, &gens)?;
    let label = cfg.eval_label();
    let mut csv = Vec::new();
    write_reports_csv(&mut csv, &reports).map_err(|e| HarnessError::io(ctx.dir, e))?;
    out.write(&format!("reports/{label}.csv"), &csv)?;
    out.write(&format!("reports/{label}.json"), reports_to_json(&reports).as_bytes())?;
    out.write(&format!("reports/{label}.summary.csv"), summary_csv(&reports).as_bytes())?;
    Ok(())
}

/// Runs one phase in `cfg.output_dir` after checking its upstream record,
/// then records its artifacts in the manifest. Wall-clock time goes to the
/// timings file.
pub fn run_phase(cfg: &ExperimentConfig, phase: Phase) -> Result<PhaseRecord, HarnessError> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    // Where a run is written is not part of the experiment.
    let located = ExperimentConfig {
        output_dir: PathBuf::new(),
        ..cfg.clone()
    };
    let config_hash = hash_json(&serde_json::to_value(&located).expect("config serializes"));
    let mut manifest = RunManifest::load(dir)?.unwrap_or_else(|| RunManifest::new(config_hash.clone(), cfg.seed));
    if let Some(up) = upstream(phase, cfg) {
        let name = record_name(up, cfg);
        manifest.verified(dir, &name, &phase_key(cfg, up)?)?;
    }
    let ctx = Ctx {
        cfg,
        dir,
        vocab: Vocabulary::standard(),
    };
    let start = Instant::now();
    let mut out = ArtifactWriter::new(dir);
    match phase {
        Phase::Ingest => run_ingest(&ctx, &mut out)?,
        Phase::Pretrain => run_pretrain(&ctx, &mut out)?,
        Phase::Collect => run_collect(&ctx, &mut out)?,
        Phase::Sft => run_sft(&ctx, &mut out)?,
        Phase::Rl => run_rl(&ctx, &mut out)?,
        Phase::Generate => run_generate(&ctx, &mut out)?,
        Phase::Evaluate => run_evaluate(&ctx, &mut out)?,
    }
    let record = PhaseRecord {
        key: phase_key(cfg, phase)?,
        seed: cfg.seed,
        artifacts: out.finish(),
    };
    let name = record_name(phase, cfg);
    manifest.config_hash = config_hash;
    manifest.seed = cfg.seed;
    manifest.phases.insert(name.clone(), record.clone());
    manifest.save(dir)?;
    record_timing(dir, &name, start.elapsed().as_secs_f64())?;
    log::info!("phase {name} done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(record)
}

/// Runs `phases` in order. With `reuse`, a phase whose manifest record
/// still verifies is skipped.
pub fn run_pipeline(cfg: &ExperimentConfig, phases: &[Phase], reuse: bool) -> Result<(), HarnessError> {
    for &phase in phases {
        if reuse {
            let manifest = RunManifest::load(&cfg.output_dir)?;
            let key = phase_key(cfg, phase)?;
            if let Some(m) = manifest {
                if m.verified(&cfg.output_dir, &record_name(phase, cfg), &key).is_ok() {
                    log::info!("phase {phase} is up to date");
                    continue;
                }
            }
        }
        run_phase(cfg, phase)?;
    }
    Ok(())
}

/// Reads `reports/<label>.json` from a run directory.
pub fn load_reports(dir: &Path, label: &str) -> Result<Vec<EvaluationReport>, HarnessError> {
    let path = dir.join(format!("reports/{label}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))
}
