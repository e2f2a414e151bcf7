//! Experiment harness: corpus generation, static-scorer training, online
//! preference tracking, the unified method comparison, and the ablation and
//! stability studies. Every run is a pure function of (config, seed) and
//! reruns write byte-identical metric files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{biased_score, synonym_augment, truncate_trace, AugDb, AugRecord, Provenance, SynonymLexicon};
use crate::baselines::{build_preference_pairs, dpo_train_epoch, ppo_train_epoch};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::policy::PolicyParams;
use crate::scorer::{er_train_step, ReplayBuffer, ReplayItem, ScorerParams};
use crate::sim_env::{
    build_vocab, default_domains, default_lexicon, domain_prompt, domain_response, env_reward,
    gen_corpus, streams, validate_domains, CorpusConfig, DomainSpec, FeedbackTemplates,
    PreferenceSchedule, SatClass, SimUser, StaticSample,
};
use crate::snapshot::{load_scorer, save_scorer, scorer_fingerprint};
use crate::tokens::{TokenId, Vocab, BOS, EOS};
use crate::tracebias::{train_epoch, TraceSample, UpdateRow};

// Sub-stream ids of the experiment seed, one per consumer of randomness.
const S_SCORER_INIT: u64 = 10;
const S_STATIC_TRAIN: u64 = 11;
const S_TRACK: u64 = 12;
const S_POLICY_INIT: u64 = 13;
const S_COMPARE_CORPUS: u64 = 15;
const S_COMPARE_AUG: u64 = 16;
const S_TB: u64 = 17;
const S_PPO: u64 = 18;
const S_DPO_DATA: u64 = 19;
const S_EVAL_PROMPTS: u64 = 20;
const S_EVAL_SAMPLE: u64 = 21;
const S_ER: u64 = 22;
const S_ER_PROBE: u64 = 23;
const S_STAB_CORPUS: u64 = 24;
const S_STAB_TB: u64 = 25;
const S_STAB_PPO: u64 = 26;

/// Fixed file layout under the output directory.
pub struct OutPaths {
    pub corpus_dir: PathBuf,
    pub traces: PathBuf,
    pub static_pool: PathBuf,
    pub lexicon: PathBuf,
    pub vocab: PathBuf,
    pub static_scorer: PathBuf,
    pub arf_scorer: PathBuf,
}

impl OutPaths {
    pub fn new(out_dir: &Path) -> Self {
        let corpus_dir = out_dir.join("corpus");
        OutPaths {
            traces: corpus_dir.join("traces.jsonl"),
            static_pool: corpus_dir.join("static_pool.jsonl"),
            lexicon: corpus_dir.join("lexicon.txt"),
            vocab: corpus_dir.join("vocab.json"),
            corpus_dir,
            static_scorer: out_dir.join("static_scorer.json"),
            arf_scorer: out_dir.join("arf_scorer.json"),
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Serializes rows into CSV text with a header; floats use the shortest
/// round-trip representation so reruns are byte-identical.
fn csv_text(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn jsonl_text<T: serde::Serialize>(items: &[T], path: &Path) -> Result<String> {
    let mut out = String::new();
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::persistence(path, format!("serialize: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct GenReport {
    pub trace_count: usize,
    pub pool_count: usize,
    pub lexicon_count: usize,
    pub paths: Vec<PathBuf>,
}

/// Materializes the trace corpus, the static pool, the synonym lexicon, and
/// the vocabulary under `<out>/corpus/`.
pub fn run_gen_corpus(cfg: &ExperimentConfig) -> Result<GenReport> {
    cfg.validate()?;
    let paths = OutPaths::new(&cfg.out_dir);
    ensure_dir(&paths.corpus_dir)?;
    let vocab = build_vocab();
    let domains = default_domains();
    validate_domains(&domains, &vocab)?;
    let schedule = PreferenceSchedule::new(cfg.flip_period, cfg.max_negative, domains.len())?;
    let root = Rng::new(cfg.seed);
    let (traces, pool) = gen_corpus(&domains, &schedule, &cfg.corpus, &root)?;
    let lexicon = default_lexicon();
    lexicon.validate_against(&vocab)?;

    write_text(&paths.traces, &jsonl_text(&traces, &paths.traces)?)?;
    write_text(&paths.static_pool, &jsonl_text(&pool, &paths.static_pool)?)?;
    lexicon.save(&paths.lexicon)?;
    let vocab_json = serde_json::to_string(&vocab)
        .map_err(|e| Error::persistence(&paths.vocab, format!("serialize: {e}")))?;
    write_text(&paths.vocab, &vocab_json)?;

    Ok(GenReport {
        trace_count: traces.len(),
        pool_count: pool.len(),
        lexicon_count: lexicon.len(),
        paths: vec![
            paths.traces,
            paths.static_pool,
            paths.lexicon,
            paths.vocab,
        ],
    })
}

/// Everything the downstream experiments read from disk.
pub struct CorpusArtifacts {
    pub vocab: Vocab,
    pub domains: Vec<DomainSpec>,
    pub traces: Vec<TraceSample>,
    pub pool: Vec<StaticSample>,
    pub lexicon: SynonymLexicon,
}

fn missing_corpus(path: &Path) -> Error {
    Error::Config(format!(
        "corpus file {} not found; run `arf gen-corpus` first",
        path.display()
    ))
}

pub fn load_corpus_artifacts(cfg: &ExperimentConfig) -> Result<CorpusArtifacts> {
    let paths = OutPaths::new(&cfg.out_dir);
    for p in [&paths.traces, &paths.static_pool, &paths.lexicon, &paths.vocab] {
        if !p.exists() {
            return Err(missing_corpus(p));
        }
    }
    let vocab_text = fs::read_to_string(&paths.vocab).map_err(|e| Error::io(&paths.vocab, e))?;
    let vocab: Vocab = serde_json::from_str(&vocab_text)
        .map_err(|e| Error::persistence(&paths.vocab, format!("parse: {e}")))?;
    let vocab = vocab.reindex()?;
    let builtin = build_vocab();
    if vocab.size() != builtin.size() {
        return Err(Error::Config(
            "stored vocabulary disagrees with this build; regenerate with `arf gen-corpus`".into(),
        ));
    }
    let mut traces = Vec::new();
    let trace_text = fs::read_to_string(&paths.traces).map_err(|e| Error::io(&paths.traces, e))?;
    for (lineno, line) in trace_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TraceSample = serde_json::from_str(line)
            .map_err(|e| Error::persistence(&paths.traces, format!("line {}: {e}", lineno + 1)))?;
        t.validate()?;
        traces.push(t);
    }
    let mut pool = Vec::new();
    let pool_text =
        fs::read_to_string(&paths.static_pool).map_err(|e| Error::io(&paths.static_pool, e))?;
    for (lineno, line) in pool_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: StaticSample = serde_json::from_str(line).map_err(|e| {
            Error::persistence(&paths.static_pool, format!("line {}: {e}", lineno + 1))
        })?;
        s.label.validate()?;
        pool.push(s);
    }
    let lexicon = SynonymLexicon::load(&paths.lexicon)?;
    lexicon.validate_against(&vocab)?;
    Ok(CorpusArtifacts {
        vocab,
        domains: default_domains(),
        traces,
        pool,
        lexicon,
    })
}

fn load_static_scorer(cfg: &ExperimentConfig) -> Result<ScorerParams> {
    let paths = OutPaths::new(&cfg.out_dir);
    if !paths.static_scorer.exists() {
        return Err(Error::Config(format!(
            "scorer snapshot {} not found; run `arf train-static` first",
            paths.static_scorer.display()
        )));
    }
    load_scorer(&paths.static_scorer)
}

fn pool_split(pool: &[StaticSample], holdout_every: usize) -> (Vec<&StaticSample>, Vec<&StaticSample>) {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        if i % holdout_every == 0 {
            holdout.push(s);
        } else {
            train.push(s);
        }
    }
    (train, holdout)
}

fn pool_accuracy(scorer: &ScorerParams, vocab: &Vocab, items: &[&StaticSample]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidInput("accuracy over an empty set".into()));
    }
    let mut hits = 0usize;
    for s in items {
        let pred = scorer.score(&vocab.ids(&s.tokens))?;
        if pred.argmax() == s.label.argmax() {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

// ---------------------------------------------------------------------------
// train-static
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct StaticReport {
    pub holdout_accuracy: f64,
    pub holdout_n: usize,
    pub train_n: usize,
    pub steps: u64,
    pub scorer_fingerprint: String,
}

/// Trains the static scorer on the schedule-invariant pool and reports
/// held-out 3-class accuracy.
pub fn run_train_static(cfg: &ExperimentConfig) -> Result<StaticReport> {
    cfg.validate()?;
    let arts = load_corpus_artifacts(cfg)?;
    let (train, holdout) = pool_split(&arts.pool, cfg.static_holdout_every);
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Config("static pool too small to split".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut scorer = ScorerParams::init(
        arts.vocab.size(),
        cfg.scorer_dim,
        &mut root.stream(S_SCORER_INIT),
    )?;
    let mut train_rng = root.stream(S_STATIC_TRAIN);
    let mut loss_rows: Vec<Vec<String>> = Vec::new();
    for step in 0..cfg.static_steps {
        let item = train[train_rng.below(train.len())];
        let loss = scorer.train_step_soft(&arts.vocab.ids(&item.tokens), &item.label, cfg.static_lr)?;
        if step % 50 == 0 {
            loss_rows.push(vec![step.to_string(), loss.to_string()]);
        }
    }
    let accuracy = pool_accuracy(&scorer, &arts.vocab, &holdout)?;
    let paths = OutPaths::new(&cfg.out_dir);
    save_scorer(&scorer, &paths.static_scorer)?;
    write_text(
        &cfg.out_dir.join("train_static.csv"),
        &csv_text("step,loss", &loss_rows),
    )?;
    let report_rows = vec![vec![
        "holdout".to_string(),
        accuracy.to_string(),
        holdout.len().to_string(),
    ]];
    write_text(
        &cfg.out_dir.join("static_report.csv"),
        &csv_text("split,accuracy,n", &report_rows),
    )?;
    Ok(StaticReport {
        holdout_accuracy: accuracy,
        holdout_n: holdout.len(),
        train_n: train.len(),
        steps: cfg.static_steps,
        scorer_fingerprint: scorer_fingerprint(&scorer),
    })
}

// ---------------------------------------------------------------------------
// track-arf (shared with the re-scoring ablation)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub step: u64,
    pub domain: String,
    pub mean_score: f64,
}

#[derive(Debug)]
pub struct TrackOutcome {
    pub series: Vec<ProbeRow>,
    pub flips: Vec<(String, u64)>,
    pub records_stored: usize,
    pub rescore_sweeps: usize,
    pub arf: ScorerParams,
}

impl TrackOutcome {
    /// Probe value for a domain at an exact step, if recorded.
    pub fn probe_at(&self, domain: &str, step: u64) -> Option<f64> {
        self.series
            .iter()
            .find(|r| r.domain == domain && r.step == step)
            .map(|r| r.mean_score)
    }
}

/// One online-tracking run.
///
/// Each schedule phase injects a batch of the newly activated domain's
/// interactions into the augmentation database, scored by the static
/// scorer's read of the user's feedback at injection time (plus
/// blend-scored synonym variants). Per step, the simulated user produces a
/// fresh interaction under the current schedule sign; the online scorer
/// trains on the fresh soft label or on a stored record, interleaved with
/// experience replay. Re-scoring sweeps are the only mechanism that updates
/// stored scores after injection, so disabling them leaves stale scores
/// training the scorer. Exposed as the building block of the re-scoring
/// ablation.
pub fn run_track(cfg: &ExperimentConfig, rescore_enabled: bool) -> Result<TrackOutcome> {
    ensure_dir(&cfg.out_dir)?;
    let arts = load_corpus_artifacts(cfg)?;
    let static_scorer = load_static_scorer(cfg)?;
    // The online copy starts as an exact clone of the static parameters.
    let mut arf = static_scorer.clone();
    let schedule = PreferenceSchedule::new(cfg.flip_period, cfg.max_negative, arts.domains.len())?;
    let templates = FeedbackTemplates::default();
    templates.validate()?;

    let (pool_train, _) = pool_split(&arts.pool, cfg.static_holdout_every);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    for item in &pool_train {
        buffer.push(ReplayItem {
            tokens: arts.vocab.ids(&item.tokens),
            static_label: item.label,
        });
    }

    let root = Rng::new(cfg.seed);
    let mut rng = root.stream(S_TRACK).stream(rescore_enabled as u64);
    // Held-out per-domain probe pairs, fixed for the whole run.
    let mut probe_rng = root.stream(streams::PROBES);
    let probes: Vec<(String, Vec<Vec<TokenId>>)> = arts
        .domains
        .iter()
        .map(|d| {
            let pairs = (0..cfg.probe_size)
                .map(|_| {
                    let mut toks = arts.vocab.ids(&domain_prompt(d, &mut probe_rng));
                    toks.extend(arts.vocab.ids(&domain_response(d, &mut probe_rng)));
                    toks
                })
                .collect();
            (d.name.clone(), pairs)
        })
        .collect();

    let mut db = AugDb::new();
    let mut series = Vec::new();
    let mut sweeps = 0usize;
    let mut injected_phases = 0usize;
    let probe = |arf: &ScorerParams, step: u64, series: &mut Vec<ProbeRow>| -> Result<()> {
        for (name, pairs) in &probes {
            let mut sum = 0.0;
            for p in pairs {
                sum += arf.score(p)?.step_score();
            }
            series.push(ProbeRow {
                step,
                domain: name.clone(),
                mean_score: sum / pairs.len() as f64,
            });
        }
        Ok(())
    };

    for step in 0..cfg.track_steps {
        if step % cfg.eval_interval == 0 {
            probe(&arf, step, &mut series)?;
        }

        // Phase boundary: inject the newly activated domain's batch.
        while injected_phases < arts.domains.len()
            && step >= (injected_phases as u64) * cfg.flip_period
        {
            let domain = &arts.domains[injected_phases];
            for k in 0..cfg.inject_per_phase {
                let prompt = domain_prompt(domain, &mut rng);
                let response = domain_response(domain, &mut rng);
                let next_prompt = domain_prompt(domain, &mut rng);
                // A newly activated domain is always under positive
                // supervision at activation time.
                let feedback = templates.feedback_for(SatClass::Good, &next_prompt, &mut rng);
                let soft_label = static_scorer.score(&arts.vocab.ids(&feedback))?;
                db.push(AugRecord {
                    id: format!("p{injected_phases}k{k:04}o"),
                    prompt_tokens: prompt.clone(),
                    response_tokens: response.clone(),
                    followup_tokens: feedback,
                    score: soft_label,
                    provenance: Provenance::Original,
                    created_step: step,
                    last_rescored_step: step,
                })?;
                if rng.next_f64() < cfg.synonym_prob {
                    let aug_prompt = synonym_augment(
                        &prompt,
                        &arts.lexicon,
                        cfg.synonym_rounds,
                        cfg.p_sub,
                        &mut rng,
                    );
                    let aug_response = synonym_augment(
                        &response,
                        &arts.lexicon,
                        cfg.synonym_rounds,
                        cfg.p_sub,
                        &mut rng,
                    );
                    let mut toks = arts.vocab.ids(&aug_prompt);
                    toks.extend(arts.vocab.ids(&aug_response));
                    let c_arf = arf.score(&toks)?;
                    let c_basic = static_scorer.score(&toks)?;
                    let blended = biased_score(&c_arf, &c_basic, cfg.bias.s_sig)?;
                    db.push(AugRecord {
                        id: format!("p{injected_phases}k{k:04}s"),
                        prompt_tokens: aug_prompt,
                        response_tokens: aug_response,
                        followup_tokens: Vec::new(),
                        score: blended,
                        provenance: Provenance::Synonym,
                        created_step: step,
                        last_rescored_step: step,
                    })?;
                }
            }
            injected_phases += 1;
        }

        // Fresh interaction under the current preference sign. Negative
        // supervision is directed at the flipped domains: with probability
        // `neg_focus` the interaction lands on a negative domain when one
        // exists. The reference response matches the domain, so the user's
        // verdict is the sign.
        let active = schedule.active_domains(step);
        let negatives: Vec<usize> = active
            .clone()
            .filter(|&d| schedule.sign(d, step) == Some(-1))
            .collect();
        let positives: Vec<usize> = active
            .clone()
            .filter(|&d| schedule.sign(d, step) == Some(1))
            .collect();
        let domain_idx = if !negatives.is_empty() && rng.next_f64() < cfg.neg_focus {
            negatives[rng.below(negatives.len())]
        } else if !positives.is_empty() {
            positives[rng.below(positives.len())]
        } else {
            active.start + rng.below(active.len())
        };
        let domain = &arts.domains[domain_idx];
        let sign = schedule.sign(domain_idx, step).unwrap_or(1);
        let prompt = domain_prompt(domain, &mut rng);
        let response = domain_response(domain, &mut rng);
        let class = if sign > 0 { SatClass::Good } else { SatClass::Bad };
        let next_prompt = domain_prompt(domain, &mut rng);
        let feedback = templates.feedback_for(class, &next_prompt, &mut rng);
        let soft_label = static_scorer.score(&arts.vocab.ids(&feedback))?;
        let mut content = arts.vocab.ids(&prompt);
        content.extend(arts.vocab.ids(&response));

        // Current sample: a stored record most of the time, otherwise the
        // fresh interaction itself.
        let (cur_tokens, cur_label) = if !db.is_empty() && rng.next_f64() < cfg.db_draw_prob {
            let record = db.nth(rng.below(db.len())).expect("db checked non-empty");
            let mut toks = arts.vocab.ids(&record.prompt_tokens);
            toks.extend(arts.vocab.ids(&record.response_tokens));
            (toks, record.score)
        } else {
            (content, soft_label)
        };
        er_train_step(
            &mut arf,
            (&cur_tokens, &cur_label),
            &buffer,
            cfg.er_ratio,
            &mut rng,
            cfg.scorer_lr,
        )?;

        if rescore_enabled && step > 0 && step % cfg.bias.rescore_period == 0 {
            db.rescore_all(&arf, &arts.vocab, &cfg.bias, step)?;
            sweeps += 1;
        }
    }
    probe(&arf, cfg.track_steps, &mut series)?;

    if rescore_enabled {
        db.save_jsonl(&cfg.out_dir.join("aug_db.jsonl"))?;
    }
    let flips = schedule
        .flips_within(cfg.track_steps)
        .into_iter()
        .map(|(idx, s)| (arts.domains[idx].name.clone(), s))
        .collect();
    Ok(TrackOutcome {
        series,
        flips,
        records_stored: db.len(),
        rescore_sweeps: sweeps,
        arf,
    })
}

/// Runs the flip schedule with re-scoring per the config, writes the probe
/// time series, and snapshots the adapted scorer.
pub fn run_track_arf(cfg: &ExperimentConfig) -> Result<TrackOutcome> {
    cfg.validate()?;
    let outcome = run_track(cfg, cfg.rescore_enabled)?;
    let rows: Vec<Vec<String>> = outcome
        .series
        .iter()
        .map(|r| vec![r.step.to_string(), r.domain.clone(), r.mean_score.to_string()])
        .collect();
    ensure_dir(&cfg.out_dir)?;
    write_text(
        &cfg.out_dir.join("track_arf.csv"),
        &csv_text("step,domain,mean_score", &rows),
    )?;
    let paths = OutPaths::new(&cfg.out_dir);
    save_scorer(&outcome.arf, &paths.arf_scorer)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Per-method evaluation under the frozen scorer.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub mean_score: f64,
    /// Shifted score ratio versus the supervised baseline:
    /// (1 + mean) / (1 + mean_sft), so the baseline maps to exactly 1.
    pub normalized_ratio: f64,
    pub n: usize,
    pub scorer_hash: String,
}

#[derive(Debug)]
pub struct CompareReport {
    pub rows: Vec<EvalReport>,
    pub scorer_hash: String,
}

impl CompareReport {
    pub fn ratio_of(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.normalized_ratio)
    }
}

/// Supervised pretraining: maximum likelihood on the reference responses.
fn pretrain_sft(
    vocab: &Vocab,
    traces: &[TraceSample],
    policy_dim: usize,
    steps: u64,
    lr: f64,
    init_rng: &mut Rng,
) -> Result<PolicyParams> {
    let mut policy = PolicyParams::init(vocab.size(), policy_dim, init_rng)?;
    let mut pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = Vec::new();
    for t in traces {
        for s in &t.steps {
            let mut ctx = vec![BOS];
            ctx.extend(vocab.ids(&s.user_input));
            let mut target = vocab.ids(&s.reference_response);
            target.push(EOS);
            pairs.push((ctx, target));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no supervised pairs to pretrain on".into()));
    }
    for step in 0..steps {
        let (ctx, target) = &pairs[(step as usize) % pairs.len()];
        policy.mle_step(ctx, target, lr)?;
    }
    Ok(policy)
}

fn write_train_csv(cfg: &ExperimentConfig, method: &str, rows: &[UpdateRow]) -> Result<()> {
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i.to_string(),
                r.loss.to_string(),
                r.signal.to_string(),
                r.grad_norm.to_string(),
            ]
        })
        .collect();
    write_text(
        &cfg.out_dir.join(format!("train_{method}.csv")),
        &csv_text("step,loss,advantage,grad_norm", &csv_rows),
    )
}

/// Compares SFT, PPO, DPO, and TraceBias from one supervised initialization
/// under one frozen scorer, on held-out prompts.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let arts = load_corpus_artifacts(cfg)?;
    let frozen = load_static_scorer(cfg)?;
    let scorer_hash = scorer_fingerprint(&frozen);
    let root = Rng::new(cfg.seed);
    let stable = PreferenceSchedule::stable(arts.domains.len());
    let templates = FeedbackTemplates::default();

    // Stable-preference training traces, plus truncation variants.
    let corpus_cfg = CorpusConfig {
        n_traces: cfg.corpus.n_traces,
        static_pool_size: 0,
        max_trace_steps: cfg.corpus.max_trace_steps,
        neutral_prob: 0.0,
    };
    let (base_traces, _) = gen_corpus(
        &arts.domains,
        &stable,
        &corpus_cfg,
        &root.stream(S_COMPARE_CORPUS),
    )?;
    let mut aug_rng = root.stream(S_COMPARE_AUG);
    let mut traces = Vec::new();
    for t in &base_traces {
        traces.push(t.clone());
        if t.steps.len() > 1 && aug_rng.next_f64() < 0.3 {
            traces.push(truncate_trace(t, &mut aug_rng, 1)?);
        }
    }

    // Shared supervised starting point, snapshotted for inspection.
    let sft = pretrain_sft(
        &arts.vocab,
        &traces,
        cfg.policy_dim,
        cfg.sft_steps,
        cfg.sft_lr,
        &mut root.stream(S_POLICY_INIT),
    )?;
    ensure_dir(&cfg.out_dir)?;
    crate::snapshot::save_policy(&sft, &cfg.out_dir.join("sft_policy.json"))?;

    // Identical per-method update budgets, consumed in epochs.
    let budget: Vec<TraceSample> = (0..cfg.compare_steps)
        .map(|i| traces[i % traces.len()].clone())
        .collect();
    let per_epoch = budget.len().div_ceil(cfg.compare_epochs);

    // TraceBias.
    let mut tb_cfg = cfg.tracebias.clone();
    tb_cfg.max_gen_len = cfg.max_gen_len;
    let mut tb = sft.clone();
    let mut tb_ref = sft.clone();
    let mut tb_rows = Vec::new();
    {
        let mut env = SimUser::new(
            &frozen,
            &arts.vocab,
            &arts.domains,
            templates.clone(),
            stable.clone(),
            cfg.judge_threshold,
        )?;
        let mut tb_rng = root.stream(S_TB);
        for chunk in budget.chunks(per_epoch) {
            if tb_cfg.refresh_per_epoch {
                tb_ref = tb.clone();
            }
            let m = train_epoch(&mut tb, &tb_ref, chunk, &mut env, &arts.vocab, &tb_cfg, &mut tb_rng)?;
            tb_rows.extend(m.per_update);
        }
    }

    // PPO over the same trace budget (first step of each trace).
    let mut ppo = sft.clone();
    let mut ppo_rows = Vec::new();
    {
        let mut env = SimUser::new(
            &frozen,
            &arts.vocab,
            &arts.domains,
            templates.clone(),
            stable.clone(),
            cfg.judge_threshold,
        )?;
        let mut ppo_rng = root.stream(S_PPO);
        for chunk in budget.chunks(per_epoch) {
            let m = ppo_train_epoch(
                &mut ppo,
                chunk,
                &mut env,
                &arts.vocab,
                &cfg.ppo,
                cfg.max_gen_len,
                &mut ppo_rng,
            )?;
            ppo_rows.extend(m.per_update);
        }
    }

    // DPO over pairs built from the same traces plus synonym variants of the
    // reference responses, oriented by the frozen scorer.
    let mut dpo = sft.clone();
    let mut dpo_rows = Vec::new();
    {
        let mut db = AugDb::new();
        let mut dpo_rng = root.stream(S_DPO_DATA);
        for (i, t) in base_traces.iter().enumerate() {
            for (j, s) in t.steps.iter().enumerate() {
                let mut toks = arts.vocab.ids(&s.user_input);
                toks.extend(arts.vocab.ids(&s.reference_response));
                db.push(AugRecord {
                    id: format!("c{i:05}s{j}o"),
                    prompt_tokens: s.user_input.clone(),
                    response_tokens: s.reference_response.clone(),
                    followup_tokens: Vec::new(),
                    score: frozen.score(&toks)?,
                    provenance: Provenance::Original,
                    created_step: 0,
                    last_rescored_step: 0,
                })?;
                for v in 0..2 {
                    let variant = synonym_augment(
                        &s.reference_response,
                        &arts.lexicon,
                        cfg.synonym_rounds,
                        cfg.p_sub,
                        &mut dpo_rng,
                    );
                    let mut vtoks = arts.vocab.ids(&s.user_input);
                    vtoks.extend(arts.vocab.ids(&variant));
                    db.push(AugRecord {
                        id: format!("c{i:05}s{j}v{v}"),
                        prompt_tokens: s.user_input.clone(),
                        response_tokens: variant,
                        followup_tokens: Vec::new(),
                        score: frozen.score(&vtoks)?,
                        provenance: Provenance::Synonym,
                        created_step: 0,
                        last_rescored_step: 0,
                    })?;
                }
            }
        }
        let (pairs, _) = build_preference_pairs(&db, &frozen, &arts.vocab)?;
        if pairs.is_empty() {
            return Err(Error::Config(
                "preference-pair construction produced no pairs; corpus too degenerate".into(),
            ));
        }
        let pair_budget: Vec<_> = (0..cfg.compare_steps)
            .map(|i| pairs[i % pairs.len()].clone())
            .collect();
        for chunk in pair_budget.chunks(per_epoch) {
            let m = dpo_train_epoch(&mut dpo, &sft, chunk, &arts.vocab, &cfg.dpo)?;
            dpo_rows.extend(m.per_update);
        }
    }

    // Held-out evaluation: generate, let the simulated user react, and score
    // response plus reaction with the frozen scorer. Every method sees the
    // same prompts and the same sampling stream.
    let mut prompt_rng = root.stream(S_EVAL_PROMPTS);
    let eval_prompts: Vec<(usize, Vec<String>)> = (0..cfg.eval_prompts)
        .map(|i| {
            let didx = i % arts.domains.len();
            (didx, domain_prompt(&arts.domains[didx], &mut prompt_rng))
        })
        .collect();
    let judge = SimUser::new(
        &frozen,
        &arts.vocab,
        &arts.domains,
        templates.clone(),
        stable.clone(),
        cfg.judge_threshold,
    )?;
    let eval_policy = |policy: &PolicyParams| -> Result<f64> {
        let mut rng = root.stream(S_EVAL_SAMPLE);
        let mut sum = 0.0;
        for (didx, prompt) in &eval_prompts {
            let mut ctx = vec![BOS];
            ctx.extend(arts.vocab.ids(prompt));
            let output = policy.sample(&ctx, cfg.max_gen_len, &mut rng)?;
            let class = judge.judge(&arts.domains[*didx], &output);
            let feedback = templates.feedback_for(class, &[], &mut rng);
            sum += env_reward(&frozen, &output, &arts.vocab.ids(&feedback))?;
        }
        Ok(sum / eval_prompts.len() as f64)
    };

    let sft_mean = eval_policy(&sft)?;
    let methods = [
        ("sft", &sft, Vec::new()),
        ("ppo", &ppo, ppo_rows),
        ("dpo", &dpo, dpo_rows),
        ("tracebias", &tb, tb_rows),
    ];
    let mut rows = Vec::new();
    for (name, policy, train_rows) in &methods {
        let mean = if *name == "sft" { sft_mean } else { eval_policy(policy)? };
        rows.push(EvalReport {
            method: name.to_string(),
            mean_score: mean,
            normalized_ratio: (1.0 + mean) / (1.0 + sft_mean),
            n: eval_prompts.len(),
            scorer_hash: scorer_hash.clone(),
        });
        if !train_rows.is_empty() {
            write_train_csv(cfg, name, train_rows)?;
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.mean_score.to_string(),
                r.normalized_ratio.to_string(),
                r.n.to_string(),
                r.scorer_hash.clone(),
            ]
        })
        .collect();
    write_text(
        &cfg.out_dir.join("compare.csv"),
        &csv_text("method,mean_score,ratio,n,scorer_hash", &csv_rows),
    )?;
    Ok(CompareReport { rows, scorer_hash })
}

// ---------------------------------------------------------------------------
// ablate-er
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ErRow {
    pub label: String,
    pub recent_accuracy: f64,
    pub static_accuracy: f64,
}

/// Trains online copies with and without experience replay on a
/// recent-preference stream (the first domain flipped negative) and reports
/// accuracy on recent-preference probes versus the held-out static pool.
pub fn run_ablate_er(cfg: &ExperimentConfig) -> Result<Vec<ErRow>> {
    cfg.validate()?;
    let arts = load_corpus_artifacts(cfg)?;
    let static_scorer = load_static_scorer(cfg)?;
    let (pool_train, pool_holdout) = pool_split(&arts.pool, cfg.static_holdout_every);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    for item in &pool_train {
        buffer.push(ReplayItem {
            tokens: arts.vocab.ids(&item.tokens),
            static_label: item.label,
        });
    }
    let domain = &arts.domains[0];
    let templates = FeedbackTemplates::default();
    let root = Rng::new(cfg.seed);

    // Held-out recent-preference probes: domain content whose ground truth
    // under the flipped preference is the bad class. Neutral filler words
    // dilute the domain signal at graded ratios so accuracy moves smoothly
    // instead of saturating.
    let fillers = ["okay", "hmm", "well", "so", "then", "maybe", "and", "the"];
    let mut probe_rng = root.stream(S_ER_PROBE);
    let probes: Vec<Vec<TokenId>> = (0..cfg.er_probe_size)
        .map(|i| {
            let n_domain = 2 + probe_rng.below(4);
            let n_filler = 1 + i % 4;
            let mut words: Vec<String> = (0..n_domain)
                .map(|_| probe_rng.choose(&domain.words).clone())
                .collect();
            for _ in 0..n_filler {
                words.push((*probe_rng.choose(&fillers)).to_string());
            }
            probe_rng.shuffle(&mut words);
            arts.vocab.ids(&words)
        })
        .collect();
    let recent_accuracy = |scorer: &ScorerParams| -> Result<f64> {
        let mut hits = 0usize;
        for p in &probes {
            if scorer.score(p)?.argmax() == SatClass::Bad.class_index() {
                hits += 1;
            }
        }
        Ok(hits as f64 / probes.len() as f64)
    };

    let train_arm = |er_ratio: f64| -> Result<ScorerParams> {
        let mut arf = static_scorer.clone();
        let mut rng = root.stream(S_ER);
        for _ in 0..cfg.er_steps {
            let prompt = domain_prompt(domain, &mut rng);
            let response = domain_response(domain, &mut rng);
            let next_prompt = domain_prompt(domain, &mut rng);
            let feedback = templates.feedback_for(SatClass::Bad, &next_prompt, &mut rng);
            let soft_label = static_scorer.score(&arts.vocab.ids(&feedback))?;
            let mut content = arts.vocab.ids(&prompt);
            content.extend(arts.vocab.ids(&response));
            er_train_step(
                &mut arf,
                (&content, &soft_label),
                &buffer,
                er_ratio,
                &mut rng,
                cfg.scorer_lr,
            )?;
        }
        Ok(arf)
    };

    let mut rows = Vec::new();
    rows.push(ErRow {
        label: "basic".into(),
        recent_accuracy: recent_accuracy(&static_scorer)?,
        static_accuracy: pool_accuracy(&static_scorer, &arts.vocab, &pool_holdout)?,
    });
    for er_ratio in [0.0, 0.5] {
        let arf = train_arm(er_ratio)?;
        rows.push(ErRow {
            label: er_ratio.to_string(),
            recent_accuracy: recent_accuracy(&arf)?,
            static_accuracy: pool_accuracy(&arf, &arts.vocab, &pool_holdout)?,
        });
    }

    ensure_dir(&cfg.out_dir)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.recent_accuracy.to_string(),
                r.static_accuracy.to_string(),
            ]
        })
        .collect();
    write_text(
        &cfg.out_dir.join("ablate_er.csv"),
        &csv_text("er_ratio,recent_accuracy,static_accuracy", &csv_rows),
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// grad-stability
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct StabilitySummary {
    pub method: String,
    pub mean: f64,
    pub variance: f64,
    pub norms: Vec<f64>,
}

/// Runs the clipped trainer and the trace trainer on the identical
/// single-step task from the identical supervised initialization and logs
/// per-update gradient norms.
pub fn run_grad_stability(cfg: &ExperimentConfig) -> Result<Vec<StabilitySummary>> {
    cfg.validate()?;
    let arts = load_corpus_artifacts(cfg)?;
    let frozen = load_static_scorer(cfg)?;
    let root = Rng::new(cfg.seed);
    let stable = PreferenceSchedule::stable(arts.domains.len());
    let templates = FeedbackTemplates::default();

    // Matched task: single-step traces with neutral labels, so both methods
    // see reward-centered advantages and the comparison isolates the update
    // rules themselves.
    let corpus_cfg = CorpusConfig {
        n_traces: cfg.stability_steps,
        static_pool_size: 0,
        max_trace_steps: 1,
        neutral_prob: 1.0,
    };
    let (traces, _) = gen_corpus(&arts.domains, &stable, &corpus_cfg, &root.stream(S_STAB_CORPUS))?;
    let sft = pretrain_sft(
        &arts.vocab,
        &traces,
        cfg.policy_dim,
        cfg.sft_steps,
        cfg.sft_lr,
        &mut root.stream(S_POLICY_INIT),
    )?;

    let mut tb_cfg = cfg.tracebias.clone();
    tb_cfg.trace_step_cap = 1;
    tb_cfg.max_gen_len = cfg.max_gen_len;
    let mut tb = sft.clone();
    let tb_metrics = {
        let mut env = SimUser::new(
            &frozen,
            &arts.vocab,
            &arts.domains,
            templates.clone(),
            stable.clone(),
            cfg.judge_threshold,
        )?;
        train_epoch(
            &mut tb,
            &sft,
            &traces,
            &mut env,
            &arts.vocab,
            &tb_cfg,
            &mut root.stream(S_STAB_TB),
        )?
    };

    let mut ppo = sft.clone();
    let ppo_metrics = {
        let mut env = SimUser::new(
            &frozen,
            &arts.vocab,
            &arts.domains,
            templates,
            stable,
            cfg.judge_threshold,
        )?;
        ppo_train_epoch(
            &mut ppo,
            &traces,
            &mut env,
            &arts.vocab,
            &cfg.ppo,
            cfg.max_gen_len,
            &mut root.stream(S_STAB_PPO),
        )?
    };

    let summaries: Vec<StabilitySummary> = [
        ("tracebias", &tb_metrics),
        ("ppo", &ppo_metrics),
    ]
    .into_iter()
    .map(|(name, m)| StabilitySummary {
        method: name.to_string(),
        mean: m.grad_norms.mean(),
        variance: m.grad_norms.variance(),
        norms: m.grad_norms.as_slice().to_vec(),
    })
    .collect();

    ensure_dir(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for s in &summaries {
        for (i, n) in s.norms.iter().enumerate() {
            rows.push(vec![i.to_string(), s.method.clone(), n.to_string()]);
        }
    }
    write_text(
        &cfg.out_dir.join("grad_stability.csv"),
        &csv_text("step,method,grad_norm", &rows),
    )?;
    let summary_rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| vec![s.method.clone(), s.mean.to_string(), s.variance.to_string()])
        .collect();
    write_text(
        &cfg.out_dir.join("grad_stability_summary.csv"),
        &csv_text("method,mean,variance", &summary_rows),
    )?;
    for s in &summaries {
        let mut out = String::new();
        for (i, n) in s.norms.iter().enumerate() {
            out.push_str(&format!("{{\"step\":{i},\"grad_norm\":{n}}}\n"));
        }
        write_text(&cfg.out_dir.join(format!("grad_norms_{}.jsonl", s.method)), &out)?;
    }
    Ok(summaries)
}

// ---------------------------------------------------------------------------
// ablate-rescore
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RescoreRow {
    pub arm: String,
    pub domain: String,
    pub flipped: bool,
    /// Probe score at the end of the run minus the probe score when the
    /// domain flipped (for unflipped control domains, the window starts at
    /// the earliest flip).
    pub delta: f64,
}

/// Replays the tracking run twice, with and without re-scoring sweeps, and
/// reports the probe change from each domain's flip to the end of the run.
pub fn run_ablate_rescore(cfg: &ExperimentConfig) -> Result<Vec<RescoreRow>> {
    cfg.validate()?;
    if cfg.flip_period % cfg.eval_interval != 0 {
        return Err(Error::Config(
            "track.eval_interval must divide schedule.flip_period for the re-scoring ablation"
                .into(),
        ));
    }
    let with = run_track(cfg, true)?;
    let without = run_track(cfg, false)?;
    if with.flips.is_empty() {
        return Err(Error::Config(
            "the schedule never flips within track.steps; nothing to ablate".into(),
        ));
    }
    let earliest_flip = with.flips.iter().map(|&(_, s)| s).min().unwrap();
    let domains = default_domains();
    let mut rows = Vec::new();
    for (arm, outcome) in [("with_rescore", &with), ("without_rescore", &without)] {
        for d in &domains {
            let flip = outcome.flips.iter().find(|(name, _)| name == &d.name);
            let (window_start, flipped) = match flip {
                Some(&(_, s)) => (s, true),
                None => (earliest_flip, false),
            };
            let start = outcome.probe_at(&d.name, window_start).ok_or_else(|| {
                Error::Config(format!("no probe at step {window_start}; extend track.steps"))
            })?;
            let end = outcome.probe_at(&d.name, cfg.track_steps).ok_or_else(|| {
                Error::Config(format!("no probe at step {}; extend track.steps", cfg.track_steps))
            })?;
            rows.push(RescoreRow {
                arm: arm.to_string(),
                domain: d.name.clone(),
                flipped,
                delta: end - start,
            });
        }
    }
    ensure_dir(&cfg.out_dir)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.arm.clone(),
                r.domain.clone(),
                r.flipped.to_string(),
                r.delta.to_string(),
            ]
        })
        .collect();
    write_text(
        &cfg.out_dir.join("ablate_rescore.csv"),
        &csv_text("arm,domain,flipped,delta", &csv_rows),
    )?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    /// Default configuration rooted in a scratch directory. The defaults are
    /// small enough to run each experiment in well under a second.
    fn test_cfg(dir: &TempDir) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        cfg
    }

    /// Shrunken budgets for the structural policy-training tests.
    fn small_cfg(dir: &TempDir) -> ExperimentConfig {
        let mut cfg = test_cfg(dir);
        cfg.corpus.n_traces = 60;
        cfg.sft_steps = 300;
        cfg.compare_steps = 40;
        cfg.eval_prompts = 16;
        cfg.stability_steps = 40;
        cfg
    }

    fn read(path: &Path) -> String {
        fs::read_to_string(path).unwrap()
    }

    #[test]
    fn gen_corpus_writes_counted_artifacts_and_reruns_identically() {
        let dir = TempDir::new().unwrap();
        let mut cfg = test_cfg(&dir);
        cfg.corpus.n_traces = 40;
        cfg.corpus.static_pool_size = 150;
        let report = run_gen_corpus(&cfg).unwrap();
        assert_eq!(report.trace_count, 40);
        assert_eq!(report.pool_count, 150);
        assert!(report.lexicon_count > 0);
        let paths = OutPaths::new(&cfg.out_dir);
        let traces_text = read(&paths.traces);
        assert_eq!(traces_text.lines().count(), report.trace_count);
        let pool_text = read(&paths.static_pool);
        assert_eq!(pool_text.lines().count(), report.pool_count);

        run_gen_corpus(&cfg).unwrap();
        assert_eq!(read(&paths.traces), traces_text);
        assert_eq!(read(&paths.static_pool), pool_text);

        // Zero traces still produce a non-empty static pool.
        let dir2 = TempDir::new().unwrap();
        let mut cfg2 = test_cfg(&dir2);
        cfg2.corpus.n_traces = 0;
        let report2 = run_gen_corpus(&cfg2).unwrap();
        assert_eq!(report2.trace_count, 0);
        assert!(report2.pool_count > 0);
    }

    #[test]
    fn missing_corpus_yields_actionable_error() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        let err = run_train_static(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gen-corpus"), "unhelpful error: {msg}");
        // Downstream runs point at the missing scorer snapshot too.
        run_gen_corpus(&cfg).unwrap();
        let err = run_track_arf(&cfg).unwrap_err();
        assert!(err.to_string().contains("train-static"), "{err}");
    }

    #[test]
    fn static_training_reaches_high_holdout_accuracy_and_is_deterministic() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        let report = run_train_static(&cfg).unwrap();
        assert!(
            report.holdout_accuracy >= 0.9,
            "separable pool should be learnable, got {}",
            report.holdout_accuracy
        );
        let again = run_train_static(&cfg).unwrap();
        assert_eq!(report.holdout_accuracy, again.holdout_accuracy);
        assert_eq!(report.scorer_fingerprint, again.scorer_fingerprint);
    }

    #[test]
    fn untrained_scorer_sits_at_chance_on_the_balanced_pool() {
        // A single random head maps the three marker families to classes as
        // a fixed quasi-permutation, so any one seed can sit far from 1/3;
        // class-blindness holds in expectation over initializations.
        let mut total = 0.0;
        let seeds = 16;
        for seed in 0..seeds {
            let dir = TempDir::new().unwrap();
            let mut cfg = test_cfg(&dir);
            cfg.seed = seed;
            cfg.static_steps = 0;
            run_gen_corpus(&cfg).unwrap();
            total += run_train_static(&cfg).unwrap().holdout_accuracy;
        }
        let mean = total / seeds as f64;
        assert!(
            (mean - 1.0 / 3.0).abs() <= 0.05,
            "chance-level accuracy expected, got mean {mean}"
        );
    }

    #[test]
    fn tracking_emits_probe_series_and_reacts_to_flips() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        let outcome = run_track_arf(&cfg).unwrap();
        // Flip schedule with the default period: domain 0 at 300, 1 at 450.
        assert_eq!(
            outcome.flips,
            vec![("guide".to_string(), 300), ("math".to_string(), 450)]
        );
        assert!(outcome.records_stored > 100);
        assert!(outcome.rescore_sweeps > 0);
        let csv = read(&cfg.out_dir.join("track_arf.csv"));
        assert!(csv.starts_with("step,domain,mean_score\n"));
        // One row per domain per probe step, plus the final probe.
        let expected_rows = (cfg.track_steps / cfg.eval_interval + 1) * 4;
        assert_eq!(csv.lines().count() as u64, 1 + expected_rows);
        for (domain, flip) in &outcome.flips {
            let before = outcome.probe_at(domain, *flip).unwrap();
            let after = outcome.probe_at(domain, flip + cfg.flip_period).unwrap();
            assert!(
                after < before,
                "domain {domain}: probe should drop after the flip ({before} -> {after})"
            );
        }
    }

    #[test]
    fn er_ablation_shows_the_adaptation_generalization_tradeoff() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        let rows = run_ablate_er(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        let basic = &rows[0];
        let er0 = &rows[1];
        let er05 = &rows[2];
        assert_eq!(basic.label, "basic");
        // The untouched copy\'s static accuracy equals the static scorer\'s own.
        let static_report = run_train_static(&cfg).unwrap();
        assert_eq!(basic.static_accuracy, static_report.holdout_accuracy);
        assert!(
            er0.recent_accuracy > er05.recent_accuracy,
            "no-replay should adapt faster: {} vs {}",
            er0.recent_accuracy,
            er05.recent_accuracy
        );
        assert!(
            er0.static_accuracy < er05.static_accuracy,
            "no-replay should forget more: {} vs {}",
            er0.static_accuracy,
            er05.static_accuracy
        );
    }

    #[test]
    fn stability_logs_full_length_norm_streams() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        let summaries = run_grad_stability(&cfg).unwrap();
        assert_eq!(summaries.len(), 2);
        for s in &summaries {
            assert_eq!(s.norms.len(), cfg.stability_steps);
            assert!(s.norms.iter().all(|n| *n >= 0.0));
        }
        let csv = read(&cfg.out_dir.join("grad_stability_summary.csv"));
        assert!(csv.starts_with("method,mean,variance\n"));
        assert!(cfg.out_dir.join("grad_norms_tracebias.jsonl").exists());
        assert!(cfg.out_dir.join("grad_norms_ppo.jsonl").exists());
    }

    #[test]
    fn compare_reports_are_anchored_and_share_the_scorer_hash() {
        let dir = TempDir::new().unwrap();
        let cfg = small_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        let report = run_compare(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert_eq!(row.scorer_hash, report.scorer_hash);
            assert!(row.normalized_ratio.is_finite());
            assert!(row.normalized_ratio >= 0.0);
            assert_eq!(row.n, cfg.eval_prompts);
        }
        let sft = report.rows.iter().find(|r| r.method == "sft").unwrap();
        assert_eq!(sft.normalized_ratio, 1.0);
        for name in ["train_tracebias.csv", "train_ppo.csv", "train_dpo.csv", "compare.csv"] {
            assert!(cfg.out_dir.join(name).exists(), "{name} missing");
        }
        let train_csv = read(&cfg.out_dir.join("train_tracebias.csv"));
        assert_eq!(train_csv.lines().count(), 1 + cfg.compare_steps);
    }

    #[test]
    fn zero_training_budget_keeps_all_ratios_at_one() {
        let dir = TempDir::new().unwrap();
        let mut cfg = small_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        // Vanishing learning rates freeze every method at the shared
        // supervised initialization.
        cfg.tracebias.lr = 1e-300;
        cfg.ppo.lr = 1e-300;
        cfg.dpo.lr = 1e-300;
        let report = run_compare(&cfg).unwrap();
        for row in &report.rows {
            assert!(
                (row.normalized_ratio - 1.0).abs() < 1e-9,
                "{}: ratio {}",
                row.method,
                row.normalized_ratio
            );
        }
    }

    #[test]
    fn rescore_ablation_flips_the_mean_delta_sign() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        let rows = run_ablate_rescore(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
        let mean_flipped = |arm: &str| {
            let ds: Vec<f64> = rows
                .iter()
                .filter(|r| r.arm == arm && r.flipped)
                .map(|r| r.delta)
                .collect();
            assert_eq!(ds.len(), 2);
            ds.iter().sum::<f64>() / ds.len() as f64
        };
        let with = mean_flipped("with_rescore");
        let without = mean_flipped("without_rescore");
        assert!(with < 0.0, "with rescoring, flipped mean delta {with}");
        assert!(without > 0.0, "without rescoring, flipped mean delta {without}");
        // Control: unflipped domains move less than the arm gap.
        let gap = (without - with).abs();
        for r in rows.iter().filter(|r| !r.flipped) {
            assert!(
                r.delta.abs() < gap + 0.5,
                "control domain {} moved implausibly: {}",
                r.domain,
                r.delta
            );
        }
        assert!(cfg.out_dir.join("ablate_rescore.csv").exists());
    }

    #[test]
    fn experiments_rerun_byte_identically() {
        let dir = TempDir::new().unwrap();
        let cfg = test_cfg(&dir);
        run_gen_corpus(&cfg).unwrap();
        run_train_static(&cfg).unwrap();
        run_track_arf(&cfg).unwrap();
        let first = read(&cfg.out_dir.join("track_arf.csv"));
        run_track_arf(&cfg).unwrap();
        assert_eq!(first, read(&cfg.out_dir.join("track_arf.csv")));
    }
}
