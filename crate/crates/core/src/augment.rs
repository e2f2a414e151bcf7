//! Augmentation database: persisted scored interaction records, synonym and
//! truncation augmentations, preference-biased scoring of fresh variants, and
//! the periodic re-scoring sweep that keeps old scores aligned with the
//! current scorer.
//!
//! Records persist as JSONL, one record per line, so the store is
//! append-friendly and diffable. Sweeps process records in id order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, sigmoid, Rng};
use crate::scorer::{SatisfactionDistribution, ScorerParams};
use crate::tokens::Vocab;
use crate::tracebias::TraceSample;

/// How a record entered the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synonym,
    Truncation,
}

/// One persisted interaction: prompt, response, optional follow-up, and the
/// score assigned at creation or by the latest re-scoring sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugRecord {
    pub id: String,
    pub prompt_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    /// Empty for augmented variants, which have no observed follow-up.
    pub followup_tokens: Vec<String>,
    pub score: SatisfactionDistribution,
    pub provenance: Provenance,
    pub created_step: u64,
    pub last_rescored_step: u64,
}

impl AugRecord {
    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        if self.id.is_empty() {
            return Err(Error::InvalidInput("record id is empty".into()));
        }
        if self.last_rescored_step < self.created_step {
            return Err(Error::InvalidInput(format!(
                "record {}: last_rescored_step {} precedes created_step {}",
                self.id, self.last_rescored_step, self.created_step
            )));
        }
        if self.prompt_tokens.is_empty() || self.response_tokens.is_empty() {
            return Err(Error::InvalidInput(format!(
                "record {}: prompt and response must be non-empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// Token-to-substitutes map used by synonym augmentation.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for (token, subs) in &map {
            if subs.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "lexicon entry {token:?} has no substitutes"
                )));
            }
            if subs.iter().all(|s| s == token) {
                return Err(Error::InvalidInput(format!(
                    "lexicon entry {token:?} maps only to itself"
                )));
            }
        }
        Ok(SynonymLexicon { map })
    }

    pub fn empty() -> Self {
        SynonymLexicon::default()
    }

    pub fn substitutes(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Checks that every key and substitute is a known vocabulary word.
    pub fn validate_against(&self, vocab: &Vocab) -> Result<()> {
        for (token, subs) in &self.map {
            if !vocab.contains(token) {
                return Err(Error::InvalidInput(format!(
                    "lexicon token {token:?} is not in the vocabulary"
                )));
            }
            for s in subs {
                if !vocab.contains(s) {
                    return Err(Error::InvalidInput(format!(
                        "lexicon substitute {s:?} for {token:?} is not in the vocabulary"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the plain-text format, one `token: sub1,sub2` entry per line.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, subs) = line.split_once(':').ok_or_else(|| {
                Error::InvalidInput(format!("lexicon line {}: missing ':'", lineno + 1))
            })?;
            let token = token.trim().to_string();
            let subs: Vec<String> = subs
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if map.insert(token.clone(), subs).is_some() {
                return Err(Error::InvalidInput(format!(
                    "lexicon line {}: duplicate token {token:?}",
                    lineno + 1
                )));
            }
        }
        SynonymLexicon::new(map)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (token, subs) in &self.map {
            out.push_str(token);
            out.push_str(": ");
            out.push_str(&subs.join(","));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynonymLexicon::parse(&text)
            .map_err(|e| Error::persistence(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Knobs of the preference-biased scoring and re-scoring machinery.
#[derive(Debug, Clone)]
pub struct BiasConfig {
    /// Sigmoid scale applied to the centered cosine similarity.
    pub s_sig: f64,
    /// Re-scoring sweep period in steps.
    pub rescore_period: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            s_sig: 6.0,
            rescore_period: 5,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_sig > 0.0) {
            return Err(Error::Config(format!("s_sig {} must be > 0", self.s_sig)));
        }
        if self.rescore_period == 0 {
            return Err(Error::Config("rescore_period must be >= 1".into()));
        }
        Ok(())
    }
}

/// Multi-round probabilistic synonym substitution. Each round visits every
/// position; a token with a lexicon entry is replaced with probability
/// `p_sub` by a uniform choice among its substitutes. Length is preserved.
pub fn synonym_augment(
    tokens: &[String],
    lexicon: &SynonymLexicon,
    rounds: usize,
    p_sub: f64,
    rng: &mut Rng,
) -> Vec<String> {
    assert!(rounds >= 1, "synonym_augment needs rounds >= 1");
    let mut out: Vec<String> = tokens.to_vec();
    for _ in 0..rounds {
        for slot in out.iter_mut() {
            if let Some(subs) = lexicon.substitutes(slot) {
                if rng.next_f64() < p_sub {
                    *slot = rng.choose(subs).clone();
                }
            }
        }
    }
    out
}

/// Keeps a uniformly drawn prefix of the trace, at least `min_steps` long.
pub fn truncate_trace(trace: &TraceSample, rng: &mut Rng, min_steps: usize) -> Result<TraceSample> {
    if min_steps == 0 {
        return Err(Error::InvalidInput("truncate_trace needs min_steps >= 1".into()));
    }
    let total = trace.steps.len();
    if total < min_steps {
        return Err(Error::InvalidInput(format!(
            "trace has {total} steps, fewer than min_steps {min_steps}"
        )));
    }
    let keep = min_steps + rng.below(total - min_steps + 1);
    Ok(TraceSample {
        steps: trace.steps[..keep].to_vec(),
        domain: trace.domain.clone(),
    })
}

/// Agreement weight between two score vectors: sigmoid of the centered
/// cosine similarity scaled by `s_sig`.
pub fn cos_weight(
    c_new: &SatisfactionDistribution,
    c_old: &SatisfactionDistribution,
    s_sig: f64,
) -> Result<f64> {
    if !(s_sig > 0.0) {
        return Err(Error::InvalidInput(format!("s_sig {s_sig} must be > 0")));
    }
    c_new.validate()?;
    c_old.validate()?;
    let cos = cosine_similarity(&c_new.as_array(), &c_old.as_array())?;
    Ok(sigmoid((cos - 0.5) * s_sig))
}

/// Convex blend of the adapted and basic scores, weighted by how much the
/// two scorers agree: the more they agree, the more the adapted score counts.
pub fn biased_score(
    c_arf: &SatisfactionDistribution,
    c_basic: &SatisfactionDistribution,
    s_sig: f64,
) -> Result<SatisfactionDistribution> {
    let w = cos_weight(c_arf, c_basic, s_sig)?;
    let a = c_arf.as_array();
    let b = c_basic.as_array();
    SatisfactionDistribution::new(
        a[0] * w + b[0] * (1.0 - w),
        a[1] * w + b[1] * (1.0 - w),
        a[2] * w + b[2] * (1.0 - w),
    )
}

/// Re-scores one record against a fresh scorer output using the same blend,
/// updating the re-scoring timestamp. Id and provenance are untouched.
pub fn rescore(
    record: &AugRecord,
    c_new: &SatisfactionDistribution,
    s_sig: f64,
    now_step: u64,
) -> Result<AugRecord> {
    record.validate()?;
    let blended = biased_score(c_new, &record.score, s_sig)?;
    let mut updated = record.clone();
    updated.score = blended;
    updated.last_rescored_step = now_step.max(record.created_step);
    Ok(updated)
}

/// The persistent record store. Single writer; lookups and sweeps iterate in
/// id order for determinism.
#[derive(Debug, Clone, Default)]
pub struct AugDb {
    by_id: BTreeMap<String, AugRecord>,
}

impl AugDb {
    pub fn new() -> Self {
        AugDb::default()
    }

    pub fn push(&mut self, record: AugRecord) -> Result<()> {
        record.validate()?;
        if self.by_id.contains_key(&record.id) {
            return Err(Error::InvalidInput(format!("duplicate record id {}", record.id)));
        }
        self.by_id.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AugRecord> {
        self.by_id.get(id)
    }

    /// Records in id order.
    pub fn iter(&self) -> impl Iterator<Item = &AugRecord> {
        self.by_id.values()
    }

    /// The n-th record in id order; used for uniform draws.
    pub fn nth(&self, n: usize) -> Option<&AugRecord> {
        self.by_id.values().nth(n)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut db = AugDb::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: AugRecord = serde_json::from_str(line).map_err(|e| {
                Error::persistence(path, format!("line {}: {e}", lineno + 1))
            })?;
            db.push(record)
                .map_err(|e| Error::persistence(path, e.to_string()))?;
        }
        Ok(db)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for record in self.iter() {
            let line = serde_json::to_string(record)
                .map_err(|e| Error::persistence(path, format!("serialize: {e}")))?;
            out.push_str(&line);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Re-scores every record whose last sweep is at least `rescore_period`
    /// steps old, using the scorer's fresh view of prompt + response.
    /// Returns the number of records updated.
    pub fn rescore_all(
        &mut self,
        arf_params: &ScorerParams,
        vocab: &Vocab,
        cfg: &BiasConfig,
        now_step: u64,
    ) -> Result<usize> {
        cfg.validate()?;
        let Some(cutoff) = now_step.checked_sub(cfg.rescore_period) else {
            return Ok(0);
        };
        let due: Vec<String> = self
            .by_id
            .values()
            .filter(|r| r.last_rescored_step <= cutoff)
            .map(|r| r.id.clone())
            .collect();
        for id in &due {
            let record = self.by_id.get(id).expect("id listed as due");
            let mut tokens = vocab.ids(&record.prompt_tokens);
            tokens.extend(vocab.ids(&record.response_tokens));
            let c_new = arf_params.score(&tokens)?;
            let updated = rescore(record, &c_new, cfg.s_sig, now_step)?;
            self.by_id.insert(id.clone(), updated);
        }
        Ok(due.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScorerParams;
    use crate::tracebias::TraceStepSample;
    use proptest::prelude::{prop_assert, proptest, Strategy};

    fn dist(b: f64, n: f64, g: f64) -> SatisfactionDistribution {
        SatisfactionDistribution::new(b, n, g).unwrap()
    }

    fn record(id: &str, created: u64) -> AugRecord {
        AugRecord {
            id: id.into(),
            prompt_tokens: vec!["plan".into(), "step".into()],
            response_tokens: vec!["list".into(), "item".into()],
            followup_tokens: vec!["great".into()],
            score: dist(0.2, 0.3, 0.5),
            provenance: Provenance::Original,
            created_step: created,
            last_rescored_step: created,
        }
    }

    #[test]
    fn lexicon_parse_round_trip_and_validation() {
        let lex = SynonymLexicon::parse("plan: idea,draft\nlist: item\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.substitutes("plan").unwrap(), &["idea", "draft"]);
        let reparsed = SynonymLexicon::parse(&lex.to_text()).unwrap();
        assert_eq!(reparsed.substitutes("list").unwrap(), &["item"]);

        assert!(SynonymLexicon::parse("plan plan plan").is_err());
        assert!(SynonymLexicon::parse("plan: plan").is_err());
        assert!(SynonymLexicon::parse("plan:").is_err());
    }

    #[test]
    fn lexicon_vocab_validation() {
        let vocab = Vocab::new(vec!["plan".into(), "idea".into()]).unwrap();
        let ok = SynonymLexicon::parse("plan: idea").unwrap();
        assert!(ok.validate_against(&vocab).is_ok());
        let bad = SynonymLexicon::parse("plan: unknown").unwrap();
        assert!(bad.validate_against(&vocab).is_err());
    }

    #[test]
    fn empty_lexicon_passes_tokens_through() {
        let tokens: Vec<String> = vec!["plan".into(), "step".into()];
        let mut rng = Rng::new(1);
        let out = synonym_augment(&tokens, &SynonymLexicon::empty(), 4, 1.0, &mut rng);
        assert_eq!(out, tokens);
    }

    #[test]
    fn forced_substitution_replaces_every_occurrence() {
        let lex = SynonymLexicon::parse("a: b").unwrap();
        let tokens: Vec<String> = vec!["a".into(), "a".into()];
        let mut rng = Rng::new(2);
        let out = synonym_augment(&tokens, &lex, 1, 1.0, &mut rng);
        assert_eq!(out, vec!["b".to_string(), "b".to_string()]);
    }

    #[test]
    fn synonym_augment_preserves_length_and_is_seed_stable() {
        let lex = SynonymLexicon::parse("plan: idea,draft\nstep: task\nlist: item,note\n").unwrap();
        let tokens: Vec<String> = [
            "plan", "step", "list", "zero", "plan", "list", "step", "plan", "list", "step",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let run = |seed: u64| {
            let mut rng = Rng::new(seed);
            synonym_augment(&tokens, &lex, 4, 0.3, &mut rng)
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a, b);
        assert_eq!(a.len(), tokens.len());
        // Untouched positions keep their original token; touched positions
        // hold a lexicon substitute for the then-current token.
        for (orig, new) in tokens.iter().zip(&a) {
            if orig != new {
                assert!(lex.substitutes(orig).map(|s| s.contains(new)).unwrap_or(false)
                    || ["idea", "draft", "task", "item", "note"].contains(&new.as_str()));
            }
        }
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn golden_four_round_substitution() {
        // Frozen from a manually traced run: each draw of seed 40's stream
        // was checked against the round/position substitution rule.
        let lex = SynonymLexicon::parse("plan: idea,draft\nstep: task\n").unwrap();
        let tokens: Vec<String> = ["plan", "step", "zero", "plan"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rng = Rng::new(40);
        let out = synonym_augment(&tokens, &lex, 4, 0.3, &mut rng);
        assert_eq!(out, vec!["idea", "task", "zero", "draft"]);
    }

    fn trace_of_len(n: usize) -> TraceSample {
        TraceSample {
            steps: (0..n)
                .map(|i| TraceStepSample {
                    user_input: vec![format!("q{i}")],
                    reference_response: vec![format!("a{i}")],
                    label: dist(0.1, 0.2, 0.7),
                })
                .collect(),
            domain: "d".into(),
        }
    }

    #[test]
    fn truncation_with_tight_bound_is_identity() {
        let t = trace_of_len(3);
        let mut rng = Rng::new(3);
        let kept = truncate_trace(&t, &mut rng, 3).unwrap();
        assert_eq!(kept.steps.len(), 3);
        assert!(truncate_trace(&t, &mut rng, 4).is_err());
        assert!(truncate_trace(&t, &mut rng, 0).is_err());
    }

    #[test]
    fn truncation_keeps_prefixes_and_lengths_are_uniform() {
        let t = trace_of_len(5);
        let mut rng = Rng::new(4);
        let mut counts = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            let kept = truncate_trace(&t, &mut rng, 1).unwrap();
            counts[kept.steps.len() - 1] += 1;
            for (k, step) in kept.steps.iter().enumerate() {
                assert_eq!(step.user_input, t.steps[k].user_input);
            }
        }
        for (len_idx, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.2).abs() < 0.02,
                "length {} frequency {freq}",
                len_idx + 1
            );
        }
    }

    #[test]
    fn biased_score_of_equal_inputs_is_identity() {
        let c = dist(0.2, 0.3, 0.5);
        for s_sig in [1.0, 6.0, 16.0] {
            let out = biased_score(&c, &c, s_sig).unwrap();
            assert_eq!(out.as_array(), c.as_array());
        }
    }

    #[test]
    fn cosine_half_gives_midpoint_blend() {
        // cos([1,0,0], [x, sqrt(3) x, 0]) = 1/2 exactly; normalized to sum 1
        // the second vector stays proportional, so the weight is sigmoid(0).
        let x = 1.0 / (1.0 + 3.0f64.sqrt());
        let a = dist(1.0, 0.0, 0.0);
        let b = dist(x, 1.0 - x, 0.0);
        let w = cos_weight(&a, &b, 6.0).unwrap();
        assert!((w - 0.5).abs() < 1e-12, "weight {w}");
        let out = biased_score(&a, &b, 6.0).unwrap();
        let mid = [
            0.5 * (a.as_array()[0] + b.as_array()[0]),
            0.5 * (a.as_array()[1] + b.as_array()[1]),
            0.5 * (a.as_array()[2] + b.as_array()[2]),
        ];
        for (got, want) in out.as_array().iter().zip(mid) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn biased_score_matches_stepwise_oracle() {
        let c_arf = dist(0.6, 0.3, 0.1);
        let c_basic = dist(0.1, 0.3, 0.6);
        let s_sig = 6.0;
        // Independent evaluation of the published two-stage formula.
        let dot = 0.6 * 0.1 + 0.3 * 0.3 + 0.1 * 0.6;
        let na = (0.6f64 * 0.6 + 0.09 + 0.01).sqrt();
        let nb = (0.01f64 + 0.09 + 0.36).sqrt();
        let cos = dot / (na * nb);
        let w = 1.0 / (1.0 + (-(cos - 0.5) * s_sig).exp());
        let expected = [
            0.6 * w + 0.1 * (1.0 - w),
            0.3 * w + 0.3 * (1.0 - w),
            0.1 * w + 0.6 * (1.0 - w),
        ];
        let got = biased_score(&c_arf, &c_basic, s_sig).unwrap();
        for (g, e) in got.as_array().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((cos_weight(&c_arf, &c_basic, s_sig).unwrap() - w).abs() < 1e-12);
    }

    #[test]
    fn rescore_fixed_point_and_oracle() {
        let rec = record("r1", 5);
        let same = rescore(&rec, &rec.score, 6.0, 30).unwrap();
        assert_eq!(same.score.as_array(), rec.score.as_array());
        assert_eq!(same.last_rescored_step, 30);
        assert_eq!(same.id, rec.id);
        assert_eq!(same.provenance, rec.provenance);

        let c_new = dist(0.7, 0.2, 0.1);
        let updated = rescore(&rec, &c_new, 6.0, 31).unwrap();
        let expected = biased_score(&c_new, &rec.score, 6.0).unwrap();
        assert_eq!(updated.score.as_array(), expected.as_array());
    }

    #[test]
    fn repeated_rescoring_converges_monotonically() {
        let mut rec = record("r1", 0);
        let target = dist(0.8, 0.15, 0.05);
        let mut prev_gap: [f64; 3] = [f64::INFINITY; 3];
        for step in 1..=60u64 {
            rec = rescore(&rec, &target, 6.0, step).unwrap();
            let gap: Vec<f64> = rec
                .score
                .as_array()
                .iter()
                .zip(target.as_array())
                .map(|(s, t)| (s - t).abs())
                .collect();
            for c in 0..3 {
                assert!(gap[c] <= prev_gap[c] + 1e-15, "coordinate {c} diverged");
                prev_gap[c] = gap[c];
            }
        }
        for g in prev_gap {
            assert!(g < 1e-3, "did not converge: gap {g}");
        }
    }

    fn tiny_vocab() -> Vocab {
        Vocab::new(vec![
            "plan".into(),
            "step".into(),
            "list".into(),
            "item".into(),
            "great".into(),
        ])
        .unwrap()
    }

    #[test]
    fn rescore_all_respects_due_times() {
        let vocab = tiny_vocab();
        let mut rng = Rng::new(5);
        let scorer = ScorerParams::init(vocab.size(), 4, &mut rng).unwrap();
        let cfg = BiasConfig {
            s_sig: 6.0,
            rescore_period: 10,
        };

        // Nothing is due when the period exceeds the clock.
        let mut db = AugDb::new();
        db.push(record("a", 0)).unwrap();
        assert_eq!(db.rescore_all(&scorer, &vocab, &cfg, 5).unwrap(), 0);

        // Everything due: count equals the store size.
        let mut db = AugDb::new();
        for (i, created) in [0u64, 1, 2].iter().enumerate() {
            db.push(record(&format!("r{i}"), *created)).unwrap();
        }
        assert_eq!(db.rescore_all(&scorer, &vocab, &cfg, 50).unwrap(), 3);
        for r in db.iter() {
            assert_eq!(r.last_rescored_step, 50);
        }

        // Hand-built mixed set: due iff last_rescored_step <= now - period.
        let mut db = AugDb::new();
        let mut stale = record("old", 0);
        stale.last_rescored_step = 12;
        let mut fresh = record("new", 0);
        fresh.last_rescored_step = 19;
        db.push(stale).unwrap();
        db.push(fresh).unwrap();
        assert_eq!(db.rescore_all(&scorer, &vocab, &cfg, 28).unwrap(), 1);
        assert_eq!(db.get("old").unwrap().last_rescored_step, 28);
        assert_eq!(db.get("new").unwrap().last_rescored_step, 19);
    }

    #[test]
    fn jsonl_round_trip_and_duplicate_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.jsonl");
        let mut db = AugDb::new();
        db.push(record("b", 1)).unwrap();
        db.push(record("a", 2)).unwrap();
        assert!(db.push(record("a", 3)).is_err());
        db.save_jsonl(&path).unwrap();
        let loaded = AugDb::load_jsonl(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        let ids: Vec<&str> = loaded.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(loaded.get("b").unwrap().created_step, 1);
    }

    fn arbitrary_dist() -> impl Strategy<Value = SatisfactionDistribution> {
        (0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(a, b, c)| {
            let s = a + b + c;
            SatisfactionDistribution::new(a / s, b / s, c / s).unwrap()
        })
    }

    proptest! {
        #[test]
        fn blend_stays_in_the_coordinate_hull(
            a in arbitrary_dist(),
            b in arbitrary_dist(),
            s_sig in 0.5f64..20.0
        ) {
            let out = biased_score(&a, &b, s_sig).unwrap();
            for ((o, x), y) in out.as_array().iter().zip(a.as_array()).zip(b.as_array()) {
                prop_assert!(*o >= x.min(y) - 1e-12);
                prop_assert!(*o <= x.max(y) + 1e-12);
            }
        }

        #[test]
        fn agreement_weight_is_monotone_in_similarity(
            a in arbitrary_dist(),
            b in arbitrary_dist(),
            c in arbitrary_dist(),
            s_sig in 0.5f64..20.0
        ) {
            let cos_ab = cosine_similarity(&a.as_array(), &b.as_array()).unwrap();
            let cos_ac = cosine_similarity(&a.as_array(), &c.as_array()).unwrap();
            let w_ab = cos_weight(&a, &b, s_sig).unwrap();
            let w_ac = cos_weight(&a, &c, s_sig).unwrap();
            if cos_ab < cos_ac {
                prop_assert!(w_ab <= w_ac + 1e-12);
            }
        }
    }
}
