//! Simulated user and corpus generator.
//!
//! Four synthetic domains with partially overlapping vocabularies, a
//! preference schedule that activates domains one by one and flips the
//! earliest ones to negative supervision once too many overlap, good/bad
//! feedback templates with a slot for the next question, a strength-to-class
//! label mapping, and the environment reward hook that scores a generated
//! response together with the user's follow-up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scorer::{SatisfactionDistribution, ScorerParams};
use crate::tokens::{TokenId, Vocab, BOS, EOS, PAD};
use crate::tracebias::{RewardEnv, TraceSample, TraceStepSample};

/// Deterministic sub-stream ids hanging off an experiment's root generator.
pub mod streams {
    pub const STATIC_POOL: u64 = 1;
    pub const TRACES: u64 = 2;
    pub const PROBES: u64 = 3;
}

/// Satisfaction class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatClass {
    Bad,
    Neutral,
    Good,
}

impl SatClass {
    /// Soft label used when materializing a class as a distribution.
    pub fn label_simplex(self) -> SatisfactionDistribution {
        let (b, n, g) = match self {
            SatClass::Bad => (0.8, 0.15, 0.05),
            SatClass::Neutral => (0.15, 0.7, 0.15),
            SatClass::Good => (0.05, 0.15, 0.8),
        };
        SatisfactionDistribution::new(b, n, g).expect("class simplex is valid")
    }

    pub fn class_index(self) -> usize {
        match self {
            SatClass::Bad => 0,
            SatClass::Neutral => 1,
            SatClass::Good => 2,
        }
    }

    pub fn invert(self) -> SatClass {
        match self {
            SatClass::Bad => SatClass::Good,
            SatClass::Neutral => SatClass::Neutral,
            SatClass::Good => SatClass::Bad,
        }
    }

    /// The strength levels that collapse into this class.
    pub fn strength_levels(self) -> &'static [f64] {
        match self {
            SatClass::Bad => &[0.0, 0.5, 1.0],
            SatClass::Neutral => &[1.5],
            SatClass::Good => &[2.0, 2.5, 3.0],
        }
    }
}

/// Maps a 7-level emotion strength to its satisfaction class: levels in
/// [0, 1] are bad, 1.5 is neutral, levels in [2, 3] are good.
pub fn strength_to_class(strength: f64) -> Result<SatClass> {
    let doubled = strength * 2.0;
    let rounded = doubled.round();
    if !strength.is_finite() || (doubled - rounded).abs() > 1e-9 || !(0.0..=6.0).contains(&rounded)
    {
        return Err(Error::InvalidInput(format!(
            "strength {strength} is not one of the seven levels 0.0, 0.5, ..., 3.0"
        )));
    }
    Ok(match rounded as i64 {
        0..=2 => SatClass::Bad,
        3 => SatClass::Neutral,
        _ => SatClass::Good,
    })
}

/// A synthetic task domain: a name and its 12-word content vocabulary.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: String,
    pub words: Vec<String>,
}

const GOOD_WORDS: [&str; 6] = ["great", "thanks", "correct", "helpful", "nice", "good"];
const BAD_WORDS: [&str; 6] = ["wrong", "terrible", "useless", "awful", "stop", "bad"];
const FILLER_WORDS: [&str; 6] = ["okay", "hmm", "well", "so", "then", "maybe"];
const GLUE_WORDS: [&str; 2] = ["and", "the"];

const GUIDE_WORDS: [&str; 12] = [
    "write", "list", "step", "plan", "idea", "draft", "note", "task", "tip", "goal", "item",
    "point",
];
const MATH_WORDS: [&str; 12] = [
    "sum", "digit", "count", "number", "add", "minus", "times", "equal", "total", "half",
    "double", "zero",
];
const LOGIC_NEW_WORDS: [&str; 8] = ["yes", "no", "true", "false", "fact", "cause", "reason", "guess"];
const CHAT_NEW_WORDS: [&str; 8] = ["chat", "story", "movie", "music", "game", "fun", "cool", "wow"];

/// The fixed 64-token vocabulary: 4 reserved ids plus 60 words.
pub fn build_vocab() -> Vocab {
    let mut words: Vec<String> = Vec::with_capacity(60);
    for w in GOOD_WORDS
        .iter()
        .chain(&BAD_WORDS)
        .chain(&FILLER_WORDS)
        .chain(&GLUE_WORDS)
        .chain(&GUIDE_WORDS)
        .chain(&MATH_WORDS)
        .chain(&LOGIC_NEW_WORDS)
        .chain(&CHAT_NEW_WORDS)
    {
        words.push(w.to_string());
    }
    Vocab::new(words).expect("built-in vocabulary is valid")
}

/// The four domains. Adjacent pairs (guide/logic and math/chat) share a third
/// of their vocabulary, mirroring semantically related task pairs; all other
/// pairs are disjoint.
pub fn default_domains() -> Vec<DomainSpec> {
    let mut logic: Vec<String> = LOGIC_NEW_WORDS.iter().map(|w| w.to_string()).collect();
    logic.extend(["plan", "idea", "note", "point"].map(String::from));
    let mut chat: Vec<String> = CHAT_NEW_WORDS.iter().map(|w| w.to_string()).collect();
    chat.extend(["count", "number", "total", "half"].map(String::from));
    vec![
        DomainSpec {
            name: "guide".into(),
            words: GUIDE_WORDS.iter().map(|w| w.to_string()).collect(),
        },
        DomainSpec {
            name: "math".into(),
            words: MATH_WORDS.iter().map(|w| w.to_string()).collect(),
        },
        DomainSpec {
            name: "logic".into(),
            words: logic,
        },
        DomainSpec {
            name: "chat".into(),
            words: chat,
        },
    ]
}

/// Checks that every pair of domains shares strictly less than half of its
/// words and that every word is in the vocabulary.
pub fn validate_domains(domains: &[DomainSpec], vocab: &Vocab) -> Result<()> {
    for d in domains {
        for w in &d.words {
            if !vocab.contains(w) {
                return Err(Error::InvalidInput(format!(
                    "domain {} word {w:?} is not in the vocabulary",
                    d.name
                )));
            }
        }
    }
    for i in 0..domains.len() {
        for j in (i + 1)..domains.len() {
            let a = &domains[i];
            let b = &domains[j];
            let shared = a.words.iter().filter(|w| b.words.contains(w)).count();
            let bound = a.words.len().min(b.words.len());
            if 2 * shared >= bound {
                return Err(Error::InvalidInput(format!(
                    "domains {} and {} share {shared} of {bound} words",
                    a.name, b.name
                )));
            }
        }
    }
    Ok(())
}

/// Good/bad feedback skeletons with a slot for the next question. The two
/// skeletons share no tokens. Neutral feedback draws a skeleton at random.
#[derive(Debug, Clone)]
pub struct FeedbackTemplates {
    pub good: Vec<String>,
    pub bad: Vec<String>,
    /// Probability that neutral feedback uses the good skeleton.
    pub neutral_good_prob: f64,
}

impl Default for FeedbackTemplates {
    fn default() -> Self {
        FeedbackTemplates {
            good: GOOD_WORDS.map(String::from).to_vec(),
            bad: BAD_WORDS.map(String::from).to_vec(),
            neutral_good_prob: 0.5,
        }
    }
}

impl FeedbackTemplates {
    pub fn validate(&self) -> Result<()> {
        if self.good.is_empty() || self.bad.is_empty() {
            return Err(Error::Config("feedback skeletons must be non-empty".into()));
        }
        if self.good.iter().any(|w| self.bad.contains(w)) {
            return Err(Error::Config("good and bad skeletons must be disjoint".into()));
        }
        Ok(())
    }

    /// Follow-up text for a response of the given quality: the matching
    /// skeleton with the next prompt spliced into the slot.
    pub fn feedback_for(
        &self,
        quality: SatClass,
        next_prompt: &[String],
        rng: &mut Rng,
    ) -> Vec<String> {
        let skeleton = match quality {
            SatClass::Good => &self.good,
            SatClass::Bad => &self.bad,
            SatClass::Neutral => {
                if rng.next_f64() < self.neutral_good_prob {
                    &self.good
                } else {
                    &self.bad
                }
            }
        };
        let mut out = skeleton.clone();
        out.extend_from_slice(next_prompt);
        out
    }
}

/// Domain activation and flipping over training steps. Domains activate one
/// per period in order; once more than two are active, the earliest-activated
/// ones receive negative supervision, up to `max_negative` at a time.
#[derive(Debug, Clone)]
pub struct PreferenceSchedule {
    pub flip_period: u64,
    pub max_negative: usize,
    pub domain_count: usize,
}

impl PreferenceSchedule {
    pub fn new(flip_period: u64, max_negative: usize, domain_count: usize) -> Result<Self> {
        if flip_period == 0 || domain_count == 0 {
            return Err(Error::Config("schedule needs flip_period >= 1 and domains".into()));
        }
        Ok(PreferenceSchedule {
            flip_period,
            max_negative,
            domain_count,
        })
    }

    /// A schedule that keeps every domain active and positive forever.
    pub fn stable(domain_count: usize) -> Self {
        PreferenceSchedule {
            flip_period: 1,
            max_negative: 0,
            domain_count,
        }
    }

    fn active_count(&self, step: u64) -> usize {
        (((step / self.flip_period) + 1) as usize).min(self.domain_count)
    }

    fn negative_count(&self, step: u64) -> usize {
        self.active_count(step).saturating_sub(2).min(self.max_negative)
    }

    /// Indices of domains receiving data at this step.
    pub fn active_domains(&self, step: u64) -> std::ops::Range<usize> {
        0..self.active_count(step)
    }

    /// Supervision sign for a domain, or None while it is inactive.
    pub fn sign(&self, domain_idx: usize, step: u64) -> Option<i8> {
        if domain_idx >= self.active_count(step) {
            return None;
        }
        if domain_idx < self.negative_count(step) {
            Some(-1)
        } else {
            Some(1)
        }
    }

    /// The step at which a domain's supervision flips to negative, if ever.
    pub fn flip_step(&self, domain_idx: usize) -> Option<u64> {
        if domain_idx >= self.max_negative || domain_idx + 3 > self.domain_count {
            return None;
        }
        Some((domain_idx as u64 + 2) * self.flip_period)
    }

    /// All (domain index, flip step) events occurring strictly before
    /// `total_steps`.
    pub fn flips_within(&self, total_steps: u64) -> Vec<(usize, u64)> {
        (0..self.domain_count)
            .filter_map(|i| self.flip_step(i).map(|s| (i, s)))
            .filter(|&(_, s)| s < total_steps)
            .collect()
    }
}

/// One schedule-invariant labeled text: the held-out supervision pool for the
/// static scorer and the replay source of experience replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticSample {
    pub tokens: Vec<String>,
    pub strength: f64,
    pub label: SatisfactionDistribution,
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub n_traces: usize,
    pub static_pool_size: usize,
    pub max_trace_steps: usize,
    /// Probability that a trace step carries a neutral label.
    pub neutral_prob: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_traces: 300,
            static_pool_size: 600,
            max_trace_steps: 4,
            neutral_prob: 0.1,
        }
    }
}

/// A random prompt in a domain: 3 to 6 content words.
pub fn domain_prompt(domain: &DomainSpec, rng: &mut Rng) -> Vec<String> {
    let len = 3 + rng.below(4);
    (0..len).map(|_| rng.choose(&domain.words).clone()).collect()
}

/// A random reference response in a domain: 3 to 8 content words.
pub fn domain_response(domain: &DomainSpec, rng: &mut Rng) -> Vec<String> {
    let len = 3 + rng.below(6);
    (0..len).map(|_| rng.choose(&domain.words).clone()).collect()
}

fn static_sample(class: SatClass, domains: &[DomainSpec], rng: &mut Rng) -> StaticSample {
    let strength = *rng.choose(class.strength_levels());
    let marker_pool: &[&str] = match class {
        SatClass::Bad => &BAD_WORDS,
        SatClass::Neutral => &FILLER_WORDS,
        SatClass::Good => &GOOD_WORDS,
    };
    let mut tokens: Vec<String> = Vec::new();
    let n_domain = rng.below(5);
    for _ in 0..n_domain {
        let d = rng.choose(domains);
        tokens.push(rng.choose(&d.words).clone());
    }
    let n_markers = 2 + rng.below(2);
    for _ in 0..n_markers {
        tokens.push((*rng.choose(marker_pool)).to_string());
    }
    if rng.next_f64() < 0.3 {
        tokens.push((*rng.choose(&GLUE_WORDS)).to_string());
    }
    rng.shuffle(&mut tokens);
    StaticSample {
        tokens,
        strength,
        label: class.label_simplex(),
    }
}

/// Generates the multi-domain trace corpus and the schedule-invariant static
/// pool. The pool draws from its own stream, so regenerating with a different
/// schedule but the same seed yields an identical pool. Trace labels follow
/// the schedule's sign for the step's domain at generation time.
pub fn gen_corpus(
    domains: &[DomainSpec],
    schedule: &PreferenceSchedule,
    cfg: &CorpusConfig,
    root: &Rng,
) -> Result<(Vec<TraceSample>, Vec<StaticSample>)> {
    if domains.is_empty() {
        return Err(Error::InvalidInput("gen_corpus needs at least one domain".into()));
    }
    if cfg.max_trace_steps == 0 {
        return Err(Error::Config("max_trace_steps must be >= 1".into()));
    }
    let mut pool_rng = root.stream(streams::STATIC_POOL);
    let classes = [SatClass::Bad, SatClass::Neutral, SatClass::Good];
    let static_pool: Vec<StaticSample> = (0..cfg.static_pool_size)
        .map(|i| static_sample(classes[i % 3], domains, &mut pool_rng))
        .collect();

    let mut trace_rng = root.stream(streams::TRACES);
    let mut traces = Vec::with_capacity(cfg.n_traces);
    for i in 0..cfg.n_traces {
        let step_clock = i as u64;
        let active = schedule.active_domains(step_clock);
        let domain_idx = active.start + trace_rng.below(active.len());
        let domain = &domains[domain_idx.min(domains.len() - 1)];
        let sign = schedule.sign(domain_idx, step_clock).unwrap_or(1);
        let n_steps = 1 + trace_rng.below(cfg.max_trace_steps);
        let steps = (0..n_steps)
            .map(|_| {
                let class = if trace_rng.next_f64() < cfg.neutral_prob {
                    SatClass::Neutral
                } else if sign > 0 {
                    SatClass::Good
                } else {
                    SatClass::Bad
                };
                let strength = *trace_rng.choose(class.strength_levels());
                debug_assert_eq!(strength_to_class(strength).unwrap(), class);
                TraceStepSample {
                    user_input: domain_prompt(domain, &mut trace_rng),
                    reference_response: domain_response(domain, &mut trace_rng),
                    label: class.label_simplex(),
                }
            })
            .collect();
        traces.push(TraceSample {
            steps,
            domain: domain.name.clone(),
        });
    }
    Ok((traces, static_pool))
}

/// Synonym lexicon over domain and filler words: each word maps to the next
/// two words of its own group, so substitution never leaves the domain.
pub fn default_lexicon() -> crate::augment::SynonymLexicon {
    let mut map = std::collections::BTreeMap::new();
    let mut add_group = |words: &[&str]| {
        for (i, w) in words.iter().enumerate() {
            let subs = vec![
                words[(i + 1) % words.len()].to_string(),
                words[(i + 2) % words.len()].to_string(),
            ];
            map.insert(w.to_string(), subs);
        }
    };
    add_group(&GUIDE_WORDS);
    add_group(&MATH_WORDS);
    add_group(&LOGIC_NEW_WORDS);
    add_group(&CHAT_NEW_WORDS);
    add_group(&FILLER_WORDS);
    crate::augment::SynonymLexicon::new(map).expect("built-in lexicon is valid")
}

/// Reward of a generated response given the user's follow-up: the scorer's
/// step score of the concatenated tokens.
pub fn env_reward(
    scorer: &ScorerParams,
    generated: &[TokenId],
    feedback: &[TokenId],
) -> Result<f64> {
    let mut tokens = generated.to_vec();
    tokens.extend_from_slice(feedback);
    Ok(scorer.score(&tokens)?.step_score())
}

/// The simulated user: judges a generated response by its overlap with the
/// trace's domain vocabulary, inverts the judgement while the domain is under
/// negative supervision, emits matching feedback text, and reads the reward
/// off the provided scorer.
pub struct SimUser<'a> {
    scorer: &'a ScorerParams,
    vocab: &'a Vocab,
    domains: &'a [DomainSpec],
    templates: FeedbackTemplates,
    schedule: PreferenceSchedule,
    judge_threshold: f64,
    current_step: u64,
}

impl<'a> SimUser<'a> {
    pub fn new(
        scorer: &'a ScorerParams,
        vocab: &'a Vocab,
        domains: &'a [DomainSpec],
        templates: FeedbackTemplates,
        schedule: PreferenceSchedule,
        judge_threshold: f64,
    ) -> Result<Self> {
        templates.validate()?;
        if !(0.0..=1.0).contains(&judge_threshold) {
            return Err(Error::Config(format!(
                "judge_threshold {judge_threshold} outside [0, 1]"
            )));
        }
        Ok(SimUser {
            scorer,
            vocab,
            domains,
            templates,
            schedule,
            judge_threshold,
            current_step: 0,
        })
    }

    /// Advances the user's clock; the schedule sign is read at this step.
    pub fn set_step(&mut self, step: u64) {
        self.current_step = step;
    }

    fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown domain {name:?}")))
    }

    /// Raw quality judgement: the fraction of content tokens that belong to
    /// the domain vocabulary, thresholded.
    pub fn judge(&self, domain: &DomainSpec, generated: &[TokenId]) -> SatClass {
        let content: Vec<TokenId> = generated
            .iter()
            .copied()
            .filter(|&t| t != BOS && t != EOS && t != PAD)
            .collect();
        if content.is_empty() {
            return SatClass::Bad;
        }
        let domain_ids: Vec<TokenId> = domain.words.iter().map(|w| self.vocab.id(w)).collect();
        let hits = content.iter().filter(|t| domain_ids.contains(t)).count();
        if hits as f64 / content.len() as f64 >= self.judge_threshold {
            SatClass::Good
        } else {
            SatClass::Bad
        }
    }

    /// Judgement after applying the schedule's current sign for the domain.
    pub fn preference_class(&self, domain_name: &str, generated: &[TokenId]) -> Result<SatClass> {
        let idx = self.domain_index(domain_name)?;
        let base = self.judge(&self.domains[idx], generated);
        let sign = self.schedule.sign(idx, self.current_step).unwrap_or(1);
        Ok(if sign < 0 { base.invert() } else { base })
    }

    /// Feedback tokens the user would utter for this response.
    pub fn feedback_tokens(
        &self,
        trace: &TraceSample,
        step_idx: usize,
        generated: &[TokenId],
        rng: &mut Rng,
    ) -> Result<Vec<TokenId>> {
        let class = self.preference_class(&trace.domain, generated)?;
        let empty: Vec<String> = Vec::new();
        let next_prompt = trace
            .steps
            .get(step_idx + 1)
            .map(|s| s.user_input.as_slice())
            .unwrap_or(&empty);
        let words = self.templates.feedback_for(class, next_prompt, rng);
        Ok(self.vocab.ids(&words))
    }
}

impl RewardEnv for SimUser<'_> {
    fn step_reward(
        &mut self,
        trace: &TraceSample,
        step_idx: usize,
        generated: &[TokenId],
        rng: &mut Rng,
    ) -> Result<f64> {
        let feedback = self.feedback_tokens(trace, step_idx, generated, rng)?;
        env_reward(self.scorer, generated, &feedback)
    }
}
