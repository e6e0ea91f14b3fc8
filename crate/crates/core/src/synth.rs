//! Synthetic two-channel dialogues whose punctuation follows simple,
//! recoverable rules:
//!
//! - a sentence that opens with a question trigger ends in `?`, any other
//!   sentence ends in `.`;
//! - a conjunction inside a sentence is usually followed by a comma;
//! - pauses between sentences are much longer than pauses inside them, so
//!   timing features carry the sentence boundaries;
//! - a question ends its speaker's turn.
//!
//! Every word is traced back to the rule that labelled it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};

use crate::dialogue::sort_order;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::{Dialogue, PunctuationClass, Side, Word};

/// The bundled 100-word embedding fixture the generator draws tokens from.
pub const FIXTURE_EMBEDDINGS: &str = include_str!("../fixtures/embeddings.txt");

pub const DEFAULT_TRIGGERS: [&str; 5] = ["what", "where", "who", "how", "why"];
pub const DEFAULT_CONJUNCTIONS: [&str; 6] = ["and", "but", "so", "well", "because", "then"];

/// Tokens of the fixture embedding file, in file order.
pub fn fixture_vocabulary() -> Vec<&'static str> {
    FIXTURE_EMBEDDINGS
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .collect()
}

/// Gaussian with mean and standard deviation in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pause {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of content words drawn from the fixture vocabulary.
    pub vocab_size: usize,
    /// Mean of the geometric sentence length (at least one word).
    pub mean_sentence_length: f64,
    pub question_probability: f64,
    pub question_triggers: Vec<String>,
    pub conjunctions: Vec<String>,
    /// Chance that a non-final position holds a conjunction.
    pub conjunction_probability: f64,
    /// Chance that a conjunction is followed by a comma.
    pub comma_probability: f64,
    pub inter_sentence_gap: Pause,
    pub intra_sentence_gap: Pause,
    pub duration: Pause,
    pub min_duration: f64,
    pub mean_sentences_per_turn: f64,
    /// Chance that a turn starts before the previous speaker has finished.
    pub overlap_probability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: content_words(&DEFAULT_TRIGGERS.map(String::from), &DEFAULT_CONJUNCTIONS.map(String::from)).len(),
            mean_sentence_length: 8.0,
            question_probability: 0.1,
            question_triggers: DEFAULT_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            conjunctions: DEFAULT_CONJUNCTIONS.iter().map(|s| s.to_string()).collect(),
            conjunction_probability: 0.13,
            comma_probability: 0.9,
            inter_sentence_gap: Pause { mean: 0.8, std: 0.2 },
            intra_sentence_gap: Pause { mean: 0.15, std: 0.05 },
            duration: Pause { mean: 0.3, std: 0.1 },
            min_duration: 0.02,
            mean_sentences_per_turn: 2.0,
            overlap_probability: 0.1,
            seed: 0,
        }
    }
}

fn content_words(triggers: &[String], conjunctions: &[String]) -> Vec<&'static str> {
    fixture_vocabulary()
        .into_iter()
        .filter(|t| !triggers.iter().any(|x| x == t) && !conjunctions.iter().any(|x| x == t))
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("question_probability", self.question_probability),
            ("conjunction_probability", self.conjunction_probability),
            ("comma_probability", self.comma_probability),
            ("overlap_probability", self.overlap_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.mean_sentence_length >= 1.0) || !(self.mean_sentences_per_turn >= 1.0) {
            return fail("mean sentence length and sentences per turn must be at least 1".into());
        }
        for (name, p) in [
            ("inter_sentence_gap", self.inter_sentence_gap),
            ("intra_sentence_gap", self.intra_sentence_gap),
            ("duration", self.duration),
        ] {
            if !(p.mean > 0.0 && p.std >= 0.0 && p.mean.is_finite() && p.std.is_finite()) {
                return fail(format!("{name} needs a positive mean and a non-negative std"));
            }
        }
        if !(self.min_duration >= 0.0) {
            return fail("min_duration must be >= 0".into());
        }
        let available = content_words(&self.question_triggers, &self.conjunctions).len();
        if self.vocab_size == 0 || self.vocab_size > available {
            return fail(format!("vocab_size must be in 1..={available}"));
        }
        if self.question_probability > 0.0 && self.question_triggers.is_empty() {
            return fail("questions need at least one trigger".into());
        }
        if self.conjunction_probability > 0.0 && self.conjunctions.is_empty() {
            return fail("conjunctions are enabled but the list is empty".into());
        }
        Ok(())
    }

    /// Reads `synth_*`-free keys such as `question_probability` from `kv`.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = SynthConfig::default();
        let pause = |kv: &mut KeyValues, name: &str, p: Pause| -> Result<Pause> {
            Ok(Pause {
                mean: kv.take_or(&format!("{name}_mean"), p.mean)?,
                std: kv.take_or(&format!("{name}_std"), p.std)?,
            })
        };
        let config = SynthConfig {
            vocab_size: kv.take_or("vocab_size", d.vocab_size)?,
            mean_sentence_length: kv.take_or("mean_sentence_length", d.mean_sentence_length)?,
            question_probability: kv.take_or("question_probability", d.question_probability)?,
            question_triggers: kv.take_list("question_triggers")?.unwrap_or(d.question_triggers),
            conjunctions: kv.take_list("conjunctions")?.unwrap_or(d.conjunctions),
            conjunction_probability: kv.take_or("conjunction_probability", d.conjunction_probability)?,
            comma_probability: kv.take_or("comma_probability", d.comma_probability)?,
            inter_sentence_gap: pause(kv, "inter_sentence_gap", d.inter_sentence_gap)?,
            intra_sentence_gap: pause(kv, "intra_sentence_gap", d.intra_sentence_gap)?,
            duration: pause(kv, "duration", d.duration)?,
            min_duration: kv.take_or("min_duration", d.min_duration)?,
            mean_sentences_per_turn: kv.take_or("mean_sentences_per_turn", d.mean_sentences_per_turn)?,
            overlap_probability: kv.take_or("overlap_probability", d.overlap_probability)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Why a word got its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Content,
    Trigger,
    Conjunction,
    ConjunctionComma,
    EndDot,
    EndQuestion,
}

impl Rule {
    pub fn label(self) -> PunctuationClass {
        match self {
            Rule::Content | Rule::Trigger | Rule::Conjunction => PunctuationClass::Blank,
            Rule::ConjunctionComma => PunctuationClass::Comma,
            Rule::EndDot => PunctuationClass::Dot,
            Rule::EndQuestion => PunctuationClass::Question,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Content => "content",
            Rule::Trigger => "trigger",
            Rule::Conjunction => "conjunction",
            Rule::ConjunctionComma => "conjunction_comma",
            Rule::EndDot => "end_dot",
            Rule::EndQuestion => "end_question",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Rule::Content,
            Rule::Trigger,
            Rule::Conjunction,
            Rule::ConjunctionComma,
            Rule::EndDot,
            Rule::EndQuestion,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::Value(format!("unknown rule {s:?}")))
    }
}

/// Provenance of one generated word, indexed like the dialogue's words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub conversation: String,
    pub index: usize,
    pub side: Side,
    /// Sentence number within the conversation.
    pub sentence: usize,
    /// Position within the sentence.
    pub position: usize,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub dialogues: Vec<Dialogue>,
    pub trace: Vec<TraceEntry>,
}

impl SynthCorpus {
    /// Tab-separated trace with a `#` header line.
    pub fn trace_tsv(&self) -> String {
        let mut out = String::from("# conversation\tindex\tside\tsentence\tposition\trule\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                t.conversation, t.index, t.side, t.sentence, t.position, t.rule
            );
        }
        out
    }
}

struct Draw<'a> {
    config: &'a SynthConfig,
    content: Vec<&'static str>,
    sentence_len: Geometric,
    turn_len: Geometric,
    inter: Normal<f64>,
    intra: Normal<f64>,
    duration: Normal<f64>,
}

impl<'a> Draw<'a> {
    fn new(config: &'a SynthConfig) -> Result<Self> {
        let geometric = |mean: f64| Geometric::new(1.0 / mean).map_err(|e| Error::Config(e.to_string()));
        let normal = |p: Pause| Normal::new(p.mean, p.std).map_err(|e| Error::Config(e.to_string()));
        let mut content = content_words(&config.question_triggers, &config.conjunctions);
        content.truncate(config.vocab_size);
        Ok(Draw {
            config,
            content,
            sentence_len: geometric(config.mean_sentence_length)?,
            turn_len: geometric(config.mean_sentences_per_turn)?,
            inter: normal(config.inter_sentence_gap)?,
            intra: normal(config.intra_sentence_gap)?,
            duration: normal(config.duration)?,
        })
    }

    fn pick<'s, R: Rng>(items: &'s [String], rng: &mut R) -> &'s str {
        &items[rng.random_range(0..items.len())]
    }

    /// Tokens and rules of one sentence of at most `cap` words.
    fn sentence<R: Rng>(&self, cap: usize, rng: &mut R) -> Vec<(String, Rule)> {
        let c = self.config;
        let len = (1 + self.sentence_len.sample(rng) as usize).min(cap);
        let question = rng.random_bool(c.question_probability);
        let mut out = Vec::with_capacity(len);
        for pos in 0..len {
            let last = pos + 1 == len;
            if question && pos == 0 {
                let rule = if last { Rule::EndQuestion } else { Rule::Trigger };
                out.push((Self::pick(&c.question_triggers, rng).to_string(), rule));
            } else if last {
                let word = self.content[rng.random_range(0..self.content.len())];
                out.push((word.to_string(), if question { Rule::EndQuestion } else { Rule::EndDot }));
            } else if rng.random_bool(c.conjunction_probability) {
                let rule = if rng.random_bool(c.comma_probability) {
                    Rule::ConjunctionComma
                } else {
                    Rule::Conjunction
                };
                out.push((Self::pick(&c.conjunctions, rng).to_string(), rule));
            } else {
                let word = self.content[rng.random_range(0..self.content.len())];
                out.push((word.to_string(), Rule::Content));
            }
        }
        out
    }

    fn gap<R: Rng>(&self, dist: &Normal<f64>, rng: &mut R) -> f64 {
        dist.sample(rng).max(0.01)
    }
}

fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

fn conversation(draw: &Draw<'_>, id: &str, words: usize, rng: &mut ChaCha8Rng) -> Result<(Dialogue, Vec<TraceEntry>)> {
    let c = draw.config;
    let mut out: Vec<Word> = Vec::with_capacity(words);
    let mut meta: Vec<(usize, usize, Rule)> = Vec::with_capacity(words);
    let mut side = if rng.random_bool(0.5) { Side::A } else { Side::B };
    let mut clock = 0.0f64;
    let mut sentence_no = 0;
    let mut first_turn = true;
    while out.len() < words {
        let turn_sentences = 1 + draw.turn_len.sample(rng) as usize;
        for s in 0..turn_sentences {
            if out.len() >= words {
                break;
            }
            let sentence = draw.sentence(words - out.len(), rng);
            let asks = sentence.last().is_some_and(|(_, r)| *r == Rule::EndQuestion);
            for (pos, (token, rule)) in sentence.into_iter().enumerate() {
                let start = if out.is_empty() {
                    0.0
                } else if pos > 0 {
                    clock + draw.gap(&draw.intra, rng)
                } else if s > 0 || first_turn {
                    clock + draw.gap(&draw.inter, rng)
                } else if rng.random_bool(c.overlap_probability) {
                    // Start inside the other speaker's last word.
                    let prev = out.last().expect("not empty");
                    prev.start + rng.random_range(0.2..0.9) * prev.duration
                } else {
                    clock + draw.gap(&draw.inter, rng)
                };
                let start = ms(start);
                let duration = ms(draw.duration.sample(rng).max(c.min_duration));
                clock = clock.max(start + duration);
                out.push(Word::new(token, side, start, duration, Some(rule.label()))?);
                meta.push((sentence_no, pos, rule));
            }
            sentence_no += 1;
            first_turn = false;
            if asks {
                // A question hands the turn to the other speaker.
                break;
            }
        }
        side = match side {
            Side::A => Side::B,
            Side::B => Side::A,
        };
    }
    let order = sort_order(&out)?;
    let mut slots: Vec<Option<Word>> = out.into_iter().map(Some).collect();
    let mut sorted = Vec::with_capacity(order.len());
    let mut trace = Vec::with_capacity(order.len());
    for (index, &i) in order.iter().enumerate() {
        let word = slots[i].take().expect("permutation");
        let (sentence, position, rule) = meta[i];
        trace.push(TraceEntry {
            conversation: id.to_string(),
            index,
            side: word.side,
            sentence,
            position,
            rule,
        });
        sorted.push(word);
    }
    Ok((Dialogue::new(id, sorted)?, trace))
}

/// Generates `n` conversations of exactly `words` words each. Conversation
/// `i` uses its own stream of the seeded generator, so conversations can be
/// produced independently.
pub fn generate(config: &SynthConfig, n: usize, words: usize) -> Result<SynthCorpus> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Value("need at least one conversation".into()));
    }
    let draw = Draw::new(config)?;
    let mut dialogues = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n * words);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let (d, t) = conversation(&draw, &format!("syn{i:05}"), words, &mut rng)?;
        dialogues.push(d);
        trace.extend(t);
    }
    Ok(SynthCorpus { dialogues, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::class_histogram;
    use crate::features::{time_features, IntervalMode};

    #[test]
    fn vocabulary_is_the_fixture_file() {
        let vocab = fixture_vocabulary();
        assert_eq!(vocab.len(), 100);
        for t in DEFAULT_TRIGGERS.iter().chain(&DEFAULT_CONJUNCTIONS) {
            assert!(vocab.contains(t));
        }
        assert_eq!(SynthConfig::default().vocab_size, 89);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let c = SynthConfig::default();
        let a = generate(&c, 3, 120).unwrap();
        assert_eq!(a, generate(&c, 3, 120).unwrap());
        let other = generate(&SynthConfig { seed: 1, ..c }, 3, 120).unwrap();
        assert_ne!(a.dialogues, other.dialogues);
        assert!(a.dialogues.iter().all(|d| d.len() == 120));
    }

    #[test]
    fn labels_follow_the_trace() {
        let corpus = generate(&SynthConfig::default(), 4, 300).unwrap();
        let mut k = 0;
        for d in &corpus.dialogues {
            for (i, w) in d.words().iter().enumerate() {
                let t = &corpus.trace[k];
                assert_eq!((t.conversation.as_str(), t.index, t.side), (d.id(), i, w.side));
                assert_eq!(w.label, Some(t.rule.label()));
                k += 1;
            }
        }
        assert_eq!(k, corpus.trace.len());
    }

    #[test]
    fn no_questions_without_triggers() {
        let c = SynthConfig {
            question_probability: 0.0,
            ..Default::default()
        };
        let corpus = generate(&c, 5, 400).unwrap();
        let hist = class_histogram(&corpus.dialogues).unwrap();
        assert_eq!(hist.count(PunctuationClass::Question), 0);
    }

    #[test]
    fn sentence_ends_carry_terminal_labels() {
        let corpus = generate(&SynthConfig::default(), 5, 400).unwrap();
        // Group trace entries by sentence and check the last one.
        let mut by_sentence = std::collections::BTreeMap::new();
        for t in &corpus.trace {
            let e = by_sentence.entry((t.conversation.clone(), t.sentence)).or_insert((0, Rule::Content));
            if t.position >= e.0 {
                *e = (t.position, t.rule);
            }
        }
        for t in &corpus.trace {
            let (last_pos, _) = by_sentence[&(t.conversation.clone(), t.sentence)];
            let terminal = matches!(t.rule.label(), PunctuationClass::Dot | PunctuationClass::Question);
            assert_eq!(terminal, t.position == last_pos, "{t:?}");
        }
    }

    /// Expected label shares from the generator's definition. With sentence
    /// length L ~ Geometric(1/8) on {1, 2, ...}: E[L] = 8, E[L - 1] = 7 and
    /// E[max(L - 2, 0)] = 6.125. Commas sit on conjunctions in non-final,
    /// non-trigger positions.
    fn expected_shares(c: &SynthConfig) -> [f64; 4] {
        let m = c.mean_sentence_length;
        let p = 1.0 / m;
        let non_final = m - 1.0;
        let non_final_after_trigger = (m - 2.0) + p;
        let q = c.question_probability;
        let comma = c.conjunction_probability * c.comma_probability * ((1.0 - q) * non_final + q * non_final_after_trigger) / m;
        let dot = (1.0 - q) / m;
        let question = q / m;
        [1.0 - comma - dot - question, comma, dot, question]
    }

    #[test]
    fn class_shares_match_closed_form() {
        let c = SynthConfig::default();
        let expected = expected_shares(&c);
        assert!((expected[1] - 0.10110).abs() < 1e-4);
        assert!((expected[2] - 0.1125).abs() < 1e-12);
        let corpus = generate(&c, 200, 500).unwrap();
        let hist = class_histogram(&corpus.dialogues).unwrap();
        let total = hist.total() as f64;
        assert_eq!(total, 1e5);
        let share = |k: PunctuationClass| hist.count(k) as f64 / total;
        let blank = share(PunctuationClass::Blank);
        let question = share(PunctuationClass::Question);
        assert!((0.70..=0.88).contains(&blank), "blank {blank}");
        assert!((0.005..=0.03).contains(&question), "question {question}");
        for (k, e) in PunctuationClass::ALL.into_iter().zip(expected) {
            assert!((share(k) - e).abs() < 0.006, "{k:?}: {} vs {e}", share(k));
        }
    }

    #[test]
    fn pauses_mark_sentence_boundaries() {
        let corpus = generate(&SynthConfig::default(), 20, 500).unwrap();
        let mut after_dot = Vec::new();
        let mut elsewhere = Vec::new();
        for d in &corpus.dialogues {
            // Gap between a word's end and the next start of the same speaker.
            for side in [Side::A, Side::B] {
                let words: Vec<&Word> = d.words().iter().filter(|w| w.side == side).collect();
                for pair in words.windows(2) {
                    let gap = pair[1].start - (pair[0].start + pair[0].duration);
                    match pair[0].label {
                        Some(PunctuationClass::Dot) => after_dot.push(gap),
                        _ => elsewhere.push(gap),
                    }
                }
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&mut after_dot) > 2.0 * median(&mut elsewhere));
        // Standardized intervals remain computable.
        let raw = time_features(&corpus.dialogues[0], IntervalMode::PerSpeaker);
        assert!(raw.iter().all(|(i, d)| *i >= 0.0 && *d >= 0.02));
    }

    #[test]
    fn questions_end_the_turn() {
        let corpus = generate(&SynthConfig::default(), 10, 500).unwrap();
        let mut sides = std::collections::BTreeMap::new();
        let mut asked = std::collections::BTreeSet::new();
        for t in &corpus.trace {
            sides.insert((t.conversation.clone(), t.sentence), t.side);
            if t.rule == Rule::EndQuestion {
                asked.insert((t.conversation.clone(), t.sentence));
            }
        }
        assert!(asked.len() > 20);
        for (conv, s) in asked {
            if let Some(next) = sides.get(&(conv.clone(), s + 1)) {
                assert_ne!(*next, sides[&(conv, s)]);
            }
        }
    }

    #[test]
    fn trace_round_trips_rule_names() {
        let corpus = generate(&SynthConfig::default(), 1, 50).unwrap();
        let tsv = corpus.trace_tsv();
        for (line, t) in tsv.lines().skip(1).zip(&corpus.trace) {
            let rule: Rule = line.rsplit('\t').next().unwrap().parse().unwrap();
            assert_eq!(rule, t.rule);
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        assert!(SynthConfig { question_probability: 1.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { vocab_size: 500, ..Default::default() }.validate().is_err());
        assert!(generate(&SynthConfig::default(), 0, 10).is_err());
    }
}
