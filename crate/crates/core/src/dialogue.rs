//! Core dialogue representation: words from both channels of a conversation
//! merged into one sequence ordered by start time.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Punctuation following a word. The integer encoding is stable and used by
/// the models, checkpoints and the serialized forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PunctuationClass {
    Blank = 0,
    Comma = 1,
    Dot = 2,
    Question = 3,
}

impl PunctuationClass {
    pub const COUNT: usize = 4;
    pub const ALL: [PunctuationClass; 4] = [
        PunctuationClass::Blank,
        PunctuationClass::Comma,
        PunctuationClass::Dot,
        PunctuationClass::Question,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Symbol used in dialogue files; `_` is blank.
    pub fn symbol(self) -> char {
        match self {
            PunctuationClass::Blank => '_',
            PunctuationClass::Comma => ',',
            PunctuationClass::Dot => '.',
            PunctuationClass::Question => '?',
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        match symbol {
            "_" => Some(PunctuationClass::Blank),
            "," => Some(PunctuationClass::Comma),
            "." => Some(PunctuationClass::Dot),
            "?" => Some(PunctuationClass::Question),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PunctuationClass::Blank => "blank",
            PunctuationClass::Comma => "comma",
            PunctuationClass::Dot => "dot",
            PunctuationClass::Question => "question",
        }
    }
}

impl fmt::Display for PunctuationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Telephone channel that uttered a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

impl Side {
    /// Value of the conversation-side input feature.
    pub fn feature(self) -> f32 {
        match self {
            Side::A => 0.0,
            Side::B => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Side::A),
            "B" => Ok(Side::B),
            other => Err(Error::Value(format!("unknown side {other:?}, expected A or B"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub text: String,
    pub side: Side,
    /// Start offset in seconds.
    pub start: f64,
    /// Duration in seconds.
    pub duration: f64,
    pub label: Option<PunctuationClass>,
}

impl Word {
    pub fn new(
        text: impl Into<String>,
        side: Side,
        start: f64,
        duration: f64,
        label: Option<PunctuationClass>,
    ) -> Result<Self> {
        let word = Word {
            text: text.into(),
            side,
            start,
            duration,
            label,
        };
        word.validate()?;
        Ok(word)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() || self.text.chars().any(char::is_whitespace) {
            return Err(Error::Value(format!(
                "word text {:?} must be non-empty without whitespace",
                self.text
            )));
        }
        check_time("start", self.start)?;
        check_time("duration", self.duration)?;
        Ok(())
    }
}

pub(crate) fn check_time(what: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Value(format!("{what} {value} is not finite")));
    }
    if value < 0.0 {
        return Err(Error::Value(format!("{what} {value} is negative")));
    }
    Ok(())
}

/// Permutation that orders `words` by start time, breaking ties by side
/// (A first) and then by the word's index within its own channel.
pub fn sort_order(words: &[Word]) -> Result<Vec<usize>> {
    let mut channel_index = Vec::with_capacity(words.len());
    let mut seen = [0usize; 2];
    for word in words {
        if !word.start.is_finite() {
            return Err(Error::Value(format!(
                "word {:?} has non-finite start {}",
                word.text, word.start
            )));
        }
        let side = word.side.index();
        channel_index.push(seen[side]);
        seen[side] += 1;
    }
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| {
        words[a]
            .start
            .total_cmp(&words[b].start)
            .then(words[a].side.cmp(&words[b].side))
            .then(channel_index[a].cmp(&channel_index[b]))
    });
    Ok(order)
}

/// Orders words into dialogue order. See [`sort_order`] for the tie-break.
pub fn sort_words(words: Vec<Word>) -> Result<Vec<Word>> {
    let order = sort_order(&words)?;
    let mut slots: Vec<Option<Word>> = words.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("permutation"))
        .collect())
}

/// One conversation. Words are sorted by start time and are either all
/// labelled (training data) or all unlabelled (inference input).
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    id: String,
    words: Vec<Word>,
}

impl Dialogue {
    /// Builds a dialogue from words that are already in dialogue order.
    pub fn new(id: impl Into<String>, words: Vec<Word>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::Value(format!("bad conversation id {id:?}")));
        }
        for word in &words {
            word.validate()?;
        }
        if let Some(pair) = words.windows(2).find(|w| w[1].start < w[0].start) {
            return Err(Error::Value(format!(
                "dialogue {id}: word {:?} at {} follows {:?} at {}",
                pair[1].text, pair[1].start, pair[0].text, pair[0].start
            )));
        }
        let labelled = words.iter().filter(|w| w.label.is_some()).count();
        if labelled != 0 && labelled != words.len() {
            let index = words.iter().position(|w| w.label.is_none()).unwrap_or(0);
            return Err(Error::MissingLabel { dialogue: id, index });
        }
        Ok(Dialogue { id, words })
    }

    /// Builds a dialogue from words in any order.
    pub fn from_unsorted(id: impl Into<String>, words: Vec<Word>) -> Result<Self> {
        Self::new(id, sort_words(words)?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_labelled(&self) -> bool {
        self.words.first().is_some_and(|w| w.label.is_some())
    }

    /// Labels in word order; fails on the first unlabelled word.
    pub fn labels(&self) -> Result<Vec<PunctuationClass>> {
        self.words
            .iter()
            .enumerate()
            .map(|(index, w)| {
                w.label.ok_or_else(|| Error::MissingLabel {
                    dialogue: self.id.clone(),
                    index,
                })
            })
            .collect()
    }

    /// Copy of this dialogue carrying `labels` instead of its own.
    pub fn with_labels(&self, labels: &[PunctuationClass]) -> Result<Dialogue> {
        if labels.len() != self.words.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} words",
                labels.len(),
                self.words.len()
            )));
        }
        let words = self
            .words
            .iter()
            .zip(labels)
            .map(|(w, &label)| Word {
                label: Some(label),
                ..w.clone()
            })
            .collect();
        Ok(Dialogue {
            id: self.id.clone(),
            words,
        })
    }

    pub fn without_labels(&self) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            words: self
                .words
                .iter()
                .map(|w| Word {
                    label: None,
                    ..w.clone()
                })
                .collect(),
        }
    }
}

/// Label counts over a corpus, indexed by [`PunctuationClass::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: [u64; 4],
}

impl ClassHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, class: PunctuationClass) -> u64 {
        self.counts[class.index()]
    }

    /// Share of `class` in percent, rounded to one decimal; 0 on an empty corpus.
    pub fn percentage(&self, class: PunctuationClass) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let pct = 100.0 * self.count(class) as f64 / total as f64;
        (pct * 10.0).round() / 10.0
    }
}

impl fmt::Display for ClassHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for class in PunctuationClass::ALL {
            writeln!(
                f,
                "{}\t{}\t{:.1}%",
                class.name(),
                self.count(class),
                self.percentage(class)
            )?;
        }
        Ok(())
    }
}

pub fn class_histogram<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Result<ClassHistogram> {
    let mut hist = ClassHistogram::default();
    for dialogue in dialogues {
        for label in dialogue.labels()? {
            hist.counts[label.index()] += 1;
        }
    }
    Ok(hist)
}

/// Writes dialogues as one word per line:
/// `id<TAB>side<TAB>start<TAB>duration<TAB>text<TAB>label`, times with three
/// decimals. Unlabelled words omit the label column.
pub fn write_dialogues<'a, W: Write>(
    mut out: W,
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
) -> std::io::Result<()> {
    for dialogue in dialogues {
        for word in &dialogue.words {
            write!(
                out,
                "{}\t{}\t{:.3}\t{:.3}\t{}",
                dialogue.id, word.side, word.start, word.duration, word.text
            )?;
            match word.label {
                Some(label) => writeln!(out, "\t{}", label.symbol())?,
                None => writeln!(out)?,
            }
        }
    }
    Ok(())
}

pub fn dialogues_to_string(dialogues: &[Dialogue]) -> String {
    let mut buf = Vec::new();
    write_dialogues(&mut buf, dialogues).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("dialogue text is UTF-8")
}

/// Parses the dialogue file format. Consecutive lines sharing an id form one
/// dialogue; `#` lines and blank lines are skipped.
pub fn read_dialogues(text: &str) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    let mut current: Option<(String, Vec<Word>)> = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 5 or 6 tab-separated fields, found {}", fields.len()),
            ));
        }
        let side: Side = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
        let start = parse_seconds(fields[2], line_no)?;
        let duration = parse_seconds(fields[3], line_no)?;
        let label = match fields.get(5) {
            Some(sym) => Some(PunctuationClass::from_symbol(sym).ok_or_else(|| {
                Error::parse(line_no, format!("unknown label {sym:?}"))
            })?),
            None => None,
        };
        let word = Word::new(fields[4], side, start, duration, label)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        match &mut current {
            Some((id, words)) if id == fields[0] => words.push(word),
            _ => {
                if let Some((id, words)) = current.take() {
                    dialogues.push(Dialogue::new(id, words)?);
                }
                current = Some((fields[0].to_string(), vec![word]));
            }
        }
    }
    if let Some((id, words)) = current {
        dialogues.push(Dialogue::new(id, words)?);
    }
    Ok(dialogues)
}

pub(crate) fn parse_seconds(field: &str, line_no: usize) -> Result<f64> {
    let value: f64 = field
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad time {field:?}")))?;
    check_time("time", value).map_err(|e| Error::parse(line_no, e.to_string()))?;
    Ok(value)
}
