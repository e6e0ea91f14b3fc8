//! Per-class scores, confusion matrices and punctuated rendering.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::{Dialogue, PunctuationClass, Side};

const K: usize = PunctuationClass::COUNT;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; K]; K] {
        let mut out = [[0.0; K]; K];
        for (dst, row) in out.iter_mut().zip(&self.counts) {
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for (d, &c) in dst.iter_mut().zip(row) {
                    *d = c as f64 / sum as f64;
                }
            }
        }
        out
    }

    /// Tab-separated normalized matrix with class symbols as headers.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in PunctuationClass::ALL {
            let _ = write!(out, "\t{}", c.symbol());
        }
        out.push('\n');
        for (c, row) in PunctuationClass::ALL.iter().zip(self.normalized()) {
            out.push(c.symbol());
            for v in row {
                let _ = write!(out, "\t{v:.3}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScore {
    /// Percentages.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true occurrences.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub classes: [ClassScore; K],
}

impl ClassScores {
    pub fn get(&self, class: PunctuationClass) -> ClassScore {
        self.classes[class.index()]
    }

    /// Unweighted mean F1 (percent) over `classes`.
    pub fn macro_f1(&self, classes: &[PunctuationClass]) -> f64 {
        if classes.is_empty() {
            return 0.0;
        }
        classes.iter().map(|&c| self.get(c).f1).sum::<f64>() / classes.len() as f64
    }
}

/// One-decimal rounding used in reports.
pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

impl fmt::Display for ClassScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class\tprecision\trecall\tf1\tsupport")?;
        for c in PunctuationClass::ALL {
            let s = self.get(c);
            writeln!(f, "{}\t{:.1}\t{:.1}\t{:.1}\t{}", c.name(), s.precision, s.recall, s.f1, s.support)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: ClassScores,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let total = self.confusion.total();
        if total == 0 {
            0.0
        } else {
            self.confusion.correct() as f64 / total as f64
        }
    }

    /// Recall computed from pooled counts over all classes.
    pub fn micro_recall(&self) -> f64 {
        let tp = self.confusion.correct();
        let fn_: u64 = (0..K)
            .map(|i| (0..K).filter(|&j| j != i).map(|j| self.confusion.counts[i][j]).sum::<u64>())
            .sum();
        ratio(tp, tp + fn_)
    }

    /// Pooled precision and recall (fractions) over a group of classes,
    /// treating the group as one positive label set.
    pub fn group_precision_recall(&self, classes: &[PunctuationClass]) -> (f64, f64) {
        let idx: Vec<usize> = classes.iter().map(|c| c.index()).collect();
        let m = &self.confusion.counts;
        let tp: u64 = idx.iter().map(|&i| m[i][i]).sum();
        let predicted: u64 = idx.iter().map(|&j| (0..K).map(|i| m[i][j]).sum::<u64>()).sum();
        let actual: u64 = idx.iter().map(|&i| m[i].iter().sum::<u64>()).sum();
        (ratio(tp, predicted), ratio(tp, actual))
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Precision, recall and F1 per class; 0/0 is taken as 0.
pub fn score(truth: &[PunctuationClass], predicted: &[PunctuationClass]) -> Result<Evaluation> {
    if truth.len() != predicted.len() {
        return Err(Error::Value(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut confusion = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        confusion.counts[t.index()][p.index()] += 1;
    }
    let mut classes = [ClassScore::default(); K];
    for (c, score) in classes.iter_mut().enumerate() {
        let tp = confusion.counts[c][c];
        let predicted: u64 = (0..K).map(|r| confusion.counts[r][c]).sum();
        let support: u64 = confusion.counts[c].iter().sum();
        let p = 100.0 * ratio(tp, predicted);
        let r = 100.0 * ratio(tp, support);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        *score = ClassScore {
            precision: p,
            recall: r,
            f1,
            support,
        };
    }
    Ok(Evaluation {
        scores: ClassScores { classes },
        confusion,
    })
}

/// Per-channel text of a dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RenderedText {
    pub a: String,
    pub b: String,
}

impl RenderedText {
    pub fn get(&self, side: Side) -> &str {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }
}

fn is_annotation(token: &str) -> bool {
    token.starts_with('[') && token.ends_with(']')
}

fn capitalize(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Renders each channel as text with predicted punctuation. A channel's
/// first word and any word after a Dot are capitalized; commas and question
/// marks never trigger a capital. Bracketed annotations such as
/// `[laughter]` are left alone and do not use up a pending capital.
pub fn render_punctuated(dialogue: &Dialogue, labels: &[PunctuationClass]) -> Result<RenderedText> {
    if labels.len() != dialogue.len() {
        return Err(Error::Value(format!(
            "{} labels for {} words",
            labels.len(),
            dialogue.len()
        )));
    }
    let mut out = RenderedText::default();
    let mut pending = [true, true];
    for (word, &label) in dialogue.words().iter().zip(labels) {
        let side = word.side.index();
        let text = match word.side {
            Side::A => &mut out.a,
            Side::B => &mut out.b,
        };
        if !text.is_empty() {
            text.push(' ');
        }
        if is_annotation(&word.text) {
            text.push_str(&word.text);
        } else if pending[side] {
            text.push_str(&capitalize(&word.text));
            pending[side] = false;
        } else {
            text.push_str(&word.text);
        }
        if label != PunctuationClass::Blank {
            text.push(label.symbol());
        }
        if label == PunctuationClass::Dot {
            pending[side] = true;
        }
    }
    Ok(out)
}
