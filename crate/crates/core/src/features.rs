//! Per-word model inputs: a 300-d word embedding, the conversation side, and
//! two speaker-standardized timing features.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use log::warn;
use ndarray::Array2;
use rand::Rng;

use crate::dialogue::{Dialogue, Side};
use crate::error::{Error, Result};
use crate::nn::noise::add_gaussian_noise;

pub const EMBED_DIM: usize = 300;
pub const SIDE_COLUMN: usize = 300;
pub const INTERVAL_COLUMN: usize = 301;
pub const DURATION_COLUMN: usize = 302;
pub const INPUT_DIM: usize = 303;
pub const DEFAULT_VOCAB_CAP: usize = 50_000;

/// Fixed word vectors for a pruned vocabulary. Tokens outside the vocabulary
/// map to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Vec<f32>,
}

impl EmbeddingTable {
    pub fn empty() -> Self {
        EmbeddingTable {
            vocab: HashMap::new(),
            tokens: Vec::new(),
            matrix: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// Vocabulary in row order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.matrix[index * EMBED_DIM..(index + 1) * EMBED_DIM]
    }

    /// The token's vector, or `None` when it is out of vocabulary.
    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index(token).map(|i| self.row(i))
    }

    /// Writes the table in the same text format it is loaded from.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, token) in self.tokens.iter().enumerate() {
            write!(out, "{token}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Tokens ordered by descending corpus frequency, ties broken alphabetically.
pub fn frequency_ranking<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in dialogues {
        for w in d.words() {
            *counts.entry(w.text.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().map(|(t, _)| t.to_string()).collect()
}

/// Loads `token v1 .. v300` lines, keeping the `cap` best-ranked tokens of
/// `ranking` that have a vector in the file.
pub fn load_embeddings<R: BufRead>(reader: R, ranking: &[String], cap: usize) -> Result<EmbeddingTable> {
    let rank: HashMap<&str, usize> = ranking
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut found: HashMap<usize, Vec<f32>> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != EMBED_DIM {
            return Err(Error::parse(
                line_no,
                format!("token {token:?} has {} values, expected {EMBED_DIM}", values.len()),
            ));
        }
        let Some(&r) = rank.get(token) else {
            continue;
        };
        let vector = values
            .iter()
            .map(|v| {
                v.parse::<f32>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(line_no, format!("bad value {v:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        if found.insert(r, vector).is_some() {
            warn!("line {line_no}: duplicate embedding for {token:?}, keeping the later one");
        }
    }

    let mut table = EmbeddingTable::empty();
    for (r, token) in ranking.iter().enumerate() {
        if table.len() == cap {
            break;
        }
        if table.contains(token) {
            continue;
        }
        if let Some(vector) = found.remove(&r) {
            table.vocab.insert(token.clone(), table.tokens.len());
            table.tokens.push(token.clone());
            table.matrix.extend_from_slice(&vector);
        }
    }
    Ok(table)
}

pub fn load_embeddings_str(text: &str, ranking: &[String], cap: usize) -> Result<EmbeddingTable> {
    load_embeddings(text.as_bytes(), ranking, cap)
}

/// Which earlier word the start interval is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalMode {
    /// Previous word of the same speaker.
    #[default]
    PerSpeaker,
    /// Previous word in dialogue order, whoever said it.
    Global,
}

/// Raw `(interval, duration)` per word. The first word of each chain gets
/// interval 0.
pub fn time_features(dialogue: &Dialogue, mode: IntervalMode) -> Vec<(f64, f64)> {
    let mut last_start: [Option<f64>; 2] = [None, None];
    let mut last_global: Option<f64> = None;
    dialogue
        .words()
        .iter()
        .map(|w| {
            let prev = match mode {
                IntervalMode::PerSpeaker => &mut last_start[w.side.index()],
                IntervalMode::Global => &mut last_global,
            };
            let interval = prev.map_or(0.0, |p| w.start - p);
            *prev = Some(w.start);
            (interval, w.duration)
        })
        .collect()
}

/// Z-scores each column within each speaker using the population standard
/// deviation. A speaker with one word, or a column with no spread, maps to 0.
pub fn standardize_per_speaker(raw: &[(f64, f64)], dialogue: &Dialogue) -> Vec<(f64, f64)> {
    assert_eq!(raw.len(), dialogue.len(), "raw features must align with words");
    let mut out = vec![(0.0, 0.0); raw.len()];
    for side in [Side::A, Side::B] {
        let idx: Vec<usize> = dialogue
            .words()
            .iter()
            .enumerate()
            .filter(|(_, w)| w.side == side)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let intervals: Vec<f64> = idx.iter().map(|&i| raw[i].0).collect();
        let durations: Vec<f64> = idx.iter().map(|&i| raw[i].1).collect();
        let zi = zscore(&intervals);
        let zd = zscore(&durations);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = (zi[k], zd[k]);
        }
    }
    out
}

fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // Rounding noise on a constant column must not blow up into +-1 scores.
    if var <= 1e-12 * mean.abs().max(1.0).powi(2) {
        return vec![0.0; values.len()];
    }
    let std = var.sqrt();
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub use_time: bool,
    pub interval: IntervalMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            use_time: true,
            interval: IntervalMode::PerSpeaker,
        }
    }
}

/// `T x 303` input rows with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Array2<f32>,
    pub mask: Vec<bool>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

pub fn featurize(dialogue: &Dialogue, table: &EmbeddingTable, config: FeatureConfig) -> FeatureMatrix {
    let n = dialogue.len();
    let mut rows = Array2::<f32>::zeros((n, INPUT_DIM));
    for (i, word) in dialogue.words().iter().enumerate() {
        let mut row = rows.row_mut(i);
        if let Some(vector) = table.get(&word.text) {
            for (dst, &v) in row.iter_mut().zip(vector) {
                *dst = v;
            }
        }
        row[SIDE_COLUMN] = word.side.feature();
    }
    if config.use_time {
        let raw = time_features(dialogue, config.interval);
        for (i, (interval, duration)) in standardize_per_speaker(&raw, dialogue).into_iter().enumerate() {
            rows[[i, INTERVAL_COLUMN]] = interval as f32;
            rows[[i, DURATION_COLUMN]] = duration as f32;
        }
    }
    FeatureMatrix {
        rows,
        mask: vec![true; n],
    }
}

/// Adds `N(0, sigma^2)` to the embedding and timing columns, leaving the side
/// column untouched.
pub fn add_noise<R: Rng + ?Sized>(matrix: &FeatureMatrix, sigma: f64, rng: &mut R) -> Result<FeatureMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Value(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    let mut out = matrix.clone();
    add_gaussian_noise(&mut out.rows.view_mut(), sigma, rng, Some(SIDE_COLUMN));
    Ok(out)
}
