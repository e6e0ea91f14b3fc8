//! Needleman-Wunsch global alignment of the timed and punctuated token
//! streams, label transfer, and channel merging.

use crate::dialogue::{check_time, Dialogue, Side, Word};
use crate::error::{Error, Result};
use crate::ingest::{normalize_token, Channels, PunctToken, TimedToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringScheme {
    pub match_score: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for ScoringScheme {
    fn default() -> Self {
        ScoringScheme {
            match_score: 1,
            mismatch: -1,
            gap: -1,
        }
    }
}

impl ScoringScheme {
    pub fn new(match_score: i64, mismatch: i64, gap: i64) -> Result<Self> {
        if match_score <= mismatch || match_score <= gap {
            return Err(Error::Config(format!(
                "match score {match_score} must exceed mismatch {mismatch} and gap {gap}"
            )));
        }
        Ok(ScoringScheme {
            match_score,
            mismatch,
            gap,
        })
    }
}

/// Aligned pair of positions; `None` is a gap on that side.
pub type AlignedPair = (Option<usize>, Option<usize>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentResult {
    pub pairs: Vec<AlignedPair>,
    pub score: i64,
}

impl AlignmentResult {
    pub fn gaps(&self) -> usize {
        self.pairs
            .iter()
            .filter(|(l, r)| l.is_none() || r.is_none())
            .count()
    }
}

/// Optimal global alignment of `left` against `right`.
///
/// Traceback prefers a diagonal step, then a gap in `right` (consume `left`),
/// then a gap in `left`.
pub fn nw_align<T: PartialEq>(left: &[T], right: &[T], scheme: ScoringScheme) -> AlignmentResult {
    let (n, m) = (left.len(), right.len());
    let width = m + 1;
    let mut score = vec![0i64; (n + 1) * width];
    for j in 1..=m {
        score[j] = scheme.gap * j as i64;
    }
    for i in 1..=n {
        score[i * width] = scheme.gap * i as i64;
        for j in 1..=m {
            let sub = if left[i - 1] == right[j - 1] {
                scheme.match_score
            } else {
                scheme.mismatch
            };
            let diag = score[(i - 1) * width + j - 1] + sub;
            let up = score[(i - 1) * width + j] + scheme.gap;
            let side = score[i * width + j - 1] + scheme.gap;
            score[i * width + j] = diag.max(up).max(side);
        }
    }

    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = score[i * width + j];
        if i > 0 && j > 0 {
            let sub = if left[i - 1] == right[j - 1] {
                scheme.match_score
            } else {
                scheme.mismatch
            };
            if score[(i - 1) * width + j - 1] + sub == here {
                pairs.push((Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && score[(i - 1) * width + j] + scheme.gap == here {
            pairs.push((Some(i - 1), None));
            i -= 1;
        } else {
            pairs.push((None, Some(j - 1)));
            j -= 1;
        }
    }
    pairs.reverse();
    AlignmentResult {
        pairs,
        score: score[n * width + m],
    }
}

/// Counts of words kept and dropped while merging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub kept: usize,
    pub dropped_timed: usize,
    pub dropped_punct: usize,
}

impl std::ops::AddAssign for MergeStats {
    fn add_assign(&mut self, other: Self) {
        self.kept += other.kept;
        self.dropped_timed += other.dropped_timed;
        self.dropped_punct += other.dropped_punct;
    }
}

impl std::fmt::Display for MergeStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "kept={} dropped_timed={} dropped_punct={}",
            self.kept, self.dropped_timed, self.dropped_punct
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignConfig {
    pub scheme: ScoringScheme,
    /// Largest score matrix (`|timed| * |punct|` cells) merge will build.
    pub max_cells: u128,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            scheme: ScoringScheme::default(),
            max_cells: 100_000_000,
        }
    }
}

/// Transfers labels from the punctuated channel onto the timed channel.
///
/// Only aligned pairs whose normalized tokens are equal produce a word; gaps
/// and aligned-but-different pairs are dropped. Output follows timed order.
pub fn merge_channel(
    timed: &[TimedToken],
    punct: &[PunctToken],
    config: &AlignConfig,
) -> Result<(Vec<Word>, MergeStats)> {
    let cells = timed.len() as u128 * punct.len() as u128;
    if cells > config.max_cells {
        return Err(Error::AlignmentTooLarge {
            cells,
            budget: config.max_cells,
        });
    }
    let left: Vec<String> = timed.iter().map(|t| normalize_token(&t.token)).collect();
    let right: Vec<&str> = punct.iter().map(|t| t.token.as_str()).collect();
    let left_refs: Vec<&str> = left.iter().map(String::as_str).collect();
    let alignment = nw_align(&left_refs, &right, config.scheme);

    let mut words = Vec::new();
    for pair in alignment.pairs {
        if let (Some(i), Some(j)) = pair {
            if !left[i].is_empty() && left[i] == right[j] {
                let t = &timed[i];
                words.push(Word::new(
                    left[i].clone(),
                    t.side,
                    t.start,
                    t.duration,
                    Some(punct[j].label),
                )?);
            }
        }
    }
    let stats = MergeStats {
        kept: words.len(),
        dropped_timed: timed.len() - words.len(),
        dropped_punct: punct.len() - words.len(),
    };
    Ok((words, stats))
}

/// Concatenates both channels and orders them by start time.
pub fn build_dialogue(id: &str, channel_a: Vec<Word>, channel_b: Vec<Word>) -> Result<Dialogue> {
    for word in channel_a.iter().chain(&channel_b) {
        check_time("start", word.start)?;
        check_time("duration", word.duration)?;
    }
    let mut words = channel_a;
    words.extend(channel_b);
    Dialogue::from_unsorted(id, words)
}

/// Aligns both channels of one conversation and builds its dialogue.
pub fn align_conversation(
    id: &str,
    timed: &Channels<TimedToken>,
    punct: &Channels<PunctToken>,
    config: &AlignConfig,
) -> Result<(Dialogue, MergeStats)> {
    let (a, mut stats) = merge_channel(timed.get(Side::A), punct.get(Side::A), config)?;
    let (b, stats_b) = merge_channel(timed.get(Side::B), punct.get(Side::B), config)?;
    stats += stats_b;
    Ok((build_dialogue(id, a, b)?, stats))
}
