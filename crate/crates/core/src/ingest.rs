//! Parsers for the two transcript families: time-marked words (CTM) and
//! punctuated utterance transcripts.

use std::fmt::Write as _;

use log::warn;

use crate::dialogue::{check_time, parse_seconds, PunctuationClass, Side};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimedToken {
    pub token: String,
    pub side: Side,
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctToken {
    pub token: String,
    pub label: PunctuationClass,
    pub side: Side,
}

/// Tokens of one conversation split by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T> Default for Channels<T> {
    fn default() -> Self {
        Channels {
            a: Vec::new(),
            b: Vec::new(),
        }
    }
}

impl<T> Channels<T> {
    pub fn get(&self, side: Side) -> &[T] {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn get_mut(&mut self, side: Side) -> &mut Vec<T> {
        match side {
            Side::A => &mut self.a,
            Side::B => &mut self.b,
        }
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A parsed CTM file.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmFile {
    /// Conversation id shared by every line; `None` for a file with no words.
    pub conversation: Option<String>,
    pub channels: Channels<TimedToken>,
}

/// Parses `<conv-id> <A|B> <start> <duration> <token>` lines. Each channel is
/// returned sorted by start (stable for equal starts).
pub fn parse_ctm(text: &str) -> Result<CtmFile> {
    let mut conversation: Option<String> = None;
    let mut channels = Channels::<TimedToken>::default();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                line_no,
                format!("expected `conv-id side start duration token`, found {} fields", fields.len()),
            ));
        }
        match &conversation {
            None => conversation = Some(fields[0].to_string()),
            Some(id) if id != fields[0] => {
                return Err(Error::Format(format!(
                    "line {line_no}: conversation {:?} differs from {id:?}",
                    fields[0]
                )))
            }
            Some(_) => {}
        }
        let side: Side = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
        let start = parse_time(fields[2], line_no)?;
        let duration = parse_time(fields[3], line_no)?;
        channels.get_mut(side).push(TimedToken {
            token: fields[4].to_string(),
            side,
            start,
            duration,
        });
    }
    channels.a.sort_by(|x, y| x.start.total_cmp(&y.start));
    channels.b.sort_by(|x, y| x.start.total_cmp(&y.start));
    Ok(CtmFile {
        conversation,
        channels,
    })
}

fn parse_time(field: &str, line_no: usize) -> Result<f64> {
    let value: f64 = field
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad time {field:?}")))?;
    check_time("time", value).map_err(|e| Error::Value(format!("line {line_no}: {e}")))?;
    Ok(value)
}

/// Canonical CTM text: channel A then channel B, times with three decimals.
pub fn write_ctm(file: &CtmFile) -> String {
    let mut out = String::new();
    let id = file.conversation.as_deref().unwrap_or("");
    for tok in file.channels.a.iter().chain(&file.channels.b) {
        writeln!(
            out,
            "{id} {} {:.3} {:.3} {}",
            tok.side, tok.start, tok.duration, tok.token
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses `<start> <end> <A|B>: <free text>` utterance lines into labelled
/// tokens per channel. Utterance times only order utterances within a channel.
pub fn parse_punct_transcript(text: &str) -> Result<Channels<PunctToken>> {
    struct Utterance<'a> {
        start: f64,
        side: Side,
        text: &'a str,
    }

    let mut utterances = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut rest = trimmed;
        let mut times = [0.0f64; 2];
        for slot in &mut times {
            let (field, tail) = split_first_field(rest)
                .ok_or_else(|| Error::parse(line_no, "expected `start end side: text`"))?;
            *slot = parse_seconds(field, line_no)?;
            rest = tail;
        }
        let (marker, tail) =
            split_first_field(rest).ok_or_else(|| Error::parse(line_no, "missing `A:` or `B:` marker"))?;
        let side = match marker {
            "A:" => Side::A,
            "B:" => Side::B,
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("expected `A:` or `B:`, found {other:?}"),
                ))
            }
        };
        if tail.trim().is_empty() {
            warn!("line {line_no}: empty utterance skipped");
            continue;
        }
        utterances.push(Utterance {
            start: times[0],
            side,
            text: tail,
        });
    }
    utterances.sort_by(|x, y| x.start.total_cmp(&y.start));

    let mut channels = Channels::<PunctToken>::default();
    for utt in utterances {
        for raw in utt.text.split_whitespace() {
            if let Some((token, label)) = extract_label(raw) {
                channels.get_mut(utt.side).push(PunctToken {
                    token,
                    label,
                    side: utt.side,
                });
            }
        }
    }
    Ok(channels)
}

fn split_first_field(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start();
    if s.is_empty() {
        return None;
    }
    match s.find(char::is_whitespace) {
        Some(end) => Some((&s[..end], &s[end..])),
        None => Some((s, "")),
    }
}

const TRAILING_MARKS: &[char] = &['.', ',', '?', '!', '-', ';', ':'];

/// Splits a raw punctuated token into its normalized text and the class of
/// the punctuation that follows it.
///
/// The class comes from the trailing run of punctuation: `...` is blank,
/// otherwise the last mark decides (`,` comma, `.` dot, `?` question, anything
/// else blank). The text is lowercased with the whole run removed. Returns
/// `None` for a token that is only punctuation.
pub fn extract_label(raw: &str) -> Option<(String, PunctuationClass)> {
    let clean = raw.trim_end_matches(TRAILING_MARKS);
    if clean.is_empty() {
        return None;
    }
    let marks = &raw[clean.len()..];
    let label = if marks.ends_with("...") {
        PunctuationClass::Blank
    } else {
        match marks.chars().last() {
            Some(',') => PunctuationClass::Comma,
            Some('.') => PunctuationClass::Dot,
            Some('?') => PunctuationClass::Question,
            _ => PunctuationClass::Blank,
        }
    };
    Some((clean.to_lowercase(), label))
}

/// Token normalization shared by both transcript families: lowercase with
/// trailing punctuation removed. Empty for punctuation-only tokens.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_end_matches(TRAILING_MARKS).to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PunctuationClass::*;

    fn pairs(tokens: &[PunctToken]) -> Vec<(&str, PunctuationClass)> {
        tokens.iter().map(|t| (t.token.as_str(), t.label)).collect()
    }

    #[test]
    fn ctm_single_line() {
        let file = parse_ctm("c1 A 0.00 0.31 hello\n").unwrap();
        assert_eq!(file.conversation.as_deref(), Some("c1"));
        assert_eq!(
            file.channels.a,
            vec![TimedToken {
                token: "hello".into(),
                side: Side::A,
                start: 0.0,
                duration: 0.31
            }]
        );
        assert!(file.channels.b.is_empty());
    }

    #[test]
    fn ctm_sorts_each_channel() {
        let file = parse_ctm("c1 A 1.00 0.2 second\n# note\nc1 A 0.50 0.2 first\nc1 B 0.70 0.1 other\n").unwrap();
        let a: Vec<_> = file.channels.a.iter().map(|t| t.token.as_str()).collect();
        assert_eq!(a, ["first", "second"]);
        assert_eq!(file.channels.b.len(), 1);
    }

    #[test]
    fn ctm_errors() {
        assert!(matches!(parse_ctm("c1 A 0.0 0.1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_ctm("c1 A 0.0 0.1 a\nc1 C 0.0 0.1 b\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_ctm("c1 A 0.0 0.1 a\nc2 A 0.2 0.1 b\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(parse_ctm("c1 A -0.5 0.1 a\n"), Err(Error::Value(_))));
        assert!(matches!(parse_ctm("c1 A 0.5 -0.1 a\n"), Err(Error::Value(_))));
        assert!(matches!(parse_ctm("c1 A x 0.1 a\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn canonical_ctm_round_trips() {
        let text = "c1 A 0.000 0.310 hello\nc1 A 0.500 0.200 there\nc1 B 0.250 0.100 hi\n";
        assert_eq!(write_ctm(&parse_ctm(text).unwrap()), text);
    }

    #[test]
    fn punct_repeated_okay() {
        let ch = parse_punct_transcript("0.0 2.1 A: Okay. Okay.\n").unwrap();
        assert_eq!(pairs(&ch.a), [("okay", Dot), ("okay", Dot)]);
        assert!(ch.b.is_empty());
    }

    #[test]
    fn punct_plain_text_is_blank() {
        let ch = parse_punct_transcript("3.0 4.0 B: do something about books\n").unwrap();
        assert_eq!(ch.b.len(), 4);
        assert!(ch.b.iter().all(|t| t.label == Blank && t.side == Side::B));
    }

    #[test]
    fn punct_keeps_bracketed_annotations() {
        let ch = parse_punct_transcript("5.0 6.0 A: west peterson is nice. [laughter]\n").unwrap();
        assert_eq!(
            pairs(&ch.a),
            [
                ("west", Blank),
                ("peterson", Blank),
                ("is", Blank),
                ("nice", Dot),
                ("[laughter]", Blank)
            ]
        );
    }

    #[test]
    fn punct_orders_utterances_per_channel() {
        let text = "# header\n\n4.0 5.0 A: later\n1.0 2.0 B: hi\n0.0 1.0 A: first,\n";
        let ch = parse_punct_transcript(text).unwrap();
        assert_eq!(pairs(&ch.a), [("first", Comma), ("later", Blank)]);
        assert_eq!(pairs(&ch.b), [("hi", Blank)]);
    }

    #[test]
    fn punct_errors_and_skips() {
        assert!(matches!(
            parse_punct_transcript("0.0 1.0 hello there\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_punct_transcript("0.0 1.0 C: x\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let ch = parse_punct_transcript("0.0 1.0 A:\n1.0 2.0 A:   \n2.0 3.0 B: ok\n").unwrap();
        assert!(ch.a.is_empty());
        assert_eq!(ch.b.len(), 1);
    }

    #[test]
    fn drops_punctuation_only_tokens() {
        let ch = parse_punct_transcript("0.0 1.0 A: well -- you know ...\n").unwrap();
        assert_eq!(pairs(&ch.a), [("well", Blank), ("you", Blank), ("know", Blank)]);
    }

    #[test]
    fn label_extraction_examples() {
        assert_eq!(extract_label("paterson."), Some(("paterson".into(), Dot)));
        assert_eq!(extract_label("Oh,"), Some(("oh".into(), Comma)));
        assert_eq!(extract_label("what--"), Some(("what".into(), Blank)));
        assert_eq!(extract_label("read?"), Some(("read".into(), Question)));
        assert_eq!(extract_label("so..."), Some(("so".into(), Blank)));
        assert_eq!(extract_label("wow!"), Some(("wow".into(), Blank)));
        assert_eq!(extract_label("don't"), Some(("don't".into(), Blank)));
        assert_eq!(extract_label("twenty-two,"), Some(("twenty-two".into(), Comma)));
        assert_eq!(extract_label("I"), Some(("i".into(), Blank)));
        assert_eq!(extract_label("..."), None);
        assert_eq!(extract_label("--"), None);
    }

    proptest! {
        #[test]
        fn clean_token_has_no_trailing_label_marks(raw in "[a-zA-Z'.,?!-]{1,12}") {
            if let Some((clean, _)) = extract_label(&raw) {
                prop_assert!(!clean.is_empty());
                let last = clean.chars().last().unwrap();
                prop_assert!(!['.', ',', '?', '!'].contains(&last));
            }
        }

        #[test]
        fn token_count_excludes_punctuation_only(words in prop::collection::vec("[a-z]{1,5}[.,?!]?|[.,?!-]{1,3}", 1..20)) {
            let line = format!("0.0 1.0 A: {}\n", words.join(" "));
            let ch = parse_punct_transcript(&line).unwrap();
            let punct_only = words.iter().filter(|w| extract_label(w).is_none()).count();
            prop_assert_eq!(ch.a.len(), words.len() - punct_only);
        }

        #[test]
        fn canonical_ctm_reserializes_identically(
            rows in prop::collection::vec((any::<bool>(), 0u32..100_000, 0u32..5_000, "[a-z']{1,8}"), 1..30)
        ) {
            let mut tokens: Vec<_> = rows
                .into_iter()
                .map(|(b, s, d, t)| (if b { Side::B } else { Side::A }, s, d, t))
                .collect();
            tokens.sort_by_key(|(side, s, _, _)| (*side, *s));
            let text: String = tokens
                .iter()
                .map(|(side, s, d, t)| format!("conv {side} {:.3} {:.3} {t}\n", *s as f64 / 1000.0, *d as f64 / 1000.0))
                .collect();
            prop_assert_eq!(write_ctm(&parse_ctm(&text).unwrap()), text);
        }
    }
}
