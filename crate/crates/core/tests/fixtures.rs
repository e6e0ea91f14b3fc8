//! End-to-end checks of ingest, alignment and rendering against the bundled
//! conversation fixtures and their hand-checked golden outputs.

use std::path::PathBuf;

use dialpunct::align::{align_conversation, AlignConfig, MergeStats};
use dialpunct::dialogue::{class_histogram, dialogues_to_string, read_dialogues};
use dialpunct::eval::render_punctuated;
use dialpunct::ingest::{parse_ctm, parse_punct_transcript};
use dialpunct::{Dialogue, Side};

const FIXTURES: [&str; 3] = ["fx_sample", "fx_short", "fx_mismatch"];

fn fixture(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", name].iter().collect();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn align(name: &str) -> (Dialogue, MergeStats) {
    let ctm = parse_ctm(&fixture(&format!("{name}.ctm"))).unwrap();
    let punct = parse_punct_transcript(&fixture(&format!("{name}.txo"))).unwrap();
    let id = ctm.conversation.clone().unwrap();
    assert_eq!(id, name);
    align_conversation(&id, &ctm.channels, &punct, &AlignConfig::default()).unwrap()
}

#[test]
fn aligned_dialogues_match_golden_bytes() {
    let dialogues: Vec<Dialogue> = FIXTURES.iter().map(|n| align(n).0).collect();
    let text = dialogues_to_string(&dialogues);
    assert_eq!(text, fixture("golden_dialogues.tsv"));
    // And the written form reads back to the same dialogues.
    assert_eq!(read_dialogues(&text).unwrap(), dialogues);
}

#[test]
fn merge_stats_match_golden() {
    let golden = fixture("golden_stats.txt");
    let lines: Vec<String> = FIXTURES
        .iter()
        .map(|n| format!("{n}\t{}", align(n).1))
        .collect();
    assert_eq!(lines, golden.lines().collect::<Vec<_>>());
}

#[test]
fn class_histogram_matches_golden() {
    let dialogues: Vec<Dialogue> = FIXTURES.iter().map(|n| align(n).0).collect();
    let hist = class_histogram(&dialogues).unwrap();
    let golden: Vec<(String, u64)> = fixture("golden_histogram.txt")
        .lines()
        .map(|l| {
            let (name, n) = l.split_once('\t').unwrap();
            (name.to_string(), n.parse().unwrap())
        })
        .collect();
    let ours: Vec<(String, u64)> = dialpunct::PunctuationClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), hist.count(*c)))
        .collect();
    assert_eq!(ours, golden);
}

#[test]
fn rendering_the_gold_labels_matches_golden_text() {
    let (dialogue, _) = align("fx_sample");
    let rendered = render_punctuated(&dialogue, &dialogue.labels().unwrap()).unwrap();
    let golden = fixture("golden_render_fx_sample.txt");
    let mut lines = golden.lines();
    assert_eq!(lines.next().unwrap(), format!("A\t{}", rendered.get(Side::A)));
    assert_eq!(lines.next().unwrap(), format!("B\t{}", rendered.get(Side::B)));
    assert!(lines.next().is_none());
}

#[test]
fn short_ctm_has_expected_channel_sizes() {
    let ctm = parse_ctm(&fixture("fx_short.ctm")).unwrap();
    assert_eq!(ctm.channels.get(Side::A).len(), 9);
    assert_eq!(ctm.channels.get(Side::B).len(), 5);
    assert!(ctm.channels.a.windows(2).all(|w| w[0].start <= w[1].start));
}

#[test]
fn unlabelled_copy_keeps_timing() {
    let (dialogue, _) = align("fx_mismatch");
    let bare = dialogue.without_labels();
    assert!(!bare.is_labelled());
    assert_eq!(bare.len(), dialogue.len());
    let text = dialogues_to_string(std::slice::from_ref(&bare));
    assert!(text.lines().all(|l| l.split('\t').count() == 5));
    assert_eq!(read_dialogues(&text).unwrap(), vec![bare]);
}
