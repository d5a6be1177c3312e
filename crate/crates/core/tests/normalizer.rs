mod common;

use std::collections::BTreeMap;

use adfuse::chat::{corpus_stats, normalize_utterance, normalize_utterance_detailed, parse_transcript, Speaker};
use proptest::prelude::*;

#[test]
fn hand_annotated_corpus() {
    for (raw, want) in common::CORPUS {
        let got = normalize_utterance(raw).unwrap_or_else(|e| panic!("{raw:?}: {e}"));
        assert_eq!(got, *want, "{raw:?}");
    }
}

#[test]
fn unbalanced_annotations_are_rejected() {
    for raw in ["the [/ boy .", "the boy] .", "<the boy [/] .", "the> boy .", "(be(cause ."] {
        assert!(normalize_utterance(raw).is_err(), "{raw:?}");
    }
}

#[test]
fn unrecognized_codes_are_counted() {
    let n = normalize_utterance_detailed("the boy$n is =! falling .").unwrap();
    assert_eq!(n.tokens, ["the", "is", "falling"]);
    assert_eq!(n.unknown_codes, 2);
}

#[test]
fn transcript_tiers() {
    let text = "@UTF8\n@Begin\n*INV:\twhat do you see ?\n*PAR:\tthe boy <is> [/] is\n\tfalling .\n%mor:\tdet|the\n*PAR:\txxx .\n@End\n";
    let t = parse_transcript(text, "S7").unwrap();
    assert_eq!(t.utterances.len(), 3);
    assert_eq!(t.utterances[0].speaker, Speaker::Investigator);
    assert_eq!(t.utterances[1].tokens, ["the", "boy", "is", "is", "falling"]);
    // An utterance with nothing left is kept but is not a sentence.
    assert!(t.utterances[2].tokens.is_empty());
    assert_eq!(t.participant_sentences().count(), 1);

    let err = parse_transcript("@Begin\n*PAR:\tfine .\nPAR the boy\n", "S7").unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn partition_totals_add_up() {
    let a = parse_transcript("*PAR:\tthe boy falls .\n*INV:\tokay .", "a").unwrap();
    let b = parse_transcript("*PAR:\tthe girl &uh laughs .", "b").unwrap();
    let c = parse_transcript("*PAR:\tboy [/] boy .", "c").unwrap();
    let parts: BTreeMap<String, String> = [("a", "train-AD"), ("b", "train-control"), ("c", "test")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let stats = corpus_stats(&[a.clone(), b.clone(), c.clone()], &parts).unwrap();
    assert_eq!(stats.total_words, 8);
    assert_eq!(stats.unique_words, 5);
    assert_eq!(stats.per_partition.values().map(|p| p.total).sum::<usize>(), stats.total_words);
    assert!(stats.unique_words <= stats.total_words);

    let reordered = corpus_stats(&[c, a, b], &parts).unwrap();
    assert_eq!(reordered, stats);
}

const PIECES: &[&str] = &[
    "the", "Boy", "cookie", "jar", "she's", "mm-hmm", "&uh", "&-um", "&+fr", "&=laughs", "[/]", "[//]", "[+ exc]",
    "[: took]", "[*]", "<the boy>", "<is &uh>", "(.)", "(..)", "(...)", "(2.5)", "(be)cause", "runnin(g)", "gaga@c",
    "word@s:spa", "xxx", "YYY", "www.", "0is", "cookie_jar", "ice+cream", ".", "?", "!", "+...", "+/.", "+<", ",",
    "\u{15}100_200\u{15}", "'cause", "ÉCOLE", "naïve",
];

fn utterances() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(PIECES), 0..14).prop_map(|v| v.join(" "))
}

proptest! {
    #[test]
    fn output_is_a_fixed_point(raw in utterances()) {
        let tokens = normalize_utterance(&raw).unwrap();
        prop_assert_eq!(normalize_utterance(&tokens.join(" ")).unwrap(), tokens);
    }

    #[test]
    fn tokens_carry_no_annotation(raw in utterances()) {
        for tok in normalize_utterance(&raw).unwrap() {
            prop_assert!(!tok.is_empty());
            prop_assert!(!tok.contains(|c: char| "[]<>&@()+_".contains(c) || c.is_whitespace()), "{}", tok);
            prop_assert_eq!(tok.to_lowercase(), tok.clone());
        }
    }

    #[test]
    fn arbitrary_text_never_panics(raw in "\\PC{0,60}") {
        if let Ok(tokens) = normalize_utterance(&raw) {
            prop_assert_eq!(normalize_utterance(&tokens.join(" ")).unwrap(), tokens);
        }
    }
}
