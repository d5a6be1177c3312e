//! CHAT transcript parsing and reduction to plain word tokens.
//!
//! Only the tiers needed downstream are kept: main speaker tiers (`*PAR:`,
//! `*INV:`, ...) become [`Utterance`]s, while headers (`@`) and dependent
//! tiers (`%mor`, `%gra`, ...) are dropped. Each utterance body is reduced to
//! lowercase word tokens by [`normalize_utterance`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speaker role taken from the main-tier marker.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Speaker {
    Participant,
    Investigator,
    /// Any other well-formed marker, kept verbatim (e.g. `OTH`).
    Other(String),
}

impl Speaker {
    fn from_code(code: &str) -> Self {
        match code {
            "PAR" => Speaker::Participant,
            "INV" => Speaker::Investigator,
            other => Speaker::Other(other.to_string()),
        }
    }
}

impl From<Speaker> for String {
    fn from(s: Speaker) -> String {
        match s {
            Speaker::Participant => "participant".into(),
            Speaker::Investigator => "investigator".into(),
            Speaker::Other(code) => code,
        }
    }
}

impl From<String> for Speaker {
    fn from(s: String) -> Self {
        match s.as_str() {
            "participant" => Speaker::Participant,
            "investigator" => Speaker::Investigator,
            _ => Speaker::Other(s),
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from(self.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub raw: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub subject_id: String,
    pub utterances: Vec<Utterance>,
}

impl Transcript {
    /// Token lists of the participant's utterances that survived
    /// normalization with at least one word, in source order.
    ///
    /// These are the sentences an extractor must emit tensors for.
    pub fn participant_sentences(&self) -> impl Iterator<Item = &[String]> {
        self.utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Participant && !u.tokens.is_empty())
            .map(|u| u.tokens.as_slice())
    }

    pub fn participant_tokens(&self) -> impl Iterator<Item = &str> {
        self.participant_sentences().flatten().map(String::as_str)
    }
}

/// A parsed transcript together with the number of unrecognized annotation
/// codes that were dropped while normalizing it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub transcript: Transcript,
    pub unknown_codes: usize,
}

pub fn parse_transcript(raw_text: &str, subject_id: &str) -> Result<Transcript> {
    parse_transcript_detailed(raw_text, subject_id).map(|p| p.transcript)
}

pub fn parse_transcript_detailed(raw_text: &str, subject_id: &str) -> Result<Parsed> {
    if subject_id.is_empty() {
        return Err(Error::Invalid("subject id must be non-empty".into()));
    }
    if raw_text.trim().is_empty() {
        return Err(Error::EmptyInput);
    }

    // (line number, speaker, body) of each main tier, continuation lines joined.
    let mut tiers: Vec<(usize, Speaker, String)> = Vec::new();
    let mut in_main_tier = false;
    let mut seen_tier = false;

    for (idx, line) in raw_text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('*') {
            let (code, body) = split_marker(rest).ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("malformed speaker marker in {line:?}"),
            })?;
            tiers.push((lineno, Speaker::from_code(code), body.trim().to_string()));
            in_main_tier = true;
            seen_tier = true;
        } else if line.starts_with('%') || line.starts_with('@') {
            in_main_tier = false;
            seen_tier = true;
        } else if line.starts_with(['\t', ' ']) && seen_tier {
            if in_main_tier {
                let body = &mut tiers.last_mut().expect("main tier open").2;
                body.push(' ');
                body.push_str(line.trim());
            }
        } else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("line is not a header, speaker tier or dependent tier: {line:?}"),
            });
        }
    }

    let mut unknown_codes = 0;
    let mut utterances = Vec::with_capacity(tiers.len());
    for (line, speaker, raw) in tiers {
        let norm = normalize_utterance_detailed(&raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        unknown_codes += norm.unknown_codes;
        utterances.push(Utterance {
            speaker,
            raw,
            tokens: norm.tokens,
        });
    }
    if unknown_codes > 0 {
        log::warn!("{subject_id}: dropped {unknown_codes} unrecognized annotation code(s)");
    }

    Ok(Parsed {
        transcript: Transcript {
            subject_id: subject_id.to_string(),
            utterances,
        },
        unknown_codes,
    })
}

/// Splits `PAR:\tbody` into the speaker code and the body.
fn split_marker(rest: &str) -> Option<(&str, &str)> {
    let (code, body) = rest.split_once(':')?;
    let well_formed = !code.is_empty()
        && code
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit());
    let separated = body.is_empty() || body.starts_with(['\t', ' ']);
    (well_formed && separated).then_some((code, body))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Normalized {
    pub tokens: Vec<String>,
    pub unknown_codes: usize,
}

pub fn normalize_utterance(raw: &str) -> Result<Vec<String>> {
    normalize_utterance_detailed(raw).map(|n| n.tokens)
}

/// Characters that only occur inside annotation codes. A token carrying one
/// of them after the known rules have run is an unrecognized code.
const CODE_MARKERS: &[char] = &['$', '=', '*', '#', '%', '^', '~', '|', '{', '}', '\\', '/'];

const UNINTELLIGIBLE: &[&str] = &["xxx", "yyy", "www"];

/// Reduces one tier body to word tokens. The stripping passes run in a fixed
/// order: bracketed codes, fillers and fragments, retrace unwrapping,
/// parenthesized letters and pauses, `@` form markers, unintelligible
/// placeholders, punctuation, then lowercasing.
pub fn normalize_utterance_detailed(raw: &str) -> Result<Normalized> {
    let fail = |message: &str| Error::Normalize {
        utterance: raw.to_string(),
        message: message.to_string(),
    };

    let text = strip_bullets(raw);

    // Square-bracketed codes: [/], [//], [+ exc], [: word], [*], ...
    let text = strip_delimited(&text, '[', ']').map_err(|m| fail(&m))?;

    // Fillers and fragments. A leading `<` may precede the `&` and is kept so
    // the angle brackets stay balanced. Utterance linkers and terminators
    // (+<, +..., +/.) go here too since some of them contain `<`.
    let text = text
        .split_whitespace()
        .filter(|tok| !tok.starts_with('+'))
        .map(|tok| {
            let opening = tok.len() - tok.trim_start_matches('<').len();
            if tok[opening..].starts_with('&') {
                let closing = tok.len() - tok.trim_end_matches('>').len();
                format!("{}{}", &tok[..opening], &tok[tok.len() - closing..])
            } else {
                tok.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ");

    // Retraces: keep the words, drop the brackets.
    check_balanced(&text, '<', '>').map_err(|m| fail(&m))?;
    let text: String = text.chars().filter(|c| !matches!(c, '<' | '>')).collect();

    let mut out = Normalized::default();
    for tok in text.split_whitespace() {
        // Pauses: (.), (..), (...), and timed ones such as (1.5).
        if is_pause(tok) {
            continue;
        }
        check_balanced(tok, '(', ')').map_err(|m| fail(&m))?;
        let tok: String = tok.chars().filter(|c| !matches!(c, '(' | ')')).collect();

        let tok = match tok.find('@') {
            Some(at) => &tok[..at],
            None => tok.as_str(),
        };

        let bare = tok.trim_end_matches(|c: char| !c.is_alphanumeric());
        if UNINTELLIGIBLE.iter().any(|u| bare.eq_ignore_ascii_case(u)) {
            continue;
        }

        // Omitted words (0is).
        if is_omitted_word(tok) {
            continue;
        }
        if tok.contains(CODE_MARKERS) {
            out.unknown_codes += 1;
            continue;
        }

        // Compound joiners separate words.
        for part in tok.split(['+', '_']) {
            if let Some(word) = clean_word(part) {
                out.tokens.push(word);
            }
        }
    }
    Ok(out)
}

/// Timing bullets are delimited by U+0015.
fn strip_bullets(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for (i, seg) in raw.split('\u{15}').enumerate() {
        if i % 2 == 0 {
            out.push_str(seg);
        } else {
            out.push(' ');
        }
    }
    out
}

fn strip_delimited(text: &str, open: char, close: char) -> std::result::Result<String, String> {
    check_balanced(text, open, close)?;
    let mut depth = 0usize;
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == open {
            depth += 1;
            if depth == 1 {
                out.push(' ');
            }
        } else if c == close {
            depth -= 1;
        } else if depth == 0 {
            out.push(c);
        }
    }
    Ok(out)
}

fn check_balanced(text: &str, open: char, close: char) -> std::result::Result<(), String> {
    let mut depth = 0usize;
    for c in text.chars() {
        if c == open {
            depth += 1;
        } else if c == close {
            depth = depth
                .checked_sub(1)
                .ok_or_else(|| format!("unbalanced '{close}' without matching '{open}'"))?;
        }
    }
    if depth > 0 {
        return Err(format!("unbalanced '{open}' left open"));
    }
    Ok(())
}

fn is_pause(tok: &str) -> bool {
    tok.len() > 2
        && tok.starts_with('(')
        && tok.ends_with(')')
        && tok[1..tok.len() - 1]
            .chars()
            .all(|c| c == '.' || c == ':' || c.is_ascii_digit())
}

fn is_omitted_word(tok: &str) -> bool {
    let mut chars = tok.chars();
    chars.next() == Some('0') && chars.next().is_some_and(char::is_alphabetic)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-'
}

fn clean_word(part: &str) -> Option<String> {
    let kept: String = part.chars().filter(|&c| is_word_char(c)).collect();
    // Lowercasing can introduce combining marks (e.g. U+0130), so filter again.
    let lowered: String = kept
        .to_lowercase()
        .chars()
        .filter(|&c| is_word_char(c))
        .collect();
    let word = lowered.trim_matches(|c| c == '\'' || c == '-');
    (!word.is_empty()).then(|| word.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub total: usize,
    pub unique: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_words: usize,
    pub unique_words: usize,
    pub per_partition: BTreeMap<String, PartitionStats>,
}

/// Word counts over participant speech, overall and per partition.
pub fn corpus_stats(
    transcripts: &[Transcript],
    partition_of: &BTreeMap<String, String>,
) -> Result<CorpusStats> {
    let mut vocab: BTreeSet<&str> = BTreeSet::new();
    let mut per: BTreeMap<String, (usize, BTreeSet<&str>)> = BTreeMap::new();
    let mut total = 0;

    for t in transcripts {
        let partition = partition_of.get(&t.subject_id).ok_or_else(|| {
            Error::subject(&t.subject_id, "subject missing from partition map")
        })?;
        let (count, words) = per.entry(partition.clone()).or_default();
        for tok in t.participant_tokens() {
            total += 1;
            *count += 1;
            vocab.insert(tok);
            words.insert(tok);
        }
    }

    Ok(CorpusStats {
        total_words: total,
        unique_words: vocab.len(),
        per_partition: per
            .into_iter()
            .map(|(k, (total, words))| {
                (
                    k,
                    PartitionStats {
                        total,
                        unique: words.len(),
                    },
                )
            })
            .collect(),
    })
}
