//! Synthetic corpora with a known class signal, for exercising the whole
//! pipeline without the real recordings.
//!
//! Each subject gets an annotated CHAT transcript and an `.emb` bundle whose
//! token tensor matches the normalized transcript exactly. Every feature
//! coordinate is drawn as `class_mean + N(0, 1)` where the two class means sit
//! `separation` standard deviations apart along a random sign pattern.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::staging::Staging;
use crate::bundle::{self, EmbeddingBundle, TokenLayerTensor};
use crate::chat;
use crate::error::{Error, Result};
use crate::features::{Gender, Label, Manifest, Partition, SubjectRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_layers: usize,
    pub text_dim: usize,
    /// Distance between class means, in noise standard deviations per coordinate.
    pub separation: f64,
    /// Spread of individual tokens around their subject's vector.
    pub token_noise: f64,
    pub seed: u64,
    /// Permute labels across all subjects so features carry no class signal.
    pub shuffle_labels: bool,
    /// Acoustic vectors written to every bundle, as `(tag, width)`.
    pub acoustic: Vec<(String, usize)>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_train: 108,
            n_test: 48,
            n_layers: 13,
            text_dim: 64,
            separation: 1.5,
            token_noise: 1.0,
            seed: 0,
            shuffle_labels: false,
            acoustic: vec![("ivec_vox".into(), 400), ("xvec_sre".into(), 512)],
        }
    }
}

const NOUNS: &[&str] = &[
    "boy", "girl", "mother", "cookie", "jar", "stool", "sink", "water", "window", "curtain", "plate", "cupboard",
    "dishes", "floor", "kitchen", "lady",
];
const VERBS: &[&str] = &[
    "is", "was", "taking", "falling", "washing", "drying", "reaching", "spilling", "standing", "looking", "getting",
];
const OTHER: &[&str] = &[
    "the", "a", "and", "she's", "he's", "there", "over", "on", "out", "of", "up", "little", "outside", "well", "oh",
];

/// One raw participant line with CHAT annotations sprinkled in.
fn utterance(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..=9);
    let mut words: Vec<String> = Vec::with_capacity(len + 4);
    for _ in 0..len {
        let pool = match rng.random_range(0..3) {
            0 => NOUNS,
            1 => VERBS,
            _ => OTHER,
        };
        words.push(pool.choose(rng).expect("non-empty word list").to_string());
    }
    match rng.random_range(0..8) {
        0 => words.insert(0, "&uh".into()),
        1 => {
            let w = words[0].clone();
            words.insert(0, format!("<{w}> [/]"));
        }
        2 => words.push("xxx".into()),
        3 => words.insert(1, "(.)".into()),
        4 => words.push("(be)cause".into()),
        5 => words.insert(0, "&-um".into()),
        6 => words.push("[: the] [*]".into()),
        _ => {}
    }
    let end = [".", ".", ".", "?", "!", "+..."];
    format!("{} {}", words.join(" "), end.choose(rng).expect("non-empty"))
}

fn transcript(rng: &mut ChaCha8Rng, subject: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "@UTF8\n@Begin\n@Languages:\teng");
    let _ = writeln!(out, "@Participants:\tPAR Participant, INV Investigator");
    let _ = writeln!(out, "@ID:\teng|synthetic|PAR|||||Participant|||\n@Comment:\t{subject}");
    let _ = writeln!(out, "*INV:\ttell me everything you see going on in this picture .");
    for i in 0..rng.random_range(4..=10) {
        let _ = writeln!(out, "*PAR:\t{}", utterance(rng));
        let _ = writeln!(out, "%mor:\tdet|the n|boy .");
        if i % 4 == 3 {
            let _ = writeln!(out, "*INV:\tmhm .");
        }
    }
    let _ = writeln!(out, "@End");
    out
}

fn noise(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

fn signal(rng: &mut ChaCha8Rng, pattern: &[f64], sign: f64, separation: f64) -> Vec<f64> {
    pattern
        .iter()
        .map(|p| sign * p * separation / 2.0 + noise(rng, 1.0))
        .collect()
}

fn sign_pattern(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Writes `manifest.json`, `transcripts/*.cha` and `bundles/*.emb` under
/// `out` and returns the manifest.
pub fn generate_fixtures(out: &Path, config: &FixtureConfig) -> Result<Manifest> {
    if config.n_train < 4 || config.n_test < 2 {
        return Err(Error::Invalid("fixtures need at least 4 training and 2 test subjects".into()));
    }
    if config.n_layers < 1 || config.text_dim < 1 {
        return Err(Error::Invalid("fixture tensors need at least one layer and one dimension".into()));
    }
    if !(config.separation.is_finite() && config.token_noise.is_finite() && config.token_noise >= 0.0) {
        return Err(Error::Invalid("fixture separation and noise must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let text_pattern = sign_pattern(&mut rng, config.text_dim);
    let acoustic_patterns: Vec<Vec<f64>> = config
        .acoustic
        .iter()
        .map(|(_, d)| sign_pattern(&mut rng, *d))
        .collect();

    let mut subjects = Vec::with_capacity(config.n_train + config.n_test);
    for (prefix, n, partition) in [("S", config.n_train, Partition::Train), ("T", config.n_test, Partition::Test)] {
        for i in 0..n {
            subjects.push(SubjectRecord {
                id: format!("{prefix}{:03}", i + 1),
                label: if i < n.div_ceil(2) { Label::Ad } else { Label::Control },
                gender: if i % 2 == 0 { Gender::F } else { Gender::M },
                partition,
                transcript: None,
                bundle: None,
            });
        }
    }

    let mut staging = Staging::new(out)?;
    for r in &mut subjects {
        let sign = r.label.class().expect("fixture labels are known").sign();
        let cha = transcript(&mut rng, &r.id);
        let parsed = chat::parse_transcript(&cha, &r.id)?;

        let subject_vec = signal(&mut rng, &text_pattern, sign, config.separation);
        let mut tensor = TokenLayerTensor::new(config.n_layers, config.text_dim);
        for sentence in parsed.participant_sentences() {
            let mut values = Vec::with_capacity(sentence.len() * config.n_layers * config.text_dim);
            for _ in sentence {
                let token: Vec<f64> = subject_vec
                    .iter()
                    .map(|v| v + noise(&mut rng, config.token_noise))
                    .collect();
                for _ in 0..config.n_layers {
                    values.extend(token.iter().map(|v| (v + noise(&mut rng, 0.1)) as f32));
                }
            }
            tensor.push_flat(sentence.len(), values)?;
        }

        let mut b = EmbeddingBundle::new(&r.id);
        b.tensor = Some(tensor);
        for ((tag, _), pattern) in config.acoustic.iter().zip(&acoustic_patterns) {
            let v = signal(&mut rng, pattern, sign, config.separation);
            b.vectors.insert(tag.clone(), v.into_iter().map(|x| x as f32).collect());
        }

        let cha_name = format!("transcripts/{}.cha", r.id);
        let emb_name = format!("bundles/{}.emb", r.id);
        staging.write_bytes(&cha_name, cha.as_bytes())?;
        staging.write_bytes(&emb_name, &bundle::encode(&b)?)?;
        r.transcript = Some(cha_name.into());
        r.bundle = Some(emb_name.into());
    }

    if config.shuffle_labels {
        let mut labels: Vec<Label> = subjects.iter().map(|r| r.label).collect();
        labels.shuffle(&mut rng);
        for (r, l) in subjects.iter_mut().zip(labels) {
            r.label = l;
        }
    }

    let manifest = Manifest { subjects };
    manifest.check()?;
    staging.write_json("manifest.json", &manifest)?;
    staging.commit()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn transcripts_normalize_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..50 {
            let t = chat::parse_transcript(&transcript(&mut rng, "X"), "X").unwrap();
            assert!(t.participant_sentences().count() >= 1, "transcript {i}");
            for tok in t.participant_tokens() {
                assert!(!tok.contains(['&', '<', '[', '(', '.']), "{tok}");
                assert_ne!(tok, "xxx");
            }
        }
    }

    #[test]
    fn small_corpus_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let config = FixtureConfig {
            n_train: 6,
            n_test: 4,
            text_dim: 3,
            ..FixtureConfig::default()
        };
        let m = generate_fixtures(dir.path(), &config).unwrap();
        assert_eq!(m.subjects.len(), 10);
        let again = Manifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(again, m);
        for r in &m.subjects {
            let b = bundle::read_bundle(dir.path().join(r.bundle.as_ref().unwrap())).unwrap();
            let text = fs::read_to_string(dir.path().join(r.transcript.as_ref().unwrap())).unwrap();
            let t = chat::parse_transcript(&text, &r.id).unwrap();
            let expect = bundle::Expectations {
                text_dim: Some(3),
                ..bundle::Expectations::default()
            };
            assert!(bundle::validate_bundle(&b, &r.id, &expect, Some(&t)).is_empty());
        }
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
