mod common;

use adfuse::bundle::{decode, encode, read_bundle, validate_bundle, write_bundle, EmbeddingBundle, Expectations, TokenLayerTensor};
use adfuse::chat::parse_transcript;
use adfuse::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vector_section(name: &str, values: &[f32]) -> Vec<u8> {
    let mut out = vec![2u8];
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((values.len() as u32).to_le_bytes());
    for v in values {
        out.extend(v.to_le_bytes());
    }
    out
}

fn tensor_section(n_layers: u16, dim: u16, sentences: &[(u32, Vec<f32>)]) -> Vec<u8> {
    let mut out = vec![1u8];
    out.extend((sentences.len() as u32).to_le_bytes());
    out.extend(n_layers.to_le_bytes());
    out.extend(dim.to_le_bytes());
    for (n, values) in sentences {
        out.extend(n.to_le_bytes());
        for v in values {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

/// Builds a file by hand, section by section, in the order given.
fn file(id: &str, sections: &[Vec<u8>]) -> Vec<u8> {
    let mut out = b"ADEB".to_vec();
    out.extend(1u16.to_le_bytes());
    out.extend((id.len() as u16).to_le_bytes());
    out.extend(id.as_bytes());
    out.push(sections.len() as u8);
    for s in sections {
        out.extend(s);
    }
    out
}

#[test]
fn hand_built_file_decodes() {
    let tensor = tensor_section(2, 1, &[(1, vec![1.0, 2.0])]);
    let vector = vector_section("xvec_sre", &[0.5, -0.5]);
    let b = decode(&file("S1", &[tensor.clone(), vector.clone()])).unwrap();
    assert_eq!(b.subject_id, "S1");
    let t = b.tensor.as_ref().unwrap();
    assert_eq!((t.n_layers, t.dim, t.token_counts()), (2, 1, vec![1]));
    assert_eq!(t.stack(0, 0), &[1.0, 2.0]);
    assert_eq!(b.vectors["xvec_sre"], vec![0.5, -0.5]);
    // The writer produces exactly the hand-built layout.
    assert_eq!(encode(&b).unwrap(), file("S1", &[tensor, vector]));
}

#[test]
fn section_order_does_not_matter() {
    let tensor = tensor_section(1, 2, &[(2, vec![1.0, 2.0, 3.0, 4.0])]);
    let a = vector_section("b", &[1.0]);
    let z = vector_section("a", &[2.0, 3.0]);
    let forward = decode(&file("S", &[tensor.clone(), a.clone(), z.clone()])).unwrap();
    let backward = decode(&file("S", &[z, a, tensor])).unwrap();
    assert_eq!(forward, backward);
}

#[test]
fn malformed_files() {
    let good = file("S", &[vector_section("x", &[1.0])]);

    let mut v2 = good.clone();
    v2[4] = 2;
    assert!(matches!(decode(&v2), Err(Error::Format(_))));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode(&trailing), Err(Error::Format(_))));

    let dup = file("S", &[vector_section("x", &[1.0]), vector_section("x", &[2.0])]);
    assert!(matches!(decode(&dup), Err(Error::Format(_))));

    let nan = file("S", &[vector_section("x", &[f32::NAN])]);
    assert!(matches!(decode(&nan), Err(Error::NonFinite(_))));
    let inf = file("S", &[tensor_section(1, 1, &[(1, vec![f32::INFINITY])])]);
    assert!(matches!(decode(&inf), Err(Error::NonFinite(_))));

    let unknown_kind = file("S", &[vec![9u8, 0, 0]]);
    assert!(matches!(decode(&unknown_kind), Err(Error::Format(_))));

    for cut in 0..good.len() {
        match decode(&good[..cut]) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(actual, cut);
                assert!(expected > cut);
            }
            Err(Error::Format(_)) if cut < 4 => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
}

#[test]
fn writer_refuses_non_finite() {
    let mut b = EmbeddingBundle::new("S");
    b.vectors.insert("x".into(), vec![f32::NAN]);
    assert!(matches!(encode(&b), Err(Error::NonFinite(_))));
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = common::random_bundle(&mut rng);
    let path = dir.path().join("b.emb");
    write_bundle(&b, &path).unwrap();
    assert!(common::bit_identical(&read_bundle(&path).unwrap(), &b));
    let err = read_bundle(dir.path().join("missing.emb")).unwrap_err();
    assert!(err.to_string().contains("missing.emb"), "{err}");
}

#[test]
fn validation_against_transcript() {
    let transcript = parse_transcript("*PAR:\tthe boy &uh is falling down now .\n*PAR:\txxx .", "S9").unwrap();
    let mut t = TokenLayerTensor::new(13, 768);
    t.push_flat(5, vec![0.0; 5 * 13 * 768]).unwrap();
    let mut b = EmbeddingBundle::new("S9");
    b.tensor = Some(t);
    b.vectors.insert("xvec_sre".into(), vec![0.0; 511]);
    b.vectors.insert("ivec_vox".into(), vec![0.0; 400]);
    let before = b.clone();

    let v = validate_bundle(&b, "S9", &Expectations::default(), Some(&transcript));
    assert_eq!(b, before);
    assert_eq!(v.len(), 2, "{v:?}");
    assert!(v.iter().any(|m| m.starts_with("xvec_sre: expected 512")));
    assert!(v.iter().any(|m| m.contains("token count") && m.contains('5') && m.contains('6')));

    let v = validate_bundle(&b, "S10", &Expectations::default(), None);
    assert!(v.iter().any(|m| m.starts_with("subject id")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>()) {
        let b = common::random_bundle(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode(&b).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert!(common::bit_identical(&b, &back));
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut with_magic = b"ADEB\x01\x00".to_vec();
        with_magic.extend(&bytes);
        let _ = decode(&bytes);
        let _ = decode(&with_magic);
    }
}
