//! `.emb` bundle files: the interchange format between the embedding
//! extractors and this crate.
//!
//! Layout (all integers little-endian, all values `f32` little-endian):
//!
//! ```text
//! magic        b"ADEB"
//! version      u16 = 1
//! id length    u16, then that many UTF-8 bytes of subject id
//! sections     u8 count, then sections
//!
//! section kind u8
//!   1: token-layer tensor
//!      n_sentences u32, n_layers u16, dim u16,
//!      per sentence: n_tokens u32, then n_tokens * n_layers * dim values
//!      (token-major, then layer, dim innermost)
//!   2: named vector
//!      name length u16 + UTF-8 name, dim u32, dim values
//! ```
//!
//! Writers emit the tensor first and named vectors sorted by name, so equal
//! bundles always encode to identical bytes. Readers accept sections in any
//! order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::chat::Transcript;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADEB";
pub const VERSION: u16 = 1;

const KIND_TENSOR: u8 = 1;
const KIND_VECTOR: u8 = 2;

/// Per-token layer stacks for one sentence, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceTensor {
    pub n_tokens: usize,
    /// `n_tokens * n_layers * dim` values.
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayerTensor {
    pub n_layers: usize,
    pub dim: usize,
    pub sentences: Vec<SentenceTensor>,
}

impl TokenLayerTensor {
    pub fn new(n_layers: usize, dim: usize) -> Self {
        TokenLayerTensor {
            n_layers,
            dim,
            sentences: Vec::new(),
        }
    }

    /// Appends a sentence given as `[token][layer][dim]` nested vectors.
    pub fn push_sentence(&mut self, tokens: &[Vec<Vec<f32>>]) -> Result<()> {
        let mut values = Vec::with_capacity(tokens.len() * self.n_layers * self.dim);
        for (t, stack) in tokens.iter().enumerate() {
            if stack.len() != self.n_layers {
                return Err(Error::Dimension(format!(
                    "token {t}: expected {} layers, got {}",
                    self.n_layers,
                    stack.len()
                )));
            }
            for layer in stack {
                if layer.len() != self.dim {
                    return Err(Error::Dimension(format!(
                        "token {t}: expected width {}, got {}",
                        self.dim,
                        layer.len()
                    )));
                }
                values.extend_from_slice(layer);
            }
        }
        self.push_flat(tokens.len(), values)
    }

    pub fn push_flat(&mut self, n_tokens: usize, values: Vec<f32>) -> Result<()> {
        if n_tokens == 0 {
            return Err(Error::Dimension("a stored sentence needs at least one token".into()));
        }
        if values.len() != n_tokens * self.stack_len() {
            return Err(Error::Dimension(format!(
                "expected {} values for {n_tokens} tokens, got {}",
                n_tokens * self.stack_len(),
                values.len()
            )));
        }
        self.sentences.push(SentenceTensor { n_tokens, values });
        Ok(())
    }

    /// Number of values in one token's layer stack.
    pub fn stack_len(&self) -> usize {
        self.n_layers * self.dim
    }

    /// The `[n_layers * dim]` stack of token `token` in sentence `sentence`.
    pub fn stack(&self, sentence: usize, token: usize) -> &[f32] {
        let n = self.stack_len();
        &self.sentences[sentence].values[token * n..(token + 1) * n]
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.n_tokens).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub subject_id: String,
    pub tensor: Option<TokenLayerTensor>,
    /// Named fixed-size vectors such as `xvec_sre` or `ivec_vox`.
    pub vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingBundle {
    pub fn new(subject_id: impl Into<String>) -> Self {
        EmbeddingBundle {
            subject_id: subject_id.into(),
            tensor: None,
            vectors: BTreeMap::new(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::Invalid("bundle subject id is empty".into()));
        }
        if self.tensor.is_none() && self.vectors.is_empty() {
            return Err(Error::Invalid(format!(
                "bundle {} holds neither a tensor nor named vectors",
                self.subject_id
            )));
        }
        if let Some(t) = &self.tensor {
            for (i, s) in t.sentences.iter().enumerate() {
                if s.n_tokens == 0 || s.values.len() != s.n_tokens * t.stack_len() {
                    return Err(Error::Dimension(format!("sentence {i} has an inconsistent shape")));
                }
                if s.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("tensor sentence {i}")));
                }
            }
        }
        for (name, v) in &self.vectors {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("vector {name}")));
            }
        }
        Ok(())
    }
}

fn narrow<T: TryFrom<usize>>(value: usize, what: &str) -> Result<T> {
    T::try_from(value).map_err(|_| Error::Format(format!("{what} {value} does not fit the format")))
}

pub fn encode(bundle: &EmbeddingBundle) -> Result<Vec<u8>> {
    bundle.check()?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let id = bundle.subject_id.as_bytes();
    out.extend_from_slice(&narrow::<u16>(id.len(), "subject id length")?.to_le_bytes());
    out.extend_from_slice(id);

    let n_sections = usize::from(bundle.tensor.is_some()) + bundle.vectors.len();
    out.push(narrow::<u8>(n_sections, "section count")?);

    if let Some(t) = &bundle.tensor {
        out.push(KIND_TENSOR);
        out.extend_from_slice(&narrow::<u32>(t.sentences.len(), "sentence count")?.to_le_bytes());
        out.extend_from_slice(&narrow::<u16>(t.n_layers, "layer count")?.to_le_bytes());
        out.extend_from_slice(&narrow::<u16>(t.dim, "dimension")?.to_le_bytes());
        for s in &t.sentences {
            out.extend_from_slice(&narrow::<u32>(s.n_tokens, "token count")?.to_le_bytes());
            put_f32s(&mut out, &s.values);
        }
    }
    for (name, values) in &bundle.vectors {
        out.push(KIND_VECTOR);
        out.extend_from_slice(&narrow::<u16>(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&narrow::<u32>(values.len(), "vector length")?.to_le_bytes());
        put_f32s(&mut out, values);
    }
    Ok(out)
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            actual: self.buf.len(),
        })?;
        let bytes = &self.buf[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Format("payload size overflow".into()))?)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(values)
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingBundle> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let id_len = r.u16()? as usize;
    let mut bundle = EmbeddingBundle::new(r.string(id_len, "subject id")?);
    let n_sections = r.u8()?;

    for _ in 0..n_sections {
        match r.u8()? {
            KIND_TENSOR => {
                if bundle.tensor.is_some() {
                    return Err(Error::Format("more than one tensor section".into()));
                }
                let n_sentences = r.u32()? as usize;
                let n_layers = r.u16()? as usize;
                let dim = r.u16()? as usize;
                let mut tensor = TokenLayerTensor::new(n_layers, dim);
                for i in 0..n_sentences {
                    let n_tokens = r.u32()? as usize;
                    if n_tokens == 0 {
                        return Err(Error::Format(format!("sentence {i} has no tokens")));
                    }
                    let count = n_tokens
                        .checked_mul(tensor.stack_len())
                        .ok_or_else(|| Error::Format("payload size overflow".into()))?;
                    let values = r.f32s(count, &format!("tensor sentence {i}"))?;
                    tensor.sentences.push(SentenceTensor { n_tokens, values });
                }
                bundle.tensor = Some(tensor);
            }
            KIND_VECTOR => {
                let name_len = r.u16()? as usize;
                let name = r.string(name_len, "vector name")?;
                let dim = r.u32()? as usize;
                let values = r.f32s(dim, &format!("vector {name}"))?;
                if bundle.vectors.insert(name.clone(), values).is_some() {
                    return Err(Error::Format(format!("duplicate vector section {name}")));
                }
            }
            kind => return Err(Error::Format(format!("unknown section kind {kind}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last section",
            bytes.len() - r.pos
        )));
    }
    if bundle.tensor.is_none() && bundle.vectors.is_empty() {
        return Err(Error::Format("bundle has no sections".into()));
    }
    Ok(bundle)
}

pub fn write_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(bundle)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Shape expectations a bundle is checked against.
#[derive(Clone, Debug, PartialEq)]
pub struct Expectations {
    pub n_layers: Option<usize>,
    pub text_dim: Option<usize>,
    /// Expected width by tag prefix, e.g. `xvec` → 512.
    pub tag_dims: Vec<(String, usize)>,
}

impl Default for Expectations {
    /// A 12-layer, 768-wide text encoder; 512-wide x-vectors and 400-wide i-vectors.
    fn default() -> Self {
        Expectations {
            n_layers: Some(13),
            text_dim: Some(768),
            tag_dims: vec![("xvec".into(), 512), ("ivec".into(), 400)],
        }
    }
}

impl Expectations {
    pub fn dim_for_tag(&self, tag: &str) -> Option<usize> {
        self.tag_dims
            .iter()
            .find(|(prefix, _)| tag == prefix || tag.starts_with(&format!("{prefix}_")))
            .map(|&(_, d)| d)
    }
}

/// Lists every way `bundle` disagrees with the manifest subject, the shape
/// expectations and, when given, the subject's normalized transcript.
pub fn validate_bundle(
    bundle: &EmbeddingBundle,
    subject_id: &str,
    expect: &Expectations,
    transcript: Option<&Transcript>,
) -> Vec<String> {
    let mut violations = Vec::new();
    if bundle.subject_id != subject_id {
        violations.push(format!(
            "subject id: bundle has {:?}, manifest has {subject_id:?}",
            bundle.subject_id
        ));
    }
    if bundle.tensor.is_none() && bundle.vectors.is_empty() {
        violations.push("bundle is empty".into());
    }
    for (name, values) in &bundle.vectors {
        if let Some(d) = expect.dim_for_tag(name) {
            if values.len() != d {
                violations.push(format!("{name}: expected {d}, got {}", values.len()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            violations.push(format!("{name}: non-finite value"));
        }
    }
    if let Some(t) = &bundle.tensor {
        if let Some(l) = expect.n_layers.filter(|&l| l != t.n_layers) {
            violations.push(format!("tensor: expected {l} layers, got {}", t.n_layers));
        }
        if let Some(d) = expect.text_dim.filter(|&d| d != t.dim) {
            violations.push(format!("tensor: expected width {d}, got {}", t.dim));
        }
        if let Some(tr) = transcript {
            let expected: Vec<usize> = tr.participant_sentences().map(<[String]>::len).collect();
            let actual = t.token_counts();
            if expected.len() != actual.len() {
                violations.push(format!(
                    "sentence count: tensor has {}, transcript has {}",
                    actual.len(),
                    expected.len()
                ));
            }
            for (i, (a, e)) in actual.iter().zip(&expected).enumerate() {
                if a != e {
                    violations.push(format!("token count: sentence {i} has {a} in tensor, {e} in transcript"));
                }
            }
        }
    }
    violations
}
