//! End-to-end commands: normalize transcripts, compute corpus statistics,
//! build features from a manifest, train with C selection on the
//! development split, and evaluate or predict with a saved model.
//!
//! Every command writes into an output directory through a staging area and
//! leaves a `run.json` describing its configuration and input digests.

mod fixtures;
mod staging;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use fixtures::{generate_fixtures, FixtureConfig};
use staging::Staging;

use crate::bundle::{self, EmbeddingBundle, Expectations};
use crate::chat::{self, CorpusStats, Transcript};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::features::{
    self, apply_scaler, early_fuse, fit_scaler, Class, DesignMatrix, Label, Manifest, Partition, SubjectRecord,
};
use crate::pooling::{self, LayerRange, Pooling};
use crate::svm::{self, GridRow, LinearModel, TrainConfig, DEFAULT_C_GRID};

/// One block of features entering the fused vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    /// One row per sentence; subjects are decided by majority vote.
    LinguisticSentence,
    /// One pooled vector per description.
    LinguisticDocument,
    /// A named acoustic vector from the bundle, e.g. `xvec_sre`.
    Acoustic(String),
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSource::LinguisticSentence => f.write_str("linguistic-sentence"),
            FeatureSource::LinguisticDocument => f.write_str("linguistic-document"),
            FeatureSource::Acoustic(tag) => write!(f, "acoustic:{tag}"),
        }
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linguistic-sentence" => Ok(FeatureSource::LinguisticSentence),
            "linguistic-document" => Ok(FeatureSource::LinguisticDocument),
            other => match other.strip_prefix("acoustic:") {
                Some(tag) if !tag.is_empty() => Ok(FeatureSource::Acoustic(tag.to_string())),
                _ => Err(Error::Invalid(format!(
                    "unknown system {other:?} (linguistic-sentence | linguistic-document | acoustic:TAG)"
                ))),
            },
        }
    }
}

/// The feature sources of a system, in fusion order. Written as sources
/// joined by `+`, e.g. `linguistic-document+acoustic:xvec_sre`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SystemSelection(pub Vec<FeatureSource>);

impl SystemSelection {
    pub fn per_sentence(&self) -> bool {
        self.0.contains(&FeatureSource::LinguisticSentence)
    }

    fn needs_tensor(&self) -> bool {
        self.0
            .iter()
            .any(|s| matches!(s, FeatureSource::LinguisticSentence | FeatureSource::LinguisticDocument))
    }
}

impl fmt::Display for SystemSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for SystemSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sources = s
            .split('+')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<FeatureSource>>>()?;
        if sources.is_empty() {
            return Err(Error::Invalid("system selection is empty".into()));
        }
        for (i, a) in sources.iter().enumerate() {
            if sources[..i].contains(a) {
                return Err(Error::Invalid(format!("{a} listed twice in the system selection")));
            }
        }
        Ok(SystemSelection(sources))
    }
}

impl TryFrom<String> for SystemSelection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SystemSelection> for String {
    fn from(s: SystemSelection) -> String {
        s.to_string()
    }
}

fn default_system() -> SystemSelection {
    SystemSelection(vec![FeatureSource::LinguisticDocument])
}

fn default_dev_fraction() -> f64 {
    0.2
}

fn default_c_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}

fn default_tolerance() -> f64 {
    TrainConfig::default().tolerance
}

fn default_max_epochs() -> usize {
    TrainConfig::default().max_epochs
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_system")]
    pub system: SystemSelection,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default)]
    pub layers: LayerRange,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Repeat description-level parts on every sentence row when a
    /// per-sentence system is fused with other sources.
    #[serde(default)]
    pub sentence_fusion: bool,
    /// Check bundles against their transcripts' token counts.
    #[serde(default = "default_true")]
    pub validate: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            system: default_system(),
            pooling: Pooling::default(),
            layers: LayerRange::default(),
            dev_fraction: default_dev_fraction(),
            seed: 0,
            c_grid: default_c_grid(),
            tolerance: default_tolerance(),
            max_epochs: default_max_epochs(),
            sentence_fusion: false,
            validate: true,
            out: default_out(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Applies command-line overrides on top of a file (or default) config.
    pub fn with_overrides(mut self, o: ConfigOverrides) -> Result<Self> {
        if let Some(v) = o.manifest {
            self.manifest = v;
        }
        if let Some(v) = o.system {
            self.system = v.parse()?;
        }
        if let Some(v) = o.pooling {
            self.pooling = v.parse()?;
        }
        if let Some(v) = o.layers {
            let r: LayerRange = v.parse()?;
            self.layers = LayerRange::new(r.first, r.last, self.layers.n_layers)?;
        }
        if let Some(v) = o.dev_fraction {
            self.dev_fraction = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.c_grid {
            self.c_grid = parse_grid(&v)?;
        }
        if let Some(v) = o.tolerance {
            self.tolerance = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        Ok(self)
    }

    pub fn check(&self, root: &Path) -> Result<()> {
        let manifest = root.join(&self.manifest);
        if !manifest.is_file() {
            return Err(Error::Invalid(format!("manifest {} does not exist", manifest.display())));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Invalid(format!("C grid must hold positive values, got {:?}", self.c_grid)));
        }
        LayerRange::new(self.layers.first, self.layers.last, self.layers.n_layers)?;
        self.feature_spec().check()
    }

    fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            system: self.system.clone(),
            pooling: self.pooling,
            layers: self.layers,
            sentence_fusion: self.sentence_fusion,
        }
    }

    fn train_template(&self) -> TrainConfig {
        TrainConfig {
            tolerance: self.tolerance,
            max_epochs: self.max_epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// Optional values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub manifest: Option<PathBuf>,
    pub system: Option<String>,
    pub pooling: Option<String>,
    pub layers: Option<String>,
    pub dev_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub c_grid: Option<String>,
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Parses a comma-separated list of C values.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad C value {v:?}")))
        })
        .collect()
}

/// Everything needed to turn a bundle into feature rows. Saved with the model
/// so evaluation rebuilds features exactly as training did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub system: SystemSelection,
    pub pooling: Pooling,
    pub layers: LayerRange,
    pub sentence_fusion: bool,
}

impl FeatureSpec {
    fn check(&self) -> Result<()> {
        if self.system.per_sentence() && self.system.0.len() > 1 && !self.sentence_fusion {
            return Err(Error::Invalid(format!(
                "system {} fuses per-sentence rows with description-level parts; enable sentence_fusion to allow it",
                self.system
            )));
        }
        Ok(())
    }
}

/// A feature row before labels are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub subject: String,
    pub features: Vec<f64>,
}

/// Builds the feature rows of one subject from its bundle.
pub fn subject_instances(subject: &str, bundle: &EmbeddingBundle, spec: &FeatureSpec) -> Result<Vec<Instance>> {
    spec.check()?;
    let described = if spec.system.needs_tensor() {
        let tensor = bundle
            .tensor
            .as_ref()
            .ok_or_else(|| Error::subject(subject, "bundle has no token-layer tensor"))?;
        // Sentences with no tokens are never stored, so nothing to drop here.
        Some(pooling::describe(tensor, spec.layers, spec.pooling).map_err(|e| Error::subject(subject, e))?)
    } else {
        None
    };

    let resolve = |source: &FeatureSource| -> Option<Vec<f64>> {
        match source {
            FeatureSource::LinguisticDocument => described.as_ref().map(|d| d.document.clone()),
            FeatureSource::Acoustic(tag) => bundle
                .vectors
                .get(tag)
                .map(|v| v.iter().map(|&x| f64::from(x)).collect()),
            FeatureSource::LinguisticSentence => None,
        }
    };

    if spec.system.per_sentence() {
        let d = described.as_ref().expect("tensor described");
        if d.per_sentence.is_empty() {
            return Err(Error::subject(subject, "no sentences with tokens"));
        }
        d.per_sentence
            .iter()
            .enumerate()
            .map(|(k, sentence)| {
                let id = format!("{subject}:{k}");
                let resolved: Vec<(String, Option<Vec<f64>>)> = spec
                    .system
                    .0
                    .iter()
                    .map(|s| match s {
                        FeatureSource::LinguisticSentence => (s.to_string(), Some(sentence.clone())),
                        other => (other.to_string(), resolve(other)),
                    })
                    .collect();
                let parts: Vec<(&str, Option<&[f64]>)> =
                    resolved.iter().map(|(n, v)| (n.as_str(), v.as_deref())).collect();
                Ok(Instance {
                    features: early_fuse(&id, &parts)?,
                    id,
                    subject: subject.to_string(),
                })
            })
            .collect()
    } else {
        let resolved: Vec<(String, Option<Vec<f64>>)> =
            spec.system.0.iter().map(|s| (s.to_string(), resolve(s))).collect();
        let parts: Vec<(&str, Option<&[f64]>)> = resolved.iter().map(|(n, v)| (n.as_str(), v.as_deref())).collect();
        Ok(vec![Instance {
            features: early_fuse(subject, &parts)?,
            id: subject.to_string(),
            subject: subject.to_string(),
        }])
    }
}

/// Reads a transcript given either as normalized JSON or as a CHAT file.
pub fn load_transcript(path: &Path, subject: &str) -> Result<Transcript> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    } else {
        chat::parse_transcript(&text, subject)
    }
}

/// Resolves manifest-relative paths and keeps digests of every input read.
struct Inputs {
    base: PathBuf,
}

impl Inputs {
    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}

fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn build_instances(
    records: &[SubjectRecord],
    spec: &FeatureSpec,
    inputs: &Inputs,
    validate: bool,
) -> Result<Vec<(SubjectRecord, Vec<Instance>)>> {
    records
        .par_iter()
        .map(|r| {
            let path = r
                .bundle
                .as_ref()
                .ok_or_else(|| Error::subject(&r.id, "manifest lists no bundle"))?;
            let bundle = bundle::read_bundle(inputs.resolve(path)).map_err(|e| Error::subject(&r.id, e))?;
            if validate {
                let transcript = r
                    .transcript
                    .as_ref()
                    .map(|p| load_transcript(&inputs.resolve(p), &r.id))
                    .transpose()
                    .map_err(|e| Error::subject(&r.id, e))?;
                let expect = Expectations {
                    n_layers: spec.system.needs_tensor().then_some(spec.layers.n_layers),
                    text_dim: None,
                    ..Expectations::default()
                };
                let violations = bundle::validate_bundle(&bundle, &r.id, &expect, transcript.as_ref());
                if !violations.is_empty() {
                    return Err(Error::subject(&r.id, violations.join("; ")));
                }
            }
            Ok((r.clone(), subject_instances(&r.id, &bundle, spec)?))
        })
        .collect()
}

fn labeled_matrix(built: &[(SubjectRecord, Vec<Instance>)]) -> Result<DesignMatrix> {
    let mut ids = Vec::new();
    let mut subjects = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (r, instances) in built {
        let class = r
            .label
            .class()
            .ok_or_else(|| Error::subject(&r.id, "needs a known label here"))?;
        for inst in instances {
            ids.push(inst.id.clone());
            subjects.push(inst.subject.clone());
            rows.push(inst.features.clone());
            labels.push(class);
        }
    }
    DesignMatrix::new(ids, subjects, rows, labels)
}

/// Train and development records: the manifest's own `dev` partition if it
/// has one, otherwise a seeded split of the `train` partition.
pub fn train_dev_records(manifest: &Manifest, config: &PipelineConfig) -> Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    let train = manifest.in_partition(Partition::Train);
    let dev = manifest.in_partition(Partition::Dev);
    if train.is_empty() {
        return Err(Error::Invalid("manifest has no training subjects".into()));
    }
    if dev.is_empty() {
        features::split_train_dev(&train, config.dev_fraction, config.seed)
    } else {
        Ok((train, dev))
    }
}

fn partition_records(manifest: &Manifest, config: &PipelineConfig, partition: Partition) -> Result<Vec<SubjectRecord>> {
    match partition {
        Partition::Train => Ok(train_dev_records(manifest, config)?.0),
        Partition::Dev => Ok(train_dev_records(manifest, config)?.1),
        Partition::Test => Ok(manifest.in_partition(Partition::Test)),
    }
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: T,
    inputs: BTreeMap<String, String>,
}

fn write_run_record<T: Serialize>(
    staging: &mut Staging,
    command: &str,
    seed: u64,
    config: T,
    files: &[PathBuf],
    root: &Path,
) -> Result<()> {
    let mut inputs = BTreeMap::new();
    for f in files {
        let key = f.strip_prefix(root).unwrap_or(f).to_string_lossy().into_owned();
        inputs.insert(key, digest_file(f)?);
    }
    staging.write_json(
        "run.json",
        &RunRecord {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
        },
    )
}

fn input_files(records: &[SubjectRecord], inputs: &Inputs, validate: bool) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for r in records {
        files.extend(r.bundle.as_ref().map(|p| inputs.resolve(p)));
        if validate {
            files.extend(r.transcript.as_ref().map(|p| inputs.resolve(p)));
        }
    }
    files
}

/// On-disk model: the classifier, its scaler, and how its features are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub features: FeatureSpec,
    pub feature_width: usize,
    pub model: LinearModel,
}

impl ModelFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevReport {
    pub system: String,
    pub best_c: f64,
    pub dev_accuracy: f64,
    pub train_subjects: Vec<String>,
    pub dev_subjects: Vec<String>,
    pub grid: Vec<GridRow>,
}

impl DevReport {
    pub fn render(&self) -> String {
        let mut out = format!("system: {}\nbest C: {}\n\n", self.system, self.best_c);
        out.push_str(&format!(
            "{:>10}  {:>8}  {:>9}  {:>6}  {:>8}  {:>6}\n",
            "C", "Accuracy", "Precision", "Recall", "F1 Score", "Epochs"
        ));
        for row in &self.grid {
            let m = &row.dev_metrics.macro_avg;
            out.push_str(&format!(
                "{:>10}  {:>8.4}  {:>9.4}  {:>6.4}  {:>8.4}  {:>6}{}\n",
                row.c,
                eval::round_half_up(row.dev_accuracy, 4),
                eval::round_half_up(m.precision, 4),
                eval::round_half_up(m.recall, 4),
                eval::round_half_up(m.f1, 4),
                row.epochs,
                if row.converged { "" } else { " (not converged)" }
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: DevReport,
    pub model: ModelFile,
    pub written: Vec<PathBuf>,
}

/// Builds features, splits, scales, grid-searches C and writes
/// `model.json`, `dev_report.json`, `dev_report.txt` and `run.json`.
pub fn cmd_train(root: &Path, config: &PipelineConfig) -> Result<TrainOutcome> {
    config.check(root)?;
    let manifest_path = root.join(&config.manifest);
    let manifest = Manifest::load(&manifest_path)?;
    let inputs = Inputs {
        base: manifest_path.parent().unwrap_or(root).to_path_buf(),
    };
    let spec = config.feature_spec();

    let (train_recs, dev_recs) = train_dev_records(&manifest, config)?;
    let train_raw = labeled_matrix(&build_instances(&train_recs, &spec, &inputs, config.validate)?)?;
    let dev_raw = labeled_matrix(&build_instances(&dev_recs, &spec, &inputs, config.validate)?)?;

    let scaler = fit_scaler(&train_raw)?;
    let train_m = apply_scaler(&scaler, &train_raw)?;
    let dev_m = apply_scaler(&scaler, &dev_raw)?;

    let search = svm::grid_search_c(&train_m, &dev_m, &config.c_grid, &config.train_template())?;
    let mut model = search.model;
    model.scaler = Some(scaler);

    let report = DevReport {
        system: config.system.to_string(),
        best_c: search.best_c,
        dev_accuracy: search
            .rows
            .iter()
            .find(|r| r.c == search.best_c)
            .map_or(0.0, |r| r.dev_accuracy),
        train_subjects: train_recs.iter().map(|r| r.id.clone()).collect(),
        dev_subjects: dev_recs.iter().map(|r| r.id.clone()).collect(),
        grid: search.rows,
    };
    let model_file = ModelFile {
        features: spec,
        feature_width: train_m.width(),
        model,
    };

    let out = root.join(&config.out);
    let mut staging = Staging::new(&out)?;
    staging.write_json("model.json", &model_file)?;
    staging.write_json("dev_report.json", &report)?;
    staging.write_bytes("dev_report.txt", report.render().as_bytes())?;
    let mut files = vec![manifest_path.clone()];
    files.extend(input_files(&train_recs, &inputs, config.validate));
    files.extend(input_files(&dev_recs, &inputs, config.validate));
    write_run_record(&mut staging, "train", config.seed, config, &files, root)?;
    let written = staging.commit()?;
    log::info!(
        "trained {} on {} rows; best C = {} (dev accuracy {:.4})",
        report.system,
        train_m.len(),
        report.best_c,
        report.dev_accuracy
    );

    Ok(TrainOutcome {
        report,
        model: model_file,
        written,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject: String,
    pub predicted: Class,
    pub mean_score: f64,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Label>,
}

fn score_records(
    model_file: &ModelFile,
    built: &[(SubjectRecord, Vec<Instance>)],
) -> Result<Vec<SubjectPrediction>> {
    let model = &model_file.model;
    let mut out = Vec::with_capacity(built.len());
    for (r, instances) in built {
        let mut scored = Vec::with_capacity(instances.len());
        for inst in instances {
            if inst.features.len() != model_file.feature_width {
                return Err(Error::subject(
                    &inst.id,
                    Error::WidthMismatch {
                        expected: model_file.feature_width,
                        actual: inst.features.len(),
                    },
                ));
            }
            let x = match &model.scaler {
                Some(s) => s.transform_row(&inst.features)?,
                None => inst.features.clone(),
            };
            let score = model.decision(&x)?;
            scored.push((Class::from_score(score), score));
        }
        let predicted = eval::majority_vote(&scored).map_err(|e| Error::subject(&r.id, e))?;
        out.push(SubjectPrediction {
            subject: r.id.clone(),
            predicted,
            mean_score: scored.iter().map(|(_, s)| s).sum::<f64>() / scored.len() as f64,
            rows: scored.len(),
            truth: Some(r.label).filter(|l| *l != Label::Unknown),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalRunConfig<'a> {
    pipeline: &'a PipelineConfig,
    model: String,
    partition: Partition,
}

fn predict_partition(
    root: &Path,
    config: &PipelineConfig,
    model_path: &Path,
    partition: Partition,
) -> Result<(ModelFile, Vec<SubjectPrediction>, Vec<PathBuf>)> {
    let manifest_path = root.join(&config.manifest);
    if !manifest_path.is_file() {
        return Err(Error::Invalid(format!("manifest {} does not exist", manifest_path.display())));
    }
    let manifest = Manifest::load(&manifest_path)?;
    let inputs = Inputs {
        base: manifest_path.parent().unwrap_or(root).to_path_buf(),
    };
    let model_path = root.join(model_path);
    let model_file = ModelFile::load(&model_path)?;
    if model_file.model.width() != model_file.feature_width {
        return Err(Error::WidthMismatch {
            expected: model_file.model.width(),
            actual: model_file.feature_width,
        });
    }
    let records = partition_records(&manifest, config, partition)?;
    if records.is_empty() {
        return Err(Error::Invalid(format!("manifest has no {partition} subjects")));
    }
    let built = build_instances(&records, &model_file.features, &inputs, config.validate)?;
    let predictions = score_records(&model_file, &built)?;

    let mut files = vec![manifest_path, model_path];
    files.extend(input_files(&records, &inputs, config.validate));
    Ok((model_file, predictions, files))
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    /// System the model was trained on.
    pub system: String,
    pub report: MetricsReport,
    pub predictions: Vec<SubjectPrediction>,
    pub written: Vec<PathBuf>,
}

/// Scores a partition with a saved model and writes `predictions.json`,
/// `report.json`, `report.txt` and `run.json`.
pub fn cmd_evaluate(root: &Path, config: &PipelineConfig, model_path: &Path, partition: Partition) -> Result<EvalOutcome> {
    let (model_file, predictions, files) = predict_partition(root, config, model_path, partition)?;
    let mut truth = Vec::with_capacity(predictions.len());
    for p in &predictions {
        truth.push(
            p.truth
                .and_then(Label::class)
                .ok_or_else(|| Error::subject(&p.subject, "no ground-truth label to evaluate against"))?,
        );
    }
    let predicted: Vec<Class> = predictions.iter().map(|p| p.predicted).collect();
    let cm = eval::confusion(&truth, &predicted)?;
    let report = eval::metrics(&cm)?;

    let out = root.join(&config.out);
    let mut staging = Staging::new(&out)?;
    staging.write_json("predictions.json", &predictions)?;
    staging.write_json("report.json", &report)?;
    let name = model_file.features.system.to_string();
    staging.write_bytes("report.txt", eval::render_table(&[(&name, &report)]).as_bytes())?;
    let run_config = EvalRunConfig {
        pipeline: config,
        model: model_path.display().to_string(),
        partition,
    };
    write_run_record(&mut staging, "evaluate", config.seed, run_config, &files, root)?;
    let written = staging.commit()?;
    log::info!("{partition}: accuracy {:.4} over {} subjects", report.accuracy, predictions.len());

    Ok(EvalOutcome {
        system: name,
        report,
        predictions,
        written,
    })
}

/// Like [`cmd_evaluate`] without ground truth: writes `predictions.json`
/// and `run.json`.
pub fn cmd_predict(
    root: &Path,
    config: &PipelineConfig,
    model_path: &Path,
    partition: Partition,
) -> Result<Vec<SubjectPrediction>> {
    let (_, predictions, files) = predict_partition(root, config, model_path, partition)?;
    let out = root.join(&config.out);
    let mut staging = Staging::new(&out)?;
    staging.write_json("predictions.json", &predictions)?;
    let run_config = EvalRunConfig {
        pipeline: config,
        model: model_path.display().to_string(),
        partition,
    };
    write_run_record(&mut staging, "predict", config.seed, run_config, &files, root)?;
    staging.commit()?;
    Ok(predictions)
}

/// Normalizes every `.cha` file in `input` into `<subject>.json` under
/// `output`, plus `stats.json` over all of them.
pub fn cmd_normalize(input: &Path, output: &Path) -> Result<CorpusStats> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "cha"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no .cha files in {}", input.display())));
    }

    let transcripts = files
        .par_iter()
        .map(|path| {
            let subject = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            chat::parse_transcript(&text, &subject).map_err(|e| Error::subject(path.display().to_string(), e))
        })
        .collect::<Result<Vec<_>>>()?;

    let partitions: BTreeMap<String, String> = transcripts
        .iter()
        .map(|t| (t.subject_id.clone(), "all".to_string()))
        .collect();
    let stats = chat::corpus_stats(&transcripts, &partitions)?;

    let mut staging = Staging::new(output)?;
    for t in &transcripts {
        staging.write_json(format!("{}.json", t.subject_id), t)?;
    }
    staging.write_json("stats.json", &stats)?;
    staging.commit()?;
    Ok(stats)
}

/// Corpus statistics over the manifest's transcripts, broken down as
/// `train-AD`, `train-control` and `test` (dev subjects count as train).
pub fn cmd_stats(root: &Path, manifest: &Path, out: Option<&Path>) -> Result<CorpusStats> {
    let manifest_path = root.join(manifest);
    let m = Manifest::load(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(root);
    let mut transcripts = Vec::new();
    let mut partitions = BTreeMap::new();
    for r in &m.subjects {
        let Some(path) = &r.transcript else {
            continue;
        };
        transcripts.push(load_transcript(&base.join(path), &r.id).map_err(|e| Error::subject(&r.id, e))?);
        let key = match (r.partition, r.label) {
            (Partition::Test, _) => "test".to_string(),
            (_, Label::Ad) => "train-AD".to_string(),
            (_, Label::Control) => "train-control".to_string(),
            (_, Label::Unknown) => "train-unknown".to_string(),
        };
        partitions.insert(r.id.clone(), key);
    }
    let stats = chat::corpus_stats(&transcripts, &partitions)?;
    if let Some(out) = out {
        let mut staging = Staging::new(&root.join(out))?;
        staging.write_json("stats.json", &stats)?;
        staging.commit()?;
    }
    Ok(stats)
}
