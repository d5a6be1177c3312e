//! Subject manifests, the gender-balanced development split, z-score scaling
//! and early fusion into design matrices.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic label of a subject. AD is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "control")]
    Control,
    #[serde(rename = "unknown")]
    Unknown,
}

impl Label {
    pub fn class(self) -> Option<Class> {
        match self {
            Label::Ad => Some(Class::Ad),
            Label::Control => Some(Class::Control),
            Label::Unknown => None,
        }
    }
}

/// A known class. Encoded as +1 (AD) and -1 (control) for the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "control")]
    Control,
}

impl Class {
    pub fn sign(self) -> f64 {
        match self {
            Class::Ad => 1.0,
            Class::Control => -1.0,
        }
    }

    /// Sign of a decision score; an exact zero goes to AD.
    pub fn from_score(score: f64) -> Class {
        if score >= 0.0 {
            Class::Ad
        } else {
            Class::Control
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Ad => "AD",
            Class::Control => "non-AD",
        }
    }
}

impl From<Class> for Label {
    fn from(c: Class) -> Label {
        match c {
            Class::Ad => Label::Ad,
            Class::Control => Label::Control,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            _ => Err(Error::Invalid(format!("unknown partition {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub label: Label,
    pub gender: Gender,
    pub partition: Partition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
}

/// The dataset manifest, stored as a JSON array of subject records. Paths
/// inside are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub subjects: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.check()?;
        Ok(manifest)
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.subjects {
            if r.id.is_empty() {
                return Err(Error::Invalid("manifest contains an empty subject id".into()));
            }
            if !seen.insert(&r.id) {
                return Err(Error::subject(&r.id, "listed more than once in the manifest"));
            }
            if r.label == Label::Unknown && r.partition != Partition::Test {
                return Err(Error::subject(&r.id, format!("{} subject without a label", r.partition)));
            }
        }
        Ok(())
    }

    pub fn in_partition(&self, p: Partition) -> Vec<SubjectRecord> {
        self.subjects.iter().filter(|r| r.partition == p).cloned().collect()
    }
}

/// Splits training subjects into train and development parts, stratified by
/// (label, gender).
///
/// The number of development subjects is `round(dev_fraction * n)`. It is
/// apportioned first across labels and then across genders within a label by
/// largest remainder, so every cell receives the floor or the ceiling of its
/// exact share and the label totals stay as even as the input allows. Inside
/// a cell, members are sorted by id and drawn with a seeded shuffle.
pub fn split_train_dev(
    records: &[SubjectRecord],
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Split(format!("dev fraction {dev_fraction} is outside (0, 1)")));
    }
    let mut cells: BTreeMap<(Class, Gender), Vec<&SubjectRecord>> = BTreeMap::new();
    for r in records {
        let class = r
            .label
            .class()
            .ok_or_else(|| Error::Split(format!("subject {} has no label", r.id)))?;
        cells.entry((class, r.gender)).or_default().push(r);
    }

    let total_dev = (dev_fraction * records.len() as f64).round() as usize;

    let mut by_label: BTreeMap<Class, usize> = BTreeMap::new();
    for (&(class, _), members) in &cells {
        *by_label.entry(class).or_default() += members.len();
    }
    let label_sizes: Vec<(Class, usize)> = by_label.into_iter().collect();
    let label_alloc = apportion(total_dev, &label_sizes.iter().map(|&(_, n)| n).collect::<Vec<_>>());

    let mut alloc: BTreeMap<(Class, Gender), usize> = BTreeMap::new();
    for (&(class, _), &label_dev) in label_sizes.iter().zip(&label_alloc) {
        let keys: Vec<(Class, Gender)> = cells.keys().copied().filter(|k| k.0 == class).collect();
        let sizes: Vec<usize> = keys.iter().map(|k| cells[k].len()).collect();
        for (k, n) in keys.into_iter().zip(apportion(label_dev, &sizes)) {
            alloc.insert(k, n);
        }
    }

    if total_dev == 0 {
        return Err(Error::Split(format!(
            "fraction {dev_fraction} of {} subjects leaves the development set empty",
            records.len()
        )));
    }
    // A label whose cells all go to development leaves nothing to train on.
    let starved: Vec<String> = label_sizes
        .iter()
        .zip(&label_alloc)
        .filter(|(&(_, size), &dev)| dev >= size)
        .flat_map(|(&(class, _), _)| cells.iter().filter(move |((c, _), _)| *c == class))
        .map(|((class, gender), members)| {
            format!("{class}/{gender:?} ({} subjects, {} requested for dev)", members.len(), alloc[&(*class, *gender)])
        })
        .collect();
    if !starved.is_empty() {
        return Err(Error::Split(format!(
            "fraction {dev_fraction} leaves no training subjects in: {}",
            starved.join(", ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (key, mut members) in cells {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let n_dev = alloc[&key];
        dev.extend(members[..n_dev].iter().map(|r| SubjectRecord {
            partition: Partition::Dev,
            ..(*r).clone()
        }));
        train.extend(members[n_dev..].iter().map(|r| (*r).clone()));
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    dev.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, dev))
}

/// Largest-remainder apportionment of `total` across groups of the given
/// sizes. Remainder ties go to the larger group, then to the earlier one.
fn apportion(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainders compared exactly as (total * s) mod n.
    order.sort_by(|&a, &b| {
        let ra = (total * sizes[a]) % n;
        let rb = (total * sizes[b]) % n;
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Column threshold below which a standard deviation counts as zero.
pub const CONSTANT_EPSILON: f64 = 1e-12;

/// Per-column z-score transform fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    pub epsilon: f64,
}

impl Scaler {
    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn is_constant(&self, column: usize) -> bool {
        self.stds[column] < self.epsilon
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.width()).filter(|&c| self.is_constant(c)).collect()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(c, &x)| {
                if self.is_constant(c) {
                    0.0
                } else {
                    (x - self.means[c]) / self.stds[c]
                }
            })
            .collect())
    }
}

pub fn fit_scaler(matrix: &DesignMatrix) -> Result<Scaler> {
    let n = matrix.rows.len();
    if n < 2 {
        return Err(Error::Invalid(format!("scaler needs at least 2 rows, got {n}")));
    }
    let width = matrix.width();
    let mut means = vec![0.0; width];
    for row in &matrix.rows {
        means.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    means.iter_mut().for_each(|m| *m /= n as f64);

    let mut vars = vec![0.0; width];
    for row in &matrix.rows {
        for ((v, x), m) in vars.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let stds = vars.into_iter().map(|v| (v / n as f64).sqrt()).collect();
    Ok(Scaler {
        means,
        stds,
        epsilon: CONSTANT_EPSILON,
    })
}

pub fn apply_scaler(scaler: &Scaler, matrix: &DesignMatrix) -> Result<DesignMatrix> {
    let rows = matrix
        .rows
        .iter()
        .map(|r| scaler.transform_row(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignMatrix { rows, ..matrix.clone() })
}

/// One row per instance. An instance is a whole description or one of its
/// sentences; `subjects` names the description each row belongs to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DesignMatrix {
    pub ids: Vec<String>,
    pub subjects: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Class>,
}

impl DesignMatrix {
    pub fn new(ids: Vec<String>, subjects: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<Class>) -> Result<Self> {
        let n = rows.len();
        if ids.len() != n || subjects.len() != n || labels.len() != n {
            return Err(Error::Invalid(format!(
                "design matrix parts disagree: {} ids, {} subjects, {n} rows, {} labels",
                ids.len(),
                subjects.len(),
                labels.len()
            )));
        }
        if let Some(first) = rows.first() {
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
                return Err(Error::Invalid(format!(
                    "row {} ({}) has width {}, expected {}",
                    i,
                    ids[i],
                    r.len(),
                    first.len()
                )));
            }
        }
        Ok(DesignMatrix { ids, subjects, rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Writes `id,label,f0,f1,...` followed by one line per row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.width()).map(|c| format!("f{c}")));
        w.write_record(&header)?;
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![id.clone(), format!("{}", label.sign() as i8)];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Concatenates named feature parts in the given order.
pub fn early_fuse(instance: &str, parts: &[(&str, Option<&[f64]>)]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(parts.iter().map(|(_, p)| p.map_or(0, <[f64]>::len)).sum());
    for (name, part) in parts {
        let part = part.ok_or_else(|| Error::subject(instance, format!("missing feature part {name}")))?;
        out.extend_from_slice(part);
    }
    Ok(out)
}
