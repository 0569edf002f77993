//! Feature/label bundles: synthetic generation, binary file codecs and splits.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::model::{read_exact, read_u32};
use crate::scalar::Scalar;

const FEATURES_MAGIC: &[u8; 4] = b"SHFT";
const LABELS_MAGIC: &[u8; 4] = b"SHLB";
const FORMAT_VERSION: u32 = 1;

/// `N x d` features and `N` label vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: Array2<f32>,
    pub labels: Vec<LabelVector>,
}

impl DatasetBundle {
    pub fn new(features: Array2<f32>, labels: Vec<LabelVector>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "bundle labels",
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some(first) = labels.first() {
            let c = first.num_classes();
            if let Some((record, l)) = labels.iter().enumerate().find(|(_, l)| l.num_classes() != c) {
                return Err(Error::Record {
                    record,
                    reason: format!("label vector has {} classes, expected {c}", l.num_classes()),
                });
            }
        }
        if let Some(record) = features.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Record {
                record,
                reason: "non-finite feature".into(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.first().map_or(0, LabelVector::num_classes)
    }

    /// Rows `ids` converted to the model scalar.
    pub fn features_of<T: Scalar>(&self, ids: &[usize]) -> Array2<T> {
        let mut out = Array2::zeros((ids.len(), self.feature_dim()));
        for (r, &id) in ids.iter().enumerate() {
            for (dst, &src) in out.row_mut(r).iter_mut().zip(self.features.row(id)) {
                *dst = T::of(f64::from(src));
            }
        }
        out
    }

    pub fn labels_of(&self, ids: &[usize]) -> Vec<LabelVector> {
        ids.iter().map(|&id| self.labels[id].clone()).collect()
    }

    pub fn write_features<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURES_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.feature_dim() as u32).to_le_bytes())?;
        for v in self.features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn write_labels<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(LABELS_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.num_classes() as u32).to_le_bytes())?;
        for l in &self.labels {
            w.write_all(l.flags())?;
        }
        w.flush()
    }

    pub fn export(&self, features: &Path, labels: &Path) -> Result<()> {
        write_file(features, |w| self.write_features(w))?;
        write_file(labels, |w| self.write_labels(w))
    }

    /// Loads and validates a feature file and a label file.
    pub fn ingest(features: &Path, labels: &Path) -> Result<Self> {
        let x = read_file(features, read_features)?;
        let l = read_file(labels, read_labels)?;
        if x.nrows() != l.len() {
            return Err(Error::Format {
                path: labels.to_path_buf(),
                reason: format!("{} label records but {} feature records", l.len(), x.nrows()),
            });
        }
        Self::new(x, l)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(&mut std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn read_file<V>(path: &Path, f: impl FnOnce(&mut dyn Read, &Path) -> Result<V>) -> Result<V> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f(&mut std::io::BufReader::new(file), path)
}

fn read_header(r: &mut dyn Read, path: &Path, magic: &[u8; 4]) -> Result<(usize, usize)> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, path)?;
    if &m != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("bad magic {m:?}, expected {}", String::from_utf8_lossy(magic)),
        });
    }
    let version = read_u32(r, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version}"),
        });
    }
    Ok((read_u32(r, path)? as usize, read_u32(r, path)? as usize))
}

fn expect_eof(r: &mut dyn Read, path: &Path) -> Result<()> {
    let mut b = [0u8; 1];
    if r.read(&mut b).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "trailing bytes after last record".into(),
        });
    }
    Ok(())
}

pub fn read_features(r: &mut dyn Read, path: &Path) -> Result<Array2<f32>> {
    let (n, d) = read_header(r, path, FEATURES_MAGIC)?;
    if d == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "feature dimension is zero".into(),
        });
    }
    let mut row = vec![0u8; d * 4];
    let mut values = Vec::with_capacity(n * d);
    for record in 0..n {
        read_exact(r, &mut row, path)?;
        for chunk in row.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(Error::Record {
                    record,
                    reason: "non-finite feature".into(),
                });
            }
            values.push(v);
        }
    }
    expect_eof(r, path)?;
    Ok(Array2::from_shape_vec((n, d), values).expect("n*d values"))
}

pub fn read_labels(r: &mut dyn Read, path: &Path) -> Result<Vec<LabelVector>> {
    let (n, c) = read_header(r, path, LABELS_MAGIC)?;
    if c == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "class count is zero".into(),
        });
    }
    let mut row = vec![0u8; c];
    let mut out = Vec::with_capacity(n);
    for record in 0..n {
        read_exact(r, &mut row, path)?;
        let l = LabelVector::new(row.clone()).map_err(|e| Error::Record {
            record,
            reason: e.to_string(),
        })?;
        out.push(l);
    }
    expect_eof(r, path)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_items: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub label_density: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Items with random label sets and features summed from per-class Gaussian
/// prototypes plus isotropic noise.
///
/// Each class is drawn independently with probability `label_density`; empty
/// draws are redrawn.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    let bad = |m: String| Err(Error::InvalidParameter(m));
    if spec.num_classes < 2 {
        return bad(format!("need at least 2 classes, got {}", spec.num_classes));
    }
    if !(spec.label_density > 0.0 && spec.label_density < 1.0) {
        return bad(format!("label density must be in (0, 1), got {}", spec.label_density));
    }
    if spec.feature_dim == 0 || spec.num_items == 0 {
        return bad("item count and feature dimension must be positive".into());
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return bad(format!("noise must be >= 0, got {}", spec.noise));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Array2<f64> =
        Array2::from_shape_simple_fn((spec.num_classes, spec.feature_dim), || rng.sample(StandardNormal));

    let mut features = Array2::<f32>::zeros((spec.num_items, spec.feature_dim));
    let mut labels = Vec::with_capacity(spec.num_items);
    for i in 0..spec.num_items {
        let flags = loop {
            let f: Vec<u8> = (0..spec.num_classes)
                .map(|_| u8::from(rng.random_bool(spec.label_density)))
                .collect();
            if f.contains(&1) {
                break f;
            }
        };
        let mut row = features.row_mut(i);
        for (k, &flag) in flags.iter().enumerate() {
            if flag == 1 {
                for (dst, &p) in row.iter_mut().zip(prototypes.row(k)) {
                    *dst += p as f32;
                }
            }
        }
        if spec.noise > 0.0 {
            for dst in row.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *dst += (spec.noise * n) as f32;
            }
        }
        labels.push(LabelVector::new(flags)?);
    }
    DatasetBundle::new(features, labels)
}

/// Which items form the retrieval database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatabaseMode {
    /// Every non-query item, training items included.
    #[default]
    Remainder,
    /// Non-query items that are not training items.
    ExcludeTrain,
    /// Every item, queries included.
    All,
}

impl std::str::FromStr for DatabaseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remainder" => Ok(DatabaseMode::Remainder),
            "exclude-train" => Ok(DatabaseMode::ExcludeTrain),
            "all" => Ok(DatabaseMode::All),
            other => Err(Error::InvalidParameter(format!(
                "unknown database mode '{other}' (expected remainder, exclude-train or all)"
            ))),
        }
    }
}

impl std::fmt::Display for DatabaseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatabaseMode::Remainder => "remainder",
            DatabaseMode::ExcludeTrain => "exclude-train",
            DatabaseMode::All => "all",
        })
    }
}

/// Split sizes; `None` means the default fraction of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitSpec {
    pub query: Option<usize>,
    pub train: Option<usize>,
    pub database: DatabaseMode,
}

/// Item ids per role, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub query: Vec<usize>,
    pub train: Vec<usize>,
    pub database: Vec<usize>,
}

impl Splits {
    /// Seeded shuffle: the first `query` items are queries, the next `train`
    /// are training items. Defaults are 10% queries and 40% training.
    pub fn draw(n: usize, spec: &SplitSpec, seed: u64) -> Result<Self> {
        let query = spec.query.unwrap_or(n / 10);
        let train = spec.train.unwrap_or(n * 2 / 5);
        if query == 0 {
            return Err(Error::InvalidParameter("query split is empty".into()));
        }
        if query + train > n {
            return Err(Error::InvalidParameter(format!(
                "query ({query}) + train ({train}) exceed dataset size {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut q = order[..query].to_vec();
        let mut t = order[query..query + train].to_vec();
        let mut db = match spec.database {
            DatabaseMode::Remainder => order[query..].to_vec(),
            DatabaseMode::ExcludeTrain => order[query + train..].to_vec(),
            DatabaseMode::All => order.clone(),
        };
        q.sort_unstable();
        t.sort_unstable();
        db.sort_unstable();
        if db.is_empty() {
            return Err(Error::InvalidParameter("database split is empty".into()));
        }
        Ok(Self {
            query: q,
            train: t,
            database: db,
        })
    }
}
