//! Datasets: loading, splitting, and synthetic generators.
//!
//! A [`Dataset`] stores features column-major (one `Vec<f64>` per feature) so
//! split search can scan a feature without striding. Labels are kept as
//! `-1.0` / `+1.0` everywhere; raw `{0, 1}` labels are converted on load.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::costmodel::BagAssignment;
use crate::error::{GbfsError, Result};

#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    labels: Vec<f64>,
    feature_names: Option<Vec<String>>,
    /// Per feature, sample indices sorted by value (ties by index).
    sorted: OnceLock<Vec<Vec<u32>>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
            && self.labels == other.labels
            && self.feature_names == other.feature_names
    }
}

impl Dataset {
    /// Builds a dataset from feature columns, checking every invariant.
    pub fn new(
        columns: Vec<Vec<f64>>,
        labels: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(GbfsError::InvalidDataset("no samples".into()));
        }
        if columns.is_empty() {
            return Err(GbfsError::InvalidDataset("no features".into()));
        }
        for (f, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(GbfsError::InvalidDataset(format!(
                    "feature {f} has {} entries, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(GbfsError::InvalidDataset(format!(
                    "non-finite value at sample {i}, feature {f}"
                )));
            }
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(GbfsError::InvalidDataset(format!(
                "label {} at sample {i} is not -1 or +1",
                labels[i]
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != columns.len() {
                return Err(GbfsError::InvalidDataset(format!(
                    "{} feature names for {} features",
                    names.len(),
                    columns.len()
                )));
            }
        }
        if n > u32::MAX as usize {
            return Err(GbfsError::InvalidDataset(format!("{n} samples is too many")));
        }
        Ok(Dataset {
            columns,
            labels,
            feature_names,
            sorted: OnceLock::new(),
        })
    }

    /// Builds a dataset from row-major feature vectors.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(GbfsError::DimensionMismatch {
                expected: labels.len(),
                found: rows.len(),
            });
        }
        let d = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(GbfsError::InvalidDataset(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Dataset::new(columns, labels, feature_names)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn value(&self, sample: usize, feature: usize) -> f64 {
        self.columns[feature][sample]
    }

    pub fn row(&self, sample: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[sample]).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Display name of a feature: its header name when known, else `f<index>`.
    pub fn feature_name(&self, feature: usize) -> String {
        match &self.feature_names {
            Some(names) => names[feature].clone(),
            None => format!("f{feature}"),
        }
    }

    /// Sample indices ordered by the value of `feature`, ties by index.
    pub(crate) fn sorted_order(&self, feature: usize) -> &[u32] {
        let sorted = self.sorted.get_or_init(|| {
            self.columns
                .iter()
                .map(|col| {
                    let mut order: Vec<u32> = (0..col.len() as u32).collect();
                    order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                    order
                })
                .collect()
        });
        &sorted[feature]
    }

    /// Rows `indices` (in that order) as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let n = self.n_samples();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(GbfsError::InvalidArgument(format!(
                "sample index {bad} out of range for {n} samples"
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| indices.iter().map(|&i| c[i]).collect())
            .collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(columns, labels, self.feature_names.clone())
    }

    /// Writes the dataset as CSV with a header and a trailing `label` column.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so a reload through [`load_csv`] is bit-exact.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| GbfsError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header: Vec<String> = (0..self.n_features())
            .map(|f| self.feature_name(f))
            .chain(std::iter::once("label".to_string()))
            .collect();
        let write = |out: &mut BufWriter<File>, line: String| {
            writeln!(out, "{line}").map_err(|e| GbfsError::io(path, e))
        };
        write(&mut out, header.join(","))?;
        for i in 0..self.n_samples() {
            let mut cells: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            cells.push(if self.labels[i] > 0.0 { "1" } else { "-1" }.to_string());
            write(&mut out, cells.join(","))?;
        }
        out.flush().map_err(|e| GbfsError::io(path, e))
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
    #[default]
    Last,
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) if s == "last" => LabelColumn::Last,
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Name(s) => f.write_str(s),
            LabelColumn::Last => f.write_str("last"),
        }
    }
}

fn parse_label(raw: &str) -> Option<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 1.0 => Some(1.0),
        Ok(v) if v == 0.0 || v == -1.0 => Some(-1.0),
        _ => None,
    }
}

/// Loads a comma-separated file. A header row is assumed iff any cell of the
/// first row is non-numeric.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GbfsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| GbfsError::InvalidDataset(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(GbfsError::InvalidDataset(format!("{} is empty", path.display())));
    }

    let has_header = records[0].1.iter().any(|c| c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = if has_header {
        Some(records.remove(0).1.iter().map(str::to_string).collect())
    } else {
        None
    };
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| records.first().map(|r| r.1.len()))
        .unwrap_or(0);
    if width < 2 {
        return Err(GbfsError::InvalidDataset(format!(
            "{} needs at least one feature column and a label column",
            path.display()
        )));
    }

    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(GbfsError::InvalidArgument(format!(
                "label column {i} out of range for {width} columns"
            )))
        }
        LabelColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| {
                GbfsError::InvalidArgument(format!(
                    "label column {name:?} not found in header of {}",
                    path.display()
                ))
            })?,
        LabelColumn::Last => width - 1,
    };

    let d = width - 1;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(records.len()); d];
    let mut labels = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(GbfsError::RaggedRow {
                path: path.to_path_buf(),
                row: *line,
                expected: width,
                found: rec.len(),
            });
        }
        let mut f = 0;
        for (c, cell) in rec.iter().enumerate() {
            if c == label_idx {
                let y = parse_label(cell).ok_or_else(|| GbfsError::InvalidLabel {
                    path: path.to_path_buf(),
                    row: *line,
                    value: cell.to_string(),
                })?;
                labels.push(y);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| GbfsError::Parse {
                path: path.to_path_buf(),
                row: *line,
                column: c + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(GbfsError::Parse {
                    path: path.to_path_buf(),
                    row: *line,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            columns[f].push(v);
            f += 1;
        }
    }

    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|&(c, _)| c != label_idx)
            .map(|(_, name)| name)
            .collect()
    });
    Dataset::new(columns, labels, names)
}

/// Loads a CSV file in which every column is a feature, returning rows.
/// A header row is skipped if present.
pub fn load_csv_features(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GbfsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| GbfsError::InvalidDataset(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if k == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            width = Some(rec.len());
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(GbfsError::RaggedRow {
                path: path.to_path_buf(),
                row: line,
                expected,
                found: rec.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (c, cell) in rec.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(GbfsError::Parse {
                        path: path.to_path_buf(),
                        row: line,
                        column: c + 1,
                        message: format!("bad value {cell:?}"),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GbfsError::InvalidDataset(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Loads a LIBSVM/SVMlight file (`label idx:val ...`, 1-based indices).
/// Missing entries are zero. `num_features` fixes `d`; otherwise `d` is the
/// largest index seen.
pub fn load_libsvm(path: impl AsRef<Path>, num_features: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GbfsError::io(path, e))?;
    let err = |line: usize, message: String| GbfsError::Libsvm {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| GbfsError::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let raw_label = tokens.next().unwrap_or_default();
        let y = parse_label(raw_label).ok_or_else(|| GbfsError::InvalidLabel {
            path: path.to_path_buf(),
            row: lineno,
            value: raw_label.to_string(),
        })?;

        let mut entries = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("malformed entry {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err(lineno, "feature indices are 1-based".into()));
            }
            if idx == prev {
                return Err(err(lineno, format!("duplicate feature index {idx}")));
            }
            if idx < prev {
                return Err(err(lineno, format!("non-increasing feature index {idx} after {prev}")));
            }
            if let Some(nf) = num_features {
                if idx > nf {
                    return Err(err(lineno, format!("feature index {idx} exceeds {nf} features")));
                }
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric value {val:?}")))?;
            if !val.is_finite() {
                return Err(err(lineno, format!("non-finite value {val:?}")));
            }
            prev = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(prev);
        rows.push(entries);
        labels.push(y);
    }

    let d = num_features.unwrap_or(max_index);
    let mut columns = vec![vec![0.0; rows.len()]; d];
    for (i, entries) in rows.iter().enumerate() {
        for &(f, v) in entries {
            columns[f][i] = v;
        }
    }
    Dataset::new(columns, labels, None)
}

/// Random partition into `(train, test)`; the train part has
/// `floor(n * train_fraction)` rows. Row order inside each part follows the
/// shuffled permutation.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GbfsError::InvalidArgument(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n = ds.n_samples();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(GbfsError::InvalidArgument(format!(
            "fraction {train_fraction} of {n} samples leaves an empty part"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.subset(&perm[..n_train])?, ds.subset(&perm[n_train..])?))
}

fn xyz_names() -> Option<Vec<String>> {
    Some(vec!["x".into(), "y".into(), "z".into()])
}

/// Label rule of the XOR generator: `+1` iff `x * y > 0`.
pub fn xor_label(x: f64, y: f64) -> f64 {
    if x * y > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Three features `(x, y, z = x + y)` with `x, y ~ U[-1, 1]` and label
/// `sign(x * y)`. Rows with `|x * y| < 0.05` are redrawn.
///
/// Note that greedy trees find `z` attractive here: `|z| > 1` forces both
/// coordinates to share a sign, so those regions are label-pure.
/// [`make_synthetic_box`] keeps `z` redundant without that shortcut.
pub fn make_synthetic_xor(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(GbfsError::InvalidArgument(format!("need n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while rows.len() < n {
        let x: f64 = rng.gen_range(-1.0..=1.0);
        let y: f64 = rng.gen_range(-1.0..=1.0);
        if (x * y).abs() < 0.05 {
            continue;
        }
        rows.push(vec![x, y, x + y]);
        labels.push(xor_label(x, y));
    }
    Dataset::from_rows(&rows, labels, xyz_names())
}

/// Half-width of the centred square used by [`make_synthetic_box`]; the
/// square covers half of `[-1, 1]^2`, so classes are balanced.
pub const BOX_HALF_WIDTH: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Label rule of the box generator: `+1` iff `max(|x|, |y|) < 1/sqrt(2)`.
pub fn box_label(x: f64, y: f64) -> f64 {
    if x.abs().max(y.abs()) < BOX_HALF_WIDTH {
        1.0
    } else {
        -1.0
    }
}

/// Three features `(x, y, z = x + y)` with `x, y ~ U[-1, 1]`; the label is
/// `+1` inside the centred square of half-width `1/sqrt(2)`. Not linearly
/// separable in `(x, y)` or `(x, y, z)`, separable by axis-aligned splits on
/// `x` and `y`. Rows within 0.05 of the square's boundary are redrawn.
pub fn make_synthetic_box(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(GbfsError::InvalidArgument(format!("need n >= 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while rows.len() < n {
        let x: f64 = rng.gen_range(-1.0..=1.0);
        let y: f64 = rng.gen_range(-1.0..=1.0);
        if (x.abs().max(y.abs()) - BOX_HALF_WIDTH).abs() < 0.05 {
            continue;
        }
        rows.push(vec![x, y, x + y]);
        labels.push(box_label(x, y));
    }
    Dataset::from_rows(&rows, labels, xyz_names())
}

/// Shape of a synthetic dataset whose features come in bags.
#[derive(Debug, Clone, PartialEq)]
pub struct BaggedDataConfig {
    pub n: usize,
    pub n_bags: usize,
    pub bag_size: usize,
    /// Bag holding the three informative features (its first three members).
    pub signal_bag: usize,
    /// Probability of flipping each label.
    pub label_noise: f64,
}

impl Default for BaggedDataConfig {
    fn default() -> Self {
        BaggedDataConfig {
            n: 200,
            n_bags: 10,
            bag_size: 20,
            signal_bag: 3,
            label_noise: 0.1,
        }
    }
}

/// Features `~ U[-1, 1]`, grouped into contiguous bags. The label is `+1` iff
/// the three informative features all lie inside `(-c, c)` with
/// `c = 0.5^(1/3)`, then flipped with probability `label_noise`.
pub fn make_synthetic_bags(
    config: &BaggedDataConfig,
    seed: u64,
) -> Result<(Dataset, BagAssignment)> {
    let BaggedDataConfig {
        n,
        n_bags,
        bag_size,
        signal_bag,
        label_noise,
    } = *config;
    if n < 4 || n_bags == 0 || bag_size < 3 || signal_bag >= n_bags {
        return Err(GbfsError::InvalidArgument(format!(
            "invalid bagged data config {config:?}"
        )));
    }
    if !(0.0..0.5).contains(&label_noise) {
        return Err(GbfsError::InvalidArgument(format!(
            "label noise {label_noise} must lie in [0, 0.5)"
        )));
    }
    let d = n_bags * bag_size;
    let informative = [
        signal_bag * bag_size,
        signal_bag * bag_size + 1,
        signal_bag * bag_size + 2,
    ];
    let cutoff = 0.5f64.powf(1.0 / 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let labels = (0..n)
        .map(|i| {
            let inside = informative.iter().all(|&f| columns[f][i].abs() < cutoff);
            let y = if inside { 1.0 } else { -1.0 };
            if rng.gen::<f64>() < label_noise {
                -y
            } else {
                y
            }
        })
        .collect();
    let bag_of = (0..d).map(|f| f / bag_size).collect::<Vec<_>>();
    let bags = BagAssignment::from_indices(&bag_of)?;
    Ok((Dataset::new(columns, labels, None)?, bags))
}
