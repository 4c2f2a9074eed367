//! Datasets, synthetic generators, CSV ingestion and the corruption
//! protocols (label noise, class imbalance, low-resource subsampling).
//!
//! Corruption operations are pure: they take a dataset by reference and
//! return a new one. They refuse to touch a dev split. Counts are exact
//! (`floor(ratio·N)` noisy labels, `ceil((1−r)·n_c)` kept minority rows)
//! rather than per-row coin flips.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Targets;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    targets: Targets,
    num_classes: Option<usize>,
    split: Split,
}

/// `floor(ratio · n)`, snapping products that land within rounding error of
/// an integer (`0.7 · 10` is `7.000000000000001` in binary floating point).
pub fn floor_fraction(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// `ceil((1 − ratio) · n)`, computed as `n − floor(ratio · n)`.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    n - floor_fraction(ratio, n).min(n)
}

impl Dataset {
    pub fn classification(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (rows, _) = features.dims2()?;
        if labels.len() != rows {
            return Err(Error::shape(format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Self::checked(features, Targets::Classes(labels), Some(num_classes))
    }

    pub fn regression(features: Tensor, values: Vec<f64>) -> Result<Self> {
        let (rows, _) = features.dims2()?;
        if values.len() != rows {
            return Err(Error::shape(format!("{} targets for {rows} rows", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite regression target"));
        }
        Self::checked(features, Targets::Values(values), None)
    }

    fn checked(features: Tensor, targets: Targets, num_classes: Option<usize>) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Dataset {
            features,
            targets,
            num_classes,
            split: Split::Train,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn task(&self) -> TaskKind {
        match self.targets {
            Targets::Classes(_) => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    /// Rows `rows` (in that order) as a batch.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, Targets)> {
        let d = self.dim();
        let mut x = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            x.extend_from_slice(self.features.row(r));
        }
        Ok((Tensor::new(vec![rows.len(), d], x)?, self.targets.select(rows)))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::Empty("row selection".into()));
        }
        let (features, targets) = self.batch(rows)?;
        Ok(Dataset {
            features,
            targets,
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    fn require_train(&self, what: &str) -> Result<()> {
        if self.split != Split::Train {
            return Err(Error::invalid(format!("{what} applies to the train split only")));
        }
        Ok(())
    }
}

/// Two unit-variance Gaussian classes centred at `∓separation/2` on axis 0.
/// The first `n/2` rows are class 0.
pub fn make_blobs(n: usize, d: usize, separation: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) || d == 0 {
        return Err(Error::invalid(format!(
            "make_blobs needs even n > 0 and d >= 1, got n={n} d={d}"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n / 2);
        let centre = if class == 0 {
            -separation / 2.0
        } else {
            separation / 2.0
        };
        for j in 0..d {
            let offset = if j == 0 { centre } else { 0.0 };
            x.push(offset + rng.normal());
        }
        labels.push(class);
    }
    Dataset::classification(Tensor::new(vec![n, d], x)?, labels, 2)
}

/// Four Gaussian clusters at `(±1, ±1)`; label 1 where the coordinate signs differ.
pub fn make_xor(n: usize, noise_std: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::invalid(format!("make_xor needs n divisible by 4, got {n}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(format!("noise std must be >= 0, got {noise_std}")));
    }
    const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
    let mut x = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (cx, cy) = CORNERS[i % 4];
        x.push(cx + noise_std * rng.normal());
        x.push(cy + noise_std * rng.normal());
        labels.push(usize::from((cx > 0.0) != (cy > 0.0)));
    }
    Dataset::classification(Tensor::new(vec![n, 2], x)?, labels, 2)
}

/// Replace exactly `floor(ratio·N)` distinct labels, each with a uniformly
/// drawn *different* class.
pub fn inject_label_noise(ds: &Dataset, ratio: f64, rng: &mut RngStream) -> Result<Dataset> {
    ds.require_train("label noise")?;
    let (Some(labels), Some(classes)) = (ds.labels(), ds.num_classes) else {
        return Err(Error::invalid("label noise needs a classification dataset"));
    };
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("noise ratio {ratio} outside [0, 1]")));
    }
    let count = floor_fraction(ratio, ds.len());
    if count > 0 && classes < 2 {
        return Err(Error::invalid("label noise needs at least two classes"));
    }
    let mut noisy = labels.to_vec();
    for i in index::sample(rng, ds.len(), count) {
        let draw = rng.below(classes - 1);
        noisy[i] = if draw < labels[i] { draw } else { draw + 1 };
    }
    Ok(Dataset {
        features: ds.features.clone(),
        targets: Targets::Classes(noisy),
        num_classes: ds.num_classes,
        split: ds.split,
    })
}

/// Keep `ceil((1 − reduction)·n_c)` rows of `minority`, sampled without
/// replacement; all other rows and their order are untouched.
pub fn make_imbalanced(ds: &Dataset, minority: usize, reduction: f64, rng: &mut RngStream) -> Result<Dataset> {
    ds.require_train("imbalance")?;
    let Some(labels) = ds.labels() else {
        return Err(Error::invalid("imbalance needs a classification dataset"));
    };
    if !(0.0..1.0).contains(&reduction) {
        return Err(Error::invalid(format!("reduction ratio {reduction} outside [0, 1)")));
    }
    let members: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == minority).collect();
    if members.is_empty() {
        return Err(Error::invalid(format!("class {minority} is absent")));
    }
    let keep = keep_count(reduction, members.len());
    let mut kept = vec![false; members.len()];
    for j in index::sample(rng, members.len(), keep) {
        kept[j] = true;
    }
    let mut dropped = vec![false; ds.len()];
    for (j, &row) in members.iter().enumerate() {
        dropped[row] = !kept[j];
    }
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| !dropped[i]).collect();
    ds.select_rows(&rows)
}

/// Uniform sample of `size` rows without replacement, in draw order.
pub fn subsample(ds: &Dataset, size: usize, rng: &mut RngStream) -> Result<Dataset> {
    ds.require_train("subsampling")?;
    if size > ds.len() {
        return Err(Error::invalid(format!("subsample of {size} from {} rows", ds.len())));
    }
    ds.select_rows(&index::sample(rng, ds.len(), size).into_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub task: TaskKind,
    pub split: Split,
}

/// Rows of `label,f1,...,fd`; an optional first line starting with `label,`
/// is treated as a header. Class labels must be non-negative integers and
/// the class count is `max label + 1`.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let mut width: Option<usize> = None;
    let mut x = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && record.get(0) == Some("label") {
            continue;
        }
        if record.len() < 2 {
            return Err(parse_err(line, "expected a label and at least one feature".into()));
        }
        let d = record.len() - 1;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(line, format!("expected {w} features, found {d}")));
            }
            _ => {}
        }
        let label = &record[0];
        match schema.task {
            TaskKind::Classification => classes.push(
                label
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, format!("class label `{label}` is not a non-negative integer")))?,
            ),
            TaskKind::Regression => values.push(
                label
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("target `{label}` is not a finite number")))?,
            ),
        }
        for field in record.iter().skip(1) {
            let v = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("feature `{field}` is not a finite number")))?;
            x.push(v);
        }
    }
    let Some(d) = width else {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    };
    let rows = x.len() / d;
    let features = Tensor::new(vec![rows, d], x)?;
    let ds = match schema.task {
        TaskKind::Classification => {
            let c = classes.iter().max().map_or(0, |m| m + 1).max(2);
            Dataset::classification(features, classes, c)?
        }
        TaskKind::Regression => Dataset::regression(features, values)?,
    };
    Ok(ds.with_split(schema.split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const CLS: CsvSchema = CsvSchema {
        task: TaskKind::Classification,
        split: Split::Train,
    };

    #[test]
    fn fraction_counts() {
        assert_eq!(floor_fraction(0.1, 100), 10);
        assert_eq!(floor_fraction(0.7, 10), 7);
        assert_eq!(floor_fraction(0.29, 100), 29);
        assert_eq!(floor_fraction(0.15, 7), 1);
        assert_eq!(keep_count(0.75, 1000), 250);
        assert_eq!(keep_count(0.5, 5), 3);
        assert_eq!(keep_count(0.0, 9), 9);
    }

    #[test]
    fn blobs_separable_at_large_separation() {
        let ds = make_blobs(4, 3, 100.0, &mut RngStream::new(0)).unwrap();
        let labels = ds.labels().unwrap();
        for (i, &label) in labels.iter().enumerate() {
            assert_eq!(usize::from(ds.features().row(i)[0] > 0.0), label);
        }
    }

    #[test]
    fn blobs_deterministic() {
        let a = make_blobs(10, 2, 1.0, &mut RngStream::new(5)).unwrap();
        let b = make_blobs(10, 2, 1.0, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blobs_rejects_bad_sizes() {
        let mut r = RngStream::new(0);
        assert!(make_blobs(3, 2, 1.0, &mut r).is_err());
        assert!(make_blobs(4, 0, 1.0, &mut r).is_err());
        assert!(make_blobs(4, 2, 0.0, &mut r).is_err());
    }

    #[test]
    fn xor_corners() {
        let ds = make_xor(8, 0.0, &mut RngStream::new(0)).unwrap();
        for i in 0..8 {
            let r = ds.features().row(i);
            assert!(r.iter().all(|v| v.abs() == 1.0));
            assert_eq!(ds.labels().unwrap()[i], usize::from(r[0] * r[1] < 0.0));
        }
        assert!(make_xor(6, 0.1, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn xor_deterministic() {
        let a = make_xor(40, 0.3, &mut RngStream::new(2)).unwrap();
        assert_eq!(a, make_xor(40, 0.3, &mut RngStream::new(2)).unwrap());
    }

    #[test]
    fn noise_ratio_zero_is_identity() {
        let ds = make_xor(20, 0.1, &mut RngStream::new(0)).unwrap();
        assert_eq!(inject_label_noise(&ds, 0.0, &mut RngStream::new(1)).unwrap(), ds);
    }

    #[test]
    fn full_noise_flips_binary() {
        let ds = make_xor(20, 0.1, &mut RngStream::new(0)).unwrap();
        let noisy = inject_label_noise(&ds, 1.0, &mut RngStream::new(1)).unwrap();
        for (a, b) in ds.labels().unwrap().iter().zip(noisy.labels().unwrap()) {
            assert_eq!(*b, 1 - a);
        }
    }

    #[test]
    fn noise_changes_exact_count() {
        let ds = make_blobs(100, 2, 1.0, &mut RngStream::new(0)).unwrap();
        let noisy = inject_label_noise(&ds, 0.1, &mut RngStream::new(3)).unwrap();
        let changed = ds
            .labels()
            .unwrap()
            .iter()
            .zip(noisy.labels().unwrap())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 10);
        assert_eq!(noisy.features(), ds.features());
    }

    #[test]
    fn multiclass_noise_picks_other_class() {
        let x = Tensor::zeros(&[30, 1]).unwrap();
        let ds = Dataset::classification(x, (0..30).map(|i| i % 3).collect(), 3).unwrap();
        let noisy = inject_label_noise(&ds, 1.0, &mut RngStream::new(8)).unwrap();
        let (a, b) = (ds.labels().unwrap(), noisy.labels().unwrap());
        assert!(a.iter().zip(b).all(|(x, y)| x != y && *y < 3));
    }

    #[test]
    fn noise_rejects_regression_and_dev() {
        let ds = Dataset::regression(Tensor::zeros(&[2, 1]).unwrap(), vec![0.0, 1.0]).unwrap();
        assert!(inject_label_noise(&ds, 0.5, &mut RngStream::new(0)).is_err());
        let dev = make_xor(8, 0.0, &mut RngStream::new(0)).unwrap().with_split(Split::Dev);
        assert!(inject_label_noise(&dev, 0.5, &mut RngStream::new(0)).is_err());
    }

    fn two_class(n0: usize, n1: usize) -> Dataset {
        let n = n0 + n1;
        let x = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        let labels = (0..n).map(|i| usize::from(i >= n0)).collect();
        Dataset::classification(x, labels, 2).unwrap()
    }

    #[test]
    fn imbalance_counts() {
        let ds = two_class(80, 100);
        let count1 = |d: &Dataset| d.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(make_imbalanced(&ds, 1, 0.0, &mut RngStream::new(0)).unwrap(), ds);
        assert_eq!(
            count1(&make_imbalanced(&ds, 1, 0.5, &mut RngStream::new(0)).unwrap()),
            50
        );
        let r = make_imbalanced(&ds, 1, 0.7, &mut RngStream::new(0)).unwrap();
        assert_eq!(count1(&r), 30);
        // Majority rows survive unchanged and in order.
        assert_eq!(&r.features().data()[..80], &ds.features().data()[..80]);
    }

    #[test]
    fn imbalance_errors() {
        let ds = two_class(5, 5);
        assert!(make_imbalanced(&ds, 2, 0.5, &mut RngStream::new(0)).is_err());
        assert!(make_imbalanced(&ds, 1, 1.0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn subsample_full_is_permutation() {
        let ds = two_class(10, 10);
        let s = subsample(&ds, 20, &mut RngStream::new(4)).unwrap();
        let mut v: Vec<f64> = s.features().data().to_vec();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, ds.features().data());
        assert!(subsample(&ds, 21, &mut RngStream::new(4)).is_err());
        assert_eq!(s, subsample(&ds, 20, &mut RngStream::new(4)).unwrap());
    }

    #[test]
    fn csv_basic() {
        let f = csv_file("1,0.5,0.25\n0,-0.5,0.1\n");
        let ds = load_csv(f.path(), CLS).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels().unwrap(), &[1, 0]);
        assert_eq!(ds.features().data(), &[0.5, 0.25, -0.5, 0.1]);
    }

    #[test]
    fn csv_header_skipped() {
        let f = csv_file("label,f1\n0,1.0\n1,2.0\n");
        assert_eq!(load_csv(f.path(), CLS).unwrap().len(), 2);
    }

    #[test]
    fn csv_width_error_names_line() {
        let f = csv_file("1,0.5,0.25\n0,0.1,0.2\n1,1,2,3\n");
        let err = load_csv(f.path(), CLS).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_empty_and_bad_values() {
        assert!(load_csv(csv_file("").path(), CLS).is_err());
        assert!(matches!(
            load_csv(csv_file("a,1.0\n").path(), CLS),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(load_csv(csv_file("1,nan\n").path(), CLS).is_err());
        let reg = CsvSchema {
            task: TaskKind::Regression,
            split: Split::Dev,
        };
        let ds = load_csv(csv_file("0.5,1\n-2,3\n").path(), reg).unwrap();
        assert_eq!(ds.split(), Split::Dev);
        assert_eq!(ds.targets(), &Targets::Values(vec![0.5, -2.0]));
    }
}
