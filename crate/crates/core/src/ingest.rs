//! Tabular dataset → cluster environment.
//!
//! Load a labelled CSV, standardise the numeric columns (sample variance,
//! `n - 1` denominator), append an intercept column, cluster the feature
//! rows with mini-batch k-means and turn each cluster's positive-label
//! fraction into an arm's reward rate.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::envs::{make_cluster_env, ClusterEnvironment};
use crate::error::{Error, Result};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Constant 1 column appended by [`standardize`].
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnKind,
}

/// Column layout of an input CSV: feature columns, the label column and
/// the label value treated as a reward of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
    #[serde(default)]
    pub positive_class: Option<String>,
}

impl TableSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: format!("invalid schema: {e}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: ColumnValues,
}

impl Column {
    pub fn numeric(&self) -> Option<&[f64]> {
        match &self.values {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Text(_) => None,
        }
    }
}

/// Labelled table, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Names of the columns that make up [`Dataset::features`].
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind != ColumnKind::Categorical)
            .map(|c| c.name.clone())
            .collect()
    }

    /// Row vectors over the numeric and intercept columns; categorical
    /// columns are left out.
    pub fn features(&self) -> Vec<Vec<f64>> {
        let cols: Vec<&[f64]> = self
            .columns
            .iter()
            .filter(|c| c.kind != ColumnKind::Categorical)
            .filter_map(|c| c.numeric())
            .collect();
        (0..self.len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }
}

fn load_error(path: &Path, message: String) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        message,
    }
}

/// Read a CSV with a header row. Every header column must be declared in
/// the schema, either as a feature column or as the label.
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| load_error(path, e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| load_error(path, e.to_string()))?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(load_error(path, "file is empty".into()));
    }

    let declared: HashMap<&str, ColumnKind> = schema
        .columns
        .iter()
        .map(|c| (c.name.as_str(), c.kind))
        .collect();
    let mut label_idx = None;
    for (i, h) in header.iter().enumerate() {
        if h == schema.label {
            label_idx = Some(i);
        } else if !declared.contains_key(h) {
            return Err(load_error(path, format!("column '{h}' is not in the schema")));
        }
    }
    let label_idx =
        label_idx.ok_or_else(|| load_error(path, format!("label column '{}' missing", schema.label)))?;
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| load_error(path, format!("schema column '{}' missing from header", c.name)))
        })
        .collect::<Result<_>>()?;
    if schema.columns.iter().any(|c| c.kind == ColumnKind::Intercept) {
        return Err(load_error(path, "intercept columns are added by standardize".into()));
    }

    let mut columns: Vec<Column> = schema
        .columns
        .iter()
        .map(|c| Column {
            name: c.name.clone(),
            kind: c.kind,
            values: match c.kind {
                ColumnKind::Categorical => ColumnValues::Text(Vec::new()),
                _ => ColumnValues::Numeric(Vec::new()),
            },
        })
        .collect();
    let mut labels = Vec::new();

    for (r, record) in reader.records().enumerate() {
        // header is line 1
        let row = r + 2;
        let record = record.map_err(|e| load_error(path, format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(load_error(
                path,
                format!("row {row} has {} fields, expected {}", record.len(), header.len()),
            ));
        }
        for (col, &pos) in columns.iter_mut().zip(&positions) {
            let cell = &record[pos];
            match &mut col.values {
                ColumnValues::Numeric(v) => {
                    let value: f64 = cell.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                        load_error(
                            path,
                            format!("row {row}, column '{}': '{cell}' is not a number", col.name),
                        )
                    })?;
                    v.push(value);
                }
                ColumnValues::Text(v) => v.push(cell.to_string()),
            }
        }
        labels.push(record[label_idx].to_string());
    }
    if labels.is_empty() {
        return Err(load_error(path, "no data rows".into()));
    }
    Ok(Dataset { columns, labels })
}

/// Centre and scale every numeric column to sample mean 0 and sample
/// variance 1, then append an intercept column unless one is present.
/// Applying it twice changes nothing beyond rounding.
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let n = data.len();
    let mut out = data.clone();
    let mut any_numeric = false;
    for col in out.columns.iter_mut().filter(|c| c.kind == ColumnKind::Numeric) {
        any_numeric = true;
        let ColumnValues::Numeric(values) = &mut col.values else {
            unreachable!("numeric columns hold numbers")
        };
        if n < 2 {
            return Err(Error::Transform(format!(
                "column '{}' needs at least two rows to standardize",
                col.name
            )));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if sd.is_nan() || sd <= 0.0 || sd <= 1e-12 * mean.abs() {
            return Err(Error::Transform(format!("column '{}' has zero variance", col.name)));
        }
        for v in values.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    if !any_numeric {
        return Err(Error::Transform("no numeric columns to standardize".into()));
    }
    if !out.columns.iter().any(|c| c.kind == ColumnKind::Intercept) {
        out.columns.push(Column {
            name: "intercept".into(),
            kind: ColumnKind::Intercept,
            values: ColumnValues::Numeric(vec![1.0; n]),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration (full-batch mode only).
    pub inertia_trace: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Nearest centroid and squared distance for every point.
fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(|p| nearest(p, centroids)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(|p| nearest(p, centroids)).collect()
    }
}

fn total(assigned: &[(usize, f64)]) -> f64 {
    // sequential sum keeps the result independent of thread count
    assigned.iter().map(|(_, d)| d).sum()
}

/// k-means++ seeding.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.index(points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let sum: f64 = dist.iter().sum();
        let pick = if sum > 0.0 {
            let target = rng.uniform() * sum;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).expect("sum > 0"))
        } else {
            rng.index(points.len())
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Mini-batch k-means with k-means++ seeding and per-centroid learning
/// rate `1 / (points absorbed so far)`.
///
/// When `batch_size >= points.len()` the batch is the whole data set and
/// plain Lloyd iterations are run instead, stopping early once the
/// assignment is stable; each iteration's inertia is recorded.
pub fn minibatch_kmeans(
    points: &[Vec<f64>],
    k: usize,
    batch_size: usize,
    iterations: usize,
    seed: u64,
) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot form {k} clusters from {n} points")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points have differing dimensions".into()));
    }
    let mut rng = RandomSource::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut inertia_trace = Vec::new();

    if batch_size >= n {
        let mut assigned = assign_all(points, &centroids);
        for _ in 0..iterations {
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &(c, _)) in points.iter().zip(&assigned) {
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(p) {
                    *s += x;
                }
            }
            for ((centroid, sum), &count) in centroids.iter_mut().zip(&sums).zip(&counts) {
                // empty clusters keep their centroid
                if count > 0 {
                    *centroid = sum.iter().map(|s| s / count as f64).collect();
                }
            }
            let next = assign_all(points, &centroids);
            inertia_trace.push(total(&next));
            let stable = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
            assigned = next;
            if stable {
                break;
            }
        }
    } else {
        let mut counts = vec![0usize; k];
        for _ in 0..iterations {
            let batch: Vec<usize> = (0..batch_size).map(|_| rng.index(n)).collect();
            let nearest_idx: Vec<usize> = batch.iter().map(|&i| nearest(&points[i], &centroids).0).collect();
            for (&i, &c) in batch.iter().zip(&nearest_idx) {
                counts[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                for (m, x) in centroids[c].iter_mut().zip(&points[i]) {
                    *m += eta * (x - *m);
                }
            }
        }
    }

    let assigned = assign_all(points, &centroids);
    Ok(Clustering {
        inertia: total(&assigned),
        assignments: assigned.into_iter().map(|(c, _)| c).collect(),
        centroids,
        inertia_trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRates {
    pub rates: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Clusters with no points; their rate is 0.
    pub empty_clusters: Vec<usize>,
}

/// Reward 1 for `positive_class`, 0 otherwise; each cluster's rate is its
/// mean reward.
pub fn binarize_and_rates(
    labels: &[String],
    assignments: &[usize],
    k: usize,
    positive_class: &str,
) -> Result<ClusterRates> {
    if labels.len() != assignments.len() {
        return Err(Error::InvalidInput("labels and assignments differ in length".into()));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::InvalidInput(format!("assignment {bad} out of range for {k} clusters")));
    }
    let mut hits = vec![0usize; k];
    let mut sizes = vec![0usize; k];
    for (label, &c) in labels.iter().zip(assignments) {
        sizes[c] += 1;
        hits[c] += (label == positive_class) as usize;
    }
    let rates = hits
        .iter()
        .zip(&sizes)
        .map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 })
        .collect();
    let empty_clusters = sizes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 0)
        .map(|(i, _)| i)
        .collect();
    Ok(ClusterRates {
        rates,
        sizes,
        empty_clusters,
    })
}

pub const DEFAULT_CLUSTERS: usize = 32;
pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const DEFAULT_ITERATIONS: usize = 200;
pub const VARIANCE_CONVENTION: &str = "sample (n-1 denominator)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub clusters: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Overrides the schema's positive class.
    pub positive_class: Option<String>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            clusters: DEFAULT_CLUSTERS,
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            positive_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub source: PathBuf,
    pub source_sha256: String,
    pub rows: usize,
    pub features: Vec<String>,
    pub positive_class: String,
    pub clusters: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub variance_convention: String,
    pub inertia: f64,
    pub cluster_sizes: Vec<usize>,
    pub empty_clusters: Vec<usize>,
}

/// Serialized cluster environment: one arm per centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBundle {
    pub centroids: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub metadata: BundleMetadata,
}

impl EnvBundle {
    pub fn to_env(&self) -> Result<ClusterEnvironment> {
        make_cluster_env(self.centroids.clone(), self.rates.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| load_error(path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_error(path, format!("invalid bundle: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Full pipeline from CSV + schema to an environment bundle.
pub fn prepare_dataset(csv_path: &Path, schema: &TableSchema, config: &PrepConfig) -> Result<EnvBundle> {
    let positive = config
        .positive_class
        .clone()
        .or_else(|| schema.positive_class.clone())
        .ok_or_else(|| Error::Config("no positive class given in schema or options".into()))?;
    let bytes = fs::read(csv_path).map_err(|e| load_error(csv_path, e.to_string()))?;
    let digest = Sha256::digest(&bytes);
    let source_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();

    let data = standardize(&load_table(csv_path, schema)?)?;
    let points = data.features();
    let clustering = minibatch_kmeans(&points, config.clusters, config.batch_size, config.iterations, config.seed)?;
    let rates = binarize_and_rates(&data.labels, &clustering.assignments, config.clusters, &positive)?;
    Ok(EnvBundle {
        centroids: clustering.centroids.clone(),
        rates: rates.rates,
        metadata: BundleMetadata {
            source: csv_path.to_path_buf(),
            source_sha256,
            rows: data.len(),
            features: data.feature_names(),
            positive_class: positive,
            clusters: config.clusters,
            batch_size: config.batch_size,
            iterations: config.iterations,
            seed: config.seed,
            variance_convention: VARIANCE_CONVENTION.into(),
            inertia: clustering.inertia,
            cluster_sizes: rates.sizes,
            empty_clusters: rates.empty_clusters,
        },
    })
}

/// Schema of [`synthetic_table`]'s output.
pub fn synthetic_schema() -> TableSchema {
    let mut columns: Vec<ColumnSpec> = SYNTHETIC_NUMERIC
        .iter()
        .map(|(name, _, _)| ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        })
        .collect();
    for name in ["wilderness", "soil"] {
        columns.push(ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
        });
    }
    TableSchema {
        columns,
        label: "cover_type".into(),
        positive_class: Some("1".into()),
    }
}

// (name, offset, scale) on the raw scale
const SYNTHETIC_NUMERIC: [(&str, f64, f64); 10] = [
    ("elevation", 2950.0, 280.0),
    ("aspect", 155.0, 110.0),
    ("slope", 14.0, 7.5),
    ("horizontal_distance_to_hydrology", 270.0, 210.0),
    ("vertical_distance_to_hydrology", 46.0, 58.0),
    ("horizontal_distance_to_roadways", 2350.0, 1560.0),
    ("hillshade_9am", 212.0, 27.0),
    ("hillshade_noon", 223.0, 20.0),
    ("hillshade_3pm", 142.0, 38.0),
    ("horizontal_distance_to_fire_points", 1980.0, 1320.0),
];

/// A labelled table shaped like the forest-cover data: ten numeric
/// columns driven by two latent factors, two categorical columns and a
/// seven-class label whose class "1" depends on the latent factors.
pub fn synthetic_table(rows: usize, seed: u64) -> String {
    let mut rng = RandomSource::seed_from_u64(seed);
    let schema = synthetic_schema();
    let mut out = String::new();
    let header: Vec<&str> = schema
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once("cover_type"))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for _ in 0..rows {
        let u = rng.normal();
        let v = rng.normal();
        let mut fields: Vec<String> = SYNTHETIC_NUMERIC
            .iter()
            .enumerate()
            .map(|(j, (_, offset, scale))| {
                let load = match j % 3 {
                    0 => 0.8 * u + 0.2 * v,
                    1 => 0.3 * u - 0.6 * v,
                    _ => 0.5 * v,
                };
                let z = load + 0.6 * rng.normal();
                format!("{:.2}", offset + scale * z)
            })
            .collect();
        fields.push(format!("w{}", 1 + rng.index(4)));
        fields.push(format!("s{}", 1 + rng.index(40)));
        let p = crate::policies::sigmoid(1.8 * u - 1.2 * v - 0.7);
        let label = if rng.bernoulli(p) { 1 } else { 2 + rng.index(6) };
        fields.push(label.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Write [`synthetic_table`] and its schema into `dir`; returns
/// `(csv_path, schema_path)`.
pub fn write_synthetic_dataset(dir: &Path, rows: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("synthetic_cover.csv");
    let schema_path = dir.join("synthetic_cover.schema.json");
    fs::write(&csv_path, synthetic_table(rows, seed))?;
    fs::write(&schema_path, serde_json::to_string_pretty(&synthetic_schema())? + "\n")?;
    Ok((csv_path, schema_path))
}
