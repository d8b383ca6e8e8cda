//! Point datasets: CSV ingestion, min-max normalization, splitting and a
//! synthetic spatially autocorrelated generator.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::model::ModelInput;

#[derive(Debug, Clone, PartialEq)]
pub struct GeoPoint {
    pub coords: LonLat,
    pub features: Vec<f64>,
    pub target: f64,
}

/// Column names of a point CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub lon_col: String,
    pub lat_col: String,
    pub target_col: String,
    pub feature_cols: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            lon_col: "lon".into(),
            lat_col: "lat".into(),
            target_col: "y".into(),
            feature_cols: Vec::new(),
        }
    }
}

/// Affine map of `[min, max]` onto `[0, 1]`; constant columns map to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (v - self.min) / range
        } else {
            0.0
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Min-max parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lon: MinMax,
    pub lat: MinMax,
    pub features: Vec<MinMax>,
    pub target: MinMax,
}

impl Normalizer {
    pub fn coords(&self, c: LonLat) -> [f64; 2] {
        [self.lon.apply(c.lon), self.lat.apply(c.lat)]
    }

    pub fn inverse_target(&self, v: f64) -> f64 {
        self.target.inverse(v)
    }

    pub fn inverse_features(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.features).map(|(x, m)| m.inverse(*x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<GeoPoint>,
    pub feature_names: Vec<String>,
    /// Present once features and targets have been normalized.
    pub normalizer: Option<Normalizer>,
}

impl Dataset {
    pub fn new(points: Vec<GeoPoint>, feature_names: Vec<String>) -> Result<Self> {
        let dim = feature_names.len();
        for (i, p) in points.iter().enumerate() {
            p.coords
                .validate()
                .map_err(|e| Error::Validation(format!("point {i}: {e}")))?;
            if p.features.len() != dim {
                return Err(Error::Validation(format!(
                    "point {i} has {} features, expected {dim}",
                    p.features.len()
                )));
            }
            if !p.target.is_finite() || p.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("point {i} has non-finite values")));
            }
        }
        Ok(Dataset {
            points,
            feature_names,
            normalizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn coords(&self) -> Vec<LonLat> {
        self.points.iter().map(|p| p.coords).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.target).collect()
    }

    /// Coordinates as seen by the model: normalized to the training extent
    /// when a normalizer is attached, raw degrees otherwise.
    pub fn model_coords(&self, i: usize) -> [f64; 2] {
        let c = self.points[i].coords;
        match &self.normalizer {
            Some(norm) => norm.coords(c),
            None => [c.lon, c.lat],
        }
    }

    /// Features and model coordinates for the selected rows.
    pub fn model_input(&self, indices: &[usize]) -> Result<ModelInput> {
        let p = self.feature_dim();
        let features = indices
            .iter()
            .flat_map(|&i| self.points[i].features.iter().copied())
            .collect();
        let coords = indices.iter().flat_map(|&i| self.model_coords(i)).collect();
        ModelInput::new(
            Tensor::matrix(indices.len(), p, features)?,
            Tensor::matrix(indices.len(), 2, coords)?,
        )
    }
}

/// A rejected CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_parsed: usize,
    pub issues: Vec<RowIssue>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, strict: bool) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, schema, strict)
}

/// Parses a header-first, comma-separated point file. In strict mode any bad
/// row fails the load (listing up to ten offenders); otherwise bad rows are
/// skipped and reported.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, strict: bool) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let lon_idx = column(&schema.lon_col)?;
    let lat_idx = column(&schema.lat_col)?;
    let target_idx = column(&schema.target_col)?;
    let feature_idx = schema
        .feature_cols
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> std::result::Result<f64, String> {
            let raw = record
                .get(idx)
                .ok_or_else(|| format!("missing field '{name}'"))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("field '{name}' is not numeric: '{raw}'"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("field '{name}' is not finite: '{raw}'"))
            }
        };
        let parsed = (|| -> std::result::Result<GeoPoint, String> {
            let coords = LonLat {
                lon: field(lon_idx, &schema.lon_col)?,
                lat: field(lat_idx, &schema.lat_col)?,
            };
            coords.validate().map_err(|e| e.to_string())?;
            let features = feature_idx
                .iter()
                .zip(&schema.feature_cols)
                .map(|(&i, name)| field(i, name))
                .collect::<std::result::Result<_, _>>()?;
            Ok(GeoPoint {
                coords,
                features,
                target: field(target_idx, &schema.target_col)?,
            })
        })();
        match parsed {
            Ok(p) => {
                report.rows_parsed += 1;
                points.push(p);
            }
            Err(message) => report.issues.push(RowIssue { line, message }),
        }
    }

    if strict && !report.issues.is_empty() {
        let listed: Vec<String> = report
            .issues
            .iter()
            .take(10)
            .map(|i| format!("line {}: {}", i.line, i.message))
            .collect();
        return Err(Error::Load(format!(
            "{} malformed row(s); first offenders: {}",
            report.issues.len(),
            listed.join("; ")
        )));
    }
    let ds = Dataset::new(points, schema.feature_cols.clone())?;
    Ok((ds, report))
}

/// Writes `lon, lat, features…, target` with the schema's column names.
/// Values use the shortest representation that parses back exactly.
pub fn write_csv<W: Write>(writer: W, ds: &Dataset, schema: &CsvSchema) -> Result<()> {
    if schema.feature_cols.len() != ds.feature_dim() {
        return Err(Error::Schema(format!(
            "schema lists {} feature columns, dataset has {}",
            schema.feature_cols.len(),
            ds.feature_dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.lon_col.clone(), schema.lat_col.clone()];
    header.extend(schema.feature_cols.iter().cloned());
    header.push(schema.target_col.clone());
    w.write_record(&header)?;
    for p in &ds.points {
        let mut row = vec![p.coords.lon.to_string(), p.coords.lat.to_string()];
        row.extend(p.features.iter().map(f64::to_string));
        row.push(p.target.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, ds: &Dataset, schema: &CsvSchema) -> Result<()> {
    write_csv(std::fs::File::create(path)?, ds, schema)
}

/// Disjoint train/test index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Uniform random partition with `round(n · test_fraction)` test points.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if n < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: n });
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Parameter(format!(
            "test_fraction {test_fraction} leaves an empty side for n = {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split {
        train,
        test,
        seed,
        test_fraction,
    })
}

/// Fits min-max parameters on the split's training rows.
pub fn fit_minmax(ds: &Dataset, split: &Split) -> Result<Normalizer> {
    if split.train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    if let Some(&bad) = split.train.iter().chain(&split.test).find(|&&i| i >= ds.len()) {
        return Err(Error::Validation(format!(
            "split index {bad} out of range for {} points",
            ds.len()
        )));
    }
    let train = || split.train.iter().map(|&i| &ds.points[i]);
    let fit = |f: &dyn Fn(&GeoPoint) -> f64| MinMax::fit(train().map(f)).expect("non-empty");
    Ok(Normalizer {
        lon: fit(&|p| p.coords.lon),
        lat: fit(&|p| p.coords.lat),
        features: (0..ds.feature_dim())
            .map(|j| fit(&|p| p.features[j]))
            .collect(),
        target: fit(&|p| p.target),
    })
}

/// Normalizes features and targets with an already fitted normalizer and
/// attaches it. Coordinates stay in degrees; [`Dataset::model_coords`] maps them.
pub fn apply_normalizer(ds: &Dataset, norm: &Normalizer) -> Result<Dataset> {
    if ds.normalizer.is_some() {
        return Err(Error::Validation("dataset is already normalized".into()));
    }
    if norm.features.len() != ds.feature_dim() {
        return Err(Error::dim(
            "apply_normalizer",
            &[norm.features.len()],
            &[ds.feature_dim()],
        ));
    }
    let points = ds
        .points
        .iter()
        .map(|p| GeoPoint {
            coords: p.coords,
            features: p
                .features
                .iter()
                .zip(&norm.features)
                .map(|(v, m)| m.apply(*v))
                .collect(),
            target: norm.target.apply(p.target),
        })
        .collect();
    Ok(Dataset {
        points,
        feature_names: ds.feature_names.clone(),
        normalizer: Some(norm.clone()),
    })
}

/// Fits on the training split and normalizes every row, test rows included,
/// without clamping.
pub fn fit_apply_minmax(ds: &Dataset, split: &Split) -> Result<Dataset> {
    apply_normalizer(ds, &fit_minmax(ds, split)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub frequencies: Vec<f64>,
    pub noise: f64,
}

pub const DEFAULT_SYNTH_FREQUENCIES: [f64; 3] = [1.0, 2.0, 3.0];
pub const DEFAULT_SYNTH_NOISE: f64 = 0.05;

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            seed,
            frequencies: DEFAULT_SYNTH_FREQUENCIES.to_vec(),
            noise: DEFAULT_SYNTH_NOISE,
        }
    }
}

/// Synthetic interpolation dataset with unit-noise amplitude 0.05.
pub fn synth_generate(n: usize, seed: u64, frequencies: &[f64]) -> Result<Dataset> {
    synth_generate_with(&SynthConfig {
        n,
        seed,
        frequencies: frequencies.to_vec(),
        noise: DEFAULT_SYNTH_NOISE,
    })
}

/// Points uniform in a 1°×1° patch with
/// `y = Σ_f sin(2πf·lon + φ_f)·sin(2πf·lat + ψ_f) + noise·ε`, ε ~ N(0, 1).
pub fn synth_generate_with(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n < 10 {
        return Err(Error::InsufficientPoints {
            needed: 10,
            got: cfg.n,
        });
    }
    if cfg.frequencies.is_empty() || cfg.frequencies.iter().any(|f| !f.is_finite()) {
        return Err(Error::Parameter("frequencies must be a non-empty list of finite values".into()));
    }
    if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
        return Err(Error::Parameter(format!("noise must be non-negative, got {}", cfg.noise)));
    }
    let tau = std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phases: Vec<(f64, f64)> = cfg
        .frequencies
        .iter()
        .map(|_| (rng.gen_range(0.0..tau), rng.gen_range(0.0..tau)))
        .collect();
    let points = (0..cfg.n)
        .map(|_| {
            let lon: f64 = rng.gen();
            let lat: f64 = rng.gen();
            let eps: f64 = rng.sample(StandardNormal);
            let signal: f64 = cfg
                .frequencies
                .iter()
                .zip(&phases)
                .map(|(f, (phi, psi))| (tau * f * lon + phi).sin() * (tau * f * lat + psi).sin())
                .sum();
            GeoPoint {
                coords: LonLat { lon, lat },
                features: Vec::new(),
                target: signal + cfg.noise * eps,
            }
        })
        .collect();
    Dataset::new(points, Vec::new())
}
