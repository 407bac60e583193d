//! Tabular drilling data: schema, CSV ingestion and the synthetic generator.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub unit: String,
    pub kind: ColumnKind,
}

impl FeatureDescriptor {
    pub fn new(name: &str, unit: &str, kind: ColumnKind) -> Self {
        FeatureDescriptor {
            name: name.to_string(),
            unit: unit.to_string(),
            kind,
        }
    }
}

/// Ordered column descriptors with exactly one target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    columns: Vec<FeatureDescriptor>,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        use ColumnKind::*;
        DatasetSchema {
            columns: vec![
                FeatureDescriptor::new("WOB", "klbf", Continuous),
                FeatureDescriptor::new("RPM", "rev/min", Continuous),
                FeatureDescriptor::new("Torque", "klbf-ft", Continuous),
                FeatureDescriptor::new("Standpipe Pressure", "psi", Continuous),
                FeatureDescriptor::new("Flow Rate", "gal/min", Continuous),
                FeatureDescriptor::new("Hook Load", "klbf", Continuous),
                FeatureDescriptor::new("Bit Depth", "ft", Continuous),
                FeatureDescriptor::new("Hole Depth", "ft", Continuous),
                FeatureDescriptor::new("ROP", "ft/hr", Target),
            ],
        }
    }
}

impl DatasetSchema {
    pub fn new(columns: Vec<FeatureDescriptor>) -> Result<Self> {
        let targets = columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Target)
            .count();
        if targets != 1 {
            return Err(Error::Schema(format!(
                "schema needs exactly one target column, found {targets}"
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.name.as_str())) {
            return Err(Error::Schema(format!(
                "duplicate column name {:?}",
                dup.name
            )));
        }
        Ok(DatasetSchema { columns })
    }

    pub fn columns(&self) -> &[FeatureDescriptor] {
        &self.columns
    }

    pub fn target(&self) -> &FeatureDescriptor {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Target)
            .expect("validated")
    }

    fn names_of(&self, kind: ColumnKind) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn continuous_names(&self) -> Vec<String> {
        self.names_of(ColumnKind::Continuous)
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.names_of(ColumnKind::Categorical)
    }
}

/// Column-major table in file row order. Missing numeric cells are `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub numeric_names: Vec<String>,
    pub numeric: Vec<Vec<f64>>,
    pub categorical_names: Vec<String>,
    pub categorical: Vec<Vec<Option<String>>>,
    pub target_name: String,
    pub target: Option<Vec<f64>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.numeric
            .first()
            .map(Vec::len)
            .or_else(|| self.categorical.first().map(Vec::len))
            .or_else(|| self.target.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn numeric_column(&self, name: &str) -> Option<&[f64]> {
        self.numeric_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.numeric[i].as_slice())
    }

    pub fn categorical_column(&self, name: &str) -> Option<&[Option<String>]> {
        self.categorical_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.categorical[i].as_slice())
    }

    pub fn push_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::dim(
                "push_numeric",
                &[values.len()],
                &[self.n_rows()],
            ));
        }
        if self.numeric_names.iter().any(|n| n == name) {
            return Err(Error::Schema(format!("column {name:?} already exists")));
        }
        self.numeric_names.push(name.to_string());
        self.numeric.push(values);
        Ok(())
    }

    /// Keeps only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            numeric_names: self.numeric_names.clone(),
            numeric: self
                .numeric
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            categorical_names: self.categorical_names.clone(),
            categorical: self
                .categorical
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
            target_name: self.target_name.clone(),
            target: self
                .target
                .as_ref()
                .map(|t| rows.iter().map(|&r| t[r]).collect()),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan")
}

/// Whether the target column must be present in the file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetPolicy {
    Required,
    Optional,
}

#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Reads a headered CSV against `schema`. Extra columns are dropped with a
/// warning; parse errors report the 1-based data row.
pub fn read_csv(
    reader: impl Read,
    schema: &DatasetSchema,
    policy: TargetPolicy,
) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let target_name = schema.target().name.clone();
    let target_pos = position(&target_name);
    let target_needed = policy == TargetPolicy::Required;
    let missing: Vec<&str> = schema
        .columns()
        .iter()
        .filter(|c| (c.kind != ColumnKind::Target || target_needed) && position(&c.name).is_none())
        .map(|c| c.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }
    let mut warnings = Vec::new();
    for h in &header {
        if !schema.columns().iter().any(|c| &c.name == h) {
            let w = format!("ignoring column {h:?} not in schema");
            log::warn!("{w}");
            warnings.push(w);
        }
    }

    let numeric_names = schema.continuous_names();
    let categorical_names = schema.categorical_names();
    let numeric_pos: Vec<usize> = numeric_names
        .iter()
        .map(|n| position(n).expect("checked"))
        .collect();
    let categorical_pos: Vec<usize> = categorical_names
        .iter()
        .map(|n| position(n).expect("checked"))
        .collect();
    let mut numeric = vec![Vec::new(); numeric_names.len()];
    let mut categorical = vec![Vec::new(); categorical_names.len()];
    let mut target = target_pos.map(|_| Vec::new());

    let parse = |cell: &str, row: usize, column: &str| -> Result<f64> {
        if is_missing(cell) {
            return Ok(f64::NAN);
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                row,
                column: column.to_string(),
                value: cell.to_string(),
            }),
        }
    };

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        for ((col, &p), name) in numeric.iter_mut().zip(&numeric_pos).zip(&numeric_names) {
            col.push(parse(&record[p], row, name)?);
        }
        for (col, &p) in categorical.iter_mut().zip(&categorical_pos) {
            let cell = &record[p];
            col.push((!is_missing(cell)).then(|| cell.to_string()));
        }
        if let (Some(t), Some(p)) = (target.as_mut(), target_pos) {
            t.push(parse(&record[p], row, &target_name)?);
        }
    }
    Ok(LoadedCsv {
        dataset: Dataset {
            numeric_names,
            numeric,
            categorical_names,
            categorical,
            target_name,
            target,
        },
        warnings,
    })
}

/// [`read_csv`] from a file, target required.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(
        std::io::BufReader::new(file),
        schema,
        TargetPolicy::Required,
    )
}

/// Writes numeric columns, categorical columns, then the target. Missing
/// cells are empty; floats use the shortest exact representation.
pub fn write_csv(writer: impl Write, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.numeric_names.iter().map(String::as_str).collect();
    header.extend(ds.categorical_names.iter().map(String::as_str));
    if ds.target.is_some() {
        header.push(&ds.target_name);
    }
    w.write_record(&header)?;
    let fmt = |v: f64| {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v}")
        }
    };
    for r in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.numeric.iter().map(|c| fmt(c[r])).collect();
        rec.extend(
            ds.categorical
                .iter()
                .map(|c| c[r].clone().unwrap_or_default()),
        );
        if let Some(t) = &ds.target {
            rec.push(fmt(t[r]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), ds)
}

/// Number of schema features the generator emits.
pub const SYNTHETIC_FEATURES: usize = 8;
/// Lags carried by `temporal_coeffs`.
pub const SYNTHETIC_LAGS: usize = 2;

/// Synthetic well description. Features are produced in generator units
/// `u` (roughly unit variance); the file holds `center + scale·u`.
///
/// `ROP_t = intercept + static·u_t + lag1·u_{t−1} + lag2·u_{t−2} + offset[regime] + N(0, σ²)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub noise_sigma: f64,
    pub regime_count: usize,
    /// `[lag1, lag2]`, each one coefficient per feature.
    pub temporal_coeffs: Vec<Vec<f64>>,
    pub static_coeffs: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_rows: 2000,
            noise_sigma: 1.2,
            regime_count: 4,
            temporal_coeffs: vec![
                vec![3.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0],
            ],
            static_coeffs: vec![4.0, 3.0, 2.0, 1.5, 2.0, -1.0, 0.0, 0.0],
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 100 {
            return Err(Error::Config(format!(
                "synthetic n_rows must be at least 100, got {}",
                self.n_rows
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.regime_count == 0 || self.regime_count > self.n_rows {
            return Err(Error::Config(format!(
                "regime_count must lie in 1..=n_rows, got {}",
                self.regime_count
            )));
        }
        if self.static_coeffs.len() != SYNTHETIC_FEATURES {
            return Err(Error::Config(format!(
                "static_coeffs needs {SYNTHETIC_FEATURES} entries, got {}",
                self.static_coeffs.len()
            )));
        }
        if self.temporal_coeffs.len() != SYNTHETIC_LAGS
            || self
                .temporal_coeffs
                .iter()
                .any(|c| c.len() != SYNTHETIC_FEATURES)
        {
            return Err(Error::Config(format!(
                "temporal_coeffs needs {SYNTHETIC_LAGS} rows of {SYNTHETIC_FEATURES} entries"
            )));
        }
        if self
            .static_coeffs
            .iter()
            .chain(self.temporal_coeffs.iter().flatten())
            .any(|c| !c.is_finite())
        {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Everything needed to recompute the noiseless target from the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub feature_centers: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub intercept: f64,
    /// First row of each regime; regime `r` spans `starts[r]..starts[r+1]`.
    pub regime_starts: Vec<usize>,
    pub regime_offsets: Vec<f64>,
    pub bayes_mse: f64,
    pub formula: String,
}

impl GroundTruth {
    fn units(&self, ds: &Dataset, row: usize) -> Vec<f64> {
        (0..SYNTHETIC_FEATURES)
            .map(|j| (ds.numeric[j][row] - self.feature_centers[j]) / self.feature_scales[j])
            .collect()
    }

    pub fn regime_of(&self, row: usize) -> usize {
        self.regime_starts
            .iter()
            .rposition(|&s| s <= row)
            .unwrap_or(0)
    }

    /// Noiseless target for `row ≥ 2` of a generated dataset.
    pub fn noiseless_target(&self, ds: &Dataset, row: usize) -> f64 {
        let dot = |c: &[f64], u: &[f64]| c.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        let mut y = self.intercept + self.regime_offsets[self.regime_of(row)];
        y += dot(&self.spec.static_coeffs, &self.units(ds, row));
        for (lag, coeffs) in self.spec.temporal_coeffs.iter().enumerate() {
            y += dot(coeffs, &self.units(ds, row - lag - 1));
        }
        y
    }
}

const CENTERS: [f64; SYNTHETIC_FEATURES] =
    [25.0, 120.0, 15.0, 3000.0, 600.0, 250.0, 5000.0, 5000.0];
const SCALES: [f64; SYNTHETIC_FEATURES] = [5.0, 20.0, 3.0, 300.0, 60.0, 20.0, 1000.0, 1000.0];
const INTERCEPT: f64 = 60.0;
const AR_PHI: f64 = 0.5;
/// Bit depth advance per row, ft.
const DEPTH_STEP: f64 = 0.5;

/// Draws a regime-switching well. Rows are depth ordered; the first two
/// rows have valid lags because the generator burns in two extra rows.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let n = spec.n_rows;
    let total = n + SYNTHETIC_LAGS;
    let regime_starts: Vec<usize> = (0..spec.regime_count)
        .map(|r| r * n / spec.regime_count)
        .collect();
    let regime_means: Vec<Vec<f64>> = (0..spec.regime_count)
        .map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let regime_offsets: Vec<f64> = (0..spec.regime_count)
        .map(|_| rng.uniform(-5.0, 5.0))
        .collect();
    let regime_at = |t: usize| -> usize {
        let row = t.saturating_sub(SYNTHETIC_LAGS);
        regime_starts.iter().rposition(|&s| s <= row).unwrap_or(0)
    };

    let innov = (1.0 - AR_PHI * AR_PHI).sqrt();
    let mut z = [0.0f64; 6];
    let mut u = vec![[0.0f64; SYNTHETIC_FEATURES]; total];
    let mut depth = 0.0;
    for (t, ut) in u.iter_mut().enumerate() {
        let e: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        // torque follows WOB, flow follows standpipe pressure
        let shocks = [
            e[0],
            e[1],
            0.6 * e[0] + 0.8 * e[2],
            e[3],
            0.5 * e[3] + 0.866 * e[4],
            e[5],
        ];
        let means = &regime_means[regime_at(t)];
        for j in 0..6 {
            z[j] = if t == 0 {
                shocks[j]
            } else {
                AR_PHI * z[j] + innov * shocks[j]
            };
            ut[j] = means[j] + z[j];
        }
        depth += DEPTH_STEP * (1.0 + 0.5 * rng.next_f64());
        ut[6] = depth / SCALES[6];
        ut[7] = (depth + 2.0 * rng.next_f64()) / SCALES[7];
    }

    let dot = |c: &[f64], v: &[f64]| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut numeric = (0..SYNTHETIC_FEATURES)
        .map(|_| Vec::with_capacity(n))
        .collect::<Vec<Vec<f64>>>();
    let mut target = Vec::with_capacity(n);
    for t in SYNTHETIC_LAGS..total {
        let mut y = INTERCEPT + regime_offsets[regime_at(t)] + dot(&spec.static_coeffs, &u[t]);
        for (lag, coeffs) in spec.temporal_coeffs.iter().enumerate() {
            y += dot(coeffs, &u[t - lag - 1]);
        }
        y += spec.noise_sigma * rng.normal();
        target.push(y);
        for j in 0..SYNTHETIC_FEATURES {
            numeric[j].push(CENTERS[j] + SCALES[j] * u[t][j]);
        }
    }
    let schema = DatasetSchema::default();
    let feature_names = schema.continuous_names();
    let target_name = schema.target().name.clone();
    // lag rows of the first two emitted rows are burn-in rows, not in the file
    let truth = GroundTruth {
        spec: spec.clone(),
        feature_names: feature_names.clone(),
        target_name: target_name.clone(),
        feature_centers: CENTERS.to_vec(),
        feature_scales: SCALES.to_vec(),
        intercept: INTERCEPT,
        regime_starts,
        regime_offsets,
        bayes_mse: spec.noise_sigma * spec.noise_sigma,
        formula: "ROP_t = intercept + offset[regime(t)] + sum_j static[j]*u_t[j] + sum_j lag1[j]*u_{t-1}[j] \
                  + sum_j lag2[j]*u_{t-2}[j] + N(0, noise_sigma^2), u[j] = (x[j] - center[j]) / scale[j]"
            .to_string(),
    };
    Ok((
        Dataset {
            numeric_names: feature_names,
            numeric,
            categorical_names: Vec::new(),
            categorical: Vec::new(),
            target_name,
            target: Some(target),
        },
        truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::weighted_least_squares;

    fn csv_with(body: &str) -> String {
        let names = DatasetSchema::default()
            .columns()
            .iter()
            .map(|c| c.name.clone())
            .collect::<Vec<_>>()
            .join(",");
        format!("{names}\n{body}")
    }

    #[test]
    fn default_schema_is_table_two() {
        let s = DatasetSchema::default();
        assert_eq!(s.continuous_names().len(), 8);
        assert_eq!(s.target().name, "ROP");
        assert_eq!(s.target().unit, "ft/hr");
        assert_eq!(s.columns()[0].unit, "klbf");
    }

    #[test]
    fn schema_validation() {
        let c = |n: &str, k| FeatureDescriptor::new(n, "", k);
        assert!(DatasetSchema::new(vec![c("a", ColumnKind::Continuous)]).is_err());
        assert!(DatasetSchema::new(vec![
            c("a", ColumnKind::Target),
            c("a", ColumnKind::Continuous)
        ])
        .is_err());
        assert!(DatasetSchema::new(vec![
            c("a", ColumnKind::Target),
            c("b", ColumnKind::Categorical)
        ])
        .is_ok());
    }

    #[test]
    fn loads_well_formed_rows_exactly() {
        let text = csv_with(
            "1,2,3,4,5,6,7,8,9\n1.5,2.5,3.5,4.5,5.5,6.5,7.5,8.5,9.5\r\n-1,0,,NaN,5,6,7,8,10\n",
        );
        let out = read_csv(
            text.as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Required,
        )
        .unwrap();
        let ds = out.dataset;
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.numeric[0], vec![1.0, 1.5, -1.0]);
        assert!(ds.numeric[2][2].is_nan() && ds.numeric[3][2].is_nan());
        assert_eq!(ds.target.unwrap(), vec![9.0, 9.5, 10.0]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let text = csv_with("1,2,3,4,5,6,7,8,9\nabc,2,3,4,5,6,7,8,9\n");
        let err = read_csv(
            text.as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Required,
        )
        .unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "WOB", "abc"))
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn extra_columns_are_dropped_with_warning() {
        let names = DatasetSchema::default()
            .columns()
            .iter()
            .map(|c| c.name.clone())
            .collect::<Vec<_>>()
            .join(",");
        let text = format!("{names},Gamma Ray\n1,2,3,4,5,6,7,8,9,77\n");
        let out = read_csv(
            text.as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Required,
        )
        .unwrap();
        assert_eq!(out.dataset.numeric.len(), 8);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("Gamma Ray"));
    }

    #[test]
    fn missing_columns_are_schema_errors() {
        let text = "WOB,RPM\n1,2\n";
        let err = read_csv(
            text.as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Required,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("ROP")));
        let names = DatasetSchema::default().continuous_names().join(",");
        let text = format!("{names}\n1,2,3,4,5,6,7,8\n");
        let out = read_csv(
            text.as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Optional,
        )
        .unwrap();
        assert!(out.dataset.target.is_none());
        let err = read_csv(
            "ROP,WOB\n1,2\n".as_bytes(),
            &DatasetSchema::default(),
            TargetPolicy::Optional,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("Hook Load")));
    }

    #[test]
    fn categorical_columns_are_read() {
        let schema = DatasetSchema::new(vec![
            FeatureDescriptor::new("WOB", "klbf", ColumnKind::Continuous),
            FeatureDescriptor::new("Bit Type", "", ColumnKind::Categorical),
            FeatureDescriptor::new("ROP", "ft/hr", ColumnKind::Target),
        ])
        .unwrap();
        let out = read_csv(
            "WOB,Bit Type,ROP\n1,PDC,3\n2,,4\n".as_bytes(),
            &schema,
            TargetPolicy::Required,
        )
        .unwrap();
        assert_eq!(
            out.dataset.categorical[0],
            vec![Some("PDC".to_string()), None]
        );
    }

    #[test]
    fn generator_is_deterministic_and_round_trips_through_csv() {
        let spec = SyntheticSpec {
            n_rows: 300,
            ..SyntheticSpec::default()
        };
        let (a, ta) = generate_synthetic(&spec).unwrap();
        let (b, tb) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let mut buf = Vec::new();
        write_csv(&mut buf, &a).unwrap();
        let back = read_csv(
            buf.as_slice(),
            &DatasetSchema::default(),
            TargetPolicy::Required,
        )
        .unwrap()
        .dataset;
        for (x, y) in a
            .numeric
            .iter()
            .flatten()
            .zip(back.numeric.iter().flatten())
        {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(a.target, back.target);
    }

    #[test]
    fn truth_descriptor_reproduces_targets() {
        let spec = SyntheticSpec {
            n_rows: 200,
            noise_sigma: 0.0,
            ..SyntheticSpec::default()
        };
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        let y = ds.target.as_ref().unwrap();
        for row in 2..ds.n_rows() {
            assert!(
                (truth.noiseless_target(&ds, row) - y[row]).abs() < 1e-9,
                "row {row}"
            );
        }
        assert_eq!(truth.bayes_mse, 0.0);
    }

    #[test]
    fn depth_is_monotone() {
        let (ds, _) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let depth = ds.numeric_column("Bit Depth").unwrap();
        assert!(depth.windows(2).all(|w| w[1] > w[0]));
    }

    /// OLS R² with every non-intercept column standardized first.
    fn r2_of_fit(design: &[Vec<f64>], y: &[f64]) -> f64 {
        let n = design.len() as f64;
        let mut design = design.to_vec();
        for j in 1..design[0].len() {
            let m = design.iter().map(|r| r[j]).sum::<f64>() / n;
            let s = (design.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n).sqrt();
            for r in design.iter_mut() {
                r[j] = (r[j] - m) / s;
            }
        }
        let w = weighted_least_squares(&design, y, None).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for (row, &t) in design.iter().zip(y) {
            let p: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            ss_res += (t - p) * (t - p);
            ss_tot += (t - mean) * (t - mean);
        }
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn noiseless_static_only_data_is_exactly_linear() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            regime_count: 1,
            temporal_coeffs: vec![vec![0.0; 8]; 2],
            n_rows: 500,
            ..SyntheticSpec::default()
        };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let design: Vec<Vec<f64>> = (0..ds.n_rows())
            .map(|r| {
                std::iter::once(1.0)
                    .chain(ds.numeric.iter().map(|c| c[r]))
                    .collect()
            })
            .collect();
        let r2 = r2_of_fit(&design, ds.target.as_ref().unwrap());
        assert!((1.0 - r2).abs() < 1e-9, "{r2}");
    }

    #[test]
    fn lagged_design_beats_row_design_when_signal_is_temporal() {
        let mut wins = 0;
        for seed in 0..5 {
            let spec = SyntheticSpec {
                seed,
                n_rows: 600,
                ..SyntheticSpec::default()
            };
            let (ds, _) = generate_synthetic(&spec).unwrap();
            let y: Vec<f64> = ds.target.as_ref().unwrap()[2..].to_vec();
            let row = |r: usize| ds.numeric.iter().map(move |c| c[r]);
            let plain: Vec<Vec<f64>> = (2..ds.n_rows())
                .map(|r| std::iter::once(1.0).chain(row(r)).collect())
                .collect();
            let lagged: Vec<Vec<f64>> = (2..ds.n_rows())
                .map(|r| {
                    std::iter::once(1.0)
                        .chain(row(r))
                        .chain(row(r - 1))
                        .chain(row(r - 2))
                        .collect()
                })
                .collect();
            if r2_of_fit(&plain, &y) < r2_of_fit(&lagged, &y) {
                wins += 1;
            }
        }
        assert!(wins >= 3, "{wins}/5");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            SyntheticSpec {
                n_rows: 50,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                noise_sigma: -1.0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                regime_count: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                static_coeffs: vec![1.0],
                ..SyntheticSpec::default()
            },
        ];
        for spec in bad {
            assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        }
    }
}
