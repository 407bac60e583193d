//! Imputation, standardization, one-hot encoding, outlier diagnostics,
//! derived features, the 80/20 split and sliding windows.
//!
//! Missing numeric cells are `NaN` throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};
use crate::train::SampleSet;

/// Default seed of the train/test split.
pub const SPLIT_SEED: u64 = 42;
pub const TRAIN_FRACTION: f64 = 0.8;
/// Category substituted for missing categorical cells.
pub const UNKNOWN_CATEGORY: &str = "Unknown";
pub const SER_NAME: &str = "Specific Energy Ratio";
pub const HHP_NAME: &str = "Hydraulic Horsepower";

fn mean_of_present(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputation {
    pub missing_fraction: f64,
    pub fill_value: f64,
}

/// Per-column imputation summary, keyed by column name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub columns: BTreeMap<String, ColumnImputation>,
}

/// Replaces missing cells of each column with the mean of its present cells.
pub fn impute_mean(
    names: &[String],
    columns: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, ImputationReport)> {
    let mut report = ImputationReport::default();
    let mut out = Vec::with_capacity(columns.len());
    for (name, col) in names.iter().zip(columns) {
        let mean = mean_of_present(col.iter().copied())
            .ok_or_else(|| Error::UnimputableColumn(name.clone()))?;
        let missing = col.iter().filter(|v| v.is_nan()).count();
        out.push(
            col.iter()
                .map(|&v| if v.is_nan() { mean } else { v })
                .collect(),
        );
        report.columns.insert(
            name.clone(),
            ColumnImputation {
                missing_fraction: missing as f64 / col.len().max(1) as f64,
                fill_value: mean,
            },
        );
    }
    Ok((out, report))
}

/// Population mean and standard deviation of each column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Scaler {
    pub fn fit(names: &[String], columns: &[Vec<f64>]) -> Result<Self> {
        let mut mu = Vec::with_capacity(columns.len());
        let mut sigma = Vec::with_capacity(columns.len());
        for (name, col) in names.iter().zip(columns) {
            if col.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "column {name:?} has no rows to fit"
                )));
            }
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(Error::ConstantColumn(name.clone()));
            }
            mu.push(m);
            sigma.push(s);
        }
        Ok(Scaler { mu, sigma })
    }

    pub fn apply(&self, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
        columns
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(col, (m, s))| col.iter().map(|v| (v - m) / s).collect())
            .collect()
    }

    pub fn inverse(&self, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
        columns
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(col, (m, s))| col.iter().map(|v| v * s + m).collect())
            .collect()
    }
}

/// Sorted distinct values; missing cells count as [`UNKNOWN_CATEGORY`].
pub fn fit_vocab<'a>(values: impl Iterator<Item = &'a Option<String>>) -> Vec<String> {
    let mut vocab: Vec<String> = values
        .map(|v| v.clone().unwrap_or_else(|| UNKNOWN_CATEGORY.to_string()))
        .collect();
    vocab.sort();
    vocab.dedup();
    vocab
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneHot {
    /// One column per vocabulary entry, in vocabulary order.
    pub columns: Vec<Vec<f64>>,
    /// Rows whose value was not in the vocabulary (encoded as all zeros).
    pub unseen_rows: Vec<usize>,
}

pub fn one_hot_encode(values: &[Option<String>], vocab: &[String]) -> Result<OneHot> {
    if vocab.is_empty() {
        return Err(Error::Encoding("empty vocabulary".into()));
    }
    let mut columns = vec![vec![0.0; values.len()]; vocab.len()];
    let mut unseen_rows = Vec::new();
    for (r, v) in values.iter().enumerate() {
        let v = v.as_deref().unwrap_or(UNKNOWN_CATEGORY);
        match vocab.iter().position(|c| c == v) {
            Some(k) => columns[k][r] = 1.0,
            None => unseen_rows.push(r),
        }
    }
    Ok(OneHot {
        columns,
        unseen_rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqrReport {
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub flagged_rows: Vec<usize>,
}

/// Linear-interpolation quantile of ascending `sorted` at `p ∈ [0,1]`.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Flags rows outside `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]`; missing cells are ignored.
pub fn iqr_outlier_report(column: &[f64]) -> Result<IqrReport> {
    let mut sorted: Vec<f64> = column.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "IQR needs at least 4 present values, got {}",
            sorted.len()
        )));
    }
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lower_fence, upper_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let flagged_rows = column
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < lower_fence || v > upper_fence)
        .map(|(i, _)| i)
        .collect();
    Ok(IqrReport {
        q1,
        q3,
        lower_fence,
        upper_fence,
        flagged_rows,
    })
}

/// `Torque·RPM / (WOB·ROP)`, missing where the denominator is zero.
pub fn specific_energy_ratio(torque: f64, rpm: f64, wob: f64, rop: f64) -> f64 {
    let denom = wob * rop;
    if denom == 0.0 || denom.is_nan() {
        f64::NAN
    } else {
        torque * rpm / denom
    }
}

/// `GPM·PSI / 1714`.
pub fn hydraulic_horsepower(gpm: f64, psi: f64) -> f64 {
    gpm * psi / 1714.0
}

/// Appends the two derived columns. Needs `Torque`, `RPM`, `WOB`,
/// `Flow Rate` and `Standpipe Pressure` columns plus the target.
pub fn derive_features(ds: &mut Dataset) -> Result<()> {
    let col = |name: &str| -> Result<Vec<f64>> {
        ds.numeric_column(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Schema(format!("derived features need column {name:?}")))
    };
    let (torque, rpm, wob) = (col("Torque")?, col("RPM")?, col("WOB")?);
    let (gpm, psi) = (col("Flow Rate")?, col("Standpipe Pressure")?);
    let rop = ds
        .target
        .clone()
        .unwrap_or_else(|| vec![f64::NAN; ds.n_rows()]);
    let ser = (0..ds.n_rows())
        .map(|i| specific_energy_ratio(torque[i], rpm[i], wob[i], rop[i]))
        .collect();
    let hhp = (0..ds.n_rows())
        .map(|i| hydraulic_horsepower(gpm[i], psi[i]))
        .collect();
    ds.push_numeric(SER_NAME, ser)?;
    ds.push_numeric(HHP_NAME, hhp)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded shuffle of `0..n` cut at `round(0.8·n)`. Both halves are returned
/// in ascending order.
pub fn split_train_test(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 5 samples, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let cut = (TRAIN_FRACTION * n as f64).round() as usize;
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

/// How window indices are divided between training and test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProtocol {
    /// Seeded shuffle; windows of the two halves may share rows when `L > 1`.
    #[default]
    Random,
    /// Depth-ordered cut; no test window shares a row with a training window.
    Blocked,
}

impl std::str::FromStr for SplitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitProtocol::Random),
            "blocked" => Ok(SplitProtocol::Blocked),
            _ => Err(Error::Config(format!(
                "unknown split protocol {s:?}; expected random or blocked"
            ))),
        }
    }
}

/// The first `round(0.8·m)` windows train. Test windows start at the row
/// after the last training row, so the `L−1` windows straddling the cut are
/// dropped.
pub fn split_blocked(m: usize, window_len: usize) -> Result<SplitIndices> {
    if m < 5 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 5 samples, got {m}"
        )));
    }
    let cut = (TRAIN_FRACTION * m as f64).round() as usize;
    let first_test = cut + window_len.max(1) - 1;
    if first_test >= m {
        return Err(Error::InsufficientData(format!(
            "blocked split of {m} windows of length {window_len} leaves no test window"
        )));
    }
    Ok(SplitIndices {
        train: (0..cut).collect(),
        test: (first_test..m).collect(),
        seed: 0,
    })
}

/// Splits `m` windows of length `window_len` under `protocol`. `seed` only
/// affects the random protocol.
pub fn split_windows(
    m: usize,
    window_len: usize,
    protocol: SplitProtocol,
    seed: u64,
) -> Result<SplitIndices> {
    match protocol {
        SplitProtocol::Random => split_train_test(m, seed),
        SplitProtocol::Blocked => split_blocked(m, window_len),
    }
}

/// Sliding windows over depth-ordered rows: window `i` covers rows
/// `i..i+L`, its static vector is row `i+L−1` and its target that row's.
pub fn make_windows(matrix: &Tensor, targets: &[f64], window_len: usize) -> Result<SampleSet> {
    let (n, d) = matrix.dims2("make_windows")?;
    if targets.len() != n {
        return Err(Error::dim("make_windows", &[n], &[targets.len()]));
    }
    if window_len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if window_len > n {
        return Err(Error::Window {
            window: window_len,
            rows: n,
        });
    }
    let m = n - window_len + 1;
    let mut w = Vec::with_capacity(m * window_len * d);
    let mut s = Vec::with_capacity(m * d);
    for i in 0..m {
        w.extend_from_slice(&matrix.data()[i * d..(i + window_len) * d]);
        s.extend_from_slice(matrix.row(i + window_len - 1));
    }
    SampleSet::new(
        Tensor::new(&[m, window_len, d], w)?,
        Tensor::new(&[m, d], s)?,
        targets[window_len - 1..].to_vec(),
    )
}

/// Everything fitted on training rows that inference needs to reproduce
/// the model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorState {
    pub feature_names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub scaler_mu: Vec<f64>,
    pub scaler_sigma: Vec<f64>,
    pub categorical_names: Vec<String>,
    pub category_vocab: Vec<Vec<String>>,
    pub target_name: String,
    pub target_mu: f64,
    pub target_sigma: f64,
    pub derived_features: bool,
}

impl PreprocessorState {
    /// Fits imputation means, scaler, vocabularies and target scaler on `rows`.
    pub fn fit(ds: &Dataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData(
                "no rows to fit the preprocessor on".into(),
            ));
        }
        let target = ds.target.as_ref().ok_or_else(|| {
            Error::Schema(format!(
                "target column {:?} is required for fitting",
                ds.target_name
            ))
        })?;
        let mut feature_means = Vec::with_capacity(ds.numeric.len());
        let mut imputed = Vec::with_capacity(ds.numeric.len());
        for (name, col) in ds.numeric_names.iter().zip(&ds.numeric) {
            let m = mean_of_present(rows.iter().map(|&r| col[r]))
                .ok_or_else(|| Error::UnimputableColumn(name.clone()))?;
            feature_means.push(m);
            imputed.push(
                rows.iter()
                    .map(|&r| if col[r].is_nan() { m } else { col[r] })
                    .collect::<Vec<f64>>(),
            );
        }
        let scaler = Scaler::fit(&ds.numeric_names, &imputed)?;
        let category_vocab = ds
            .categorical
            .iter()
            .map(|col| fit_vocab(rows.iter().map(|&r| &col[r])))
            .collect();
        let y: Vec<f64> = rows.iter().map(|&r| target[r]).collect();
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::Schema("fitting rows contain missing targets".into()));
        }
        let ts = Scaler::fit(std::slice::from_ref(&ds.target_name), &[y])?;
        Ok(PreprocessorState {
            feature_names: ds.numeric_names.clone(),
            feature_means,
            scaler_mu: scaler.mu,
            scaler_sigma: scaler.sigma,
            categorical_names: ds.categorical_names.clone(),
            category_vocab,
            target_name: ds.target_name.clone(),
            target_mu: ts.mu[0],
            target_sigma: ts.sigma[0],
            derived_features: false,
        })
    }

    /// Width of the model input: scaled numeric columns then one-hot blocks.
    pub fn input_width(&self) -> usize {
        self.feature_names.len() + self.category_vocab.iter().map(Vec::len).sum::<usize>()
    }

    /// Column labels of the model input, `name=value` for one-hot columns.
    pub fn input_labels(&self) -> Vec<String> {
        let mut labels = self.feature_names.clone();
        for (name, vocab) in self.categorical_names.iter().zip(&self.category_vocab) {
            labels.extend(vocab.iter().map(|v| format!("{name}={v}")));
        }
        labels
    }

    /// Standard deviation of each input column in original units
    /// (1 for one-hot columns).
    pub fn input_scales(&self) -> Vec<f64> {
        let mut s = self.scaler_sigma.clone();
        s.resize(self.input_width(), 1.0);
        s
    }

    fn scaler(&self) -> Scaler {
        Scaler {
            mu: self.scaler_mu.clone(),
            sigma: self.scaler_sigma.clone(),
        }
    }

    /// Imputes, scales and encodes every row of `ds` into `[N×F]`.
    /// Returns the matrix and one warning per categorical column that met
    /// unseen values.
    pub fn transform_features(&self, ds: &Dataset) -> Result<(Tensor, Vec<String>)> {
        let mut numeric = Vec::with_capacity(self.feature_names.len());
        for (name, &mean) in self.feature_names.iter().zip(&self.feature_means) {
            let col = ds
                .numeric_column(name)
                .ok_or_else(|| Error::Schema(format!("missing columns: {name}")))?;
            numeric.push(
                col.iter()
                    .map(|&v| if v.is_nan() { mean } else { v })
                    .collect::<Vec<f64>>(),
            );
        }
        let mut columns = self.scaler().apply(&numeric);
        let mut warnings = Vec::new();
        for (name, vocab) in self.categorical_names.iter().zip(&self.category_vocab) {
            let col = ds
                .categorical_column(name)
                .ok_or_else(|| Error::Schema(format!("missing columns: {name}")))?;
            let block = one_hot_encode(col, vocab)?;
            if !block.unseen_rows.is_empty() {
                let w = format!(
                    "column {name:?}: {} row(s) with categories unseen during fitting were encoded as all zeros",
                    block.unseen_rows.len()
                );
                log::warn!("{w}");
                warnings.push(w);
            }
            columns.extend(block.columns);
        }
        let n = ds.n_rows();
        let f = columns.len();
        let mut data = vec![0.0; n * f];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * f + j] = v;
            }
        }
        Ok((Tensor::new(&[n, f], data)?, warnings))
    }

    pub fn transform_target(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .map(|v| (v - self.target_mu) / self.target_sigma)
            .collect()
    }

    pub fn inverse_target(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .map(|v| v * self.target_sigma + self.target_mu)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn impute_examples() {
        let nan = f64::NAN;
        let (out, rep) = impute_mean(
            &names(3),
            &[vec![1.0, nan, 3.0], vec![4.0, 5.0, 6.0], vec![nan, 5.0]],
        )
        .unwrap();
        assert_eq!(
            out,
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![5.0, 5.0]]
        );
        assert!((rep.columns["c0"].missing_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.columns["c1"].missing_fraction, 0.0);
        assert!(matches!(
            impute_mean(&names(1), &[vec![nan, nan]]),
            Err(Error::UnimputableColumn(c)) if c == "c0"
        ));
    }

    #[test]
    fn scaler_example() {
        let s = Scaler::fit(&names(1), &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(s.mu[0], 2.0);
        assert!((s.sigma[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = &s.apply(&[vec![1.0, 2.0, 3.0]])[0];
        for (a, b) in z.iter().zip([-1.22474487, 0.0, 1.22474487]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_column_is_named() {
        let err = Scaler::fit(&["flat".to_string()], &[vec![7.0; 4]]).unwrap_err();
        assert!(matches!(err, Error::ConstantColumn(c) if c == "flat"));
    }

    #[test]
    fn one_hot_examples() {
        let vocab: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let enc = one_hot_encode(&[Some("B".into())], &vocab).unwrap();
        assert_eq!(enc.columns, vec![vec![0.0], vec![1.0], vec![0.0]]);
        let enc = one_hot_encode(&[Some("A".into())], &["A".to_string()]).unwrap();
        assert_eq!(enc.columns, vec![vec![1.0]]);
        let enc = one_hot_encode(&[Some("D".into())], &vocab).unwrap();
        assert_eq!(enc.columns, vec![vec![0.0]; 3]);
        assert_eq!(enc.unseen_rows, vec![0]);
        assert!(matches!(
            one_hot_encode(&[None], &[]),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn missing_category_becomes_unknown() {
        let vocab = fit_vocab([Some("PDC".to_string()), None].iter());
        assert_eq!(vocab, vec!["PDC".to_string(), UNKNOWN_CATEGORY.to_string()]);
        let enc = one_hot_encode(&[None], &vocab).unwrap();
        assert_eq!(enc.columns, vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn iqr_examples() {
        let r = iqr_outlier_report(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(
            (r.q1, r.q3, r.lower_fence, r.upper_fence),
            (2.0, 4.0, -1.0, 7.0)
        );
        assert_eq!(r.flagged_rows, vec![4]);
        assert!(iqr_outlier_report(&[3.0; 6])
            .unwrap()
            .flagged_rows
            .is_empty());
        assert!(iqr_outlier_report(&[-1.0, 0.0, 0.0, 1.0])
            .unwrap()
            .flagged_rows
            .is_empty());
        assert!(matches!(
            iqr_outlier_report(&[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn derived_feature_examples() {
        assert_eq!(specific_energy_ratio(2.0, 3.0, 1.0, 6.0), 1.0);
        assert_eq!(hydraulic_horsepower(1714.0, 1.0), 1.0);
        assert!(specific_energy_ratio(2.0, 3.0, 0.0, 6.0).is_nan());
    }

    #[test]
    fn split_examples() {
        let s = split_train_test(10, SPLIT_SEED).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert!(s.test.iter().all(|i| !s.train.contains(i)));
        assert_eq!(s, split_train_test(10, SPLIT_SEED).unwrap());
        let big = split_train_test(10_672, SPLIT_SEED).unwrap();
        assert_eq!((big.train.len(), big.test.len()), (8_538, 2_134));
        assert!(matches!(
            split_train_test(4, 42),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn blocked_split_separates_rows() {
        let s = split_blocked(100, 4).unwrap();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.test, (83..100).collect::<Vec<_>>());
        // last training window covers rows 79..=82, first test window rows 83..=86
        assert_eq!(
            split_blocked(100, 1).unwrap().test,
            (80..100).collect::<Vec<_>>()
        );
        assert!(matches!(
            split_blocked(10, 3),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(
            "blocked".parse::<SplitProtocol>().unwrap(),
            SplitProtocol::Blocked
        );
        assert!("kfold".parse::<SplitProtocol>().is_err());
    }

    #[test]
    fn window_examples() {
        let m = Tensor::new(&[5, 2], (0..10).map(f64::from).collect()).unwrap();
        let y: Vec<f64> = (0..5).map(f64::from).collect();
        let w1 = make_windows(&m, &y, 1).unwrap();
        assert_eq!(w1.len(), 5);
        assert_eq!(w1.windows.data(), m.data());
        assert_eq!(w1.statics, m);
        let w3 = make_windows(&m, &y, 3).unwrap();
        assert_eq!(w3.len(), 3);
        assert_eq!(w3.windows.at3(1, 0, 0), 2.0);
        assert_eq!(w3.windows.at3(2, 2, 1), 9.0);
        assert_eq!(w3.targets, vec![2.0, 3.0, 4.0]);
        assert_eq!(w3.statics.row(0), m.row(2));
        assert!(matches!(
            make_windows(&m, &y, 6),
            Err(Error::Window { window: 6, rows: 5 })
        ));
    }

    proptest! {
        #[test]
        fn scaler_round_trip_and_moments(col in prop::collection::vec(-1e3f64..1e3, 3..40)) {
            prop_assume!(col.iter().any(|v| (v - col[0]).abs() > 1e-3));
            let s = Scaler::fit(&names(1), std::slice::from_ref(&col)).unwrap();
            let z = s.apply(std::slice::from_ref(&col));
            let n = col.len() as f64;
            let mean = z[0].iter().sum::<f64>() / n;
            let var = z[0].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            let back = s.inverse(&z);
            for (a, b) in back[0].iter().zip(&col) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn statics_are_last_window_rows(n in 1usize..12, d in 1usize..4, l in 1usize..5, seed in any::<u64>()) {
            prop_assume!(l <= n);
            let m = crate::tensor::seeded_uniform(&mut SeededRng::new(seed), &[n, d], -1.0, 1.0).unwrap();
            let y = vec![0.0; n];
            let w = make_windows(&m, &y, l).unwrap();
            prop_assert_eq!(w.len(), n - l + 1);
            for i in 0..w.len() {
                for j in 0..d {
                    prop_assert_eq!(w.statics.at2(i, j), w.windows.at3(i, l - 1, j));
                }
            }
        }
    }
}
