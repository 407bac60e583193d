//! End-to-end runs behind the CLI subcommands. Every artifact lands under
//! the configured output directory with a fixed name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::data::{
    generate_synthetic, load_csv, read_csv, ColumnKind, Dataset, DatasetSchema, FeatureDescriptor,
    TargetPolicy,
};
use crate::error::{Error, Result};
use crate::explain::{local_surrogate, permutation_importance, ImportanceReport, LocalSurrogate};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{build_model, Model, ModelKind};
use crate::preprocess::{
    derive_features, impute_mean, iqr_outlier_report, make_windows, split_windows,
    ImputationReport, IqrReport, PreprocessorState, SplitIndices, SplitProtocol, HHP_NAME,
    SER_NAME,
};
use crate::tensor::SeededRng;
use crate::train::{predict_samples, train_model, LossCurve, SampleSet};

pub fn losscurve_file(kind: ModelKind) -> String {
    format!("losscurve_{}.csv", kind.slug())
}

pub fn metrics_file(kind: ModelKind) -> String {
    format!("metrics_{}.json", kind.slug())
}

pub fn checkpoint_file(kind: ModelKind) -> String {
    format!("checkpoint_{}.roph", kind.slug())
}

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const IMPORTANCE_JSON_FILE: &str = "importance.json";
pub const SURROGATE_FILE: &str = "surrogate.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const PREPROCESS_REPORT_FILE: &str = "preprocess_report.json";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";
pub const SYNTHETIC_TRUTH_FILE: &str = "synthetic.truth.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Loads the configured dataset; returns it with loader warnings.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Vec<String>)> {
    match &cfg.data {
        DataSource::Csv(path) => {
            let loaded = load_csv(path, &DatasetSchema::default())?;
            Ok((loaded.dataset, loaded.warnings))
        }
        DataSource::Synthetic(spec) => Ok((generate_synthetic(spec)?.0, Vec::new())),
    }
}

/// Data diagnostics computed before fitting; the data itself is untouched.
#[derive(Clone, Debug, Serialize)]
pub struct PreprocessReport {
    pub rows: usize,
    pub dropped_missing_target: usize,
    pub imputation: ImputationReport,
    pub outliers: BTreeMap<String, IqrReport>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub state: PreprocessorState,
    pub split: SplitIndices,
    pub train: SampleSet,
    pub test: SampleSet,
    pub report: PreprocessReport,
}

/// Imputes, scales and windows every row of `ds` with a fitted state.
pub fn build_samples(
    ds: &Dataset,
    state: &PreprocessorState,
    window_len: usize,
) -> Result<(SampleSet, Vec<String>)> {
    let (matrix, warnings) = state.transform_features(ds)?;
    let targets = match &ds.target {
        Some(t) => state.transform_target(t),
        None => vec![f64::NAN; ds.n_rows()],
    };
    Ok((make_windows(&matrix, &targets, window_len)?, warnings))
}

/// Runs the preprocessing pipeline: optional derived features, drop rows
/// without a target, window, split window indices, fit on the target rows
/// of the training windows, transform everything.
pub fn prepare(
    mut ds: Dataset,
    window_len: usize,
    protocol: SplitProtocol,
    split_seed: u64,
    derived: bool,
) -> Result<Prepared> {
    let mut warnings = Vec::new();
    if derived {
        derive_features(&mut ds)?;
    }
    let target = ds
        .target
        .clone()
        .ok_or_else(|| Error::Schema(format!("missing target column {:?}", ds.target_name)))?;
    let keep: Vec<usize> = (0..ds.n_rows()).filter(|&r| !target[r].is_nan()).collect();
    let dropped = ds.n_rows() - keep.len();
    if dropped > 0 {
        let w = format!("dropped {dropped} row(s) with a missing target");
        log::warn!("{w}");
        warnings.push(w);
        ds = ds.select_rows(&keep);
    }
    let n = ds.n_rows();
    if window_len > n {
        return Err(Error::Window {
            window: window_len,
            rows: n,
        });
    }
    let split = split_windows(n + 1 - window_len.max(1), window_len, protocol, split_seed)?;
    let fit_rows: Vec<usize> = split.train.iter().map(|&i| i + window_len - 1).collect();
    let mut state = PreprocessorState::fit(&ds, &fit_rows)?;
    state.derived_features = derived;

    let (imputation_cols, imputation) = impute_mean(&ds.numeric_names, &ds.numeric)?;
    drop(imputation_cols);
    let mut outliers = BTreeMap::new();
    let columns = ds
        .numeric_names
        .iter()
        .zip(&ds.numeric)
        .chain(std::iter::once((
            &ds.target_name,
            ds.target.as_ref().expect("checked"),
        )));
    for (name, col) in columns {
        if let Ok(rep) = iqr_outlier_report(col) {
            outliers.insert(name.clone(), rep);
        }
    }

    let (samples, w) = build_samples(&ds, &state, window_len)?;
    warnings.extend(w);
    let train = samples.subset(&split.train);
    let test = samples.subset(&split.test);
    Ok(Prepared {
        report: PreprocessReport {
            rows: n,
            dropped_missing_target: dropped,
            imputation,
            outliers,
            train_samples: train.len(),
            test_samples: test.len(),
            warnings,
        },
        state,
        split,
        train,
        test,
    })
}

/// Metrics of `model` on `set`, in original target units.
pub fn evaluate(
    model: &Model,
    state: &PreprocessorState,
    set: &SampleSet,
) -> Result<MetricsReport> {
    let pred = state.inverse_target(&predict_samples(model, set)?);
    let actual = state.inverse_target(&set.targets);
    compute_metrics(&actual, &pred)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: LossCurve,
    pub metrics: MetricsReport,
}

/// Builds and trains one model kind on prepared data and writes its loss
/// curve, metrics and checkpoint.
pub fn train_kind(cfg: &RunConfig, kind: ModelKind, prepared: &Prepared) -> Result<TrainOutcome> {
    let spec = cfg.model_spec(kind, prepared.state.input_width());
    let mut model = build_model(&spec, &mut SeededRng::new(cfg.train.seed))?;
    log::info!(
        "training {} ({} parameters)",
        kind.display_name(),
        model.parameter_count()
    );
    let curve = train_model(&mut model, &prepared.train, &prepared.test, &cfg.train)?;
    let metrics = evaluate(&model, &prepared.state, &prepared.test)?;
    let dir = &cfg.output_dir;
    curve.write_csv(&dir.join(losscurve_file(kind)))?;
    write_json(&dir.join(metrics_file(kind)), &metrics)?;
    save_checkpoint(
        &model,
        Some(&prepared.state),
        &dir.join(checkpoint_file(kind)),
    )?;
    Ok(TrainOutcome {
        model,
        curve,
        metrics,
    })
}

fn prepare_from_config(cfg: &RunConfig) -> Result<Prepared> {
    let (ds, warnings) = load_dataset(cfg)?;
    let mut prepared = prepare(
        ds,
        cfg.window_len,
        cfg.split_protocol,
        cfg.split_seed,
        cfg.derived_features,
    )?;
    prepared.report.warnings.splice(0..0, warnings);
    Ok(prepared)
}

/// `train`: one model, kind from the config.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    ensure_dir(&cfg.output_dir)?;
    let prepared = prepare_from_config(cfg)?;
    write_json(
        &cfg.output_dir.join(PREPROCESS_REPORT_FILE),
        &prepared.report,
    )?;
    train_kind(cfg, cfg.kind, &prepared)
}

#[derive(Clone, Debug)]
pub struct CompareRow {
    pub kind: ModelKind,
    pub result: std::result::Result<MetricsReport, String>,
    pub exit_code: i32,
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
}

impl CompareOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,r2,mae,rmse,mape_pct\n");
        for row in &self.rows {
            match &row.result {
                Ok(m) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        row.kind.slug(),
                        m.r2,
                        m.mae,
                        m.rmse,
                        m.mape_pct
                    );
                }
                Err(_) => {
                    let _ = writeln!(out, "{},FAILED,FAILED,FAILED,FAILED", row.kind.slug());
                }
            }
        }
        out
    }

    /// First non-zero exit code among the rows, else 0.
    pub fn exit_code(&self) -> i32 {
        self.rows
            .iter()
            .map(|r| r.exit_code)
            .find(|&c| c != 0)
            .unwrap_or(0)
    }
}

/// `compare`: every configured kind on the same prepared data and seed.
/// A failing kind is reported as a FAILED row; the rest still run.
pub fn run_compare(cfg: &RunConfig) -> Result<CompareOutcome> {
    ensure_dir(&cfg.output_dir)?;
    let prepared = prepare_from_config(cfg)?;
    write_json(
        &cfg.output_dir.join(PREPROCESS_REPORT_FILE),
        &prepared.report,
    )?;
    let mut rows = Vec::with_capacity(cfg.compare_models.len());
    for &kind in &cfg.compare_models {
        let row = match train_kind(cfg, kind, &prepared) {
            Ok(o) => CompareRow {
                kind,
                result: Ok(o.metrics),
                exit_code: 0,
            },
            Err(e) => {
                log::error!("{}: {e}", kind.slug());
                CompareRow {
                    kind,
                    exit_code: e.exit_code(),
                    result: Err(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    let outcome = CompareOutcome { rows };
    write_text(&cfg.output_dir.join(COMPARISON_FILE), &outcome.to_csv())?;
    Ok(outcome)
}

fn checkpoint_or_default(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(
        || cfg.output_dir.join(checkpoint_file(cfg.kind)),
        Path::to_path_buf,
    )
}

fn load_with_state(path: &Path) -> Result<(Model, PreprocessorState)> {
    let (model, state) = load_checkpoint(path)?;
    let state = state.ok_or_else(|| {
        Error::IncompatibleCheckpoint("checkpoint carries no preprocessor".into())
    })?;
    Ok((model, state))
}

/// Test-split samples of the configured data under a checkpoint's fitted state.
fn checkpoint_test_set(
    cfg: &RunConfig,
    model: &Model,
    state: &PreprocessorState,
) -> Result<SampleSet> {
    let (ds, _) = load_dataset(cfg)?;
    let prepared = prepare(
        ds.clone(),
        model.spec().window_len,
        cfg.split_protocol,
        cfg.split_seed,
        state.derived_features,
    )?;
    let mut ds = ds;
    if state.derived_features {
        derive_features(&mut ds)?;
    }
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| ds.target.as_ref().is_some_and(|t| !t[r].is_nan()))
        .collect();
    let (samples, _) = build_samples(&ds.select_rows(&keep), state, model.spec().window_len)?;
    Ok(samples.subset(&prepared.split.test))
}

/// `eval`: reloads a checkpoint and scores it on the configured test split.
pub fn run_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    ensure_dir(&cfg.output_dir)?;
    let (model, state) = load_with_state(&checkpoint_or_default(cfg, checkpoint))?;
    let test = checkpoint_test_set(cfg, &model, &state)?;
    let metrics = evaluate(&model, &state, &test)?;
    write_json(&cfg.output_dir.join(metrics_file(model.kind())), &metrics)?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub sample_index: usize,
    pub actual: Option<f64>,
    pub predicted: f64,
}

/// Schema a checkpoint expects of prediction input.
fn schema_of(state: &PreprocessorState) -> Result<DatasetSchema> {
    let mut cols: Vec<FeatureDescriptor> = state
        .feature_names
        .iter()
        .filter(|n| !(state.derived_features && (n.as_str() == SER_NAME || n.as_str() == HHP_NAME)))
        .map(|n| FeatureDescriptor::new(n, "", ColumnKind::Continuous))
        .collect();
    cols.extend(
        state
            .categorical_names
            .iter()
            .map(|n| FeatureDescriptor::new(n, "", ColumnKind::Categorical)),
    );
    cols.push(FeatureDescriptor::new(
        &state.target_name,
        "",
        ColumnKind::Target,
    ));
    DatasetSchema::new(cols)
}

/// Predictions for every window of `input`, in original units. The sample
/// index is the row of the window's last step.
pub fn predict_csv(
    model: &Model,
    state: &PreprocessorState,
    input: &Path,
) -> Result<Vec<PredictionRow>> {
    let file = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let mut ds = read_csv(
        std::io::BufReader::new(file),
        &schema_of(state)?,
        TargetPolicy::Optional,
    )?
    .dataset;
    if state.derived_features {
        derive_features(&mut ds)?;
    }
    let l = model.spec().window_len;
    let (samples, _) = build_samples(&ds, state, l)?;
    let pred = state.inverse_target(&predict_samples(model, &samples)?);
    let actual = ds.target.as_ref();
    Ok(pred
        .into_iter()
        .enumerate()
        .map(|(i, p)| PredictionRow {
            sample_index: i + l - 1,
            actual: actual.map(|t| t[i + l - 1]).filter(|v| !v.is_nan()),
            predicted: p,
        })
        .collect())
}

pub fn predictions_to_csv(rows: &[PredictionRow]) -> String {
    let with_actual = rows.iter().any(|r| r.actual.is_some());
    let mut out = String::from(if with_actual {
        "sample_index,actual,predicted,abs_error\n"
    } else {
        "sample_index,predicted\n"
    });
    for r in rows {
        if with_actual {
            match r.actual {
                Some(a) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        r.sample_index,
                        a,
                        r.predicted,
                        (a - r.predicted).abs()
                    );
                }
                None => {
                    let _ = writeln!(out, "{},,{},", r.sample_index, r.predicted);
                }
            }
        } else {
            let _ = writeln!(out, "{},{}", r.sample_index, r.predicted);
        }
    }
    out
}

/// `predict`: checkpoint + CSV in, `predictions.csv` out.
pub fn run_predict(checkpoint: &Path, input: &Path, out_dir: &Path) -> Result<Vec<PredictionRow>> {
    ensure_dir(out_dir)?;
    let (model, state) = load_with_state(checkpoint)?;
    let rows = predict_csv(&model, &state, input)?;
    write_text(&out_dir.join(PREDICTIONS_FILE), &predictions_to_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SurrogateExplanation {
    pub test_position: usize,
    pub surrogate: LocalSurrogate,
    /// Original target units per original feature unit, keyed by feature.
    pub weights_original_units: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct ExplainOutcome {
    pub importance: ImportanceReport,
    pub surrogates: Vec<SurrogateExplanation>,
}

/// `explain`: permutation importance on the test split plus local
/// surrogates for the first test samples.
pub fn run_explain(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ExplainOutcome> {
    ensure_dir(&cfg.output_dir)?;
    let (model, state) = load_with_state(&checkpoint_or_default(cfg, checkpoint))?;
    let test = checkpoint_test_set(cfg, &model, &state)?;
    let labels = state.input_labels();
    let importance =
        permutation_importance(&model, &test, &labels, cfg.train.seed, cfg.explain_repeats)?;
    write_text(&cfg.output_dir.join(IMPORTANCE_FILE), &importance.to_csv())?;
    write_json(&cfg.output_dir.join(IMPORTANCE_JSON_FILE), &importance)?;
    let mut rng = SeededRng::with_stream(cfg.train.seed, 7);
    let mut surrogates = Vec::new();
    for pos in 0..cfg.explain_anchors.min(test.len()) {
        let s = local_surrogate(
            &model,
            &test,
            pos,
            cfg.explain_radius,
            cfg.explain_samples,
            &mut rng,
        )?;
        let weights_original_units = labels
            .iter()
            .cloned()
            .zip(s.in_original_units(&state))
            .collect();
        surrogates.push(SurrogateExplanation {
            test_position: pos,
            surrogate: s,
            weights_original_units,
        });
    }
    write_json(&cfg.output_dir.join(SURROGATE_FILE), &surrogates)?;
    Ok(ExplainOutcome {
        importance,
        surrogates,
    })
}

/// `gen-data`: writes the synthetic CSV and its ground-truth descriptor.
pub fn run_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(Error::Config(
            "gen-data needs a synthetic data source, not data.path".into(),
        ));
    };
    ensure_dir(&cfg.output_dir)?;
    let (ds, truth) = generate_synthetic(spec)?;
    let path = cfg.output_dir.join(SYNTHETIC_FILE);
    crate::data::save_csv(&path, &ds)?;
    write_json(&cfg.output_dir.join(SYNTHETIC_TRUTH_FILE), &truth)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn small_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::parse(
            "model.window_len = 2\nmodel.lstm_hidden = 8\nmodel.heads = 2\nmodel.ffn_dim = 8\n\
             train.epochs = 2\ntrain.batch_size = 32\ndata.synthetic.n_rows = 150\n\
             explain.repeats = 3\nexplain.anchors = 2\nexplain.samples = 60\n",
        )
        .unwrap();
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn fit_uses_training_rows_only() {
        let (ds, _) = generate_synthetic(&SyntheticSpec {
            n_rows: 300,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let p = prepare(ds, 1, SplitProtocol::Random, 42, false).unwrap();
        let d = p.state.input_width();
        for j in 0..d {
            let train_mean = (0..p.train.len())
                .map(|i| p.train.statics.at2(i, j))
                .sum::<f64>()
                / p.train.len() as f64;
            assert!(train_mean.abs() < 1e-9, "column {j}: {train_mean}");
        }
        // regimes shift the feature distribution, so the held-out rows are off-centre
        let test_mean = (0..p.test.len())
            .map(|i| p.test.statics.at2(i, 0))
            .sum::<f64>()
            / p.test.len() as f64;
        assert!(test_mean != 0.0);
        assert_eq!(p.train.len() + p.test.len(), 300);
    }

    #[test]
    fn missing_targets_are_dropped() {
        let (mut ds, _) = generate_synthetic(&SyntheticSpec {
            n_rows: 120,
            ..SyntheticSpec::default()
        })
        .unwrap();
        ds.target.as_mut().unwrap()[5] = f64::NAN;
        let p = prepare(ds, 1, SplitProtocol::Random, 42, false).unwrap();
        assert_eq!(p.report.dropped_missing_target, 1);
        assert_eq!(p.train.len() + p.test.len(), 119);
    }

    #[test]
    fn blocked_split_shares_no_rows_between_train_and_test() {
        let (ds, _) = generate_synthetic(&SyntheticSpec {
            n_rows: 200,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let p = prepare(ds, 4, SplitProtocol::Blocked, 42, false).unwrap();
        let last_train_row = p.split.train.iter().max().unwrap() + 3;
        assert!(p.split.test.iter().all(|&w| w > last_train_row));
        assert_eq!(p.train.len(), 158);
        assert_eq!(p.test.len(), 197 - 161);
    }

    #[test]
    fn derived_features_widen_the_input() {
        let (ds, _) = generate_synthetic(&SyntheticSpec {
            n_rows: 120,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let p = prepare(ds, 1, SplitProtocol::Random, 42, true).unwrap();
        assert_eq!(p.state.input_width(), 10);
    }

    #[test]
    fn train_eval_predict_explain_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path());
        let outcome = run_train(&cfg).unwrap();
        assert_eq!(outcome.curve.len(), 2);
        for f in [
            losscurve_file(cfg.kind),
            metrics_file(cfg.kind),
            checkpoint_file(cfg.kind),
        ] {
            assert!(dir.path().join(f).exists());
        }
        let m = run_eval(&cfg, None).unwrap();
        assert_eq!(m, outcome.metrics);

        let data = run_gen_data(&cfg).unwrap();
        let rows = run_predict(
            &dir.path().join(checkpoint_file(cfg.kind)),
            &data,
            dir.path(),
        )
        .unwrap();
        assert_eq!(rows.len(), 149);
        assert_eq!(rows[0].sample_index, 1);
        let text = std::fs::read_to_string(dir.path().join(PREDICTIONS_FILE)).unwrap();
        assert!(text.starts_with("sample_index,actual,predicted,abs_error\n"));

        let ex = run_explain(&cfg, None).unwrap();
        assert_eq!(ex.importance.features.len(), 8);
        assert_eq!(ex.surrogates.len(), 2);
    }

    #[test]
    fn gen_data_rejects_csv_sources() {
        let cfg = RunConfig::parse("data.path = x.csv").unwrap();
        assert!(matches!(run_gen_data(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn comparison_rows_and_failures() {
        let outcome = CompareOutcome {
            rows: vec![
                CompareRow {
                    kind: ModelKind::TsMixer,
                    result: Ok(MetricsReport {
                        r2: 0.5,
                        mae: 1.0,
                        rmse: 2.0,
                        mape_pct: 3.0,
                        n: 10,
                        mape_excluded: 0,
                    }),
                    exit_code: 0,
                },
                CompareRow {
                    kind: ModelKind::AdvancedHybrid,
                    result: Err("diverged".into()),
                    exit_code: 4,
                },
            ],
        };
        assert_eq!(
            outcome.to_csv(),
            "model,r2,mae,rmse,mape_pct\nts_mixer,0.5,1,2,3\nadvanced_hybrid,FAILED,FAILED,FAILED,FAILED\n"
        );
        assert_eq!(outcome.exit_code(), 4);
    }
}
