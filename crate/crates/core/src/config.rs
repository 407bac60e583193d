//! `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are rejected; absent keys keep their defaults.

use std::path::{Path, PathBuf};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::preprocess::{SplitProtocol, SPLIT_SEED};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub window_len: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub train: TrainConfig,
    pub data: DataSource,
    pub split_protocol: SplitProtocol,
    pub split_seed: u64,
    pub derived_features: bool,
    pub output_dir: PathBuf,
    pub compare_models: Vec<ModelKind>,
    pub explain_repeats: usize,
    pub explain_radius: f64,
    pub explain_samples: usize,
    pub explain_anchors: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kind: ModelKind::AdvancedHybrid,
            window_len: ModelSpec::DEFAULT_WINDOW_LEN,
            lstm_hidden: ModelSpec::DEFAULT_LSTM_HIDDEN,
            lstm_layers: ModelSpec::DEFAULT_LSTM_LAYERS,
            heads: ModelSpec::DEFAULT_HEADS,
            ffn_dim: ModelSpec::DEFAULT_FFN_DIM,
            train: TrainConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            split_protocol: SplitProtocol::Random,
            split_seed: SPLIT_SEED,
            derived_features: false,
            output_dir: PathBuf::from("out"),
            compare_models: ModelKind::ALL.to_vec(),
            explain_repeats: 5,
            explain_radius: 0.5,
            explain_samples: 200,
            explain_anchors: 10,
        }
    }
}

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model.kind", "advanced_hybrid", "baseline_lstm | ts_mixer | hybrid_lstm_mixer | hybrid_lstm_mixer_attention | advanced_hybrid"),
    ("model.window_len", "1", "rows per input window"),
    ("model.lstm_hidden", "64", "LSTM hidden units per layer (also the encoder width)"),
    ("model.lstm_layers", "2", "stacked LSTM layers"),
    ("model.heads", "4", "transformer attention heads"),
    ("model.ffn_dim", "128", "transformer feed-forward width"),
    ("train.lr", "0.001", "AdamW learning rate"),
    ("train.weight_decay", "1e-5", "AdamW decoupled weight decay"),
    ("train.batch_size", "64", "mini-batch size"),
    ("train.epochs", "100", "full passes over the training split"),
    ("train.dropout", "0.2", "dropout rate"),
    ("train.beta1", "0.9", "AdamW first-moment decay"),
    ("train.beta2", "0.999", "AdamW second-moment decay"),
    ("train.eps", "1e-8", "AdamW denominator epsilon"),
    ("train.seed", "42", "seed for initialization, shuffling and dropout"),
    ("data.path", "(unset)", "CSV file with the default schema columns; excludes data.synthetic.*"),
    ("data.split", "random", "random | blocked (depth-ordered, no row shared by train and test windows)"),
    ("data.split_seed", "42", "seed of the random 80/20 split"),
    ("data.derived_features", "false", "append specific energy ratio and hydraulic horsepower"),
    ("data.synthetic.n_rows", "2000", "generated rows"),
    ("data.synthetic.noise_sigma", "1.2", "target noise standard deviation, ft/hr"),
    ("data.synthetic.regime_count", "4", "formation segments"),
    ("data.synthetic.seed", "42", "generator seed"),
    ("data.synthetic.static_coeffs", "4,3,2,1.5,2,-1,0,0", "coefficients on the current row"),
    ("data.synthetic.lag1_coeffs", "3,0,2,0,0,0,0,0", "coefficients on the previous row"),
    ("data.synthetic.lag2_coeffs", "0,2,0,0,1.5,0,0,0", "coefficients on the row two back"),
    ("output.dir", "out", "directory for every artifact"),
    ("compare.models", "all five kinds", "comma-separated kinds trained by `compare`"),
    ("explain.repeats", "5", "permutations per feature"),
    ("explain.radius", "0.5", "surrogate perturbation radius (scaled units)"),
    ("explain.samples", "200", "perturbations per surrogate"),
    ("explain.anchors", "10", "test samples explained by the surrogate"),
];

/// Rendered key table for `--help`.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key = value, one per line; defaults in brackets):\n");
    for (k, d, desc) in KEYS {
        out.push_str(&format!("  {k:<width$}  [{d}] {desc}\n"));
    }
    out
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut path: Option<PathBuf> = None;
        let mut synth = SyntheticSpec::default();
        let mut synth_touched = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "model.kind" => cfg.kind = v.parse()?,
                "model.window_len" => cfg.window_len = parse_num(key, v)?,
                "model.lstm_hidden" => cfg.lstm_hidden = parse_num(key, v)?,
                "model.lstm_layers" => cfg.lstm_layers = parse_num(key, v)?,
                "model.heads" => cfg.heads = parse_num(key, v)?,
                "model.ffn_dim" => cfg.ffn_dim = parse_num(key, v)?,
                "train.lr" => cfg.train.learning_rate = parse_num(key, v)?,
                "train.weight_decay" => cfg.train.weight_decay = parse_num(key, v)?,
                "train.batch_size" => cfg.train.batch_size = parse_num(key, v)?,
                "train.epochs" => cfg.train.epochs = parse_num(key, v)?,
                "train.dropout" => cfg.train.dropout = parse_num(key, v)?,
                "train.beta1" => cfg.train.beta1 = parse_num(key, v)?,
                "train.beta2" => cfg.train.beta2 = parse_num(key, v)?,
                "train.eps" => cfg.train.eps = parse_num(key, v)?,
                "train.seed" => cfg.train.seed = parse_num(key, v)?,
                "data.path" => path = Some(PathBuf::from(v)),
                "data.split" => cfg.split_protocol = v.parse()?,
                "data.split_seed" => cfg.split_seed = parse_num(key, v)?,
                "data.derived_features" => cfg.derived_features = parse_bool(key, v)?,
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                "compare.models" => {
                    cfg.compare_models = v
                        .split(',')
                        .map(|k| k.trim().parse())
                        .collect::<Result<_>>()?;
                }
                "explain.repeats" => cfg.explain_repeats = parse_num(key, v)?,
                "explain.radius" => cfg.explain_radius = parse_num(key, v)?,
                "explain.samples" => cfg.explain_samples = parse_num(key, v)?,
                "explain.anchors" => cfg.explain_anchors = parse_num(key, v)?,
                k if k.starts_with("data.synthetic.") => {
                    synth_touched = true;
                    match &k["data.synthetic.".len()..] {
                        "n_rows" => synth.n_rows = parse_num(key, v)?,
                        "noise_sigma" => synth.noise_sigma = parse_num(key, v)?,
                        "regime_count" => synth.regime_count = parse_num(key, v)?,
                        "seed" => synth.seed = parse_num(key, v)?,
                        "static_coeffs" => synth.static_coeffs = parse_list(key, v)?,
                        "lag1_coeffs" => synth.temporal_coeffs[0] = parse_list(key, v)?,
                        "lag2_coeffs" => synth.temporal_coeffs[1] = parse_list(key, v)?,
                        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                    }
                }
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        cfg.data = match (path, synth_touched) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "data.path and data.synthetic.* are mutually exclusive".into(),
                ))
            }
            (Some(p), false) => DataSource::Csv(p),
            (None, _) => DataSource::Synthetic(synth),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_spec(self.kind, 1).validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        if self.compare_models.is_empty() {
            return Err(Error::Config("compare.models is empty".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self, kind: ModelKind, input_features: usize) -> ModelSpec {
        ModelSpec {
            kind,
            input_features,
            window_len: self.window_len,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout: self.train.dropout,
        }
    }

    /// Overrides the training seed (and the generator seed for synthetic data).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = seed;
        }
        self
    }
}
