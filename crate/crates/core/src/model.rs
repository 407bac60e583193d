//! The five regressors, assembled from the layer primitives.
//!
//! | kind                        | temporal path                          | static path        | head              |
//! |-----------------------------|----------------------------------------|--------------------|-------------------|
//! | `BaselineLstm`              | LSTM → last step                       | –                  | dense(1)          |
//! | `TsMixer`                   | –                                      | standalone mixer   | (mixer readout)   |
//! | `HybridLstmMixer`           | LSTM → last step                       | branch mixer       | concat → dropout → dense(1) |
//! | `HybridLstmMixerAttention`  | LSTM → attention pool                  | branch mixer       | concat → dropout → dense(1) |
//! | `AdvancedHybrid`            | LSTM → encoder → attention pool        | branch mixer       | concat → dropout → dense(1) |
//!
//! The static input of every sample is the last row of its window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::attention::PoolCache;
use crate::layers::dropout::{apply_mask, dropout_apply};
use crate::layers::fusion::{concat_features, split_features, FusionCache};
use crate::layers::linear::LinearCache;
use crate::layers::lstm::LstmCache;
use crate::layers::mixer::{MixerCache, MixerVariant};
use crate::layers::transformer::EncoderCache;
use crate::layers::{
    last_step, last_step_backward, AttentionPool, FusionHead, Linear, LstmStack, MixerBlock,
    TransformerEncoderBlock,
};
use crate::params::{Gradients, ParamSet};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    BaselineLstm,
    TsMixer,
    HybridLstmMixer,
    HybridLstmMixerAttention,
    AdvancedHybrid,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::BaselineLstm,
        ModelKind::TsMixer,
        ModelKind::HybridLstmMixer,
        ModelKind::HybridLstmMixerAttention,
        ModelKind::AdvancedHybrid,
    ];

    /// Identifier used in file names and configuration.
    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::BaselineLstm => "baseline_lstm",
            ModelKind::TsMixer => "ts_mixer",
            ModelKind::HybridLstmMixer => "hybrid_lstm_mixer",
            ModelKind::HybridLstmMixerAttention => "hybrid_lstm_mixer_attention",
            ModelKind::AdvancedHybrid => "advanced_hybrid",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::BaselineLstm => "LSTM Baseline",
            ModelKind::TsMixer => "TS-Mixer",
            ModelKind::HybridLstmMixer => "Hybrid LSTM + TS-Mixer",
            ModelKind::HybridLstmMixerAttention => "Hybrid LSTM + TS-Mixer + Attention",
            ModelKind::AdvancedHybrid => "Advanced Hybrid",
        }
    }

    pub fn uses_lstm(self) -> bool {
        self != ModelKind::TsMixer
    }

    fn is_hybrid(self) -> bool {
        matches!(
            self,
            ModelKind::HybridLstmMixer
                | ModelKind::HybridLstmMixerAttention
                | ModelKind::AdvancedHybrid
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model kind {s:?}; expected one of {}",
                    ModelKind::ALL.map(|k| k.slug()).join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_features: usize,
    pub window_len: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl ModelSpec {
    pub const DEFAULT_WINDOW_LEN: usize = 1;
    pub const DEFAULT_LSTM_HIDDEN: usize = 64;
    pub const DEFAULT_LSTM_LAYERS: usize = 2;
    pub const DEFAULT_HEADS: usize = 4;
    pub const DEFAULT_FFN_DIM: usize = 128;
    pub const DEFAULT_DROPOUT: f64 = 0.2;

    pub fn new(kind: ModelKind, input_features: usize) -> Self {
        ModelSpec {
            kind,
            input_features,
            window_len: Self::DEFAULT_WINDOW_LEN,
            lstm_hidden: Self::DEFAULT_LSTM_HIDDEN,
            lstm_layers: Self::DEFAULT_LSTM_LAYERS,
            heads: Self::DEFAULT_HEADS,
            ffn_dim: Self::DEFAULT_FFN_DIM,
            dropout: Self::DEFAULT_DROPOUT,
        }
    }

    pub fn with_window(mut self, window_len: usize) -> Self {
        self.window_len = window_len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_features", self.input_features),
            ("window_len", self.window_len),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.kind == ModelKind::AdvancedHybrid && !self.lstm_hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "lstm_hidden {} must be divisible by heads {}",
                self.lstm_hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let lstm = LstmStack::param_count(self.input_features, self.lstm_hidden, self.lstm_layers);
        let branch = MixerBlock::param_count(MixerVariant::Branch, self.input_features);
        let fusion =
            Linear::param_count(self.lstm_hidden + crate::layers::mixer::BRANCH_WIDTHS[1], 1);
        match self.kind {
            ModelKind::BaselineLstm => lstm + Linear::param_count(self.lstm_hidden, 1),
            ModelKind::TsMixer => {
                MixerBlock::param_count(MixerVariant::Standalone, self.input_features)
            }
            ModelKind::HybridLstmMixer => lstm + branch + fusion,
            ModelKind::HybridLstmMixerAttention => lstm + self.lstm_hidden + branch + fusion,
            ModelKind::AdvancedHybrid => {
                lstm + TransformerEncoderBlock::param_count(self.lstm_hidden, self.ffn_dim)
                    + self.lstm_hidden
                    + branch
                    + fusion
            }
        }
    }
}

/// Forward-pass mode. Training draws dropout masks from the given generator
/// and normalizes with batch statistics.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut SeededRng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Debug)]
enum Head {
    Dense(Linear),
    Fusion(FusionHead),
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamSet,
    lstm: Option<LstmStack>,
    encoder: Option<TransformerEncoderBlock>,
    pool: Option<AttentionPool>,
    mixer: Option<MixerBlock>,
    head: Option<Head>,
}

#[derive(Debug)]
struct ForwardCache {
    batch: usize,
    steps: usize,
    lstm: Option<LstmCache>,
    encoder: Option<EncoderCache>,
    pool: Option<PoolCache>,
    mixer: Option<MixerCache>,
    dropout_mask: Option<Vec<f64>>,
    dense: Option<LinearCache>,
    fusion: Option<FusionCache>,
}

/// Activations recorded by one forward pass, consumed by [`Model::backward`].
#[derive(Debug, Default)]
pub struct GradTape {
    cache: Option<ForwardCache>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_none()
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    /// Attention-pool weights `[B×T]` of the last forward, when the model has a pool.
    pub fn attention_weights(&self) -> Option<&[f64]> {
        self.cache
            .as_ref()?
            .pool
            .as_ref()
            .map(|p| p.weights.as_slice())
    }
}

/// Builds a model with freshly initialized parameters.
pub fn build_model(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Model> {
    spec.validate()?;
    let mut ps = ParamSet::new();
    let d = spec.input_features;
    let h = spec.lstm_hidden;
    let lstm = spec
        .kind
        .uses_lstm()
        .then(|| LstmStack::new(&mut ps, rng, "lstm", d, h, spec.lstm_layers));
    let encoder = if spec.kind == ModelKind::AdvancedHybrid {
        Some(TransformerEncoderBlock::new(
            &mut ps,
            rng,
            "encoder",
            h,
            spec.heads,
            spec.ffn_dim,
        )?)
    } else {
        None
    };
    let pool = matches!(
        spec.kind,
        ModelKind::HybridLstmMixerAttention | ModelKind::AdvancedHybrid
    )
    .then(|| AttentionPool::new(&mut ps, rng, "pool", h));
    let mixer = match spec.kind {
        ModelKind::BaselineLstm => None,
        ModelKind::TsMixer => Some(MixerBlock::standalone(&mut ps, rng, "mixer", d)),
        _ => Some(MixerBlock::branch(&mut ps, rng, "mixer", d)),
    };
    let head = match spec.kind {
        ModelKind::BaselineLstm => Some(Head::Dense(Linear::new(&mut ps, rng, "head", h, 1))),
        ModelKind::TsMixer => None,
        _ => {
            let static_dim = mixer.as_ref().map_or(0, MixerBlock::output_dim);
            Some(Head::Fusion(FusionHead::new(
                &mut ps, rng, "head", h, static_dim,
            )))
        }
    };
    Ok(Model {
        spec: spec.clone(),
        params: ps,
        lstm,
        encoder,
        pool,
        mixer,
        head,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.mixer.as_ref().is_some_and(|m| !m.norms.is_empty())
    }

    fn check_inputs(&self, window: &Tensor, statics: &Tensor) -> Result<(usize, usize)> {
        let (b, l, d) = window.dims3("model forward")?;
        let expect = [b, self.spec.window_len, self.spec.input_features];
        if l != self.spec.window_len || d != self.spec.input_features {
            return Err(Error::dim(
                "model forward (window)",
                window.shape(),
                &expect,
            ));
        }
        if statics.shape() != [b, d] {
            return Err(Error::dim(
                "model forward (static)",
                statics.shape(),
                &[b, d],
            ));
        }
        Ok((b, l))
    }

    /// Predicts `[B×1]` scaled targets from `window: [B×L×D]` and
    /// `statics: [B×D]`. With a tape, records what backward needs.
    pub fn forward(
        &self,
        window: &Tensor,
        statics: &Tensor,
        mode: Mode<'_>,
        tape: Option<&mut GradTape>,
    ) -> Result<Tensor> {
        let (batch, steps) = self.check_inputs(window, statics)?;
        let training = mode.is_training();
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let ps = &self.params;
        let mut cache = ForwardCache {
            batch,
            steps,
            lstm: None,
            encoder: None,
            pool: None,
            mixer: None,
            dropout_mask: None,
            dense: None,
            fusion: None,
        };

        let out = match self.spec.kind {
            ModelKind::TsMixer => {
                let mixer = self.mixer.as_ref().expect("ts mixer has a mixer");
                let (y, c) = mixer.forward(ps, statics, training)?;
                cache.mixer = Some(c);
                y
            }
            ModelKind::BaselineLstm => {
                let lstm = self.lstm.as_ref().expect("baseline has an lstm");
                let between = match rng.as_deref_mut() {
                    Some(r) if self.spec.dropout > 0.0 => Some((self.spec.dropout, r)),
                    _ => None,
                };
                let (seq, lc) = lstm.forward(ps, window, between)?;
                cache.lstm = Some(lc);
                let Some(Head::Dense(dense)) = &self.head else {
                    unreachable!("baseline head")
                };
                let (y, dc) = dense.forward(ps, &last_step(&seq)?)?;
                cache.dense = Some(dc);
                y
            }
            kind => {
                debug_assert!(kind.is_hybrid());
                let lstm = self.lstm.as_ref().expect("hybrid has an lstm");
                let (seq, lc) = lstm.forward(ps, window, None)?;
                cache.lstm = Some(lc);
                let temporal = match kind {
                    ModelKind::HybridLstmMixer => last_step(&seq)?,
                    ModelKind::HybridLstmMixerAttention => {
                        let (pooled, pc) = self.pool.as_ref().expect("pool").forward(ps, &seq)?;
                        cache.pool = Some(pc);
                        pooled
                    }
                    _ => {
                        let (encoded, ec) =
                            self.encoder.as_ref().expect("encoder").forward(ps, &seq)?;
                        cache.encoder = Some(ec);
                        let (pooled, pc) =
                            self.pool.as_ref().expect("pool").forward(ps, &encoded)?;
                        cache.pool = Some(pc);
                        pooled
                    }
                };
                let (branch, mc) = self
                    .mixer
                    .as_ref()
                    .expect("branch mixer")
                    .forward(ps, statics, training)?;
                cache.mixer = Some(mc);
                let mut joined = concat_features(&temporal, &branch)?;
                if let Some(r) = rng.as_mut() {
                    let (dropped, mask) = dropout_apply(&joined, self.spec.dropout, r, true)?;
                    joined = dropped;
                    cache.dropout_mask = mask;
                }
                let Some(Head::Fusion(head)) = &self.head else {
                    unreachable!("hybrid head")
                };
                let (y, fc) = head.forward_joined(ps, &joined)?;
                cache.fusion = Some(fc);
                y
            }
        };
        if let Some(t) = tape {
            t.cache = Some(cache);
        }
        Ok(out)
    }

    /// Inference-mode forward without a tape.
    pub fn predict(&self, window: &Tensor, statics: &Tensor) -> Result<Tensor> {
        self.forward(window, statics, Mode::Eval, None)
    }

    /// Accumulates `∂loss/∂θ` into `grads` given `∂loss/∂output` (`[B×1]`).
    pub fn backward(
        &self,
        tape: &GradTape,
        loss_grad: &Tensor,
        grads: &mut Gradients,
    ) -> Result<()> {
        let cache = tape.cache.as_ref().ok_or(Error::TapeEmpty)?;
        if loss_grad.shape() != [cache.batch, 1] {
            return Err(Error::dim(
                "model backward",
                loss_grad.shape(),
                &[cache.batch, 1],
            ));
        }
        let ps = &self.params;
        match self.spec.kind {
            ModelKind::TsMixer => {
                let mixer = self.mixer.as_ref().expect("mixer");
                mixer.backward(
                    ps,
                    cache.mixer.as_ref().ok_or(Error::TapeEmpty)?,
                    loss_grad,
                    grads,
                )?;
            }
            ModelKind::BaselineLstm => {
                let Some(Head::Dense(dense)) = &self.head else {
                    unreachable!("baseline head")
                };
                let dlast = dense.backward(
                    ps,
                    cache.dense.as_ref().ok_or(Error::TapeEmpty)?,
                    loss_grad,
                    grads,
                )?;
                let dseq = last_step_backward(&dlast, cache.steps)?;
                let lstm = self.lstm.as_ref().expect("lstm");
                lstm.backward(
                    ps,
                    cache.lstm.as_ref().ok_or(Error::TapeEmpty)?,
                    &dseq,
                    grads,
                )?;
            }
            kind => {
                let Some(Head::Fusion(head)) = &self.head else {
                    unreachable!("hybrid head")
                };
                let mut dj = head.backward_joined(
                    ps,
                    cache.fusion.as_ref().ok_or(Error::TapeEmpty)?,
                    loss_grad,
                    grads,
                )?;
                if let Some(mask) = &cache.dropout_mask {
                    dj = apply_mask(&dj, mask);
                }
                let (dtemporal, dbranch) = split_features(&dj, head.temporal_dim)?;
                let mixer = self.mixer.as_ref().expect("mixer");
                mixer.backward(
                    ps,
                    cache.mixer.as_ref().ok_or(Error::TapeEmpty)?,
                    &dbranch,
                    grads,
                )?;
                let dseq = match kind {
                    ModelKind::HybridLstmMixer => last_step_backward(&dtemporal, cache.steps)?,
                    ModelKind::HybridLstmMixerAttention => {
                        let pc = cache.pool.as_ref().ok_or(Error::TapeEmpty)?;
                        self.pool
                            .as_ref()
                            .expect("pool")
                            .backward(ps, pc, &dtemporal, grads)?
                    }
                    _ => {
                        let pc = cache.pool.as_ref().ok_or(Error::TapeEmpty)?;
                        let dencoded = self
                            .pool
                            .as_ref()
                            .expect("pool")
                            .backward(ps, pc, &dtemporal, grads)?;
                        let ec = cache.encoder.as_ref().ok_or(Error::TapeEmpty)?;
                        self.encoder
                            .as_ref()
                            .expect("encoder")
                            .backward(ps, ec, &dencoded, grads)?
                    }
                };
                let lstm = self.lstm.as_ref().expect("lstm");
                lstm.backward(
                    ps,
                    cache.lstm.as_ref().ok_or(Error::TapeEmpty)?,
                    &dseq,
                    grads,
                )?;
            }
        }
        Ok(())
    }

    /// Moves batch-norm running statistics toward the batch recorded on
    /// `tape`. No-op for models without batch norm or eval-mode tapes.
    pub fn absorb_batch_stats(&mut self, tape: &GradTape) {
        if let (Some(mixer), Some(cache)) = (
            &self.mixer,
            tape.cache.as_ref().and_then(|c| c.mixer.as_ref()),
        ) {
            mixer.update_running_stats(&mut self.params, cache);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_params, project, projection, Sampling};
    use crate::tensor::seeded_uniform;

    fn small_spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            input_features: 3,
            window_len: 3,
            lstm_hidden: 4,
            lstm_layers: 2,
            heads: 2,
            ffn_dim: 6,
            dropout: 0.2,
        }
    }

    fn inputs(seed: u64, b: usize, spec: &ModelSpec) -> (Tensor, Tensor) {
        let window = seeded_uniform(
            &mut SeededRng::new(seed),
            &[b, spec.window_len, spec.input_features],
            -1.0,
            1.0,
        )
        .unwrap();
        let statics = crate::layers::last_step(&window).unwrap();
        (window, statics)
    }

    #[test]
    fn baseline_parameter_count_by_enumeration() {
        // 4·64·(8+64)+4·64 + 4·64·(64+64)+4·64 + 64+1
        let closed = 4 * 64 * (8 + 64) + 4 * 64 + 4 * 64 * (64 + 64) + 4 * 64 + 64 + 1;
        assert_eq!(closed, 51_777);
        let spec = ModelSpec::new(ModelKind::BaselineLstm, 8);
        let m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
        let enumerated: usize = m
            .params()
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum();
        assert_eq!(enumerated, closed);
        assert_eq!(m.parameter_count(), closed);
    }

    #[test]
    fn every_kind_count_matches_closed_form() {
        for kind in ModelKind::ALL {
            let spec = ModelSpec::new(kind, 8);
            let m = build_model(&spec, &mut SeededRng::new(1)).unwrap();
            assert_eq!(m.parameter_count(), spec.parameter_count(), "{kind}");
        }
    }

    #[test]
    fn advanced_hybrid_head_dim() {
        let spec = ModelSpec::new(ModelKind::AdvancedHybrid, 8);
        let m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
        let enc = m.encoder.as_ref().unwrap();
        assert_eq!((enc.heads, enc.model_dim, enc.head_dim()), (4, 64, 16));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ModelSpec::new(ModelKind::AdvancedHybrid, 8);
        spec.heads = 5;
        assert!(matches!(
            build_model(&spec, &mut SeededRng::new(0)),
            Err(Error::Config(_))
        ));
        let mut spec = ModelSpec::new(ModelKind::TsMixer, 8);
        spec.window_len = 0;
        assert!(matches!(
            build_model(&spec, &mut SeededRng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_parameters() {
        for kind in ModelKind::ALL {
            let spec = ModelSpec::new(kind, 5);
            let a = build_model(&spec, &mut SeededRng::new(9)).unwrap();
            let b = build_model(&spec, &mut SeededRng::new(9)).unwrap();
            assert_eq!(a.params().flat_trainable(), b.params().flat_trainable());
        }
    }

    #[test]
    fn zero_parameters_predict_zero() {
        for kind in ModelKind::ALL {
            let spec = small_spec(kind);
            let mut m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
            for e in m.params_mut().entries_mut() {
                if e.trainable {
                    e.value.data_mut().fill(0.0);
                }
            }
            let (w, s) = inputs(1, 4, &spec);
            let y = m.predict(&w, &s).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0), "{kind}");
        }
    }

    #[test]
    fn single_step_advanced_hybrid_reduces_to_fusion() {
        let mut spec = small_spec(ModelKind::AdvancedHybrid);
        spec.window_len = 1;
        let m = build_model(&spec, &mut SeededRng::new(4)).unwrap();
        let (w, s) = inputs(2, 3, &spec);
        let y = m.predict(&w, &s).unwrap();
        let ps = m.params();
        let (seq, _) = m.lstm.as_ref().unwrap().forward(ps, &w, None).unwrap();
        let (enc, _) = m.encoder.as_ref().unwrap().forward(ps, &seq).unwrap();
        let step = crate::layers::last_step(&enc).unwrap();
        let (branch, _) = m.mixer.as_ref().unwrap().forward(ps, &s, false).unwrap();
        let Some(Head::Fusion(head)) = &m.head else {
            panic!()
        };
        let (expect, _) = head.forward(ps, &step, &branch).unwrap();
        assert_eq!(y.data(), expect.data());
    }

    #[test]
    fn forward_is_deterministic() {
        for kind in ModelKind::ALL {
            let spec = small_spec(kind);
            let m = build_model(&spec, &mut SeededRng::new(6)).unwrap();
            let (w, s) = inputs(3, 4, &spec);
            let a = m
                .forward(&w, &s, Mode::Train(&mut SeededRng::new(1)), None)
                .unwrap();
            let b = m
                .forward(&w, &s, Mode::Train(&mut SeededRng::new(1)), None)
                .unwrap();
            assert_eq!(a, b);
            assert_eq!(m.predict(&w, &s).unwrap(), m.predict(&w, &s).unwrap());
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let spec = small_spec(ModelKind::HybridLstmMixer);
        let m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
        let mut grads = m.params().zero_grads();
        let err = m.backward(&GradTape::new(), &Tensor::zeros(&[2, 1]), &mut grads);
        assert!(matches!(err, Err(Error::TapeEmpty)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        for kind in ModelKind::ALL {
            let spec = small_spec(kind);
            let m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
            let (w, s) = inputs(5, 4, &spec);
            let mut tape = GradTape::new();
            m.forward(&w, &s, Mode::Train(&mut SeededRng::new(2)), Some(&mut tape))
                .unwrap();
            let mut grads = m.params().zero_grads();
            m.backward(&tape, &Tensor::zeros(&[4, 1]), &mut grads)
                .unwrap();
            assert!(
                grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)),
                "{kind}"
            );
        }
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        for kind in ModelKind::ALL {
            for seed in 0..3u64 {
                let spec = small_spec(kind);
                let mut m = build_model(&spec, &mut SeededRng::new(seed)).unwrap();
                let (w, s) = inputs(seed + 10, 4, &spec);
                let mut tape = GradTape::new();
                // training mode with a fixed dropout stream: same masks on every call
                let y = m
                    .forward(
                        &w,
                        &s,
                        Mode::Train(&mut SeededRng::new(seed)),
                        Some(&mut tape),
                    )
                    .unwrap();
                let r = projection(y.shape(), seed);
                let mut grads = m.params().zero_grads();
                m.backward(&tape, &r, &mut grads).unwrap();
                let spec_c = m.clone();
                let sampling = Sampling {
                    max_per_tensor: Some(40),
                    seed,
                };
                let report = check_params(m.params_mut(), &grads, sampling, |ps| {
                    let mut probe = spec_c.clone();
                    *probe.params_mut() = ps.clone();
                    let out = probe
                        .forward(&w, &s, Mode::Train(&mut SeededRng::new(seed)), None)
                        .unwrap();
                    project(&out, &r)
                });
                assert!(report.passed(), "{kind} seed {seed}: {report:?}");
            }
        }
    }

    #[test]
    fn batch_stats_move_running_estimates() {
        let spec = small_spec(ModelKind::TsMixer);
        let mut m = build_model(&spec, &mut SeededRng::new(0)).unwrap();
        let before = m
            .params()
            .get(m.params().find("mixer.bn0.running_mean").unwrap())
            .clone();
        let (w, s) = inputs(1, 6, &spec);
        let mut tape = GradTape::new();
        m.forward(&w, &s, Mode::Train(&mut SeededRng::new(0)), Some(&mut tape))
            .unwrap();
        m.absorb_batch_stats(&tape);
        let after = m
            .params()
            .get(m.params().find("mixer.bn0.running_mean").unwrap());
        assert_ne!(&before, after);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.slug().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("transformer".parse::<ModelKind>().is_err());
    }
}
