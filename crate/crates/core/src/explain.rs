//! Permutation importance and a local weighted-linear surrogate.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::PreprocessorState;
use crate::tensor::{SeededRng, Tensor};
use crate::train::{predict_samples, SampleSet};

/// Anything that maps `(windows [B×L×D], statics [B×D])` to `B` predictions.
pub trait Predictor {
    fn predict_batch(&self, samples: &SampleSet) -> Result<Vec<f64>>;
}

impl Predictor for Model {
    fn predict_batch(&self, samples: &SampleSet) -> Result<Vec<f64>> {
        predict_samples(self, samples)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub base_mse: f64,
    pub repeats: usize,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,importance,rank\n");
        for f in &self.features {
            let name = if f.feature.contains([',', '"']) {
                format!("\"{}\"", f.feature.replace('"', "\"\""))
            } else {
                f.feature.clone()
            };
            let _ = writeln!(out, "{name},{},{}", f.importance, f.rank);
        }
        out
    }

    /// Feature names from most to least important.
    pub fn ranking(&self) -> Vec<&str> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by_key(|f| f.rank);
        v.into_iter().map(|f| f.feature.as_str()).collect()
    }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter()
        .zip(y)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y.len() as f64
}

/// Copy of `data` where feature `j` of sample `i` (every time step and the
/// static vector) is taken from sample `perm[i]`.
pub fn permute_feature(data: &SampleSet, feature: usize, perm: &[usize]) -> SampleSet {
    let (l, d) = (data.window_len(), data.features());
    let mut out = data.clone();
    let w = out.windows.data_mut();
    for (i, &src) in perm.iter().enumerate() {
        for t in 0..l {
            w[(i * l + t) * d + feature] = data.windows.data()[(src * l + t) * d + feature];
        }
    }
    let s = out.statics.data_mut();
    for (i, &src) in perm.iter().enumerate() {
        s[i * d + feature] = data.statics.data()[src * d + feature];
    }
    out
}

/// Increase in MSE when feature `feature` is shuffled by `perm`.
pub fn importance_under(
    model: &impl Predictor,
    data: &SampleSet,
    base_mse: f64,
    feature: usize,
    perm: &[usize],
) -> Result<f64> {
    let permuted = permute_feature(data, feature, perm);
    Ok(mse(&model.predict_batch(&permuted)?, &data.targets) - base_mse)
}

/// Mean MSE increase over `repeats` random permutations per feature. Repeat
/// `r` of feature `j` draws from stream `j·repeats + r` of `seed`.
pub fn permutation_importance(
    model: &impl Predictor,
    data: &SampleSet,
    names: &[String],
    seed: u64,
    repeats: usize,
) -> Result<ImportanceReport> {
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "permutation importance needs at least 2 samples, got {}",
            data.len()
        )));
    }
    if repeats < 3 {
        return Err(Error::Config(format!(
            "permutation repeats must be at least 3, got {repeats}"
        )));
    }
    let d = data.features();
    if names.len() != d {
        return Err(Error::dim("permutation_importance", &[names.len()], &[d]));
    }
    let base_mse = mse(&model.predict_batch(data)?, &data.targets);
    let mut scores = Vec::with_capacity(d);
    for j in 0..d {
        let mut total = 0.0;
        for r in 0..repeats {
            let mut rng = SeededRng::with_stream(seed, (j * repeats + r) as u64);
            let mut perm: Vec<usize> = (0..data.len()).collect();
            rng.shuffle(&mut perm);
            total += importance_under(model, data, base_mse, j, &perm)?;
        }
        scores.push(total / repeats as f64);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; d];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos + 1;
    }
    Ok(ImportanceReport {
        base_mse,
        repeats,
        features: (0..d)
            .map(|j| FeatureImportance {
                feature: names[j].clone(),
                importance: scores[j],
                rank: rank[j],
            })
            .collect(),
    })
}

/// Smallest tolerated eigenvalue ratio of the weighted normal matrix.
pub const CONDITION_FLOOR: f64 = 1e-12;

/// Solves `min Σ wᵢ(yᵢ − xᵢᵀβ)²` through the normal equations. `None`
/// weights mean ordinary least squares.
pub fn weighted_least_squares(
    design: &[Vec<f64>],
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let n = design.len();
    let p = design.first().map_or(0, Vec::len);
    if n == 0 || p == 0 || y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::dim("weighted_least_squares", &[n, p], &[y.len()]));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for (i, row) in design.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p {
            xty[a] += w * row[a] * y[i];
            for b in a..p {
                xtx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let eig = xtx.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if !(max > 0.0) || min / max < CONDITION_FLOOR {
        return Err(Error::DegenerateNeighborhood(format!(
            "normal equations are singular (eigenvalue ratio {:.3e})",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    let chol = xtx.cholesky().ok_or_else(|| {
        Error::DegenerateNeighborhood("normal matrix is not positive definite".into())
    })?;
    Ok(chol.solve(&xty).iter().copied().collect())
}

/// Weighted linear fit of the model around one sample. Perturbations are
/// applied to the sample's last time step (and its static vector) in
/// scaled units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSurrogate {
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub n_samples: usize,
    pub intercept: f64,
    /// Change in scaled prediction per scaled unit of each feature.
    pub weights: Vec<f64>,
    pub fit_r2: f64,
}

impl LocalSurrogate {
    /// Weights as original target units per original feature unit.
    pub fn in_original_units(&self, state: &PreprocessorState) -> Vec<f64> {
        self.weights
            .iter()
            .zip(state.input_scales())
            .map(|(w, s)| w * state.target_sigma / s)
            .collect()
    }
}

pub const MIN_SURROGATE_SAMPLES: usize = 50;

/// Fits `ŷ ≈ b + wᵀδ` on `n_samples` Gaussian perturbations `δ ~ N(0, radius²)`
/// of sample `index`, weighted by `exp(−‖δ‖²/radius²)`.
pub fn local_surrogate(
    model: &impl Predictor,
    data: &SampleSet,
    index: usize,
    radius: f64,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<LocalSurrogate> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Range(format!(
            "surrogate radius must be positive, got {radius}"
        )));
    }
    if n_samples < MIN_SURROGATE_SAMPLES {
        return Err(Error::Config(format!(
            "surrogate needs at least {MIN_SURROGATE_SAMPLES} perturbations, got {n_samples}"
        )));
    }
    if index >= data.len() {
        return Err(Error::Range(format!(
            "anchor index {index} out of range for {} samples",
            data.len()
        )));
    }
    let (l, d) = (data.window_len(), data.features());
    let anchor = data.subset(&[index]);
    let mut windows = Vec::with_capacity(n_samples * l * d);
    let mut statics = Vec::with_capacity(n_samples * d);
    let mut deltas = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let delta: Vec<f64> = (0..d).map(|_| radius * rng.normal()).collect();
        let mut w = anchor.windows.data().to_vec();
        for (j, dj) in delta.iter().enumerate() {
            w[(l - 1) * d + j] += dj;
        }
        statics.extend_from_slice(&w[(l - 1) * d..]);
        windows.extend(w);
        deltas.push(delta);
    }
    let probe = SampleSet::new(
        Tensor::new(&[n_samples, l, d], windows)?,
        Tensor::new(&[n_samples, d], statics)?,
        vec![0.0; n_samples],
    )?;
    let y = model.predict_batch(&probe)?;
    let r2 = radius * radius;
    let kernel: Vec<f64> = deltas
        .iter()
        .map(|dl| (-dl.iter().map(|v| v * v).sum::<f64>() / r2).exp())
        .collect();
    let design: Vec<Vec<f64>> = deltas
        .iter()
        .map(|dl| std::iter::once(1.0).chain(dl.iter().copied()).collect())
        .collect();
    let beta = weighted_least_squares(&design, &y, Some(&kernel))?;
    let wsum: f64 = kernel.iter().sum();
    let ybar = kernel.iter().zip(&y).map(|(k, v)| k * v).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &t), &k) in design.iter().zip(&y).zip(&kernel) {
        let p: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += k * (t - p) * (t - p);
        ss_tot += k * (t - ybar) * (t - ybar);
    }
    let fit_r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    let weights = beta[1..].to_vec();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::DegenerateNeighborhood(
            "surrogate weights are not finite".into(),
        ));
    }
    Ok(LocalSurrogate {
        anchor: anchor.statics.data().to_vec(),
        radius,
        n_samples,
        intercept: beta[0],
        weights,
        fit_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_uniform;

    /// `y = wᵀs + b` on the static vector.
    struct LinearPredictor {
        w: Vec<f64>,
        b: f64,
    }

    impl Predictor for LinearPredictor {
        fn predict_batch(&self, samples: &SampleSet) -> Result<Vec<f64>> {
            Ok((0..samples.len())
                .map(|i| {
                    self.b
                        + samples
                            .statics
                            .row(i)
                            .iter()
                            .zip(&self.w)
                            .map(|(x, w)| x * w)
                            .sum::<f64>()
                })
                .collect())
        }
    }

    fn dataset(seed: u64, n: usize, l: usize, d: usize, f: impl Fn(&[f64]) -> f64) -> SampleSet {
        let w = seeded_uniform(&mut SeededRng::new(seed), &[n, l, d], -2.0, 2.0).unwrap();
        let s = Tensor::new(
            &[n, d],
            (0..n)
                .flat_map(|i| w.data()[(i * l + l - 1) * d..(i * l + l) * d].to_vec())
                .collect(),
        )
        .unwrap();
        let y = (0..n).map(|i| f(s.row(i))).collect();
        SampleSet::new(w, s, y).unwrap()
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn identity_permutation_scores_zero() {
        let data = dataset(0, 30, 2, 3, |s| 3.0 * s[0]);
        let m = LinearPredictor {
            w: vec![3.0, 0.0, 0.0],
            b: 0.0,
        };
        let base = mse(&m.predict_batch(&data).unwrap(), &data.targets);
        let perm: Vec<usize> = (0..30).collect();
        assert_eq!(importance_under(&m, &data, base, 0, &perm).unwrap(), 0.0);
    }

    #[test]
    fn signal_feature_ranks_first() {
        let data = dataset(1, 200, 1, 4, |s| 3.0 * s[0]);
        let m = LinearPredictor {
            w: vec![3.0, 0.0, 0.0, 0.0],
            b: 0.0,
        };
        for seed in 0..5 {
            let rep = permutation_importance(&m, &data, &names(4), seed, 3).unwrap();
            assert_eq!(rep.ranking()[0], "x0");
            assert!(rep.features[1..].iter().all(|f| f.importance == 0.0));
            let mut ranks: Vec<usize> = rep.features.iter().map(|f| f.rank).collect();
            ranks.sort_unstable();
            assert_eq!(ranks, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn constant_target_model_has_no_importance() {
        let data = dataset(2, 50, 1, 3, |_| 1.0);
        let m = LinearPredictor {
            w: vec![0.0; 3],
            b: 1.0,
        };
        let rep = permutation_importance(&m, &data, &names(3), 0, 4).unwrap();
        assert!(rep.features.iter().all(|f| f.importance.abs() < 1e-15));
    }

    #[test]
    fn importance_is_deterministic_and_validated() {
        let data = dataset(3, 40, 2, 3, |s| s[1] - s[2]);
        let m = LinearPredictor {
            w: vec![0.0, 1.0, -1.0],
            b: 0.0,
        };
        let a = permutation_importance(&m, &data, &names(3), 7, 3).unwrap();
        assert_eq!(
            a,
            permutation_importance(&m, &data, &names(3), 7, 3).unwrap()
        );
        assert!(matches!(
            permutation_importance(&m, &data, &names(3), 7, 2),
            Err(Error::Config(_))
        ));
        let one = data.subset(&[0]);
        assert!(matches!(
            permutation_importance(&m, &one, &names(3), 7, 3),
            Err(Error::InsufficientData(_))
        ));
        assert!(a.to_csv().starts_with("feature,importance,rank\n"));
    }

    #[test]
    fn surrogate_recovers_linear_weights() {
        let data = dataset(4, 10, 3, 4, |_| 0.0);
        let m = LinearPredictor {
            w: vec![0.5, -2.0, 1.25, 0.0],
            b: 0.3,
        };
        for seed in 0..5 {
            let s = local_surrogate(&m, &data, 2, 0.5, 200, &mut SeededRng::new(seed)).unwrap();
            for (a, b) in s.weights.iter().zip(&m.w) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            assert!((s.fit_r2 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_model_gives_zero_weights() {
        let data = dataset(5, 5, 1, 3, |_| 0.0);
        let m = LinearPredictor {
            w: vec![0.0; 3],
            b: 2.0,
        };
        let s = local_surrogate(&m, &data, 0, 1.0, 60, &mut SeededRng::new(0)).unwrap();
        assert!(s.weights.iter().all(|w| w.abs() < 1e-9));
    }

    #[test]
    fn tiny_radius_is_degenerate() {
        let data = dataset(6, 5, 1, 3, |_| 0.0);
        let m = LinearPredictor {
            w: vec![1.0; 3],
            b: 0.0,
        };
        let err = local_surrogate(&m, &data, 0, 1e-9, 100, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood(_)));
        assert!(matches!(
            local_surrogate(&m, &data, 0, 0.0, 100, &mut SeededRng::new(0)),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            local_surrogate(&m, &data, 0, 1.0, 10, &mut SeededRng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn least_squares_recovers_exact_coefficients() {
        let design: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![1.0, i as f64, (i * i) as f64 * 0.1])
            .collect();
        let y: Vec<f64> = design
            .iter()
            .map(|r| 2.0 - 0.5 * r[1] + 3.0 * r[2])
            .collect();
        let beta = weighted_least_squares(&design, &y, None).unwrap();
        for (a, b) in beta.iter().zip([2.0, -0.5, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
