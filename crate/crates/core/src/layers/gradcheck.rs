//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only ever calls forward passes; it never looks at a backward
//! implementation, so agreement is independent evidence.

use crate::error::Result;
use crate::params::{Gradients, ParamSet};
use crate::tensor::{seeded_uniform, SeededRng, Tensor};

/// Finite-difference step used throughout the test suites.
pub const FD_STEP: f64 = 1e-5;
/// Largest tolerated `|analytic − numeric| / max(1, |analytic|)`.
pub const FD_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(1.0);
        self.checked += 1;
        if rel > self.max_rel_error || !rel.is_finite() {
            self.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            self.worst = label();
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < FD_TOLERANCE
    }
}

/// Which entries of large tensors to probe. `None` checks everything.
#[derive(Clone, Copy, Debug)]
pub struct Sampling {
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Sampling {
    pub const ALL: Sampling = Sampling {
        max_per_tensor: None,
        seed: 0,
    };
}

fn probe_indices(len: usize, sampling: Sampling, salt: u64) -> Vec<usize> {
    match sampling.max_per_tensor {
        Some(k) if k < len => {
            let mut rng = SeededRng::with_stream(sampling.seed, salt);
            let mut idx: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut idx);
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against central differences of `loss` for every
/// trainable entry of `ps` (subsampled per `sampling`).
pub fn check_params(
    ps: &mut ParamSet,
    analytic: &Gradients,
    sampling: Sampling,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        if !ps.entries()[id.index()].trainable {
            continue;
        }
        let len = ps.get(id).len();
        for k in probe_indices(len, sampling, id.index() as u64) {
            let orig = ps.get(id).data()[k];
            ps.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = loss(ps);
            ps.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = loss(ps);
            ps.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(id).data()[k];
            report.record(
                || format!("{}[{k}]", ps.entries()[id.index()].name),
                a,
                numeric,
            );
        }
    }
    report
}

/// Same comparison for the gradient with respect to an input tensor.
pub fn check_input(
    x: &Tensor,
    analytic: &Tensor,
    label: &str,
    mut loss: impl FnMut(&Tensor) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + FD_STEP;
        let up = loss(&probe);
        probe.data_mut()[k] = orig - FD_STEP;
        let down = loss(&probe);
        probe.data_mut()[k] = orig;
        report.record(
            || format!("{label}[{k}]"),
            analytic.data()[k],
            (up - down) / (2.0 * FD_STEP),
        );
    }
    report
}

/// Loss `Σ r ⊙ y` for a fixed random projection `r`; its gradient w.r.t. `y` is `r`.
pub fn projection(shape: &[usize], seed: u64) -> Tensor {
    seeded_uniform(&mut SeededRng::with_stream(seed, 99), shape, -1.0, 1.0).expect("valid shape")
}

pub fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Full check of a single-input layer: parameters and input gradient.
pub fn check_layer<C>(
    ps: &mut ParamSet,
    x: &Tensor,
    seed: u64,
    sampling: Sampling,
    forward: impl Fn(&ParamSet, &Tensor) -> Result<(Tensor, C)>,
    backward: impl Fn(&ParamSet, &C, &Tensor, &mut Gradients) -> Result<Tensor>,
) -> GradCheckReport {
    let (y, cache) = forward(ps, x).expect("forward");
    let r = projection(y.shape(), seed);
    let mut grads = ps.zero_grads();
    let dx = backward(ps, &cache, &r, &mut grads).expect("backward");
    let mut report = check_params(ps, &grads, sampling, |p| {
        project(&forward(p, x).expect("forward").0, &r)
    });
    let frozen = ps.clone();
    report.merge(check_input(x, &dx, "input", |xi| {
        project(&forward(&frozen, xi).expect("forward").0, &r)
    }));
    report
}

#[cfg(test)]
pub(crate) fn check_layer_grads<C>(
    ps: &mut ParamSet,
    x: &Tensor,
    seed: u64,
    forward: impl Fn(&ParamSet, &Tensor) -> Result<(Tensor, C)>,
    backward: impl Fn(&ParamSet, &C, &Tensor, &mut Gradients) -> Result<Tensor>,
) {
    let report = check_layer(ps, x, seed, Sampling::ALL, forward, backward);
    assert!(report.passed(), "gradient check failed: {report:?}");
}
