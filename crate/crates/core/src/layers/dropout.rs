use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Inverted dropout. Returns the output and, when a mask was drawn, the
/// per-element multiplier (`0` or `1/(1−rate)`) needed for backward.
pub fn dropout_apply(
    x: &Tensor,
    rate: f64,
    rng: &mut SeededRng,
    training: bool,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Range(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    Ok((apply_mask(x, &mask), Some(mask)))
}

pub(crate) fn apply_mask(x: &Tensor, mask: &[f64]) -> Tensor {
    let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape(), data).expect("mask matches input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_and_zero_rate_are_identity() {
        let x = Tensor::from_vec(vec![1.5, -2.0, 3.25]);
        let mut rng = SeededRng::new(0);
        assert_eq!(dropout_apply(&x, 0.5, &mut rng, false).unwrap().0, x);
        assert_eq!(dropout_apply(&x, 0.0, &mut rng, true).unwrap().0, x);
    }

    #[test]
    fn expectation_is_preserved() {
        let x = Tensor::full(&[100_000], 1.0);
        let (y, mask) = dropout_apply(&x, 0.2, &mut SeededRng::new(11), true).unwrap();
        let mean = y.sum() / 100_000.0;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(mask
            .unwrap()
            .iter()
            .all(|&m| m == 0.0 || (m - 1.25).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_rates() {
        let x = Tensor::from_vec(vec![1.0]);
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            dropout_apply(&x, 1.0, &mut rng, true),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            dropout_apply(&x, -0.1, &mut rng, false),
            Err(Error::Range(_))
        ));
    }
}
