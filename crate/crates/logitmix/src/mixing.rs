//! Mixing-coefficient sampling and interpolation in input, label, and
//! logit space.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    PerBatch,
    PerSample,
}

/// Mixing hyperparameters: Beta shape, outlier-term weight, and how the
/// coefficient is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub alpha: f64,
    pub beta_weight: f64,
    pub lambda_policy: LambdaPolicy,
    /// When set, the input-space and logit-space interpolations for a pair
    /// use the identical coefficient, which is what makes the consistency
    /// loss a meaningful target.
    pub share_lambda_across_spaces: bool,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            alpha: 1.0,
            beta_weight: 1.0,
            lambda_policy: LambdaPolicy::PerBatch,
            share_lambda_across_spaces: true,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("mix alpha must be positive"));
        }
        if self.beta_weight < 0.0 {
            return Err(Error::config("beta_weight must be non-negative"));
        }
        Ok(())
    }
}

/// One mixed ID/OOD pair.
#[derive(Debug, Clone)]
pub struct MixedPair {
    pub lambda: f64,
    pub mixed_input: Tensor,
    pub mixed_label: Vec<f64>,
    pub source_in_index: usize,
    pub source_out_index: usize,
}

/// One draw from Beta(alpha, alpha).
pub fn sample_lambda<R: Rng>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("Beta shape must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Elementwise lambda * x_i + (1 - lambda) * x_j.
pub fn mix_inputs(x_i: &Tensor, x_j: &Tensor, lambda: f64) -> Result<Tensor> {
    if x_i.shape() != x_j.shape() {
        return Err(Error::ShapeMismatch {
            op: "mix_inputs",
            lhs: x_i.shape().to_vec(),
            rhs: x_j.shape().to_vec(),
        });
    }
    let values = x_i
        .values()
        .iter()
        .zip(x_j.values())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Tensor::new(x_i.shape().to_vec(), values)
}

/// lambda * y_in + (1 - lambda) * uniform(K).
pub fn mix_label_with_uniform(y_in: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let k = y_in.len();
    let ones = y_in.iter().filter(|&&v| v == 1.0).count();
    let zeros = y_in.iter().filter(|&&v| v == 0.0).count();
    if k == 0 || ones != 1 || ones + zeros != k {
        return Err(Error::invalid(format!("expected a one-hot vector, got {y_in:?}")));
    }
    let u = 1.0 / k as f64;
    Ok(y_in.iter().map(|y| lambda * y + (1.0 - lambda) * u).collect())
}

/// Pure-value logit interpolation.
pub fn mix_logits(f_in: &Tensor, f_out: &Tensor, lambda: f64) -> Result<Tensor> {
    mix_inputs(f_in, f_out, lambda)
}

/// Logit interpolation on the tape: gradient flows to both inputs.
pub fn mix_logits_on_tape(tape: &mut Tape, f_in: Var, f_out: Var, lambda: f64) -> Result<Var> {
    if tape.value(f_in).shape() != tape.value(f_out).shape() {
        return Err(Error::ShapeMismatch {
            op: "mix_logits",
            lhs: tape.value(f_in).shape().to_vec(),
            rhs: tape.value(f_out).shape().to_vec(),
        });
    }
    let a = tape.scalar_mul(f_in, lambda);
    let b = tape.scalar_mul(f_out, 1.0 - lambda);
    tape.add(a, b)
}

/// One-hot encode a class label.
pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draws(alpha: f64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..n).map(|_| sample_lambda(alpha, &mut rng).unwrap()).collect()
    }

    #[test]
    fn lambda_support_and_uniform_mean() {
        let d = draws(1.0, 100_000);
        assert!(d.iter().all(|&l| (0.0..=1.0).contains(&l)));
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((0.49..=0.51).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn lambda_variance_matches_analytic() {
        for alpha in [0.2, 1.0, 2.5] {
            let d = draws(alpha, 100_000);
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / d.len() as f64;
            let expected = 1.0 / (4.0 * (2.0 * alpha + 1.0));
            assert!(
                (var - expected).abs() / expected <= 0.10,
                "alpha {alpha}: var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn lambda_rejects_nonpositive_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_lambda(0.0, &mut rng).is_err());
        assert!(sample_lambda(-1.0, &mut rng).is_err());
    }

    #[test]
    fn beta_shape_bimodal_vs_unimodal() {
        let frac = |d: &[f64], lo: f64, hi: f64| {
            d.iter().filter(|&&l| l >= lo && l <= hi).count() as f64 / d.len() as f64
        };
        let low = draws(0.2, 100_000);
        let high = draws(2.5, 100_000);
        // alpha = 0.2: mass piles near 0 and 1; alpha = 2.5: near 0.5.
        let bins = |d: &[f64]| [frac(d, 0.0, 0.2), frac(d, 0.4, 0.6), frac(d, 0.8, 1.0)];
        let lb = bins(&low);
        assert!(lb[1] < lb[0] && lb[1] < lb[2], "{lb:?}");
        let hb = bins(&high);
        assert!(hb[1] > hb[0] && hb[1] > hb[2], "{hb:?}");
    }

    #[test]
    fn mix_inputs_endpoints_and_midpoint() {
        let a = Tensor::vector(vec![0.0, 2.0]);
        let b = Tensor::vector(vec![2.0, 0.0]);
        assert_eq!(mix_inputs(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mix_inputs(&a, &b, 0.0).unwrap(), b);
        assert_eq!(mix_inputs(&a, &b, 0.5).unwrap().values(), &[1.0, 1.0]);
    }

    #[test]
    fn mix_label_endpoints() {
        let y = one_hot(0, 2);
        assert_eq!(mix_label_with_uniform(&y, 0.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mix_label_with_uniform(&y, 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(mix_label_with_uniform(&y, 0.5).unwrap(), vec![0.75, 0.25]);
        assert!(mix_label_with_uniform(&[0.5, 0.5], 0.5).is_err());
    }

    #[test]
    fn mix_logits_cases() {
        let a = Tensor::vector(vec![4.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 4.0]);
        assert_eq!(mix_logits(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mix_logits(&a, &b, 0.25).unwrap().values(), &[1.0, 3.0]);
        for l in [0.0, 0.3, 1.0] {
            assert_eq!(mix_logits(&a, &a, l).unwrap(), a);
        }
        let short = Tensor::vector(vec![1.0]);
        assert!(mix_logits(&a, &short, 0.5).is_err());
    }

    #[test]
    fn exchange_identity() {
        let a = Tensor::vector(vec![0.3, -1.7, 2.2]);
        let b = Tensor::vector(vec![1.1, 0.0, -0.4]);
        for l in [0.0, 0.17, 0.5, 0.83, 1.0] {
            let lhs = mix_inputs(&a, &b, l).unwrap();
            let rhs = mix_inputs(&b, &a, 1.0 - l).unwrap();
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
        let ya = one_hot(1, 4);
        for l in [0.0, 0.25, 0.75] {
            let lhs = mix_label_with_uniform(&ya, l).unwrap();
            let sum: f64 = lhs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}
