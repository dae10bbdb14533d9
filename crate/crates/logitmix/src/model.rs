//! Multi-layer perceptron classifier producing logit vectors.
//!
//! Stands in for a large image backbone at desk scale; every loss in this
//! crate operates on the logits, so the architecture is interchangeable.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::config("input_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden_dims entries must be positive"));
        }
        Ok(())
    }
}

/// Weights `(out_dim x in_dim)` and biases `(out_dim)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Layer handles on a tape, for reading gradients after backward.
pub struct TapeParams {
    pub layers: Vec<(Var, Var)>,
}

impl MlpParams {
    /// Weights uniform on [-s, s] with s = sqrt(6 / (fan_in + fan_out)),
    /// biases zero. Deterministic given the config seed.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = vec![config.input_dim];
        dims.extend_from_slice(&config.hidden_dims);
        dims.push(config.num_classes);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-s..=s))
                .collect();
            layers.push((
                Tensor::matrix(fan_out, fan_in, weights)?,
                Tensor::zeros(vec![fan_out]),
            ));
        }
        Ok(MlpParams {
            config: config.clone(),
            layers,
        })
    }

    /// Insert all parameters on a tape as gradient-tracking leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> TapeParams {
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone(), true), tape.leaf(b.clone(), true)))
            .collect();
        TapeParams { layers }
    }

    /// Logits for a `[B x d]` batch using tape vars (differentiable path).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &TapeParams,
        x_batch: Var,
    ) -> Result<Var> {
        let d = tape.value(x_batch).shape().get(1).copied().unwrap_or(0);
        if tape.value(x_batch).shape().len() != 2 || d != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                lhs: tape.value(x_batch).shape().to_vec(),
                rhs: vec![0, self.config.input_dim],
            });
        }
        let mut h = x_batch;
        let last = params.layers.len() - 1;
        for (i, (w, b)) in params.layers.iter().enumerate() {
            let wt = tape.transpose(*w)?;
            let z = tape.matmul(h, wt)?;
            let z = tape.add_bias_broadcast(z, *b)?;
            h = if i < last { tape.relu(z) } else { z };
        }
        Ok(h)
    }

    /// Logits for a `[B x d]` batch without gradient tracking.
    pub fn forward(&self, x_batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(x_batch.clone());
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            .collect();
        let out = self.forward_on_tape(&mut tape, &TapeParams { layers }, x)?;
        Ok(tape.value(out).clone())
    }

    /// Logits for one sample of length d.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.forward(&batch)?.values().to_vec())
    }
}

/// Row-wise softmax of a `[B x K]` logit tensor, max-stabilized.
pub fn softmax_probs(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::BadShape {
            op: "softmax_probs",
            shape: shape.to_vec(),
        });
    }
    let cols = *shape.last().unwrap();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.values().chunks(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Tensor::new(shape.to_vec(), out)
}

const CHECKPOINT_MAGIC: &str = "logitmix-checkpoint";
const CHECKPOINT_VERSION: &str = "v1";

/// Save parameters to a versioned text container. Values are stored as f64
/// bit patterns in hex so the round trip is bit-exact.
pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n"));
    out.push_str(&format!(
        "config {}\n",
        serde_json::to_string(&params.config).map_err(|e| Error::invalid(e.to_string()))?
    ));
    for (w, b) in &params.layers {
        out.push_str(&format!("layer {} {}\n", w.shape()[0], w.shape()[1]));
        push_hex_line(&mut out, "w", w.values());
        push_hex_line(&mut out, "b", b.values());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn push_hex_line(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        out.push_str(&format!(" {:016x}", v.to_bits()));
    }
    out.push('\n');
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::file(path, "empty checkpoint"))??;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::file(path, "not a checkpoint file"));
    }
    let version = parts.next().unwrap_or("");
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let config_line = lines
        .next()
        .ok_or_else(|| Error::file(path, "missing config line"))??;
    let config_json = config_line
        .strip_prefix("config ")
        .ok_or_else(|| Error::file(path, "malformed config line"))?;
    let config: MlpConfig = serde_json::from_str(config_json)
        .map_err(|e| Error::file(path, format!("bad config: {e}")))?;

    let mut layers = Vec::new();
    while let Some(line) = lines.next() {
        let line = line?;
        let dims: Vec<usize> = line
            .strip_prefix("layer ")
            .ok_or_else(|| Error::file(path, format!("expected layer line, got {line:?}")))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::file(path, "bad layer dims")))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::file(path, "layer line needs two dims"));
        }
        let w_line = lines
            .next()
            .ok_or_else(|| Error::file(path, "truncated: missing weight line"))??;
        let b_line = lines
            .next()
            .ok_or_else(|| Error::file(path, "truncated: missing bias line"))??;
        let w = parse_hex_line(&w_line, "w", path)?;
        let b = parse_hex_line(&b_line, "b", path)?;
        if w.len() != dims[0] * dims[1] || b.len() != dims[0] {
            return Err(Error::file(path, "layer value count mismatch"));
        }
        layers.push((Tensor::matrix(dims[0], dims[1], w)?, Tensor::vector(b)));
    }
    let expected_layers = config.hidden_dims.len() + 1;
    if layers.len() != expected_layers {
        return Err(Error::file(
            path,
            format!("expected {expected_layers} layers, found {}", layers.len()),
        ));
    }
    Ok(MlpParams { config, layers })
}

fn parse_hex_line(line: &str, tag: &str, path: &Path) -> Result<Vec<f64>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::file(path, format!("expected {tag} line")));
    }
    parts
        .map(|t| {
            u64::from_str_radix(t, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::file(path, format!("bad hex value {t:?}")))
        })
        .collect()
}
