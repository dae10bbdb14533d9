//! Training objectives: plain cross-entropy, input- and logit-space mixing,
//! outlier exposure, and the logit-consistency regularizer.
//!
//! All builders accept either a single `[K]` logit vector or a `[B x K]`
//! batch; batched forms reduce by the mean over rows. Each returns a scalar
//! tape var so gradients flow to everything upstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::mix_logits_on_tape;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    CeOnly,
    Mixup,
    LogitMixing,
    Oe,
    MixOe,
    LogitMixOe,
}

impl MethodTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce_only" => Ok(MethodTag::CeOnly),
            "mixup" => Ok(MethodTag::Mixup),
            "logit_mixing" => Ok(MethodTag::LogitMixing),
            "oe" => Ok(MethodTag::Oe),
            "mixoe" => Ok(MethodTag::MixOe),
            "logit_mixoe" => Ok(MethodTag::LogitMixOe),
            other => Err(Error::config(format!("unknown method tag {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodTag::CeOnly => "ce_only",
            MethodTag::Mixup => "mixup",
            MethodTag::LogitMixing => "logit_mixing",
            MethodTag::Oe => "oe",
            MethodTag::MixOe => "mixoe",
            MethodTag::LogitMixOe => "logit_mixoe",
        }
    }

    /// Methods that consume an auxiliary outlier batch during fine-tuning.
    pub fn uses_aux_ood(&self) -> bool {
        matches!(self, MethodTag::Oe | MethodTag::MixOe | MethodTag::LogitMixOe)
    }
}

/// Scalar decomposition of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub id_term: f64,
    pub regularizer_term: f64,
    pub consistency_term: f64,
    pub method_tag: MethodTag,
    pub sim_oe_enabled: bool,
}

fn validate_target(target: &Tensor, logits_shape: &[usize]) -> Result<()> {
    if target.shape() != logits_shape {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits_shape.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let cols = *target.shape().last().unwrap();
    for row in target.values().chunks(cols) {
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("target distribution has negative entries"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "target distribution sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of -sum_i target_i * log_softmax(logits)_i.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::BadShape {
            op: "cross_entropy",
            shape,
        });
    }
    validate_target(target, &shape)?;
    let rows = if shape.len() == 2 { shape[0] } else { 1 };
    let lp = tape.log_softmax(logits)?;
    let weighted = tape.mul_const(lp, target)?;
    let total = tape.sum(weighted);
    Ok(tape.scalar_mul(total, -1.0 / rows as f64))
}

/// Empirical risk of a mini-batch: identical to [`cross_entropy`] on a
/// `[B x K]` batch, named for the role it plays in pretraining.
pub fn batch_risk(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    cross_entropy(tape, logits, targets)
}

/// lambda * CE(mixed, y_i) + (1 - lambda) * CE(mixed, y_j).
pub fn mixup_loss(
    tape: &mut Tape,
    logits_mixed: Var,
    y_i: &Tensor,
    y_j: &Tensor,
    lambda: f64,
) -> Result<Var> {
    let a = cross_entropy(tape, logits_mixed, y_i)?;
    let b = cross_entropy(tape, logits_mixed, y_j)?;
    let a = tape.scalar_mul(a, lambda);
    let b = tape.scalar_mul(b, 1.0 - lambda);
    tape.add(a, b)
}

/// L2 distance between the logit-space interpolation of two samples' logits
/// and the logits of their input-space mix (mean over rows when batched).
pub fn logit_mixing_sim_loss(
    tape: &mut Tape,
    f_xi: Var,
    f_xj: Var,
    f_mixed_input: Var,
    lambda_logit: f64,
) -> Result<Var> {
    let mixed = mix_logits_on_tape(tape, f_xi, f_xj, lambda_logit)?;
    let diff = tape.subtract(mixed, f_mixed_input)?;
    let norms = tape.row_l2_norms(diff)?;
    Ok(tape.mean(norms))
}

/// CE(f(x_i), y_i) + CE(f(x_j), y_j).
pub fn logit_mixing_cls_loss(
    tape: &mut Tape,
    f_xi: Var,
    f_xj: Var,
    y_i: &Tensor,
    y_j: &Tensor,
) -> Result<Var> {
    let a = cross_entropy(tape, f_xi, y_i)?;
    let b = cross_entropy(tape, f_xj, y_j)?;
    tape.add(a, b)
}

fn uniform_target_like(tape: &Tape, logits: Var) -> Tensor {
    let shape = tape.value(logits).shape().to_vec();
    let k = *shape.last().unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape, vec![1.0 / k as f64; n]).expect("uniform target shape")
}

fn assemble(
    tape: &mut Tape,
    method_tag: MethodTag,
    id_term: Var,
    regularizer_term: Option<Var>,
    beta: f64,
    consistency_term: Option<Var>,
) -> Result<(Var, LossBreakdown)> {
    let mut total = id_term;
    let mut reg_value = 0.0;
    if let Some(reg) = regularizer_term {
        reg_value = tape.value(reg).scalar_value();
        let scaled = tape.scalar_mul(reg, beta);
        total = tape.add(total, scaled)?;
    }
    let mut consistency_value = 0.0;
    if let Some(sim) = consistency_term {
        consistency_value = tape.value(sim).scalar_value();
        total = tape.add(total, sim)?;
    }
    let breakdown = LossBreakdown {
        total: tape.value(total).scalar_value(),
        id_term: tape.value(id_term).scalar_value(),
        regularizer_term: reg_value,
        consistency_term: consistency_value,
        method_tag,
        sim_oe_enabled: consistency_term.is_some(),
    };
    Ok((total, breakdown))
}

/// CE(f_in, y_in) + beta * CE(f_out, uniform).
pub fn oe_loss(
    tape: &mut Tape,
    f_in: Var,
    y_in: &Tensor,
    f_out: Var,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    if beta < 0.0 {
        return Err(Error::invalid("beta must be non-negative"));
    }
    let id_term = cross_entropy(tape, f_in, y_in)?;
    let uniform = uniform_target_like(tape, f_out);
    let reg = cross_entropy(tape, f_out, &uniform)?;
    assemble(tape, MethodTag::Oe, id_term, Some(reg), beta, None)
}

/// CE(f_in, y_in) + beta * CE(f(x_oe_mixed), y_oe_mixed).
pub fn mixoe_loss(
    tape: &mut Tape,
    f_in: Var,
    y_in: &Tensor,
    f_mixed_input: Var,
    y_mixed: &Tensor,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    let id_term = cross_entropy(tape, f_in, y_in)?;
    let reg = cross_entropy(tape, f_mixed_input, y_mixed)?;
    assemble(tape, MethodTag::MixOe, id_term, Some(reg), beta, None)
}

/// CE(f_in, y_in) + beta * CE(lambda f_in + (1 - lambda) f_out, y_oe_mixed).
/// The gradient reaches f_in both directly and through the mix, and f_out
/// through the mix.
pub fn logit_mixoe_loss(
    tape: &mut Tape,
    f_in: Var,
    y_in: &Tensor,
    f_out: Var,
    lambda: f64,
    y_mixed: &Tensor,
    beta: f64,
) -> Result<(Var, LossBreakdown)> {
    let id_term = cross_entropy(tape, f_in, y_in)?;
    let mixed = mix_logits_on_tape(tape, f_in, f_out, lambda)?;
    let reg = cross_entropy(tape, mixed, y_mixed)?;
    assemble(tape, MethodTag::LogitMixOe, id_term, Some(reg), beta, None)
}

/// Consistency between the logit-space mix and the logits of the
/// input-space-mixed sample (mean of row L2 norms when batched).
pub fn sim_oe_loss(
    tape: &mut Tape,
    f_in: Var,
    f_out: Var,
    f_of_mixed_input: Var,
    lambda: f64,
) -> Result<Var> {
    logit_mixing_sim_loss(tape, f_in, f_out, f_of_mixed_input, lambda)
}

/// Inputs for [`total_loss`]; which fields are required depends on the tag.
pub struct TotalLossInputs<'a> {
    /// Logits of the ID batch.
    pub f_in: Var,
    /// One-hot (or soft) ID targets.
    pub y_in: &'a Tensor,
    /// Logits of the auxiliary OOD batch (oe, logit_mixoe, and sim terms).
    pub f_out: Option<Var>,
    /// Logits of the input-space-mixed batch (mixoe and sim terms; the mixup
    /// and logit_mixing tags read their mixed-pair logits from here).
    pub f_of_mixed_input: Option<Var>,
    /// Mixed target distribution (mixoe, logit_mixoe, mixup).
    pub y_mixed: Option<&'a Tensor>,
    /// Second labelled sample of an ID pair (logit_mixing only).
    pub f_second: Option<Var>,
    pub y_second: Option<&'a Tensor>,
    /// Shared mixing coefficient.
    pub lambda: f64,
}

/// Assemble a method's full objective, optionally adding the consistency
/// term with weight `sim_weight` (unit weight reproduces the combined
/// objective exactly).
pub fn total_loss(
    tape: &mut Tape,
    method_tag: MethodTag,
    inputs: &TotalLossInputs,
    sim_oe_enabled: bool,
    beta: f64,
    sim_weight: f64,
) -> Result<(Var, LossBreakdown)> {
    let missing = |what: &str| {
        Error::invalid(format!("{} requires {what}", method_tag.name()))
    };
    let sim_term = |tape: &mut Tape| -> Result<Var> {
        let f_out = inputs.f_out.ok_or_else(|| missing("f_out for the sim term"))?;
        let f_mixed = inputs
            .f_of_mixed_input
            .ok_or_else(|| missing("f_of_mixed_input for the sim term"))?;
        let sim = sim_oe_loss(tape, inputs.f_in, f_out, f_mixed, inputs.lambda)?;
        Ok(tape.scalar_mul(sim, sim_weight))
    };
    match method_tag {
        MethodTag::CeOnly => {
            if sim_oe_enabled {
                return Err(Error::invalid(
                    "sim_oe with ce_only is undefined".to_string(),
                ));
            }
            let id_term = cross_entropy(tape, inputs.f_in, inputs.y_in)?;
            let mut out = assemble(tape, method_tag, id_term, None, beta, None)?;
            out.1.method_tag = MethodTag::CeOnly;
            Ok(out)
        }
        MethodTag::Mixup => {
            let f_mixed = inputs.f_of_mixed_input.ok_or_else(|| missing("f_of_mixed_input"))?;
            let y_mixed = inputs.y_mixed.ok_or_else(|| missing("y_mixed"))?;
            let id_term = cross_entropy(tape, f_mixed, y_mixed)?;
            let mut out = assemble(tape, method_tag, id_term, None, beta, None)?;
            out.1.method_tag = MethodTag::Mixup;
            Ok(out)
        }
        MethodTag::LogitMixing => {
            let f_second = inputs.f_second.ok_or_else(|| missing("f_second"))?;
            let y_second = inputs.y_second.ok_or_else(|| missing("y_second"))?;
            let f_mixed = inputs.f_of_mixed_input.ok_or_else(|| missing("f_of_mixed_input"))?;
            let cls = logit_mixing_cls_loss(tape, inputs.f_in, f_second, inputs.y_in, y_second)?;
            let sim =
                logit_mixing_sim_loss(tape, inputs.f_in, f_second, f_mixed, inputs.lambda)?;
            let sim = tape.scalar_mul(sim, sim_weight);
            let mut out = assemble(tape, method_tag, cls, None, beta, Some(sim))?;
            out.1.method_tag = MethodTag::LogitMixing;
            Ok(out)
        }
        MethodTag::Oe => {
            let f_out = inputs.f_out.ok_or_else(|| missing("f_out"))?;
            let id_term = cross_entropy(tape, inputs.f_in, inputs.y_in)?;
            let uniform = uniform_target_like(tape, f_out);
            let reg = cross_entropy(tape, f_out, &uniform)?;
            let sim = if sim_oe_enabled { Some(sim_term(tape)?) } else { None };
            let mut out = assemble(tape, method_tag, id_term, Some(reg), beta, sim)?;
            out.1.method_tag = MethodTag::Oe;
            Ok(out)
        }
        MethodTag::MixOe => {
            let f_mixed = inputs.f_of_mixed_input.ok_or_else(|| missing("f_of_mixed_input"))?;
            let y_mixed = inputs.y_mixed.ok_or_else(|| missing("y_mixed"))?;
            let id_term = cross_entropy(tape, inputs.f_in, inputs.y_in)?;
            let reg = cross_entropy(tape, f_mixed, y_mixed)?;
            let sim = if sim_oe_enabled { Some(sim_term(tape)?) } else { None };
            let mut out = assemble(tape, method_tag, id_term, Some(reg), beta, sim)?;
            out.1.method_tag = MethodTag::MixOe;
            Ok(out)
        }
        MethodTag::LogitMixOe => {
            let f_out = inputs.f_out.ok_or_else(|| missing("f_out"))?;
            let y_mixed = inputs.y_mixed.ok_or_else(|| missing("y_mixed"))?;
            let id_term = cross_entropy(tape, inputs.f_in, inputs.y_in)?;
            let mixed = mix_logits_on_tape(tape, inputs.f_in, f_out, inputs.lambda)?;
            let reg = cross_entropy(tape, mixed, y_mixed)?;
            let sim = if sim_oe_enabled { Some(sim_term(tape)?) } else { None };
            let mut out = assemble(tape, method_tag, id_term, Some(reg), beta, sim)?;
            out.1.method_tag = MethodTag::LogitMixOe;
            Ok(out)
        }
    }
}

/// Cross-entropy of plain values, no tape (evaluation helper).
pub fn cross_entropy_value(logits: &Tensor, target: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = cross_entropy(&mut tape, l, target)?;
    Ok(tape.value(ce).scalar_value())
}
