//! Two-phase optimization: ID-only pretraining followed by method-specific
//! fine-tuning on paired ID / auxiliary-OOD batches. SGD with momentum,
//! gradient-coupled weight decay, and a per-epoch cosine learning rate.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, rows_to_tensor, DatasetBundle, LabeledSet};
use crate::error::{Error, Result};
use crate::losses::{batch_risk, cross_entropy, LossBreakdown, MethodTag};
use crate::mixing::{mix_inputs, mix_label_with_uniform, one_hot, sample_lambda, LambdaPolicy, MixSpec};
use crate::model::{MlpConfig, MlpParams};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub eta_min: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub method: MethodTag,
    pub mix: MixSpec,
    pub sim_oe_enabled: bool,
    /// Weight on the consistency term; the combined objective uses 1.
    pub sim_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr0: 0.05,
            eta_min: 0.0,
            weight_decay: 1e-5,
            momentum: 0.9,
            seed: 0,
            method: MethodTag::CeOnly,
            mix: MixSpec::default(),
            sim_oe_enabled: false,
            sim_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::config("lr0 must be positive"));
        }
        if self.eta_min < 0.0 || self.eta_min > self.lr0 {
            return Err(Error::config("eta_min must satisfy 0 <= eta_min <= lr0"));
        }
        if self.weight_decay < 0.0 || self.momentum < 0.0 {
            return Err(Error::config("weight_decay and momentum must be non-negative"));
        }
        self.mix.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,lr,total,id_term,regularizer_term,consistency_term\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.mean_loss.total,
                e.mean_loss.id_term,
                e.mean_loss.regularizer_term,
                e.mean_loss.consistency_term
            ));
        }
        out
    }
}

/// eta_min + (lr0 - eta_min) * (1 + cos(pi * epoch / total)) / 2.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, eta_min: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::invalid("total_epochs must be positive"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} exceeds total_epochs {total_epochs}"
        )));
    }
    let cos = (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos();
    Ok(eta_min + 0.5 * (lr0 - eta_min) * (1.0 + cos))
}

/// Momentum buffers, one pair (weight, bias) per layer.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SgdState {
    pub fn new(params: &MlpParams) -> Self {
        SgdState {
            velocity: params
                .layers
                .iter()
                .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                .collect(),
        }
    }
}

/// v <- momentum * v + (grad + wd * p); p <- p - lr * v.
pub fn sgd_step(
    params: &mut MlpParams,
    grads: &[(Vec<f64>, Vec<f64>)],
    lr: f64,
    weight_decay: f64,
    momentum: f64,
    state: &mut SgdState,
) -> Result<()> {
    if grads.len() != params.layers.len() {
        return Err(Error::invalid("gradient count does not match layer count"));
    }
    for (i, (w, b)) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads[i];
        if gw.len() != w.len() || gb.len() != b.len() {
            return Err(Error::invalid("gradient shape does not match parameter shape"));
        }
        let (vw, vb) = &mut state.velocity[i];
        for ((p, g), v) in w.values_mut().iter_mut().zip(gw).zip(vw.iter_mut()) {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
        for ((p, g), v) in b.values_mut().iter_mut().zip(gb).zip(vb.iter_mut()) {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

fn read_grads(tape: &Tape, vars: &[(Var, Var)]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    vars.iter()
        .map(|(w, b)| {
            let gw = tape
                .grad(*w)
                .ok_or_else(|| Error::invalid("missing weight gradient"))?
                .to_vec();
            let gb = tape
                .grad(*b)
                .ok_or_else(|| Error::invalid("missing bias gradient"))?
                .to_vec();
            Ok((gw, gb))
        })
        .collect()
}

fn one_hot_batch(labels: &[usize], k: usize) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = labels.iter().map(|&l| one_hot(l, k)).collect();
    rows_to_tensor(&rows)
}

fn gather_rows(set: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| set[i].clone()).collect()
}

fn mean_breakdown(records: &[LossBreakdown]) -> LossBreakdown {
    let n = records.len() as f64;
    let mut acc = records[0];
    acc.total = records.iter().map(|r| r.total).sum::<f64>() / n;
    acc.id_term = records.iter().map(|r| r.id_term).sum::<f64>() / n;
    acc.regularizer_term = records.iter().map(|r| r.regularizer_term).sum::<f64>() / n;
    acc.consistency_term = records.iter().map(|r| r.consistency_term).sum::<f64>() / n;
    acc
}

/// Minimize the empirical cross-entropy risk on ID training data only.
pub fn pretrain(
    id_train: &LabeledSet,
    model_config: &MlpConfig,
    cfg: &TrainConfig,
) -> Result<(MlpParams, RunRecord)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut params = MlpParams::init(model_config)?;
    let mut state = SgdState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = model_config.num_classes;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.eta_min)?;
        let mut step_records = Vec::new();
        for batch in batches(id_train.len(), cfg.batch_size, &mut rng)? {
            let x = rows_to_tensor(&gather_rows(&id_train.inputs, &batch))?;
            let labels: Vec<usize> = batch.iter().map(|&i| id_train.labels[i]).collect();
            let targets = one_hot_batch(&labels, k)?;

            let mut tape = Tape::new();
            let tape_params = params.to_tape(&mut tape);
            let xv = tape.constant(x);
            let logits = params.forward_on_tape(&mut tape, &tape_params, xv)?;
            let loss = batch_risk(&mut tape, logits, &targets)?;
            tape.backward(loss)?;
            let grads = read_grads(&tape, &tape_params.layers)?;
            sgd_step(&mut params, &grads, lr, cfg.weight_decay, cfg.momentum, &mut state)?;

            step_records.push(LossBreakdown {
                total: tape.value(loss).scalar_value(),
                id_term: tape.value(loss).scalar_value(),
                regularizer_term: 0.0,
                consistency_term: 0.0,
                method_tag: MethodTag::CeOnly,
                sim_oe_enabled: false,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            mean_loss: mean_breakdown(&step_records),
        });
    }
    Ok((
        params,
        RunRecord {
            epochs,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Row-wise logit mix with a per-row coefficient vector.
fn mix_logits_rows(
    tape: &mut Tape,
    f_in: Var,
    f_out: Var,
    lambdas: &[f64],
) -> Result<Var> {
    let shape = tape.value(f_in).shape().to_vec();
    let k = shape[1];
    let lam: Vec<f64> = lambdas.iter().flat_map(|&l| std::iter::repeat(l).take(k)).collect();
    let inv: Vec<f64> = lam.iter().map(|l| 1.0 - l).collect();
    let lam_t = Tensor::new(shape.clone(), lam)?;
    let inv_t = Tensor::new(shape, inv)?;
    let a = tape.mul_const(f_in, &lam_t)?;
    let b = tape.mul_const(f_out, &inv_t)?;
    tape.add(a, b)
}

/// One fine-tuning step's loss graph; returns the scalar loss var and its
/// breakdown. Lambdas has one entry per row of the paired batch.
#[allow(clippy::too_many_arguments)]
fn finetune_step_loss(
    tape: &mut Tape,
    params: &MlpParams,
    tape_params: &crate::model::TapeParams,
    cfg: &TrainConfig,
    x_in: &[Vec<f64>],
    y_in: &[usize],
    x_out: &[Vec<f64>],
    lambdas: &[f64],
    k: usize,
) -> Result<(Var, LossBreakdown)> {
    let xi = tape.constant(rows_to_tensor(x_in)?);
    let f_in = params.forward_on_tape(tape, tape_params, xi)?;
    let targets = one_hot_batch(y_in, k)?;
    let id_term = cross_entropy(tape, f_in, &targets)?;

    let forward_aux = |tape: &mut Tape| -> Result<Var> {
        let xo = tape.constant(rows_to_tensor(x_out)?);
        params.forward_on_tape(tape, tape_params, xo)
    };
    let forward_mixed = |tape: &mut Tape| -> Result<Var> {
        let mixed: Vec<Vec<f64>> = x_in
            .iter()
            .zip(x_out)
            .zip(lambdas)
            .map(|((a, b), &l)| {
                mix_inputs(&Tensor::vector(a.clone()), &Tensor::vector(b.clone()), l)
                    .map(|t| t.values().to_vec())
            })
            .collect::<Result<_>>()?;
        let xm = tape.constant(rows_to_tensor(&mixed)?);
        params.forward_on_tape(tape, tape_params, xm)
    };
    let mixed_labels = || -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = y_in
            .iter()
            .zip(lambdas)
            .map(|(&l, &lam)| mix_label_with_uniform(&one_hot(l, k), lam))
            .collect::<Result<_>>()?;
        rows_to_tensor(&rows)
    };
    let uniform = Tensor::new(vec![x_out.len(), k], vec![1.0 / k as f64; x_out.len() * k])?;

    let beta = cfg.mix.beta_weight;
    let (reg, sim) = match cfg.method {
        MethodTag::CeOnly => (None, None),
        MethodTag::Oe => {
            let f_out = forward_aux(tape)?;
            (Some(cross_entropy(tape, f_out, &uniform)?), None)
        }
        MethodTag::MixOe => {
            let f_mixed = forward_mixed(tape)?;
            let reg = cross_entropy(tape, f_mixed, &mixed_labels()?)?;
            let sim = if cfg.sim_oe_enabled {
                let f_out = forward_aux(tape)?;
                let mix = mix_logits_rows(tape, f_in, f_out, lambdas)?;
                let diff = tape.subtract(mix, f_mixed)?;
                let norms = tape.row_l2_norms(diff)?;
                let m = tape.mean(norms);
                Some(tape.scalar_mul(m, cfg.sim_weight))
            } else {
                None
            };
            (Some(reg), sim)
        }
        MethodTag::LogitMixOe => {
            let f_out = forward_aux(tape)?;
            let mix = mix_logits_rows(tape, f_in, f_out, lambdas)?;
            let reg = cross_entropy(tape, mix, &mixed_labels()?)?;
            let sim = if cfg.sim_oe_enabled {
                let f_mixed = forward_mixed(tape)?;
                let diff = tape.subtract(mix, f_mixed)?;
                let norms = tape.row_l2_norms(diff)?;
                let m = tape.mean(norms);
                Some(tape.scalar_mul(m, cfg.sim_weight))
            } else {
                None
            };
            (Some(reg), sim)
        }
        other => {
            return Err(Error::config(format!(
                "method {} is not a fine-tuning variant",
                other.name()
            )))
        }
    };

    let mut total = id_term;
    let mut reg_value = 0.0;
    if let Some(reg) = reg {
        reg_value = tape.value(reg).scalar_value();
        let scaled = tape.scalar_mul(reg, beta);
        total = tape.add(total, scaled)?;
    }
    let mut sim_value = 0.0;
    if let Some(sim) = sim {
        sim_value = tape.value(sim).scalar_value();
        total = tape.add(total, sim)?;
    }
    let breakdown = LossBreakdown {
        total: tape.value(total).scalar_value(),
        id_term: tape.value(id_term).scalar_value(),
        regularizer_term: reg_value,
        consistency_term: sim_value,
        method_tag: cfg.method,
        sim_oe_enabled: cfg.sim_oe_enabled,
    };
    Ok((total, breakdown))
}

/// Fine-tune a pretrained checkpoint with the configured method. Each step
/// pairs an ID batch with an aux-OOD batch drawn uniformly with replacement.
pub fn finetune(
    checkpoint: &MlpParams,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
) -> Result<(MlpParams, RunRecord)> {
    cfg.validate()?;
    if checkpoint.config.input_dim != bundle.provenance.input_dim {
        return Err(Error::config("checkpoint input_dim does not match dataset"));
    }
    if cfg.method.uses_aux_ood() && bundle.aux_ood.is_empty() {
        return Err(Error::config(format!(
            "method {} requires a non-empty aux_ood set",
            cfg.method.name()
        )));
    }
    let start = Instant::now();
    let mut params = checkpoint.clone();
    let mut state = SgdState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = params.config.num_classes;
    let id_train = &bundle.id_train;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // fresh cosine schedule over the fine-tuning epochs
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.eta_min)?;
        let mut step_records = Vec::new();
        for batch in batches(id_train.len(), cfg.batch_size, &mut rng)? {
            let x_in = gather_rows(&id_train.inputs, &batch);
            let y_in: Vec<usize> = batch.iter().map(|&i| id_train.labels[i]).collect();
            let x_out: Vec<Vec<f64>> = if cfg.method.uses_aux_ood() {
                (0..batch.len())
                    .map(|_| bundle.aux_ood[rng.gen_range(0..bundle.aux_ood.len())].clone())
                    .collect()
            } else {
                vec![vec![0.0; params.config.input_dim]; batch.len()]
            };
            let lambdas: Vec<f64> = match cfg.mix.lambda_policy {
                LambdaPolicy::PerBatch => {
                    let l = sample_lambda(cfg.mix.alpha, &mut rng)?;
                    vec![l; batch.len()]
                }
                LambdaPolicy::PerSample => (0..batch.len())
                    .map(|_| sample_lambda(cfg.mix.alpha, &mut rng))
                    .collect::<Result<_>>()?,
            };

            let mut tape = Tape::new();
            let tape_params = params.to_tape(&mut tape);
            let (total, breakdown) = finetune_step_loss(
                &mut tape, &params, &tape_params, cfg, &x_in, &y_in, &x_out, &lambdas, k,
            )?;
            tape.backward(total)?;
            let grads = read_grads(&tape, &tape_params.layers)?;
            sgd_step(&mut params, &grads, lr, cfg.weight_decay, cfg.momentum, &mut state)?;
            step_records.push(breakdown);
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            mean_loss: mean_breakdown(&step_records),
        });
    }
    Ok((
        params,
        RunRecord {
            epochs,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
