//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any FAIL also fails the test.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use logitmix::data::{generate, SyntheticSpec};
use logitmix::losses::{
    cross_entropy, cross_entropy_value, logit_mixing_cls_loss, logit_mixing_sim_loss,
    logit_mixoe_loss, mixoe_loss, mixup_loss, oe_loss, sim_oe_loss, total_loss, MethodTag,
    TotalLossInputs,
};
use logitmix::mixing::{mix_inputs, mix_label_with_uniform, one_hot, sample_lambda};
use logitmix::model::{MlpConfig, MlpParams};
use logitmix::ood_eval::{
    auroc, fpr_at_95_tpr, scores_from_logits, ScoreKind, ScoreSet,
};
use logitmix::tensor::{grad_check, Tape, Tensor, Var};
use logitmix::training::{finetune, pretrain, TrainConfig};

fn report(criterion: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("acceptance [{verdict}] {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

fn rand_tensor<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn rand_simplex_row<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: (f64, &'static str) = (0.0, "none");
    let mut check = |name: &'static str, err: f64| {
        if err > worst.0 {
            worst = (err, name);
        }
    };

    type OpFn = fn(&mut Tape, &[Var]) -> logitmix::Result<Var>;
    let ops: Vec<(&'static str, Vec<Vec<usize>>, OpFn)> = vec![
        ("matmul", vec![vec![2, 3], vec![3, 2]], |t, v| {
            let m = t.matmul(v[0], v[1])?;
            Ok(t.sum(m))
        }),
        ("transpose", vec![vec![2, 3]], |t, v| {
            let m = t.transpose(v[0])?;
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("add", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let m = t.add(v[0], v[1])?;
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("subtract", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let m = t.subtract(v[0], v[1])?;
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("add_bias_broadcast", vec![vec![2, 3], vec![3]], |t, v| {
            let m = t.add_bias_broadcast(v[0], v[1])?;
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("scalar_mul", vec![vec![4]], |t, v| {
            let m = t.scalar_mul(v[0], 1.7);
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("mul_const", vec![vec![4]], |t, v| {
            let c = Tensor::vector(vec![0.5, -1.5, 2.0, 0.25]);
            let m = t.mul_const(v[0], &c)?;
            Ok(t.sum(m))
        }),
        ("relu", vec![vec![2, 3]], |t, v| {
            let m = t.relu(v[0]);
            Ok(t.sum(m))
        }),
        ("log_softmax", vec![vec![2, 4]], |t, v| {
            let m = t.log_softmax(v[0])?;
            let w = t.l2_norm(m);
            Ok(w)
        }),
        ("sum", vec![vec![5]], |t, v| Ok(t.sum(v[0]))),
        ("mean", vec![vec![6]], |t, v| Ok(t.mean(v[0]))),
        ("l2_norm", vec![vec![4]], |t, v| Ok(t.l2_norm(v[0]))),
        ("row_l2_norms", vec![vec![3, 3]], |t, v| {
            let m = t.row_l2_norms(v[0])?;
            Ok(t.sum(m))
        }),
    ];
    for (name, shapes, f) in &ops {
        for _ in 0..100 {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(s.clone(), &mut rng)).collect();
            check(name, grad_check(f, &inputs, 1e-5).unwrap());
        }
    }

    let k = 4;
    for _ in 0..100 {
        let y = Tensor::vector(rand_simplex_row(k, &mut rng));
        let y2 = Tensor::vector(rand_simplex_row(k, &mut rng));
        let y_oh = Tensor::vector(one_hot(rng.gen_range(0..k), k));
        let lambda = rng.gen_range(0.05..0.95);
        let y_mixed = Tensor::vector(mix_label_with_uniform(y_oh.values(), lambda).unwrap());
        let beta = rng.gen_range(0.1..2.0);
        let f_in = rand_tensor(vec![k], &mut rng);
        let f_out = rand_tensor(vec![k], &mut rng);
        let f_mixed = rand_tensor(vec![k], &mut rng);

        let e = grad_check(
            |t, v| cross_entropy(t, v[0], &y),
            std::slice::from_ref(&f_in),
            1e-5,
        )
        .unwrap();
        check("cross_entropy", e);

        let e = grad_check(
            |t, v| mixup_loss(t, v[0], &y, &y2, lambda),
            std::slice::from_ref(&f_mixed),
            1e-5,
        )
        .unwrap();
        check("mixup_loss", e);

        let e = grad_check(
            |t, v| logit_mixing_sim_loss(t, v[0], v[1], v[2], lambda),
            &[f_in.clone(), f_out.clone(), f_mixed.clone()],
            1e-5,
        )
        .unwrap();
        check("logit_mixing_sim_loss", e);

        let e = grad_check(
            |t, v| logit_mixing_cls_loss(t, v[0], v[1], &y_oh, &y2),
            &[f_in.clone(), f_out.clone()],
            1e-5,
        )
        .unwrap();
        check("logit_mixing_cls_loss", e);

        let e = grad_check(
            |t, v| oe_loss(t, v[0], &y_oh, v[1], beta).map(|(var, _)| var),
            &[f_in.clone(), f_out.clone()],
            1e-5,
        )
        .unwrap();
        check("oe_loss", e);

        let e = grad_check(
            |t, v| mixoe_loss(t, v[0], &y_oh, v[1], &y_mixed, beta).map(|(var, _)| var),
            &[f_in.clone(), f_mixed.clone()],
            1e-5,
        )
        .unwrap();
        check("mixoe_loss", e);

        let e = grad_check(
            |t, v| {
                logit_mixoe_loss(t, v[0], &y_oh, v[1], lambda, &y_mixed, beta).map(|(var, _)| var)
            },
            &[f_in.clone(), f_out.clone()],
            1e-5,
        )
        .unwrap();
        check("logit_mixoe_loss", e);

        let e = grad_check(
            |t, v| sim_oe_loss(t, v[0], v[1], v[2], lambda),
            &[f_in.clone(), f_out.clone(), f_mixed.clone()],
            1e-5,
        )
        .unwrap();
        check("sim_oe_loss", e);

        let e = grad_check(
            |t, v| {
                let inputs = TotalLossInputs {
                    f_in: v[0],
                    y_in: &y_oh,
                    f_out: Some(v[1]),
                    f_of_mixed_input: Some(v[2]),
                    y_mixed: Some(&y_mixed),
                    f_second: None,
                    y_second: None,
                    lambda,
                };
                total_loss(t, MethodTag::LogitMixOe, &inputs, true, beta, 1.0)
                    .map(|(var, _)| var)
            },
            &[f_in.clone(), f_out.clone(), f_mixed.clone()],
            1e-5,
        )
        .unwrap();
        check("total_loss(logit_mixoe+sim)", e);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst.0 <= 1e-6 && elapsed < 30.0;
    report(
        "gradient suite",
        ok,
        &format!(
            "max relative error {:.2e} at {} over all ops and losses, {elapsed:.1}s (budget 30s)",
            worst.0, worst.1
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_algebraic_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let k = 5;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let f_in = rand_tensor(vec![k], &mut rng);
        let f_out = rand_tensor(vec![k], &mut rng);
        let y = Tensor::vector(one_hot(rng.gen_range(0..k), k));
        let uniform = Tensor::vector(vec![1.0 / k as f64; k]);
        let beta = rng.gen_range(0.0..3.0);
        let ce = cross_entropy_value(&f_in, &y).unwrap();

        // mixed-pair loss at lambda = 0 degenerates to plain outlier exposure
        let mut tape = Tape::new();
        let fi = tape.constant(f_in.clone());
        let fo = tape.constant(f_out.clone());
        let (_, via_mixoe) = mixoe_loss(&mut tape, fi, &y, fo, &uniform, beta).unwrap();
        let mut tape = Tape::new();
        let fi = tape.constant(f_in.clone());
        let fo = tape.constant(f_out.clone());
        let (_, via_oe) = oe_loss(&mut tape, fi, &y, fo, beta).unwrap();
        worst = worst.max((via_mixoe.total - via_oe.total).abs());

        // zero outlier weight degenerates to plain cross-entropy
        let mut tape = Tape::new();
        let fi = tape.constant(f_in.clone());
        let fo = tape.constant(f_out.clone());
        let (_, b0) = oe_loss(&mut tape, fi, &y, fo, 0.0).unwrap();
        worst = worst.max((b0.total - ce).abs());

        // logit mixing at lambda = 1 collapses onto the labelled sample
        let mut tape = Tape::new();
        let fi = tape.constant(f_in.clone());
        let fo = tape.constant(f_out.clone());
        let (_, b1) = logit_mixoe_loss(&mut tape, fi, &y, fo, 1.0, &y, beta).unwrap();
        worst = worst.max((b1.total - (1.0 + beta) * ce).abs());

        // pair-mixing loss is cross-entropy against the mixed label
        let lambda = rng.gen_range(0.0..1.0);
        let y2 = Tensor::vector(one_hot(rng.gen_range(0..k), k));
        let mut tape = Tape::new();
        let fm = tape.constant(f_out.clone());
        let m = mixup_loss(&mut tape, fm, &y, &y2, lambda).unwrap();
        let mixed: Vec<f64> = y
            .values()
            .iter()
            .zip(y2.values())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let direct = cross_entropy_value(&f_out, &Tensor::vector(mixed)).unwrap();
        worst = worst.max((tape.value(m).scalar_value() - direct).abs());
    }
    report(
        "algebraic reductions",
        worst <= 1e-12,
        &format!("max deviation {worst:.2e} across 100 random instances (tolerance 1e-12)"),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_linear_model_consistency_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let params = MlpParams::init(&MlpConfig {
        input_dim: 3,
        hidden_dims: vec![],
        num_classes: 4,
        seed: 7,
    })
    .unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let x_in: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x_out: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lambda = rng.gen_range(0.0..1.0);
        let mixed = mix_inputs(
            &Tensor::vector(x_in.clone()),
            &Tensor::vector(x_out.clone()),
            lambda,
        )
        .unwrap();
        let f_in = Tensor::vector(params.forward_one(&x_in).unwrap());
        let f_out = Tensor::vector(params.forward_one(&x_out).unwrap());
        let f_mixed = Tensor::vector(params.forward_one(mixed.values()).unwrap());

        let mut tape = Tape::new();
        let fi = tape.constant(f_in);
        let fo = tape.constant(f_out);
        let fm = tape.constant(f_mixed);
        let sim = logit_mixing_sim_loss(&mut tape, fi, fo, fm, lambda).unwrap();
        worst = worst.max(tape.value(sim).scalar_value());
        let sim_oe = sim_oe_loss(&mut tape, fi, fo, fm, lambda).unwrap();
        worst = worst.max(tape.value(sim_oe).scalar_value());
    }
    report(
        "linear-model consistency identity",
        worst <= 1e-10,
        &format!("max consistency loss {worst:.2e} over 100 random triples (tolerance 1e-10)"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn brute_force_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut favourable = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                favourable += 1.0;
            } else if a == b {
                favourable += 0.5;
            }
        }
    }
    favourable / (id.len() * ood.len()) as f64
}

fn sweep_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    // Largest observed threshold with TPR >= 0.95 (boundary inclusive),
    // falling back to accept-everything when none qualifies.
    let mut best: Option<f64> = None;
    for &tau in id.iter().chain(ood) {
        let tpr = id.iter().filter(|&&s| s >= tau).count() as f64 / id.len() as f64;
        if tpr >= 0.95 && best.map_or(true, |b| tau > b) {
            best = Some(tau);
        }
    }
    match best {
        Some(tau) => ood.iter().filter(|&&s| s >= tau).count() as f64 / ood.len() as f64,
        None => 1.0,
    }
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_auroc = 0.0_f64;
    let mut fpr_mismatches = 0usize;
    let mut worst_mono = 0.0_f64;
    for _ in 0..200 {
        let n_id = rng.gen_range(1..=50);
        let n_ood = rng.gen_range(1..=50);
        // Discrete grid injects ties both within and across the two sides.
        let draw = |rng: &mut ChaCha8Rng| (rng.gen_range(0..20) as f64) / 4.0;
        let id: Vec<f64> = (0..n_id).map(|_| draw(&mut rng)).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| draw(&mut rng)).collect();
        let set = ScoreSet {
            id_scores: id.clone(),
            ood_scores: ood.clone(),
            score_kind: ScoreKind::Msp,
        };
        let a = auroc(&set).unwrap();
        worst_auroc = worst_auroc.max((a - brute_force_auroc(&id, &ood)).abs());
        let f = fpr_at_95_tpr(&set).unwrap();
        if f != sweep_fpr95(&id, &ood) {
            fpr_mismatches += 1;
        }

        // strictly increasing transform must leave both metrics unchanged
        let warp = |s: f64| (s * 0.7).exp() + 3.0 * s;
        let warped = ScoreSet {
            id_scores: id.iter().map(|&s| warp(s)).collect(),
            ood_scores: ood.iter().map(|&s| warp(s)).collect(),
            score_kind: ScoreKind::Msp,
        };
        worst_mono = worst_mono.max((auroc(&warped).unwrap() - a).abs());
        worst_mono = worst_mono.max((fpr_at_95_tpr(&warped).unwrap() - f).abs());
    }
    let ok = worst_auroc <= 1e-12 && fpr_mismatches == 0 && worst_mono <= 1e-12;
    report(
        "metric oracles",
        ok,
        &format!(
            "auroc vs pairwise oracle {worst_auroc:.2e}, fpr95 sweep mismatches {fpr_mismatches}/200, monotone-transform drift {worst_mono:.2e}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_beta_sampler() {
    let mut ok = true;
    let mut details = Vec::new();
    let mut mid_mass = Vec::new();
    for alpha in [0.2, 1.0, 2.5] {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_lambda(alpha, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        let expected_var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        let mean_ok = (mean - 0.5).abs() <= 0.01;
        let var_ok = (var - expected_var).abs() / expected_var <= 0.10;
        ok &= mean_ok && var_ok;
        let frac = |lo: f64, hi: f64| {
            draws.iter().filter(|&&l| l >= lo && l <= hi).count() as f64 / draws.len() as f64
        };
        let bins = [frac(0.0, 0.2), frac(0.4, 0.6), frac(0.8, 1.0)];
        if alpha == 0.2 {
            ok &= bins[1] < bins[0] && bins[1] < bins[2];
        }
        if alpha == 2.5 {
            ok &= bins[1] > bins[0] && bins[1] > bins[2];
        }
        mid_mass.push(bins[1]);
        details.push(format!("alpha {alpha}: mean {mean:.4}, var {var:.4} (expect {expected_var:.4})"));
    }
    ok &= mid_mass[0] < mid_mass[1] && mid_mass[1] < mid_mass[2];
    report("beta sampler", ok, &details.join("; "));
}

// ---------------------------------------------------------------- criterion 6

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn mean_aux_stat(params: &MlpParams, aux: &[Vec<f64>], kind: ScoreKind) -> f64 {
    let rows: Vec<Vec<f64>> = aux
        .iter()
        .map(|x| params.forward_one(x).unwrap())
        .collect();
    mean_of(&scores_from_logits(&rows, kind).unwrap())
}

fn msp_auroc(params: &MlpParams, id: &[Vec<f64>], ood: &[Vec<f64>]) -> f64 {
    let set = logitmix::ood_eval::score_set(params, id, ood, ScoreKind::Msp).unwrap();
    auroc(&set).unwrap()
}

#[test]
fn criterion_6_trend_reproduction() {
    let start = Instant::now();
    let variants: [(&str, MethodTag, bool); 4] = [
        ("oe", MethodTag::Oe, false),
        ("mixoe", MethodTag::MixOe, false),
        ("logit_mixoe", MethodTag::LogitMixOe, false),
        ("logit_mixoe+sim", MethodTag::LogitMixOe, true),
    ];
    let mut baseline_auroc = Vec::new();
    let mut baseline_aux_msp = Vec::new();
    let mut auroc_by: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut aux_msp_by: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut aux_norm_by: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];

    // Fixed default dataset; the five seeds drive initialization and batching.
    for seed in 0..5u64 {
        let spec = SyntheticSpec::default();
        let bundle = generate(&spec).unwrap();
        let mc = MlpConfig {
            input_dim: spec.input_dim,
            hidden_dims: vec![64, 64],
            num_classes: bundle.num_classes(),
            seed,
        };
        let pre_cfg = TrainConfig {
            epochs: 30,
            seed,
            ..TrainConfig::default()
        };
        let (pre, _) = pretrain(&bundle.id_train, &mc, &pre_cfg).unwrap();
        baseline_auroc.push(msp_auroc(&pre, &bundle.id_test.inputs, &bundle.ood_holdout));
        baseline_aux_msp.push(mean_aux_stat(&pre, &bundle.aux_ood, ScoreKind::Msp));

        for (vi, &(_, method, sim)) in variants.iter().enumerate() {
            let ft_cfg = TrainConfig {
                epochs: 10,
                lr0: 0.005,
                seed: seed.wrapping_mul(1000).wrapping_add(vi as u64),
                method,
                sim_oe_enabled: sim,
                ..TrainConfig::default()
            };
            let (tuned, _) = finetune(&pre, &bundle, &ft_cfg).unwrap();
            auroc_by[vi].push(msp_auroc(&tuned, &bundle.id_test.inputs, &bundle.ood_holdout));
            aux_msp_by[vi].push(mean_aux_stat(&tuned, &bundle.aux_ood, ScoreKind::Msp));
            aux_norm_by[vi].push(mean_aux_stat(&tuned, &bundle.aux_ood, ScoreKind::LogitL2));
        }
    }

    let base_auroc = median(baseline_auroc);
    let base_aux_msp = median(baseline_aux_msp);
    let mut details = vec![format!("baseline auroc {base_auroc:.3}")];
    let mut ok = true;
    for (vi, &(name, _, _)) in variants.iter().enumerate() {
        let m = median(auroc_by[vi].clone());
        details.push(format!("{name} auroc {m:.3}"));
        if vi < 3 {
            ok &= m > base_auroc; // (a) oe / mixoe / logit_mixoe beat the baseline
        }
        ok &= median(aux_msp_by[vi].clone()) < base_aux_msp; // (c)
    }
    // (b) the consistency term shrinks aux-OOD logits
    let norm_plain = median(aux_norm_by[2].clone());
    let norm_sim = median(aux_norm_by[3].clone());
    ok &= norm_sim < norm_plain;
    details.push(format!("aux logit norm {norm_plain:.3} -> {norm_sim:.3} with consistency term"));

    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 300.0;
    details.push(format!("{elapsed:.0}s (budget 300s)"));
    report("trend reproduction", ok, &details.join("; "));
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_logitmix"))
            .args([
                "--set",
                "dataset.samples_per_class=40",
                "--set",
                "pretrain.epochs=4",
                "--set",
                "finetune.epochs=2",
                "--set",
                "seed=17",
                "--set",
                "finetune.variants=ce_only,oe,logit_mixoe+sim",
                "--set",
                &format!("output.dir={}", out.display()),
                "run",
            ])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    let mut compared = 0;
    let mut identical = true;
    let mut first_diff = String::new();
    for rel in [
        "comparison.csv",
        "pretrain.ckpt",
        "ce_only/metrics.csv",
        "ce_only/checkpoint.ckpt",
        "oe/metrics.csv",
        "oe/checkpoint.ckpt",
        "logit_mixoe+sim/metrics.csv",
        "logit_mixoe+sim/checkpoint.ckpt",
        "logit_mixoe+sim/logits.csv",
    ] {
        let x = std::fs::read(a.join(rel)).unwrap();
        let y = std::fs::read(b.join(rel)).unwrap();
        compared += 1;
        if x != y {
            identical = false;
            if first_diff.is_empty() {
                first_diff = rel.to_string();
            }
        }
    }
    report(
        "determinism",
        identical,
        &format!(
            "{compared} artifacts byte-compared across two identically-seeded runs{}",
            if identical {
                String::new()
            } else {
                format!(", first difference in {first_diff}")
            }
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_analysis_integrity() {
    use logitmix::analysis::{logit_norm_histogram, pca_project, sample_logit_responses};
    use logitmix::mixing::mix_logits;
    use nalgebra::{DMatrix, SymmetricEigen};

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let k = 6;
    let id: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let ood: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..5.0)).collect())
        .collect();

    let hist = logit_norm_histogram(&id, &ood, 17).unwrap();
    let conserved = hist.id_counts.iter().sum::<usize>() == id.len()
        && hist.ood_counts.iter().sum::<usize>() == ood.len();

    let p = pca_project(&id, &ood).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let orthonormal = (dot(&p.components[0], &p.components[0]) - 1.0).abs() <= 1e-8
        && (dot(&p.components[1], &p.components[1]) - 1.0).abs() <= 1e-8
        && dot(&p.components[0], &p.components[1]).abs() <= 1e-8;

    // independent eigendecomposition route for the explained variances
    let pooled: Vec<&Vec<f64>> = id.iter().chain(&ood).collect();
    let n = pooled.len();
    let mean: Vec<f64> = (0..k)
        .map(|j| pooled.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for row in &pooled {
        for i in 0..k {
            for j in 0..k {
                cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n as f64 - 1.0);
            }
        }
    }
    let mut eigs: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().cloned().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let variances_match = (p.explained_variance[0] - eigs[0]).abs() <= 1e-8
        && (p.explained_variance[1] - eigs[1]).abs() <= 1e-8;

    let params = MlpParams::init(&MlpConfig {
        input_dim: 4,
        hidden_dims: vec![8],
        num_classes: 3,
        seed: 5,
    })
    .unwrap();
    let x_in = vec![0.3, -1.2, 0.7, 2.0];
    let x_out = vec![-0.4, 0.9, 1.1, -2.2];
    let lambda = 0.37;
    let r = sample_logit_responses(&params, &x_in, &x_out, lambda).unwrap();
    let expected = mix_logits(
        &Tensor::vector(r.f_in.clone()),
        &Tensor::vector(r.f_out.clone()),
        lambda,
    )
    .unwrap();
    let responses_exact = r.mixed_logits == expected.values();

    let ok = conserved && orthonormal && variances_match && responses_exact;
    report(
        "analysis integrity",
        ok,
        &format!(
            "histogram conservation {conserved}, components orthonormal {orthonormal}, variances match eigen oracle {variances_match}, mixed response exact {responses_exact}"
        ),
    );
}
