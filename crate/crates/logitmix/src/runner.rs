//! Experiment orchestration: pretrain once, fine-tune each method variant
//! from that checkpoint, evaluate and analyze, and emit the comparison
//! table. Variants run concurrently with seeds derived from the global
//! seed, writing to disjoint directories.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    hist_to_csv, hist_to_svg, logit_norm_histogram, pca_project, pca_to_csv, pca_to_svg,
    responses_to_csv, responses_to_svg, sample_logit_responses,
};
use crate::config::{train_config_for_variant, ExperimentConfig, Variant};
use crate::data::{self, DatasetBundle};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, MlpParams};
use crate::ood_eval::{accuracy, scores_from_logits, MetricsReport, ScoreKind, ScoreSet};
use crate::parallel::par_map;
use crate::tensor::Tensor;
use crate::training::{finetune, pretrain, RunRecord};

pub struct VariantResult {
    pub variant: Variant,
    pub params: MlpParams,
    pub record: RunRecord,
    pub metrics: MetricsReport,
}

pub struct RunSummary {
    pub bundle: DatasetBundle,
    pub pretrained: MlpParams,
    pub variants: Vec<VariantResult>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

/// Load the configured dataset, or generate it (and persist a copy when an
/// output dir is given).
pub fn obtain_dataset(cfg: &ExperimentConfig, persist_to: Option<&Path>) -> Result<DatasetBundle> {
    let bundle = match &cfg.dataset_path {
        Some(p) => data::load(p)?,
        None => data::generate(&cfg.dataset)?,
    };
    if let Some(dir) = persist_to {
        data::save(&bundle, &dir.join("dataset.csv"))?;
    }
    Ok(bundle)
}

pub fn pretrain_to_dir(cfg: &ExperimentConfig, bundle: &DatasetBundle, dir: &Path) -> Result<MlpParams> {
    let mc = cfg.model_config(bundle.provenance.input_dim, bundle.num_classes());
    let (params, record) = pretrain(&bundle.id_train, &mc, &cfg.pretrain)?;
    save_checkpoint(&params, &dir.join("pretrain.ckpt"))?;
    write(&dir.join("pretrain_record.csv"), &record.to_csv())?;
    Ok(params)
}

/// Per-test-sample logit dump: split tag, label (empty for OOD), K logits.
pub fn dump_logits(params: &MlpParams, bundle: &DatasetBundle) -> Result<String> {
    let k = params.config.num_classes;
    let headers: Vec<String> = (0..k).map(|i| format!("l_{i}")).collect();
    let mut out = format!("split,label,{}\n", headers.join(","));
    let mut push = |split: &str, label: Option<usize>, x: &[f64]| -> Result<()> {
        let logits = params.forward_one(x)?;
        let label = label.map(|l| l.to_string()).unwrap_or_default();
        let values: Vec<String> = logits.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("{split},{label},{}\n", values.join(",")));
        Ok(())
    };
    for (x, &l) in bundle.id_test.inputs.iter().zip(&bundle.id_test.labels) {
        push("id_test", Some(l), x)?;
    }
    for x in &bundle.ood_holdout {
        push("ood_holdout", None, x)?;
    }
    for x in &bundle.aux_ood {
        push("aux_ood", None, x)?;
    }
    Ok(out)
}

/// Parsed logit dump, grouped by split.
#[derive(Debug, Default)]
pub struct LogitDump {
    pub id_test: Vec<(usize, Vec<f64>)>,
    pub ood_holdout: Vec<Vec<f64>>,
    pub aux_ood: Vec<Vec<f64>>,
}

pub fn parse_logit_dump(path: &Path) -> Result<LogitDump> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    lines
        .next()
        .ok_or_else(|| Error::file(path, "empty logit dump"))??;
    let mut dump = LogitDump::default();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::file(path, format!("line {}: too few fields", lineno + 2)));
        }
        let logits: Vec<f64> = fields[2..]
            .iter()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::file(path, format!("line {}: bad logit {t:?}", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        match fields[0] {
            "id_test" => {
                let label = fields[1].parse().map_err(|_| {
                    Error::file(path, format!("line {}: bad label", lineno + 2))
                })?;
                dump.id_test.push((label, logits));
            }
            "ood_holdout" => dump.ood_holdout.push(logits),
            "aux_ood" => dump.aux_ood.push(logits),
            other => {
                return Err(Error::file(path, format!("line {}: unknown split {other:?}", lineno + 2)))
            }
        }
    }
    Ok(dump)
}

/// Metrics from a logit dump alone (ID test vs held-out OOD).
pub fn metrics_from_dump(
    dump: &LogitDump,
    method: &str,
    score_kinds: &[ScoreKind],
) -> Result<MetricsReport> {
    let id_rows: Vec<Vec<f64>> = dump.id_test.iter().map(|(_, l)| l.clone()).collect();
    let labels: Vec<usize> = dump.id_test.iter().map(|(l, _)| *l).collect();
    let k = id_rows.first().map(|r| r.len()).unwrap_or(0);
    let logits = Tensor::matrix(id_rows.len(), k, id_rows.iter().flatten().copied().collect())?;
    let acc = accuracy(&logits, &labels)?;
    let score_sets: Vec<ScoreSet> = score_kinds
        .iter()
        .map(|&kind| {
            Ok(ScoreSet {
                id_scores: scores_from_logits(&id_rows, kind)?,
                ood_scores: scores_from_logits(&dump.ood_holdout, kind)?,
                score_kind: kind,
            })
        })
        .collect::<Result<_>>()?;
    MetricsReport::compute(method, acc, &score_sets)
}

/// Fine-tune one variant and write its full artifact directory.
pub fn run_variant(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    pretrained: &MlpParams,
    variant: &Variant,
    out_dir: &Path,
) -> Result<VariantResult> {
    std::fs::create_dir_all(out_dir)?;
    let tc = train_config_for_variant(cfg, variant);
    let (params, record) = finetune(pretrained, bundle, &tc)?;
    save_checkpoint(&params, &out_dir.join("checkpoint.ckpt"))?;
    write(&out_dir.join("run_record.csv"), &record.to_csv())?;

    let dump_text = dump_logits(&params, bundle)?;
    write(&out_dir.join("logits.csv"), &dump_text)?;
    let dump = parse_logit_dump(&out_dir.join("logits.csv"))?;
    let metrics = metrics_from_dump(&dump, &variant.name(), &cfg.score_kinds)?;
    write(&out_dir.join("metrics.csv"), &metrics.to_csv())?;
    write(&out_dir.join("metrics.json"), &metrics.to_json())?;

    analyze_to_dir(cfg, bundle, &params, &dump, variant, out_dir)?;

    Ok(VariantResult {
        variant: variant.clone(),
        params,
        record,
        metrics,
    })
}

/// Histogram + PCA from the dump, plus one deterministic sample-response
/// record from the model itself.
pub fn analyze_to_dir(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    params: &MlpParams,
    dump: &LogitDump,
    variant: &Variant,
    out_dir: &Path,
) -> Result<()> {
    let id_rows: Vec<Vec<f64>> = dump.id_test.iter().map(|(_, l)| l.clone()).collect();
    let hist = logit_norm_histogram(&id_rows, &dump.ood_holdout, cfg.num_hist_bins)?;
    write(&out_dir.join("hist.csv"), &hist_to_csv(&hist))?;
    write(&out_dir.join("hist.svg"), &hist_to_svg(&hist))?;

    let pca = pca_project(&id_rows, &dump.ood_holdout)?;
    write(&out_dir.join("pca.csv"), &pca_to_csv(&pca))?;
    write(&out_dir.join("pca.svg"), &pca_to_svg(&pca))?;

    let mut rng = ChaCha8Rng::seed_from_u64(crate::config::variant_seed(
        cfg.global_seed,
        &variant.name(),
    ));
    let x_in = &bundle.id_test.inputs[rng.gen_range(0..bundle.id_test.len())];
    let x_out = &bundle.aux_ood[rng.gen_range(0..bundle.aux_ood.len())];
    let responses = sample_logit_responses(params, x_in, x_out, 0.5)?;
    write(&out_dir.join("responses.csv"), &responses_to_csv(&responses))?;
    write(&out_dir.join("responses.svg"), &responses_to_svg(&responses))?;
    Ok(())
}

pub fn comparison_csv(results: &[VariantResult]) -> String {
    let mut out = String::from("variant,score_kind,accuracy,auroc,fpr95\n");
    for r in results {
        for m in &r.metrics.per_kind {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant.name(),
                m.score_kind.name(),
                r.metrics.accuracy,
                m.auroc,
                m.fpr95
            ));
        }
    }
    out
}

fn write_manifest(dir: &Path, statuses: &[(String, &str)]) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> = statuses
        .iter()
        .map(|(name, status)| (name.clone(), serde_json::Value::from(*status)))
        .collect();
    let complete = statuses.iter().all(|(_, s)| *s == "complete");
    let manifest = serde_json::json!({
        "status": if complete { "complete" } else { "partial" },
        "variants": map,
    });
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).unwrap())
}

/// The all-in-one pipeline: dataset, pretrain, per-variant fine-tune /
/// evaluate / analyze, comparison table, manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let bundle = obtain_dataset(cfg, Some(&cfg.output_dir))?;
    let pretrained = pretrain_to_dir(cfg, &bundle, &cfg.output_dir)?;

    let outcomes: Vec<(Variant, Result<VariantResult>)> = par_map(
        cfg.variants.clone(),
        |variant| {
            let out_dir = cfg.output_dir.join(variant.name());
            let result = run_variant(cfg, &bundle, &pretrained, &variant, &out_dir);
            (variant, result)
        },
    );

    let statuses: Vec<(String, &str)> = outcomes
        .iter()
        .map(|(v, r)| (v.name(), if r.is_ok() { "complete" } else { "failed" }))
        .collect();
    write_manifest(&cfg.output_dir, &statuses)?;

    let mut results = Vec::new();
    let mut first_err = None;
    for (variant, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                first_err.get_or_insert_with(|| {
                    Error::invalid(format!("variant {} failed: {e}", variant.name()))
                });
            }
        }
    }
    write(&cfg.output_dir.join("comparison.csv"), &comparison_csv(&results))?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(RunSummary {
        bundle,
        pretrained,
        variants: results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Alpha,
    Beta,
}

impl SweepParameter {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParameter::Alpha),
            "beta" => Ok(SweepParameter::Beta),
            other => Err(Error::config(format!("unknown sweep parameter {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Beta => "beta",
        }
    }
}

/// Full pipeline once per parameter value; emits `sweep.csv` in the root
/// output dir with one row per (value, variant, score kind).
pub fn sweep(cfg: &ExperimentConfig, parameter: SweepParameter, values: &[f64]) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    for &v in values {
        match parameter {
            SweepParameter::Alpha if !(v > 0.0) => {
                return Err(Error::config(format!("alpha value {v} must be positive")))
            }
            SweepParameter::Beta if v < 0.0 => {
                return Err(Error::config(format!("beta value {v} must be non-negative")))
            }
            _ => {}
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = String::from("value,variant,score_kind,accuracy,auroc,fpr95\n");
    for &value in values {
        let mut sub = cfg.clone();
        match parameter {
            SweepParameter::Alpha => sub.finetune.mix.alpha = value,
            SweepParameter::Beta => sub.finetune.mix.beta_weight = value,
        }
        sub.output_dir = cfg
            .output_dir
            .join(format!("sweep_{}_{value}", parameter.name()));
        let summary = run(&sub)?;
        for r in &summary.variants {
            for m in &r.metrics.per_kind {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    value,
                    r.variant.name(),
                    m.score_kind.name(),
                    r.metrics.accuracy,
                    m.auroc,
                    m.fpr95
                ));
            }
        }
    }
    let path = cfg.output_dir.join("sweep.csv");
    write(&path, &out)?;
    Ok(path)
}

/// Re-load a variant's stored checkpoint.
pub fn load_variant_checkpoint(cfg: &ExperimentConfig, variant: &Variant) -> Result<MlpParams> {
    load_checkpoint(&cfg.output_dir.join(variant.name()).join("checkpoint.ckpt"))
}
