//! Experiment configuration: a flat, human-diffable `section.key = value`
//! file with `#` comments; any key can be overridden from the command line
//! with `--set section.key=value`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{AuxOodKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::MethodTag;
use crate::mixing::{LambdaPolicy, MixSpec};
use crate::model::MlpConfig;
use crate::ood_eval::ScoreKind;
use crate::training::TrainConfig;

/// One fine-tuning variant: a method plus the consistency-term switch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variant {
    pub method: MethodTag,
    pub sim_oe: bool,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        let (method, sim_oe) = match s.strip_suffix("+sim") {
            Some(base) => (base, true),
            None => (s, false),
        };
        let method = MethodTag::parse(method)?;
        if sim_oe && !matches!(method, MethodTag::MixOe | MethodTag::LogitMixOe) {
            return Err(Error::config(format!(
                "variant {s:?}: +sim is only defined for mixoe and logit_mixoe"
            )));
        }
        Ok(Variant { method, sim_oe })
    }

    pub fn name(&self) -> String {
        if self.sim_oe {
            format!("{}+sim", self.method.name())
        } else {
            self.method.name().to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Load an existing dataset instead of generating when set.
    pub dataset_path: Option<PathBuf>,
    pub dataset: SyntheticSpec,
    pub hidden_dims: Vec<usize>,
    pub pretrain: TrainConfig,
    /// Template for every variant; method and sim flag filled per variant.
    pub finetune: TrainConfig,
    pub variants: Vec<Variant>,
    pub score_kinds: Vec<ScoreKind>,
    pub output_dir: PathBuf,
    pub global_seed: u64,
    pub num_hist_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_path: None,
            dataset: SyntheticSpec::default(),
            hidden_dims: vec![64, 64],
            pretrain: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            // Fine-tuning resumes from a trained checkpoint; a cooler rate
            // keeps the outlier term from erasing the class structure.
            finetune: TrainConfig {
                epochs: 10,
                lr0: 0.005,
                ..TrainConfig::default()
            },
            variants: ["ce_only", "oe", "mixoe", "mixoe+sim", "logit_mixoe", "logit_mixoe+sim"]
                .iter()
                .map(|s| Variant::parse(s).unwrap())
                .collect(),
            score_kinds: ScoreKind::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            global_seed: 0,
            num_hist_bins: 40,
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes,
            seed: self.global_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("at least one fine-tune variant is required"));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.variants {
            if !seen.insert(v.name()) {
                return Err(Error::config(format!("duplicate variant {:?}", v.name())));
            }
        }
        if self.score_kinds.is_empty() {
            return Err(Error::config("at least one score kind is required"));
        }
        if self.num_hist_bins == 0 {
            return Err(Error::config("analysis.num_bins must be positive"));
        }
        Ok(())
    }
}

/// FNV-1a; stable across platforms, used to derive per-variant seeds.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// variant_seed = global_seed XOR stable hash of the variant name.
pub fn variant_seed(global_seed: u64, variant_name: &str) -> u64 {
    global_seed ^ stable_hash(variant_name)
}

/// Parse the raw key/value map from file text.
pub fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::file(origin, format!("line {}: expected key = value, got {raw:?}", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn apply_overrides(map: &mut BTreeMap<String, String>, sets: &[String]) -> Result<()> {
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects key=value, got {s:?}")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(())
}

struct Reader {
    map: BTreeMap<String, String>,
    used: std::collections::HashSet<String>,
}

impl Reader {
    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, current: T) -> Result<T> {
        match self.get(key) {
            None => Ok(current),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn parse_bool(&mut self, key: &str, current: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(current),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::config(format!("{key}: expected a boolean, got {other:?}"))),
            },
        }
    }

    fn finish(&self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(Error::config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }
}

fn parse_list<T>(value: &str, what: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).map_err(|e| Error::config(format!("{what}: {e}"))))
        .collect()
}

fn fill_train(r: &mut Reader, prefix: &str, cfg: &mut TrainConfig) -> Result<()> {
    cfg.epochs = r.parse(&format!("{prefix}.epochs"), cfg.epochs)?;
    cfg.batch_size = r.parse(&format!("{prefix}.batch_size"), cfg.batch_size)?;
    cfg.lr0 = r.parse(&format!("{prefix}.lr0"), cfg.lr0)?;
    cfg.eta_min = r.parse(&format!("{prefix}.eta_min"), cfg.eta_min)?;
    cfg.weight_decay = r.parse(&format!("{prefix}.weight_decay"), cfg.weight_decay)?;
    cfg.momentum = r.parse(&format!("{prefix}.momentum"), cfg.momentum)?;
    Ok(())
}

/// Build the experiment config from an optional file plus `--set` overrides.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut map = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            parse_kv(&text, p)?
        }
        None => BTreeMap::new(),
    };
    apply_overrides(&mut map, sets)?;

    let mut cfg = ExperimentConfig::default();
    let mut r = Reader {
        map,
        used: Default::default(),
    };

    if let Some(p) = r.get("dataset.path") {
        cfg.dataset_path = Some(PathBuf::from(p));
    }
    let d = &mut cfg.dataset;
    d.num_groups = r.parse("dataset.num_groups", d.num_groups)?;
    d.classes_per_group = r.parse("dataset.classes_per_group", d.classes_per_group)?;
    d.holdout_per_group = r.parse("dataset.holdout_per_group", d.holdout_per_group)?;
    d.samples_per_class = r.parse("dataset.samples_per_class", d.samples_per_class)?;
    d.input_dim = r.parse("dataset.input_dim", d.input_dim)?;
    d.group_separation = r.parse("dataset.group_separation", d.group_separation)?;
    d.class_separation = r.parse("dataset.class_separation", d.class_separation)?;
    d.noise_std = r.parse("dataset.noise_std", d.noise_std)?;
    if let Some(v) = r.get("dataset.aux_ood_kind") {
        d.aux_ood_kind = match v.as_str() {
            "uniform_box" => AuxOodKind::UniformBox,
            "far_clusters" => AuxOodKind::FarClusters,
            other => {
                return Err(Error::config(format!("dataset.aux_ood_kind: unknown kind {other:?}")))
            }
        };
    }

    if let Some(v) = r.get("model.hidden_dims") {
        cfg.hidden_dims = if v.is_empty() {
            vec![]
        } else {
            parse_list(&v, "model.hidden_dims", |s| {
                s.parse()
                    .map_err(|_| Error::invalid(format!("bad dimension {s:?}")))
            })?
        };
    }

    fill_train(&mut r, "pretrain", &mut cfg.pretrain)?;
    fill_train(&mut r, "finetune", &mut cfg.finetune)?;
    let mix = &mut cfg.finetune.mix;
    mix.alpha = r.parse("finetune.alpha", mix.alpha)?;
    mix.beta_weight = r.parse("finetune.beta", mix.beta_weight)?;
    if let Some(v) = r.get("finetune.lambda_policy") {
        mix.lambda_policy = match v.as_str() {
            "per_batch" => LambdaPolicy::PerBatch,
            "per_sample" => LambdaPolicy::PerSample,
            other => {
                return Err(Error::config(format!(
                    "finetune.lambda_policy: unknown policy {other:?}"
                )))
            }
        };
    }
    mix.share_lambda_across_spaces =
        r.parse_bool("finetune.share_lambda", mix.share_lambda_across_spaces)?;
    cfg.finetune.sim_weight = r.parse("finetune.sim_weight", cfg.finetune.sim_weight)?;

    if let Some(v) = r.get("finetune.variants") {
        cfg.variants = parse_list(&v, "finetune.variants", Variant::parse)?;
    }
    if let Some(v) = r.get("eval.score_kinds") {
        cfg.score_kinds = parse_list(&v, "eval.score_kinds", ScoreKind::parse)?;
    }
    if let Some(v) = r.get("output.dir") {
        cfg.output_dir = PathBuf::from(v);
    }
    cfg.global_seed = r.parse("seed", cfg.global_seed)?;
    cfg.num_hist_bins = r.parse("analysis.num_bins", cfg.num_hist_bins)?;

    r.finish()?;
    cfg.pretrain.seed = cfg.global_seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Keep a MixSpec consistent with what a variant needs.
pub fn train_config_for_variant(cfg: &ExperimentConfig, variant: &Variant) -> TrainConfig {
    let mut tc = cfg.finetune.clone();
    tc.method = variant.method;
    tc.sim_oe_enabled = variant.sim_oe;
    tc.seed = variant_seed(cfg.global_seed, &variant.name());
    tc
}

/// Default config text, written by `logitmix init-config` style tooling and
/// used in docs.
pub fn default_config_text() -> String {
    let c = ExperimentConfig::default();
    let mix = MixSpec::default();
    format!(
        "# logitmix experiment configuration\n\
         seed = {}\n\
         output.dir = {}\n\
         \n\
         dataset.num_groups = {}\n\
         dataset.classes_per_group = {}\n\
         dataset.holdout_per_group = {}\n\
         dataset.samples_per_class = {}\n\
         dataset.input_dim = {}\n\
         dataset.group_separation = {}\n\
         dataset.class_separation = {}\n\
         dataset.noise_std = {}\n\
         dataset.aux_ood_kind = uniform_box\n\
         \n\
         model.hidden_dims = 64,64\n\
         \n\
         pretrain.epochs = {}\n\
         pretrain.batch_size = {}\n\
         pretrain.lr0 = {}\n\
         pretrain.eta_min = {}\n\
         pretrain.weight_decay = {}\n\
         pretrain.momentum = {}\n\
         \n\
         finetune.epochs = {}\n\
         finetune.lr0 = {}\n\
         finetune.alpha = {}\n\
         finetune.beta = {}\n\
         finetune.lambda_policy = per_batch\n\
         finetune.share_lambda = true\n\
         finetune.sim_weight = 1\n\
         finetune.variants = ce_only,oe,mixoe,mixoe+sim,logit_mixoe,logit_mixoe+sim\n\
         \n\
         eval.score_kinds = msp,max_logit,logit_l2,energy\n\
         analysis.num_bins = {}\n",
        c.global_seed,
        c.output_dir.display(),
        c.dataset.num_groups,
        c.dataset.classes_per_group,
        c.dataset.holdout_per_group,
        c.dataset.samples_per_class,
        c.dataset.input_dim,
        c.dataset.group_separation,
        c.dataset.class_separation,
        c.dataset.noise_std,
        c.pretrain.epochs,
        c.pretrain.batch_size,
        c.pretrain.lr0,
        c.pretrain.eta_min,
        c.pretrain.weight_decay,
        c.pretrain.momentum,
        c.finetune.epochs,
        c.finetune.lr0,
        mix.alpha,
        mix.beta_weight,
        c.num_hist_bins,
    )
}
