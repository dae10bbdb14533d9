use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use logitmix::config::{self, load_config, Variant};
use logitmix::data;
use logitmix::error::Error;
use logitmix::model::load_checkpoint;
use logitmix::runner::{
    self, analyze_to_dir, dump_logits, metrics_from_dump, parse_logit_dump, run_variant,
    SweepParameter,
};

#[derive(Parser)]
#[command(name = "logitmix", version, about = "Outlier-aware training workbench")]
struct Cli {
    /// Path to a `key = value` experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set finetune.alpha=2.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default config file to stdout.
    InitConfig,
    /// Generate the synthetic dataset and write it to a CSV + sidecar.
    GenerateData {
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train a model from scratch on the in-distribution training split.
    Pretrain,
    /// Fine-tune one variant from the pretrained checkpoint.
    Finetune {
        /// Variant name, e.g. `oe` or `logit_mixoe+sim`.
        #[arg(long)]
        variant: String,
        /// Pretrained checkpoint; defaults to <output.dir>/pretrain.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compute metrics from a stored logit dump.
    Evaluate {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long, default_value = "model")]
        method: String,
    },
    /// Produce histogram / projection / response artifacts for a variant.
    Analyze {
        #[arg(long)]
        variant: String,
    },
    /// Full pipeline: data, pretrain, all variants, comparison table.
    Run,
    /// Repeat the full pipeline across values of alpha or beta.
    Sweep {
        #[arg(long, value_name = "alpha|beta")]
        parameter: String,
        /// Comma-separated list of values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> logitmix::Result<()> {
    if matches!(cli.command, Command::InitConfig) {
        print!("{}", config::default_config_text());
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref(), &cli.sets)?;
    match cli.command {
        Command::InitConfig => unreachable!(),
        Command::GenerateData { out } => {
            let bundle = data::generate(&cfg.dataset)?;
            data::save(&bundle, &out)?;
            println!(
                "wrote {} ({} train, {} test, {} holdout OOD, {} aux OOD)",
                out.display(),
                bundle.id_train.len(),
                bundle.id_test.len(),
                bundle.ood_holdout.len(),
                bundle.aux_ood.len()
            );
        }
        Command::Pretrain => {
            std::fs::create_dir_all(&cfg.output_dir)?;
            let bundle = runner::obtain_dataset(&cfg, Some(&cfg.output_dir))?;
            let params = runner::pretrain_to_dir(&cfg, &bundle, &cfg.output_dir)?;
            let _ = params;
            println!("wrote {}", cfg.output_dir.join("pretrain.ckpt").display());
        }
        Command::Finetune { variant, checkpoint } => {
            let variant = Variant::parse(&variant)?;
            let bundle = runner::obtain_dataset(&cfg, None)?;
            let ckpt_path = checkpoint.unwrap_or_else(|| cfg.output_dir.join("pretrain.ckpt"));
            let pretrained = load_checkpoint(&ckpt_path)?;
            let out_dir = cfg.output_dir.join(variant.name());
            let result = run_variant(&cfg, &bundle, &pretrained, &variant, &out_dir)?;
            println!("{}", result.metrics.to_csv());
        }
        Command::Evaluate { logits, method } => {
            let dump = parse_logit_dump(&logits)?;
            let report = metrics_from_dump(&dump, &method, &cfg.score_kinds)?;
            println!("{}", report.to_csv());
        }
        Command::Analyze { variant } => {
            let variant = Variant::parse(&variant)?;
            let bundle = runner::obtain_dataset(&cfg, None)?;
            let out_dir = cfg.output_dir.join(variant.name());
            let params = load_checkpoint(&out_dir.join("checkpoint.ckpt"))?;
            let logits_path = out_dir.join("logits.csv");
            if !logits_path.exists() {
                std::fs::write(&logits_path, dump_logits(&params, &bundle)?)?;
            }
            let dump = parse_logit_dump(&logits_path)?;
            analyze_to_dir(&cfg, &bundle, &params, &dump, &variant, &out_dir)?;
            println!("analysis artifacts written to {}", out_dir.display());
        }
        Command::Run => {
            let summary = runner::run(&cfg)?;
            print!("{}", runner::comparison_csv(&summary.variants));
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Sweep { parameter, values } => {
            let parameter = SweepParameter::parse(&parameter)?;
            let path = runner::sweep(&cfg, parameter, &values)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
