//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use restorer::data::{load_dataset, make_dataset, parse_kinds, read_image, write_dataset, write_image, PairedSample};
use restorer::model::{count_flops, count_params, read_checkpoint, ModelConfig, Preset, Restorer};
use restorer::prompts::{ExternalEncoder, TextEncoder};
use restorer::train::{
    evaluate, run_ablation, AblationAxis, AblationSettings, EvalTable, PromptPolicy, RunConfig, Trainer, CHECKPOINT_FILE,
};

#[derive(Parser)]
#[command(name = "restorer", version, about = "Prompt-conditioned all-in-one image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key=value` config file; defaults to the toy preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.max_steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            c.apply(o)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic pairs or a dataset manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for metrics.csv, config.txt and checkpoint.bin.
        #[arg(long)]
        out: PathBuf,
        /// Training manifest written by `make-data`; synthetic data otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out manifest, required with `--data`.
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Continue from `<out>/checkpoint.bin`.
        #[arg(long)]
        resume: bool,
    },
    /// Restore one image, applying each prompt in turn.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "prompt", required = true)]
        prompts: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        /// External prompt table.
        #[arg(long)]
        prompt_table: Option<PathBuf>,
    },
    /// Per-degradation PSNR, SSIM and loss on held-out pairs.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to evaluate; the synthetic test split otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        /// correct, swapped or both.
        #[arg(long, default_value = "both")]
        policy: String,
    },
    /// Train and compare the variants of one architectural axis.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// attention, ffn, prompt, aaa_connect or affinity.
        #[arg(long)]
        axis: String,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer FLOP breakdown and parameter count.
    Flops {
        /// paper or toy.
        #[arg(long, default_value = "paper")]
        preset: String,
        /// Model-key overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write synthetic clean/degraded PNG pairs with a manifest.
    MakeData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "noise,rain,snow,fog,lowlight,blur")]
        kinds: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn encoder(table: Option<&Path>, cfg: &ModelConfig) -> Result<Option<Arc<dyn TextEncoder>>> {
    Ok(match table {
        Some(p) => Some(Arc::new(ExternalEncoder::load(p, cfg.dim, cfg.prompt_seed)?)),
        None => None,
    })
}

fn load_model(checkpoint: &Path, table: Option<&Path>) -> Result<Restorer> {
    let ckpt = read_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut model = ckpt.into_model()?;
    if let Some(e) = encoder(table, model.config())? {
        model = model.with_encoder(e)?;
    }
    Ok(model)
}

fn splits(run: &RunConfig, data: Option<&Path>, test: Option<&Path>) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    match (data, test) {
        (Some(d), Some(t)) => Ok((load_dataset(d)?, load_dataset(t)?)),
        (None, None) => Ok(run.data.generate()?),
        _ => Err(restorer::Error::Usage("--data and --test-data must be given together".into()).into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            out,
            data,
            test_data,
            resume,
        } => {
            let run = cfg.load()?;
            let (train, test) = splits(&run, data.as_deref(), test_data.as_deref())?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("config.txt"), run.to_kv())?;
            let mut trainer = if resume {
                let ckpt = read_checkpoint(out.join(CHECKPOINT_FILE))?;
                ckpt.expect_config(&run.model)?;
                Trainer::resume(ckpt, run.train.clone(), run.loss.clone())?
            } else {
                Trainer::new(Restorer::build(run.model.clone(), run.init_seed)?, run.train.clone(), run.loss.clone())?
            };
            if let Some(e) = encoder(run.prompt_table.as_deref(), &run.model)? {
                trainer = trainer.with_encoder(e)?;
            }
            let report = trainer.fit(&train, &test, Some(&out))?;
            if let Some(last) = report.epochs.last() {
                println!(
                    "epoch {} step {}: loss {:.6} psnr {:.4} ssim {:.4}",
                    last.epoch,
                    trainer.step(),
                    last.loss,
                    last.psnr,
                    last.ssim
                );
            }
            println!("checkpoint {}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Restore {
            checkpoint,
            input,
            prompts,
            output,
            prompt_table,
        } => {
            let model = load_model(&checkpoint, prompt_table.as_deref())?;
            let x = read_image(&input)?;
            let y = model.restore_iterative(&x, &prompts)?;
            write_image(&y, &output)?;
            println!("wrote {}", output.display());
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            data,
            policy,
        } => {
            let run = cfg.load()?;
            let model = load_model(&checkpoint, run.prompt_table.as_deref())?;
            let samples = match data {
                Some(d) => load_dataset(d)?,
                None => run.data.generate()?.1,
            };
            let policies = match policy.as_str() {
                "correct" => vec![PromptPolicy::Correct],
                "swapped" => vec![PromptPolicy::Swapped],
                "both" => vec![PromptPolicy::Correct, PromptPolicy::Swapped],
                other => return Err(restorer::Error::Usage(format!("unknown policy {other:?}")).into()),
            };
            let reports = policies
                .into_iter()
                .map(|p| evaluate(&model, &samples, p))
                .collect::<restorer::Result<Vec<_>>>()?;
            print!("{}", EvalTable(reports));
        }
        Command::Ablate { cfg, axis, out } => {
            let run = cfg.load()?;
            let axis: AblationAxis = axis.parse()?;
            let settings = AblationSettings {
                model: run.model,
                train: run.train,
                loss: run.loss,
                data: run.data,
                init_seed: run.init_seed,
            };
            let table = run_ablation(axis, &settings)?;
            println!("{table}");
            if let Some(p) = out {
                std::fs::write(&p, format!("{table}\n")).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Flops { preset, overrides } => {
            let mut cfg = ModelConfig::preset(preset.parse::<Preset>()?);
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| restorer::Error::Usage(format!("expected key=value, found {o:?}")))?;
                if !cfg.set(k.trim(), v.trim())? {
                    return Err(restorer::Error::Config(format!("unknown model key {k:?}")).into());
                }
            }
            let report = count_flops(&cfg)?;
            println!("{report}");
            println!("params {}", count_params(&cfg)?);
        }
        Command::MakeData {
            out,
            n,
            size,
            kinds,
            seed,
        } => {
            let samples = make_dataset(n, size, &parse_kinds(&kinds)?, seed)?;
            let manifest = write_dataset(&out, &samples)?;
            println!("wrote {} pairs, manifest {}", samples.len(), manifest.display());
        }
    }
    Ok(())
}

/// 1 usage or config, 2 data or I/O, 3 numeric.
fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain()
        .find_map(|c| {
            c.downcast_ref::<restorer::Error>()
                .map(restorer::Error::exit_code)
                .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| 2))
        })
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
