//! Command-line entry point: forge, train, eval, infer, ablate, stats,
//! attnmap and vocab. Every subcommand is deterministic given (config,
//! seed); environment variables are never consulted.
//!
//! Exit codes: 0 on success, 1 on any runtime failure (with a one-line
//! diagnostic on stderr), 2 on usage errors (from argument parsing).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dqa_core::config::FileConfig;
use dqa_core::forge::{
    augment_question, dataset_stats, forge_dataset, question_pool, read_manifest, Preference,
};
use dqa_core::image::{read_ppm, write_pgm_heatmap};
use dqa_core::model::{Model, ModelConfig, PosTag, PromptKind};
use dqa_core::tokenizer;
use dqa_core::trainer::{
    ablation_csv, ablation_runner, evaluate_gold, evaluate_model, train, AblationAxis,
};
use dqa_core::vision::GRID;

#[derive(Parser)]
#[command(name = "dqa", version, about = "Desk-scale descriptive image-quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; all randomness derives from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Forge the synthetic dataset (images + JSONL manifests)
    Forge {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a forged dataset and write checkpoint + metrics
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory produced by `forge`
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint (or the manifest's own responses with --gold)
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to evaluate; omit together with --gold
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Score the gold responses instead of generating
        #[arg(long, default_value_t = false)]
        gold: bool,
        /// Which manifest to read: train or val
        #[arg(long, default_value = "val")]
        split: String,
        /// Generation budget per sample
        #[arg(long, default_value_t = 160)]
        max_new: usize,
    },
    /// Answer one prompt over the given images
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// description | comparison | reasoning | content
        #[arg(long)]
        task: String,
        /// Reference image (PPM)
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Distorted image / Image A (PPM)
        #[arg(long)]
        img_a: Option<PathBuf>,
        /// Image B (PPM), comparison/reasoning tasks only
        #[arg(long)]
        img_b: Option<PathBuf>,
        /// Question text; defaults to the first question of the task pool
        #[arg(long)]
        question: Option<String>,
        /// none | noise_intolerant
        #[arg(long, default_value = "none")]
        preference: String,
        #[arg(long, default_value_t = 160)]
        max_new: usize,
    },
    /// Train and evaluate across one ablation grid
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// data_sources | tag_scheme | lora_rank | data_size | feature_granularity
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 160)]
        max_new: usize,
    },
    /// Dataset statistics as CSV
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Attention heatmap (5x5 CSV + PGM) for one prompt
    Attnmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        img_a: PathBuf,
        #[arg(long)]
        img_b: PathBuf,
        #[arg(long)]
        question: Option<String>,
        /// Decoder layer to inspect
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Which image's patches to map: ref | a | b
        #[arg(long, default_value = "a")]
        image: String,
        /// Query span `start:end` over sequence positions; defaults to the
        /// question region
        #[arg(long)]
        span: Option<String>,
    },
    /// Print the tokenizer id -> surface table as CSV
    Vocab {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn file_config(common: &Common) -> Result<FileConfig> {
    match &common.config {
        Some(path) => Ok(FileConfig::load(path)?),
        None => Ok(FileConfig::parse("")?),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| anyhow!("--out DIR is required for this subcommand"))?;
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn parse_task(task: &str) -> Result<PromptKind> {
    match task {
        "description" => Ok(PromptKind::Description),
        "comparison" => Ok(PromptKind::Comparison),
        "reasoning" => Ok(PromptKind::Reasoning),
        "content" => Ok(PromptKind::Content),
        _ => bail!("unknown task {task:?}; expected description|comparison|reasoning|content"),
    }
}

fn load_model(cfg: ModelConfig, ckpt: &Path) -> Result<Model> {
    Model::load(cfg, ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))
}

fn manifest_path(data: &Path, split: &str) -> Result<PathBuf> {
    match split {
        "train" => Ok(data.join("train.jsonl")),
        "val" => Ok(data.join("val.jsonl")),
        _ => bail!("unknown split {split:?}; expected train or val"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forge { common } => {
            let out = out_dir(&common)?;
            let mut cfg = file_config(&common)?;
            let forge_cfg = cfg.forge_config()?;
            cfg.ensure_consumed()?;
            let summary = forge_dataset(&out, &forge_cfg, common.seed)?;
            println!(
                "forged {} train records, {} val records, {} images into {}",
                summary.train_records,
                summary.val_records,
                summary.images_written,
                out.display()
            );
            Ok(())
        }
        Command::Train { common, data } => {
            let out = out_dir(&common)?;
            let mut cfg = file_config(&common)?;
            let model_cfg = cfg.model_config()?;
            let train_cfg = cfg.train_config(common.seed)?;
            cfg.ensure_consumed()?;
            let records = read_manifest(&manifest_path(&data, "train")?)?;
            let model = Model::new(model_cfg, common.seed)?;
            let outcome = train(&model, &records, &data, &train_cfg)?;
            model.save(&out.join("model.ckpt"))?;
            std::fs::write(out.join("metrics.csv"), outcome.metrics_csv(train_cfg.lr))
                .context("writing metrics.csv")?;
            println!(
                "trained {} steps, final loss {:.6}; trainable {} / {} parameters ({:.4}%)",
                outcome.steps,
                outcome.final_loss,
                outcome.trainable_elems,
                outcome.total_elems,
                100.0 * outcome.trainable_fraction()
            );
            Ok(())
        }
        Command::Eval {
            common,
            data,
            ckpt,
            gold,
            split,
            max_new,
        } => {
            let mut cfg = file_config(&common)?;
            let model_cfg = cfg.model_config()?;
            cfg.ensure_consumed()?;
            let records = read_manifest(&manifest_path(&data, &split)?)?;
            let outcome = if gold {
                evaluate_gold(&records)?
            } else {
                let ckpt =
                    ckpt.ok_or_else(|| anyhow!("either --ckpt PATH or --gold is required"))?;
                let model = load_model(model_cfg, &ckpt)?;
                evaluate_model(&model, &records, &data, max_new)?
            };
            let report = outcome
                .report
                .as_ref()
                .ok_or_else(|| anyhow!("no comparison/reasoning records in the {split} split"))?;
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("n_total,{}\n", report.n_total));
            csv.push_str(&format!("accuracy,{}\n", report.accuracy));
            csv.push_str(&format!("unparseable_rate,{}\n", report.unparseable_rate));
            for (label, acc) in &report.variants {
                csv.push_str(&format!(
                    "accuracy_excl_{},{}\n",
                    label.replace(',', "+"),
                    acc
                ));
            }
            csv.push_str(&format!("fractional_credit,{}\n", report.fractional_credit));
            if let Some(rr) = outcome.reasonable_rate {
                csv.push_str(&format!("reasonable_rate,{rr}\n"));
            }
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("eval_report.csv"), &csv)?;
                let summary = serde_json::json!({
                    "report": report,
                    "reasonable_rate": outcome.reasonable_rate,
                });
                std::fs::write(
                    out.join("eval_summary.json"),
                    serde_json::to_string_pretty(&summary)?,
                )?;
            }
            println!(
                "accuracy {:.4} over {} samples (unparseable {:.4}){}",
                report.accuracy,
                report.n_total,
                report.unparseable_rate,
                outcome
                    .reasonable_rate
                    .map(|r| format!(", reasonable-rate {r:.4}"))
                    .unwrap_or_default()
            );
            Ok(())
        }
        Command::Infer {
            common,
            ckpt,
            task,
            reference,
            img_a,
            img_b,
            question,
            preference,
            max_new,
        } => {
            let mut cfg = file_config(&common)?;
            let model_cfg = cfg.model_config()?;
            cfg.ensure_consumed()?;
            let model = load_model(model_cfg, &ckpt)?;
            let kind = parse_task(&task)?;
            let preference = Preference::parse(&preference)
                .ok_or_else(|| anyhow!("unknown preference {preference:?}"))?;
            let question = question.unwrap_or_else(|| question_pool(kind)[0].to_string());
            let question = match kind {
                PromptKind::Comparison | PromptKind::Reasoning => {
                    augment_question(&question, preference)
                }
                _ => question,
            };
            let mut paths = vec![reference];
            match kind {
                PromptKind::Description => {
                    paths.push(img_a.ok_or_else(|| anyhow!("--img-a is required"))?);
                }
                PromptKind::Comparison | PromptKind::Reasoning => {
                    paths.push(img_a.ok_or_else(|| anyhow!("--img-a is required"))?);
                    paths.push(img_b.ok_or_else(|| anyhow!("--img-b is required"))?);
                }
                PromptKind::Content => {}
            }
            let visuals = paths
                .iter()
                .map(|p| {
                    let img = read_ppm(p)?;
                    Ok(model.encode_image(&img)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let prompt = model.prompt(kind, &question)?;
            let response = model.generate(&prompt, &visuals, max_new)?;
            println!("{response}");
            Ok(())
        }
        Command::Ablate {
            common,
            data,
            axis,
            max_new,
        } => {
            let out = out_dir(&common)?;
            let mut cfg = file_config(&common)?;
            let model_cfg = cfg.model_config()?;
            let train_cfg = cfg.train_config(common.seed)?;
            cfg.ensure_consumed()?;
            let axis = AblationAxis::parse(&axis)
                .ok_or_else(|| anyhow!("unknown ablation axis {axis:?}"))?;
            let train_records = read_manifest(&manifest_path(&data, "train")?)?;
            let val_records = read_manifest(&manifest_path(&data, "val")?)?;
            let rows = ablation_runner(
                axis,
                model_cfg,
                &train_records,
                &val_records,
                &data,
                &train_cfg,
                common.seed,
                max_new,
            )?;
            let csv = ablation_csv(&rows);
            std::fs::write(out.join("ablation.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Stats { common, manifest } => {
            let records = read_manifest(&manifest)?;
            let csv = dataset_stats(&records).to_csv();
            match &common.out {
                Some(out) => {
                    std::fs::create_dir_all(out)?;
                    std::fs::write(out.join("stats.csv"), &csv)?;
                    println!("wrote {}", out.join("stats.csv").display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Attnmap {
            common,
            ckpt,
            reference,
            img_a,
            img_b,
            question,
            layer,
            image,
            span,
        } => {
            let out = out_dir(&common)?;
            let mut cfg = file_config(&common)?;
            let model_cfg = cfg.model_config()?;
            cfg.ensure_consumed()?;
            let model = load_model(model_cfg, &ckpt)?;
            let question =
                question.unwrap_or_else(|| question_pool(PromptKind::Reasoning)[0].to_string());
            let prompt = model.prompt(PromptKind::Reasoning, &question)?;
            let visuals = [&reference, &img_a, &img_b]
                .iter()
                .map(|p| {
                    let img = read_ppm(p)?;
                    Ok(model.encode_image(&img)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let image_index = match image.as_str() {
                "ref" => 0,
                "a" => 1,
                "b" => 2,
                _ => bail!("unknown image {image:?}; expected ref|a|b"),
            };
            let span = match span {
                Some(s) => {
                    let (start, end) = s
                        .split_once(':')
                        .ok_or_else(|| anyhow!("--span expects start:end"))?;
                    let start: usize = start.parse().context("span start")?;
                    let end: usize = end.parse().context("span end")?;
                    start..end
                }
                None => {
                    // default to the question region of the prompt
                    let positions: Vec<usize> = prompt
                        .pos_tags
                        .iter()
                        .enumerate()
                        .filter_map(|(i, t)| (*t == PosTag::Question).then_some(i))
                        .collect();
                    let start = *positions.first().ok_or_else(|| anyhow!("empty question"))?;
                    start..positions.last().unwrap() + 1
                }
            };
            let grid = model.attention_map(&prompt, &visuals, span, layer, image_index)?;
            let mut csv = String::new();
            for row in grid.chunks(GRID) {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            std::fs::write(out.join("attn.csv"), &csv)?;
            write_pgm_heatmap(&out.join("attn.pgm"), &grid, GRID, GRID)?;
            println!(
                "wrote {} and {}",
                out.join("attn.csv").display(),
                out.join("attn.pgm").display()
            );
            Ok(())
        }
        Command::Vocab { common } => {
            let mut csv = String::from("id,surface\n");
            for (id, surface) in tokenizer::vocab_table() {
                csv.push_str(&format!("{id},{surface}\n"));
            }
            match &common.out {
                Some(out) => {
                    std::fs::create_dir_all(out)?;
                    std::fs::write(out.join("vocab.csv"), &csv)?;
                    println!("wrote {}", out.join("vocab.csv").display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}
