//! Command-line front end. [`run`] parses arguments, executes one command
//! and maps failures to exit codes: 0 on success, 2 for input and
//! configuration errors, 1 for internal failures.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bpe::{train_bpe, Vocab};
use crate::data::{load_dataset, Format, MaskingStrategy};
use crate::error::{Error, Result};
use crate::eval::{curve_to_csv, curve_to_svg, parse_ratios, predictions_to_tsv, sample_efficiency_curve};
use crate::model::{init_model, Checkpoint, Model};
use crate::training::{encode_corpus, finetune, init_rng, pretrain, Classifier, PretrainOptions, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "trelab", version, about = "Transformer relation extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE vocabulary from a text corpus, one sentence per line.
    TrainBpe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the language model.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a periodic checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write `<out>.step<N>` every this many updates.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Fine-tune a relation classifier.
    Finetune {
        #[command(flatten)]
        setup: FinetuneArgs,
        /// Data scored after every epoch.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fine-tuned model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        format: Format,
        /// Report path; predictions go next to it with a `.tsv` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a dataset, one predicted label per line.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation F1 as a function of the fraction of training data used.
    Curve {
        #[command(flatten)]
        setup: FinetuneArgs,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        ratios: String,
        /// Number of seeds per ratio, counting up from the configured seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Directory receiving `curve.csv` and `curve.svg`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint header as JSON.
    InspectCheckpoint {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: Format,
    /// Overrides the masking strategy of the config.
    #[arg(long)]
    masking: Option<MaskingStrategy>,
    /// A pre-training checkpoint, or `random`.
    #[arg(long, default_value = "random")]
    init: String,
    /// Required with `--init random`; otherwise must match the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Re-initialize the transformer layers of the checkpoint.
    #[arg(long)]
    no_pretrained_lm: bool,
    /// Re-initialize the token embeddings of the checkpoint.
    #[arg(long)]
    no_pretrained_bpe: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::TrainBpe {
            corpus,
            vocab_size,
            out,
        } => {
            let lines = read_lines(&corpus)?;
            let vocab = train_bpe(&lines, vocab_size)?;
            vocab.save(&out)?;
            say(stdout, format_args!("vocabulary size: {}", vocab.len()))
        }
        Command::Pretrain {
            corpus,
            vocab,
            config,
            out,
            resume,
            checkpoint_every,
        } => {
            let cfg = load_config(config.as_deref())?;
            let vocab = Vocab::load(&vocab)?;
            let resume = resume.map(Checkpoint::load).transpose()?;
            let lines = read_lines(&corpus)?;
            let model_cfg = cfg.model.to_config(vocab.len(), 1, None);
            model_cfg.validate()?;
            let seqs = encode_corpus(&lines, &vocab, model_cfg.max_positions);
            let model = init_model(&model_cfg, &mut init_rng(cfg.seed), cfg.model.init_scale)?;
            let metrics_path = sibling(&out, "metrics.jsonl");
            let mut metrics = create(&metrics_path)?;
            let outcome = pretrain(
                model,
                &vocab,
                &seqs,
                &cfg,
                PretrainOptions {
                    checkpoint_every,
                    checkpoint_prefix: Some(out.clone()),
                    resume: resume.as_ref(),
                    metrics: Some(&mut metrics),
                },
            )?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            outcome.checkpoint.save(&out)?;
            let last = outcome.history.last().map_or(f64::NAN, |m| m.loss);
            say(
                stdout,
                format_args!("steps: {}, final loss: {last:.4}", outcome.history.len()),
            )
        }
        Command::Finetune { setup, valid, out } => {
            let (pretrained, vocab, cfg) = finetune_setup(&setup)?;
            let train = load_dataset(&setup.data, setup.format)?;
            let valid = valid.map(|p| load_dataset(p, setup.format)).transpose()?;
            let metrics_path = sibling(&out, "metrics.jsonl");
            let mut metrics = create(&metrics_path)?;
            let outcome = finetune(pretrained, &vocab, &train, valid.as_ref(), &cfg, Some(&mut metrics))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            let clf = &outcome.classifier;
            let (final_report, scored_on) = match outcome.history.last().and_then(|e| e.valid.clone()) {
                Some(r) => (r, "valid"),
                None => (clf.evaluate(&train)?.0, "train"),
            };
            let report = json!({
                "config": cfg,
                "labels": clf.labels,
                "truncated": outcome.truncated,
                "epochs": outcome.history,
                "scored_on": scored_on,
                "final": final_report,
            });
            write_file(&sibling(&out, "report.json"), &pretty(&report))?;
            clf.to_checkpoint().save(&out)?;
            say(
                stdout,
                format_args!(
                    "{scored_on} P {:.4} R {:.4} F1 {:.4}",
                    final_report.precision, final_report.recall, final_report.f1
                ),
            )
        }
        Command::Evaluate {
            model,
            data,
            format,
            out,
        } => {
            let clf = Classifier::from_checkpoint(&Checkpoint::load(&model)?)?;
            let ds = load_dataset(&data, format)?;
            let (report, pred) = clf.evaluate(&ds)?;
            let gold: Vec<&str> = ds.instances.iter().map(|i| i.label.as_str()).collect();
            write_file(&out, &pretty(&report))?;
            let pred: Vec<&str> = pred.iter().map(String::as_str).collect();
            write_file(&out.with_extension("tsv"), &predictions_to_tsv(&gold, &pred))?;
            say(
                stdout,
                format_args!("P {:.4} R {:.4} F1 {:.4}", report.precision, report.recall, report.f1),
            )
        }
        Command::Predict {
            model,
            data,
            format,
            out,
        } => {
            let clf = Classifier::from_checkpoint(&Checkpoint::load(&model)?)?;
            let ds = load_dataset(&data, format)?;
            if ds.format != clf.format {
                return Err(Error::Config(format!(
                    "model was trained on {} data, not {format}",
                    clf.format
                )));
            }
            let pred = clf.predict_dataset(&ds)?;
            let mut text = pred.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            write_file(&out, &text)?;
            say(stdout, format_args!("labeled {} instances", pred.len()))
        }
        Command::Curve {
            setup,
            valid,
            ratios,
            seeds,
            out,
        } => {
            let ratios = parse_ratios(&ratios)?;
            if seeds == 0 {
                return Err(Error::Input("--seeds must be at least 1".into()));
            }
            let (pretrained, vocab, cfg) = finetune_setup(&setup)?;
            let train = load_dataset(&setup.data, setup.format)?;
            let valid = load_dataset(&valid, setup.format)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let points =
                sample_efficiency_curve(pretrained.as_ref(), &vocab, &train, &valid, &ratios, &cfg, &seed_list)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_file(&out.join("curve.csv"), &curve_to_csv(&points))?;
            write_file(
                &out.join("curve.svg"),
                &curve_to_svg(&points, &format!("{} sample efficiency", setup.format)),
            )?;
            say(
                stdout,
                format_args!("{} points written to {}", points.len(), out.display()),
            )
        }
        Command::InspectCheckpoint { model } => {
            let ck = Checkpoint::load(&model)?;
            let mut header = serde_json::to_value(&ck.header).expect("header serializes");
            if let Some(v) = header.get_mut("vocab") {
                if let Some(text) = v.as_str() {
                    *v = json!(format!("<{} lines>", text.lines().count()));
                }
            }
            say(stdout, format_args!("{}", pretty(&header).trim_end()))
        }
    }
}

/// Loads the configuration and resolves the starting model and vocabulary.
fn finetune_setup(args: &FinetuneArgs) -> Result<(Option<Model>, Vocab, TrainConfig)> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = args.masking {
        cfg.masking = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.use_pretrained_lm &= !args.no_pretrained_lm;
    cfg.use_pretrained_bpe_embeddings &= !args.no_pretrained_bpe;
    cfg.validate()?;
    let vocab = args.vocab.as_ref().map(Vocab::load).transpose()?;
    if args.init == "random" {
        let vocab = vocab.ok_or_else(|| Error::Config("--init random needs --vocab".into()))?;
        return Ok((None, vocab, cfg));
    }
    let ck = Checkpoint::load(&args.init)?;
    let vocab = match vocab {
        Some(v) => {
            ck.check_vocab(&v)?;
            v
        }
        None => ck
            .embedded_vocab()?
            .ok_or_else(|| Error::Config(format!("{} embeds no vocabulary; pass --vocab", args.init)))?,
    };
    Ok((Some(ck.to_model()?), vocab, cfg))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect())
}

/// `model.ckpt` becomes `model.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn say(out: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{args}").map_err(|e| Error::io("<stdout>", e))
}
