use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use capdrop::corpus::group_references;
use capdrop::corpus::{
    load_captions, load_embeddings, save_captions, synth_corpus, tokenize, FeatureStore, SynthSpec,
    Vocabulary,
};
use capdrop::decoder::{model_gradcheck, DEFAULT_MAX_LEN};
use capdrop::harness::{run_sweep, SweepConfig, SweepData};
use capdrop::metrics::{score_captions, GeneratedCaption, CSV_HEADER};
use capdrop::nn::RngStream;
use capdrop::trainer::{
    init_model, load_checkpoint, save_checkpoint, train, TrainConfig, TrainingSet,
};
use capdrop::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "capdrop",
    version,
    about = "GRU captioning with inference-time hidden-state dropout"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from caption JSON-lines.
    BuildVocab {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        size: usize,
    },
    /// Write the toy corpus: captions.jsonl, features.imft and vocab.txt.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        images: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a caption model and save a checkpoint.
    Train {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        d_t: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 300)]
        embed_dim: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Update the embedding table instead of keeping it frozen.
        #[arg(long)]
        train_embeddings: bool,
        /// Clip the global gradient norm to this value.
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy captions with inference dropout, as JSON-lines on stdout.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        d_e: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
    },
    /// Score generated captions against references; one CSV row on stdout.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Training dropout recorded in the row.
        #[arg(long, default_value_t = 0.0)]
        d_t: f64,
        /// Inference dropout recorded in the row.
        #[arg(long, default_value_t = 0.0)]
        d_e: f64,
    },
    /// Run the full d_t × d_e grid from a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 20)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize, Deserialize)]
struct GeneratedLine {
    image_id: String,
    caption: String,
    exceeded: bool,
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    }
}

fn stdout_err(e: io::Error) -> Error {
    Error::Io {
        context: "writing stdout".into(),
        source: e,
    }
}

fn build_vocab(captions: &Path, out: &Path, size: usize) -> Result<()> {
    let records = load_captions(captions)?;
    let vocab = Vocabulary::build(records.iter().map(|r| r.tokens.clone()), size)?;
    vocab.save(out)?;
    eprintln!("{} content words", vocab.content_len());
    Ok(())
}

fn synth(seed: u64, images: usize, out_dir: &Path) -> Result<()> {
    if images == 0 {
        return Err(Error::Parameter("--images must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let (records, features) = synth_corpus(seed, images, SynthSpec::default());
    save_captions(&out_dir.join("captions.jsonl"), &records)?;
    features.save(&out_dir.join("features.imft"))?;
    let vocab = Vocabulary::build(records.iter().map(|r| r.tokens.clone()), 10_000)?;
    vocab.save(&out_dir.join("vocab.txt"))?;
    Ok(())
}

fn generate(
    checkpoint: &Path,
    features: &Path,
    vocab: &Path,
    d_e: f64,
    seed: u64,
    max_len: usize,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let model = load_checkpoint(checkpoint, &vocab)?.model;
    let features = FeatureStore::load(features)?;
    let mut rng = RngStream::new(seed);
    let mut out = BufWriter::new(io::stdout().lock());
    for (id, _) in features.iter() {
        let feature = features.get(id).expect("id from iteration");
        let result = model.greedy_generate(&feature, d_e, &mut rng, max_len)?;
        let line = GeneratedLine {
            image_id: id.to_string(),
            caption: vocab.decode(&result.token_ids)?.join(" "),
            exceeded: result.exceeded_limit,
        };
        let json = serde_json::to_string(&line).expect("plain strings and bools");
        writeln!(out, "{json}").map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)
}

fn evaluate(generated: &Path, captions: &Path, vocab: &Path, d_t: f64, d_e: f64) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let references = group_references(&load_captions(captions)?);
    let text = std::fs::read_to_string(generated).map_err(|e| Error::Io {
        context: format!("reading {}", generated.display()),
        source: e,
    })?;
    let mut gen = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: GeneratedLine = serde_json::from_str(line).map_err(|e| Error::LineFormat {
            line: i + 1,
            msg: e.to_string(),
        })?;
        gen.push(GeneratedCaption {
            image_id: g.image_id,
            tokens: tokenize(&g.caption),
            exceeded: g.exceeded,
        });
    }
    let report = score_captions(&gen, &references, &vocab, d_t, d_e)?;
    println!("{CSV_HEADER}");
    println!("{}", report.csv_row());
    Ok(())
}

fn gradcheck(hidden: usize, vocab: usize, seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    for d_t in [0.0, 0.5] {
        let err = model_gradcheck(vocab, hidden, d_t, seed)?;
        println!("d_t={d_t:.1} max_relative_error={err:.3e}");
        worst = worst.max(err);
    }
    println!("max_relative_error={worst:.3e}");
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Error::Numerical(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab {
            captions,
            out,
            size,
        } => build_vocab(&captions, &out, size),
        Command::Synth {
            seed,
            images,
            out_dir,
        } => synth(seed, images, &out_dir),
        Command::Train {
            captions,
            features,
            vocab,
            embeddings,
            d_t,
            seed,
            hidden,
            embed_dim,
            batch,
            epochs,
            lr,
            train_embeddings,
            clip,
            threads,
            out,
        } => {
            let config = TrainConfig {
                d_t,
                batch_size: batch,
                epochs,
                lr,
                seed,
                hidden_dim: hidden,
                embed_dim,
                freeze_embeddings: !train_embeddings,
                checkpoint: Some(out.clone()),
                clip_norm: clip,
                max_steps: None,
                threads,
            };
            config.validate()?;
            let vocab = Vocabulary::load(&vocab)?;
            let records = load_captions(&captions)?;
            let features = FeatureStore::load(&features)?;
            let data = TrainingSet::build(&records, &features, &vocab)?;
            let table = match embeddings {
                Some(path) => {
                    let table = load_embeddings(&path, &vocab, embed_dim, seed)?;
                    eprintln!("embedding coverage {:.3}", table.coverage);
                    Some(table.matrix)
                }
                None => None,
            };
            let mut model = init_model(vocab.len(), data.feature_dim(), &config, table)?;
            let log = train(&mut model, &data, &config)?;
            for (epoch, loss) in log.epoch_losses.iter().enumerate() {
                eprintln!("epoch {} mean_token_loss {loss:.6}", epoch + 1);
            }
            save_checkpoint(&out, &model, d_t, &vocab)
        }
        Command::Generate {
            checkpoint,
            features,
            vocab,
            d_e,
            seed,
            max_len,
        } => generate(&checkpoint, &features, &vocab, d_e, seed, max_len),
        Command::Evaluate {
            generated,
            captions,
            vocab,
            d_t,
            d_e,
        } => evaluate(&generated, &captions, &vocab, d_t, d_e),
        Command::Sweep { config, out_dir } => {
            let config = SweepConfig::load(&config)?;
            let data = SweepData::load(&config.data, config.train.embed_dim, config.train.seed)?;
            let outcome = run_sweep(&config, &data, &out_dir)?;
            print!("{}", capdrop::harness::report_csv(&outcome.rows));
            Ok(())
        }
        Command::Gradcheck {
            hidden,
            vocab,
            seed,
        } => gradcheck(hidden, vocab, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
