//! `seqstory` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use seqstory::datapipe::{
    build_instances, build_vocab, read_features, read_stories, split_dataset, synth_corpus, write_features,
    write_stories, FeatureSet, StorySample, TrainingInstance, Vocabulary, DEFAULT_MIN_FREQ,
    DEFAULT_RATIOS,
};
use seqstory::inference::{generate_for_sample, write_generations, GenerateOptions};
use seqstory::metrics::{read_story_texts, score_corpus};
use seqstory::numerics::{stream, Coverage};
use seqstory::storymodel::{ModelConfig, StoryModel};
use seqstory::training::{evaluate_loss, model_gradcheck, Checkpoint, TrainConfig, Trainer, DEFAULT_GRADCHECK_EPS};

/// Log filter variable, e.g. `SEQSTORY_LOG=debug`.
const LOG_ENV: &str = "SEQSTORY_LOG";

#[derive(Parser, Debug)]
#[command(name = "seqstory", version, about = "Visual story generation with a dual-encoder GRU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from a stories file.
    BuildVocab {
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_FREQ)]
        min_freq: usize,
    },
    /// Write a deterministic synthetic corpus and its features.
    SynthData {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long = "stories", default_value_t = 4)]
        n_stories: usize,
        /// Feature dimension; defaults to 4096, or 16 with --toy.
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        out_stories: PathBuf,
        #[arg(long)]
        out_features: PathBuf,
    },
    /// Train a model, writing checkpoints and a loss log.
    Train(Box<TrainArgs>),
    /// Generate stories with a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; output order follows input order.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        suppress_unk: bool,
    },
    /// Score generated stories against references (0-100 scale).
    Evaluate {
        generated: PathBuf,
        references: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 6)]
        dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_GRADCHECK_EPS)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Probe at most this many coordinates per parameter instead of all.
        #[arg(long)]
        sample: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    stories: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Pretrained word vectors, `token v1 ... vd` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    freeze_embeddings: bool,
    #[arg(long, conflicts_with_all = ["embeddings", "toy"])]
    resume: Option<PathBuf>,
    /// Small dims for quick runs.
    #[arg(long)]
    toy: bool,
    /// Hold out validation and test stories and report validation loss.
    #[arg(long)]
    split: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout_in: Option<f64>,
    #[arg(long)]
    dropout_pre_softmax: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    img_hidden: Option<usize>,
    #[arg(long)]
    sent_hidden: Option<usize>,
    #[arg(long)]
    dec_hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint every N epochs; 0 writes only the final checkpoint.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(seqstory::Error),
    Check(String),
}

impl From<seqstory::Error> for Failure {
    fn from(e: seqstory::Error) -> Self {
        match e {
            seqstory::Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Run(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn print_config(command: &str, value: serde_json::Value) {
    eprintln!("resolved config: {}", json!({ "command": command, "config": value }));
}

fn build_vocab_cmd(stories: &Path, out: &Path, min_freq: usize) -> CmdResult {
    print_config(
        "build-vocab",
        json!({ "stories": stories, "out": out, "min_freq": min_freq }),
    );
    let samples = read_stories(stories)?;
    let vocab = build_vocab(samples.iter().flat_map(|s| s.sentences.iter().map(String::as_str)), min_freq)?;
    vocab.save(out)?;
    log::info!("wrote {} tokens to {}", vocab.len(), out.display());
    Ok(())
}

fn synth_cmd(seed: u64, n: usize, feature_dim: Option<usize>, toy: bool, stories: &Path, features: &Path) -> CmdResult {
    let dim = feature_dim.unwrap_or(if toy { 16 } else { 4096 });
    print_config(
        "synth-data",
        json!({ "seed": seed, "stories": n, "feature_dim": dim, "out_stories": stories, "out_features": features }),
    );
    if n == 0 || dim == 0 {
        return Err(Failure::Usage("--stories and --feature-dim must be positive".into()));
    }
    let (samples, feats) = synth_corpus(seed, n, dim)?;
    write_stories(stories, &samples)?;
    write_features(features, &feats)?;
    log::info!("wrote {n} stories and {} feature vectors", feats.len());
    Ok(())
}

fn instances_for(
    samples: &[StorySample],
    vocab: &Vocabulary,
    feats: &FeatureSet,
    config: &ModelConfig,
) -> Result<Vec<TrainingInstance>, Failure> {
    let mut out = Vec::with_capacity(samples.len() * 5);
    for s in samples {
        out.extend(build_instances(s, vocab, feats, config.window, config.max_sentence_len)?);
    }
    Ok(out)
}

fn resolve_model_config(a: &TrainArgs, vocab_size: usize) -> ModelConfig {
    let mut c = if a.toy { ModelConfig::toy(vocab_size) } else { ModelConfig::new(vocab_size) };
    let set = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut c.feature_dim, a.feature_dim);
    set(&mut c.embed_dim, a.embed_dim);
    set(&mut c.img_hidden, a.img_hidden);
    set(&mut c.sent_hidden, a.sent_hidden);
    set(&mut c.dec_hidden, a.dec_hidden);
    set(&mut c.window, a.window);
    set(&mut c.max_sentence_len, a.max_len);
    if let Some(p) = a.dropout_in {
        c.dropout_in = p;
    }
    if let Some(p) = a.dropout_pre_softmax {
        c.dropout_pre_softmax = p;
    }
    c
}

fn resolve_train_config(a: &TrainArgs, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        epochs: a.epochs.unwrap_or(base.epochs),
        checkpoint_every: a.checkpoint_every.unwrap_or(base.checkpoint_every),
        seed: a.seed,
        ..base
    }
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let vocab = Vocabulary::load(&a.vocab)?;
    let checkpoint = a.resume.as_deref().map(|p| Checkpoint::load_for_vocab(p, &vocab)).transpose()?;
    let model_flags = [a.feature_dim, a.embed_dim, a.img_hidden, a.sent_hidden, a.dec_hidden, a.window, a.max_len];
    if checkpoint.is_some()
        && (model_flags.iter().any(Option::is_some) || a.dropout_in.is_some() || a.dropout_pre_softmax.is_some())
    {
        return Err(Failure::Usage("model shape and dropout flags cannot be combined with --resume".into()));
    }
    let model_config = match &checkpoint {
        Some(ck) => ck.model.config().clone(),
        None => resolve_model_config(&a, vocab.len()),
    };
    let base = checkpoint.as_ref().map(|c| c.train_config.clone()).unwrap_or_default();
    let train_config = resolve_train_config(&a, base);
    print_config(
        "train",
        json!({
            "stories": a.stories, "features": a.features, "vocab": a.vocab, "out_dir": a.out_dir,
            "embeddings": a.embeddings, "freeze_embeddings": a.freeze_embeddings, "resume": a.resume,
            "split": a.split, "model": model_config, "train": train_config,
        }),
    );
    model_config.validate()?;
    train_config.validate()?;

    let samples = read_stories(&a.stories)?;
    let feats = read_features(&a.features)?;
    feats.check_dim(model_config.feature_dim)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| seqstory::Error::io(&a.out_dir, e))?;

    let (train_s, val_s) = if a.split {
        let (tr, va, te) = split_dataset(&samples, DEFAULT_RATIOS, a.seed)?;
        for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
            write_stories(&a.out_dir.join(format!("{name}.jsonl")), part)?;
        }
        log::info!("split {} stories into {}/{}/{}", samples.len(), tr.len(), va.len(), te.len());
        (tr, va)
    } else {
        (samples, Vec::new())
    };
    let train_inst = instances_for(&train_s, &vocab, &feats, &model_config)?;
    let val_inst = instances_for(&val_s, &vocab, &feats, &model_config)?;

    let mut trainer = match checkpoint {
        Some(ck) => Trainer::resume(ck, train_config.clone())?,
        None => {
            let mut model = StoryModel::new(model_config.clone(), &mut stream(a.seed, 4))?;
            if let Some(path) = &a.embeddings {
                let (mut table, hits) =
                    seqstory::datapipe::load_embeddings(path, &vocab, model_config.embed_dim, &mut stream(a.seed, 5))?;
                log::info!("pretrained vectors cover {hits} of {} vocabulary rows", vocab.len());
                table.trainable = !a.freeze_embeddings;
                model.set_embedding(table)?;
            }
            Trainer::new(model, train_config.clone())?
        }
    };

    let log_path = a.out_dir.join("loss_log.jsonl");
    let mut log_lines = String::new();
    let every = train_config.checkpoint_every;
    let batch_size = train_config.batch_size;
    trainer.run(&train_inst, |t, loss| {
        let val = if val_inst.is_empty() {
            None
        } else {
            Some(evaluate_loss(&t.model, &val_inst, batch_size)?)
        };
        log::info!("epoch {} train loss {loss:.6}{}", t.epoch, val.map(|v| format!(" val loss {v:.6}")).unwrap_or_default());
        log_lines.push_str(&json!({ "epoch": t.epoch, "train_loss": loss, "val_loss": val }).to_string());
        log_lines.push('\n');
        std::fs::write(&log_path, &log_lines).map_err(|e| seqstory::Error::io(&log_path, e))?;
        if every > 0 && t.epoch % every == 0 {
            t.checkpoint(&vocab).save(&a.out_dir.join(format!("checkpoint_epoch{:04}.ckpt", t.epoch)))?;
        }
        Ok(())
    })?;
    let final_path = a.out_dir.join("final.ckpt");
    trainer.checkpoint(&vocab).save(&final_path)?;
    log::info!("wrote {}", final_path.display());
    Ok(())
}

fn generate_cmd(
    checkpoint: &Path,
    stories: &Path,
    features: &Path,
    out: &Path,
    jobs: usize,
    suppress_unk: bool,
) -> CmdResult {
    print_config(
        "generate",
        json!({ "checkpoint": checkpoint, "stories": stories, "features": features, "out": out, "jobs": jobs, "suppress_unk": suppress_unk }),
    );
    if jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let samples = read_stories(stories)?;
    let feats = read_features(features)?;
    feats.check_dim(ck.model.config().feature_dim)?;
    let opts = GenerateOptions { suppress_unk };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Check(format!("thread pool: {e}")))?;
    let generated = pool.install(|| {
        samples
            .par_iter()
            .map(|s| generate_for_sample(&ck.model, &ck.vocab, s, &feats, opts))
            .collect::<seqstory::Result<Vec<_>>>()
    })?;
    write_generations(out, &generated)?;
    log::info!("wrote {} stories to {}", generated.len(), out.display());
    Ok(())
}

fn evaluate_cmd(generated: &Path, references: &Path, out: Option<&Path>) -> CmdResult {
    print_config("evaluate", json!({ "generated": generated, "references": references, "out": out }));
    let g = read_story_texts(generated)?;
    let r = read_story_texts(references)?;
    let report = score_corpus(&g, &r).map_err(|e| match e {
        // An empty generated file is a data problem, not a flag problem.
        seqstory::Error::Config(msg) => Failure::Run(seqstory::Error::DataContract(msg)),
        other => Failure::Run(other),
    })?;
    let text = serde_json::to_string(&report.to_json()).map_err(seqstory::Error::from)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).map_err(|e| seqstory::Error::io(path, e))?;
    }
    Ok(())
}

fn gradcheck_cmd(dims: usize, seed: u64, epsilon: f64, tolerance: f64, sample: Option<usize>) -> CmdResult {
    print_config(
        "gradcheck",
        json!({ "dims": dims, "seed": seed, "epsilon": epsilon, "tolerance": tolerance, "sample": sample }),
    );
    let coverage = match sample {
        Some(per_param) => Coverage::Sample { per_param, seed },
        None => Coverage::All,
    };
    let start = std::time::Instant::now();
    let report = model_gradcheck(dims, seed, epsilon, coverage)?;
    println!(
        "{}",
        json!({
            "max_rel_error": report.max_rel_error,
            "worst_param": report.worst_param,
            "worst_index": report.worst_index,
            "coords_checked": report.coords_checked,
            "seconds": start.elapsed().as_secs_f64(),
        })
    );
    if report.max_rel_error > tolerance {
        return Err(Failure::Check(format!(
            "max relative error {:.3e} exceeds {tolerance:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::BuildVocab { stories, out, min_freq } => build_vocab_cmd(&stories, &out, min_freq),
        Command::SynthData {
            seed,
            n_stories,
            feature_dim,
            toy,
            out_stories,
            out_features,
        } => synth_cmd(seed, n_stories, feature_dim, toy, &out_stories, &out_features),
        Command::Train(args) => train_cmd(*args),
        Command::Generate {
            checkpoint,
            stories,
            features,
            out,
            jobs,
            suppress_unk,
        } => generate_cmd(&checkpoint, &stories, &features, &out, jobs, suppress_unk),
        Command::Evaluate { generated, references, out } => evaluate_cmd(&generated, &references, out.as_deref()),
        Command::Gradcheck {
            dims,
            seed,
            epsilon,
            tolerance,
            sample,
        } => gradcheck_cmd(dims, seed, epsilon, tolerance, sample),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
