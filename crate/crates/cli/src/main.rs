mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use repkd::data::{MockTeacherSpec, SynthSpec};

use commands::{Failure, Phases};
use config::{split_overrides, RunConfig};

/// Transducer ASR training with multi-representation distillation.
///
/// Any config key can be overridden as `--section.key value`.
#[derive(Parser, Debug)]
#[command(name = "repkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum IterArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic toy-speech corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        vocab: usize,
        #[arg(long, default_value_t = 500)]
        utterances: usize,
        #[arg(long, default_value_t = 100)]
        dev_utterances: usize,
        #[arg(long, default_value_t = 0.6)]
        noise: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 3)]
        min_tokens: usize,
        #[arg(long, default_value_t = 8)]
        max_tokens: usize,
        #[arg(long, default_value_t = 2)]
        min_frames: usize,
        #[arg(long, default_value_t = 4)]
        max_frames: usize,
        #[arg(long, default_value_t = 5)]
        conversation_len: usize,
        #[arg(long)]
        force: bool,
    },
    /// Write mock teacher representations for a manifest.
    Mockteacher {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "mock")]
        id: String,
        #[arg(long, default_value_t = 12)]
        layers: u32,
        #[arg(long, default_value_t = 64)]
        dim: u32,
        #[arg(long, default_value_t = 1)]
        lookahead: u32,
        #[arg(long, default_value_t = 4)]
        variants: u32,
        #[arg(long, default_value_t = 0.1)]
        mask_rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// 0 reads vocab.txt next to the manifest.
        #[arg(long, default_value_t = 0)]
        vocab_size: usize,
        #[arg(long)]
        force: bool,
    },
    /// Run iteration 1, iteration 2, or both.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        iter: IterArg,
        #[arg(long)]
        force: bool,
    },
    /// Greedy-decode a manifest and report WER.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Describe a TREP, ALNQ, TKDM or FRMS file.
    Inspect {
        path: PathBuf,
        #[arg(long)]
        utt: Option<String>,
        #[arg(long)]
        layer: Option<u32>,
    },
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), Failure> {
    let config_only = |what: &str| {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(Failure::usage(format!("{what} does not take config overrides")))
        }
    };
    match cli.command {
        Command::Synth {
            out,
            seed,
            vocab,
            utterances,
            dev_utterances,
            noise,
            feature_dim,
            min_tokens,
            max_tokens,
            min_frames,
            max_frames,
            conversation_len,
            force,
        } => {
            config_only("synth")?;
            let spec = SynthSpec {
                vocab,
                train_utterances: utterances,
                dev_utterances,
                min_tokens,
                max_tokens,
                min_frames,
                max_frames,
                feature_dim,
                noise,
                conversation_len,
                seed,
                ..SynthSpec::default()
            };
            commands::synth(&out, &spec, force)
        }
        Command::Mockteacher {
            manifest,
            out,
            id,
            layers,
            dim,
            lookahead,
            variants,
            mask_rate,
            seed,
            vocab_size,
            force,
        } => {
            config_only("mockteacher")?;
            let spec = MockTeacherSpec {
                teacher: id,
                layers,
                dim,
                lookahead,
                variants,
                mask_rate,
                seed,
            };
            commands::mockteacher(&manifest, &out, &spec, vocab_size, force)
        }
        Command::Train { config, iter, force } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let phases = match iter {
                IterArg::One => Phases::One,
                IterArg::Two => Phases::Two,
                IterArg::Both => Phases::Both,
            };
            commands::train(&cfg, phases, force)
        }
        Command::Eval {
            config,
            checkpoint,
            manifest,
            report,
        } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            commands::eval(&cfg, checkpoint.as_deref(), manifest.as_deref(), report.as_deref())
        }
        Command::Inspect { path, utt, layer } => {
            config_only("inspect")?;
            commands::inspect(&path, utt.as_deref(), layer)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
