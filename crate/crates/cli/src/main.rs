use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ilmlab_cli::{
    cmd_decode, cmd_estimate, cmd_eval, cmd_gen, cmd_train_aed, cmd_train_lm, cmd_tune, run_pipeline,
    ExperimentConfig, Overrides,
};
use ilmlab_core::fusion::Method;
use ilmlab_core::model::{DecoderKind, LmRole};

#[derive(Parser)]
#[command(name = "ilmlab", version, about = "Internal LM estimation and fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding every artifact of the run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Decoding method: none, sf, dr, zero, ed_c, ed_h, ex_h, mini_lstm.
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[arg(long, global = true)]
    decoder: Option<Decoder>,
    #[arg(long, global = true)]
    decoder_width: Option<usize>,
    #[arg(long, global = true)]
    context_k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decoder {
    Lstm,
    Ff,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    External,
    #[value(name = "decoder_like")]
    DecoderLike,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task, corpora and LM text.
    Gen,
    /// Train the AED model on the source-domain corpus.
    TrainAed,
    /// Train the external LM or the decoder-like LM.
    TrainLm {
        #[arg(long, value_enum, default_value = "external")]
        role: Role,
    },
    /// Compute ILM estimators (all of them unless --method is given).
    Estimate,
    /// Grid-search fusion scales on the dev corpus.
    Tune,
    /// Decode the test corpus.
    Decode {
        /// Use the scales found by `tune` for this method.
        #[arg(long)]
        tuned: bool,
    },
    /// Tune and decode every method and write the results table.
    Eval,
    /// Run every stage from gen to eval.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: c.seed,
        out: c.out,
        workers: c.workers,
        method: c.method,
        lambda1: c.lambda1,
        lambda2: c.lambda2,
        beam: c.beam,
        decoder: c.decoder.map(|d| match d {
            Decoder::Lstm => DecoderKind::Lstm,
            Decoder::Ff => DecoderKind::Ff,
        }),
        decoder_width: c.decoder_width,
        context_k: c.context_k,
    });
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()?;
    match cli.command {
        Command::Gen => cmd_gen(&cfg)?,
        Command::TrainAed => cmd_train_aed(&cfg)?,
        Command::TrainLm { role } => cmd_train_lm(
            &cfg,
            match role {
                Role::External => LmRole::External,
                Role::DecoderLike => LmRole::DecoderLike,
            },
        )?,
        Command::Estimate => cmd_estimate(&cfg, c.method)?,
        Command::Tune => {
            cmd_tune(&cfg)?;
        }
        Command::Decode { tuned } => {
            let s = cmd_decode(&cfg, tuned)?;
            println!("WER {:.2}% ({}/{})", 100.0 * s.wer(), s.errors, s.words);
        }
        Command::Eval => print!("{}", ilmlab_core::fusion::format_table(&cmd_eval(&cfg)?)),
        Command::Run => print!("{}", ilmlab_core::fusion::format_table(&run_pipeline(&cfg)?)),
    }
    Ok(())
}
