use std::path::PathBuf;
use std::process::ExitCode;

use breathnet::breathmask::MaskMode;
use breathnet::harness::{self, Checkpoint, Precision, RunConfig, Variant};
use breathnet::metrics::{pooled_breakdown, read_scores, report, DcfParams};
use breathnet::synth::{generate_corpus, CorpusSpec, SplitCounts};
use breathnet::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "breathnet", version, about = "Breath-gated spoofed speech detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Config file plus free-form `--key value` overrides of any config key.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train/eval corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Corpus description (TOML); flags below are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        train_bonafide: usize,
        #[arg(long, default_value_t = 1000)]
        train_spoof: usize,
        #[arg(long, default_value_t = 250)]
        eval_bonafide: usize,
        #[arg(long, default_value_t = 250)]
        eval_spoof: usize,
        #[arg(long, default_value_t = breathnet::breathmask::TARGET_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and write per-epoch and averaged checkpoints.
    Train(RunArgs),
    /// Score the eval manifest with `checkpoint` under one or more mask modes.
    Eval {
        #[arg(long, value_delimiter = ',')]
        modes: Vec<MaskMode>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate the seven ablation variants.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write pooled embeddings of the eval manifest as CSV.
    ExportEmb {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Metrics over an existing score file.
    Score {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        c_miss: f64,
        #[arg(long, default_value_t = 10.0)]
        c_fa: f64,
        #[arg(long, default_value_t = 0.05)]
        prior: f64,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, found '{tok}'")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("--{key} needs a value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load(run: &RunArgs) -> Result<RunConfig> {
    RunConfig::load(run.config.as_deref(), &parse_overrides(&run.overrides)?)
}

macro_rules! with_precision {
    ($cfg:expr, $f:ident ( $($arg:expr),* )) => {
        match $cfg.precision {
            Precision::F32 => harness::$f::<f32>($($arg),*),
            Precision::F64 => harness::$f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { out, spec, train_bonafide, train_spoof, eval_bonafide, eval_spoof, samples, seed } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => CorpusSpec {
                    train: SplitCounts { bonafide: train_bonafide, spoof: train_spoof },
                    eval: SplitCounts { bonafide: eval_bonafide, spoof: eval_spoof },
                    samples,
                    seed,
                    ..CorpusSpec::default()
                },
            };
            let splits = generate_corpus(&spec, &out)?;
            for (name, recs) in splits {
                println!("{name}: {} utterances in {}", recs.len(), out.join(&name).display());
            }
        }
        Cmd::Train(args) => {
            let cfg = load(&args)?;
            let outcome = with_precision!(cfg, train(&cfg))?;
            for e in &outcome.epochs {
                println!("epoch {:>3}  loss {:.6}  ce {:.6}  {:.1}s", e.epoch, e.mean.total, e.mean.ce, e.seconds);
            }
            match outcome.final_path {
                Some(p) => println!("final checkpoint: {}", p.display()),
                None => println!("no epochs run; no checkpoint written"),
            }
        }
        Cmd::Eval { modes, run } => {
            let cfg = load(&run)?;
            let ck = Checkpoint::load(&cfg.checkpoint)?;
            let modes = if modes.is_empty() { vec![cfg.mask_mode] } else { modes };
            for mode in modes {
                let out = with_precision!(cfg, evaluate(&cfg, &ck, mode, &cfg.out_dir))?;
                println!("{}\nscores: {}\n", out.render(), out.score_path.display());
            }
        }
        Cmd::Ablate { seeds, run } => {
            let cfg = load(&run)?;
            let rows = with_precision!(cfg, ablate(&cfg, &Variant::ALL, &seeds))?;
            let table = harness::render_ablation(&rows);
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("ablation.txt"), &table)?;
            print!("{table}");
        }
        Cmd::ExportEmb { out, run } => {
            let cfg = load(&run)?;
            let ck = Checkpoint::load(&cfg.checkpoint)?;
            let n = with_precision!(cfg, export_embeddings(&cfg, &ck, &out))?;
            println!("{n} embeddings written to {}", out.display());
        }
        Cmd::Score { file, c_miss, c_fa, prior } => {
            let scores = read_scores(&file)?;
            let rep = report(&scores, DcfParams { c_miss, c_fa, prior })?;
            println!("{rep}\n{}", pooled_breakdown(&scores)?.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
