use std::path::PathBuf;
use std::process::ExitCode;

use cadgl::config::RunConfigFile;
use cadgl::run::{self, Candidates, CliError, CliResult};
use cadgl_core::gradcheck::{DEFAULT_STEP, DEFAULT_TOL};
use cadgl_core::synth::SynthParams;
use cadgl_core::trainer::SplitPart;
use clap::{Parser, Subcommand, ValueEnum};

/// Context-aware graph autoencoder for drug-drug interaction prediction.
#[derive(Parser)]
#[command(name = "cadgl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a stochastic-block synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 6)]
        types: usize,
        #[arg(long, default_value_t = 5)]
        blocks: usize,
        #[arg(long, default_value_t = 12)]
        fdim: usize,
        #[arg(long, default_value_t = 0.15)]
        pin: f64,
        #[arg(long, default_value_t = 0.01)]
        pout: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        no_lcp: bool,
        #[arg(long)]
        no_mcp: bool,
        /// Overrides the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on one split and print metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        split: PartArg,
        /// Drop the sampled negatives.
        #[arg(long)]
        positives_only: bool,
    },
    /// Rank unseen interactions by predicted probability.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// TSV of drug1, drug2, type_label.
        #[arg(long, conflicts_with = "all_unseen", required_unless_present = "all_unseen")]
        candidates: Option<PathBuf>,
        #[arg(long)]
        all_unseen: bool,
        /// Sampling seed when --all-unseen has to subsample.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Write the ranking here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ScopeArg::All)]
        scope: ScopeArg,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Train LCP-only, MCP-only and both over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PartArg {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    Ndtensor,
    Encoder,
    Vgae,
    Loss,
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> CliResult<RunConfigFile> {
    let mut cfg = RunConfigFile::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(out) = out {
        cfg.out_dir = std::path::absolute(out).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth {
            nodes,
            types,
            blocks,
            fdim,
            pin,
            pout,
            seed,
            out,
        } => {
            let params = SynthParams {
                n_drugs: nodes,
                n_types: types,
                n_blocks: blocks,
                f_dim: fdim,
                p_in: pin,
                p_out: pout,
                seed,
            };
            run::synth(&params, &out)
        }
        Command::Train {
            config,
            no_lcp,
            no_mcp,
            out,
        } => {
            let mut cfg = load_config(&config, out)?;
            cfg.train.use_lcp &= !no_lcp;
            cfg.train.use_mcp &= !no_mcp;
            print_json(&run::train(&cfg)?);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            edges,
            features,
            split,
            positives_only,
        } => {
            let part = match split {
                PartArg::Train => SplitPart::Train,
                PartArg::Valid => SplitPart::Valid,
                PartArg::Test => SplitPart::Test,
            };
            let m = run::eval(&checkpoint, &edges, &features, part, positives_only)?;
            println!("{}", serde_json::to_string(&m).expect("serialisable"));
            Ok(())
        }
        Command::Rank {
            checkpoint,
            edges,
            features,
            candidates,
            all_unseen: _,
            seed,
            top,
            out,
        } => {
            let source = match &candidates {
                Some(path) => Candidates::File(path),
                None => Candidates::AllUnseen { seed },
            };
            let tsv = run::rank(&checkpoint, &edges, &features, source, top)?;
            match out {
                Some(path) => cadgl::io::write_text(&path, &tsv).map_err(|e| CliError::Runtime(e.into())),
                None => {
                    print!("{tsv}");
                    Ok(())
                }
            }
        }
        Command::Gradcheck { scope, tol, step } => {
            let scope = match scope {
                ScopeArg::All => None,
                ScopeArg::Ndtensor => run::parse_scope("ndtensor"),
                ScopeArg::Encoder => run::parse_scope("encoder"),
                ScopeArg::Vgae => run::parse_scope("vgae"),
                ScopeArg::Loss => run::parse_scope("loss"),
            };
            let (table, outcomes) = run::gradcheck(scope, step, tol)?;
            print!("{table}");
            let failed: Vec<String> = outcomes
                .iter()
                .filter(|o| !o.report.pass)
                .map(|o| format!("{} ({:.3e})", o.name, o.report.max_rel_err))
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(format!(
                    "{} of {} checks above tol {tol:e}: {}",
                    failed.len(),
                    outcomes.len(),
                    failed.join(", ")
                )))
            }
        }
        Command::Ablate { config, seeds, out } => {
            let cfg = load_config(&config, out)?;
            let report = run::ablate(&cfg, seeds)?;
            print!("{}", report.table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
