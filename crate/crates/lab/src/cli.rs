//! `crope` subcommands. Exit codes: 0 success, 1 failed check or runtime
//! failure, 2 usage or configuration error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crope_core::train::ToyTaskSpec;

use crate::config;
use crate::error::{LabError, Result};
use crate::run::{checkpoint_mode, eval_checkpoint, train_run_with, write_eval_csv};
use crate::toy::{run_toy, ToyOptions};
use crate::verify::{run_checks, Hooks, MODULES};

#[derive(Debug, Parser)]
#[command(
    name = "crope",
    version,
    about = "Rotary and complex-linear rotary attention laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat TOML file with run keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` settings applied after the config file.
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant and property checks.
    Verify {
        /// Only run checks of this module (repeatable).
        #[arg(long)]
        filter: Vec<String>,
        #[arg(long, hide = true)]
        corrupt_tied: bool,
    },
    /// Parameter counts for every placement mode.
    Audit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for audit.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic shift profiles, δ-kernel curves and the trained shift task.
    Toy {
        #[arg(long)]
        out: PathBuf,
        /// Rotary dimension of the analytic construction.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        window: usize,
        #[arg(long, default_value_t = 5000.0)]
        base: f64,
        /// Also train the one-layer model on the shift task.
        #[arg(long)]
        train: bool,
        #[arg(long, default_value = "crope_qk")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        symbols: usize,
        #[arg(long, default_value_t = 16)]
        seq_len: usize,
    },
    /// Train a byte-level language model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Print every logged row.
        #[arg(long)]
        verbose: bool,
    },
    /// Validation loss and perplexity of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for eval.csv; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut stdout = std::io::stdout().lock();
    let mut say = |s: String| {
        let _ = writeln!(stdout, "{s}");
    };
    match cli.command {
        Command::Verify {
            filter,
            corrupt_tied,
        } => {
            if let Some(bad) = filter.iter().find(|f| !MODULES.contains(&f.as_str())) {
                return Err(LabError::Usage(format!(
                    "unknown module `{bad}`; expected one of {}",
                    MODULES.join(", ")
                )));
            }
            let results = run_checks(&filter, Hooks { corrupt_tied });
            results.iter().for_each(|r| say(r.line()));
            let failed = results.iter().filter(|r| !r.pass()).count();
            say(format!(
                "{} checks, {} passed, {failed} failed",
                results.len(),
                results.len() - failed
            ));
            Ok(i32::from(failed > 0))
        }
        Command::Audit { cfg, out } => {
            let rc = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            let rows = crate::audit::audit_rows(&rc.train.model)?;
            say(crate::audit::render(&rows));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
                crate::audit::write_csv(&dir.join("audit.csv"), &rows)?;
            }
            Ok(0)
        }
        Command::Toy {
            out,
            dim,
            window,
            base,
            train,
            mode,
            seed,
            steps,
            symbols,
            seq_len,
        } => {
            let o = ToyOptions {
                dim,
                window,
                base,
                train,
                mode: config::mode_of(&mode)?,
                seed,
                steps,
                spec: ToyTaskSpec {
                    symbols,
                    seq_len,
                    seed: 0,
                },
            };
            if let Some(s) = run_toy(&out, &o)? {
                say(format!(
                    "mode {} seed {seed}: accuracy {} attention_hits {} final_loss {}",
                    o.mode, s.accuracy, s.attention_hits, s.final_loss
                ));
            }
            say(format!("wrote toy artifacts to {}", out.display()));
            Ok(0)
        }
        Command::Train { cfg, out, verbose } => {
            let rc = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            let r = train_run_with(&rc, &out, &mut |row| {
                if verbose || row.val_loss.is_some() {
                    let val = row
                        .val_loss
                        .map(|v| format!(" val_loss {v:.4}"))
                        .unwrap_or_default();
                    eprintln!(
                        "step {} lr {:.3e} train_loss {:.4}{val}",
                        row.step, row.lr, row.train_loss
                    );
                }
            })?;
            say(format!(
                "trained {} steps; final val_loss {}; artifacts in {}",
                r.steps_completed,
                r.final_val_loss.map_or("n/a".into(), |v| v.to_string()),
                out.display()
            ));
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            cfg,
            out,
        } => {
            let rc = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            let r = eval_checkpoint(&checkpoint, &rc)?;
            say(format!("val_loss {}", r.loss));
            say(format!("perplexity {}", r.perplexity));
            let dir =
                out.unwrap_or_else(|| checkpoint.parent().map(PathBuf::from).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
            write_eval_csv(
                &dir.join("eval.csv"),
                &checkpoint,
                &checkpoint_mode(&checkpoint)?,
                &r,
            )?;
            Ok(0)
        }
    }
}
