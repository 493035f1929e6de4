use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use prunelab_core::model::{layer_sizes, preset, preset_default_input};
use prunelab_core::sanity::Check;
use prunelab_core::schedule::{self, ScheduleKind};
use prunelab_core::ticket::{self, ImpMode, Pipeline};
use prunelab_core::{ArchFamily, TrainConfig};

use crate::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use crate::dataset::{load_dataset, DataSource};
use crate::error::{LabError, Result};
use crate::files;
use crate::report;
use crate::runner::{run_experiment, RunOptions, RESULTS_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "prunelab",
    version,
    about = "Build, attack and retrain sparse subnetworks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment grid from a TOML config.
    Run {
        config: PathBuf,
        /// Worker threads (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Execute at most this many pending cells, then stop.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Construct one ticket and save it as JSON.
    Ticket(TicketArgs),
    /// Apply a structural attack (rearrange, shuffle-weights) to a saved ticket.
    Check {
        ticket: PathBuf,
        check: String,
        /// Seed of the attack; the ticket's seed by default.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print a keep-ratio schedule for a preset.
    Ratios {
        preset: String,
        sparsity: f64,
        /// plain or fast
        family: String,
        #[arg(long, default_value = "smart")]
        schedule: String,
    },
    /// Re-emit a results CSV as CSV or a markdown table.
    Report {
        rows: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TicketKind {
    Dense,
    Snip,
    Grasp,
    Lt,
    Random,
    LrRewind,
    WeightRewind,
    Hybrid,
    Imp,
}

#[derive(Debug, clap::Args)]
struct TicketArgs {
    #[arg(value_enum)]
    kind: TicketKind,
    #[arg(long, default_value = "mlp-4")]
    preset: String,
    #[arg(long, default_value_t = 0.9)]
    sparsity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// plain or fast
    #[arg(long, default_value = "plain")]
    family: String,
    /// Schedule of random tickets.
    #[arg(long, default_value = "smart")]
    schedule: String,
    /// Checkpoint epoch for weight rewinding.
    #[arg(long)]
    rewind_epoch: Option<usize>,
    /// Fraction of survivors removed per iterative round.
    #[arg(long, default_value_t = 0.2)]
    round_fraction: f64,
    /// Iterative mode: reset, lr-rewind or hybrid.
    #[arg(long, default_value = "reset")]
    mode: String,
    /// Take the dataset and training schedule from an experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretraining epochs (overrides the config).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, short, default_value = "ticket.json")]
    out: PathBuf,
    /// Also write the provenance checkpoints (binary) into this directory.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                2
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error[{}]: {msg}", e.kind());
            1
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let mut say = |s: String| {
        let _ = writeln!(stdout, "{s}");
    };
    match command {
        Command::Run {
            config,
            workers,
            limit,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cfg.resolve_output_dir(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from));
            let opts = RunOptions {
                output_dir: Some(out),
                workers,
                limit,
            };
            let r = run_experiment(&cfg, &opts)?;
            let total = cfg.cells().len();
            say(format!(
                "executed {} cells, {}/{total} done, config {}",
                r.executed.len(),
                r.rows.len(),
                &r.config_hash[..16]
            ));
            if r.complete {
                say(format!(
                    "results: {}",
                    r.output_dir.join(RESULTS_FILE).display()
                ));
            }
        }
        Command::Ticket(args) => {
            let t = build_ticket(&args)?;
            files::save_ticket(&args.out, &t)?;
            if let Some(dir) = &args.checkpoints {
                std::fs::create_dir_all(dir).map_err(LabError::io(dir))?;
                for cp in &t.provenance.checkpoints {
                    files::save_checkpoint(&dir.join(format!("epoch-{}.ckpt", cp.epoch)), cp)?;
                }
            }
            say(format!(
                "{} ticket: sparsity {:.6}, kept {:?} -> {}",
                t.provenance.pipeline,
                t.sparsity(),
                t.mask.kept_counts(),
                args.out.display()
            ));
        }
        Command::Check {
            ticket: path,
            check,
            seed,
            out,
        } => {
            let check: Check = check.parse()?;
            if check.is_data_corruption() {
                return Err(LabError::Config(format!(
                    "{check} corrupts the pruning data; rebuild the ticket with it through `run`"
                )));
            }
            let t = files::load_ticket(&path)?;
            let attacked = ticket::attack(check, &t, seed.unwrap_or(t.provenance.seed))?;
            let out = out.unwrap_or_else(|| sibling(&path, check.name()));
            files::save_ticket(&out, &attacked)?;
            say(format!(
                "{check}: kept {:?} -> {}",
                attacked.mask.kept_counts(),
                out.display()
            ));
        }
        Command::Ratios {
            preset: name,
            sparsity,
            family,
            schedule: kind,
        } => {
            let family: ArchFamily = family.parse()?;
            let kind: ScheduleKind = kind.parse()?;
            let (shape, classes) = preset_default_input(&name)?;
            let specs = preset(&name, &shape, classes)?;
            let sizes = layer_sizes(&specs);
            let s = schedule::build(kind, &sizes, &specs, sparsity, family)?;
            say("layer\tweights\tkept\tratio".to_string());
            for (l, (&m, &q)) in sizes.iter().zip(s.quotas()).enumerate() {
                say(format!("{l}\t{m}\t{q}\t{:.6}", q as f64 / m as f64));
            }
            let total: usize = sizes.iter().sum();
            say(format!(
                "total\t{total}\t{}\t{:.6}",
                s.retained(),
                s.retained() as f64 / total as f64
            ));
        }
        Command::Report { rows, format, out } => {
            let parsed = report::read_rows(&rows)?;
            if parsed.is_empty() {
                return Err(LabError::Schema(format!("{}: no rows", rows.display())));
            }
            let text = match format {
                Format::Csv => report::rows_to_csv(&parsed)?,
                Format::Markdown => report::markdown(&parsed)?,
            };
            match out {
                Some(path) => report::write_text(&path, &text)?,
                None => {
                    let _ = write!(stdout, "{text}");
                }
            }
        }
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "ticket".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

fn build_ticket(args: &TicketArgs) -> Result<prunelab_core::Ticket> {
    let family: ArchFamily = args.family.parse()?;
    let (source, mut train) = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let train = cfg.pretrain.clone().unwrap_or(cfg.train.clone());
            (cfg.dataset, train)
        }
        None => {
            let (shape, classes) = preset_default_input(&args.preset)?;
            (
                DataSource::blobs(classes, shape.iter().product(), 600, 7),
                TrainConfig::default(),
            )
        }
    };
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    let pipeline = match args.kind {
        TicketKind::Dense => Pipeline::Dense,
        TicketKind::Snip => Pipeline::Snip,
        TicketKind::Grasp => Pipeline::Grasp,
        TicketKind::Lt => Pipeline::Lt {
            preserve_output_layer: false,
        },
        TicketKind::Random => Pipeline::Random {
            schedule: args.schedule.parse()?,
            family,
        },
        TicketKind::LrRewind => Pipeline::LrRewind {
            preserve_output_layer: false,
        },
        TicketKind::WeightRewind => Pipeline::WeightRewind {
            rewind_epoch: args
                .rewind_epoch
                .ok_or_else(|| LabError::Config("weight-rewind needs --rewind-epoch".into()))?,
        },
        TicketKind::Hybrid => Pipeline::Hybrid { family },
        TicketKind::Imp => Pipeline::Imp {
            mode: parse_mode(&args.mode)?,
            round_fraction: args.round_fraction,
            family,
        },
    };
    let split = match args.kind {
        TicketKind::Dense | TicketKind::Random => None,
        _ => Some(load_dataset(&source)?),
    };
    let specs = match &split {
        Some(s) => preset(&args.preset, s.train.sample_shape(), s.train.class_count())?,
        None => {
            let (shape, classes) = preset_default_input(&args.preset)?;
            preset(&args.preset, &shape, classes)?
        }
    };
    // random and dense tickets never read data; an empty stand-in keeps the signature
    let data = match split {
        Some(s) => s.train,
        None => prunelab_core::Dataset::new(Vec::new(), Vec::new(), 1, vec![1])?,
    };
    Ok(ticket::construct(
        &pipeline,
        &specs,
        &data,
        args.sparsity,
        &train,
        args.seed,
        &[],
    )?)
}

fn parse_mode(s: &str) -> Result<ImpMode> {
    match s {
        "reset" => Ok(ImpMode::Reset),
        "lr-rewind" => Ok(ImpMode::LrRewind),
        "hybrid" => Ok(ImpMode::Hybrid),
        other => Err(LabError::Config(format!(
            "unknown mode {other:?}, expected reset, lr-rewind or hybrid"
        ))),
    }
}
