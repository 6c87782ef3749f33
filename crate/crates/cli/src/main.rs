mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use pprnet::augment::balance_training_fold;
use pprnet::corpus::read_corpus;
use pprnet::eval::{read_report_json, render_table, run_experiment, write_report_files, ExperimentKind};
use pprnet::inception::{load_checkpoint, save_checkpoint, train_network, write_loss_trace, InceptionNetwork};
use pprnet::seeds::derive_seed;
use pprnet::signal::{preprocess_recording, Domain, Window};
use pprnet::store::WindowStore;
use pprnet::synthgen::{generate, write_corpus, SynthConfig};
use pprnet::transfer::{apply_transfer, tune, TransferManifest};

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<pprnet::Error> for CliError {
    fn from(e: pprnet::Error) -> Self {
        let code = match e {
            pprnet::Error::Numerical(_) => 3,
            pprnet::Error::Config(_) => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pprnet", version, about = "Photoparoxysmal-response detection pipeline")]
struct Cli {
    /// Flat TOML configuration; the bundled desk configuration when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// -v for progress, -vv for per-epoch detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        }
    }
}

#[derive(Debug, clap::Args)]
struct ExperimentArgs {
    /// Window store, or a directory of target EDF recordings.
    #[arg(long)]
    input: PathBuf,
    /// Directory holding member-N.ckpt files (not needed by exp3).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
    /// Ensemble size, overriding `members`.
    #[arg(long)]
    seeds: Option<usize>,
    /// Target overlap used when `--input` is a recording directory.
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus (EDF plus annotations).
    Synth {
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Turn a directory of EDF recordings into a window store.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long)]
        out: PathBuf,
        /// Window overlap fraction, overriding the configuration.
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Balance a window store with synthetic anomaly windows.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ensemble members on a source window store.
    Pretrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Freeze, rebuild the head and tune one checkpoint on a target store.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer without augmentation, leave-one-subject-out.
    Exp1(ExperimentArgs),
    /// Transfer with per-fold augmentation, leave-one-subject-out.
    Exp2(ExperimentArgs),
    /// Feature baseline with per-fold augmentation, leave-one-subject-out.
    Exp3(ExperimentArgs),
    /// Print a report table and write its plot data.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_store(path: &Path) -> Result<WindowStore, CliError> {
    Ok(WindowStore::read(path)?)
}

fn preprocess_dir(dir: &Path, domain: Domain, cfg: &RunConfig, overlap: f64) -> Result<Vec<Window>, CliError> {
    let pre = cfg.preprocess(overlap)?;
    let recordings = read_corpus(dir, domain)?;
    let mut windows = Vec::new();
    for rec in &recordings {
        let w = preprocess_recording(rec, &pre).map_err(|e| CliError::from(e).with_context(&rec.subject_id))?;
        info!("{}: {} windows", rec.subject_id, w.len());
        windows.extend(w);
    }
    Ok(windows)
}

impl CliError {
    fn with_context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

fn checkpoint_path(dir: &Path, j: usize) -> PathBuf {
    dir.join(format!("member-{}.ckpt", j + 1))
}

fn load_members(dir: &Path, n: usize) -> Result<Vec<InceptionNetwork<f32>>, CliError> {
    (0..n)
        .map(|j| {
            let p = checkpoint_path(dir, j);
            if !p.exists() {
                return Err(CliError::usage(format!("missing checkpoint {}", p.display())));
            }
            Ok(load_checkpoint(&p)?)
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn run_exp(
    kind: ExperimentKind,
    args: &ExperimentArgs,
    cfg: &RunConfig,
    config_text: &str,
) -> Result<(), CliError> {
    let windows = if args.input.is_dir() {
        preprocess_dir(&args.input, Domain::Target, cfg, args.overlap.unwrap_or(cfg.overlap))?
    } else {
        read_store(&args.input)?.windows
    };
    let members = match kind {
        ExperimentKind::Exp3 => Vec::new(),
        _ => {
            let dir = args
                .checkpoints
                .as_deref()
                .ok_or_else(|| CliError::usage(format!("{kind} needs --checkpoints")))?;
            load_members(dir, args.seeds.unwrap_or(cfg.members))?
        }
    };
    let mut report = run_experiment(kind, &windows, &members, &cfg.experiment()?)?;
    report.invocation = Some(serde_json::json!({
        "config": config_text,
        "seed": cfg.seed,
        "members": members.len(),
        "input": args.input.display().to_string(),
    }));
    write_report_files(&report, &args.out, &kind.to_string())?;
    print!("{}", render_table(&report));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (mut cfg, config_text) = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Synth { domain, out, subjects } => {
            let mut sc = match domain {
                DomainArg::Source => SynthConfig::source_desk(cfg.seed),
                DomainArg::Target => SynthConfig::target_desk(derive_seed(cfg.seed, "synth-target", &[])),
            };
            if let Some(n) = subjects {
                sc.subjects = *n;
            }
            let recs = generate(&sc)?;
            let files = write_corpus(out, &recs)?;
            println!("wrote {} recordings to {}", files.len(), out.display());
        }
        Command::Preprocess {
            input,
            domain,
            out,
            overlap,
        } => {
            let domain: Domain = (*domain).into();
            let default_overlap = match domain {
                Domain::Source => cfg.source_overlap,
                Domain::Target => cfg.overlap,
            };
            let windows = preprocess_dir(input, domain, &cfg, overlap.unwrap_or(default_overlap))?;
            let store = WindowStore::new(windows)?;
            store.write(out)?;
            println!(
                "{} windows ({} anomalies) -> {}",
                store.len(),
                store.anomaly_count(),
                out.display()
            );
        }
        Command::Augment { input, out } => {
            let store = read_store(input)?;
            let (windows, summary) =
                balance_training_fold(&store.windows, &cfg.balance(), derive_seed(cfg.seed, "augment", &[]))?;
            let balanced = WindowStore::new(windows)?;
            balanced.write(out)?;
            println!(
                "{} windows: {} real and {} synthetic anomalies, {} normals -> {}",
                balanced.len(),
                summary.real_anomalies.min(cfg.target_ppr),
                summary.synthetic_anomalies,
                summary.normals_kept,
                out.display()
            );
        }
        Command::Pretrain { input, out, seeds } => {
            let store = read_store(input)?;
            let arch = cfg.arch()?;
            let train = cfg.pretraining();
            create_dir(out)?;
            for j in 0..seeds.unwrap_or(cfg.members) {
                let seed = derive_seed(cfg.seed, "pretrain", &[j as u64]);
                let trained = train_network::<f32>(&store.windows, arch, &train, seed)?;
                let hyper = serde_json::json!({ "training": train, "member": j + 1, "master_seed": cfg.seed });
                save_checkpoint(&trained.network, hyper, &checkpoint_path(out, j))?;
                write_loss_trace(&out.join(format!("member-{}-loss.csv", j + 1)), &trained.trace)?;
                let last = trained.trace.last();
                println!(
                    "member {}: {} epochs, train loss {:.4}",
                    j + 1,
                    trained.trace.len(),
                    last.map_or(f64::NAN, |s| s.train_loss)
                );
            }
        }
        Command::Transfer { checkpoint, input, out } => {
            let source: InceptionNetwork<f32> = load_checkpoint(checkpoint)?;
            let store = read_store(input)?;
            let plan = cfg.plan()?;
            let seed = derive_seed(cfg.seed, "transfer", &[]);
            let mut net = apply_transfer(&source, &plan, seed)?;
            let windows: Vec<&Window> = store.windows.iter().collect();
            let trace = tune(&mut net, &windows, &plan, seed)?;
            save_checkpoint(&net, serde_json::json!({ "tuning": plan.tuning, "seed": seed }), out)?;
            let mut manifest = out.as_os_str().to_owned();
            manifest.push(".manifest.json");
            TransferManifest::new(&plan, &net, seed).write(Path::new(&manifest))?;
            println!("tuned {} epochs -> {}", trace.len(), out.display());
        }
        Command::Exp1(a) => run_exp(ExperimentKind::Exp1, a, &cfg, &config_text)?,
        Command::Exp2(a) => run_exp(ExperimentKind::Exp2, a, &cfg, &config_text)?,
        Command::Exp3(a) => run_exp(ExperimentKind::Exp3, a, &cfg, &config_text)?,
        Command::Report { input, out } => {
            let report = read_report_json(input)?;
            print!("{}", render_table(&report));
            if let Some(dir) = out {
                write_report_files(&report, dir, &report.experiment.to_string())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
