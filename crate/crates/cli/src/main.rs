use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use elspin_core::bundle::ModelBundle;
use elspin_core::canon::SolventCanon;
use elspin_core::chemistry::{FeasibilityTables, IncompatibilityTable, SolubilityTable, Strictness, StrictnessPolicy};
use elspin_core::dataset::{write_summary_table, LoadOptions, SpinDataset};
use elspin_core::evaluation::EvalConfig;
use elspin_core::imc::{run_imc, ImcConfig, ImcMode, ImcSummary};
use elspin_core::learners::LearnerRegistry;
use elspin_core::report::Report;
use elspin_core::sampling::SamplerRegistry;
use elspin_core::workflow::{train, TrainRequest, TrainingArtifacts};

#[derive(Parser)]
#[command(name = "elspin", version, about = "Fiber-diameter modeling and inverse design for electrospinning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingMethod {
    Random,
    SobolDoptimal,
    Balanced,
}

impl SamplingMethod {
    fn name(self) -> &'static str {
        match self {
            SamplingMethod::Random => "random",
            SamplingMethod::SobolDoptimal => "sobol-doptimal",
            SamplingMethod::Balanced => "balanced",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Html,
}

#[derive(Subcommand)]
enum Command {
    /// Per-polymer descriptive statistics of fiber diameter.
    Describe {
        #[arg(long)]
        data: PathBuf,
        /// Only the overall row.
        #[arg(long)]
        overall: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a training subset.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: SamplingMethod,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark learners and save the best model as a bundle.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated learner names.
        #[arg(long, value_delimiter = ',', default_value = "linear,random-forest,boosting")]
        learners: Vec<String>,
        #[arg(long = "test-frac", default_value_t = 0.3)]
        test_frac: f64,
        #[arg(long, default_value_t = 5, value_parser = parse_folds)]
        folds: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Bundle path; the evaluation artifacts go next to it as `.train.json`.
        #[arg(long)]
        out: PathBuf,
        /// Evaluation table (CSV).
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
    },
    /// Inverse Monte Carlo against a target diameter.
    Imc {
        #[arg(long)]
        bundle: PathBuf,
        /// Dataset supplying empirical rows and ranges.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "optimization")]
        mode: ImcMode,
        #[arg(long)]
        polymer: String,
        /// Target diameter, nm.
        #[arg(long)]
        target: f64,
        /// Band half-width, nm.
        #[arg(long)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value = "balanced")]
        strictness: Strictness,
        #[arg(long = "no-allow-pct", default_value_t = 0.0)]
        no_allow_pct: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        solubility: Option<PathBuf>,
        #[arg(long)]
        incompatibility: Option<PathBuf>,
        /// Summary JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        draws: Option<PathBuf>,
        #[arg(long)]
        top: Option<PathBuf>,
    },
    /// Text or HTML report from a bundle and optional run outputs.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        /// Training artifacts (defaults to the file written by `train`).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// IMC summary JSON written by `imc`.
        #[arg(long)]
        imc: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the local HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        solubility: Option<PathBuf>,
        #[arg(long)]
        incompatibility: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
}

fn parse_folds(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k) if elspin_core::evaluation::ALLOWED_FOLDS.contains(&k) => Ok(k),
        _ => Err(format!("folds must be 3, 5 or 10 (got `{s}`)")),
    }
}

fn load_data(path: &Path) -> Result<SpinDataset> {
    let ds = SpinDataset::load(path, &LoadOptions::default()).with_context(|| format!("loading {}", path.display()))?;
    let rep = ds.load_report();
    if rep.dropped() > 0 {
        eprintln!("note: {} of {} rows dropped while loading ({:?})", rep.dropped(), rep.rows_in, rep.drops);
    }
    Ok(ds)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn artifacts_path(bundle: &Path) -> PathBuf {
    bundle.with_extension("train.json")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Describe { data, overall, out } => {
            let ds = load_data(&data)?;
            let rows = ds.describe(!overall);
            match out {
                Some(p) => write_summary_table(create(&p)?, &rows, b',')?,
                None => write_summary_table(std::io::stdout().lock(), &rows, b'\t')?,
            }
        }
        Command::Sample { data, method, n, seed, out } => {
            let ds = load_data(&data)?;
            let s = SamplerRegistry::default().get(method.name())?.sample(&ds, n, seed)?;
            let mut w = create(&out)?;
            s.export(&ds, &mut w)?;
            w.flush()?;
            for line in &s.log {
                eprintln!("{line}");
            }
            println!("{}: selected {} of {} rows -> {}", s.method, s.indices.len(), ds.len(), out.display());
        }
        Command::Train { data, learners, test_frac, folds, seed, out, metrics_csv } => {
            let ds = load_data(&data)?;
            let req = TrainRequest {
                sampling: None,
                sample_size: None,
                sampling_seed: seed,
                learners,
                eval: EvalConfig { test_fraction: test_frac, folds, seed, ..EvalConfig::default() },
            };
            let mut res = train(&ds, &req, &LearnerRegistry::default(), &SamplerRegistry::default())?;
            // Provenance of a prior `sample` step travels in the file header.
            if let Some(method) = sampling_header(&data)? {
                res.bundle.metadata.sampling_method = method;
                res.artifacts.report.entries.iter_mut().for_each(|e| e.sampling = res.bundle.metadata.sampling_method.clone());
            }
            res.bundle.save(&out)?;
            serde_json::to_writer_pretty(create(&artifacts_path(&out))?, &res.artifacts)?;
            if let Some(p) = metrics_csv {
                res.artifacts.report.write_table(create(&p)?, b',')?;
            }
            for w in &res.artifacts.report.warnings {
                eprintln!("warning: {w}");
            }
            let m = &res.bundle.metadata;
            println!(
                "best: {} (test R2 {}, cv R2 {}) -> {}",
                res.artifacts.report.best.as_deref().unwrap_or("?"),
                m.test_metrics.and_then(|t| t.r2).map_or("n/a".into(), |v| format!("{v:.4}")),
                m.cv_metrics.and_then(|t| t.r2).map_or("n/a".into(), |v| format!("{v:.4}")),
                out.display()
            );
        }
        Command::Imc {
            bundle,
            data,
            mode,
            polymer,
            target,
            tol,
            n,
            strictness,
            no_allow_pct,
            seed,
            solubility,
            incompatibility,
            out,
            draws,
            top,
        } => {
            let b = ModelBundle::load(&bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
            let ds = load_data(&data)?;
            let canon = SolventCanon::default();
            let tables = match &solubility {
                Some(p) => FeasibilityTables::load(p, incompatibility.as_deref(), &canon)?,
                None => {
                    eprintln!("note: no solubility table given; every pair is unrated and capped by the strictness threshold");
                    FeasibilityTables {
                        solubility: SolubilityTable::new(),
                        incompatibility: match &incompatibility {
                            Some(p) => IncompatibilityTable::from_reader(File::open(p)?, &canon)?,
                            None => IncompatibilityTable::builtin(&canon),
                        },
                    }
                }
            };
            let cfg = ImcConfig {
                policy: StrictnessPolicy::new(strictness, no_allow_pct)?,
                seed,
                ..ImcConfig::new(mode, polymer, target, tol, n)
            };
            let run = run_imc(&cfg, &b, &ds, &tables)?;
            let mut w = create(&out)?;
            serde_json::to_writer_pretty(&mut w, &run.summary)?;
            w.write_all(b"\n")?;
            w.flush()?;
            if let Some(p) = draws {
                run.write_draws(create(&p)?, b',')?;
            }
            if let Some(p) = top {
                run.write_top(create(&p)?, b',')?;
            }
            let s = &run.summary;
            let fmt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
            println!(
                "accepted {}/{}; success probability {}; acceptance rate {}; predicted mean {} nm",
                s.accepted,
                s.n_draws,
                fmt(s.success_probability),
                fmt(s.acceptance_rate),
                fmt(s.pred_mean)
            );
        }
        Command::Report { bundle, metrics, imc, format, out } => {
            let b = ModelBundle::load(&bundle).with_context(|| format!("loading bundle {}", bundle.display()))?;
            let metrics = metrics.or_else(|| Some(artifacts_path(&bundle)).filter(|p| p.exists()));
            let artifacts: Option<TrainingArtifacts> = match &metrics {
                Some(p) => Some(serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)?),
                None => None,
            };
            let imc: Option<ImcSummary> = match &imc {
                Some(p) => Some(serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)?),
                None => None,
            };
            let report = Report {
                title: format!("Electrospinning model report: {}", b.metadata.learner),
                model: Some(&b.metadata),
                metrics: artifacts.as_ref().map(|a| &a.report),
                diagnostics: artifacts.as_ref().map(|a| &a.diagnostics),
                imc: imc.as_ref(),
            };
            let html = match format {
                Some(f) => matches!(f, ReportFormat::Html),
                None => out.extension().is_some_and(|e| e == "html" || e == "htm"),
            };
            let body = if html { report.to_html() } else { report.to_text() };
            let mut w = create(&out)?;
            w.write_all(body.as_bytes())?;
            w.flush()?;
            println!("report -> {}", out.display());
        }
        Command::Serve { addr, data_dir, solubility, incompatibility, workers } => {
            let mut cfg = elspin_server::ServerConfig::from_env();
            if let Some(a) = addr {
                cfg.addr = a;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            cfg.solubility = solubility;
            cfg.incompatibility = incompatibility;
            cfg.workers = workers;
            if !cfg.addr.ip().is_loopback() {
                eprintln!("warning: listening on a non-loopback address; the API has no authentication");
            }
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            tokio::runtime::Runtime::new()?.block_on(elspin_server::serve(cfg))?;
        }
    }
    Ok(())
}

/// `# method: <name>` from a sampled export, if present.
fn sampling_header(path: &Path) -> Result<Option<String>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(File::open(path)?);
    for line in f.lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some(m) = rest.trim().strip_prefix("method:") {
            return Ok(Some(m.trim().to_string()));
        }
    }
    Ok(None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
