use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ghostqc::commands::{self, BpOverrides, Method, SweepAxis};
use ghostqc::config::ExperimentConfig;
use ghostqc::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ghostqc", version, about = "Ghost imaging reconstruction with hybrid quantum-classical models")]
struct Cli {
    /// Worker threads for sweeps and gradient evaluation (0 = all cores).
    #[arg(long, global = true, env = "GHOSTQC_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate patterns and bucket signals from a known object.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the pattern seed (and derives the detection seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct an image from buckets.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Qcsgi)]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the model seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat reconstructions along one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Method::Qcsgi)]
        method: Method,
        /// Comma-separated model seeds; one cell per value and seed.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient variance over a grid of qubit and layer counts.
    BpVariance {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        qubits: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM between two images.
    Metrics {
        a: String,
        b: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> CliResult<PathBuf> {
    out.or_else(|| cfg.map(|c| PathBuf::from(&c.output)))
        .ok_or_else(|| CliError::config("no output directory; pass --out"))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.patterns.seed = s;
                if let Some(d) = cfg.detection.as_mut() {
                    d.seed = s.wrapping_add(1);
                }
            }
            let out = out_dir(out, Some(&cfg))?;
            let (_, summary) = commands::simulate(&cfg, &out)?;
            print_json(&summary);
        }
        Command::Reconstruct { config, method, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            let out = out_dir(out, Some(&cfg))?;
            let (_, report) = commands::reconstruct(&cfg, method, &out)?;
            if let Some(p) = report.parameters {
                if method == Method::Cnn {
                    println!(
                        "parameters: substitute linear {}, projection {}, trunk {}, total {}",
                        p.substitute_linear, p.projection, p.trunk, p.total
                    );
                } else {
                    println!("parameters: quantum {}, projection {}, trunk {}, total {}", p.quantum, p.projection, p.trunk, p.total);
                }
            }
            if let Some(t) = &report.training {
                println!("training: {} loss evaluations, best loss {:.6e} at {}, stop {:?}", t.iterations(), t.best_loss, t.best_iteration, t.stop_reason);
            }
            match report.metrics {
                Some(m) => println!("psnr {:.4} dB, ssim {:.4}", m.psnr, m.ssim),
                None => println!("no ground truth; metrics skipped"),
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { config, axis, values, method, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out_dir(out, Some(&cfg))?;
            let (_, rows) = commands::sweep(&cfg, method, axis, &values, &seed, &out)?;
            for r in &rows {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!("{axis}={} seed={} psnr {} ssim {}", r.value, r.seed, f(r.psnr), f(r.ssim));
            }
            println!("wrote {}", out.display());
        }
        Command::BpVariance { config, qubits, layers, trials, seed, out } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let out = out_dir(out, cfg.as_ref())?;
            let ov = BpOverrides { qubits, layers, trials, seed };
            let (_, table) = commands::bp_variance(cfg.as_ref(), &ov, &out)?;
            print!("{}", commands::variance_csv(&table, |c| Some(c.local_variance)).unwrap_or_default());
            println!("wrote {}", out.display());
        }
        Command::Metrics { a, b, out } => {
            let m = commands::metrics(&a, &b, out.as_deref())?;
            print_json(&m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ghostqc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
