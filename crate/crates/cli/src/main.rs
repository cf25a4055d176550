use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xlmimo_vr::alternating::Variant;
use xlmimo_vr::experiment::{run_experiment, trial_data, ExperimentConfig, ExperimentReport};
use xlmimo_vr::checks::run_suite;

#[derive(Parser)]
#[command(name = "xlmimo-vr", version, about = "Near-field channel estimation and VR detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Base seed (scene seed of trial t is seed + t).
    #[arg(long)]
    seed: Option<u64>,
    /// Per-trial result file; summary and traces go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these variants (repeatable).
    #[arg(long, value_parser = parse_variant)]
    variant: Vec<Variant>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Like `run`, with the SNR list replaced.
    Sweep {
        config: PathBuf,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        snr: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the scene and observation of one trial as JSON.
    Inspect {
        /// Defaults to the built-in desk-scale setup.
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// SNR in dB (defaults to the first configured value).
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
    },
    /// Run the small-instance oracle checks.
    Oracle,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: xlmimo_vr::Error| e.to_string())
}

fn load(path: Option<&PathBuf>) -> xlmimo_vr::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply(cfg: &mut ExperimentConfig, o: Overrides) {
    if let Some(s) = o.seed {
        cfg.base_seed = s;
    }
    if let Some(out) = o.out {
        cfg.output = out;
    }
    if !o.variant.is_empty() {
        cfg.variants = o.variant;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
}

fn print_report(cfg: &ExperimentConfig, report: &ExperimentReport) {
    println!("{:<20} {:>8} {:>12} {:>10} {:>8}", "variant", "snr_db", "nmse_db", "vr_err", "aborted");
    for a in &report.aggregates {
        println!(
            "{:<20} {:>8} {:>12.3} {:>10.4} {:>8}",
            a.variant.name(),
            a.snr_db,
            10.0 * a.mean_nmse.log10(),
            a.mean_vr_error_rate,
            a.aborted
        );
    }
    println!("results: {}", cfg.output.display());
    println!("summary: {}", cfg.summary_path().display());
}

fn experiment(mut cfg: ExperimentConfig, overrides: Overrides) -> xlmimo_vr::Result<ExitCode> {
    apply(&mut cfg, overrides);
    let report = run_experiment(&cfg)?;
    print_report(&cfg, &report);
    let aborted = report.aborted();
    if aborted > 0 {
        eprintln!("{aborted} trial(s) aborted; see the result file");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => load(Some(&config)).and_then(|cfg| experiment(cfg, overrides)),
        Command::Sweep { config, snr, overrides } => load(Some(&config)).and_then(|mut cfg| {
            cfg.snr_db = snr;
            experiment(cfg, overrides)
        }),
        Command::Inspect { config, trial, seed, snr } => load(config.as_ref()).and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let prep = cfg.prepare()?;
            let (scene, obs) = trial_data(&cfg, &prep, trial, snr.unwrap_or(cfg.snr_db[0]))?;
            println!("{}", scene.to_json()?);
            println!("{}", obs.to_json()?);
            eprintln!("scene hash {}", scene.hash());
            Ok(ExitCode::SUCCESS)
        }),
        Command::Oracle => {
            let checks = run_suite();
            let mut ok = true;
            for c in &checks {
                println!("{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
