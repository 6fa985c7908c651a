use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use circulator::config::RunConfig;
use circulator::experiments;
use circulator::report::{error_record, write_all};
use circulator::Error;

/// Simulate a flux-modulated bridge circulator and emit figure data.
#[derive(Parser, Debug)]
#[command(name = "circulator", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment to run, overriding the config.
    #[arg(long)]
    experiment: Option<String>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Reserved; every experiment is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    verbose: bool,
}

fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &cli.experiment {
        cfg.experiment.name = name.clone();
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output.dir);
    Ok((cfg, dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("circulator: cannot size the thread pool: {e}");
        }
    }
    let (cfg, dir) = match resolve(&cli) {
        Ok(x) => x,
        Err(e) => {
            let name = cli.experiment.clone().unwrap_or_default();
            eprint!("{}", error_record(&name, &e));
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let verbose = cli.verbose;
    let is_accept = cfg.experiment.name == "accept";
    let mut log = |line: String| {
        if verbose || is_accept {
            println!("{line}");
        }
    };
    if verbose {
        log(format!("running {} into {}", cfg.experiment.name, dir.display()));
    }
    let result = experiments::run(&cfg, &mut log).and_then(|r| {
        write_all(&dir, &r.artifacts)?;
        Ok(r)
    });
    match result {
        Ok(r) => {
            if verbose {
                for a in &r.artifacts {
                    println!("wrote {}", dir.join(&a.name).display());
                }
            }
            if r.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("circulator: {} reported failures", cfg.experiment.name);
                ExitCode::from(4)
            }
        }
        Err(e) => {
            let record = error_record(&cfg.experiment.name, &e);
            eprint!("{record}");
            let _ = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("error.json"), &record));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
