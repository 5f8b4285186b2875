use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracfield::config::{ExperimentKind, RawConfig};
use fracfield::experiments;
use fracfield::Error;

#[derive(Parser)]
#[command(name = "fracfield", version, about = "Fractional Laplacian discretisation and lattice fractional Gaussian fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence of the Dirichlet solution in the discrete energy norm
    Converge(Common),
    /// Deterministic variance of tested fields across h
    Variance(Common),
    /// Sample fields and write dumps and heightmaps
    Sample(Common),
    /// Distribution of the field maximum across h
    Maxstat(Common),
    /// Eigenvalues of the restricted operator and a Weyl fit
    Spectrum(Common),
    /// Closed-form oracle checks
    Selftest(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Config overrides as `--key value` or `--key=value`
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Converge(c) => (ExperimentKind::Converge, c),
            Command::Variance(c) => (ExperimentKind::Variance, c),
            Command::Sample(c) => (ExperimentKind::Sample, c),
            Command::Maxstat(c) => (ExperimentKind::Maxstat, c),
            Command::Spectrum(c) => (ExperimentKind::Spectrum, c),
            Command::Selftest(c) => (ExperimentKind::Selftest, c),
        }
    }
}

fn build_config(kind: ExperimentKind, args: &Common) -> fracfield::Result<RawConfig> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RawConfig::default(),
    };
    match raw.get("experiment") {
        Some(e) if e != kind.name() => {
            return Err(Error::Config(format!("config is for '{e}', not '{}'", kind.name())));
        }
        _ => raw.set("experiment", kind.name())?,
    }
    let mut rest = args.overrides.iter();
    while let Some(flag) = rest.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected '--key value', found '{flag}'")))?;
        match key.split_once('=') {
            Some((k, v)) => raw.set(k, v)?,
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for '--{key}'")))?;
                raw.set(key, v)?;
            }
        }
    }
    if let Some(out) = &args.out {
        raw.set("out", &out.to_string_lossy())?;
    }
    if let Some(seed) = args.seed {
        raw.set("seed", &seed.to_string())?;
    }
    if let Some(threads) = args.threads {
        raw.set("threads", &threads.to_string())?;
    }
    Ok(raw)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    let (raw, cfg) = match build_config(kind, &args).and_then(|raw| raw.resolve().map(|cfg| (raw, cfg))) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let hash = raw.hash();
    let result = if cfg.threads == 0 {
        experiments::run(&cfg, &hash)
    } else {
        fracfield::with_threads(cfg.threads, || experiments::run(&cfg, &hash))
    };
    let output = match result {
        Ok(o) => o,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    if let Err(e) = output.write_to(&cfg.out) {
        eprintln!("error: writing {}: {e}", cfg.out.display());
        return ExitCode::from(1);
    }
    print!("{}", output.report);
    println!("config {} -> {}", &hash[..16], cfg.out.display());
    if output.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
