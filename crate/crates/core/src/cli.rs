//! The `bridgelab` command line.
//!
//! Exit status: 0 when every verdict passes, 1 when one fails (or an iteration
//! breaks a numerical invariant), 2 on usage and config errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::harness::{self, ExperimentConfig, ExperimentReport, Regime};

pub const OUT_ENV: &str = "BRIDGELAB_OUT";

#[derive(Parser, Debug)]
#[command(name = "bridgelab", version, about = "Sinkhorn and Schrödinger bridge experiments with stability diagnostics", arg_required_else_help = true)]
struct Cli {
    /// Print every failing diagnostic row
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run discrete-regime experiments
    DiscreteRun(RunArgs),
    /// Run linear-Gaussian experiments
    GaussianRun(RunArgs),
    /// Run every check of each config's regime and write verdicts
    Verify(RunArgs),
    /// Run the rate checks only and report fitted slopes against their bounds
    Rates(RunArgs),
    /// Write a generated instance to a JSON file
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (JSON); repeat for several experiments
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory (default: $BRIDGELAB_OUT, then the config's own)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent experiments
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum)]
    plot: Option<Toggle>,
    /// Override a config key, e.g. `--set instance.generate.size=[6,6]`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    profile: String,
    /// `nx,ny` for discrete profiles, `d` for Gaussian ones
    #[arg(long, value_delimiter = ',', required = true)]
    size: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// osc cap (bounded) or temperature (quadratic-grid)
    #[arg(long)]
    param: Option<f64>,
    #[arg(long)]
    self_bridged: bool,
    /// Output file (default: $BRIDGELAB_OUT/<profile>-<seed>.json, else standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Regime(Regime),
    Verify,
    Rates,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Internal { .. } => 1,
        _ => 2,
    }
}

fn resolve_out(flag: Option<&Path>, many: bool, config_path: &Path, config: &ExperimentConfig) -> PathBuf {
    let base = flag.map(Path::to_path_buf).or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from));
    match base {
        Some(b) if many => b.join(config_path.file_stem().unwrap_or_default()),
        Some(b) => b,
        None => config.output.clone(),
    }
}

fn prepare(args: &RunArgs, mode: Mode) -> Result<Vec<ExperimentConfig>, Error> {
    let many = args.configs.len() > 1;
    let mut out = Vec::with_capacity(args.configs.len());
    for path in &args.configs {
        let mut c = ExperimentConfig::load(path)?;
        for kv in &args.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.apply_override(k, v)?;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if let Some(n) = args.iterations {
            c.iterations = n;
        }
        if let Some(p) = args.plot {
            c.plot = p == Toggle::On;
        }
        match mode {
            Mode::Regime(r) if r != c.regime => {
                return Err(Error::Config(format!("{} is not a {:?} config", path.display(), r).to_lowercase()));
            }
            Mode::Verify => c.checks.clear(),
            Mode::Rates => {
                c.checks = match c.regime {
                    Regime::Discrete => vec!["geometric".into(), "bridge_series".into()],
                    Regime::Gaussian => vec!["rate".into(), "envelope".into()],
                }
            }
            _ => {}
        }
        c.output = resolve_out(args.out.as_deref(), many, path, &c);
        c.validate()?;
        out.push(c);
    }
    Ok(out)
}

fn summarize(w: &mut impl Write, cfg: &ExperimentConfig, rep: &ExperimentReport, mode: Mode, verbose: u8) {
    let failed = rep.verdicts.iter().filter(|v| !v.pass).count();
    let _ = writeln!(w, "{}: {} checks, {} failed -> {}", if failed == 0 { "PASS" } else { "FAIL" }, rep.verdicts.len(), failed, cfg.output.display());
    for v in rep.verdicts.iter().filter(|v| !v.pass || verbose > 1) {
        let _ = writeln!(w, "  {} {}/{}: worst residual {:e} over {} rows", if v.pass { "ok  " } else { "FAIL" }, v.group, v.check, v.worst_residual, v.rows);
    }
    if mode == Mode::Rates || verbose > 0 {
        for r in rep.rows.iter().filter(|r| r.metric.starts_with("fit_slope:")) {
            let name = &r.metric["fit_slope:".len()..];
            let bound = rep.rows.iter().find(|b| b.metric == format!("fit_bound:{name}")).map(|b| format!("{:.6}", b.value));
            let _ = writeln!(w, "  slope {name}: {:.6} (bound {})", r.value, bound.as_deref().unwrap_or("n/a"));
        }
    }
}

fn run(args: &RunArgs, mode: Mode, verbose: u8) -> i32 {
    let configs = match prepare(args, mode) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("bridgelab: {e}");
            return exit_code(&e);
        }
    };
    let results = harness::run_many(&configs, args.jobs);
    let mut code = 0;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for (cfg, res) in configs.iter().zip(results) {
        match res {
            Ok(rep) => {
                summarize(&mut w, cfg, &rep, mode, verbose);
                if !rep.all_pass {
                    code = code.max(1);
                }
            }
            Err(e) => {
                eprintln!("bridgelab: {}: {e}", cfg.output.display());
                code = code.max(exit_code(&e));
            }
        }
    }
    code
}

fn gen(args: &GenArgs) -> i32 {
    let inst = harness::generate_instance(&args.profile, &args.size, args.seed, args.param).and_then(|i| if args.self_bridged { harness::self_bridged(&i) } else { Ok(i) });
    let inst = match inst {
        Ok(i) => i,
        Err(e) => {
            eprintln!("bridgelab: {e}");
            return 2;
        }
    };
    let text = inst.to_json() + "\n";
    let target = args.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(|d| PathBuf::from(d).join(format!("{}-{}.json", args.profile, args.seed))));
    match target {
        Some(p) => {
            let written = p.parent().filter(|d| !d.as_os_str().is_empty()).map_or(Ok(()), std::fs::create_dir_all).and_then(|_| std::fs::write(&p, text));
            if let Err(e) = written {
                eprintln!("bridgelab: {}: {e}", p.display());
                return 2;
            }
            println!("{}", p.display());
        }
        None => print!("{text}"),
    }
    0
}

/// Parses `argv` (program name first) and runs the subcommand; returns the exit status.
pub fn parse_and_dispatch(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    2
                }
            };
        }
    };
    match &cli.command {
        Command::DiscreteRun(a) => run(a, Mode::Regime(Regime::Discrete), cli.verbose),
        Command::GaussianRun(a) => run(a, Mode::Regime(Regime::Gaussian), cli.verbose),
        Command::Verify(a) => run(a, Mode::Verify, cli.verbose),
        Command::Rates(a) => run(a, Mode::Rates, cli.verbose),
        Command::Gen(a) => gen(a),
    }
}
