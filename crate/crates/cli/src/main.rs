mod config;

use clap::{Parser, Subcommand};
use config::Settings;
use orgdt::acfeas::{apparent_load_shed_mu, certify_design, recovery_csv, RecoveryOptions};
use orgdt::design::{DesignDecision, Mode, ModelOptions};
use orgdt::milp::default_backend;
use orgdt::netmodel::{parse_network, Network};
use orgdt::report::emit_study;
use orgdt::sbd::{run_sbd, trace_csv, SbdError, SbdOptions};
use orgdt::scenario::{default_sigma, load_scenarios, sample_scenarios, save_scenarios, ScenarioSet};
use orgdt::study::{run_study, StudyConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Resilient upgrade design for transmission grids under spatial damage.
#[derive(Debug, Parser)]
#[command(name = "orgdt", version)]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample damage scenarios from the spatial failure field. Writes the
    /// scenario file to --out, or to stdout.
    Scenarios {
        #[command(flatten)]
        settings: Settings,
    },
    /// Design upgrades by scenario decomposition. Writes design_<mode>.json
    /// and trace_<mode>.csv into the --out directory.
    Design {
        #[command(flatten)]
        settings: Settings,
    },
    /// Recover AC operating points for a design in every scenario. Writes
    /// the recovery report to --out, or to stdout.
    Certify {
        /// Design file written by `design`.
        #[arg(long)]
        design: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Sweep modes, load scales and device options. Writes study.csv and
    /// the plot data files into the --out directory.
    Study {
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Infeasible(String),
    Solver(String),
    Output(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Output(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Solver(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Infeasible(m) | Failure::Solver(m) | Failure::Output(m) => m,
        }
    }
}

impl From<SbdError> for Failure {
    fn from(e: SbdError) -> Self {
        let msg = e.to_string();
        match e {
            SbdError::MasterInfeasible(_) | SbdError::PricingInfeasible(_) => Failure::Infeasible(msg),
            SbdError::Solve(_) | SbdError::Limit(_) => Failure::Solver(msg),
            SbdError::Model(_) | SbdError::NoScenarios | SbdError::UnknownInitial(_) => Failure::Usage(msg),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Output(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Output(format!("cannot write {}: {e}", path.display())))
}

/// Writes to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Settings after defaults are applied and inputs are loaded.
struct Run {
    net: Network,
    load_scales: Vec<f64>,
    modes: Vec<Mode>,
    devices: bool,
    sbd: SbdOptions,
    out: Option<PathBuf>,
    timing: bool,
}

fn network(s: &Settings) -> Result<Network, Failure> {
    let path = s.net.as_deref().ok_or_else(|| usage("--net is required"))?;
    let mut net = parse_network(&read(path, "network")?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(deg) = s.theta_u {
        if !(deg > 0.0 && deg <= 90.0) {
            return Err(usage(format!("--theta-u must lie in (0, 90] degrees, got {deg}")));
        }
        net.params.theta_u = deg.to_radians();
    }
    Ok(net)
}

fn resolve(s: &Settings) -> Result<Run, Failure> {
    let net = network(s)?;
    let modes = match s.mode.as_deref().unwrap_or("both") {
        "both" => vec![Mode::Qc, Mode::Dc],
        m => vec![m.parse::<Mode>().map_err(usage)?],
    };
    let load_scales = s.load_scale.clone().unwrap_or_else(|| vec![1.0]);
    if load_scales.is_empty() || load_scales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(usage("--load-scale needs positive values"));
    }
    let mut sbd = SbdOptions {
        workers: s
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        ..Default::default()
    };
    if sbd.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    if let Some(gap) = s.gap {
        if !(0.0..1.0).contains(&gap) {
            return Err(usage(format!("--gap must lie in [0, 1), got {gap}")));
        }
        sbd.cuts.milp.rel_gap = gap;
    }
    if let Some(tol) = s.tol {
        if !(tol > 0.0) {
            return Err(usage(format!("--tol must be positive, got {tol}")));
        }
        sbd.cuts.tol = tol;
    }
    if let Some(n) = s.max_iters {
        sbd.cuts.max_rounds = n;
    }
    Ok(Run {
        net,
        load_scales,
        modes,
        devices: s.devices.unwrap_or(false),
        sbd,
        out: s.out.clone(),
        timing: s.timing.unwrap_or(false),
    })
}

fn generate(net: &Network, s: &Settings) -> Result<ScenarioSet, Failure> {
    let count = s.count.ok_or_else(|| usage("--count is required to generate scenarios"))?;
    let percentile = s.percentile.ok_or_else(|| usage("--percentile is required to generate scenarios"))?;
    let sigma = s.sigma.unwrap_or_else(|| default_sigma(net));
    sample_scenarios(net, count, percentile, sigma, s.seed.unwrap_or(0)).map_err(|e| usage(e.to_string()))
}

/// Exactly one of a scenario file and generation settings.
fn scenarios(net: &Network, s: &Settings) -> Result<ScenarioSet, Failure> {
    let generating = s.count.is_some() || s.percentile.is_some() || s.sigma.is_some();
    match (&s.scenarios, generating) {
        (Some(_), true) => Err(usage("--scenarios excludes --count, --percentile and --sigma")),
        (Some(path), false) => {
            load_scenarios(&read(path, "scenarios")?, net).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        (None, true) => generate(net, s),
        (None, false) => Err(usage("give --scenarios or --count with --percentile")),
    }
}

fn single_scale(run: &Run) -> Result<f64, Failure> {
    match run.load_scales[..] {
        [l] => Ok(l),
        _ => Err(usage("this subcommand takes a single --load-scale")),
    }
}

fn file_stem(mode: Mode, devices: bool) -> String {
    if devices {
        format!("{mode}_devices")
    } else {
        mode.to_string()
    }
}

fn cmd_scenarios(s: &Settings) -> Result<(), Failure> {
    if s.scenarios.is_some() {
        return Err(usage("`scenarios` generates a set; --scenarios does not apply"));
    }
    let net = network(s)?;
    let set = generate(&net, s)?;
    emit(s.out.as_deref(), &(save_scenarios(&set) + "\n"))
}

fn cmd_design(s: &Settings) -> Result<(), Failure> {
    let run = resolve(s)?;
    let mut net = run.net.clone();
    net.params.load_scale = single_scale(&run)?;
    let set = scenarios(&net, s)?;
    let dir = run.out.clone().unwrap_or_else(|| PathBuf::from("."));
    for &mode in &run.modes {
        let options = ModelOptions::new(mode).with_devices(run.devices);
        let (design, state) = run_sbd(&net, &set, &options, &default_backend(), &run.sbd)?;
        let stem = file_stem(mode, run.devices);
        let json = serde_json::to_string_pretty(&design).expect("design serializes");
        write(&dir.join(format!("design_{stem}.json")), &(json + "\n"))?;
        write(&dir.join(format!("trace_{stem}.csv")), &trace_csv(&state, run.timing))?;
        println!(
            "{stem}: cost {} after {} iterations, master scenarios [{}]",
            state.incumbent_cost,
            state.iteration,
            state.active_set.join(", ")
        );
    }
    Ok(())
}

fn cmd_certify(design_path: &Path, s: &Settings) -> Result<(), Failure> {
    let run = resolve(s)?;
    let mode = match run.modes[..] {
        [m] => m,
        _ => return Err(usage("`certify` needs --mode qc or --mode dc")),
    };
    let text = read(design_path, "design")?;
    let design: DesignDecision =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", design_path.display())))?;
    let mut net = run.net.clone();
    net.params.load_scale = single_scale(&run)?;
    design
        .validate(&net, 1e-6)
        .map_err(|e| usage(format!("{}: {e}", design_path.display())))?;
    let set = scenarios(&net, s)?;
    let results = certify_design(
        &net,
        &design,
        mode,
        &set.scenarios,
        &default_backend(),
        &run.sbd.cuts,
        &RecoveryOptions::default(),
        run.sbd.workers,
    )?;
    emit(run.out.as_deref(), &recovery_csv(&results, &net))?;
    let mus: Vec<(f64, f64)> = results.iter().map(|r| apparent_load_shed_mu(r, &net)).collect();
    let worst = mus.iter().fold((0.0f64, 0.0f64), |a, m| (a.0.max(m.0), a.1.max(m.1)));
    eprintln!("worst apparent load shed: critical {:.4}%, non-critical {:.4}%", worst.0, worst.1);
    Ok(())
}

fn cmd_study(s: &Settings) -> Result<(), Failure> {
    let run = resolve(s)?;
    let set = scenarios(&run.net, s)?;
    let config = StudyConfig {
        modes: run.modes.clone(),
        load_scales: run.load_scales.clone(),
        devices: run.devices,
        theta_u: None,
        sbd: run.sbd.clone(),
        recovery: RecoveryOptions::default(),
        timing: run.timing,
    };
    let runs = run_study(&run.net, &set, &config, &default_backend())?;
    let rows: Vec<_> = runs.into_iter().map(|r| r.row).collect();
    let dir = run.out.clone().unwrap_or_else(|| PathBuf::from("study"));
    let written = emit_study(&rows, &dir).map_err(|e| Failure::Output(format!("{}: {e}", dir.display())))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let file = match &cli.config {
        None => Ok(Settings::default()),
        Some(path) => read(path, "config")
            .and_then(|t| Settings::from_toml(&t).map_err(|e| usage(format!("{}: {e}", path.display())))),
    };
    let result = file.and_then(|file| match cli.command {
        Command::Scenarios { settings } => cmd_scenarios(&settings.over(file)),
        Command::Design { settings } => cmd_design(&settings.over(file)),
        Command::Certify { design, settings } => cmd_certify(&design, &settings.over(file)),
        Command::Study { settings } => cmd_study(&settings.over(file)),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
