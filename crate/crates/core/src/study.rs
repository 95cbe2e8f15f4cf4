//! Sweeps over formulation, load scale and device options.
//!
//! Every run designs by decomposition, certifies the design against the AC
//! equations in all scenarios, and yields one [`StudyRow`]. Runs execute in
//! a fixed order and nothing in a row depends on wall time unless timing is
//! requested, so repeated sweeps produce identical rows.

use crate::acfeas::{apparent_load_shed_mu, certify_design, RecoveryOptions, RecoveryResult};
use crate::design::{DesignDecision, Mode, ModelOptions};
use crate::milp::MilpBackend;
use crate::netmodel::Network;
use crate::report::{fill_metrics, StudyRow};
use crate::sbd::{run_sbd, SbdError, SbdOptions, SbdState};
use crate::scenario::ScenarioSet;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub modes: Vec<Mode>,
    pub load_scales: Vec<f64>,
    /// Adds a QC run with FACTS and PST options per load scale.
    pub devices: bool,
    /// Replaces the network's `θ_u` when set.
    pub theta_u: Option<f64>,
    pub sbd: SbdOptions,
    pub recovery: RecoveryOptions,
    pub timing: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Qc, Mode::Dc],
            load_scales: vec![1.0],
            devices: false,
            theta_u: None,
            sbd: SbdOptions::default(),
            recovery: RecoveryOptions::default(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyRun {
    pub row: StudyRow,
    pub design: DesignDecision,
    pub state: SbdState,
    pub recovery: Vec<RecoveryResult>,
}

/// Designs and certifies one configuration.
pub fn run_case(
    net: &Network,
    set: &ScenarioSet,
    options: &ModelOptions,
    config: &StudyConfig,
    backend: &dyn MilpBackend,
) -> Result<StudyRun, SbdError> {
    let start = Instant::now();
    let (design, state) = run_sbd(net, set, options, backend, &config.sbd)?;
    let recovery = certify_design(
        net,
        &design,
        options.mode,
        &set.scenarios,
        backend,
        &config.sbd.cuts,
        &config.recovery,
        config.sbd.workers,
    )?;
    let mus: Vec<(f64, f64)> = recovery.iter().map(|r| apparent_load_shed_mu(r, net)).collect();
    let avg = |f: fn(&(f64, f64)) -> f64| mus.iter().map(f).sum::<f64>() / mus.len().max(1) as f64;
    let max = |f: fn(&(f64, f64)) -> f64| mus.iter().map(f).fold(0.0, f64::max);
    let row = StudyRow {
        damage_percentile: set.damage_percentile,
        theta_u: net.params.theta_u,
        load_scale: net.params.load_scale,
        mode: options.mode,
        devices: options.devices,
        objective: state.incumbent_cost,
        zeta: None,
        psi: None,
        mu_crit_avg: avg(|m| m.0),
        mu_crit_max: max(|m| m.0),
        mu_ncr_avg: avg(|m| m.1),
        mu_ncr_max: max(|m| m.1),
        wall_time_s: config.timing.then(|| start.elapsed().as_secs_f64()),
        sbd_iters: state.iteration,
    };
    Ok(StudyRun {
        row,
        design,
        state,
        recovery,
    })
}

/// Runs the sweep in (load scale, mode, devices) order and fills ζ and ψ.
/// The returned runs are sorted like `study.csv`.
pub fn run_study(
    net: &Network,
    set: &ScenarioSet,
    config: &StudyConfig,
    backend: &dyn MilpBackend,
) -> Result<Vec<StudyRun>, SbdError> {
    let mut runs = Vec::new();
    for &scale in &config.load_scales {
        let mut net = net.clone();
        net.params.load_scale = scale;
        if let Some(t) = config.theta_u {
            net.params.theta_u = t;
        }
        let mut cases: Vec<ModelOptions> = config.modes.iter().map(|&m| ModelOptions::new(m)).collect();
        if config.devices && config.modes.contains(&Mode::Qc) {
            cases.push(ModelOptions::new(Mode::Qc).with_devices(true));
        }
        for options in cases {
            log::info!("study run: load scale {scale}, {} devices={}", options.mode, options.devices);
            runs.push(run_case(&net, set, &options, config, backend)?);
        }
    }
    let mut rows: Vec<StudyRow> = runs.iter().map(|r| r.row.clone()).collect();
    fill_metrics(&mut rows);
    for (run, row) in runs.iter_mut().zip(rows) {
        run.row = row;
    }
    runs.sort_by(|a, b| a.row.key_cmp(&b.row));
    Ok(runs)
}
