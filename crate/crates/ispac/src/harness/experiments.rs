//! Experiment execution: scenario generation, Monte Carlo sweeps, and
//! per-trial records.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::config::{
    dbm_to_watts, ExperimentConfig, ExperimentKind, ProbingMode, ScenarioBlock, SweepVariable,
};
use crate::fim::{crb_from_fim, fim_downlink, fim_uplink, g_derivatives, TargetParams};
use crate::geometry::{
    far_field_steering, make_comm_channel, two_hop_sensing_gain, ArrayConfig, PathLossModel,
    PolarPoint,
};
use crate::optim::{
    ao_uplink, pdd_downlink, solve_downlink_fd, solve_uplink_fd, DesignProblem, OptimSettings,
};
use crate::positioning::{
    downlink_two_stage, split_phi, split_vartheta, uplink_two_stage, Grid1d, TwoStageOptions,
};
use crate::signal::{
    synth_downlink_echo, synth_downlink_frames, synth_uplink_echo, DownlinkTx, HadPrecoder,
    ScenarioConfig,
};
use crate::{CMat, CVec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Positioning(#[from] crate::positioning::PositioningError),
    #[error(transparent)]
    Fim(#[from] crate::fim::FimError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

/// One row of the results table; one per trial per sweep point per variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub sweep: f64,
    pub variant: String,
    pub theta_true_deg: f64,
    pub r_true_m: f64,
    pub theta_hat_deg: f64,
    pub r_hat_m: f64,
    pub rcrb_theta_deg: f64,
    pub rcrb_r_m: f64,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// One concrete channel/target realization.
pub struct ScenarioInstance {
    pub mt: ArrayConfig,
    pub at: ArrayConfig,
    /// Near-field user channels.
    pub channels: Vec<CVec>,
    /// Far-field rebuild of the same channels (matched path gains).
    pub far_channels: Vec<CVec>,
    pub target: TargetParams,
    pub scenario: ScenarioConfig,
}

/// Stable per-stream seed derivation so trial or sweep count changes never
/// alter other streams.
pub fn derive_seed(master: u64, sweep_idx: u64, trial_idx: u64) -> u64 {
    let mut z = master
        ^ sweep_idx.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ trial_idx.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws users, scatterers, and the target gain for one trial.
pub fn generate_scenario(
    block: &ScenarioBlock,
    n_rf: usize,
    qos_db: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ScenarioInstance, HarnessError> {
    let mt = ArrayConfig::with_aperture(block.n_mt, block.mt_aperture_m, block.carrier_hz)?;
    let at = ArrayConfig::half_wavelength(block.n_at, block.carrier_hz)?;
    let los = PathLossModel::nyc_los_28ghz();
    let nlos = PathLossModel::nyc_nlos_28ghz();

    let mut channels = Vec::with_capacity(block.k_users);
    let mut far_channels = Vec::with_capacity(block.k_users);
    for _ in 0..block.k_users {
        let theta = rng.random_range(block.user_theta_deg[0]..block.user_theta_deg[1]);
        let r = rng.random_range(block.user_range_m[0]..block.user_range_m[1]);
        let user = PolarPoint::from_degrees(theta, r)?;
        let mut scats = Vec::with_capacity(block.l_k);
        for _ in 0..block.l_k {
            let st = rng.random_range(block.user_theta_deg[0]..block.user_theta_deg[1]);
            let sr = rng.random_range(block.user_range_m[0]..block.user_range_m[1]);
            scats.push((PolarPoint::from_degrees(st, sr)?, rng.random_range(3.0..12.0)));
        }
        let ch = make_comm_channel(&mt, &user, &scats, &los, &nlos, rng)?;
        // Far-field counterpart with identical path gains.
        let mut far = far_field_steering(&mt, user.theta_rad)?.map(|e| e * ch.los_gain);
        let l_k = ch.scatterers.len().max(1) as f64;
        for s in &ch.scatterers {
            let term = far_field_steering(&mt, s.location.theta_rad)?;
            let scale = s.alpha / l_k.sqrt();
            far += term.map(|e| e * scale);
        }
        channels.push(ch.h);
        far_channels.push(far);
    }

    let target_pos = PolarPoint::from_degrees(block.target_theta_deg, block.target_range_m)?;
    let beta = two_hop_sensing_gain(&los, block.target_range_m, rng)?;

    let mut qos = Vec::with_capacity(block.k_users);
    for k in 0..block.k_users {
        let db = qos_db[k.min(qos_db.len() - 1)];
        qos.push(10f64.powf(db / 10.0));
    }
    let noise = dbm_to_watts(block.noise_dbm);
    let scenario = ScenarioConfig {
        p_d: dbm_to_watts(block.p_d_dbm),
        p_s: dbm_to_watts(block.p_s_dbm),
        p_u: dbm_to_watts(block.p_u_dbm),
        sigma0_sq: noise,
        sigma_d_sq: noise,
        sigma_u_sq: noise,
        t_slots: block.t_slots,
        k_users: block.k_users,
        qos,
    };
    scenario.validate(block.n_at)?;
    let _ = n_rf;
    Ok(ScenarioInstance {
        mt,
        at,
        channels,
        far_channels,
        target: TargetParams::new(target_pos, beta),
        scenario,
    })
}

/// Default estimator grids: 0.05-degree angle steps stopping one step short
/// of endfire, 0.05 m range steps over 5-50 m, and the matching split grids.
pub struct SearchGrids {
    pub theta: Grid1d,
    pub range: Grid1d,
    pub vartheta: Grid1d,
    pub phi: Grid1d,
    pub opts: TwoStageOptions,
}

impl SearchGrids {
    pub fn defaults(mt: &ArrayConfig) -> Self {
        let theta = Grid1d::new(0.0, 89.95f64.to_radians(), 1800);
        let range = Grid1d::new(5.0, 50.0, 901);
        let vartheta =
            Grid1d::new(0.0, split_vartheta(mt, 89.95f64.to_radians()), 1800);
        // Uniform in the quadratic split parameter, i.e. harmonic in range.
        let theta_ref = 45f64.to_radians();
        let phi = Grid1d::new(
            split_phi(mt, theta_ref, 50.0),
            split_phi(mt, theta_ref, 5.0),
            901,
        );
        let opts = TwoStageOptions { refine_levels: 2, ..Default::default() };
        Self { theta, range, vartheta, phi, opts }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn nan_record(seed: u64, sweep: f64, variant: &str, scn: &ScenarioInstance) -> TrialRecord {
    TrialRecord {
        seed,
        sweep,
        variant: variant.into(),
        theta_true_deg: scn.target.theta_rad.to_degrees(),
        r_true_m: scn.target.range_m,
        theta_hat_deg: f64::NAN,
        r_hat_m: f64::NAN,
        rcrb_theta_deg: f64::NAN,
        rcrb_r_m: f64::NAN,
        objective: f64::NAN,
        iterations: 0,
        wall_time_s: 0.0,
    }
}

fn positioning_trial(
    cfg: &ExperimentConfig,
    snr_db: f64,
    trial: usize,
    sweep_idx: usize,
) -> Result<TrialRecord, HarnessError> {
    let seed = derive_seed(cfg.scenario.seed, sweep_idx as u64, trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scn =
        generate_scenario(&cfg.scenario, cfg.scenario.n_rf, &cfg.scenario.qos_db, &mut rng)?;
    let n_rf = cfg.scenario.n_rf;
    let snr = 10f64.powf(snr_db / 10.0);
    let beta_sq = scn.target.beta.norm_sqr();
    let grids = SearchGrids::defaults(&scn.mt);
    let derivs = g_derivatives(&scn.mt, &scn.at, &scn.target.position())?;
    let g_mat = derivs.g_tilde.map(|e| e * scn.target.beta);
    let downlink = cfg.experiment.kind == ExperimentKind::PositionDownlink;

    let (record, elapsed) = timed(|| -> Result<TrialRecord, HarnessError> {
        if downlink {
            // Sensing SNR knob: noise scaled at fixed echo power.
            scn.scenario.sigma_d_sq = beta_sq * scn.scenario.p_d / snr;
            let (had, tx) = match cfg.experiment.probing {
                ProbingMode::Isotropic => {
                    let had = HadPrecoder::random(scn.mt.n_antennas, n_rf, &mut rng)?;
                    let r_probe = CMat::identity(n_rf, n_rf)
                        * Complex64::new(scn.scenario.p_d / n_rf as f64, 0.0);
                    (had, DownlinkTx { w_digital: CMat::zeros(n_rf, scn.scenario.k_users), r_probe })
                }
                ProbingMode::Optimized => {
                    let prob = DesignProblem::new(
                        scn.mt,
                        scn.at,
                        scn.channels.clone(),
                        scn.target,
                        scn.scenario.clone(),
                    )?;
                    let sol = pdd_downlink(&prob, n_rf, &OptimSettings::default(), &mut rng)?;
                    (sol.had, sol.tx)
                }
            };
            let x = synth_downlink_frames(&had, &tx, scn.scenario.t_slots, &mut rng)?;
            let y = synth_downlink_echo(&x, &g_mat, scn.scenario.sigma_d_sq, &mut rng)?;
            let est = downlink_two_stage(
                &y,
                &x,
                &scn.mt,
                &scn.at,
                &grids.theta,
                &grids.range,
                &grids.opts,
            )?;
            let f = had.analog_matrix();
            let q = &f * tx.combined_covariance() * f.adjoint();
            let j = fim_downlink(
                &q,
                &derivs,
                scn.target.beta,
                scn.scenario.t_slots,
                scn.scenario.sigma_d_sq,
            )?;
            let crb = crb_from_fim(&j)?;
            Ok(TrialRecord {
                seed,
                sweep: snr_db,
                variant: "near".into(),
                theta_true_deg: scn.target.theta_rad.to_degrees(),
                r_true_m: scn.target.range_m,
                theta_hat_deg: est.theta_rad.to_degrees(),
                r_hat_m: est.range_m,
                rcrb_theta_deg: crb.theta_var().sqrt().to_degrees(),
                rcrb_r_m: crb.range_var().sqrt(),
                objective: crb.trace(),
                iterations: est.objective_evals,
                wall_time_s: 0.0,
            })
        } else {
            scn.scenario.sigma_u_sq = beta_sq * scn.scenario.p_s / snr;
            let (had, r_probe) = match cfg.experiment.probing {
                ProbingMode::Isotropic => {
                    let had = HadPrecoder::random(scn.mt.n_antennas, n_rf, &mut rng)?;
                    let r = CMat::identity(scn.at.n_antennas, scn.at.n_antennas)
                        * Complex64::new(scn.scenario.p_s / scn.at.n_antennas as f64, 0.0);
                    (had, r)
                }
                ProbingMode::Optimized => {
                    let prob = DesignProblem::new(
                        scn.mt,
                        scn.at,
                        scn.channels.clone(),
                        scn.target,
                        scn.scenario.clone(),
                    )?;
                    let sol = ao_uplink(&prob, n_rf, &OptimSettings::default(), &mut rng)?;
                    (sol.had, sol.tx.r_probe)
                }
            };
            let y = synth_uplink_echo(
                &had,
                &g_mat,
                &r_probe,
                scn.scenario.t_slots,
                scn.scenario.sigma_u_sq,
                &mut rng,
            )?;
            let est = uplink_two_stage(&y, &had, &scn.mt, &grids.vartheta, &grids.phi, &grids.opts)?;
            let j = fim_uplink(
                &had.analog_matrix(),
                &derivs,
                &r_probe,
                scn.target.beta,
                scn.scenario.t_slots,
                scn.scenario.sigma_u_sq,
            )?;
            let crb = crb_from_fim(&j)?;
            Ok(TrialRecord {
                seed,
                sweep: snr_db,
                variant: "near".into(),
                theta_true_deg: scn.target.theta_rad.to_degrees(),
                r_true_m: scn.target.range_m,
                theta_hat_deg: est.theta_rad.to_degrees(),
                r_hat_m: est.range_m,
                rcrb_theta_deg: crb.theta_var().sqrt().to_degrees(),
                rcrb_r_m: crb.range_var().sqrt(),
                objective: crb.trace(),
                iterations: est.objective_evals,
                wall_time_s: 0.0,
            })
        }
    });
    let mut record = record?;
    record.wall_time_s = elapsed;
    Ok(record)
}

/// Estimator RMSE sweep over the sensing SNR.
pub fn run_positioning_sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    let points: Vec<(usize, f64)> =
        cfg.experiment.values.iter().cloned().enumerate().collect();
    let jobs: Vec<(usize, f64, usize)> = points
        .iter()
        .flat_map(|&(si, v)| (0..cfg.experiment.trials).map(move |t| (si, v, t)))
        .collect();
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(sweep_idx, snr_db, trial)| {
            positioning_trial(cfg, snr_db, trial, sweep_idx).unwrap_or_else(|e| {
                log::warn!("trial {trial} at {snr_db} dB failed: {e}");
                TrialRecord {
                    seed: derive_seed(cfg.scenario.seed, sweep_idx as u64, trial as u64),
                    sweep: snr_db,
                    variant: "near".into(),
                    theta_true_deg: f64::NAN,
                    r_true_m: f64::NAN,
                    theta_hat_deg: f64::NAN,
                    r_hat_m: f64::NAN,
                    rcrb_theta_deg: f64::NAN,
                    rcrb_r_m: f64::NAN,
                    objective: f64::NAN,
                    iterations: 0,
                    wall_time_s: 0.0,
                }
            })
        })
        .collect();
    sort_records(&mut records);
    Ok(records)
}

fn crb_variant_trial(
    cfg: &ExperimentConfig,
    scn: &ScenarioInstance,
    variant: &str,
    n_rf: usize,
    seed: u64,
    sweep: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialRecord, HarnessError> {
    let downlink = cfg.experiment.kind == ExperimentKind::CrbSweepDownlink;
    let channels =
        if variant == "far" { scn.far_channels.clone() } else { scn.channels.clone() };
    let prob =
        DesignProblem::new(scn.mt, scn.at, channels, scn.target, scn.scenario.clone())?;
    let settings = OptimSettings::default();
    let (crb, iterations) = if downlink {
        let sol = if variant == "fd" {
            solve_downlink_fd(&prob, &settings)?
        } else {
            pdd_downlink(&prob, n_rf, &settings, rng)?
        };
        let f = sol.had.analog_matrix();
        let q = &f * sol.tx.combined_covariance() * f.adjoint();
        let j = fim_downlink(
            &q,
            &prob.derivs,
            scn.target.beta,
            scn.scenario.t_slots,
            scn.scenario.sigma_d_sq,
        )?;
        (crb_from_fim(&j)?, sol.violation_trace.len())
    } else {
        let sol = if variant == "fd" {
            solve_uplink_fd(&prob, &settings, rng)?
        } else {
            ao_uplink(&prob, n_rf, &settings, rng)?
        };
        let j = fim_uplink(
            &sol.had.analog_matrix(),
            &prob.derivs,
            &sol.tx.r_probe,
            scn.target.beta,
            scn.scenario.t_slots,
            scn.scenario.sigma_u_sq,
        )?;
        (crb_from_fim(&j)?, sol.objective_trace.len())
    };
    Ok(TrialRecord {
        seed,
        sweep,
        variant: variant.into(),
        theta_true_deg: scn.target.theta_rad.to_degrees(),
        r_true_m: scn.target.range_m,
        theta_hat_deg: f64::NAN,
        r_hat_m: f64::NAN,
        rcrb_theta_deg: crb.theta_var().sqrt().to_degrees(),
        rcrb_r_m: crb.range_var().sqrt(),
        objective: crb.trace(),
        iterations,
        wall_time_s: 0.0,
    })
}

/// Optimizer sweep over QoS or RF-chain count, one record per variant.
pub fn run_crb_sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    let jobs: Vec<(usize, f64, usize)> = cfg
        .experiment
        .values
        .iter()
        .cloned()
        .enumerate()
        .flat_map(|(si, v)| (0..cfg.experiment.trials).map(move |t| (si, v, t)))
        .collect();
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .flat_map(|&(sweep_idx, value, trial)| {
            let seed = derive_seed(cfg.scenario.seed, sweep_idx as u64, trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut qos_db = cfg.scenario.qos_db.clone();
            let mut n_rf = cfg.scenario.n_rf;
            match cfg.experiment.sweep {
                SweepVariable::QosDb => qos_db = vec![value],
                SweepVariable::NRf => n_rf = value as usize,
                SweepVariable::SnrDb => {}
            }
            let scn = match generate_scenario(&cfg.scenario, n_rf, &qos_db, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("scenario generation failed: {e}");
                    return Vec::new();
                }
            };
            cfg.experiment
                .variants
                .iter()
                .map(|variant| {
                    let mut vrng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 7, 11));
                    let (rec, dt) = timed(|| {
                        crb_variant_trial(cfg, &scn, variant, n_rf, seed, value, &mut vrng)
                    });
                    match rec {
                        Ok(mut r) => {
                            r.wall_time_s = dt;
                            r
                        }
                        Err(e) => {
                            log::warn!("variant {variant} failed on trial {trial}: {e}");
                            nan_record(seed, value, variant, &scn)
                        }
                    }
                })
                .collect()
        })
        .collect();
    sort_records(&mut records);
    Ok(records)
}

/// Convergence traces of the matching optimizer: one row per outer
/// iteration, with companion rows carrying the coupling violation.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut records = Vec::new();
    for trial in 0..cfg.experiment.trials {
        let seed = derive_seed(cfg.scenario.seed, 0, trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scn = generate_scenario(&cfg.scenario, cfg.scenario.n_rf, &cfg.scenario.qos_db, &mut rng)?;
        let prob = DesignProblem::new(
            scn.mt,
            scn.at,
            scn.channels.clone(),
            scn.target,
            scn.scenario.clone(),
        )?;
        let sol = pdd_downlink(&prob, cfg.scenario.n_rf, &OptimSettings::default(), &mut rng)?;
        for (i, group) in sol.objective_trace.iter().enumerate() {
            let mut rec = nan_record(seed, i as f64, "al", &scn);
            rec.objective = *group.last().unwrap_or(&f64::NAN);
            rec.iterations = i;
            records.push(rec);
        }
        for (i, v) in sol.violation_trace.iter().enumerate() {
            let mut rec = nan_record(seed, i as f64, "violation", &scn);
            rec.objective = *v;
            rec.iterations = i;
            records.push(rec);
        }
    }
    sort_records(&mut records);
    Ok(records)
}

fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        (a.sweep, &a.variant, a.seed)
            .partial_cmp(&(b.sweep, &b.variant, b.seed))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Dispatch on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    match cfg.experiment.kind {
        ExperimentKind::PositionDownlink | ExperimentKind::PositionUplink => {
            run_positioning_sweep(cfg)
        }
        ExperimentKind::CrbSweepDownlink | ExperimentKind::CrbSweepUplink => run_crb_sweep(cfg),
        ExperimentKind::Convergence => run_convergence(cfg),
    }
}
