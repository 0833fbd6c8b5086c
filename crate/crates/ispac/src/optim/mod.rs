//! CRB-minimizing beamformer design under per-user SINR and power
//! constraints, for both link directions.
//!
//! Both optimizers follow the same pattern: the trace-of-inverse objective
//! becomes a linear objective over an epigraph block tied to the Fisher
//! information through a Schur-complement LMI, the analog stage couples in
//! through an auxiliary covariance equality handled by a penalty dual
//! decomposition double loop, and rank-one factors are recovered from the
//! semidefinite relaxations afterwards.

pub mod downlink;
pub mod uplink;

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

use crate::fim::{g_derivatives, FimError, GMatrixDerivs, TargetParams};
use crate::geometry::{ArrayConfig, GeometryError};
use crate::sdp::{SdpError, SolveStatus, SolverSettings};
use crate::signal::{ScenarioConfig, SignalError};
use crate::{CMat, CVec};

pub use downlink::{pdd_downlink, solve_downlink_fd, DownlinkSolution};
pub use uplink::{ao_uplink, solve_uplink_fd, UplinkSolution};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("QoS infeasible: user {user} cannot reach {gamma_db:.1} dB under the power budget")]
    Infeasible { user: usize, gamma_db: f64 },
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Fim(#[from] FimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("subproblem returned {0:?}")]
    Solver(SolveStatus),
}

/// Penalty dual decomposition hyperparameters and iteration caps, shared by
/// both link directions.
#[derive(Debug, Clone)]
pub struct OptimSettings {
    /// Initial penalty factor.
    pub rho0: f64,
    /// Penalty shrink factor in (0, 1).
    pub mu: f64,
    /// Fractional-decrease threshold of the inner alternating loop.
    pub eps_ao: f64,
    /// Outer-loop coupling-violation threshold.
    pub eps_pdd: f64,
    /// Fractional-decrease threshold of the SCA loop (uplink digital).
    pub eps_sca: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_sca: usize,
    /// Outermost alternating iterations (uplink only).
    pub max_ao: usize,
    pub randomization_samples: usize,
    pub sdp: SolverSettings,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            mu: 0.6,
            eps_ao: 1e-3,
            eps_pdd: 1e-4,
            eps_sca: 1e-3,
            max_outer: 50,
            max_inner: 8,
            max_sca: 12,
            max_ao: 12,
            randomization_samples: 200,
            sdp: SolverSettings::default(),
        }
    }
}

/// Dual matrix, penalty factor, and violation threshold of one PDD loop.
#[derive(Debug, Clone)]
pub struct PddState {
    pub rho: f64,
    pub upsilon: CMat,
    pub eta: f64,
    pub mu: f64,
    pub outer_iter: usize,
}

impl PddState {
    pub fn new(n: usize, rho0: f64, mu: f64) -> Self {
        assert!(rho0 > 0.0 && mu > 0.0 && mu < 1.0);
        Self { rho: rho0, upsilon: CMat::zeros(n, n), eta: f64::INFINITY, mu, outer_iter: 0 }
    }

    /// Max-abs-entry norm of the coupling residual.
    pub fn violation(residual: &CMat) -> f64 {
        residual.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    /// One outer update: dual step when the violation met the threshold,
    /// penalty shrink otherwise; the threshold then tracks the violation.
    pub fn update(&mut self, residual: &CMat) -> f64 {
        let violation = Self::violation(residual);
        if violation <= self.eta {
            self.upsilon += residual / Complex64::new(self.rho, 0.0);
        } else {
            self.rho *= self.mu;
        }
        self.eta = 0.9 * violation;
        self.outer_iter += 1;
        violation
    }
}

/// Scenario data shared by the designers: geometry, channels, target, and
/// the normalizations that keep the interior-point data well conditioned.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub mt: ArrayConfig,
    pub at: ArrayConfig,
    /// Physical user channels.
    pub channels: Vec<CVec>,
    pub target: TargetParams,
    pub scenario: ScenarioConfig,
    pub derivs: GMatrixDerivs,
    /// Channel amplitude normalizer: the solver sees h / h_scale and
    /// noise / h_scale^2, which leaves every SINR and the FIM unchanged.
    pub h_scale: f64,
    /// Per-parameter diagonal scales balancing the downlink information
    /// matrix: the solver works with D J D where D = diag(scales).
    pub dscale_down: [f64; 4],
    /// Same for the uplink information matrix.
    pub dscale_up: [f64; 4],
    /// Reference CRB traces from isotropic probing; the solver minimizes
    /// tr(U^{-1}) in these units so its objective stays O(1).
    pub obj_scale_down: f64,
    pub obj_scale_up: f64,
}

/// Diagonal scales 1/sqrt(J_ii) of a reference information matrix.
fn diag_scales(j: &crate::fim::Fim4) -> [f64; 4] {
    let m = j.assembled();
    let mut d = [0.0; 4];
    for (i, di) in d.iter_mut().enumerate() {
        *di = 1.0 / m[(i, i)].abs().max(1e-300).sqrt();
    }
    d
}

impl DesignProblem {
    pub fn new(
        mt: ArrayConfig,
        at: ArrayConfig,
        channels: Vec<CVec>,
        target: TargetParams,
        scenario: ScenarioConfig,
    ) -> Result<Self, OptimError> {
        let derivs = g_derivatives(&mt, &at, &target.position())?;
        let h_scale = channels
            .iter()
            .map(|h| h.norm() / (h.len() as f64).sqrt())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        // Reference information from isotropic probing sets the LMI scales.
        let n_a = mt.n_antennas;
        let n_b = at.n_antennas;
        let q_ref =
            CMat::identity(n_a, n_a) * Complex64::new(scenario.p_d / n_a as f64, 0.0);
        let j_down =
            crate::fim::fim_downlink(&q_ref, &derivs, target.beta, scenario.t_slots, scenario.sigma_d_sq)?;
        let r_ref = CMat::identity(n_b, n_b) * Complex64::new(scenario.p_s / n_b as f64, 0.0);
        let j_up = crate::fim::fim_uplink_qform(
            &CMat::identity(n_a, n_a),
            &derivs,
            &r_ref,
            target.beta,
            scenario.t_slots,
            scenario.sigma_u_sq,
        )?;
        let obj_scale_down = crate::fim::crb_from_fim(&j_down)?.trace();
        let obj_scale_up = crate::fim::crb_from_fim(&j_up)?.trace();
        Ok(Self {
            mt,
            at,
            channels,
            target,
            scenario,
            derivs,
            h_scale,
            dscale_down: diag_scales(&j_down),
            dscale_up: diag_scales(&j_up),
            obj_scale_down,
            obj_scale_up,
        })
    }

    /// Channels in solver units.
    pub fn scaled_channels(&self) -> Vec<CVec> {
        let s = Complex64::new(1.0 / self.h_scale, 0.0);
        self.channels.iter().map(|h| h * s).collect()
    }

    /// Sensing gain in solver units (the unit-gain channel factors live in
    /// `derivs`; scaling gain and noise together preserves the FIM).
    pub fn scaled_beta(&self) -> Complex64 {
        self.target.beta / self.h_scale
    }

    pub fn scaled_sigma0_sq(&self) -> f64 {
        self.scenario.sigma0_sq / (self.h_scale * self.h_scale)
    }

    pub fn scaled_sigma_d_sq(&self) -> f64 {
        self.scenario.sigma_d_sq / (self.h_scale * self.h_scale)
    }

    pub fn scaled_sigma_u_sq(&self) -> f64 {
        self.scenario.sigma_u_sq / (self.h_scale * self.h_scale)
    }

    /// Sensing channel matrix in solver units.
    pub fn scaled_g(&self) -> CMat {
        self.derivs.g_tilde.map(|e| e * self.scaled_beta())
    }

    /// Physical trace of the CRB for a downlink transmit covariance.
    pub fn downlink_crb_trace(&self, q_phys: &CMat) -> Result<f64, OptimError> {
        let j = crate::fim::fim_downlink(
            q_phys,
            &self.derivs,
            self.target.beta,
            self.scenario.t_slots,
            self.scenario.sigma_d_sq,
        )?;
        Ok(crate::fim::crb_from_fim(&j)?.trace())
    }

    /// Physical trace of the CRB for an uplink design.
    pub fn uplink_crb_trace(&self, f_analog: &CMat, r_u: &CMat) -> Result<f64, OptimError> {
        let j = crate::fim::fim_uplink(
            f_analog,
            &self.derivs,
            r_u,
            self.target.beta,
            self.scenario.t_slots,
            self.scenario.sigma_u_sq,
        )?;
        Ok(crate::fim::crb_from_fim(&j)?.trace())
    }
}

/// Physical epigraph matrix from its scaled counterpart: U = D^{-1} U' D^{-1}.
pub(crate) fn unscale_epigraph(u_scaled: &Matrix2<f64>, d: &[f64; 4]) -> Matrix2<f64> {
    Matrix2::from_fn(|i, j| u_scaled[(i, j)] / (d[i] * d[j]))
}

/// tr(U^{-1}) of a physical epigraph matrix.
pub(crate) fn trace_inverse(u_phys: &Matrix2<f64>) -> f64 {
    match u_phys.try_inverse() {
        Some(inv) => inv.trace(),
        None => f64::INFINITY,
    }
}

/// Checks a trace for non-increase with mixed relative/absolute slack.
pub fn is_non_increasing(trace: &[f64], rel_slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel_slack) + 1e-12)
}

/// Independent feasibility audit of a finished design.
#[derive(Debug, Clone)]
pub struct DesignAudit {
    /// min over users of SINR_k - gamma_k (>= -1e-6 * gamma when clean).
    pub worst_sinr_margin: f64,
    /// Budget minus spent power (>= -1e-6 when clean).
    pub power_slack: f64,
    /// Largest deviation of any analog entry from unit modulus.
    pub max_modulus_dev: f64,
    /// Smallest eigenvalue of the probe covariance.
    pub min_probe_eig: f64,
}

pub(crate) fn min_eig(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub(crate) fn modulus_deviation(had: &crate::signal::HadPrecoder) -> f64 {
    had.f_vec().iter().map(|e| (e.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// Clips negative eigenvalues to zero (rank-one extraction can leave the
/// residual probe covariance indefinite at solver-tolerance level).
pub(crate) fn psd_project(m: &CMat) -> CMat {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut out = CMat::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += v[i] * v[j].conj() * Complex64::new(lam, 0.0);
                }
            }
        }
    }
    out
}
