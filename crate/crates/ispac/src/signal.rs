//! Transmit signal structure and synthesis for both link directions.
//!
//! The main transceiver uses a partially-connected hybrid analog-digital
//! architecture: each RF chain drives one sub-array of M phase shifters, so
//! the analog precoder is block diagonal with unit-modulus entries and
//! satisfies F^H F = I. Echo synthesis assumes perfect self-interference
//! cancellation: the downlink echo contains only the reflected probe+data
//! mix, the uplink positioning signal only the reflected probe.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::{CMat, CVec};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("antenna count {n} not divisible by RF chain count {n_rf}")]
    BadSubArray { n: usize, n_rf: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Partially-connected analog precoder, stored as its phase vector.
#[derive(Debug, Clone)]
pub struct HadPrecoder {
    phases: DVector<f64>,
    n_rf: usize,
}

impl HadPrecoder {
    pub fn new(phases: Vec<f64>, n_rf: usize) -> Result<Self, SignalError> {
        if n_rf == 0 || phases.len() % n_rf != 0 {
            return Err(SignalError::BadSubArray { n: phases.len(), n_rf });
        }
        Ok(Self { phases: DVector::from_vec(phases), n_rf })
    }

    pub fn random<R: Rng + ?Sized>(n_antennas: usize, n_rf: usize, rng: &mut R) -> Result<Self, SignalError> {
        let phases = (0..n_antennas)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self::new(phases, n_rf)
    }

    /// Fully digital stand-in: one RF chain per antenna and zero phases, so
    /// the analog matrix is the identity.
    pub fn fully_digital(n_antennas: usize) -> Self {
        Self { phases: DVector::zeros(n_antennas), n_rf: n_antennas }
    }

    pub fn n_antennas(&self) -> usize {
        self.phases.len()
    }

    pub fn n_rf(&self) -> usize {
        self.n_rf
    }

    /// Sub-array size M = N_a / N_RF.
    pub fn sub_array_size(&self) -> usize {
        self.phases.len() / self.n_rf
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    /// Unit-modulus phase vector f (length N_a).
    pub fn f_vec(&self) -> CVec {
        self.phases.map(|p| Complex64::from_polar(1.0, p))
    }

    /// Block-diagonal analog matrix F (N_a x N_RF, columns scaled 1/sqrt(M)).
    pub fn analog_matrix(&self) -> CMat {
        let m = self.sub_array_size();
        let scale = 1.0 / (m as f64).sqrt();
        let f = self.f_vec();
        let mut out = CMat::zeros(self.n_antennas(), self.n_rf);
        for i in 0..self.n_rf {
            for row in 0..m {
                out[(i * m + row, i)] = f[i * m + row] * scale;
            }
        }
        out
    }

    /// Diagonal form diag(f) (N_a x N_a, unscaled).
    pub fn diag_matrix(&self) -> CMat {
        CMat::from_diagonal(&self.f_vec())
    }

    /// Block-selection matrix with (1/sqrt(M))-scaled all-ones columns, one
    /// per sub-array; the analog matrix factors as diag(f) * selection.
    pub fn selection_matrix(&self) -> CMat {
        selection_matrix(self.n_antennas(), self.n_rf)
    }

    pub fn with_phases(&self, phases: DVector<f64>) -> Self {
        debug_assert_eq!(phases.len(), self.n_antennas());
        Self { phases, n_rf: self.n_rf }
    }
}

/// Standalone block-selection matrix (N_a x N_RF).
pub fn selection_matrix(n_antennas: usize, n_rf: usize) -> CMat {
    let m = n_antennas / n_rf;
    let scale = Complex64::new(1.0 / (m as f64).sqrt(), 0.0);
    let mut out = CMat::zeros(n_antennas, n_rf);
    for i in 0..n_rf {
        for row in 0..m {
            out[(i * m + row, i)] = scale;
        }
    }
    out
}

/// Downlink transmit design: digital precoder columns and probe covariance.
#[derive(Debug, Clone)]
pub struct DownlinkTx {
    /// N_RF x K digital precoding matrix.
    pub w_digital: CMat,
    /// N_RF x N_RF Hermitian PSD probe covariance.
    pub r_probe: CMat,
}

impl DownlinkTx {
    /// Combined transmit covariance before the analog stage: W W^H + R.
    pub fn combined_covariance(&self) -> CMat {
        &self.w_digital * self.w_digital.adjoint() + &self.r_probe
    }
}

/// Uplink design: probe covariance at the assisting transceiver and one
/// digital combiner per user.
#[derive(Debug, Clone)]
pub struct UplinkTx {
    /// N_b x N_b Hermitian PSD probe covariance.
    pub r_probe: CMat,
    pub combiners: Vec<CVec>,
}

/// Powers, noise levels, slot count, and per-user SINR targets.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub p_d: f64,
    pub p_s: f64,
    pub p_u: f64,
    pub sigma0_sq: f64,
    pub sigma_d_sq: f64,
    pub sigma_u_sq: f64,
    pub t_slots: usize,
    pub k_users: usize,
    /// Per-user minimum SINR, linear scale.
    pub qos: Vec<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self, n_at: usize) -> Result<(), SignalError> {
        let positive = [
            ("p_d", self.p_d),
            ("p_s", self.p_s),
            ("p_u", self.p_u),
            ("sigma0_sq", self.sigma0_sq),
            ("sigma_d_sq", self.sigma_d_sq),
            ("sigma_u_sq", self.sigma_u_sq),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SignalError::InvalidScenario(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.t_slots < n_at {
            return Err(SignalError::InvalidScenario(format!(
                "t_slots ({}) must be >= the assisting-array size ({n_at}) for covariance rank",
                self.t_slots
            )));
        }
        if self.qos.len() != self.k_users {
            return Err(SignalError::InvalidScenario(format!(
                "qos has {} entries for {} users",
                self.qos.len(),
                self.k_users
            )));
        }
        Ok(())
    }
}

/// Downlink SINR of user `k`: desired power over inter-user interference,
/// probe leakage, and noise. Channels enter through h^T (transpose, not
/// conjugate) matching the transmit-side convention.
pub fn downlink_sinr(
    channels: &[CVec],
    k: usize,
    had: &HadPrecoder,
    tx: &DownlinkTx,
    sigma0_sq: f64,
) -> f64 {
    let f = had.analog_matrix();
    let ht_f = channels[k].transpose() * &f; // 1 x N_RF row
    let k_users = tx.w_digital.ncols();
    let desired = (&ht_f * tx.w_digital.column(k))[(0, 0)].norm_sqr();
    let mut denom = sigma0_sq;
    for i in 0..k_users {
        if i != k {
            denom += (&ht_f * tx.w_digital.column(i))[(0, 0)].norm_sqr();
        }
    }
    let probe = (&ht_f * &tx.r_probe * ht_f.adjoint())[(0, 0)].re;
    denom += probe;
    desired / denom
}

/// Interference-plus-noise covariance seen by uplink user `k` at the array
/// input: other users, reflected probe, and thermal noise.
pub fn uplink_interference_covariance(
    channels: &[CVec],
    k: usize,
    g: &CMat,
    r_probe: &CMat,
    p_u: f64,
    sigma_u_sq: f64,
) -> CMat {
    let n_a = channels[k].len();
    let mut r = CMat::identity(n_a, n_a) * Complex64::new(sigma_u_sq, 0.0);
    for (i, h) in channels.iter().enumerate() {
        if i != k {
            r += (h * h.adjoint()) * Complex64::new(p_u, 0.0);
        }
    }
    r += g * r_probe * g.adjoint();
    r
}

/// Uplink SINR of user `k` after analog combining F and digital combiner w_k.
pub fn uplink_sinr(
    channels: &[CVec],
    k: usize,
    had: &HadPrecoder,
    tx: &UplinkTx,
    g: &CMat,
    p_u: f64,
    sigma_u_sq: f64,
) -> f64 {
    let f = had.analog_matrix();
    let w = &tx.combiners[k];
    let fw = &f * w;
    let desired = p_u * (fw.adjoint() * &channels[k])[(0, 0)].norm_sqr();
    let r = uplink_interference_covariance(channels, k, g, &tx.r_probe, p_u, sigma_u_sq);
    let denom = (fw.adjoint() * r * &fw)[(0, 0)].re;
    desired / denom
}

/// Factor L with L L^H = R for a Hermitian PSD matrix, via eigendecomposition
/// with small negative eigenvalues (solver slack) clipped at zero. Rejects
/// inputs whose smallest eigenvalue falls below -rel_tol * max(tr, 1).
pub fn psd_factor_tol(r: &CMat, rel_tol: f64) -> Result<CMat, SignalError> {
    let n = r.nrows();
    if n == 0 {
        return Ok(r.clone());
    }
    let eig = nalgebra::SymmetricEigen::new(r.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = r.trace().re.abs().max(1.0);
    if min_eig < -rel_tol * scale {
        return Err(SignalError::NotPsd(min_eig));
    }
    // Relative floor also zeroes roundoff noise in rank-deficient inputs.
    let floor = 1e-14 * max_eig;
    let mut l = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = Complex64::new(if lam > floor { lam.sqrt() } else { 0.0 }, 0.0);
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// Strict-tolerance factor for sampling probe and data frames.
pub fn psd_factor(r: &CMat) -> Result<CMat, SignalError> {
    psd_factor_tol(r, 1e-10)
}

/// One sample of a circularly symmetric complex Gaussian vector CN(0, I).
pub fn cscg_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    DVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// N x T matrix with i.i.d. CN(0, 1) entries.
pub fn cscg_matrix<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> CMat {
    DMatrix::from_fn(n, t, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Downlink transmit frames over T slots: x(t) = F (W c(t) + s(t)) with
/// unit-power CSCG data symbols and probe samples drawn from CN(0, R).
pub fn synth_downlink_frames<R: Rng + ?Sized>(
    had: &HadPrecoder,
    tx: &DownlinkTx,
    t_slots: usize,
    rng: &mut R,
) -> Result<CMat, SignalError> {
    let k = tx.w_digital.ncols();
    let n_rf = had.n_rf();
    if tx.w_digital.nrows() != n_rf || tx.r_probe.nrows() != n_rf {
        return Err(SignalError::Dimension(format!(
            "precoder rows {} / probe size {} vs N_RF {}",
            tx.w_digital.nrows(),
            tx.r_probe.nrows(),
            n_rf
        )));
    }
    let probe_factor = psd_factor(&tx.r_probe)?;
    let data = &tx.w_digital * cscg_matrix(k, t_slots, rng);
    let probe = &probe_factor * cscg_matrix(n_rf, t_slots, rng);
    Ok(had.analog_matrix() * (data + probe))
}

/// Downlink echo at the assisting transceiver: Y = G^T X + noise.
pub fn synth_downlink_echo<R: Rng + ?Sized>(
    x_frames: &CMat,
    g: &CMat,
    sigma_d_sq: f64,
    rng: &mut R,
) -> Result<CMat, SignalError> {
    if g.nrows() != x_frames.nrows() {
        return Err(SignalError::Dimension(format!(
            "sensing channel rows {} vs frame rows {}",
            g.nrows(),
            x_frames.nrows()
        )));
    }
    let n_b = g.ncols();
    let t = x_frames.ncols();
    let noise = cscg_matrix(n_b, t, rng) * Complex64::new(sigma_d_sq.sqrt(), 0.0);
    Ok(g.transpose() * x_frames + noise)
}

/// Uplink positioning signal after combining and interference cancellation:
/// Y = F^H G S + noise, with probe frames S drawn from CN(0, R). Combining
/// keeps the noise white because F^H F = I.
pub fn synth_uplink_echo<R: Rng + ?Sized>(
    had: &HadPrecoder,
    g: &CMat,
    r_probe: &CMat,
    t_slots: usize,
    sigma_u_sq: f64,
    rng: &mut R,
) -> Result<CMat, SignalError> {
    if g.ncols() != r_probe.nrows() {
        return Err(SignalError::Dimension(format!(
            "sensing channel cols {} vs probe covariance size {}",
            g.ncols(),
            r_probe.nrows()
        )));
    }
    let factor = psd_factor(r_probe)?;
    let probes = &factor * cscg_matrix(g.ncols(), t_slots, rng);
    let f = had.analog_matrix();
    let noise =
        cscg_matrix(had.n_rf(), t_slots, rng) * Complex64::new(sigma_u_sq.sqrt(), 0.0);
    Ok(f.adjoint() * g * probes + noise)
}
