//! Two-stage target positioning for both link directions.
//!
//! Downlink: MUSIC over the assisting-array angle spectrum, then a matched
//! 1D range search using the known transmit frames. Uplink: the near-field
//! phase profile seen through the analog combiner factors into a linear
//! term (angle) and a quadratic term (distance); two alternating 1D MUSIC
//! searches over those split parameters replace the 2D scan, followed by
//! the closed-form map back to angle and distance.


use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{far_field_steering, near_field_steering, ArrayConfig, GeometryError, PolarPoint};
use crate::signal::HadPrecoder;
use crate::{CMat, CVec};

#[derive(Debug, Error)]
pub enum PositioningError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("need at least {need} snapshots for a rank-{need} covariance, got {got}")]
    TooFewSnapshots { need: usize, got: usize },
    #[error("signal dimension {signal_dim} must be below the array dimension {rows}")]
    BadSignalDim { signal_dim: usize, rows: usize },
    #[error("search grid is empty")]
    EmptyGrid,
    #[error("transmit frames are all zero; range search is undefined")]
    AllZeroFrames,
    #[error("split parameter {0} outside the arcsin domain; grid misconfigured")]
    OutsideArcsinDomain(f64),
}

/// Inclusive uniform 1D search grid.
#[derive(Debug, Clone, Copy)]
pub struct Grid1d {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid1d {
    pub fn new(start: f64, stop: f64, points: usize) -> Self {
        assert!(points >= 2 && stop > start, "grid needs points >= 2 and stop > start");
        Self { start, stop, points }
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points as f64 - 1.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let step = self.step();
        (0..self.points).map(move |i| self.start + step * i as f64)
    }

    /// Local grid refined by `zoom`, centered on `center` and always
    /// containing `center` exactly (odd point counts keep it central).
    fn refined_around(&self, center: f64, zoom: f64, points: usize) -> Grid1d {
        let half = self.step() / zoom * (points as f64 - 1.0) / 2.0;
        Grid1d { start: center - half, stop: center + half, points }
    }
}

/// Output of either two-stage estimator, with per-stage spectra kept for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct PositionEstimate {
    pub theta_rad: f64,
    pub range_m: f64,
    /// Complex gain estimate; only the downlink range stage produces one.
    pub beta: Option<Complex64>,
    /// First-stage objective over its last full search grid.
    pub spectrum_stage1: Vec<f64>,
    /// Second-stage objective over its last full search grid.
    pub spectrum_stage2: Vec<f64>,
    /// Total number of grid-objective evaluations performed.
    pub objective_evals: usize,
}

/// Orthonormal basis of the noise subspace from the sample covariance of
/// `y_frames` (rows x T), keeping the eigenvectors of the rows - signal_dim
/// smallest eigenvalues.
pub fn noise_subspace(y_frames: &CMat, signal_dim: usize) -> Result<CMat, PositioningError> {
    let rows = y_frames.nrows();
    let t = y_frames.ncols();
    if t < rows {
        return Err(PositioningError::TooFewSnapshots { need: rows, got: t });
    }
    if signal_dim >= rows {
        return Err(PositioningError::BadSignalDim { signal_dim, rows });
    }
    let cov = y_frames * y_frames.adjoint() / Complex64::new(t as f64, 0.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let noise_dim = rows - signal_dim;
    let mut u_n = CMat::zeros(rows, noise_dim);
    for (col, &idx) in order[..noise_dim].iter().enumerate() {
        u_n.set_column(col, &eig.eigenvectors.column(idx));
    }
    Ok(u_n)
}

/// Downlink first stage: the angle whose assisting-array steering vector has
/// the smallest projection onto the noise subspace. Returns the minimizer
/// and the spectrum over the grid.
pub fn downlink_angle_music(
    u_n: &CMat,
    cfg_at: &ArrayConfig,
    grid: &Grid1d,
) -> Result<(f64, Vec<f64>), PositioningError> {
    let mut best = (f64::INFINITY, grid.start);
    let mut spectrum = Vec::with_capacity(grid.points);
    for theta in grid.values() {
        let b = far_field_steering(cfg_at, theta)?;
        let proj = (u_n.adjoint() * &b).norm_squared();
        spectrum.push(proj);
        if proj < best.0 {
            best = (proj, theta);
        }
    }
    if spectrum.is_empty() {
        return Err(PositioningError::EmptyGrid);
    }
    Ok((best.1, spectrum))
}

/// Downlink second stage: normalized matched-filter correlation over a range
/// grid at the estimated angle, with the transmit frames known. Returns the
/// maximizing range, the gain estimate there, and the spectrum.
pub fn downlink_distance_mle(
    y_frames: &CMat,
    x_frames: &CMat,
    theta_hat: f64,
    cfg_mt: &ArrayConfig,
    cfg_at: &ArrayConfig,
    grid: &Grid1d,
) -> Result<(f64, Complex64, Vec<f64>), PositioningError> {
    if x_frames.iter().all(|e| e.norm_sqr() == 0.0) {
        return Err(PositioningError::AllZeroFrames);
    }
    let b = far_field_steering(cfg_at, theta_hat)?;
    // q_t = b^H y_t collapses the assisting-array dimension once.
    let q = (b.adjoint() * y_frames).transpose(); // T x 1
    let n_b = cfg_at.n_antennas as f64;
    let mut best = (f64::NEG_INFINITY, grid.start, Complex64::default());
    let mut spectrum = Vec::with_capacity(grid.points);
    for r in grid.values() {
        let a = near_field_steering(cfg_mt, &PolarPoint::new(theta_hat, r)?)?;
        let s = (a.transpose() * x_frames).transpose(); // entries a^T x_t
        let corr: Complex64 = s.iter().zip(q.iter()).map(|(si, qi)| si.conj() * qi).sum();
        let energy = n_b * s.norm_squared();
        let objective = if energy > 0.0 { corr.norm_sqr() / energy } else { 0.0 };
        spectrum.push(objective);
        if objective > best.0 {
            let beta = corr / Complex64::new(energy.max(f64::MIN_POSITIVE), 0.0);
            best = (objective, r, beta);
        }
    }
    if spectrum.is_empty() {
        return Err(PositioningError::EmptyGrid);
    }
    Ok((best.1, best.2, spectrum))
}

/// Search controls shared by the two-stage drivers.
#[derive(Debug, Clone, Copy)]
pub struct TwoStageOptions {
    /// Alternating sweeps between the two split parameters (uplink only).
    pub rounds: usize,
    /// Half-width, in linear-parameter grid steps, of the joint profile
    /// polish after the alternating sweeps: each candidate step gets a full
    /// quadratic-parameter sweep and the joint best wins. Keeps the cost
    /// linear in grid size; 0 disables it (uplink only).
    pub polish_radius: usize,
    /// Local zoom-in passes appended after the coarse search; each pass
    /// re-centers a grid on the current estimate.
    pub refine_levels: usize,
    /// Grid-step shrink factor per refinement pass.
    pub zoom: f64,
    /// Points per refinement grid (odd keeps the previous estimate on it).
    pub refine_points: usize,
}

impl Default for TwoStageOptions {
    fn default() -> Self {
        Self { rounds: 2, polish_radius: 3, refine_levels: 0, zoom: 10.0, refine_points: 41 }
    }
}

/// Full downlink estimator: MUSIC angle stage, then the matched range stage,
/// with optional local refinement of both grids.
pub fn downlink_two_stage(
    y_frames: &CMat,
    x_frames: &CMat,
    cfg_mt: &ArrayConfig,
    cfg_at: &ArrayConfig,
    theta_grid: &Grid1d,
    range_grid: &Grid1d,
    opts: &TwoStageOptions,
) -> Result<PositionEstimate, PositioningError> {
    let u_n = noise_subspace(y_frames, 1)?;
    let (mut theta_hat, spectrum_theta) = downlink_angle_music(&u_n, cfg_at, theta_grid)?;
    let mut evals = theta_grid.points;
    let mut tgrid = *theta_grid;
    for _ in 0..opts.refine_levels {
        tgrid = tgrid.refined_around(theta_hat, opts.zoom, opts.refine_points);
        let (t, _) = downlink_angle_music(&u_n, cfg_at, &tgrid)?;
        theta_hat = t;
        evals += tgrid.points;
    }

    let (mut r_hat, mut beta_hat, spectrum_r) =
        downlink_distance_mle(y_frames, x_frames, theta_hat, cfg_mt, cfg_at, range_grid)?;
    evals += range_grid.points;
    let mut rgrid = *range_grid;
    for _ in 0..opts.refine_levels {
        rgrid = rgrid.refined_around(r_hat, opts.zoom, opts.refine_points);
        let (r, beta, _) =
            downlink_distance_mle(y_frames, x_frames, theta_hat, cfg_mt, cfg_at, &rgrid)?;
        r_hat = r;
        beta_hat = beta;
        evals += rgrid.points;
    }

    Ok(PositionEstimate {
        theta_rad: theta_hat,
        range_m: r_hat,
        beta: Some(beta_hat),
        spectrum_stage1: spectrum_theta,
        spectrum_stage2: spectrum_r,
        objective_evals: evals,
    })
}

/// Linear-phase split parameter for a physical angle: k*d*sin(theta).
pub fn split_vartheta(cfg_mt: &ArrayConfig, theta_rad: f64) -> f64 {
    cfg_mt.wavenumber() * cfg_mt.spacing_m * theta_rad.sin()
}

/// Quadratic-phase split parameter: k*d^2*cos^2(theta) / (2r).
pub fn split_phi(cfg_mt: &ArrayConfig, theta_rad: f64, range_m: f64) -> f64 {
    cfg_mt.wavenumber() * cfg_mt.spacing_m.powi(2) * theta_rad.cos().powi(2) / (2.0 * range_m)
}

/// Inverse of the split map: angle from the linear term, then distance from
/// the quadratic one.
pub fn target_from_split(
    cfg_mt: &ArrayConfig,
    vartheta: f64,
    phi: f64,
) -> Result<(f64, f64), PositioningError> {
    let kd = cfg_mt.wavenumber() * cfg_mt.spacing_m;
    let s = vartheta / kd;
    if s.abs() > 1.0 {
        return Err(PositioningError::OutsideArcsinDomain(vartheta));
    }
    let theta = s.asin();
    let r = cfg_mt.wavenumber() * cfg_mt.spacing_m.powi(2) * theta.cos().powi(2) / (2.0 * phi);
    Ok((theta, r))
}

/// Linear-phase manifold vector c: entry n is exp(j*(n-1)*vartheta).
pub fn split_linear_vector(n: usize, vartheta: f64) -> CVec {
    DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, i as f64 * vartheta))
}

/// Quadratic-phase manifold vector d: entry n is exp(-j*(n-1)^2*phi).
pub fn split_quadratic_vector(n: usize, phi: f64) -> CVec {
    DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, -((i * i) as f64) * phi))
}

/// Noise-subspace Gram matrix of the split manifold at a fixed linear
/// parameter, plus the relaxed first-stage statistic.
#[derive(Debug, Clone)]
pub struct SplitSpectrum {
    /// diag(c)^H F U_n U_n^H F^H diag(c); Hermitian PSD with rank at most
    /// the noise-subspace dimension, so inversion is ridge-backed.
    pub gamma: CMat,
    /// Relaxed statistic: first entry of (gamma + ridge I)^{-1} applied to
    /// the first coordinate vector.
    pub objective: f64,
    /// Set when the Gram matrix is structurally rank deficient and the
    /// ridge was applied (always, for a wide analog stage).
    pub ridged: bool,
}

impl SplitSpectrum {
    /// Minimizer of d^H gamma d subject to a unit first entry, from the
    /// stationarity conditions of the constrained problem.
    pub fn kkt_direction(&self) -> CVec {
        let sol = self.solve_e1();
        let denom = sol[0];
        sol / denom
    }

    fn solve_e1(&self) -> CVec {
        let n = self.gamma.nrows();
        let reg = self.regularized();
        let e1 = CVec::from_fn(n, |i, _| {
            if i == 0 { Complex64::new(1.0, 0.0) } else { Complex64::default() }
        });
        reg.lu().solve(&e1).expect("regularized Gram is invertible")
    }

    fn regularized(&self) -> CMat {
        let n = self.gamma.nrows();
        let ridge = 1e-10 * self.gamma.trace().re / n as f64;
        &self.gamma + CMat::identity(n, n) * Complex64::new(ridge.max(1e-300), 0.0)
    }
}

/// Builds the split-manifold Gram matrix at one linear-parameter value.
pub fn uplink_split_spectrum(u_n: &CMat, had: &HadPrecoder, vartheta: f64) -> SplitSpectrum {
    let n_a = had.n_antennas();
    let e = had.analog_matrix() * u_n; // N_a x noise_dim
    let c = split_linear_vector(n_a, vartheta);
    let mut factor = CMat::zeros(n_a, e.ncols());
    for i in 0..n_a {
        let ci = c[i].conj();
        for j in 0..e.ncols() {
            factor[(i, j)] = ci * e[(i, j)];
        }
    }
    let gamma = &factor * factor.adjoint();
    let ridged = e.ncols() < n_a;
    let mut spectrum = SplitSpectrum { gamma, objective: 0.0, ridged };
    spectrum.objective = spectrum.solve_e1()[0].re;
    spectrum
}

/// Structured split-MUSIC objective: squared projection of the combined
/// manifold vector onto the noise subspace, evaluated through the
/// precomputed factor E = F U_n.
fn split_objective(e: &CMat, c: &CVec, d: &CVec) -> f64 {
    let n = c.len();
    let mut acc = 0.0;
    for j in 0..e.ncols() {
        let mut dot = Complex64::default();
        for i in 0..n {
            dot += e[(i, j)].conj() * (c[i] * d[i]);
        }
        acc += dot.norm_sqr();
    }
    acc
}

fn sweep_linear(e: &CMat, grid: &Grid1d, phi: f64, spectrum: &mut Vec<f64>) -> f64 {
    let n_a = e.nrows();
    let d = split_quadratic_vector(n_a, phi);
    spectrum.clear();
    let mut best = (f64::INFINITY, grid.start);
    for vth in grid.values() {
        let c = split_linear_vector(n_a, vth);
        let obj = split_objective(e, &c, &d);
        spectrum.push(obj);
        if obj < best.0 {
            best = (obj, vth);
        }
    }
    best.1
}

fn sweep_quadratic(e: &CMat, grid: &Grid1d, vth: f64, spectrum: &mut Vec<f64>) -> f64 {
    let n_a = e.nrows();
    let c = split_linear_vector(n_a, vth);
    spectrum.clear();
    let mut best = (f64::INFINITY, grid.start);
    for phi in grid.values() {
        let d = split_quadratic_vector(n_a, phi);
        let obj = split_objective(e, &c, &d);
        spectrum.push(obj);
        if obj < best.0 {
            best = (obj, phi);
        }
    }
    best.1
}

/// Joint profile polish: the alternating sweeps can settle a grid step off
/// the joint minimizer because the two phase parameters are strongly
/// coupled. For each linear-parameter candidate near the current point, a
/// full quadratic-parameter sweep gives the profiled objective; the joint
/// best wins. Cost is O(radius * |phi grid|) per pass.
fn profile_polish(
    e: &CMat,
    vgrid: &Grid1d,
    pgrid: &Grid1d,
    vth: &mut f64,
    phi: &mut f64,
    radius: usize,
    evals: &mut usize,
) {
    if radius == 0 {
        return;
    }
    let n_a = e.nrows();
    let mut scratch = Vec::new();
    for _ in 0..2 {
        let mut best = (f64::INFINITY, *vth, *phi);
        for dv in -(radius as i64)..=(radius as i64) {
            let v = (*vth + dv as f64 * vgrid.step()).clamp(vgrid.start, vgrid.stop);
            let p = sweep_quadratic(e, pgrid, v, &mut scratch);
            *evals += pgrid.points;
            let c = split_linear_vector(n_a, v);
            let d = split_quadratic_vector(n_a, p);
            let obj = split_objective(e, &c, &d);
            if obj < best.0 {
                best = (obj, v, p);
            }
        }
        let moved = best.1 != *vth || best.2 != *phi;
        *vth = best.1;
        *phi = best.2;
        if !moved {
            break;
        }
    }
}

/// Uplink two-stage estimator over the split parameters. Alternates 1D
/// sweeps of the linear (angle) and quadratic (distance) parameters with
/// the structured manifold vector, then maps back to polar coordinates.
/// The first sweep starts from a flat quadratic profile (far-field start).
pub fn uplink_two_stage(
    y_frames: &CMat,
    had: &HadPrecoder,
    cfg_mt: &ArrayConfig,
    vartheta_grid: &Grid1d,
    phi_grid: &Grid1d,
    opts: &TwoStageOptions,
) -> Result<PositionEstimate, PositioningError> {
    let u_n = noise_subspace(y_frames, 1)?;
    let e = had.analog_matrix() * u_n;

    let mut phi_hat = 0.0;
    let mut vth_hat;
    let mut evals = 0usize;
    let mut spectrum_vth = Vec::new();
    let mut spectrum_phi = Vec::new();

    vth_hat = sweep_linear(&e, vartheta_grid, phi_hat, &mut spectrum_vth);
    evals += vartheta_grid.points;
    phi_hat = sweep_quadratic(&e, phi_grid, vth_hat, &mut spectrum_phi);
    evals += phi_grid.points;
    for _ in 1..opts.rounds.max(1) {
        vth_hat = sweep_linear(&e, vartheta_grid, phi_hat, &mut spectrum_vth);
        phi_hat = sweep_quadratic(&e, phi_grid, vth_hat, &mut spectrum_phi);
        evals += vartheta_grid.points + phi_grid.points;
    }
    profile_polish(
        &e,
        vartheta_grid,
        phi_grid,
        &mut vth_hat,
        &mut phi_hat,
        opts.polish_radius,
        &mut evals,
    );

    // Zoomed joint refinement. A linear-parameter offset dv is best
    // compensated by a quadratic-parameter offset of roughly coup*dv (the
    // least-squares slope between the linear and quadratic phase ramps), so
    // each refined quadratic grid must span that coupling band or the true
    // joint minimizer escapes it.
    let n_a = had.n_antennas();
    let coup = {
        let s3: f64 = (0..n_a).map(|n| (n as f64).powi(3)).sum();
        let s4: f64 = (0..n_a).map(|n| (n as f64).powi(4)).sum();
        s3 / s4
    };
    let mut scratch = Vec::new();
    let mut vstep = vartheta_grid.step();
    let mut pstep = phi_grid.step();
    for _ in 0..opts.refine_levels {
        vstep /= opts.zoom;
        let half_v = vstep * (opts.refine_points as f64 - 1.0) / 2.0;
        let vg = Grid1d { start: vth_hat - half_v, stop: vth_hat + half_v, points: opts.refine_points };
        let new_pstep = pstep / opts.zoom;
        let half_p = coup * half_v + 2.0 * pstep;
        let p_points = (((2.0 * half_p / new_pstep).ceil() as usize + 1).max(opts.refine_points)) | 1;
        let pg = Grid1d { start: phi_hat - half_p, stop: phi_hat + half_p, points: p_points };
        let mut best = (f64::INFINITY, vth_hat, phi_hat);
        for v in vg.values() {
            let p = sweep_quadratic(&e, &pg, v, &mut scratch);
            evals += pg.points;
            let c = split_linear_vector(n_a, v);
            let d = split_quadratic_vector(n_a, p);
            let obj = split_objective(&e, &c, &d);
            if obj < best.0 {
                best = (obj, v, p);
            }
        }
        vth_hat = best.1;
        phi_hat = best.2;
        pstep = new_pstep;
    }

    let (theta, r) = target_from_split(cfg_mt, vth_hat, phi_hat)?;
    Ok(PositionEstimate {
        theta_rad: theta,
        range_m: r,
        beta: None,
        spectrum_stage1: spectrum_vth,
        spectrum_stage2: spectrum_phi,
        objective_evals: evals,
    })
}
