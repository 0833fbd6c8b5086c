//! Fisher information and Cramér-Rao bounds for joint angle-distance
//! estimation of a single target.
//!
//! The unknown parameter vector is (theta, r, Re beta, Im beta). Both link
//! directions share the same structure: the echo mean is linear in the
//! sensing channel, so each FIM entry is a trace of channel derivatives
//! weighted by the transmit (downlink) or probe (uplink) covariance. The
//! 2x2 angle-distance CRB is the inverse Schur complement of the gain block.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{
    far_field_steering, near_field_steering, steering_derivatives, ArrayConfig, GeometryError,
    PolarPoint,
};
use crate::CMat;

#[derive(Debug, Error)]
pub enum FimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("covariance input must be Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("Fisher information is singular: {0}")]
    Singular(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Target state entering the FIM: polar position and complex echo gain.
#[derive(Debug, Clone, Copy)]
pub struct TargetParams {
    pub theta_rad: f64,
    pub range_m: f64,
    pub beta: Complex64,
}

impl TargetParams {
    pub fn new(position: PolarPoint, beta: Complex64) -> Self {
        Self { theta_rad: position.theta_rad, range_m: position.range_m, beta }
    }

    pub fn position(&self) -> PolarPoint {
        PolarPoint { theta_rad: self.theta_rad, range_m: self.range_m }
    }
}

/// 4x4 Fisher information in (theta, r, Re beta, Im beta), stored by blocks.
#[derive(Debug, Clone)]
pub struct Fim4 {
    /// Angle-distance block (rad^-2, rad^-1 m^-1, m^-2).
    pub j11: Matrix2<f64>,
    /// Cross block between position and gain parameters.
    pub j12: Matrix2<f64>,
    /// Gain block.
    pub j22: Matrix2<f64>,
}

impl Fim4 {
    pub fn assembled(&self) -> Matrix4<f64> {
        let mut out = Matrix4::zeros();
        out.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.j11);
        out.fixed_view_mut::<2, 2>(0, 2).copy_from(&self.j12);
        out.fixed_view_mut::<2, 2>(2, 0).copy_from(&self.j12.transpose());
        out.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.j22);
        out
    }

    pub fn from_assembled(m: &Matrix4<f64>) -> Self {
        Self {
            j11: m.fixed_view::<2, 2>(0, 0).into(),
            j12: m.fixed_view::<2, 2>(0, 2).into(),
            j22: m.fixed_view::<2, 2>(2, 2).into(),
        }
    }
}

/// 2x2 angle-distance CRB; diagonal units are rad^2 and m^2.
#[derive(Debug, Clone)]
pub struct Crb2 {
    pub matrix: Matrix2<f64>,
}

impl Crb2 {
    pub fn theta_var(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn range_var(&self) -> f64 {
        self.matrix[(1, 1)]
    }

    /// tr(CRB) in rad^2 + m^2, the optimization objective.
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

/// Sensing-channel derivatives without the gain factor: G~ = a b^T plus its
/// angle and range derivatives.
#[derive(Debug, Clone)]
pub struct GMatrixDerivs {
    pub g_tilde: CMat,
    pub g_dtheta: CMat,
    pub g_dr: CMat,
}

impl GMatrixDerivs {
    pub fn n_mt(&self) -> usize {
        self.g_tilde.nrows()
    }

    pub fn n_at(&self) -> usize {
        self.g_tilde.ncols()
    }

    /// Derivative-weighted channel family [beta*dG/dtheta, beta*dG/dr, G~, j*G~]
    /// whose pairwise traces form the FIM entries.
    pub fn weighted_family(&self, beta: Complex64) -> [CMat; 4] {
        let j = Complex64::new(0.0, 1.0);
        [
            self.g_dtheta.map(|e| e * beta),
            self.g_dr.map(|e| e * beta),
            self.g_tilde.clone(),
            self.g_tilde.map(|e| e * j),
        ]
    }
}

/// Analytic derivatives of the unit-gain sensing channel: the range
/// derivative is a single outer product (rank one), the angle derivative
/// collects both steering derivatives (rank at most two).
pub fn g_derivatives(
    cfg_mt: &ArrayConfig,
    cfg_at: &ArrayConfig,
    target: &PolarPoint,
) -> Result<GMatrixDerivs, FimError> {
    let a = near_field_steering(cfg_mt, target)?;
    let b = far_field_steering(cfg_at, target.theta_rad)?;
    let (da_dt, da_dr) = steering_derivatives(cfg_mt, target)?;
    let k_at = cfg_at.wavenumber();
    let d_at = cfg_at.spacing_m;
    let cos_t = target.theta_rad.cos();
    let j = Complex64::new(0.0, 1.0);
    let db_dt = nalgebra::DVector::from_fn(cfg_at.n_antennas, |m, _| {
        b[m] * j * (k_at * m as f64 * d_at * cos_t)
    });

    let outer = |u: &crate::CVec, v: &crate::CVec| {
        CMat::from_fn(u.len(), v.len(), |i, jx| u[i] * v[jx])
    };
    let g_tilde = outer(&a, &b);
    let g_dtheta = outer(&da_dt, &b) + outer(&a, &db_dt);
    let g_dr = outer(&da_dr, &b);
    Ok(GMatrixDerivs { g_tilde, g_dtheta, g_dr })
}

fn check_hermitian(m: &CMat) -> Result<(), FimError> {
    let scale = m.iter().map(|e| e.norm()).fold(0.0f64, f64::max).max(1e-300);
    let asym = (m - m.adjoint()).iter().map(|e| e.norm()).fold(0.0f64, f64::max);
    if asym > 1e-8 * scale.max(1.0) {
        return Err(FimError::NotHermitian(asym));
    }
    Ok(())
}

fn assemble_from_pairs(pair: impl Fn(usize, usize) -> f64) -> Fim4 {
    let mut full = Matrix4::zeros();
    for l in 0..4 {
        for p in 0..4 {
            full[(l, p)] = pair(l, p);
        }
    }
    // Enforce exact symmetry against roundoff in the trace evaluations.
    let sym = (full + full.transpose()) * 0.5;
    Fim4::from_assembled(&sym)
}

/// Downlink FIM with the transmit covariance folded in: entry (l, p) is
/// (2 T / sigma^2) * Re tr(M_p^T Q M_l^*) over the weighted channel family,
/// where Q plays the role of F (W W^H + R) F^H.
pub fn fim_downlink(
    q: &CMat,
    derivs: &GMatrixDerivs,
    beta: Complex64,
    t_slots: usize,
    sigma_d_sq: f64,
) -> Result<Fim4, FimError> {
    if q.nrows() != derivs.n_mt() || q.ncols() != derivs.n_mt() {
        return Err(FimError::Dimension(format!(
            "covariance {}x{} vs {} transmit antennas",
            q.nrows(),
            q.ncols(),
            derivs.n_mt()
        )));
    }
    check_hermitian(q)?;
    let family = derivs.weighted_family(beta);
    let scale = 2.0 * t_slots as f64 / sigma_d_sq;
    Ok(assemble_from_pairs(|l, p| {
        scale * trace_product3(&family[p].transpose(), q, &family[l].conjugate()).re
    }))
}

/// Uplink FIM after analog combining F: entry (l, p) is
/// (2 T / sigma^2) * Re tr(F^H M_p R M_l^H F) over the weighted family.
pub fn fim_uplink(
    f_analog: &CMat,
    derivs: &GMatrixDerivs,
    r_probe: &CMat,
    beta: Complex64,
    t_slots: usize,
    sigma_u_sq: f64,
) -> Result<Fim4, FimError> {
    if f_analog.nrows() != derivs.n_mt() {
        return Err(FimError::Dimension(format!(
            "analog rows {} vs {} receive antennas",
            f_analog.nrows(),
            derivs.n_mt()
        )));
    }
    check_hermitian(r_probe)?;
    // F F^H is the combining projector; reuse the Q-substituted form.
    let q = f_analog * f_analog.adjoint();
    fim_uplink_qform(&q, derivs, r_probe, beta, t_slots, sigma_u_sq)
}

/// Uplink FIM in the substituted form with Q in place of F F^H: entry (l, p)
/// is (2 T / sigma^2) * Re tr(Q M_p R M_l^H). Linear in Q for fixed R and in
/// R for fixed Q, which is what the optimizer subproblems rely on.
pub fn fim_uplink_qform(
    q: &CMat,
    derivs: &GMatrixDerivs,
    r_probe: &CMat,
    beta: Complex64,
    t_slots: usize,
    sigma_u_sq: f64,
) -> Result<Fim4, FimError> {
    if r_probe.nrows() != derivs.n_at() {
        return Err(FimError::Dimension(format!(
            "probe covariance {} vs {} probe antennas",
            r_probe.nrows(),
            derivs.n_at()
        )));
    }
    check_hermitian(q)?;
    let family = derivs.weighted_family(beta);
    let scale = 2.0 * t_slots as f64 / sigma_u_sq;
    Ok(assemble_from_pairs(|l, p| {
        let prod = &family[p] * r_probe * family[l].adjoint();
        scale * trace_product(q, &prod).re
    }))
}

/// tr(A * B) without forming the product.
pub(crate) fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

fn trace_product3(a: &CMat, b: &CMat, c: &CMat) -> Complex64 {
    let bc = b * c;
    trace_product(a, &bc)
}

/// Angle-distance CRB as the inverse Schur complement of the gain block.
pub fn crb_from_fim(fim: &Fim4) -> Result<Crb2, FimError> {
    let j22_inv = fim
        .j22
        .try_inverse()
        .ok_or_else(|| FimError::Singular("gain block J22 not invertible".into()))?;
    let schur = fim.j11 - fim.j12 * j22_inv * fim.j12.transpose();
    // Relative to the Schur complement itself: the gain block lives in
    // different units and would swamp a whole-matrix scale.
    let trace_scale = schur.trace().abs().max(1e-300);
    let eig = schur.symmetric_eigenvalues();
    if eig.min() < 1e-12 * trace_scale {
        return Err(FimError::Singular(format!(
            "Schur complement near-singular (min eigenvalue {:.3e})",
            eig.min()
        )));
    }
    let inv = schur
        .try_inverse()
        .ok_or_else(|| FimError::Singular("Schur complement not invertible".into()))?;
    Ok(Crb2 { matrix: inv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ArrayConfig;
    use crate::signal::{cscg_matrix, HadPrecoder};
    use approx::assert_relative_eq;
    use nalgebra::{DVector, Matrix2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n_mt: usize, n_at: usize) -> (ArrayConfig, ArrayConfig, PolarPoint) {
        (
            ArrayConfig::half_wavelength(n_mt, 28e9).unwrap(),
            ArrayConfig::half_wavelength(n_at, 28e9).unwrap(),
            PolarPoint::from_degrees(45.0, 20.0).unwrap(),
        )
    }

    #[test]
    fn derivatives_zero_for_single_elements() {
        let (mt, at, _) = setup(1, 1);
        let target = PolarPoint::new(0.3, 10.0).unwrap();
        let d = g_derivatives(&mt, &at, &target).unwrap();
        assert!(d.g_dtheta.norm() < 1e-14);
        assert!(d.g_dr.norm() < 1e-14);
    }

    #[test]
    fn g_derivatives_match_finite_differences() {
        let (mt, at, target) = setup(8, 4);
        let d = g_derivatives(&mt, &at, &target).unwrap();
        let h_t = 1e-6;
        let h_r = 1e-4;
        let gt = |theta: f64, r: f64| {
            g_derivatives(&mt, &at, &PolarPoint::new(theta, r).unwrap())
                .unwrap()
                .g_tilde
        };
        let fd_t = (gt(target.theta_rad + h_t, target.range_m)
            - gt(target.theta_rad - h_t, target.range_m))
            / Complex64::new(2.0 * h_t, 0.0);
        let fd_r = (gt(target.theta_rad, target.range_m + h_r)
            - gt(target.theta_rad, target.range_m - h_r))
            / Complex64::new(2.0 * h_r, 0.0);
        assert!((&d.g_dtheta - &fd_t).norm() / fd_t.norm() < 1e-4);
        assert!((&d.g_dr - &fd_r).norm() / fd_r.norm() < 1e-4);
    }

    #[test]
    fn range_derivative_is_rank_one() {
        let (mt, at, target) = setup(8, 4);
        let d = g_derivatives(&mt, &at, &target).unwrap();
        let svd = d.g_dr.clone().svd(false, false);
        let smax = svd.singular_values[0];
        for s in svd.singular_values.iter().skip(1) {
            assert!(*s < 1e-10 * smax);
        }
    }

    #[test]
    fn fim_zero_covariance_gives_zero() {
        let (mt, at, target) = setup(4, 4);
        let d = g_derivatives(&mt, &at, &target).unwrap();
        let beta = Complex64::new(0.5, -0.3);
        let j = fim_downlink(&CMat::zeros(4, 4), &d, beta, 64, 1e-3).unwrap();
        assert!(j.assembled().norm() < 1e-30);
        let ju = fim_uplink_qform(&CMat::identity(4, 4), &d, &CMat::zeros(4, 4), beta, 64, 1e-3)
            .unwrap();
        assert!(ju.assembled().norm() < 1e-30);
    }

    #[test]
    fn fim_scales_linearly_in_slots_and_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mt, at, target) = setup(6, 4);
        let d = g_derivatives(&mt, &at, &target).unwrap();
        let beta = Complex64::new(0.5, -0.3);
        let seed = cscg_matrix(6, 6, &mut rng);
        let q = &seed * seed.adjoint();
        let j1 = fim_downlink(&q, &d, beta, 64, 1e-3).unwrap().assembled();
        let j2 = fim_downlink(&q, &d, beta, 128, 1e-3).unwrap().assembled();
        assert!((j2 - j1 * 2.0).norm() < 1e-9 * j1.norm());

        let seed_r = cscg_matrix(4, 4, &mut rng);
        let r = &seed_r * seed_r.adjoint();
        let r3 = &r * Complex64::new(3.0, 0.0);
        let f = HadPrecoder::random(6, 2, &mut rng).unwrap().analog_matrix();
        let ju1 = fim_uplink(&f, &d, &r, beta, 64, 1e-3).unwrap().assembled();
        let ju3 = fim_uplink(&f, &d, &r3, beta, 64, 1e-3).unwrap().assembled();
        assert!((ju3 - ju1 * 3.0).norm() < 1e-9 * ju1.norm());
    }

    /// Finite-difference Fisher oracle: builds the mean vector u(eta) from a
    /// concrete frame matrix and differentiates it numerically.
    fn fd_fisher_downlink(
        mt: &ArrayConfig,
        at: &ArrayConfig,
        target: &TargetParams,
        x: &CMat,
        sigma_sq: f64,
    ) -> Matrix4<f64> {
        let u = |theta: f64, r: f64, beta: Complex64| -> CMat {
            let d = g_derivatives(mt, at, &PolarPoint::new(theta, r).unwrap()).unwrap();
            let g = d.g_tilde.map(|e| e * beta);
            g.transpose() * x
        };
        let steps = [1e-7, 1e-5, 1e-7, 1e-7];
        let mut du: Vec<CMat> = Vec::new();
        for l in 0..4 {
            let mut eta_p = [target.theta_rad, target.range_m, target.beta.re, target.beta.im];
            let mut eta_m = eta_p;
            eta_p[l] += steps[l];
            eta_m[l] -= steps[l];
            let up = u(eta_p[0], eta_p[1], Complex64::new(eta_p[2], eta_p[3]));
            let um = u(eta_m[0], eta_m[1], Complex64::new(eta_m[2], eta_m[3]));
            du.push((up - um) / Complex64::new(2.0 * steps[l], 0.0));
        }
        let mut j = Matrix4::zeros();
        for l in 0..4 {
            for p in 0..4 {
                let inner: Complex64 =
                    du[l].iter().zip(du[p].iter()).map(|(a, b)| a.conj() * b).sum();
                j[(l, p)] = 2.0 / sigma_sq * inner.re;
            }
        }
        j
    }

    fn fd_fisher_uplink(
        mt: &ArrayConfig,
        at: &ArrayConfig,
        target: &TargetParams,
        f: &CMat,
        s_u: &CMat,
        sigma_sq: f64,
    ) -> Matrix4<f64> {
        let u = |theta: f64, r: f64, beta: Complex64| -> CMat {
            let d = g_derivatives(mt, at, &PolarPoint::new(theta, r).unwrap()).unwrap();
            let g = d.g_tilde.map(|e| e * beta);
            f.adjoint() * g * s_u
        };
        let steps = [1e-7, 1e-5, 1e-7, 1e-7];
        let mut du: Vec<CMat> = Vec::new();
        for l in 0..4 {
            let mut eta_p = [target.theta_rad, target.range_m, target.beta.re, target.beta.im];
            let mut eta_m = eta_p;
            eta_p[l] += steps[l];
            eta_m[l] -= steps[l];
            let up = u(eta_p[0], eta_p[1], Complex64::new(eta_p[2], eta_p[3]));
            let um = u(eta_m[0], eta_m[1], Complex64::new(eta_m[2], eta_m[3]));
            du.push((up - um) / Complex64::new(2.0 * steps[l], 0.0));
        }
        let mut j = Matrix4::zeros();
        for l in 0..4 {
            for p in 0..4 {
                let inner: Complex64 =
                    du[l].iter().zip(du[p].iter()).map(|(a, b)| a.conj() * b).sum();
                j[(l, p)] = 2.0 / sigma_sq * inner.re;
            }
        }
        j
    }

    #[test]
    fn downlink_fim_matches_fd_fisher_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mt, at, pos) = setup(8, 4);
        let target = TargetParams::new(pos, Complex64::new(0.8, -0.4));
        let t = 16;
        let x = cscg_matrix(8, t, &mut rng);
        let sigma = 1e-2;
        // The analytic form takes the empirical covariance as its Q input.
        let q = &x * x.adjoint() / Complex64::new(t as f64, 0.0);
        let d = g_derivatives(&mt, &at, &pos).unwrap();
        let analytic = fim_downlink(&q, &d, target.beta, t, sigma).unwrap().assembled();
        let oracle = fd_fisher_downlink(&mt, &at, &target, &x, sigma);
        let err = (analytic - oracle).norm() / oracle.norm();
        assert!(err < 1e-3, "FIM relative error {err}");
    }

    #[test]
    fn uplink_fim_matches_fd_fisher_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mt, at, pos) = setup(8, 4);
        let target = TargetParams::new(pos, Complex64::new(-0.3, 0.9));
        let t = 16;
        let f = HadPrecoder::random(8, 4, &mut rng).unwrap().analog_matrix();
        let s_u = cscg_matrix(4, t, &mut rng);
        let sigma = 5e-3;
        let r_u = &s_u * s_u.adjoint() / Complex64::new(t as f64, 0.0);
        let d = g_derivatives(&mt, &at, &pos).unwrap();
        let analytic = fim_uplink(&f, &d, &r_u, target.beta, t, sigma).unwrap().assembled();
        let oracle = fd_fisher_uplink(&mt, &at, &target, &f, &s_u, sigma);
        let err = (analytic - oracle).norm() / oracle.norm();
        assert!(err < 1e-3, "FIM relative error {err}");
    }

    #[test]
    fn fim_symmetric_and_psd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mt, at, pos) = setup(8, 4);
        let d = g_derivatives(&mt, &at, &pos).unwrap();
        for _ in 0..10 {
            let beta = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let seed = cscg_matrix(8, 8, &mut rng);
            let q = &seed * seed.adjoint();
            let j = fim_downlink(&q, &d, beta, 32, 1e-2).unwrap().assembled();
            assert!((j - j.transpose()).norm() < 1e-10 * j.norm().max(1.0));
            let eigs = j.symmetric_eigenvalues();
            assert!(eigs.min() > -1e-8 * j.trace().abs());
        }
    }

    #[test]
    fn combining_never_beats_full_observation() {
        // Identity "combining" observes everything the analog stage does and
        // more, so its CRB trace can only be lower.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mt, at, pos) = setup(8, 4);
        let d = g_derivatives(&mt, &at, &pos).unwrap();
        let beta = Complex64::new(0.9, 0.1);
        for trial in 0..20 {
            let had = HadPrecoder::random(8, 4, &mut rng).unwrap();
            let seed = cscg_matrix(4, 4, &mut rng);
            let r_u = &seed * seed.adjoint() + CMat::identity(4, 4) * Complex64::new(0.1, 0.0);
            let j_had = fim_uplink(&had.analog_matrix(), &d, &r_u, beta, 64, 1e-3).unwrap();
            let j_full =
                fim_uplink(&CMat::identity(8, 8), &d, &r_u, beta, 64, 1e-3).unwrap();
            let crb_had = crb_from_fim(&j_had).unwrap().trace();
            let crb_full = crb_from_fim(&j_full).unwrap().trace();
            assert!(
                crb_full <= crb_had * (1.0 + 1e-9),
                "trial {trial}: full {crb_full} > had {crb_had}"
            );
        }
    }

    #[test]
    fn crb_block_diagonal_case() {
        let fim = Fim4 {
            j11: Matrix2::new(4.0, 0.0, 0.0, 25.0),
            j12: Matrix2::zeros(),
            j22: Matrix2::identity(),
        };
        let crb = crb_from_fim(&fim).unwrap();
        assert_relative_eq!(crb.matrix[(0, 0)], 0.25, epsilon = 1e-14);
        assert_relative_eq!(crb.matrix[(1, 1)], 0.04, epsilon = 1e-14);
    }

    #[test]
    fn crb_identity_fim() {
        let fim = Fim4 { j11: Matrix2::identity(), j12: Matrix2::zeros(), j22: Matrix2::identity() };
        let crb = crb_from_fim(&fim).unwrap();
        assert!((crb.matrix - Matrix2::identity()).norm() < 1e-14);
    }

    #[test]
    fn crb_equals_top_left_block_of_full_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = Matrix4::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let j = a * a.transpose() + Matrix4::identity() * 0.1;
            let fim = Fim4::from_assembled(&j);
            let crb = crb_from_fim(&fim).unwrap();
            let full_inv = j.try_inverse().unwrap();
            let top: Matrix2<f64> = full_inv.fixed_view::<2, 2>(0, 0).into();
            assert!((crb.matrix - top).norm() < 1e-10 * top.norm().max(1.0));
        }
    }

    #[test]
    fn singular_fim_is_an_error() {
        let fim = Fim4 {
            j11: Matrix2::new(1.0, 0.0, 0.0, 0.0),
            j12: Matrix2::zeros(),
            j22: Matrix2::identity(),
        };
        assert!(crb_from_fim(&fim).is_err());
    }
}
