//! Uplink design: probe covariance at the assisting transceiver, per-user
//! digital combiners, and analog combining phases minimizing the
//! position-CRB trace subject to per-user SINR and the probe power budget.
//!
//! The outer loop alternates two blocks: the digital block is handled by
//! successive convex approximation (the probe-interference term in the SINR
//! constraint is bilinear and gets a tight convex majorizer), the analog
//! block by the same penalty dual decomposition pattern as the downlink.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;

use super::{
    min_eig, modulus_deviation, trace_inverse, unscale_epigraph, DesignAudit, DesignProblem,
    OptimError, OptimSettings, PddState,
};
use crate::sdp::{
    gaussian_randomization, LinExpr, MatExpr, SdpError, SdpProblem, SolveStatus,
};
use crate::signal::{selection_matrix, uplink_interference_covariance, uplink_sinr, HadPrecoder, UplinkTx};
use crate::{CMat, CVec};

/// Finished uplink design with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct UplinkSolution {
    pub had: HadPrecoder,
    pub tx: UplinkTx,
    /// Physical-units epigraph matrix from the last digital solve.
    pub u_matrix: Matrix2<f64>,
    /// Physical tr(CRB) after each outer alternating iteration.
    pub objective_trace: Vec<f64>,
    /// Per-iteration diagnostics of the inner loops.
    pub sca_iterations: Vec<usize>,
    pub pdd_violations: Vec<f64>,
    pub converged: bool,
    pub randomization_failures: usize,
}

/// Scaled coefficient matrices for the information LMI in the probe
/// covariance: entry (l, p) of the normalized FIM is Re tr(R_u * C[l][p]).
fn fim_coeffs_probe(prob: &DesignProblem, f_mat: &CMat) -> Vec<Vec<CMat>> {
    let fam = prob.derivs.weighted_family(prob.target.beta);
    let pref = 2.0 * prob.scenario.t_slots as f64 / prob.scenario.sigma_u_sq;
    let d = &prob.dscale_up;
    let ff = f_mat * f_mat.adjoint();
    let raw: Vec<Vec<CMat>> = (0..4)
        .map(|l| {
            (0..4)
                .map(|p| {
                    (fam[l].adjoint() * &ff * &fam[p]) * Complex64::new(pref * d[l] * d[p], 0.0)
                })
                .collect()
        })
        .collect();
    (0..4)
        .map(|i| (0..4).map(|j| (&raw[i][j] + &raw[j][i]) * Complex64::new(0.5, 0.0)).collect())
        .collect()
}

/// Scaled coefficient matrices for the information LMI in the combining
/// outer product: entry (l, p) of the normalized FIM is Re tr(Q * C[l][p]).
fn fim_coeffs_combining(prob: &DesignProblem, r_u: &CMat) -> Vec<Vec<CMat>> {
    let fam = prob.derivs.weighted_family(prob.target.beta);
    let pref = 2.0 * prob.scenario.t_slots as f64 / prob.scenario.sigma_u_sq;
    let d = &prob.dscale_up;
    let raw: Vec<Vec<CMat>> = (0..4)
        .map(|l| {
            (0..4)
                .map(|p| {
                    (&fam[p] * r_u * fam[l].adjoint()) * Complex64::new(pref * d[l] * d[p], 0.0)
                })
                .collect()
        })
        .collect();
    (0..4)
        .map(|i| (0..4).map(|j| (&raw[i][j] + &raw[j][i]) * Complex64::new(0.5, 0.0)).collect())
        .collect()
}

fn add_fim_lmi(
    p: &mut SdpProblem,
    cov: crate::sdp::BlockId,
    u: crate::sdp::BlockId,
    coeffs: &[Vec<CMat>],
) {
    let mut lmi = MatExpr::zeros(4);
    for i in 0..4 {
        for j in i..4 {
            let expr = p.re_trace(cov, &coeffs[i][j]);
            let dst = lmi.entry_mut(i, j);
            dst.re = std::mem::take(&mut dst.re).plus(&expr);
        }
    }
    p.place_block(&mut lmi, u, -1.0, 0);
    p.psd(lmi);
}

/// One digital block state: probe covariance and per-user beam matrices.
#[derive(Debug, Clone)]
pub struct ScaState {
    pub r_u: CMat,
    pub w_mats: Vec<CMat>,
    pub iterations: usize,
}

/// Tight convex majorizer bookkeeping for the bilinear probe-interference
/// term 2 tr(W G R G^H): returns the linear remainder at the expansion point
/// (everything except the joint square term).
fn majorizer_linear_terms(
    p: &SdpProblem,
    w_blk: crate::sdp::BlockId,
    r_blk: crate::sdp::BlockId,
    w_prev: &CMat,
    ghg_prev: &CMat,
    ghg_map: &CMat,
) -> LinExpr {
    // -||W||^2 <= ||W_n||^2 - 2 tr(W_n W); -||GRG||^2 likewise through the
    // pulled-back gradient G^H G R_n G^H G.
    let const_part = w_prev.norm_squared() + ghg_prev.norm_squared();
    LinExpr::constant(const_part)
        .minus(&p.re_trace(w_blk, w_prev).scaled(2.0))
        .minus(&p.re_trace(r_blk, ghg_map).scaled(2.0))
}

/// Digital block via successive convex approximation with the analog stage
/// fixed. Returns the epigraph, the probe covariance, and the relaxed beam
/// matrices at the last iterate.
pub fn sca_uplink_digital(
    prob: &DesignProblem,
    had: &HadPrecoder,
    init: &ScaState,
    settings: &OptimSettings,
) -> Result<(Matrix2<f64>, ScaState), OptimError> {
    let n_rf = had.n_rf();
    let n_b = prob.at.n_antennas;
    let k_users = prob.scenario.k_users;
    let f_mat = had.analog_matrix();
    let h_scaled = prob.scaled_channels();
    let g_scaled = prob.scaled_g();
    let g_hat = f_mat.adjoint() * &g_scaled; // N_RF x N_b
    let sigma_u = prob.scaled_sigma_u_sq();
    let p_u = prob.scenario.p_u;
    let h_hat: Vec<CVec> =
        h_scaled.iter().map(|h| (f_mat.adjoint() * h) * Complex64::new(p_u.sqrt(), 0.0)).collect();

    let coeffs = fim_coeffs_probe(prob, &f_mat);
    let mut state = init.clone();
    let mut u_norm = Matrix2::zeros();
    let mut prev_obj = f64::INFINITY;
    let mut iterations = 0usize;

    for _ in 0..settings.max_sca {
        let mut p = SdpProblem::new();
        let u = p.psd_symmetric_block(2);
        let dsc = &prob.dscale_up;
        let os = prob.obj_scale_up;
        p.add_inverse_diag_objective(u, &[dsc[0] * dsc[0] / os, dsc[1] * dsc[1] / os]);
        let r_u = p.psd_hermitian_block(n_b);
        let w: Vec<_> = (0..k_users).map(|_| p.psd_hermitian_block(n_rf)).collect();
        add_fim_lmi(&mut p, r_u, u, &coeffs);
        p.le(p.trace_expr(r_u), LinExpr::constant(prob.scenario.p_s));

        for k in 0..k_users {
            // A_k gathers other-user interference, the (1/gamma)-weighted
            // desired term, and white noise after semi-unitary combining.
            let gamma = prob.scenario.qos[k];
            let mut a_k = CMat::identity(n_rf, n_rf) * Complex64::new(sigma_u, 0.0);
            for (i, hi) in h_hat.iter().enumerate() {
                let outer = CMat::from_fn(n_rf, n_rf, |r, c| hi[r] * hi[c].conj());
                if i == k {
                    a_k -= outer * Complex64::new(1.0 / gamma, 0.0);
                } else {
                    a_k += outer;
                }
            }
            // Joint square term of the majorizer.
            let mut sq = MatExpr::zeros(n_rf);
            p.place_block(&mut sq, w[k], 1.0, 0);
            p.add_congruence(&mut sq, &g_hat, r_u, 1.0);
            let t = p.sq_norm_epigraph(p.frobenius_rows(&sq));

            let ghg_prev = &g_hat * &state.r_u * g_hat.adjoint();
            let ghg_map = g_hat.adjoint() * &ghg_prev * &g_hat;
            let lin = majorizer_linear_terms(&p, w[k], r_u, &state.w_mats[k], &ghg_prev, &ghg_map);
            let lhs = p.re_trace(w[k], &a_k).plus(&t).plus(&lin);
            p.le(lhs, LinExpr::constant(0.0));
        }

        let sol = p.solve(&settings.sdp)?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                let worst = worst_qos_user(prob);
                return Err(OptimError::Infeasible {
                    user: worst,
                    gamma_db: 10.0 * prob.scenario.qos[worst].log10(),
                });
            }
            s => return Err(OptimError::Solver(s)),
        }
        let u_scaled: Matrix2<f64> = sol.sym_value(&p, u).fixed_view::<2, 2>(0, 0).into();
        u_norm = unscale_epigraph(&u_scaled, &prob.dscale_up);
        state.r_u = sol.block_value(&p, r_u);
        state.w_mats = w.iter().map(|wk| sol.block_value(&p, *wk)).collect();
        iterations += 1;

        let obj = sol.objective;
        if prev_obj.is_finite() {
            let decrease = (prev_obj - obj) / prev_obj.abs().max(1e-12);
            if decrease < settings.eps_sca {
                prev_obj = obj;
                break;
            }
        }
        prev_obj = obj;
    }
    state.iterations = iterations;
    let _ = prev_obj;
    Ok((u_norm, state))
}

/// Extracts per-user combiner vectors from the relaxed beam matrices:
/// unit-modulus randomization draws screened by the exact SINR, with the
/// max-SINR (whitened matched) combiner as deterministic fallback.
pub fn extract_combiners(
    prob: &DesignProblem,
    had: &HadPrecoder,
    state: &ScaState,
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<(Vec<CVec>, usize), OptimError> {
    let k_users = prob.scenario.k_users;
    let f_mat = had.analog_matrix();
    let h_scaled = prob.scaled_channels();
    let g_scaled = prob.scaled_g();
    let sigma_u = prob.scaled_sigma_u_sq();
    let p_u = prob.scenario.p_u;
    let mut combiners = Vec::with_capacity(k_users);
    let mut failures = 0usize;

    for k in 0..k_users {
        let gamma = prob.scenario.qos[k];
        let sinr_of = |w: &CVec| {
            let tx = probe_tx(state, w, k, k_users);
            uplink_sinr(&h_scaled, k, had, &tx, &g_scaled, p_u, sigma_u)
        };
        let drawn = gaussian_randomization(
            &state.w_mats[k],
            |w| {
                let s = sinr_of(w);
                if s >= gamma * (1.0 - 1e-9) {
                    Some(-s)
                } else {
                    None
                }
            },
            settings.randomization_samples,
            rng,
        );
        match drawn {
            Ok((w, _)) => combiners.push(w),
            Err(SdpError::NoFeasibleSample(_)) => {
                // Whitened matched combiner maximizes the SINR outright.
                failures += 1;
                let r_int = uplink_interference_covariance(
                    &h_scaled,
                    k,
                    &g_scaled,
                    &state.r_u,
                    p_u,
                    sigma_u,
                );
                let fr = f_mat.adjoint() * &r_int * &f_mat;
                let rhs = f_mat.adjoint() * &h_scaled[k];
                let w = fr
                    .lu()
                    .solve(&rhs)
                    .unwrap_or_else(|| f_mat.adjoint() * &h_scaled[k]);
                let norm = w.norm().max(1e-300);
                let w = crate::sdp::canonical_phase(w / Complex64::new(norm, 0.0));
                combiners.push(w);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((combiners, failures))
}

fn probe_tx(state: &ScaState, w: &CVec, k: usize, k_users: usize) -> UplinkTx {
    let mut combiners = vec![CVec::zeros(w.len()); k_users];
    combiners[k] = w.clone();
    UplinkTx { r_probe: state.r_u.clone(), combiners }
}

fn worst_qos_user(prob: &DesignProblem) -> usize {
    prob.scenario
        .qos
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// Analog block: penalty dual decomposition over the combining outer
/// product with the digital block fixed.
pub fn pdd_uplink_analog(
    prob: &DesignProblem,
    had0: &HadPrecoder,
    state: &ScaState,
    combiners: &[CVec],
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<(HadPrecoder, Matrix2<f64>, Vec<f64>, usize), OptimError> {
    let n_a = prob.mt.n_antennas;
    let n_rf = had0.n_rf();
    let phi = selection_matrix(n_a, n_rf);
    let k_map = &phi * phi.adjoint();
    let h_scaled = prob.scaled_channels();
    let g_scaled = prob.scaled_g();
    let sigma_u = prob.scaled_sigma_u_sq();
    let p_u = prob.scenario.p_u;
    let coeffs = fim_coeffs_combining(prob, &state.r_u);

    // SINR data in the phase outer product.
    let grg = &g_scaled * &state.r_u * g_scaled.adjoint();
    let b_mats: Vec<CMat> = (0..prob.scenario.k_users)
        .map(|k| {
            let gamma = prob.scenario.qos[k];
            let w_hat = &phi * &combiners[k];
            let dw = CMat::from_diagonal(&w_hat);
            let mut b = CMat::zeros(n_a, n_a);
            for (i, hi) in h_scaled.iter().enumerate() {
                let v = dw.adjoint() * hi;
                let outer = CMat::from_fn(n_a, n_a, |r, c| v[r] * v[c].conj());
                if i == k {
                    b += outer * Complex64::new(p_u / gamma, 0.0);
                } else {
                    b -= outer * Complex64::new(p_u, 0.0);
                }
            }
            b -= dw.adjoint() * &grg * &dw;
            b
        })
        .collect();
    let w_norms: Vec<f64> = combiners.iter().map(|w| w.norm_squared()).collect();

    let mut had = had0.clone();
    let mut pdd = PddState::new(n_a, settings.rho0, settings.mu);
    let mut u_norm = Matrix2::zeros();
    let mut violations = Vec::new();
    let mut failures = 0usize;
    let mut q_val = {
        let f = had.f_vec();
        CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * f[i] * f[j].conj())
    };

    for _outer in 0..settings.max_outer {
        let mut prev_al = f64::INFINITY;
        for _inner in 0..settings.max_inner {
            // (a) epigraph and auxiliary covariance with the phases fixed.
            let c_target = {
                let f = had.f_vec();
                CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * f[i] * f[j].conj())
                    + &pdd.upsilon * Complex64::new(pdd.rho, 0.0)
            };
            let mut p = SdpProblem::new();
            let u = p.psd_symmetric_block(2);
            let dsc = &prob.dscale_up;
            let os = prob.obj_scale_up;
            p.add_inverse_diag_objective(u, &[dsc[0] * dsc[0] / os, dsc[1] * dsc[1] / os]);
            let q = p.hermitian_block(n_a);
            add_fim_lmi(&mut p, q, u, &coeffs);
            let mut pen = MatExpr::zeros(n_a);
            p.place_block(&mut pen, q, 1.0, 0);
            pen.add_const(&c_target, -1.0);
            let rows = p.frobenius_rows(&pen);
            p.add_quadratic_penalty(1.0 / (2.0 * pdd.rho), rows);
            let sol = p.solve(&settings.sdp)?;
            if sol.status != SolveStatus::Optimal {
                return Err(OptimError::Solver(sol.status));
            }
            let u_scaled: Matrix2<f64> = sol.sym_value(&p, u).fixed_view::<2, 2>(0, 0).into();
            u_norm = unscale_epigraph(&u_scaled, &prob.dscale_up);
            q_val = sol.block_value(&p, q);
            let al_q = sol.objective;

            // (b) phases with the epigraph fixed.
            let c_phase = &q_val - &pdd.upsilon * Complex64::new(pdd.rho, 0.0);
            let mut p2 = SdpProblem::new();
            let fhat = p2.psd_hermitian_block(n_a);
            for i in 0..n_a {
                let e = p2.entry_expr(fhat, i, i);
                p2.eq(e.re.minus(&LinExpr::constant(1.0)));
            }
            for (k, b_k) in b_mats.iter().enumerate() {
                // SINR >= gamma in trace form over the phase outer product.
                let _ = k;
                let lhs = LinExpr::constant(sigma_u * w_norms[k]);
                p2.le(lhs, p2.re_trace(fhat, b_k));
            }
            let mut pen2 = MatExpr::zeros(n_a);
            pen2.add_const(&c_phase, 1.0);
            p2.add_hadamard(&mut pen2, &k_map, fhat, -1.0);
            let rows2 = p2.frobenius_rows(&pen2);
            p2.add_quadratic_penalty(1.0 / (2.0 * pdd.rho), rows2);
            let sol2 = p2.solve(&settings.sdp)?;

            let mut accepted = false;
            if sol2.status == SolveStatus::Optimal {
                let fhat_sdr = sol2.block_value(&p2, fhat);
                let tx = UplinkTx { r_probe: state.r_u.clone(), combiners: combiners.to_vec() };
                let tr_u_inv = trace_inverse(&u_norm) / prob.obj_scale_up;
                let eval = |f: &CVec| -> Option<f64> {
                    let phases = nalgebra::DVector::from_fn(n_a, |i, _| f[i].arg());
                    let cand = had.with_phases(phases);
                    for k in 0..prob.scenario.k_users {
                        let sinr = uplink_sinr(&h_scaled, k, &cand, &tx, &g_scaled, p_u, sigma_u);
                        if sinr < prob.scenario.qos[k] * (1.0 - 1e-9) {
                            return None;
                        }
                    }
                    let ff = CMat::from_fn(n_a, n_a, |i, j| f[i] * f[j].conj());
                    let dev =
                        &c_phase - CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * ff[(i, j)]);
                    Some(dev.norm_squared())
                };
                match gaussian_randomization(&fhat_sdr, eval, settings.randomization_samples, rng)
                {
                    Ok((f, pen_val)) => {
                        let al_new = tr_u_inv + pen_val / (2.0 * pdd.rho);
                        if al_new <= al_q * (1.0 + 1e-9) + 1e-12 {
                            let phases = nalgebra::DVector::from_fn(n_a, |i, _| f[i].arg());
                            had = had.with_phases(phases);
                            accepted = true;
                        }
                    }
                    Err(SdpError::NoFeasibleSample(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if !accepted {
                failures += 1;
            }

            let al_now = {
                let f = had.f_vec();
                let cur = CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * f[i] * f[j].conj());
                let dev = &q_val - cur - &pdd.upsilon * Complex64::new(pdd.rho, 0.0);
                trace_inverse(&u_norm) / prob.obj_scale_up + dev.norm_squared() / (2.0 * pdd.rho)
            };
            if prev_al.is_finite()
                && (prev_al - al_now) / prev_al.abs().max(1e-12) < settings.eps_ao
            {
                break;
            }
            prev_al = al_now;
        }

        let f = had.f_vec();
        let cur = CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * f[i] * f[j].conj());
        let residual = &q_val - cur;
        let violation = pdd.update(&residual);
        violations.push(violation);
        if violation < settings.eps_pdd {
            break;
        }
    }
    Ok((had, u_norm, violations, failures))
}

/// Feasible digital starting point: isotropic probing scaled down until the
/// max-SINR combiners clear the QoS, with matched-beam matrices.
fn initial_state(
    prob: &DesignProblem,
    had: &HadPrecoder,
) -> Result<(ScaState, Vec<CVec>), OptimError> {
    let n_b = prob.at.n_antennas;
    let n_rf = had.n_rf();
    let f_mat = had.analog_matrix();
    let h_scaled = prob.scaled_channels();
    let g_scaled = prob.scaled_g();
    let sigma_u = prob.scaled_sigma_u_sq();
    let p_u = prob.scenario.p_u;

    let mut scale = 1.0f64;
    for _ in 0..24 {
        let r_u = CMat::identity(n_b, n_b) * Complex64::new(scale * prob.scenario.p_s / n_b as f64, 0.0);
        let mut combiners = Vec::with_capacity(prob.scenario.k_users);
        let mut feasible = true;
        for k in 0..prob.scenario.k_users {
            let r_int = uplink_interference_covariance(&h_scaled, k, &g_scaled, &r_u, p_u, sigma_u);
            let fr = f_mat.adjoint() * &r_int * &f_mat;
            let rhs = f_mat.adjoint() * &h_scaled[k];
            let w = match fr.clone().lu().solve(&rhs) {
                Some(w) => w,
                None => rhs.clone(),
            };
            let norm = w.norm().max(1e-300);
            let w = crate::sdp::canonical_phase(w / Complex64::new(norm, 0.0));
            let tx = UplinkTx { r_probe: r_u.clone(), combiners: vec![w.clone(); prob.scenario.k_users] };
            let sinr = uplink_sinr(&h_scaled, k, had, &tx, &g_scaled, p_u, sigma_u);
            if sinr < prob.scenario.qos[k] * (1.0 + 1e-6) {
                feasible = false;
                break;
            }
            combiners.push(w);
        }
        if feasible {
            let w_mats = combiners
                .iter()
                .map(|w| CMat::from_fn(n_rf, n_rf, |i, j| w[i] * w[j].conj()))
                .collect();
            return Ok((ScaState { r_u, w_mats, iterations: 0 }, combiners));
        }
        scale *= 0.25;
        if scale < 1e-12 {
            break;
        }
    }
    let worst = worst_qos_user(prob);
    Err(OptimError::Infeasible { user: worst, gamma_db: 10.0 * prob.scenario.qos[worst].log10() })
}

/// Full uplink designer: outer alternation between the SCA digital block
/// and the PDD analog block, with a monotone acceptance safeguard on the
/// physical CRB trace.
pub fn ao_uplink(
    prob: &DesignProblem,
    n_rf: usize,
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<UplinkSolution, OptimError> {
    let n_a = prob.mt.n_antennas;
    assert_eq!(n_a % n_rf, 0, "antenna count must divide into RF chains");
    let mut had = HadPrecoder::random(n_a, n_rf, rng)?;
    let (mut state, mut combiners) = initial_state(prob, &had)?;

    let mut u_final = Matrix2::zeros();
    let mut objective_trace = Vec::new();
    let mut sca_iterations = Vec::new();
    let mut pdd_violations = Vec::new();
    let mut randomization_failures = 0usize;
    let mut converged = false;
    let mut best_obj = f64::INFINITY;

    for _it in 0..settings.max_ao {
        let (u_norm, new_state) = sca_uplink_digital(prob, &had, &state, settings)?;
        sca_iterations.push(new_state.iterations);
        state = new_state;
        let (cands, fails) = extract_combiners(prob, &had, &state, settings, rng)?;
        combiners = cands;
        randomization_failures += fails;
        u_final = u_norm;

        let obj_digital = prob.uplink_crb_trace(&had.analog_matrix(), &state.r_u)?;

        let (had_new, u_analog, violations, fails2) =
            pdd_uplink_analog(prob, &had, &state, &combiners, settings, rng)?;
        randomization_failures += fails2;
        if let Some(v) = violations.last() {
            pdd_violations.push(*v);
        }
        let obj_analog = prob.uplink_crb_trace(&had_new.analog_matrix(), &state.r_u)?;
        // The analog block is accepted only when it does not worsen the
        // physical objective (randomized recovery has no such guarantee).
        let obj_now = if obj_analog <= obj_digital * (1.0 + 1e-9) {
            had = had_new;
            u_final = u_analog;
            obj_analog
        } else {
            randomization_failures += 1;
            obj_digital
        };
        objective_trace.push(obj_now);

        if best_obj.is_finite() {
            let decrease = (best_obj - obj_now) / best_obj.abs().max(1e-12);
            if (0.0..settings.eps_ao).contains(&decrease) {
                converged = true;
                break;
            }
        }
        best_obj = best_obj.min(obj_now);
    }

    Ok(UplinkSolution {
        had,
        tx: UplinkTx { r_probe: state.r_u.clone(), combiners },
        u_matrix: u_final,
        objective_trace,
        sca_iterations,
        pdd_violations,
        converged,
        randomization_failures,
    })
}

/// Fully digital lower bound: identity combining leaves a single SCA run.
pub fn solve_uplink_fd(
    prob: &DesignProblem,
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<UplinkSolution, OptimError> {
    let n_a = prob.mt.n_antennas;
    let had = HadPrecoder::fully_digital(n_a);
    let (state0, _) = initial_state(prob, &had)?;
    let (u_norm, state) = sca_uplink_digital(prob, &had, &state0, settings)?;
    let (combiners, fails) = extract_combiners(prob, &had, &state, settings, rng)?;
    let obj = prob.uplink_crb_trace(&had.analog_matrix(), &state.r_u)?;
    Ok(UplinkSolution {
        had,
        tx: UplinkTx { r_probe: state.r_u.clone(), combiners },
        u_matrix: u_norm,
        objective_trace: vec![obj],
        sca_iterations: vec![state.iterations],
        pdd_violations: Vec::new(),
        converged: true,
        randomization_failures: fails,
    })
}

/// Independent feasibility audit against the physical channel model.
pub fn audit_uplink(prob: &DesignProblem, sol: &UplinkSolution) -> DesignAudit {
    let g_phys = prob.derivs.g_tilde.map(|e| e * prob.target.beta);
    let mut worst_margin = f64::INFINITY;
    for k in 0..prob.scenario.k_users {
        let sinr = uplink_sinr(
            &prob.channels,
            k,
            &sol.had,
            &sol.tx,
            &g_phys,
            prob.scenario.p_u,
            prob.scenario.sigma_u_sq,
        );
        worst_margin = worst_margin.min(sinr - prob.scenario.qos[k]);
    }
    DesignAudit {
        worst_sinr_margin: worst_margin,
        power_slack: prob.scenario.p_s - sol.tx.r_probe.trace().re,
        max_modulus_dev: modulus_deviation(&sol.had),
        min_probe_eig: min_eig(&sol.tx.r_probe),
    }
}
