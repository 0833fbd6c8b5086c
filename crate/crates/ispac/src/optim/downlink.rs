//! Downlink design: probe covariance, digital precoders, and analog phases
//! minimizing the position-CRB trace subject to per-user SINR and a total
//! power budget.
//!
//! The coupling between the analog stage and the transmit covariance is
//! relaxed through an auxiliary covariance equality whose violation is
//! driven to zero by a penalty dual decomposition double loop; each inner
//! iteration alternates one exact digital solve with one semidefinite-
//! relaxed analog solve followed by unit-modulus randomization.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;

use super::{
    min_eig, modulus_deviation, psd_project, trace_inverse, unscale_epigraph, DesignAudit,
    DesignProblem, OptimError, OptimSettings, PddState,
};
use crate::sdp::{
    gaussian_randomization, rank_one_downlink_recovery, LinExpr, MatExpr, SdpError, SdpProblem,
    SolveStatus,
};
use crate::signal::{downlink_sinr, selection_matrix, DownlinkTx, HadPrecoder};
use crate::{CMat, CVec};

/// Finished downlink design with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct DownlinkSolution {
    pub had: HadPrecoder,
    pub tx: DownlinkTx,
    /// Physical-units epigraph matrix; its inverse trace tracks tr(CRB).
    pub u_matrix: Matrix2<f64>,
    /// Auxiliary transmit covariance at the array output.
    pub q_matrix: CMat,
    /// Augmented-Lagrangian value after every inner step, grouped by outer
    /// iteration; non-increasing within each group.
    pub objective_trace: Vec<Vec<f64>>,
    /// Physical tr(U^{-1}) after each inner digital solve.
    pub crb_proxy_trace: Vec<f64>,
    /// Coupling violation (max-abs entry) after each outer iteration.
    pub violation_trace: Vec<f64>,
    pub converged: bool,
    /// Inner iterations where randomization found no feasible analog update.
    pub randomization_failures: usize,
}

impl DownlinkSolution {
    /// Physical trace of the CRB implied by the final design.
    pub fn crb_trace(&self, prob: &DesignProblem) -> Result<f64, OptimError> {
        let f = self.had.analog_matrix();
        let q = &f * self.tx.combined_covariance() * f.adjoint();
        prob.downlink_crb_trace(&q)
    }
}

/// Scaled coefficient matrices of the information LMI: entry (l, p) of the
/// diagonally balanced FIM (D J D) is Re tr(Q * C[l][p]).
fn fim_coeffs_downlink(prob: &DesignProblem) -> Vec<Vec<CMat>> {
    let fam = prob.derivs.weighted_family(prob.target.beta);
    let pref = 2.0 * prob.scenario.t_slots as f64 / prob.scenario.sigma_d_sq;
    let d = &prob.dscale_down;
    let raw: Vec<Vec<CMat>> = (0..4)
        .map(|l| {
            (0..4)
                .map(|p| {
                    (fam[l].conjugate() * fam[p].transpose())
                        * Complex64::new(pref * d[l] * d[p], 0.0)
                })
                .collect()
        })
        .collect();
    // Symmetrize entry pairs so the assembled LMI is exactly symmetric.
    (0..4)
        .map(|i| (0..4).map(|j| (&raw[i][j] + &raw[j][i]) * Complex64::new(0.5, 0.0)).collect())
        .collect()
}

/// Adds the Schur-form information LMI tied to a covariance block.
fn add_fim_lmi(p: &mut SdpProblem, cov: crate::sdp::BlockId, u: crate::sdp::BlockId, coeffs: &[Vec<CMat>]) {
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

/// Debug hook for inspecting the digital subproblem interactively.
#[doc(hidden)]
pub fn debug_solve_digital(
    prob: &DesignProblem,
    had: &HadPrecoder,
    pdd: &PddState,
    settings: &OptimSettings,
) -> Result<f64, OptimError> {
    solve_digital(prob, had, pdd, settings).map(|d| d.al)
}

/// The transmit covariance fixes the sensing side, but any beam power not
/// needed for the SINR targets can sit in the probe term instead. Jointly
/// shrinking the beams to the smallest scale that still clears every target
/// selects the max-probe representative of the optimal set.
fn shrink_beams_to_qos(
    prob: &DesignProblem,
    had: &HadPrecoder,
    w_vecs: &[CVec],
    r_tilde: &CMat,
) -> Vec<CVec> {
    let h_scaled = prob.scaled_channels();
    let sigma0 = prob.scaled_sigma0_sq();
    let k_users = w_vecs.len();
    let feasible = |c: f64| -> bool {
        let scaled: Vec<CVec> = w_vecs.iter().map(|w| w * Complex64::new(c, 0.0)).collect();
        let w_digital = beams_to_matrix(&scaled, scaled[0].len());
        let mut ww = CMat::zeros(r_tilde.nrows(), r_tilde.ncols());
        for w in &scaled {
            ww += CMat::from_fn(w.len(), w.len(), |i, j| w[i] * w[j].conj());
        }
        let r_probe = psd_project(&(r_tilde - ww));
        let tx = DownlinkTx { w_digital, r_probe };
        (0..k_users).all(|k| {
            downlink_sinr(&h_scaled, k, had, &tx, sigma0)
                >= prob.scenario.qos[k] * (1.0 + 1e-9)
        })
    };
    if k_users == 0 || !feasible(1.0) {
        return w_vecs.to_vec();
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    w_vecs.iter().map(|w| w * Complex64::new(hi, 0.0)).collect()
}

struct DigitalOutcome {
    u_phys: Matrix2<f64>,
    q: CMat,
    r_tilde: CMat,
    w_vecs: Vec<CVec>,
    r_probe: CMat,
    /// Solver objective: tr(U_norm^{-1}) + penalty / (2 rho).
    al: f64,
}

/// Exact digital step: jointly solves for the epigraph, the auxiliary
/// covariance, the transmit covariance, and the per-user beam matrices with
/// the analog stage fixed, then reduces the beams to rank one.
fn solve_digital(
    prob: &DesignProblem,
    had: &HadPrecoder,
    pdd: &PddState,
    settings: &OptimSettings,
) -> Result<DigitalOutcome, OptimError> {
    let n_a = prob.mt.n_antennas;
    let n_rf = had.n_rf();
    let k_users = prob.scenario.k_users;
    let f_mat = had.analog_matrix();
    let h_scaled = prob.scaled_channels();
    let sigma0 = prob.scaled_sigma0_sq();

    let mut p = SdpProblem::new();
    let u = p.psd_symmetric_block(2);
    let d = &prob.dscale_down;
    let os = prob.obj_scale_down;
    p.add_inverse_diag_objective(u, &[d[0] * d[0] / os, d[1] * d[1] / os]);
    let q = p.hermitian_block(n_a);
    let r_tilde = p.hermitian_block(n_rf);
    let w: Vec<_> = (0..k_users).map(|_| p.psd_hermitian_block(n_rf)).collect();

    add_fim_lmi(&mut p, q, u, &fim_coeffs_downlink(prob));

    // Penalty ||Q - F R F^H - rho * Upsilon||^2 / (2 rho).
    let mut pen = MatExpr::zeros(n_a);
    p.place_block(&mut pen, q, 1.0, 0);
    p.add_congruence(&mut pen, &f_mat, r_tilde, -1.0);
    pen.add_const(&(&pdd.upsilon * Complex64::new(pdd.rho, 0.0)), -1.0);
    let rows = p.frobenius_rows(&pen);
    p.add_quadratic_penalty(1.0 / (2.0 * pdd.rho), rows);

    for k in 0..k_users {
        let h_t = f_mat.transpose() * &h_scaled[k];
        let u_k = h_t.map(|e| e.conj());
        let gamma = prob.scenario.qos[k];
        let lhs = p.quad_form(r_tilde, &u_k).plus(&LinExpr::constant(sigma0));
        let rhs = p.quad_form(w[k], &u_k).scaled(1.0 + 1.0 / gamma);
        p.le(lhs, rhs);
    }
    p.le(p.trace_expr(r_tilde), LinExpr::constant(prob.scenario.p_d));
    let mut cap = MatExpr::zeros(n_rf);
    p.place_block(&mut cap, r_tilde, 1.0, 0);
    for wk in &w {
        p.place_block(&mut cap, *wk, -1.0, 0);
    }
    p.psd(cap);

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

    let r_tilde_val = sol.block_value(&p, r_tilde);
    let mut w_vecs = Vec::with_capacity(k_users);
    let mut w_mats = Vec::with_capacity(k_users);
    for (k, wk) in w.iter().enumerate() {
        let w_sdr = sol.block_value(&p, *wk);
        let h_t = f_mat.transpose() * &h_scaled[k];
        let (w_mat, w_vec) = rank_one_downlink_recovery(&w_sdr, &h_t)?;
        w_mats.push(w_mat);
        w_vecs.push(w_vec);
    }
    let w_vecs = shrink_beams_to_qos(prob, had, &w_vecs, &r_tilde_val);
    let w_mats: Vec<CMat> = w_vecs
        .iter()
        .map(|v| CMat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()))
        .collect();
    let mut r_probe = r_tilde_val.clone();
    for wm in &w_mats {
        r_probe -= wm;
    }
    let r_probe = psd_project(&r_probe);
    let u_scaled: Matrix2<f64> = sol.sym_value(&p, u).fixed_view::<2, 2>(0, 0).into();
    Ok(DigitalOutcome {
        u_phys: unscale_epigraph(&u_scaled, &prob.dscale_down),
        q: sol.block_value(&p, q),
        r_tilde: r_tilde_val,
        w_vecs,
        r_probe,
        al: sol.objective,
    })
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

/// Analog step: semidefinite relaxation over the phase outer product with a
/// unit diagonal, SINR kept through fixed digital beams, then unit-modulus
/// randomization. Returns None when no feasible sample emerged.
#[allow(clippy::too_many_arguments)]
fn solve_analog(
    prob: &DesignProblem,
    had: &HadPrecoder,
    digital: &DigitalOutcome,
    pdd: &PddState,
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<Option<HadPrecoder>, OptimError> {
    let n_a = prob.mt.n_antennas;
    let n_rf = had.n_rf();
    let k_users = prob.scenario.k_users;
    let phi = selection_matrix(n_a, n_rf);
    let k_map = &phi * &digital.r_tilde * phi.adjoint();
    let c_target = &digital.q - &pdd.upsilon * Complex64::new(pdd.rho, 0.0);
    let h_scaled = prob.scaled_channels();
    let sigma0 = prob.scaled_sigma0_sq();

    let mut p = SdpProblem::new();
    let fdot = p.psd_hermitian_block(n_a);
    for i in 0..n_a {
        let e = p.entry_expr(fdot, i, i);
        p.eq(e.re.minus(&LinExpr::constant(1.0)));
    }
    for k in 0..k_users {
        // SINR in the phase outer product: the effective per-beam channels
        // are conjugated because the downlink couples through h^T.
        let dh = CMat::from_diagonal(&h_scaled[k]);
        let gamma = prob.scenario.qos[k];
        let mut d_mat = CMat::zeros(n_a, n_a);
        for i in 0..k_users {
            let g_ki = &dh * &phi * &digital.w_vecs[i];
            let outer = CMat::from_fn(n_a, n_a, |r, c| g_ki[r] * g_ki[c].conj()).conjugate();
            if i == k {
                d_mat += outer * Complex64::new(1.0 / gamma, 0.0);
            } else {
                d_mat -= outer;
            }
        }
        let psi = (&dh * &phi * &digital.r_probe * phi.adjoint() * dh.adjoint()).conjugate();
        d_mat -= psi;
        p.le(LinExpr::constant(sigma0), p.re_trace(fdot, &d_mat));
    }
    let mut pen = MatExpr::zeros(n_a);
    pen.add_const(&c_target, 1.0);
    p.add_hadamard(&mut pen, &k_map, fdot, -1.0);
    let rows = p.frobenius_rows(&pen);
    p.add_quadratic_penalty(1.0 / (2.0 * pdd.rho), rows);

    let sol = p.solve(&settings.sdp)?;
    if sol.status != SolveStatus::Optimal {
        // A failed analog relaxation is survivable: keep the previous phases.
        return Ok(None);
    }
    let fdot_sdr = sol.block_value(&p, fdot);

    let w_digital = beams_to_matrix(&digital.w_vecs, n_rf);
    let tx = DownlinkTx { w_digital, r_probe: digital.r_probe.clone() };
    let eval = |f: &CVec| -> Option<f64> {
        let phases = nalgebra::DVector::from_fn(n_a, |i, _| f[i].arg());
        let cand = had.with_phases(phases);
        for k in 0..k_users {
            let sinr = downlink_sinr(&h_scaled, k, &cand, &tx, sigma0);
            if sinr < prob.scenario.qos[k] * (1.0 - 1e-9) {
                return None;
            }
        }
        let ff = CMat::from_fn(n_a, n_a, |i, j| f[i] * f[j].conj());
        let dev = &c_target - CMat::from_fn(n_a, n_a, |i, j| k_map[(i, j)] * ff[(i, j)]);
        Some(dev.norm_squared())
    };
    match gaussian_randomization(&fdot_sdr, eval, settings.randomization_samples, rng) {
        Ok((f, _)) => {
            let phases = nalgebra::DVector::from_fn(n_a, |i, _| f[i].arg());
            Ok(Some(had.with_phases(phases)))
        }
        Err(SdpError::NoFeasibleSample(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn beams_to_matrix(w_vecs: &[CVec], n_rf: usize) -> CMat {
    let mut w = CMat::zeros(n_rf, w_vecs.len());
    for (k, v) in w_vecs.iter().enumerate() {
        w.set_column(k, v);
    }
    w
}

/// Augmented-Lagrangian value at the current iterate.
fn al_value(
    u_phys: &Matrix2<f64>,
    q: &CMat,
    had: &HadPrecoder,
    r_tilde: &CMat,
    pdd: &PddState,
    obj_scale: f64,
) -> f64 {
    let f = had.analog_matrix();
    let dev = q - &f * r_tilde * f.adjoint() - &pdd.upsilon * Complex64::new(pdd.rho, 0.0);
    trace_inverse(u_phys) / obj_scale + dev.norm_squared() / (2.0 * pdd.rho)
}

/// Minimum-power feasibility design for the digital beams at fixed phases;
/// seeds the main loop and doubles as the QoS feasibility check.
fn initial_design(
    prob: &DesignProblem,
    had: &HadPrecoder,
    settings: &OptimSettings,
) -> Result<(Vec<CVec>, Vec<CMat>, CMat, CMat), OptimError> {
    let n_rf = had.n_rf();
    let k_users = prob.scenario.k_users;
    let f_mat = had.analog_matrix();
    let h_scaled = prob.scaled_channels();
    let sigma0 = prob.scaled_sigma0_sq();

    let mut p = SdpProblem::new();
    let w: Vec<_> = (0..k_users).map(|_| p.psd_hermitian_block(n_rf)).collect();
    let mut total_power = LinExpr::default();
    for wk in &w {
        total_power = total_power.plus(&p.trace_expr(*wk));
    }
    p.add_objective(&total_power, 1.0);
    for k in 0..k_users {
        let h_t = f_mat.transpose() * &h_scaled[k];
        let u_k = h_t.map(|e| e.conj());
        let gamma = prob.scenario.qos[k];
        let mut interference = LinExpr::constant(sigma0);
        for wi in &w {
            interference = interference.plus(&p.quad_form(*wi, &u_k));
        }
        let desired = p.quad_form(w[k], &u_k).scaled(1.0 + 1.0 / gamma);
        p.le(interference, desired);
    }
    let sol = p.solve(&settings.sdp)?;
    let worst = worst_qos_user(prob);
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(OptimError::Infeasible {
                user: worst,
                gamma_db: 10.0 * prob.scenario.qos[worst].log10(),
            })
        }
        s => return Err(OptimError::Solver(s)),
    }
    let spent = sol.objective;
    if spent > prob.scenario.p_d {
        return Err(OptimError::Infeasible {
            user: worst,
            gamma_db: 10.0 * prob.scenario.qos[worst].log10(),
        });
    }
    let mut w_vecs = Vec::with_capacity(k_users);
    let mut w_mats = Vec::with_capacity(k_users);
    for (k, wk) in w.iter().enumerate() {
        let w_sdr = sol.block_value(&p, *wk);
        let h_t = f_mat.transpose() * &h_scaled[k];
        let (w_mat, w_vec) = rank_one_downlink_recovery(&w_sdr, &h_t)?;
        w_mats.push(w_mat);
        w_vecs.push(w_vec);
    }
    let slack = (prob.scenario.p_d - spent).max(0.0);
    let r_probe = CMat::identity(n_rf, n_rf) * Complex64::new(slack / n_rf as f64, 0.0);
    let mut r_tilde = r_probe.clone();
    for wm in &w_mats {
        r_tilde += wm;
    }
    Ok((w_vecs, w_mats, r_probe, r_tilde))
}

/// Full downlink designer: penalty dual decomposition double loop with an
/// alternating digital/analog inner loop.
pub fn pdd_downlink(
    prob: &DesignProblem,
    n_rf: usize,
    settings: &OptimSettings,
    rng: &mut impl Rng,
) -> Result<DownlinkSolution, OptimError> {
    let n_a = prob.mt.n_antennas;
    assert_eq!(n_a % n_rf, 0, "antenna count must divide into RF chains");
    let mut had = HadPrecoder::random(n_a, n_rf, rng)?;
    // Feasibility gate: a minimum-power beam design must fit the budget.
    initial_design(prob, &had, settings)?;

    let mut pdd = PddState::new(n_a, settings.rho0, settings.mu);

    let mut objective_trace: Vec<Vec<f64>> = Vec::new();
    let mut crb_proxy_trace: Vec<f64> = Vec::new();
    let mut violation_trace: Vec<f64> = Vec::new();
    let mut randomization_failures = 0usize;
    let mut converged = false;
    let mut last: Option<DigitalOutcome> = None;

    for _outer in 0..settings.max_outer {
        let mut group: Vec<f64> = Vec::new();
        let mut prev_al = f64::INFINITY;
        for _inner in 0..settings.max_inner {
            let digital = solve_digital(prob, &had, &pdd, settings)?;
            let al_d = digital.al;
            group.push(al_d);
            crb_proxy_trace.push(trace_inverse(&digital.u_phys));

            match solve_analog(prob, &had, &digital, &pdd, settings, rng)? {
                Some(cand) => {
                    let al_new = al_value(&digital.u_phys, &digital.q, &cand, &digital.r_tilde, &pdd, prob.obj_scale_down);
                    // Randomization is not guaranteed to improve the exact
                    // objective; keep the previous phases when it does not.
                    if al_new <= al_d * (1.0 + 1e-9) + 1e-12 {
                        had = cand;
                        group.push(al_new);
                    } else {
                        randomization_failures += 1;
                        group.push(al_d);
                    }
                }
                None => {
                    randomization_failures += 1;
                    group.push(al_d);
                }
            }
            last = Some(digital);
            let al_now = *group.last().unwrap();
            if prev_al.is_finite()
                && (prev_al - al_now) / prev_al.abs().max(1e-12) < settings.eps_ao
            {
                break;
            }
            prev_al = al_now;
        }
        objective_trace.push(group);

        let digital = last.as_ref().expect("inner loop ran");
        let f = had.analog_matrix();
        let residual = &digital.q - &f * &digital.r_tilde * f.adjoint();
        let violation = pdd.update(&residual);
        violation_trace.push(violation);
        if violation < settings.eps_pdd {
            converged = true;
            break;
        }
    }

    let digital = last.expect("at least one outer iteration");
    let w_digital = beams_to_matrix(&digital.w_vecs, n_rf);
    Ok(DownlinkSolution {
        had,
        tx: DownlinkTx { w_digital, r_probe: digital.r_probe.clone() },
        u_matrix: digital.u_phys,
        q_matrix: digital.q.clone(),
        objective_trace,
        crb_proxy_trace,
        violation_trace,
        converged,
        randomization_failures,
    })
}

/// Fully digital lower-bound design: one RF chain per antenna removes the
/// coupling entirely, so a single exact solve suffices.
pub fn solve_downlink_fd(
    prob: &DesignProblem,
    settings: &OptimSettings,
) -> Result<DownlinkSolution, OptimError> {
    let n_a = prob.mt.n_antennas;
    let k_users = prob.scenario.k_users;
    let had = HadPrecoder::fully_digital(n_a);
    let h_scaled = prob.scaled_channels();
    let sigma0 = prob.scaled_sigma0_sq();

    let mut p = SdpProblem::new();
    let u = p.psd_symmetric_block(2);
    let d = &prob.dscale_down;
    let os = prob.obj_scale_down;
    p.add_inverse_diag_objective(u, &[d[0] * d[0] / os, d[1] * d[1] / os]);
    let r_tilde = p.hermitian_block(n_a);
    let w: Vec<_> = (0..k_users).map(|_| p.psd_hermitian_block(n_a)).collect();
    add_fim_lmi(&mut p, r_tilde, u, &fim_coeffs_downlink(prob));
    for k in 0..k_users {
        let u_k = h_scaled[k].map(|e| e.conj());
        let gamma = prob.scenario.qos[k];
        let lhs = p.quad_form(r_tilde, &u_k).plus(&LinExpr::constant(sigma0));
        let rhs = p.quad_form(w[k], &u_k).scaled(1.0 + 1.0 / gamma);
        p.le(lhs, rhs);
    }
    p.le(p.trace_expr(r_tilde), LinExpr::constant(prob.scenario.p_d));
    let mut cap = MatExpr::zeros(n_a);
    p.place_block(&mut cap, r_tilde, 1.0, 0);
    for wk in &w {
        p.place_block(&mut cap, *wk, -1.0, 0);
    }
    p.psd(cap);

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
    let r_tilde_val = sol.block_value(&p, r_tilde);
    let mut w_vecs = Vec::with_capacity(k_users);
    let mut w_mats = Vec::with_capacity(k_users);
    for (k, wk) in w.iter().enumerate() {
        let (w_mat, w_vec) =
            rank_one_downlink_recovery(&sol.block_value(&p, *wk), &h_scaled[k])?;
        w_mats.push(w_mat);
        w_vecs.push(w_vec);
    }
    let w_vecs = shrink_beams_to_qos(prob, &had, &w_vecs, &r_tilde_val);
    let w_mats: Vec<CMat> = w_vecs
        .iter()
        .map(|v| CMat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()))
        .collect();
    let mut r_probe = r_tilde_val.clone();
    for wm in &w_mats {
        r_probe -= wm;
    }
    let r_probe = psd_project(&r_probe);
    let u_scaled: Matrix2<f64> = sol.sym_value(&p, u).fixed_view::<2, 2>(0, 0).into();
    let u_phys = unscale_epigraph(&u_scaled, &prob.dscale_down);
    let obj = trace_inverse(&u_phys);
    Ok(DownlinkSolution {
        had,
        tx: DownlinkTx { w_digital: beams_to_matrix(&w_vecs, n_a), r_probe },
        u_matrix: u_phys,
        q_matrix: r_tilde_val,
        objective_trace: vec![vec![obj]],
        crb_proxy_trace: vec![obj],
        violation_trace: vec![0.0],
        converged: true,
        randomization_failures: 0,
    })
}

/// Independent feasibility audit against the physical channel model.
pub fn audit_downlink(prob: &DesignProblem, sol: &DownlinkSolution) -> DesignAudit {
    let k_users = prob.scenario.k_users;
    let mut worst_margin = f64::INFINITY;
    for k in 0..k_users {
        let sinr = downlink_sinr(&prob.channels, k, &sol.had, &sol.tx, prob.scenario.sigma0_sq);
        worst_margin = worst_margin.min(sinr - prob.scenario.qos[k]);
    }
    let spent = sol.tx.combined_covariance().trace().re;
    DesignAudit {
        worst_sinr_margin: worst_margin,
        power_slack: prob.scenario.p_d - spent,
        max_modulus_dev: modulus_deviation(&sol.had),
        min_probe_eig: min_eig(&sol.tx.r_probe),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fim::TargetParams;
    use crate::geometry::{
        make_comm_channel, two_hop_sensing_gain, ArrayConfig, PathLossModel, PolarPoint,
    };
    use crate::signal::ScenarioConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn desk_problem(
        rng: &mut ChaCha8Rng,
        k_users: usize,
        gamma_db: f64,
    ) -> DesignProblem {
        let mt = ArrayConfig::half_wavelength(16, 28e9).unwrap();
        let at = ArrayConfig::half_wavelength(4, 28e9).unwrap();
        let target_pos = PolarPoint::from_degrees(45.0, 20.0).unwrap();
        let beta = two_hop_sensing_gain(&PathLossModel::nyc_los_28ghz(), 20.0, rng).unwrap();
        let mut channels = Vec::new();
        for _ in 0..k_users {
            let theta = rng.random_range(-60.0f64..60.0);
            let r = rng.random_range(20.0f64..30.0);
            let user = PolarPoint::from_degrees(theta, r).unwrap();
            let scats = [
                (
                    PolarPoint::from_degrees(rng.random_range(-60.0..60.0), rng.random_range(20.0..30.0))
                        .unwrap(),
                    rng.random_range(3.0..10.0),
                ),
                (
                    PolarPoint::from_degrees(rng.random_range(-60.0..60.0), rng.random_range(20.0..30.0))
                        .unwrap(),
                    rng.random_range(3.0..10.0),
                ),
            ];
            channels.push(
                make_comm_channel(
                    &mt,
                    &user,
                    &scats,
                    &PathLossModel::nyc_los_28ghz(),
                    &PathLossModel::nyc_nlos_28ghz(),
                    rng,
                )
                .unwrap()
                .h,
            );
        }
        let gamma = 10f64.powf(gamma_db / 10.0);
        let scenario = ScenarioConfig {
            p_d: 1.0,
            p_s: 1.0,
            p_u: 0.1,
            sigma0_sq: 1e-11,
            sigma_d_sq: 1e-11,
            sigma_u_sq: 1e-11,
            t_slots: 256,
            k_users,
            qos: vec![gamma; k_users],
        };
        DesignProblem::new(mt, at, channels, TargetParams::new(target_pos, beta), scenario)
            .unwrap()
    }

    #[test]
    fn epigraph_equals_crb_for_fixed_diagonal_fim() {
        // With the information matrix pinned to a constant diagonal, the
        // optimal epigraph reproduces the CRB trace exactly.
        let mut p = SdpProblem::new();
        let u = p.psd_symmetric_block(2);
        p.add_trace_inverse_objective(u);
        let mut lmi = MatExpr::zeros(4);
        let mut j = CMat::zeros(4, 4);
        for (i, v) in [4.0, 25.0, 2.0, 2.0].iter().enumerate() {
            j[(i, i)] = Complex64::new(*v, 0.0);
        }
        lmi.add_const(&j, 1.0);
        p.place_block(&mut lmi, u, -1.0, 0);
        p.psd(lmi);
        let sol = p.solve(&crate::sdp::SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - (0.25 + 0.04)).abs() < 1e-5, "got {}", sol.objective);
    }

    #[test]
    fn digital_step_meets_qos_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prob = desk_problem(&mut rng, 2, 10.0);
        let had = HadPrecoder::random(16, 4, &mut rng).unwrap();
        let settings = OptimSettings::default();
        let pdd = PddState::new(16, 1.0, 0.6);
        let digital = solve_digital(&prob, &had, &pdd, &settings).unwrap();
        let tx = DownlinkTx {
            w_digital: beams_to_matrix(&digital.w_vecs, 4),
            r_probe: digital.r_probe.clone(),
        };
        for k in 0..2 {
            let sinr = downlink_sinr(&prob.channels, k, &had, &tx, prob.scenario.sigma0_sq);
            assert!(
                sinr >= prob.scenario.qos[k] - 1e-6,
                "user {k}: sinr {sinr} below {}",
                prob.scenario.qos[k]
            );
        }
        let spent = tx.combined_covariance().trace().re;
        assert!(spent <= prob.scenario.p_d + 1e-6, "power {spent}");
    }

    #[test]
    fn near_zero_qos_pours_power_into_sensing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let prob = desk_problem(&mut rng, 1, -60.0);
        let had = HadPrecoder::random(16, 4, &mut rng).unwrap();
        let settings = OptimSettings::default();
        let pdd = PddState::new(16, 1e6, 0.6); // huge rho: penalty negligible
        let digital = solve_digital(&prob, &had, &pdd, &settings).unwrap();
        let probe_power = digital.r_probe.trace().re;
        assert!(
            probe_power > 0.98 * prob.scenario.p_d,
            "probe power {probe_power} below 98% of budget"
        );

        // Sensing-only oracle: drop the SINR constraint entirely.
        let mut p = SdpProblem::new();
        let u = p.psd_symmetric_block(2);
        let d = &prob.dscale_down;
        let os = prob.obj_scale_down;
        p.add_inverse_diag_objective(u, &[d[0] * d[0] / os, d[1] * d[1] / os]);
        let q = p.hermitian_block(16);
        let r_tilde = p.hermitian_block(4);
        add_fim_lmi(&mut p, q, u, &fim_coeffs_downlink(&prob));
        let f_mat = had.analog_matrix();
        let mut pen = MatExpr::zeros(16);
        p.place_block(&mut pen, q, 1.0, 0);
        p.add_congruence(&mut pen, &f_mat, r_tilde, -1.0);
        let rows = p.frobenius_rows(&pen);
        p.add_quadratic_penalty(1.0 / (2.0 * pdd.rho), rows);
        p.le(p.trace_expr(r_tilde), LinExpr::constant(prob.scenario.p_d));
        let mut cap = MatExpr::zeros(4);
        p.place_block(&mut cap, r_tilde, 1.0, 0);
        p.psd(cap);
        let oracle = p.solve(&settings.sdp).unwrap();
        assert_eq!(oracle.status, SolveStatus::Optimal);
        let rel = (digital.al - oracle.objective).abs() / oracle.objective.abs().max(1e-12);
        assert!(rel < 0.02, "objective {} vs sensing-only oracle {}", digital.al, oracle.objective);
    }

    #[test]
    fn infeasible_qos_reports_user() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let prob = desk_problem(&mut rng, 2, 40.0);
        let had = HadPrecoder::random(16, 4, &mut rng).unwrap();
        let err = initial_design(&prob, &had, &OptimSettings::default()).unwrap_err();
        assert!(matches!(err, OptimError::Infeasible { .. }), "got {err:?}");
    }
}
