use ispac::optim::{ao_uplink, pdd_downlink, solve_downlink_fd, solve_uplink_fd, DesignProblem, OptimSettings};
use ispac::harness::{generate_scenario, derive_seed};
use ispac::harness::config::ScenarioBlock;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let block = ScenarioBlock {
        n_mt: 16, n_at: 4, n_rf: 4, mt_aperture_m: 0.5 * 15.0 / 63.0,
        k_users: 2, qos_db: vec![10.0], ..Default::default()
    };
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
        let scn = generate_scenario(&block, 4, &block.qos_db, &mut rng).unwrap();
        let prob = DesignProblem::new(scn.mt, scn.at, scn.channels.clone(), scn.target, scn.scenario.clone()).unwrap();
        let settings = OptimSettings::default();

        let t0 = Instant::now();
        match pdd_downlink(&prob, 4, &settings, &mut rng) {
            Ok(sol) => {
                let audit = ispac::optim::downlink::audit_downlink(&prob, &sol);
                println!("DL seed {seed}: conv={} outers={} viol={:.2e} crb={:.4e} sinr_margin={:.2e} power_slack={:.2e} rand_fail={} [{:.1}s]",
                    sol.converged, sol.violation_trace.len(),
                    sol.violation_trace.last().unwrap_or(&f64::NAN),
                    sol.crb_trace(&prob).unwrap(),
                    audit.worst_sinr_margin, audit.power_slack, sol.randomization_failures,
                    t0.elapsed().as_secs_f64());
                // check monotone AL within groups
                for (gi, g) in sol.objective_trace.iter().enumerate() {
                    if !ispac::optim::is_non_increasing(g, 1e-6) {
                        println!("  !! non-monotone AL in outer {gi}: {g:?}");
                    }
                }
            }
            Err(e) => println!("DL seed {seed}: ERR {e}"),
        }

        let t0 = Instant::now();
        match solve_downlink_fd(&prob, &settings) {
            Ok(sol) => println!("DL-FD seed {seed}: crb={:.4e} [{:.1}s]", sol.crb_trace(&prob).unwrap(), t0.elapsed().as_secs_f64()),
            Err(e) => println!("DL-FD seed {seed}: ERR {e}"),
        }

        let t0 = Instant::now();
        match ao_uplink(&prob, 4, &settings, &mut rng) {
            Ok(sol) => {
                let audit = ispac::optim::uplink::audit_uplink(&prob, &sol);
                println!("UL seed {seed}: conv={} ao_iters={} obj_trace={:?} sinr_margin={:.2e} rand_fail={} [{:.1}s]",
                    sol.converged, sol.objective_trace.len(),
                    sol.objective_trace.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
                    audit.worst_sinr_margin, sol.randomization_failures,
                    t0.elapsed().as_secs_f64());
            }
            Err(e) => println!("UL seed {seed}: ERR {e}"),
        }

        let t0 = Instant::now();
        match solve_uplink_fd(&prob, &settings, &mut rng) {
            Ok(sol) => println!("UL-FD seed {seed}: crb={:.4e} [{:.1}s]",
                prob.uplink_crb_trace(&sol.had.analog_matrix(), &sol.tx.r_probe).unwrap(),
                t0.elapsed().as_secs_f64()),
            Err(e) => println!("UL-FD seed {seed}: ERR {e}"),
        }
    }
}
