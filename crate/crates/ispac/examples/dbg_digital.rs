use ispac::optim::{DesignProblem, OptimSettings, PddState};
use ispac::fim::TargetParams;
use ispac::geometry::{make_comm_channel, two_hop_sensing_gain, ArrayConfig, PathLossModel, PolarPoint};
use ispac::signal::{HadPrecoder, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mt = ArrayConfig::half_wavelength(16, 28e9).unwrap();
    let at = ArrayConfig::half_wavelength(4, 28e9).unwrap();
    let target_pos = PolarPoint::from_degrees(45.0, 20.0).unwrap();
    let beta = two_hop_sensing_gain(&PathLossModel::nyc_los_28ghz(), 20.0, &mut rng).unwrap();
    let mut channels = Vec::new();
    for _ in 0..2 {
        let theta = rng.random_range(-60.0f64..60.0);
        let r = rng.random_range(20.0f64..30.0);
        let user = PolarPoint::from_degrees(theta, r).unwrap();
        channels.push(
            make_comm_channel(&mt, &user, &[], &PathLossModel::nyc_los_28ghz(), &PathLossModel::nyc_nlos_28ghz(), &mut rng).unwrap().h,
        );
    }
    let scenario = ScenarioConfig {
        p_d: 1.0, p_s: 1.0, p_u: 0.1,
        sigma0_sq: 1e-11, sigma_d_sq: 1e-11, sigma_u_sq: 1e-11,
        t_slots: 256, k_users: 2, qos: vec![10.0; 2],
    };
    let prob = DesignProblem::new(mt, at, channels, TargetParams::new(target_pos, beta), scenario).unwrap();
    println!("h_scale = {:.3e}, dscale_down = {:?}", prob.h_scale, prob.dscale_down);
    let j_ref = ispac::fim::fim_downlink(
        &(ispac::CMat::identity(16,16) * num_complex::Complex64::new(1.0/16.0, 0.0)),
        &prob.derivs, prob.target.beta, 256, 1e-11).unwrap();
    println!("J_ref = {:.3e}", j_ref.assembled());
    let had = HadPrecoder::random(16, 4, &mut rng).unwrap();
    let pdd = PddState::new(16, 1.0, 0.6);
    let mut settings = OptimSettings::default();
    settings.sdp.verbose = true;
    match ispac::optim::downlink::debug_solve_digital(&prob, &had, &pdd, &settings) {
        Ok(_) => println!("OK"),
        Err(e) => println!("ERR: {e}"),
    }
}
