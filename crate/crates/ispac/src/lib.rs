//! Near-field integrated sensing, positioning, and communication (ISPAC).
//!
//! A base station built from a large hybrid analog-digital main transceiver
//! and a small fully digital assisting transceiver serves communication users
//! while locating a target in both angle and distance. This crate provides:
//!
//! - array geometry, near/far-field steering vectors and their analytic
//!   derivatives, path loss, and channel synthesis ([`geometry`]);
//! - the partially-connected analog precoder, transmit/echo frame synthesis
//!   over coherent slots, and SINR evaluation for both link directions
//!   ([`signal`]);
//! - the 4x4 Fisher information matrix in (angle, distance, Re gain, Im gain)
//!   and the 2x2 angle-distance CRB via Schur complement ([`fim`]);
//! - two-stage target positioning: downlink MUSIC angle + MLE distance, and
//!   uplink parameter-split double MUSIC ([`positioning`]);
//! - a conic-solver boundary with PSD/SOC cones and the rank-one recovery
//!   routines shared by both optimizers ([`sdp`]);
//! - CRB-minimizing beamformer design under SINR and power constraints via
//!   penalty dual decomposition and alternating optimization ([`optim`]);
//! - a Monte Carlo experiment harness with CSV/SVG output ([`harness`]).
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `ispac` binary for the config-driven experiment runner.

pub mod fim;
pub mod geometry;
pub mod harness;
pub mod optim;
pub mod positioning;
pub mod sdp;
pub mod signal;

pub use fim::{crb_from_fim, fim_downlink, fim_uplink, Crb2, Fim4, GMatrixDerivs, TargetParams};
pub use geometry::{
    far_field_steering, make_comm_channel, make_sensing_channel, near_field_steering,
    path_loss_db, steering_derivatives, ArrayConfig, CommChannel, PathLossModel, PolarPoint,
    Scatterer, SensingChannel,
};
pub use positioning::{
    downlink_angle_music, downlink_distance_mle, downlink_two_stage, noise_subspace,
    uplink_split_spectrum, uplink_two_stage, Grid1d, PositionEstimate,
};
pub use signal::{
    downlink_sinr, synth_downlink_echo, synth_downlink_frames, synth_uplink_echo, uplink_sinr,
    DownlinkTx, HadPrecoder, ScenarioConfig, UplinkTx,
};

/// Complex matrix used throughout the crate.
pub type CMat = nalgebra::DMatrix<num_complex::Complex64>;
/// Complex column vector used throughout the crate.
pub type CVec = nalgebra::DVector<num_complex::Complex64>;
