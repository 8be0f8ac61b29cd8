//! Simulation core for a secure integrated-sensing-and-communication system:
//! an information UAV (I-UAV) serves ground users with a planar antenna array
//! while tracking and jamming an eavesdropping UAV (E-UAV) using the same
//! downlink waveform as a monostatic radar.
//!
//! Module map, bottom-up:
//!
//! - [`core_geometry`]: coordinates, kinematics, angles of departure, UPA
//!   steering vectors.
//! - [`channel_models`]: LoS channels, wiretap channel, round-trip echo gain.
//! - [`link_metrics`]: downlink SINR/rate, leakage rate, matched-filter SNR,
//!   measurement-noise variances.
//! - [`ekf_tracker`]: extended Kalman filter over the E-UAV state.
//! - [`conic_opt`]: embedded conic interior-point solver (nonneg/SOC/PSD).
//! - [`navigator`]: per-slot trajectory optimization as an SOC program.
//! - [`wiretap_predictor`]: MLP bound on wiretap-channel prediction error.
//! - [`secure_allocator`]: robust secrecy-aware precoding via SDP.
//! - [`scenario_sim`]: ground-truth world generation and evolution.
//! - [`experiment_harness`]: closed-loop per-slot simulation and metrics.
//! - [`cli_config`]: JSON configuration surface shared by the binaries.

pub mod channel_models;
pub mod conic_opt;
pub mod core_geometry;
pub mod ekf_tracker;
pub mod link_metrics;
pub mod navigator;
pub mod secure_allocator;
pub mod wiretap_predictor;
