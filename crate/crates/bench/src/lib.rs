//! Shared fixtures for the benchmarks.

use hwifp::signal_model::{iridium_known_symbols, synthesize_burst_for, Burst, ChannelConfig, HwiParams};
use num_complex::Complex64;

/// The operating point used throughout the Monte Carlo studies.
pub fn mc_truth() -> HwiParams {
    HwiParams::from_degrees(0.03, 2.0, 0.02, 0.01)
}

/// One Iridium-layout burst at 20 dB.
pub fn iridium_burst(seed: u64) -> Burst {
    let ch = ChannelConfig::awgn(Complex64::new(1.0, 0.0), 20.0).with_cfo(0.004);
    synthesize_burst_for(1, &iridium_known_symbols(), &mc_truth(), &ch, seed).expect("valid burst")
}
