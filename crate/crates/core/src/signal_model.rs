//! Symbol-rate transmitter impairment model, channel, and burst synthesis.
//!
//! The noise-free received sample for symbol `x` is
//! `h * (x_iq + alpha3 * |x_iq|^2 * x_iq)` with `x_iq = K1 x + K2 conj(x)`;
//! the linear PA gain is absorbed into `h`. A linear CFO phase ramp and
//! circular complex Gaussian noise are added on top.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Bound on each impairment magnitude for the small-impairment regime.
pub const SMALL_IMPAIRMENT_LIMIT: f64 = 0.2;

pub const IRIDIUM_PREAMBLE_LEN: usize = 64;
/// Unique word pattern, 12 bits, MSB first.
pub const IRIDIUM_UNIQUE_WORD: u16 = 0x789;
pub const IRIDIUM_UNIQUE_WORD_LEN: usize = 12;
pub const IRIDIUM_KNOWN_LEN: usize = IRIDIUM_PREAMBLE_LEN + IRIDIUM_UNIQUE_WORD_LEN;

/// Transmitter fingerprint `[eps, phi, Re alpha3, Im alpha3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct HwiParams {
    /// Gain imbalance.
    pub eps: f64,
    /// Phase imbalance, radians.
    pub phi: f64,
    /// Third-order PA coefficient.
    pub alpha3: Complex64,
}

/// Parameter ordering used by every 4-vector and 4x4 matrix in the crate.
pub const PARAM_NAMES: [&str; 4] = ["eps", "phi", "re_alpha3", "im_alpha3"];

impl HwiParams {
    pub fn new(eps: f64, phi: f64, alpha3: Complex64) -> Self {
        HwiParams { eps, phi, alpha3 }
    }

    pub fn from_degrees(eps: f64, phi_deg: f64, re_alpha3: f64, im_alpha3: f64) -> Self {
        HwiParams::new(eps, phi_deg.to_radians(), Complex64::new(re_alpha3, im_alpha3))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.eps, self.phi, self.alpha3.re, self.alpha3.im]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        HwiParams::new(v[0], v[1], Complex64::new(v[2], v[3]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Soft check of the small-impairment regime; larger values are allowed.
    pub fn is_small_impairment(&self) -> bool {
        self.eps.abs() <= SMALL_IMPAIRMENT_LIMIT
            && self.phi.abs() <= SMALL_IMPAIRMENT_LIMIT
            && self.alpha3.norm() <= SMALL_IMPAIRMENT_LIMIT
    }
}

/// IQ mixer coefficients; `k1 + conj(k2) = 1` identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqCoefficients {
    pub k1: Complex64,
    pub k2: Complex64,
}

pub fn iq_coefficients(p: &HwiParams) -> IqCoefficients {
    let g = 1.0 + p.eps;
    IqCoefficients {
        k1: (1.0 + Complex64::from_polar(g, p.phi)) * 0.5,
        k2: (1.0 - Complex64::from_polar(g, -p.phi)) * 0.5,
    }
}

impl IqCoefficients {
    #[inline]
    pub fn apply(&self, x: Complex64) -> Complex64 {
        self.k1 * x + self.k2 * x.conj()
    }
}

/// Noise-free transmitter output for one symbol (unit channel).
#[inline]
pub fn apply_hwi(x: Complex64, p: &HwiParams) -> Complex64 {
    apply_with(x, &iq_coefficients(p), p.alpha3)
}

#[inline]
pub(crate) fn apply_with(x: Complex64, iq: &IqCoefficients, alpha3: Complex64) -> Complex64 {
    let xiq = iq.apply(x);
    xiq + alpha3 * xiq.norm_sqr() * xiq
}

/// Flat channel for one burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Complex channel coefficient; absorbs the linear PA gain.
    pub h: Complex64,
    /// `|h|^2 / sigma^2` in dB; `+inf` disables noise.
    pub snr_db: f64,
    /// Rician K-factor used when drawing `h` per burst (informational).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rician_k_db: Option<f64>,
    /// Linear phase ramp, radians per symbol.
    #[serde(default)]
    pub cfo: f64,
}

impl ChannelConfig {
    pub fn awgn(h: Complex64, snr_db: f64) -> Self {
        ChannelConfig {
            h,
            snr_db,
            rician_k_db: None,
            cfo: 0.0,
        }
    }

    pub fn noiseless() -> Self {
        Self::awgn(Complex64::new(1.0, 0.0), f64::INFINITY)
    }

    pub fn with_cfo(mut self, cfo: f64) -> Self {
        self.cfo = cfo;
        self
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Complex noise variance `sigma^2 = |h|^2 / gamma` (0 when noise is disabled).
    pub fn noise_variance(&self) -> Result<f64> {
        if self.snr_db == f64::INFINITY {
            return Ok(0.0);
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidParameter(format!("snr_db = {}", self.snr_db)));
        }
        let sigma2 = self.h.norm_sqr() / self.snr_linear();
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance {sigma2} from |h|^2 = {} and {} dB",
                self.h.norm_sqr(),
                self.snr_db
            )));
        }
        Ok(sigma2)
    }

    /// Draws a Rician channel: a unit-power mix of a random-phase LOS term
    /// (power K/(K+1)) and Gaussian scatter (power 1/(K+1)). The returned
    /// `snr_db` is the instantaneous SNR so that the noise variance equals
    /// `1 / mean_snr`.
    pub fn rician<R: rand::Rng + ?Sized>(k_db: f64, mean_snr_db: f64, cfo: f64, rng: &mut R) -> Self {
        let k = 10f64.powf(k_db / 10.0);
        let los_amp = (k / (k + 1.0)).sqrt();
        let scatter_sd = (0.5 / (k + 1.0)).sqrt();
        let los_phase = rng.random::<f64>() * 2.0 * PI;
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let h = Complex64::from_polar(los_amp, los_phase) + Complex64::new(re, im) * scatter_sd;
        ChannelConfig {
            h,
            snr_db: mean_snr_db + 10.0 * h.norm_sqr().log10(),
            rician_k_db: Some(k_db),
            cfo,
        }
    }
}

/// Truth and bookkeeping attached to a burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstMeta {
    pub satellite_id: u32,
    pub seed: u64,
    pub channel: ChannelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<HwiParams>,
}

/// One received known-symbol segment at symbol rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    samples: Vec<Complex64>,
    known_symbols: Vec<Complex64>,
    pub meta: BurstMeta,
}

impl Burst {
    pub fn new(samples: Vec<Complex64>, known_symbols: Vec<Complex64>, meta: BurstMeta) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("burst has no samples".into()));
        }
        if samples.len() != known_symbols.len() {
            return Err(Error::InvalidParameter(format!(
                "samples ({}) and known symbols ({}) differ in length",
                samples.len(),
                known_symbols.len()
            )));
        }
        Ok(Burst {
            samples,
            known_symbols,
            meta,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn known_symbols(&self) -> &[Complex64] {
        &self.known_symbols
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `r(n) = h * apply_hwi(x(n)) * exp(j cfo n) + w(n)`, deterministic per seed.
pub fn synthesize_burst(symbols: &[Complex64], p: &HwiParams, ch: &ChannelConfig, seed: u64) -> Result<Burst> {
    synthesize_burst_for(0, symbols, p, ch, seed)
}

pub fn synthesize_burst_for(
    satellite_id: u32,
    symbols: &[Complex64],
    p: &HwiParams,
    ch: &ChannelConfig,
    seed: u64,
) -> Result<Burst> {
    if symbols.is_empty() {
        return Err(Error::InvalidParameter("empty symbol list".into()));
    }
    if !p.is_finite() {
        return Err(Error::InvalidParameter("non-finite impairment parameters".into()));
    }
    let sigma2 = ch.noise_variance()?;
    let noise_sd = (sigma2 / 2.0).sqrt();
    let iq = iq_coefficients(p);
    let mut rng = rng::rng_from(seed, &[]);
    let samples = symbols
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let clean = ch.h * apply_with(x, &iq, p.alpha3) * Complex64::from_polar(1.0, ch.cfo * n as f64);
            if noise_sd > 0.0 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                clean + Complex64::new(re, im) * noise_sd
            } else {
                clean
            }
        })
        .collect();
    Burst::new(
        samples,
        symbols.to_vec(),
        BurstMeta {
            satellite_id,
            seed,
            channel: *ch,
            truth: Some(*p),
        },
    )
}

/// Known-symbol layout of a burst.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotPattern {
    /// 64 constant preamble symbols then the 12-symbol BPSK unique word.
    Iridium,
    /// i.i.d. uniform symbols from an alphabet.
    Random { constellation: Constellation, len: usize },
}

impl PilotPattern {
    pub fn random_qpsk(len: usize) -> Self {
        PilotPattern::Random {
            constellation: Constellation::new(crate::constellation::ConstellationKind::Qpsk)
                .expect("built-in alphabet"),
            len,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PilotPattern::Iridium => IRIDIUM_KNOWN_LEN,
            PilotPattern::Random { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn symbols<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        match self {
            PilotPattern::Iridium => iridium_known_symbols(),
            PilotPattern::Random { constellation, len } => random_symbols(constellation, *len, rng),
        }
    }
}

/// Preamble of `1+0j` followed by the unique word (bit 0 -> +1, bit 1 -> -1).
pub fn iridium_known_symbols() -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0); IRIDIUM_PREAMBLE_LEN];
    for i in (0..IRIDIUM_UNIQUE_WORD_LEN).rev() {
        let bit = (IRIDIUM_UNIQUE_WORD >> i) & 1;
        out.push(Complex64::new(if bit == 1 { -1.0 } else { 1.0 }, 0.0));
    }
    out
}

pub fn random_symbols<R: rand::Rng + ?Sized>(c: &Constellation, n: usize, rng: &mut R) -> Vec<Complex64> {
    let pts = c.points();
    (0..n).map(|_| pts[rng.random_range(0..pts.len())]).collect()
}

/// Real-alphabet signal collapse: `r = h c x + w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpskCollapse {
    pub kappa: Complex64,
    pub c: Complex64,
    pub xi1: f64,
    pub xi2: f64,
    /// First-order null directions of the FIM in parameter space.
    pub null_basis: [[f64; 4]; 2],
}

pub fn bpsk_collapse(p: &HwiParams) -> BpskCollapse {
    let g = 1.0 + p.eps;
    let kappa = Complex64::new(1.0, g * p.phi.sin());
    let c = kappa * (1.0 + p.alpha3 * kappa.norm_sqr());
    BpskCollapse {
        kappa,
        c,
        xi1: p.alpha3.re,
        xi2: g * p.phi.sin() + p.alpha3.im,
        null_basis: [[1.0, 0.0, 0.0, -p.phi], [0.0, 1.0, 0.0, -g]],
    }
}

/// Ranges for drawing per-satellite fingerprints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpread {
    pub eps: (f64, f64),
    pub phi_deg: (f64, f64),
    pub alpha3_mag: (f64, f64),
    pub alpha3_phase_rad: (f64, f64),
}

impl Default for FleetSpread {
    fn default() -> Self {
        FleetSpread {
            eps: (0.01, 0.05),
            phi_deg: (0.5, 5.0),
            alpha3_mag: (0.02, 0.05),
            alpha3_phase_rad: (0.0, 2.0 * PI),
        }
    }
}

impl FleetSpread {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("eps", self.eps),
            ("phi_deg", self.phi_deg),
            ("alpha3_mag", self.alpha3_mag),
            ("alpha3_phase_rad", self.alpha3_phase_rad),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "degenerate range {name}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

fn uniform<R: rand::Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws `n_sats` fingerprints uniformly within the spread ranges.
/// Satellite ids are `1..=n_sats`.
pub fn generate_fleet(n_sats: usize, spread: &FleetSpread, seed: u64) -> Result<Vec<(u32, HwiParams)>> {
    if n_sats < 2 {
        return Err(Error::InvalidParameter(format!(
            "fleet needs at least 2 satellites, got {n_sats}"
        )));
    }
    spread.validate()?;
    let mut rng: Rng = rng::rng_from(seed, &[0xF1EE7]);
    Ok((0..n_sats)
        .map(|i| {
            let eps = uniform(&mut rng, spread.eps);
            let phi = uniform(&mut rng, spread.phi_deg).to_radians();
            let mag = uniform(&mut rng, spread.alpha3_mag);
            let ang = uniform(&mut rng, spread.alpha3_phase_rad);
            (i as u32 + 1, HwiParams::new(eps, phi, Complex64::from_polar(mag, ang)))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::ConstellationKind;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ideal_mixer() {
        let k = iq_coefficients(&HwiParams::default());
        assert_eq!(k.k1, c(1.0, 0.0));
        assert_eq!(k.k2, c(0.0, 0.0));
    }

    #[test]
    fn gain_only_mixer() {
        let k = iq_coefficients(&HwiParams::new(0.1, 0.0, c(0.0, 0.0)));
        assert_abs_diff_eq!(k.k1.re, 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(k.k1.im, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.k2.re, -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(k.k2.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mixer_against_scalar_arithmetic() {
        // eps = 0.05, phi = 3 deg, evaluated with plain cos/sin.
        let (eps, phi) = (0.05f64, 3f64.to_radians());
        let k = iq_coefficients(&HwiParams::new(eps, phi, c(0.0, 0.0)));
        let k1 = c((1.0 + (1.0 + eps) * phi.cos()) / 2.0, (1.0 + eps) * phi.sin() / 2.0);
        let k2 = c((1.0 - (1.0 + eps) * phi.cos()) / 2.0, (1.0 + eps) * phi.sin() / 2.0);
        assert_abs_diff_eq!((k.k1 - k1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((k.k2 - k2).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.k1.re, 1.0242805057, epsilon = 1e-9);
        assert_abs_diff_eq!(k.k2.im, 0.0274763770, epsilon = 1e-9);
    }

    #[test]
    fn identity_at_zero() {
        let p = HwiParams::default();
        for x in [c(1.0, 0.0), c(0.3, -0.7), c(-2.0, 1.5)] {
            assert_eq!(apply_hwi(x, &p), x);
        }
    }

    #[test]
    fn qpsk_point_against_independent_evaluation() {
        let p = HwiParams::from_degrees(0.03, 2.0, 0.02, 0.01);
        let x = c(1.0, 1.0) / 2f64.sqrt();
        // Independent real-arithmetic evaluation of the I/Q branches.
        let (eps, phi) = (0.03f64, 2f64.to_radians());
        let (i_in, q_in) = (x.re, x.im);
        let g = 1.0 + eps;
        // Re(x_iq) = I, Im(x_iq) = (1+eps)(Q cos phi + I sin phi).
        let xiq = c(i_in, g * (q_in * phi.cos() + i_in * phi.sin()));
        let a3 = c(0.02, 0.01);
        let want = xiq + a3 * xiq.norm_sqr() * xiq;
        let got = apply_hwi(x, &p);
        assert_abs_diff_eq!((got - want).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bpsk_point_equals_collapse_scalar() {
        let p = HwiParams::from_degrees(0.03, 2.0, 0.02, 0.01);
        let col = bpsk_collapse(&p);
        assert_abs_diff_eq!((apply_hwi(c(1.0, 0.0), &p) - col.c).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((apply_hwi(c(-1.0, 0.0), &p) + col.c).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn collapse_examples() {
        let z = bpsk_collapse(&HwiParams::default());
        assert_eq!(z.c, c(1.0, 0.0));
        assert_eq!(z.xi1, 0.0);
        assert_eq!(z.xi2, 0.0);

        let p = HwiParams::from_degrees(0.03, 2.0, 0.02, 0.01);
        let col = bpsk_collapse(&p);
        assert_abs_diff_eq!(col.xi2, 1.03 * 2f64.to_radians().sin() + 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(col.xi1, 0.02, epsilon = 1e-15);
        let k = col.kappa;
        assert_abs_diff_eq!(
            (col.c - k * (1.0 + p.alpha3 * k.norm_sqr())).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_eq!(col.null_basis[1], [0.0, 1.0, 0.0, -1.03]);
    }

    #[test]
    fn collapse_first_order_matches_xi() {
        let p = HwiParams::new(8e-4, -6e-4, c(5e-4, 9e-4));
        let col = bpsk_collapse(&p);
        assert_abs_diff_eq!(col.c.re - 1.0, col.xi1, epsilon = 1e-5);
        assert_abs_diff_eq!(col.c.im, col.xi2, epsilon = 1e-5);
    }

    #[test]
    fn noiseless_identity_burst() {
        let qpsk = Constellation::new(ConstellationKind::Qpsk).unwrap();
        let mut r = rng::rng_from(1, &[]);
        let syms = random_symbols(&qpsk, 64, &mut r);
        let b = synthesize_burst(&syms, &HwiParams::default(), &ChannelConfig::noiseless(), 3).unwrap();
        assert_eq!(b.samples(), &syms[..]);
    }

    #[test]
    fn noise_variance_from_snr() {
        let ch = ChannelConfig::awgn(c(2.0, 0.0), 20.0);
        assert_abs_diff_eq!(ch.noise_variance().unwrap(), 0.04, epsilon = 1e-15);
        assert!(ChannelConfig::awgn(c(0.0, 0.0), 20.0).noise_variance().is_err());
    }

    #[test]
    fn empirical_noise_power() {
        let p = HwiParams::from_degrees(0.03, 2.0, 0.02, 0.01);
        let ch = ChannelConfig::awgn(c(0.8, -0.6), 10.0);
        let qpsk = Constellation::new(ConstellationKind::Qpsk).unwrap();
        let syms = random_symbols(&qpsk, 100_000, &mut rng::rng_from(4, &[]));
        let b = synthesize_burst(&syms, &p, &ch, 11).unwrap();
        let sigma2 = ch.noise_variance().unwrap();
        let mean: f64 = b
            .samples()
            .iter()
            .zip(&syms)
            .map(|(r, &x)| (r - ch.h * apply_hwi(x, &p)).norm_sqr())
            .sum::<f64>()
            / syms.len() as f64;
        assert!((mean / sigma2 - 1.0).abs() < 0.02, "{mean} vs {sigma2}");
    }

    #[test]
    fn synthesis_errors_and_reproducibility() {
        assert!(synthesize_burst(&[], &HwiParams::default(), &ChannelConfig::noiseless(), 0).is_err());
        let syms = iridium_known_symbols();
        let p = HwiParams::from_degrees(0.02, 1.0, 0.03, -0.01);
        let ch = ChannelConfig::awgn(c(0.9, 0.3), 15.0).with_cfo(0.01);
        let a = synthesize_burst(&syms, &p, &ch, 77).unwrap();
        let b = synthesize_burst(&syms, &p, &ch, 77).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
        let d = synthesize_burst(&syms, &p, &ch, 78).unwrap();
        assert_ne!(a.samples(), d.samples());
    }

    #[test]
    fn iridium_pattern() {
        let s = iridium_known_symbols();
        assert_eq!(s.len(), 76);
        assert!(s[..64].iter().all(|&x| x == c(1.0, 0.0)));
        // 0x789 = 0111 1000 1001
        let uw: Vec<f64> = s[64..].iter().map(|x| x.re).collect();
        assert_eq!(uw, vec![1., -1., -1., -1., -1., 1., 1., 1., -1., 1., 1., -1.]);
        assert!(s.iter().all(|x| x.im == 0.0));
    }

    #[test]
    fn fleet_generation() {
        let spread = FleetSpread::default();
        let fleet = generate_fleet(24, &spread, 5).unwrap();
        assert_eq!(fleet.len(), 24);
        for (_, p) in &fleet {
            assert!((0.01..=0.05).contains(&p.eps));
            assert!((0.5..=5.0).contains(&p.phi.to_degrees()));
            assert!((0.02..=0.05).contains(&p.alpha3.norm()));
        }
        for i in 0..fleet.len() {
            for j in i + 1..fleet.len() {
                assert_ne!(fleet[i].1, fleet[j].1);
            }
        }
        assert_eq!(fleet, generate_fleet(24, &spread, 5).unwrap());

        let flat = FleetSpread {
            eps: (0.02, 0.02),
            phi_deg: (1.0, 1.0),
            alpha3_mag: (0.03, 0.03),
            alpha3_phase_rad: (0.5, 0.5),
        };
        let two = generate_fleet(2, &flat, 9).unwrap();
        assert_eq!(two[0].1, two[1].1);

        assert!(generate_fleet(1, &spread, 0).is_err());
        let bad = FleetSpread {
            eps: (0.05, 0.01),
            ..spread
        };
        assert!(generate_fleet(4, &bad, 0).is_err());
    }

    #[test]
    fn rician_draw_power() {
        let mut r = rng::rng_from(21, &[]);
        let n = 20_000;
        let mut p = 0.0;
        for _ in 0..n {
            let ch = ChannelConfig::rician(10.0, 20.0, 0.0, &mut r);
            p += ch.h.norm_sqr();
            let s2 = ch.noise_variance().unwrap();
            assert_abs_diff_eq!(s2, 0.01, epsilon = 1e-12);
        }
        assert!((p / n as f64 - 1.0).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn k1_plus_conj_k2_is_one(eps in -0.3f64..0.3, phi in -0.5f64..0.5) {
            let k = iq_coefficients(&HwiParams::new(eps, phi, c(0.0, 0.0)));
            prop_assert!((k.k1 + k.k2.conj() - 1.0).norm() < 1e-12);
        }

        #[test]
        fn real_symbols_collapse(eps in -0.2f64..0.2, phi in -0.2f64..0.2, ar in -0.2f64..0.2, ai in -0.2f64..0.2) {
            let p = HwiParams::new(eps, phi, c(ar, ai));
            let col = bpsk_collapse(&p);
            prop_assert!((apply_hwi(c(1.0, 0.0), &p) - col.c).norm() < 1e-14);
            prop_assert!((apply_hwi(c(-1.0, 0.0), &p) + col.c).norm() < 1e-14);
        }

        #[test]
        fn null_directions_quadratic_at_origin(delta in -1e-3f64..1e-3, which in 0usize..2) {
            let p = HwiParams::default();
            let v = bpsk_collapse(&p).null_basis[which];
            let moved = HwiParams::from_array(std::array::from_fn(|i| delta * v[i]));
            let dc = (bpsk_collapse(&moved).c - bpsk_collapse(&p).c).norm();
            prop_assert!(dc <= 10.0 * delta * delta);
        }

        #[test]
        fn null_directions_are_second_order(
            eps in -0.05f64..0.05, phi in -0.05f64..0.05,
            ar in -0.05f64..0.05, ai in -0.05f64..0.05,
            delta in -1e-3f64..1e-3, which in 0usize..2,
        ) {
            let p = HwiParams::new(eps, phi, c(ar, ai));
            let col = bpsk_collapse(&p);
            let v = col.null_basis[which];
            let base = p.to_array();
            let moved = HwiParams::from_array([
                base[0] + delta * v[0], base[1] + delta * v[1],
                base[2] + delta * v[2], base[3] + delta * v[3],
            ]);
            // Null to first order in both the step and the impairment size.
            let size = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dc = (bpsk_collapse(&moved).c - col.c).norm();
            prop_assert!(dc <= 4.0 * delta.abs() * (delta.abs() + size) + 1e-15, "dc {} delta {}", dc, delta);
        }
    }
}
