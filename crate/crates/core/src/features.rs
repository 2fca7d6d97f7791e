//! Per-burst impairment features: CFO removal, power normalization and the
//! thirteen candidate features.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_model::{iq_coefficients, Burst, HwiParams};

pub const FEATURE_NAMES: [&str; 13] = [
    "amp_var",
    "amp_range",
    "amp_kurtosis",
    "amp_acf1",
    "phase_acf1",
    "phase_var",
    "cfo_hat",
    "evm",
    "iq_eps_hat",
    "iq_phi_hat",
    "dc_i",
    "dc_q",
    "pa_cross",
];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Index of a feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Pa,
    Oscillator,
    Constellation,
    Iq,
    Dc,
    PaCross,
}

pub fn feature_group(index: usize) -> FeatureGroup {
    match index {
        0..=3 => FeatureGroup::Pa,
        4..=6 => FeatureGroup::Oscillator,
        7 => FeatureGroup::Constellation,
        8 | 9 => FeatureGroup::Iq,
        10 | 11 => FeatureGroup::Dc,
        _ => FeatureGroup::PaCross,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub amp_var: f64,
    pub amp_range: f64,
    pub amp_kurtosis: f64,
    pub amp_acf1: f64,
    pub phase_acf1: f64,
    pub phase_var: f64,
    pub cfo_hat: f64,
    pub evm: f64,
    pub iq_eps_hat: f64,
    pub iq_phi_hat: f64,
    pub dc_i: f64,
    pub dc_q: f64,
    pub pa_cross: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.amp_var,
            self.amp_range,
            self.amp_kurtosis,
            self.amp_acf1,
            self.phase_acf1,
            self.phase_var,
            self.cfo_hat,
            self.evm,
            self.iq_eps_hat,
            self.iq_phi_hat,
            self.dc_i,
            self.dc_q,
            self.pa_cross,
        ]
    }

    pub fn from_array(v: [f64; N_FEATURES]) -> Self {
        FeatureVector {
            amp_var: v[0],
            amp_range: v[1],
            amp_kurtosis: v[2],
            amp_acf1: v[3],
            phase_acf1: v[4],
            phase_var: v[5],
            cfo_hat: v[6],
            evm: v[7],
            iq_eps_hat: v[8],
            iq_phi_hat: v[9],
            dc_i: v[10],
            dc_q: v[11],
            pa_cross: v[12],
        }
    }
}

/// Conditions under which a feature was defined by convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureFlags {
    /// Amplitude had zero variance; its ACF, kurtosis and `pa_cross` are 0.
    pub constant_amplitude: bool,
    /// Residual phase had zero variance; its ACF and `pa_cross` are 0.
    pub constant_phase: bool,
    /// Known symbols are all real, so the mixer image is unobservable and
    /// the IQ estimates are 0.
    pub iq_unidentifiable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_known: usize,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    pub acf_lag: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_known: 76,
            percentile_lo: 5.0,
            percentile_hi: 95.0,
            acf_lag: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.percentile_lo && self.percentile_lo < self.percentile_hi && self.percentile_hi <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "percentiles must satisfy 0 <= lo < hi <= 100, got {} / {}",
                self.percentile_lo, self.percentile_hi
            )));
        }
        if self.n_known < 4 || self.acf_lag == 0 || self.acf_lag >= self.n_known {
            return Err(Error::InvalidParameter(format!(
                "n_known {} / acf_lag {} out of range",
                self.n_known, self.acf_lag
            )));
        }
        Ok(())
    }
}

/// Phase of each sample, unwrapped.
pub fn unwrap_phase(z: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for v in z {
        let a = v.arg();
        if let Some(p) = prev {
            let d = a - p;
            if d > std::f64::consts::PI {
                offset -= 2.0 * std::f64::consts::PI;
            } else if d < -std::f64::consts::PI {
                offset += 2.0 * std::f64::consts::PI;
            }
        }
        prev = Some(a);
        out.push(a + offset);
    }
    out
}

/// Least-squares line `y = a + b n`; returns `(a, b)`.
fn fit_line(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

/// Estimates a linear phase ramp from the phase of `r^power` (which strips
/// `power`-ary phase modulation) and removes it. Returns the derotated
/// samples and the slope in radians per symbol.
pub fn remove_cfo(samples: &[Complex64], power: u32) -> Result<(Vec<Complex64>, f64)> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 4",
            samples.len()
        )));
    }
    if power == 0 {
        return Err(Error::InvalidParameter("modulation power must be positive".into()));
    }
    if samples.iter().any(|s| !(s.norm() > 0.0) || !s.norm().is_finite()) {
        return Err(Error::DegenerateInput("zero or non-finite sample amplitude".into()));
    }
    let stripped: Vec<Complex64> = samples.iter().map(|s| s.powu(power)).collect();
    let (_, slope) = fit_line(&unwrap_phase(&stripped));
    let cfo = slope / power as f64;
    let out = samples
        .iter()
        .enumerate()
        .map(|(n, s)| s * Complex64::from_polar(1.0, -cfo * n as f64))
        .collect();
    Ok((out, cfo))
}

/// Scales to unit mean power.
pub fn normalize_amplitude(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty burst".into()));
    }
    let p = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64;
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::DegenerateInput("burst has zero mean power".into()));
    }
    let g = 1.0 / p.sqrt();
    Ok(samples.iter().map(|s| s * g).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divisor N).
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Biased autocorrelation at `lag`; `None` for a constant sequence.
pub fn autocorrelation(v: &[f64], lag: usize) -> Option<f64> {
    let m = mean(v);
    let den: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    if !(den > 1e-300) || lag >= v.len() {
        return None;
    }
    let num: f64 = v.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    Some(num / den)
}

/// `m4 / m2^2 - 3`; `None` for a constant sequence.
pub fn excess_kurtosis(v: &[f64]) -> Option<f64> {
    let m = mean(v);
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    if !(m2 > 1e-300) {
        return None;
    }
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / v.len() as f64;
    Some(m4 / (m2 * m2) - 3.0)
}

/// Sample correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if !(saa > 1e-300 && sbb > 1e-300) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Widely-linear fit `r ~ a x + b conj(x)` against the known symbols,
/// mapped back to `(eps, phi)`. `None` when the symbols are all real.
fn iq_from_widely_linear(r: &[Complex64], x: &[Complex64]) -> Option<(f64, f64)> {
    let (mut sxx, mut sxc) = (0.0, Complex64::new(0.0, 0.0));
    let (mut rx, mut rxc) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (ri, xi) in r.iter().zip(x) {
        sxx += xi.norm_sqr();
        // Gram entries: <x, x*> = sum x^2 (conjugated below)
        sxc += xi * xi;
        rx += ri * xi.conj();
        rxc += ri * xi;
    }
    // Normal equations [[sxx, conj(sxc)], [sxc, sxx]] [a, b]^T = [rx, rxc]^T
    let det = sxx * sxx - sxc.norm_sqr();
    if !(det > 1e-9 * sxx * sxx) {
        return None;
    }
    let a = (rx * sxx - sxc.conj() * rxc) / det;
    let b = (rxc * sxx - sxc * rx) / det;
    let q = b / a;
    let q2 = q.norm_sqr();
    if !(q2 < 1.0) {
        return None;
    }
    let g = (1.0 - 2.0 * q.conj() + q2) / (1.0 - q2);
    Some((g.norm() - 1.0, g.arg()))
}

/// Extracts all features from the first `n_known` samples of a burst.
pub fn extract_features(b: &Burst, cfg: &PipelineConfig) -> Result<(FeatureVector, FeatureFlags)> {
    cfg.validate()?;
    if b.len() < cfg.n_known {
        return Err(Error::InsufficientData(format!(
            "burst has {} samples, need {}",
            b.len(),
            cfg.n_known
        )));
    }
    let raw = &b.samples()[..cfg.n_known];
    let known = &b.known_symbols()[..cfg.n_known];
    let real_pilots = known.iter().all(|x| x.im.abs() < 1e-12);
    let power = if real_pilots { 2 } else { 4 };
    let (derot, cfo_hat) = remove_cfo(raw, power)?;
    let r = normalize_amplitude(&derot)?;
    let mut flags = FeatureFlags {
        iq_unidentifiable: real_pilots,
        ..FeatureFlags::default()
    };

    let amp: Vec<f64> = r.iter().map(|s| s.norm()).collect();
    let amp_mean = mean(&amp);
    let amp_var = variance(&amp) / (amp_mean * amp_mean);
    let amp_range = percentile(&amp, cfg.percentile_hi) - percentile(&amp, cfg.percentile_lo);
    let amp_kurtosis = excess_kurtosis(&amp);
    let amp_acf1 = autocorrelation(&amp, cfg.acf_lag);
    flags.constant_amplitude = amp_kurtosis.is_none();

    let z: Vec<Complex64> = r.iter().map(|s| s.powu(power)).collect();
    let ph = unwrap_phase(&z);
    let (a0, a1) = fit_line(&ph);
    let resid: Vec<f64> = ph.iter().enumerate().map(|(n, p)| p - a0 - a1 * n as f64).collect();
    let phase_var = variance(&resid);
    let phase_acf1 = autocorrelation(&resid, cfg.acf_lag);
    flags.constant_phase = phase_acf1.is_none();
    let pa_cross = pearson(&amp, &resid);

    // Common phase against the known symbols.
    let corr: Complex64 = r.iter().zip(known).map(|(s, x)| s * x.conj()).sum();
    let rot = if corr.norm() > 0.0 {
        corr.conj() / corr.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let aligned: Vec<Complex64> = r.iter().map(|s| s * rot).collect();
    let ref_power = known.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let err_power: f64 = aligned.iter().zip(known).map(|(s, x)| (s - x).norm_sqr()).sum();
    let evm = (err_power / ref_power).sqrt();
    let dc = aligned.iter().sum::<Complex64>() / aligned.len() as f64;

    let (iq_eps_hat, iq_phi_hat) = if real_pilots {
        (0.0, 0.0)
    } else {
        match iq_from_widely_linear(&aligned, known) {
            Some(v) => v,
            None => {
                flags.iq_unidentifiable = true;
                (0.0, 0.0)
            }
        }
    };

    Ok((
        FeatureVector {
            amp_var,
            amp_range,
            amp_kurtosis: amp_kurtosis.unwrap_or(0.0),
            amp_acf1: amp_acf1.unwrap_or(0.0),
            phase_acf1: phase_acf1.unwrap_or(0.0),
            phase_var,
            cfo_hat,
            evm,
            iq_eps_hat,
            iq_phi_hat,
            dc_i: dc.re,
            dc_q: dc.im,
            pa_cross: pa_cross.unwrap_or(0.0),
        },
        flags,
    ))
}

/// Small-signal prediction `4 |alpha3|^2 Var(|x_iq|^2)` of the normalized
/// amplitude variance for a symbol sequence.
pub fn predicted_amp_var(symbols: &[Complex64], p: &HwiParams) -> f64 {
    let iq = iq_coefficients(p);
    let pw: Vec<f64> = symbols.iter().map(|&x| iq.apply(x).norm_sqr()).collect();
    4.0 * p.alpha3.norm_sqr() * variance(&pw)
}

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub satellite_id: u32,
    pub burst_index: usize,
    pub snr_db: f64,
    #[serde(flatten)]
    pub features: FeatureVector,
}

pub fn write_feature_csv<W: std::io::Write>(rows: &[FeatureRecord], w: W) -> Result<()> {
    // csv cannot serialize flattened structs; write the header by hand.
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["satellite_id", "burst_index", "snr_db"];
    header.extend(FEATURE_NAMES);
    wr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.satellite_id.to_string(),
            r.burst_index.to_string(),
            r.snr_db.to_string(),
        ];
        rec.extend(r.features.to_array().iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: std::io::Read>(r: R) -> Result<Vec<FeatureRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let expected: Vec<&str> = ["satellite_id", "burst_index", "snr_db"]
        .into_iter()
        .chain(FEATURE_NAMES)
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!("unexpected feature table header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("column {}: {e}", expected[i])))
        };
        let mut f = [0.0; N_FEATURES];
        for (k, v) in f.iter_mut().enumerate() {
            *v = num(3 + k)?;
        }
        out.push(FeatureRecord {
            satellite_id: rec[0]
                .parse()
                .map_err(|e| Error::Format(format!("satellite_id: {e}")))?,
            burst_index: rec[1].parse().map_err(|e| Error::Format(format!("burst_index: {e}")))?,
            snr_db: num(2)?,
            features: FeatureVector::from_array(f),
        });
    }
    Ok(out)
}
