//! Known-channel nonlinear least squares for the fingerprint and the Monte
//! Carlo harness that compares its MSE with the CRB.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::fim::{
    conditional_crb, crb_report, fim_closed_form, fim_numerical, CrbCell, CrbValue, NumericalMode, DEFAULT_RANK_TOL,
};
use crate::rng;
use crate::signal_model::{
    apply_with, iq_coefficients, random_symbols, synthesize_burst, Burst, ChannelConfig, HwiParams, PARAM_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsOptions {
    pub max_iters: usize,
    /// Simplex diameter tolerance (max-norm).
    pub x_tol: f64,
    /// Spread of cost values across the simplex.
    pub f_tol: f64,
    pub init: HwiParams,
    /// Relative size of the initial simplex edges.
    pub simplex_scale: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions {
            max_iters: 4000,
            x_tol: 1e-9,
            f_tol: 1e-14,
            init: HwiParams::default(),
            simplex_scale: 0.05,
        }
    }
}

impl NlsOptions {
    pub fn with_init(mut self, init: HwiParams) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.x_tol > 0.0) || !(self.f_tol > 0.0) || !(self.simplex_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("bad optimizer options {self:?}")));
        }
        if !self.init.is_finite() {
            return Err(Error::InvalidParameter("non-finite initial point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NlsResult {
    pub params: HwiParams,
    pub cost: f64,
    pub iterations: usize,
    pub status: ConvergenceStatus,
}

#[derive(Debug, Clone, Copy)]
struct SimplexOutcome<const D: usize> {
    x: [f64; D],
    f: f64,
    iters: usize,
    converged: bool,
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
fn nelder_mead<const D: usize>(
    cost: impl Fn(&[f64; D]) -> f64,
    x0: [f64; D],
    scale: f64,
    max_iters: usize,
    x_tol: f64,
    f_tol: f64,
) -> SimplexOutcome<D> {
    let mut pts: Vec<[f64; D]> = vec![x0; D + 1];
    for (i, p) in pts.iter_mut().skip(1).enumerate() {
        p[i] += if x0[i] != 0.0 { scale * x0[i] } else { 5e-3 * scale };
    }
    let mut vals: Vec<f64> = pts.iter().map(&cost).collect();
    let lerp = |a: &[f64; D], b: &[f64; D], t: f64| -> [f64; D] { std::array::from_fn(|k| a[k] + t * (b[k] - a[k])) };

    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        let mut order: Vec<usize> = (0..=D).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i]).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let x_spread = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let f_spread = vals[1..].iter().map(|v| (v - vals[0]).abs()).fold(0.0f64, f64::max);
        if x_spread <= x_tol && f_spread <= f_tol {
            converged = true;
            break;
        }
        iters += 1;

        let centroid: [f64; D] = std::array::from_fn(|k| pts[..D].iter().map(|p| p[k]).sum::<f64>() / D as f64);
        let worst = pts[D];
        let xr = lerp(&centroid, &worst, -1.0);
        let fr = cost(&xr);
        if fr < vals[0] {
            let xe = lerp(&centroid, &worst, -2.0);
            let fe = cost(&xe);
            if fe < fr {
                pts[D] = xe;
                vals[D] = fe;
            } else {
                pts[D] = xr;
                vals[D] = fr;
            }
            continue;
        }
        if fr < vals[D - 1] {
            pts[D] = xr;
            vals[D] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[D] {
            let xc = lerp(&centroid, &worst, -0.5);
            (xc, cost(&xc))
        } else {
            let xc = lerp(&centroid, &worst, 0.5);
            (xc, cost(&xc))
        };
        if fc < fr.min(vals[D]) {
            pts[D] = xc;
            vals[D] = fc;
            continue;
        }
        let best = pts[0];
        for i in 1..=D {
            pts[i] = lerp(&best, &pts[i], 0.5);
            vals[i] = cost(&pts[i]);
        }
    }
    let best = (0..=D).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexOutcome {
        x: pts[best],
        f: vals[best],
        iters,
        converged,
    }
}

/// Residual energy `sum |r - h f(theta)|^2` over the known symbols.
pub fn nls_cost(burst: &Burst, h: Complex64, p: &HwiParams) -> f64 {
    let iq = iq_coefficients(p);
    burst
        .samples()
        .iter()
        .zip(burst.known_symbols())
        .map(|(r, &x)| (r - h * apply_with(x, &iq, p.alpha3)).norm_sqr())
        .sum()
}

/// Simplex least-squares fit with a known channel, plus one restart from
/// the converged point.
pub fn nls_estimate(burst: &Burst, h_known: Complex64, opts: &NlsOptions) -> Result<NlsResult> {
    opts.validate()?;
    if !h_known.re.is_finite() || !h_known.im.is_finite() {
        return Err(Error::InvalidParameter("non-finite channel".into()));
    }
    let cost = |v: &[f64; 4]| nls_cost(burst, h_known, &HwiParams::from_array(*v));
    let first = nelder_mead(
        cost,
        opts.init.to_array(),
        opts.simplex_scale,
        opts.max_iters,
        opts.x_tol,
        opts.f_tol,
    );
    let second = nelder_mead(
        cost,
        first.x,
        opts.simplex_scale,
        opts.max_iters,
        opts.x_tol,
        opts.f_tol,
    );
    let best = if second.f <= first.f { second } else { first };
    let status = if first.converged && second.converged {
        ConvergenceStatus::Converged
    } else {
        log::warn!("simplex stopped at the iteration limit (cost {:e})", best.f);
        ConvergenceStatus::MaxIterations
    };
    Ok(NlsResult {
        params: HwiParams::from_array(best.x),
        cost: best.f,
        iterations: first.iters + second.iters,
        status,
    })
}

/// Which bound the Monte Carlo MSE is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrbPairing {
    /// Exact alphabet-averaged FIM at the truth.
    #[default]
    NumericalMoment,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub truth: HwiParams,
    pub snr_grid_db: Vec<f64>,
    pub n: usize,
    pub n_trials: usize,
    #[serde(default)]
    pub pairing: CrbPairing,
    #[serde(default)]
    pub options: Option<NlsOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub snr_db: f64,
    pub param: &'static str,
    pub mse: f64,
    pub crb: CrbCell,
    pub ratio: Option<f64>,
    pub n_trials: usize,
    pub status: String,
    /// Standard error of the MSE estimate.
    pub mse_se: f64,
    pub crb_closed_form: CrbCell,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub modulation: String,
    pub truth: HwiParams,
    pub n: usize,
    pub seed: u64,
    pub rows: Vec<McRow>,
}

impl McReport {
    pub fn row(&self, snr_db: f64, param: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.param == param)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-parameter bounds used for pairing. Rank-deficient FIMs fall back to
/// the PA sub-block with the IQ parameters treated as known; IQ bounds are
/// then unbounded.
fn paired_bounds(
    c: &Constellation,
    truth: &HwiParams,
    n: usize,
    gamma: f64,
    pairing: CrbPairing,
) -> Result<[CrbValue; 4]> {
    let fim = match pairing {
        CrbPairing::NumericalMoment => fim_numerical(c, truth, n, gamma, NumericalMode::Moment)?,
        CrbPairing::ClosedForm => fim_closed_form(&c.moments(), truth, n, gamma)?,
    };
    let rep = crb_report(&fim, DEFAULT_RANK_TOL)?;
    if rep.rank == 4 {
        return Ok(rep.crb);
    }
    let pa = conditional_crb(&fim, &[2, 3])?;
    Ok([
        CrbValue::Unbounded,
        CrbValue::Unbounded,
        CrbValue::Finite(pa[0]),
        CrbValue::Finite(pa[1]),
    ])
}

/// Oracle initialization: truth plus Gaussian jitter of standard deviation
/// `0.1 |truth_i| + 1e-3`.
pub fn oracle_init<R: rand::Rng + ?Sized>(truth: &HwiParams, rng: &mut R) -> HwiParams {
    let t = truth.to_array();
    HwiParams::from_array(std::array::from_fn(|i| {
        let sd = 0.1 * t[i].abs() + 1e-3;
        t[i] + Normal::new(0.0, sd).expect("positive sd").sample(rng)
    }))
}

/// Runs `n_trials` independent known-channel fits per SNR point and pairs
/// the per-parameter MSE with the CRB at the truth.
pub fn mc_crb_validation(c: &Constellation, cfg: &McConfig, seed: u64) -> Result<McReport> {
    if cfg.n == 0 || cfg.n_trials == 0 || cfg.snr_grid_db.is_empty() {
        return Err(Error::InvalidParameter(
            "n, n_trials and the SNR grid must be non-empty".into(),
        ));
    }
    if cfg.n_trials < 50 {
        log::warn!("{} trials per SNR point gives a noisy MSE estimate", cfg.n_trials);
    }
    if !cfg.truth.is_finite() || cfg.snr_grid_db.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite truth or SNR".into()));
    }
    let base_opts = cfg.options.unwrap_or_default();
    base_opts.validate()?;
    let truth = cfg.truth.to_array();
    let mut rows = Vec::new();
    for (si, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let gamma = 10f64.powf(snr_db / 10.0);
        let ch = ChannelConfig::awgn(Complex64::new(1.0, 0.0), snr_db);
        let trials: Vec<Result<([f64; 4], ConvergenceStatus)>> = (0..cfg.n_trials)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::rng_from(seed, &[si as u64, t as u64]);
                let symbols = random_symbols(c, cfg.n, &mut r);
                let burst = synthesize_burst(
                    &symbols,
                    &cfg.truth,
                    &ch,
                    rng::derive_seed(seed, &[si as u64, t as u64, 1]),
                )?;
                let init = oracle_init(&cfg.truth, &mut r);
                let fit = nls_estimate(&burst, ch.h, &base_opts.with_init(init))?;
                let est = fit.params.to_array();
                Ok((std::array::from_fn(|i| est[i] - truth[i]), fit.status))
            })
            .collect();
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        let nonconverged = trials
            .iter()
            .filter(|(_, s)| *s != ConvergenceStatus::Converged)
            .count();
        let bounds = paired_bounds(c, &cfg.truth, cfg.n, gamma, cfg.pairing)?;
        let cf = paired_bounds(c, &cfg.truth, cfg.n, gamma, CrbPairing::ClosedForm)?;
        let t = cfg.n_trials as f64;
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let sq: Vec<f64> = trials.iter().map(|(e, _)| e[i] * e[i]).collect();
            let mse = sq.iter().sum::<f64>() / t;
            let var = if sq.len() > 1 {
                sq.iter().map(|v| (v - mse).powi(2)).sum::<f64>() / (t - 1.0)
            } else {
                0.0
            };
            let ratio = bounds[i].finite().map(|b| mse / b);
            let mut status = String::from(if ratio.is_some() { "ok" } else { "unbounded_crb" });
            if nonconverged > 0 {
                status.push_str(&format!(";nonconverged={nonconverged}"));
            }
            rows.push(McRow {
                snr_db,
                param: name,
                mse,
                crb: CrbCell(bounds[i]),
                ratio,
                n_trials: cfg.n_trials,
                status,
                mse_se: (var / t).sqrt(),
                crb_closed_form: CrbCell(cf[i]),
            });
        }
    }
    Ok(McReport {
        modulation: c.name().to_string(),
        truth: cfg.truth,
        n: cfg.n,
        seed,
        rows,
    })
}
