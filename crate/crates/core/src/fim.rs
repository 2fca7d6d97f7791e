//! Fisher information for the four-parameter fingerprint, Cramer-Rao bounds,
//! identifiability diagnostics, channel marginalization and pairwise
//! discrimination.
//!
//! All matrices use the parameter order of [`PARAM_NAMES`](crate::signal_model::PARAM_NAMES).

use std::fmt;

use nalgebra::{Matrix2, Matrix4, SMatrix, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::{directional_sensitivities, Constellation, Moments};
use crate::error::{Error, Result};
use crate::signal_model::{apply_hwi, iq_coefficients, HwiParams, PARAM_NAMES};

pub const DEFAULT_RANK_TOL: f64 = 1e-9;
pub const MIN_FD_STEP: f64 = 1e-6;
pub const MAX_FD_STEP: f64 = 1e-4;

/// How a [`Fim`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FimSource {
    ClosedForm,
    NumericalMoment,
    FiniteDifference,
    NumericalSum,
    ChannelMarginalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NumericalMode {
    /// Exact analytic derivatives averaged over the alphabet.
    Moment,
    /// Central differences of the model output with the given step.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub matrix: Matrix4<f64>,
    pub operating_point: HwiParams,
    pub n_symbols: usize,
    pub snr_linear: f64,
    pub source: FimSource,
}

impl Fim {
    /// Wraps a matrix after checking finiteness and symmetry.
    pub fn new(
        matrix: Matrix4<f64>,
        operating_point: HwiParams,
        n_symbols: usize,
        snr_linear: f64,
        source: FimSource,
    ) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMatrix);
        }
        let scale = matrix.abs().max();
        let asym = (matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!(
                "FIM not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Fim {
            matrix: (matrix + matrix.transpose()) * 0.5,
            operating_point,
            n_symbols,
            snr_linear,
            source,
        })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn is_psd(&self) -> bool {
        let ev = self.eigenvalues();
        ev[0] >= -1e-8 * ev[3].abs()
    }

    /// Matrix divided by `N * gamma`, the normalization used in plots.
    pub fn per_symbol_snr(&self) -> Matrix4<f64> {
        self.matrix / (self.n_symbols as f64 * self.snr_linear)
    }

    pub fn sub_block(&self, idx: &[usize]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.matrix[(idx[a], idx[b])])
    }
}

fn check_common(n: usize, gamma: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snr must be positive and finite, got {gamma}"
        )));
    }
    Ok(())
}

/// Block closed form `2 N gamma [[J_iq, J_x], [J_x^T, mu6 I]]` from the
/// constellation moments.
///
/// The cross block carries an extra `E[|x|^2 x^2]` term that vanishes for
/// circular and square-QAM alphabets; for real alphabets it cancels the
/// eps/PA coupling that the image component cannot produce.
pub fn fim_closed_form(m: &Moments, p: &HwiParams, n: usize, gamma: f64) -> Result<Fim> {
    check_common(n, gamma)?;
    let g = 1.0 + p.eps;
    let d = directional_sensitivities(m, p.eps, p.phi);
    let rot = Complex64::from_polar(1.0, -p.phi) * m.mu4;
    let img = Complex64::from_polar(1.0, p.phi) * m.mu42;
    let eps_row = (rot - img) * 0.5;
    let phi_row = (rot + img) * (0.5 * g);
    let (er, ei) = (eps_row.re, -eps_row.im);
    let (pr, pi) = (phi_row.im, phi_row.re);
    #[rustfmt::skip]
    let unit = Matrix4::new(
        d.beta_eps, d.j_epsphi,         er,    ei,
        d.j_epsphi, g * g * d.beta_phi, pr,    pi,
        er,         pr,                 m.mu6, 0.0,
        ei,         pi,                 0.0,   m.mu6,
    );
    Fim::new(unit * (2.0 * n as f64 * gamma), *p, n, gamma, FimSource::ClosedForm)
}

/// Exact derivatives of the unit-channel output with respect to
/// `[eps, phi, Re alpha3, Im alpha3]`.
pub fn sensitivities(x: Complex64, p: &HwiParams) -> [Complex64; 4] {
    let iq = iq_coefficients(p);
    let u = iq.apply(x);
    let a = Complex64::from_polar(1.0, p.phi) * x;
    let b = Complex64::from_polar(1.0, -p.phi) * x.conj();
    let du_eps = (a - b) * 0.5;
    let du_phi = Complex64::i() * (1.0 + p.eps) * (a + b) * 0.5;
    // d(u + alpha |u|^2 u) = (1 + 2 alpha |u|^2) du + alpha u^2 conj(du)
    let lin = 1.0 + 2.0 * p.alpha3 * u.norm_sqr();
    let anti = p.alpha3 * u * u;
    let chain = |du: Complex64| lin * du + anti * du.conj();
    let cubic = u.norm_sqr() * u;
    [chain(du_eps), chain(du_phi), cubic, Complex64::i() * cubic]
}

/// Central-difference derivatives of the unit-channel output.
pub fn sensitivities_fd(x: Complex64, p: &HwiParams, step: f64) -> Result<[Complex64; 4]> {
    if !(MIN_FD_STEP..=MAX_FD_STEP).contains(&step) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {step:e} outside [{MIN_FD_STEP:e}, {MAX_FD_STEP:e}]"
        )));
    }
    let base = p.to_array();
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for (i, o) in out.iter_mut().enumerate() {
        let mut up = base;
        let mut dn = base;
        up[i] += step;
        dn[i] -= step;
        *o = (apply_hwi(x, &HwiParams::from_array(up)) - apply_hwi(x, &HwiParams::from_array(dn))) / (2.0 * step);
    }
    Ok(out)
}

fn accumulate_real_gram<const D: usize>(cols: &[[Complex64; D]]) -> SMatrix<f64, D, D> {
    let mut acc = SMatrix::<f64, D, D>::zeros();
    for s in cols {
        for i in 0..D {
            for j in i..D {
                let v = (s[i].conj() * s[j]).re;
                acc[(i, j)] += v;
                if i != j {
                    acc[(j, i)] += v;
                }
            }
        }
    }
    acc
}

/// Alphabet-averaged FIM of the full nonlinear model, times `N`.
pub fn fim_numerical(c: &Constellation, p: &HwiParams, n: usize, gamma: f64, mode: NumericalMode) -> Result<Fim> {
    check_common(n, gamma)?;
    let (cols, source) = match mode {
        NumericalMode::Moment => (
            c.points().iter().map(|&x| sensitivities(x, p)).collect::<Vec<_>>(),
            FimSource::NumericalMoment,
        ),
        NumericalMode::FiniteDifference { step } => (
            c.points()
                .iter()
                .map(|&x| sensitivities_fd(x, p, step))
                .collect::<Result<Vec<_>>>()?,
            FimSource::FiniteDifference,
        ),
    };
    let mean = accumulate_real_gram(&cols) / c.len() as f64;
    Fim::new(mean * (2.0 * n as f64 * gamma), *p, n, gamma, source)
}

/// FIM for a specific symbol sequence rather than the alphabet average.
pub fn fim_from_symbols(symbols: &[Complex64], p: &HwiParams, gamma: f64) -> Result<Fim> {
    check_common(symbols.len(), gamma)?;
    let cols: Vec<_> = symbols.iter().map(|&x| sensitivities(x, p)).collect();
    Fim::new(
        accumulate_real_gram(&cols) * (2.0 * gamma),
        *p,
        symbols.len(),
        gamma,
        FimSource::NumericalSum,
    )
}

/// A Cramer-Rao bound that may be unbounded when the parameter is not
/// identifiable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CrbValue {
    Finite(f64),
    Unbounded,
}

impl CrbValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            CrbValue::Finite(v) => Some(*v),
            CrbValue::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, CrbValue::Unbounded)
    }
}

impl fmt::Display for CrbValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrbValue::Finite(v) => write!(f, "{v:e}"),
            CrbValue::Unbounded => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub crb: [CrbValue; 4],
    /// Diagonal of the pseudo-inverse; equals the CRB when full rank.
    pub pinv_diag: [f64; 4],
    pub rank: usize,
    /// Orthonormal basis of the numerical kernel.
    pub null_basis: Vec<[f64; 4]>,
    /// `lambda_max / lambda_min`; infinite when rank deficient.
    pub condition_number: f64,
    pub coupling: [[f64; 4]; 4],
}

/// Eigen-decomposition based CRBs with a relative rank tolerance.
pub fn crb_report(f: &Fim, rank_tol: f64) -> Result<CrbReport> {
    if f.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    let eig = SymmetricEigen::new(f.matrix);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let thresh = rank_tol * lmax;
    let mut pinv = Matrix4::zeros();
    let mut null_basis = Vec::new();
    let mut lmin = f64::INFINITY;
    for k in 0..4 {
        let lam = eig.eigenvalues[k];
        let v: Vector4<f64> = eig.eigenvectors.column(k).into();
        if lam > thresh {
            pinv += v * v.transpose() / lam;
            lmin = lmin.min(lam);
        } else {
            null_basis.push([v[0], v[1], v[2], v[3]]);
        }
    }
    let rank = 4 - null_basis.len();
    let mut crb = [CrbValue::Unbounded; 4];
    let mut pinv_diag = [0.0; 4];
    for i in 0..4 {
        pinv_diag[i] = pinv[(i, i)];
        let leak: f64 = null_basis.iter().map(|v| v[i] * v[i]).sum::<f64>().sqrt();
        if leak < 1e-6 && lmax > 0.0 {
            crb[i] = CrbValue::Finite(pinv[(i, i)]);
        }
    }
    let mut coupling = [[0.0; 4]; 4];
    for (i, row) in coupling.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = if i == j {
                1.0
            } else {
                coupling_rho(f, i, j).unwrap_or(0.0)
            };
        }
    }
    Ok(CrbReport {
        crb,
        pinv_diag,
        rank,
        null_basis,
        condition_number: if rank == 4 { lmax / lmin } else { f64::INFINITY },
        coupling,
    })
}

/// Normalized FIM correlation `|J_ij| / sqrt(J_ii J_jj)`.
pub fn coupling_rho(f: &Fim, i: usize, j: usize) -> Result<f64> {
    for k in [i, j] {
        if !(f.matrix[(k, k)] > 0.0) {
            return Err(Error::UndefinedCoupling(k));
        }
    }
    Ok((f.matrix[(i, j)].abs() / (f.matrix[(i, i)] * f.matrix[(j, j)]).sqrt()).min(1.0))
}

/// Full inverse through Cholesky; fails when not positive definite.
pub fn invert(f: &Fim) -> Result<Matrix4<f64>> {
    let rep = crb_report(f, DEFAULT_RANK_TOL)?;
    if rep.rank < 4 {
        return Err(Error::RankDeficient { rank: rep.rank, dim: 4 });
    }
    f.matrix
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))
}

/// `[J^-1]_ii * J_ii`: how much coupling inflates the bound over the
/// uncoupled `1 / J_ii`.
pub fn coupling_inflation(f: &Fim, i: usize) -> Result<f64> {
    Ok(invert(f)?[(i, i)] * f.matrix[(i, i)])
}

/// CRBs for a subset of parameters when all others are known.
pub fn conditional_crb(f: &Fim, subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() || subset.iter().any(|&i| i >= 4) {
        return Err(Error::InvalidParameter(format!("bad parameter subset {subset:?}")));
    }
    let block = f.sub_block(subset);
    let inv = block
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Singular(format!("sub-block {subset:?} not positive definite")))?;
    Ok((0..subset.len()).map(|k| inv[(k, k)]).collect())
}

/// Joint FIM over `(theta, Re h, Im h)` at unit channel gain.
pub fn joint_fim_with_channel(c: &Constellation, p: &HwiParams, n: usize, gamma: f64) -> Result<SMatrix<f64, 6, 6>> {
    check_common(n, gamma)?;
    let cols: Vec<[Complex64; 6]> = c
        .points()
        .iter()
        .map(|&x| {
            let s = sensitivities(x, p);
            let g = apply_hwi(x, p);
            [s[0], s[1], s[2], s[3], g, Complex64::i() * g]
        })
        .collect();
    Ok(accumulate_real_gram(&cols) * (2.0 * n as f64 * gamma / c.len() as f64))
}

/// Schur complement `J_tt - J_th J_hh^-1 J_ht` of a 6x6 joint FIM.
pub fn schur_complement(joint: &SMatrix<f64, 6, 6>) -> Result<Matrix4<f64>> {
    let j_tt: Matrix4<f64> = joint.fixed_view::<4, 4>(0, 0).into();
    let j_th: SMatrix<f64, 4, 2> = joint.fixed_view::<4, 2>(0, 4).into();
    let j_hh: Matrix2<f64> = joint.fixed_view::<2, 2>(4, 4).into();
    let scale = j_hh.abs().max();
    let det = j_hh.determinant();
    if !(det.abs() > 1e-14 * scale * scale) {
        return Err(Error::Singular("channel block of the joint FIM".into()));
    }
    let inv = j_hh
        .try_inverse()
        .ok_or_else(|| Error::Singular("channel block".into()))?;
    let s = j_tt - j_th * inv * j_th.transpose();
    Ok((s + s.transpose()) * 0.5)
}

/// Effective FIM when the complex channel is an unknown nuisance.
pub fn marginalize_channel(c: &Constellation, p: &HwiParams, n: usize, gamma: f64) -> Result<Fim> {
    let joint = joint_fim_with_channel(c, p, n, gamma)?;
    Fim::new(schur_complement(&joint)?, *p, n, gamma, FimSource::ChannelMarginalized)
}

/// Channel-marginalization cost at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelInflation {
    /// Per-parameter CRB ratio unknown-h / known-h (all four unknown);
    /// `None` where the marginalized bound is unbounded.
    pub full: [Option<f64>; 4],
    /// IQ CRB ratio with the PA coefficients held known.
    pub iq_given_pa: [f64; 2],
}

pub fn channel_inflation(c: &Constellation, p: &HwiParams, n: usize, gamma: f64) -> Result<ChannelInflation> {
    let known = fim_numerical(c, p, n, gamma, NumericalMode::Moment)?;
    let marg = marginalize_channel(c, p, n, gamma)?;
    let rk = crb_report(&known, DEFAULT_RANK_TOL)?;
    let rm = crb_report(&marg, DEFAULT_RANK_TOL)?;
    let full = std::array::from_fn(|i| Some(rm.crb[i].finite()? / rk.crb[i].finite()?));
    let ck = conditional_crb(&known, &[0, 1])?;
    let cm = conditional_crb(&marg, &[0, 1])?;
    Ok(ChannelInflation {
        full,
        iq_given_pa: [cm[0] / ck[0], cm[1] / ck[1]],
    })
}

/// Largest principal angle, in degrees, between the spans of two sets of
/// 4-vectors (each set must be linearly independent).
pub fn subspace_angle_deg(a: &[[f64; 4]], b: &[[f64; 4]]) -> Result<f64> {
    let basis = |v: &[[f64; 4]]| -> Result<nalgebra::DMatrix<f64>> {
        if v.is_empty() {
            return Err(Error::InvalidParameter("empty subspace".into()));
        }
        let m = nalgebra::DMatrix::from_fn(4, v.len(), |i, j| v[j][i]);
        let qr = m.qr();
        let r = qr.r();
        if (0..v.len()).any(|k| r[(k, k)].abs() < 1e-12) {
            return Err(Error::DegenerateInput("linearly dependent spanning set".into()));
        }
        Ok(qr.q())
    };
    let (qa, qb) = (basis(a)?, basis(b)?);
    let sv = (qa.transpose() * qb).singular_values();
    // With unequal dimensions the smaller subspace is compared inside the larger.
    let k = a.len().min(b.len());
    let smallest = sv.iter().take(k).fold(f64::INFINITY, |m, &s| m.min(s));
    Ok(smallest.clamp(-1.0, 1.0).acos().to_degrees())
}

/// `lambda_max / lambda_min` of a principal sub-block; infinite when the
/// block is singular.
pub fn sub_block_eigen_ratio(f: &Fim, idx: &[usize]) -> f64 {
    let eig = f.sub_block(idx).symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Standard normal tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscriminationResult {
    pub d_squared: f64,
    pub d: f64,
    pub pe_star: f64,
    pub per_param_dr: [f64; 4],
    /// Set where the CRB is unbounded and the DR was reported as 0.
    pub dr_unbounded: [bool; 4],
}

/// Mahalanobis-type separation `d^2 = dtheta^T J dtheta` between two
/// fingerprints and the resulting minimum pairwise error.
pub fn discrimination(a: &HwiParams, b: &HwiParams, f: &Fim) -> Result<DiscriminationResult> {
    let da = a.to_array();
    let db = b.to_array();
    let delta = Vector4::from_fn(|i, _| da[i] - db[i]);
    let mut d2 = (delta.transpose() * f.matrix * delta)[(0, 0)];
    let tol = 1e-10 * f.matrix.abs().max().max(1.0) * delta.norm_squared().max(1.0);
    if d2 < -tol {
        return Err(Error::NotPsd(d2));
    }
    d2 = d2.max(0.0);
    let d = d2.sqrt();
    let rep = crb_report(f, DEFAULT_RANK_TOL)?;
    let mut per_param_dr = [0.0; 4];
    let mut dr_unbounded = [false; 4];
    for i in 0..4 {
        match rep.crb[i] {
            CrbValue::Finite(v) if v > 0.0 => per_param_dr[i] = delta[i].abs() / v.sqrt(),
            _ => dr_unbounded[i] = true,
        }
    }
    Ok(DiscriminationResult {
        d_squared: d2,
        d,
        pe_star: q_function(d / 2.0),
        per_param_dr,
        dr_unbounded,
    })
}

/// Normalized column correlation between the cubic sensitivity and a
/// fifth-order term `|x_iq|^4 x_iq` over the alphabet. Values near 1 mean a
/// fifth-order coefficient would be absorbed into `alpha3`.
pub fn fifth_order_confounding(c: &Constellation, p: &HwiParams) -> f64 {
    let iq = iq_coefficients(p);
    let (mut cross, mut n3, mut n5) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for &x in c.points() {
        let u = iq.apply(x);
        let s3 = u.norm_sqr() * u;
        let s5 = u.norm_sqr() * s3;
        cross += s3.conj() * s5;
        n3 += s3.norm_sqr();
        n5 += s5.norm_sqr();
    }
    cross.norm() / (n3 * n5).sqrt()
}

/// One row of the CRB sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrbSweepRow {
    pub modulation: String,
    pub snr_db: f64,
    pub n: usize,
    pub param: &'static str,
    /// Closed-form bound.
    pub crb: CrbCell,
    /// Exact alphabet-averaged bound with a known channel.
    pub crb_known_h: CrbCell,
    /// Exact bound with the channel marginalized.
    pub crb_marginalized: CrbCell,
    /// Rank of the known-channel FIM.
    pub rank: usize,
    /// `1 / J_ii` of the known-channel FIM.
    pub crb_uncoupled: f64,
}

/// CSV-friendly CRB: a number or the literal `inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbCell(pub CrbValue);

impl Serialize for CrbCell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            CrbValue::Finite(v) => s.serialize_f64(v),
            CrbValue::Unbounded => s.serialize_str("inf"),
        }
    }
}

pub fn crb_sweep(
    constellations: &[Constellation],
    p: &HwiParams,
    snr_grid_db: &[f64],
    ns: &[usize],
    rank_tol: f64,
) -> Result<Vec<CrbSweepRow>> {
    let mut rows = Vec::new();
    for c in constellations {
        let m = c.moments();
        for &snr_db in snr_grid_db {
            let gamma = 10f64.powf(snr_db / 10.0);
            for &n in ns {
                let cf = crb_report(&fim_closed_form(&m, p, n, gamma)?, rank_tol)?;
                let known = fim_numerical(c, p, n, gamma, NumericalMode::Moment)?;
                let kr = crb_report(&known, rank_tol)?;
                let mr = match marginalize_channel(c, p, n, gamma) {
                    Ok(f) => crb_report(&f, rank_tol)?.crb,
                    Err(e) if e.is_numerical() => [CrbValue::Unbounded; 4],
                    Err(e) => return Err(e),
                };
                for (i, name) in PARAM_NAMES.iter().enumerate() {
                    rows.push(CrbSweepRow {
                        modulation: c.name().to_string(),
                        snr_db,
                        n,
                        param: name,
                        crb: CrbCell(cf.crb[i]),
                        crb_known_h: CrbCell(kr.crb[i]),
                        crb_marginalized: CrbCell(mr[i]),
                        rank: kr.rank,
                        crb_uncoupled: 1.0 / known.matrix[(i, i)],
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_crb_csv<W: std::io::Write>(rows: &[CrbSweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
