//! Fingerprint accumulation, discrimination ratios, identifiability-weighted
//! scoring and the Mahalanobis (GLRT) baseline.

pub mod experiment;
pub mod roc;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::features::{
    feature_group, feature_index, pearson, FeatureGroup, FeatureRecord, FeatureVector, FEATURE_NAMES, N_FEATURES,
};
use crate::rng::rng_from;

pub use roc::{mann_whitney_auc, roc_auc, roc_curve, spearman, threshold_at_fa, RocCurve, RocPoint};

/// Feature records grouped by satellite id.
pub type SatelliteTable = BTreeMap<u32, Vec<FeatureRecord>>;

pub fn group_by_satellite(records: impl IntoIterator<Item = FeatureRecord>) -> SatelliteTable {
    let mut t = SatelliteTable::new();
    for r in records {
        t.entry(r.satellite_id).or_default().push(r);
    }
    t
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor n - 1); 0 for fewer than two values.
fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Multi-message fingerprint of one satellite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub satellite_id: u32,
    /// SNR-weighted feature means.
    pub mean: [f64; N_FEATURES],
    /// Unweighted sample variance of the per-message features.
    pub variance: [f64; N_FEATURES],
    pub n_messages: usize,
}

/// Weighted mean of per-message features with weights proportional to the
/// linear per-burst SNR.
pub fn accumulate(satellite_id: u32, features: &[FeatureVector], snr_db: &[f64]) -> Result<Fingerprint> {
    if features.is_empty() {
        return Err(Error::InsufficientData(format!(
            "satellite {satellite_id}: no messages"
        )));
    }
    if features.len() != snr_db.len() {
        return Err(Error::InvalidParameter(format!(
            "{} feature vectors but {} SNR values",
            features.len(),
            snr_db.len()
        )));
    }
    let w: Vec<f64> = snr_db.iter().map(|s| 10f64.powf(s / 10.0)).collect();
    let wsum: f64 = w.iter().sum();
    if w.iter().any(|x| !x.is_finite()) || !(wsum > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "satellite {satellite_id}: accumulation weights sum to {wsum}"
        )));
    }
    let rows: Vec<[f64; N_FEATURES]> = features.iter().map(FeatureVector::to_array).collect();
    let mut m = [0.0; N_FEATURES];
    let mut var = [0.0; N_FEATURES];
    for k in 0..N_FEATURES {
        m[k] = rows.iter().zip(&w).map(|(r, wi)| wi * r[k]).sum::<f64>() / wsum;
        let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        var[k] = sample_std(&col).powi(2);
    }
    Ok(Fingerprint {
        satellite_id,
        mean: m,
        variance: var,
        n_messages: features.len(),
    })
}

/// Fingerprint from the first `limit` records (all when `None`).
pub fn fingerprint_of(satellite_id: u32, records: &[FeatureRecord], limit: Option<usize>) -> Result<Fingerprint> {
    let n = limit.map_or(records.len(), |l| l.min(records.len()));
    let f: Vec<FeatureVector> = records[..n].iter().map(|r| r.features).collect();
    let s: Vec<f64> = records[..n].iter().map(|r| r.snr_db).collect();
    accumulate(satellite_id, &f, &s)
}

pub fn fingerprints(table: &SatelliteTable, limit: Option<usize>) -> Result<Vec<Fingerprint>> {
    table.iter().map(|(&id, r)| fingerprint_of(id, r, limit)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Strong,
    Moderate,
    Detectable,
    Weak,
    NotDiscriminative,
}

/// Lower edges of the verdict bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictBands {
    pub strong: f64,
    pub moderate: f64,
    pub detectable: f64,
    pub weak: f64,
}

impl Default for VerdictBands {
    fn default() -> Self {
        VerdictBands {
            strong: 3.0,
            moderate: 1.5,
            detectable: 1.0,
            weak: 0.8,
        }
    }
}

impl VerdictBands {
    pub fn classify(&self, dr: f64) -> Verdict {
        if dr > self.strong {
            Verdict::Strong
        } else if dr >= self.moderate {
            Verdict::Moderate
        } else if dr >= self.detectable {
            Verdict::Detectable
        } else if dr >= self.weak {
            Verdict::Weak
        } else {
            Verdict::NotDiscriminative
        }
    }
}

/// How the per-message noise level is read off the half-A/half-B differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraEstimator {
    /// std of (A - B) / sqrt 2: the noise std of one half-mean.
    #[default]
    PairDifference,
    /// std of (A - B) without the sqrt 2 correction.
    RawDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrConfig {
    pub n_bal: usize,
    pub n_trials: usize,
    #[serde(default)]
    pub bands: VerdictBands,
    #[serde(default)]
    pub intra: IntraEstimator,
}

impl Default for DrConfig {
    fn default() -> Self {
        DrConfig {
            n_bal: 30,
            n_trials: 30,
            bands: VerdictBands::default(),
            intra: IntraEstimator::default(),
        }
    }
}

impl DrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bal < 2 || !self.n_bal.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_bal must be even and >= 2, got {}",
                self.n_bal
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidParameter("n_trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrRow {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
    pub n_trials: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrTable {
    pub rows: Vec<DrRow>,
    pub n_satellites: usize,
    /// Satellites with fewer than `n_bal` messages.
    pub excluded: Vec<u32>,
    pub n_bal: usize,
}

impl DrTable {
    /// Table from externally supplied DR values (std 0, one "trial").
    pub fn from_values(values: &[(&str, f64)], bands: &VerdictBands) -> Result<Self> {
        let mut rows = Vec::with_capacity(values.len());
        for &(name, dr) in values {
            if feature_index(name).is_none() {
                return Err(Error::InvalidParameter(format!("unknown feature {name}")));
            }
            if !(dr >= 0.0) {
                return Err(Error::InvalidParameter(format!("DR for {name} must be >= 0, got {dr}")));
            }
            rows.push(DrRow {
                feature: name.to_string(),
                mean: dr,
                std: 0.0,
                n_trials: 1,
                verdict: bands.classify(dr),
            });
        }
        Ok(DrTable {
            rows,
            n_satellites: 0,
            excluded: Vec::new(),
            n_bal: 0,
        })
    }

    pub fn get(&self, feature: &str) -> Option<&DrRow> {
        self.rows.iter().find(|r| r.feature == feature)
    }

    /// Mean DR per feature index; features missing from the table are 0.
    pub fn values(&self) -> [f64; N_FEATURES] {
        let mut v = [0.0; N_FEATURES];
        for r in &self.rows {
            if let Some(k) = feature_index(&r.feature) {
                v[k] = r.mean;
            }
        }
        v
    }

    /// Rows in descending DR order.
    pub fn sorted(&self) -> Vec<&DrRow> {
        let mut r: Vec<&DrRow> = self.rows.iter().collect();
        r.sort_by(|a, b| b.mean.total_cmp(&a.mean));
        r
    }
}

fn ratio(inter: f64, intra: f64) -> f64 {
    if intra > 0.0 {
        inter / intra
    } else if inter > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Balanced bootstrap discrimination ratio of every feature.
///
/// Each trial draws `n_bal` messages per satellite without replacement and
/// splits them into halves A and B. DR is the across-satellite std of the
/// half-A means over the across-satellite std of the A - B differences
/// (scaled per [`IntraEstimator`]).
pub fn balanced_dr(table: &SatelliteTable, cfg: &DrConfig, seed: u64) -> Result<DrTable> {
    cfg.validate()?;
    let excluded: Vec<u32> = table
        .iter()
        .filter(|(_, r)| r.len() < cfg.n_bal)
        .map(|(&id, _)| id)
        .collect();
    let eligible: Vec<(u32, Vec<[f64; N_FEATURES]>)> = table
        .iter()
        .filter(|(_, r)| r.len() >= cfg.n_bal)
        .map(|(&id, r)| (id, r.iter().map(|x| x.features.to_array()).collect()))
        .collect();
    if eligible.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} satellites have >= {} messages, need 2",
            eligible.len(),
            cfg.n_bal
        )));
    }
    let half = cfg.n_bal / 2;
    let scale = match cfg.intra {
        IntraEstimator::PairDifference => std::f64::consts::FRAC_1_SQRT_2,
        IntraEstimator::RawDifference => 1.0,
    };
    let per_trial: Vec<[f64; N_FEATURES]> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut a_means = vec![[0.0; N_FEATURES]; eligible.len()];
            let mut diffs = vec![[0.0; N_FEATURES]; eligible.len()];
            for (s, (id, rows)) in eligible.iter().enumerate() {
                let mut rng = rng_from(seed, &[t as u64, u64::from(*id)]);
                let pick = sample(&mut rng, rows.len(), cfg.n_bal).into_vec();
                for k in 0..N_FEATURES {
                    let a = pick[..half].iter().map(|&i| rows[i][k]).sum::<f64>() / half as f64;
                    let b = pick[half..].iter().map(|&i| rows[i][k]).sum::<f64>() / half as f64;
                    a_means[s][k] = a;
                    diffs[s][k] = (a - b) * scale;
                }
            }
            std::array::from_fn(|k| {
                let a: Vec<f64> = a_means.iter().map(|r| r[k]).collect();
                let d: Vec<f64> = diffs.iter().map(|r| r[k]).collect();
                ratio(sample_std(&a), sample_std(&d))
            })
        })
        .collect();
    let rows = (0..N_FEATURES)
        .map(|k| {
            let v: Vec<f64> = per_trial.iter().map(|r| r[k]).collect();
            let m = mean(&v);
            let sd = if m.is_finite() { sample_std(&v) } else { f64::INFINITY };
            DrRow {
                feature: FEATURE_NAMES[k].to_string(),
                mean: m,
                std: sd,
                n_trials: cfg.n_trials,
                verdict: cfg.bands.classify(m),
            }
        })
        .collect();
    Ok(DrTable {
        rows,
        n_satellites: eligible.len(),
        excluded,
        n_bal: cfg.n_bal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub feature: String,
    /// `None` when either campaign's values are constant.
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    pub n_common: usize,
}

/// Two-sided p-value of a sample correlation `r` from `n` pairs under the
/// null of zero correlation, via `t = r sqrt((n-2)/(1-r^2))`.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 || !r.is_finite() {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * dist.sf(t.abs()))
}

/// Per-feature Pearson correlation of fingerprint means across the
/// satellites present in both campaigns, with a two-sided t-test p-value.
pub fn cross_stability(a: &[Fingerprint], b: &[Fingerprint]) -> Result<Vec<StabilityRow>> {
    let bmap: BTreeMap<u32, &Fingerprint> = b.iter().map(|f| (f.satellite_id, f)).collect();
    let pairs: Vec<(&Fingerprint, &Fingerprint)> = a
        .iter()
        .filter_map(|fa| bmap.get(&fa.satellite_id).map(|fb| (fa, *fb)))
        .collect();
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} common satellites, need 3")));
    }
    Ok((0..N_FEATURES)
        .map(|k| {
            let xa: Vec<f64> = pairs.iter().map(|(p, _)| p.mean[k]).collect();
            let xb: Vec<f64> = pairs.iter().map(|(_, q)| q.mean[k]).collect();
            let r = pearson(&xa, &xb);
            let p_value = r.and_then(|r| pearson_p_value(r, n));
            StabilityRow {
                feature: FEATURE_NAMES[k].to_string(),
                pearson_r: r,
                p_value,
                n_common: n,
            }
        })
        .collect())
}

/// Features admitted by the identifiability factor of the known symbols:
/// amplitude and oscillator features always, IQ features only when `beta > 0`.
pub fn active_feature_set(beta: f64) -> Vec<usize> {
    (0..N_FEATURES)
        .filter(|&k| match feature_group(k) {
            FeatureGroup::Pa | FeatureGroup::Oscillator => true,
            FeatureGroup::Iq => beta > 1e-9,
            _ => false,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    DrSquared,
    Dr,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub scheme: WeightScheme,
    /// One weight per feature; features outside the active set are 0.
    pub weights: [f64; N_FEATURES],
}

impl WeightVector {
    pub fn get(&self, feature: &str) -> Option<f64> {
        feature_index(feature).map(|k| self.weights[k])
    }

    /// Equal weights on a subset.
    pub fn uniform(subset: &[usize]) -> Result<Self> {
        if subset.is_empty() || subset.iter().any(|&k| k >= N_FEATURES) {
            return Err(Error::InvalidParameter(format!("bad feature subset {subset:?}")));
        }
        let mut weights = [0.0; N_FEATURES];
        for &k in subset {
            weights[k] = 1.0 / subset.len() as f64;
        }
        Ok(WeightVector {
            scheme: WeightScheme::Equal,
            weights,
        })
    }
}

/// Normalized DR-derived weights over `active`. Infinite DRs (features with
/// no within-satellite noise) share all the weight between them.
pub fn iwat_weights(dr: &DrTable, active: &[usize], scheme: WeightScheme) -> Result<WeightVector> {
    if active.is_empty() || active.iter().any(|&k| k >= N_FEATURES) {
        return Err(Error::InvalidParameter(format!("bad active set {active:?}")));
    }
    let values = dr.values();
    let infinite: Vec<usize> = active.iter().copied().filter(|&k| values[k].is_infinite()).collect();
    let mut raw = [0.0; N_FEATURES];
    for &k in active {
        let d = values[k];
        raw[k] = if !infinite.is_empty() {
            if d.is_infinite() {
                1.0
            } else {
                0.0
            }
        } else {
            match scheme {
                WeightScheme::DrSquared => d * d,
                WeightScheme::Dr => d,
                WeightScheme::Equal => 1.0,
            }
        };
    }
    if matches!(scheme, WeightScheme::Equal) && active.iter().all(|&k| values[k] == 0.0) {
        return Err(Error::DegenerateInput("every active feature has DR = 0".into()));
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("every active feature has DR = 0".into()));
    }
    Ok(WeightVector {
        scheme,
        weights: raw.map(|r| r / total),
    })
}

/// Global z-scoring with statistics of the enrollment fingerprint means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; N_FEATURES],
    /// Sample std across satellites; constant features use 1.
    pub std: [f64; N_FEATURES],
}

impl Normalizer {
    pub fn fit(enrollment: &[Fingerprint]) -> Result<Self> {
        if enrollment.is_empty() {
            return Err(Error::InsufficientData("empty enrollment".into()));
        }
        let mut mean_v = [0.0; N_FEATURES];
        let mut std_v = [1.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let col: Vec<f64> = enrollment.iter().map(|f| f.mean[k]).collect();
            mean_v[k] = mean(&col);
            let sd = sample_std(&col);
            if sd > 1e-300 {
                std_v[k] = sd;
            }
        }
        Ok(Normalizer {
            mean: mean_v,
            std: std_v,
        })
    }

    pub fn apply(&self, f: &Fingerprint) -> Fingerprint {
        let mut out = f.clone();
        for k in 0..N_FEATURES {
            out.mean[k] = (f.mean[k] - self.mean[k]) / self.std[k];
            out.variance[k] = f.variance[k] / (self.std[k] * self.std[k]);
        }
        out
    }
}

pub fn weighted_distance(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES], w: &WeightVector) -> f64 {
    (0..N_FEATURES).map(|k| w.weights[k] * (a[k] - b[k]).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteScore {
    pub satellite_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub scores: Vec<SatelliteScore>,
    pub claimed_id: u32,
    pub threshold: f64,
    pub accepted: bool,
}

impl AuthDecision {
    pub fn best_score(&self) -> f64 {
        self.scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min)
    }
}

/// Weighted squared distance to every enrolled fingerprint; claims the
/// closest satellite and accepts when its score is below `tau`. Both sides
/// must already be normalized.
pub fn iwat_score(test: &Fingerprint, enrollment: &[Fingerprint], w: &WeightVector, tau: f64) -> Result<AuthDecision> {
    let scores: Vec<f64> = enrollment
        .iter()
        .map(|e| weighted_distance(&test.mean, &e.mean, w))
        .collect();
    decide(&scores, enrollment, tau)
}

fn decide(scores: &[f64], enrollment: &[Fingerprint], tau: f64) -> Result<AuthDecision> {
    let (best, _) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InsufficientData("empty enrollment".into()))?;
    Ok(AuthDecision {
        scores: enrollment
            .iter()
            .zip(scores)
            .map(|(e, &score)| SatelliteScore {
                satellite_id: e.satellite_id,
                score,
            })
            .collect(),
        claimed_id: enrollment[best].satellite_id,
        threshold: tau,
        accepted: scores[best] < tau,
    })
}

/// `(f - mu_i)^T cov^-1 (f - mu_i)` over `subset` for every enrolled satellite.
pub fn mahalanobis_scores(
    test: &Fingerprint,
    enrollment: &[Fingerprint],
    subset: &[usize],
    cov: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let d = subset.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::InvalidParameter(format!(
            "covariance is {}x{}, subset has {d}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("regularized covariance is not positive definite".into()))?;
    Ok(enrollment
        .iter()
        .map(|e| {
            let diff = DVector::from_iterator(d, subset.iter().map(|&k| test.mean[k] - e.mean[k]));
            diff.dot(&chol.solve(&diff))
        })
        .collect())
}

/// Sample covariance of the enrollment fingerprint means over `subset`,
/// plus `ridge` on the diagonal.
pub fn enrollment_covariance(enrollment: &[Fingerprint], subset: &[usize], ridge: f64) -> Result<DMatrix<f64>> {
    let n = enrollment.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} enrolled satellites, need 2")));
    }
    if subset.is_empty() || subset.iter().any(|&k| k >= N_FEATURES) || !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("subset {subset:?}, ridge {ridge}")));
    }
    let d = subset.len();
    let mu: Vec<f64> = subset
        .iter()
        .map(|&k| enrollment.iter().map(|f| f.mean[k]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::from_fn(d, d, |i, j| {
        enrollment
            .iter()
            .map(|f| (f.mean[subset[i]] - mu[i]) * (f.mean[subset[j]] - mu[j]))
            .sum::<f64>()
            / (n - 1) as f64
    });
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok(cov)
}

/// GLRT baseline: Mahalanobis distance with the regularized enrollment
/// covariance.
pub fn glrt_score(test: &Fingerprint, enrollment: &[Fingerprint], subset: &[usize], ridge: f64) -> Result<Vec<f64>> {
    let cov = enrollment_covariance(enrollment, subset, ridge)?;
    mahalanobis_scores(test, enrollment, subset, &cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn fv(v: f64) -> FeatureVector {
        FeatureVector::from_array([v; N_FEATURES])
    }

    fn fp(id: u32, m: [f64; N_FEATURES]) -> Fingerprint {
        Fingerprint {
            satellite_id: id,
            mean: m,
            variance: [0.0; N_FEATURES],
            n_messages: 1,
        }
    }

    fn record(id: u32, i: usize, f: [f64; N_FEATURES]) -> FeatureRecord {
        FeatureRecord {
            satellite_id: id,
            burst_index: i,
            snr_db: 20.0,
            features: FeatureVector::from_array(f),
        }
    }

    /// Satellites 1..=n, each with `msgs` records of `value(sat) + noise`.
    fn table(n: u32, msgs: usize, value: impl Fn(u32) -> f64, noise: f64, seed: u64) -> SatelliteTable {
        let mut rng = rng_from(seed, &[]);
        let mut recs = Vec::new();
        for s in 1..=n {
            for i in 0..msgs {
                let f = std::array::from_fn(|k| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    value(s) * (k + 1) as f64 + noise * z
                });
                recs.push(record(s, i, f));
            }
        }
        group_by_satellite(recs)
    }

    #[test]
    fn equal_snr_gives_plain_mean() {
        let f = accumulate(3, &[fv(1.0), fv(2.0), fv(6.0)], &[10.0; 3]).unwrap();
        assert_abs_diff_eq!(f.mean[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.variance[0], 7.0, epsilon = 1e-12);
        assert_eq!(f.n_messages, 3);
    }

    #[test]
    fn snr_weighting() {
        // 10 dB and 20 dB: weights 10 and 100
        let f = accumulate(1, &[fv(0.0), fv(11.0)], &[10.0, 20.0]).unwrap();
        assert_abs_diff_eq!(f.mean[4], 10.0, epsilon = 1e-12);
        assert!(accumulate(1, &[fv(0.0)], &[f64::NEG_INFINITY]).is_err());
        assert!(accumulate(1, &[], &[]).is_err());
        assert!(accumulate(1, &[fv(0.0)], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn accumulation_variance_law() {
        let mut rng = rng_from(12, &[]);
        for n in [10usize, 100] {
            let means: Vec<f64> = (0..400)
                .map(|_| {
                    let f: Vec<FeatureVector> = (0..n).map(|_| fv(StandardNormal.sample(&mut rng))).collect();
                    accumulate(1, &f, &vec![15.0; n]).unwrap().mean[0]
                })
                .collect();
            let ratio = sample_std(&means).powi(2) * n as f64;
            assert!((0.8..1.2).contains(&ratio), "n = {n}: {ratio}");
        }
    }

    #[test]
    fn noise_reduction_factor_at_500() {
        let mut rng = rng_from(13, &[]);
        let means: Vec<f64> = (0..300)
            .map(|_| {
                let f: Vec<FeatureVector> = (0..500).map(|_| fv(StandardNormal.sample(&mut rng))).collect();
                accumulate(1, &f, &vec![15.0; 500]).unwrap().mean[0]
            })
            .collect();
        let factor = 1.0 / sample_std(&means);
        assert!((factor - 500f64.sqrt()).abs() < 0.15 * 22.36, "{factor}");
    }

    #[test]
    fn dr_of_constant_feature_is_zero() {
        let t = table(5, 40, |_| 1.0, 0.0, 1);
        let dr = balanced_dr(&t, &DrConfig::default(), 2).unwrap();
        assert!(dr
            .rows
            .iter()
            .all(|r| r.mean == 0.0 && r.verdict == Verdict::NotDiscriminative));
    }

    #[test]
    fn dr_of_separated_feature_is_strong() {
        let t = table(10, 40, f64::from, 0.01, 3);
        let dr = balanced_dr(&t, &DrConfig::default(), 4).unwrap();
        let r = dr.get("amp_var").unwrap();
        assert!(r.mean > 100.0 && r.verdict == Verdict::Strong, "{r:?}");
        assert_eq!(r.n_trials, 30);
    }

    #[test]
    fn dr_noise_floor_depends_on_intra_estimator() {
        let t = table(27, 60, |_| 0.0, 1.0, 5);
        let pair = balanced_dr(&t, &DrConfig::default(), 6).unwrap();
        let raw = balanced_dr(
            &t,
            &DrConfig {
                intra: IntraEstimator::RawDifference,
                ..DrConfig::default()
            },
            6,
        )
        .unwrap();
        for (p, r) in pair.rows.iter().zip(&raw.rows) {
            assert!((p.mean - 1.0).abs() < 0.15, "{p:?}");
            assert_abs_diff_eq!(r.mean, p.mean * std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn dr_excludes_short_satellites() {
        let mut t = table(4, 40, f64::from, 0.1, 7);
        t.get_mut(&2).unwrap().truncate(10);
        let dr = balanced_dr(&t, &DrConfig::default(), 8).unwrap();
        assert_eq!(dr.excluded, vec![2]);
        assert_eq!(dr.n_satellites, 3);
        t.get_mut(&3).unwrap().truncate(10);
        t.get_mut(&4).unwrap().truncate(10);
        assert!(matches!(
            balanced_dr(&t, &DrConfig::default(), 8),
            Err(Error::InsufficientData(_))
        ));
        let bad = DrConfig {
            n_bal: 7,
            ..DrConfig::default()
        };
        assert!(balanced_dr(&t, &bad, 8).is_err());
    }

    #[test]
    fn dr_affine_invariance() {
        let t = table(8, 40, |s| f64::from(s).sin(), 0.3, 9);
        let scaled: SatelliteTable = t
            .iter()
            .map(|(&id, r)| {
                let r2 = r
                    .iter()
                    .map(|x| {
                        let mut y = x.clone();
                        y.features = FeatureVector::from_array(x.features.to_array().map(|v| -3.7 * v + 12.0));
                        y
                    })
                    .collect();
                (id, r2)
            })
            .collect();
        let a = balanced_dr(&t, &DrConfig::default(), 10).unwrap();
        let b = balanced_dr(&scaled, &DrConfig::default(), 10).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_abs_diff_eq!(x.mean, y.mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn verdict_bands() {
        let b = VerdictBands::default();
        assert_eq!(b.classify(4.48), Verdict::Strong);
        assert_eq!(b.classify(3.0), Verdict::Moderate);
        assert_eq!(b.classify(2.40), Verdict::Moderate);
        assert_eq!(b.classify(1.45), Verdict::Detectable);
        assert_eq!(b.classify(0.92), Verdict::Weak);
        assert_eq!(b.classify(0.79), Verdict::NotDiscriminative);
    }

    #[test]
    fn stability_of_identical_campaigns() {
        let a: Vec<Fingerprint> = (1..=6)
            .map(|i| fp(i, std::array::from_fn(|k| f64::from(i) * (k as f64 - 3.0))))
            .collect();
        let rows = cross_stability(&a, &a).unwrap();
        for (k, r) in rows.iter().enumerate() {
            if k == 3 {
                assert_eq!(r.pearson_r, None);
            } else {
                assert_abs_diff_eq!(r.pearson_r.unwrap(), 1.0, epsilon = 1e-12);
                assert_eq!(r.p_value, Some(0.0));
            }
        }
        assert!(cross_stability(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn stability_of_independent_campaigns() {
        let mut rng = rng_from(21, &[]);
        let mut small = 0;
        let reps = 200;
        for _ in 0..reps {
            let mk = |rng: &mut crate::rng::Rng| -> Vec<Fingerprint> {
                (1..=24)
                    .map(|i| fp(i, std::array::from_fn(|_| StandardNormal.sample(rng))))
                    .collect()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let r = cross_stability(&a, &b).unwrap()[0].pearson_r.unwrap();
            if r.abs() < 0.5 {
                small += 1;
            }
        }
        assert!(small as f64 / reps as f64 > 0.97, "{small}");
    }

    #[test]
    fn p_value_matches_reference() {
        assert_abs_diff_eq!(
            pearson_p_value(0.5, 12).unwrap(),
            0.097_854_614_257_812_46,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            pearson_p_value(-0.3, 24).unwrap(),
            0.154_363_009_136_010_8,
            epsilon = 1e-9
        );
        assert_eq!(pearson_p_value(1.0, 5), Some(0.0));
        assert_eq!(pearson_p_value(0.2, 2), None);
    }

    fn published_dr() -> DrTable {
        DrTable::from_values(
            &[
                ("amp_var", 4.48),
                ("amp_range", 4.29),
                ("phase_acf1", 2.40),
                ("amp_acf1", 1.45),
                ("amp_kurtosis", 0.92),
                ("evm", 0.86),
            ],
            &VerdictBands::default(),
        )
        .unwrap()
    }

    fn six() -> Vec<usize> {
        ["amp_var", "amp_range", "phase_acf1", "amp_acf1", "amp_kurtosis", "evm"]
            .iter()
            .map(|n| feature_index(n).unwrap())
            .collect()
    }

    #[test]
    fn squared_dr_weights() {
        let w = iwat_weights(&published_dr(), &six(), WeightScheme::DrSquared).unwrap();
        assert_abs_diff_eq!(w.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let expected = 4.48f64.powi(2)
            / [4.48f64, 4.29, 2.40, 1.45, 0.92, 0.86]
                .iter()
                .map(|d| d * d)
                .sum::<f64>();
        assert_abs_diff_eq!(w.get("amp_var").unwrap(), expected, epsilon = 1e-12);
        assert!((w.get("amp_var").unwrap() - 0.42).abs() < 0.01);
        let eq = iwat_weights(&published_dr(), &six(), WeightScheme::Equal).unwrap();
        for k in six() {
            assert_abs_diff_eq!(eq.weights[k], 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_nonzero_dr_takes_all_weight() {
        let dr = DrTable::from_values(&[("amp_var", 0.0), ("phase_acf1", 2.0)], &VerdictBands::default()).unwrap();
        let w = iwat_weights(&dr, &active_feature_set(0.0), WeightScheme::DrSquared).unwrap();
        assert_eq!(w.get("phase_acf1"), Some(1.0));
        let zero = DrTable::from_values(&[("amp_var", 0.0)], &VerdictBands::default()).unwrap();
        assert!(iwat_weights(&zero, &active_feature_set(0.0), WeightScheme::DrSquared).is_err());
        assert!(iwat_weights(&zero, &active_feature_set(0.0), WeightScheme::Equal).is_err());
    }

    #[test]
    fn weight_share_monotone_in_own_dr() {
        let base = published_dr();
        let mut prev = 0.0;
        for bump in [0.0, 0.5, 1.0, 3.0] {
            let mut t = base.clone();
            t.rows[3].mean += bump;
            let w = iwat_weights(&t, &six(), WeightScheme::DrSquared).unwrap();
            assert!(w.get("amp_acf1").unwrap() >= prev);
            prev = w.get("amp_acf1").unwrap();
        }
    }

    #[test]
    fn active_set_follows_beta() {
        let zero = active_feature_set(0.0);
        assert_eq!(zero.len(), 7);
        assert!(!zero.contains(&feature_index("iq_eps_hat").unwrap()));
        let one = active_feature_set(1.0);
        assert_eq!(one.len(), 9);
        assert!(one.contains(&feature_index("iq_phi_hat").unwrap()));
    }

    #[test]
    fn identical_row_scores_zero() {
        let enr: Vec<Fingerprint> = (1..=4).map(|i| fp(i, [f64::from(i); N_FEATURES])).collect();
        let w = WeightVector::uniform(&six()).unwrap();
        let d = iwat_score(&enr[2], &enr, &w, 1e-9).unwrap();
        assert_eq!(d.claimed_id, 3);
        assert_eq!(d.best_score(), 0.0);
        assert!(d.accepted);
        assert!(iwat_score(&enr[0], &[], &w, 1.0).is_err());
    }

    #[test]
    fn single_feature_weight_ranks_by_that_feature() {
        let mut rng = rng_from(31, &[]);
        let enr: Vec<Fingerprint> = (0..8).map(|i| fp(i, std::array::from_fn(|_| rng.random()))).collect();
        let test = fp(99, std::array::from_fn(|_| rng.random()));
        let w = WeightVector::uniform(&[5]).unwrap();
        let d = iwat_score(&test, &enr, &w, 1.0).unwrap();
        let want = enr
            .iter()
            .min_by(|a, b| {
                (a.mean[5] - test.mean[5])
                    .abs()
                    .total_cmp(&(b.mean[5] - test.mean[5]).abs())
            })
            .unwrap();
        assert_eq!(d.claimed_id, want.satellite_id);
    }

    #[test]
    fn weight_scaling_keeps_claims() {
        let mut rng = rng_from(32, &[]);
        let enr: Vec<Fingerprint> = (0..8).map(|i| fp(i, std::array::from_fn(|_| rng.random()))).collect();
        let w = iwat_weights(&published_dr(), &six(), WeightScheme::DrSquared).unwrap();
        let w2 = WeightVector {
            weights: w.weights.map(|x| 7.5 * x),
            ..w.clone()
        };
        for _ in 0..20 {
            let t = fp(0, std::array::from_fn(|_| rng.random()));
            let a = iwat_score(&t, &enr, &w, 0.05).unwrap();
            let b = iwat_score(&t, &enr, &w2, 0.05 * 7.5).unwrap();
            assert_eq!(a.claimed_id, b.claimed_id);
            assert_eq!(a.accepted, b.accepted);
        }
    }

    #[test]
    fn mahalanobis_with_identity_is_euclidean() {
        let mut rng = rng_from(33, &[]);
        let enr: Vec<Fingerprint> = (0..5).map(|i| fp(i, std::array::from_fn(|_| rng.random()))).collect();
        let t = fp(0, std::array::from_fn(|_| rng.random()));
        let subset = [0, 1, 3, 4];
        let s = mahalanobis_scores(&t, &enr, &subset, &DMatrix::identity(4, 4)).unwrap();
        for (e, si) in enr.iter().zip(&s) {
            let euclid: f64 = subset.iter().map(|&k| (t.mean[k] - e.mean[k]).powi(2)).sum();
            assert_abs_diff_eq!(*si, euclid, epsilon = 1e-12);
        }
        let g = glrt_score(&enr[1], &enr, &subset, 0.1).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn singular_covariance_without_ridge() {
        let enr: Vec<Fingerprint> = (0..3).map(|i| fp(i, [f64::from(i); N_FEATURES])).collect();
        assert!(matches!(
            glrt_score(&enr[0], &enr, &[0, 1], 0.0),
            Err(Error::Singular(_))
        ));
        assert!(glrt_score(&enr[0], &enr, &[0, 1], 0.01).is_ok());
    }

    #[test]
    fn normalizer_uses_enrollment_statistics() {
        let enr: Vec<Fingerprint> = (1..=3).map(|i| fp(i, [f64::from(i); N_FEATURES])).collect();
        let n = Normalizer::fit(&enr).unwrap();
        assert_abs_diff_eq!(n.apply(&enr[2]).mean[0], 1.0, epsilon = 1e-12);
        let flat: Vec<Fingerprint> = (1..=3).map(|i| fp(i, [2.0; N_FEATURES])).collect();
        let nf = Normalizer::fit(&flat).unwrap();
        assert_eq!(nf.std[0], 1.0);
        assert_eq!(nf.apply(&flat[0]).mean[0], 0.0);
    }
}
