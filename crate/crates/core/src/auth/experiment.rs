//! Two-campaign authentication experiment: campaign A enrolls, campaign B
//! probes, and every strategy is scored by ROC against the same fleet.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::{roc_curve, spearman, threshold_at_fa, PdAtFa, RocCurve};
use super::{
    active_feature_set, balanced_dr, cross_stability, enrollment_covariance, fingerprints, group_by_satellite,
    iwat_weights, mahalanobis_scores, weighted_distance, DrConfig, DrTable, Fingerprint, Normalizer, SatelliteTable,
    StabilityRow, WeightScheme, WeightVector,
};
use crate::constellation::{moments_of, Constellation, ConstellationKind};
use crate::error::{Error, Result};
use crate::features::{extract_features, feature_index, FeatureRecord, PipelineConfig, FEATURE_NAMES};
use crate::rng::{derive_seed, rng_from};
use crate::signal_model::{
    generate_fleet, iridium_known_symbols, synthesize_burst_for, Burst, ChannelConfig, FleetSpread, HwiParams,
    PilotPattern,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub n_satellites: usize,
    pub spread: FleetSpread,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_satellites: 27,
            spread: FleetSpread::default(),
        }
    }
}

/// Known-symbol layout of the simulated bursts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PilotMode {
    #[default]
    Iridium,
    Random {
        modulation: ConstellationKind,
        len: usize,
    },
}

impl PilotMode {
    pub fn pattern(&self) -> Result<PilotPattern> {
        Ok(match *self {
            PilotMode::Iridium => PilotPattern::Iridium,
            PilotMode::Random { modulation, len } => PilotPattern::Random {
                constellation: Constellation::new(modulation)?,
                len,
            },
        })
    }

    /// Identifiability factor of the known symbols.
    pub fn beta(&self) -> Result<f64> {
        Ok(match *self {
            PilotMode::Iridium => moments_of(&iridium_known_symbols()).beta,
            PilotMode::Random { modulation, .. } => Constellation::new(modulation)?.moments().beta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub messages_per_satellite: usize,
    pub pilots: PilotMode,
    pub rician_k_db: f64,
    /// Per-burst mean SNR drawn uniformly in this dB range.
    pub snr_db_range: (f64, f64),
    /// Per-burst CFO drawn uniformly in `[-max_cfo, max_cfo]` rad/symbol.
    pub max_cfo: f64,
    pub pipeline: PipelineConfig,
    pub dr: DrConfig,
    /// Operating point used to set the acceptance threshold.
    pub target_fa: f64,
    pub fa_targets: Vec<f64>,
    pub n_acc_grid: Vec<usize>,
    pub glrt_ridge: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            messages_per_satellite: 200,
            pilots: PilotMode::Iridium,
            rician_k_db: 10.0,
            snr_db_range: (15.0, 25.0),
            max_cfo: 0.01,
            pipeline: PipelineConfig::default(),
            dr: DrConfig::default(),
            target_fa: 0.1,
            fa_targets: vec![0.01, 0.1],
            n_acc_grid: vec![1, 2, 5, 10, 20, 50, 100, 200],
            glrt_ridge: 0.1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.messages_per_satellite < 2 {
            return bad(format!("messages_per_satellite = {}", self.messages_per_satellite));
        }
        let (lo, hi) = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_db_range ({lo}, {hi})"));
        }
        if !(self.rician_k_db.is_finite() && self.max_cfo.is_finite() && self.max_cfo >= 0.0) {
            return bad(format!("rician_k_db {} / max_cfo {}", self.rician_k_db, self.max_cfo));
        }
        if !(0.0..=1.0).contains(&self.target_fa) || self.fa_targets.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("false-acceptance targets must lie in [0, 1]".into());
        }
        if self.n_acc_grid.is_empty() || self.n_acc_grid.contains(&0) {
            return bad(format!("n_acc_grid {:?}", self.n_acc_grid));
        }
        if !(self.glrt_ridge >= 0.0) {
            return bad(format!("glrt_ridge {}", self.glrt_ridge));
        }
        if let PilotMode::Random { len, .. } = self.pilots {
            if len < self.pipeline.n_known {
                return bad(format!("{len} pilots shorter than n_known {}", self.pipeline.n_known));
            }
        }
        self.pipeline.validate()?;
        self.dr.validate()
    }
}

/// Per-burst SNR estimate from the EVM of the normalized burst, capped at
/// 60 dB so that noise-free bursts keep a finite weight.
pub fn snr_db_from_evm(evm: f64) -> f64 {
    if evm > 0.0 {
        (-20.0 * evm.log10()).min(60.0)
    } else {
        60.0
    }
}

/// Feature records for recorded or simulated bursts, in input order.
pub fn records_from_bursts(bursts: &[Burst], pipeline: &PipelineConfig) -> Result<Vec<FeatureRecord>> {
    bursts
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let (f, _) = extract_features(b, pipeline)?;
            Ok(FeatureRecord {
                satellite_id: b.meta.satellite_id,
                burst_index: i,
                snr_db: snr_db_from_evm(f.evm),
                features: f,
            })
        })
        .collect()
}

/// Identifiability factor `1 - |E[x^2]|^2 / E[|x|^2]^2` of the known
/// symbols pooled over a set of bursts.
pub fn known_symbol_beta(bursts: &[Burst]) -> f64 {
    let (mut m20, mut p) = (num_complex::Complex64::new(0.0, 0.0), 0.0);
    for x in bursts.iter().flat_map(|b| b.known_symbols()) {
        m20 += x * x;
        p += x.norm_sqr();
    }
    if p > 0.0 {
        1.0 - m20.norm_sqr() / (p * p)
    } else {
        0.0
    }
}

/// Burst `m` of satellite `id` in campaign `campaign`: uniform mean SNR,
/// uniform CFO, a Rician channel draw and fresh pilots when they are random.
pub fn simulate_burst(
    id: u32,
    truth: &HwiParams,
    pattern: &PilotPattern,
    protocol: &ProtocolConfig,
    campaign: u64,
    m: usize,
    seed: u64,
) -> Result<Burst> {
    let (lo, hi) = protocol.snr_db_range;
    let mut rng = rng_from(seed, &[campaign, u64::from(id), m as u64]);
    let snr = lo + (hi - lo) * rng.random::<f64>();
    let cfo = protocol.max_cfo * (2.0 * rng.random::<f64>() - 1.0);
    let ch = ChannelConfig::rician(protocol.rician_k_db, snr, cfo, &mut rng);
    let symbols = pattern.symbols(&mut rng);
    synthesize_burst_for(id, &symbols, truth, &ch, rng.random())
}

/// Simulates one campaign of the fleet. Campaign `c` uses seed stream `c`,
/// so two campaigns share the fleet but not noise, channels or CFO.
pub fn simulate_campaign(
    fleet: &[(u32, HwiParams)],
    protocol: &ProtocolConfig,
    campaign: u64,
    seed: u64,
) -> Result<Vec<FeatureRecord>> {
    protocol.validate()?;
    let pattern = protocol.pilots.pattern()?;
    let msgs = protocol.messages_per_satellite;
    (0..fleet.len() * msgs)
        .into_par_iter()
        .map(|i| {
            let (id, truth) = fleet[i / msgs];
            let m = i % msgs;
            let burst = simulate_burst(id, &truth, &pattern, protocol, campaign, m, seed)?;
            let (f, _) = extract_features(&burst, &protocol.pipeline)?;
            Ok(FeatureRecord {
                satellite_id: id,
                burst_index: m,
                snr_db: snr_db_from_evm(f.evm),
                features: f,
            })
        })
        .collect()
}

/// Seeds of the fleet draw and of the campaign noise streams.
pub fn fleet_seed(seed: u64) -> u64 {
    derive_seed(seed, &[0])
}

pub fn campaign_seed(seed: u64) -> u64 {
    derive_seed(seed, &[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetMember {
    pub satellite_id: u32,
    pub truth: HwiParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaigns {
    pub fleet: Vec<FleetMember>,
    pub beta: f64,
    pub enrollment: Vec<FeatureRecord>,
    pub probe: Vec<FeatureRecord>,
}

pub fn simulate_campaigns(fleet_cfg: &FleetConfig, protocol: &ProtocolConfig, seed: u64) -> Result<Campaigns> {
    let fleet = generate_fleet(fleet_cfg.n_satellites, &fleet_cfg.spread, fleet_seed(seed))?;
    let stream = campaign_seed(seed);
    Ok(Campaigns {
        beta: protocol.pilots.beta()?,
        enrollment: simulate_campaign(&fleet, protocol, 0, stream)?,
        probe: simulate_campaign(&fleet, protocol, 1, stream)?,
        fleet: fleet
            .into_iter()
            .map(|(satellite_id, truth)| FleetMember { satellite_id, truth })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    /// Normalized Euclidean distance over a fixed feature subset.
    Subset { features: Vec<String> },
    /// DR-derived weights over the active feature set.
    Iwat { scheme: WeightScheme },
    /// Mahalanobis distance with the regularized enrollment covariance.
    Glrt { features: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    pub kind: StrategyKind,
}

pub const PA_ONLY: [&str; 3] = ["amp_var", "amp_range", "amp_acf1"];
pub const CRB_GUIDED: [&str; 4] = ["amp_var", "amp_range", "amp_acf1", "phase_acf1"];
pub const ALL_SIX: [&str; 6] = ["amp_var", "amp_range", "amp_acf1", "phase_acf1", "amp_kurtosis", "evm"];
pub const IQ_ONLY: [&str; 2] = ["iq_eps_hat", "iq_phi_hat"];
pub const OSCILLATOR_ONLY: [&str; 2] = ["phase_acf1", "phase_var"];

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn default_strategies() -> Vec<Strategy> {
    let subset = |name: &str, f: &[&str]| Strategy {
        name: name.into(),
        kind: StrategyKind::Subset { features: names(f) },
    };
    let iwat = |name: &str, scheme| Strategy {
        name: name.into(),
        kind: StrategyKind::Iwat { scheme },
    };
    vec![
        iwat("iwat_dr2", WeightScheme::DrSquared),
        subset("crb_guided", &CRB_GUIDED),
        subset("pa_only", &PA_ONLY),
        iwat("iwat_dr", WeightScheme::Dr),
        subset("all", &ALL_SIX),
        Strategy {
            name: "glrt_crb4".into(),
            kind: StrategyKind::Glrt {
                features: names(&CRB_GUIDED),
            },
        },
        iwat("iwat_equal", WeightScheme::Equal),
        subset("oscillator_only", &OSCILLATOR_ONLY),
        subset("iq_only", &IQ_ONLY),
    ]
}

fn indices(features: &[String]) -> Result<Vec<usize>> {
    features
        .iter()
        .map(|n| feature_index(n).ok_or_else(|| Error::InvalidParameter(format!("unknown feature {n}"))))
        .collect()
}

/// A strategy bound to its offline quantities.
enum Scorer {
    Weighted(WeightVector),
    Mahalanobis { subset: Vec<usize>, ridge: f64 },
}

impl Scorer {
    fn new(s: &Strategy, dr: &DrTable, active: &[usize], ridge: f64) -> Result<Self> {
        Ok(match &s.kind {
            StrategyKind::Subset { features } => Scorer::Weighted(WeightVector::uniform(&indices(features)?)?),
            StrategyKind::Iwat { scheme } => Scorer::Weighted(iwat_weights(dr, active, *scheme)?),
            StrategyKind::Glrt { features } => Scorer::Mahalanobis {
                subset: indices(features)?,
                ridge,
            },
        })
    }

    fn dimension(&self) -> usize {
        match self {
            Scorer::Weighted(w) => w.weights.iter().filter(|&&x| x > 0.0).count(),
            Scorer::Mahalanobis { subset, .. } => subset.len(),
        }
    }

    /// `scores[p][e]` for normalized probes and enrollment.
    fn matrix(&self, enrollment: &[Fingerprint], probes: &[Fingerprint]) -> Result<Vec<Vec<f64>>> {
        match self {
            Scorer::Weighted(w) => Ok(probes
                .iter()
                .map(|p| {
                    enrollment
                        .iter()
                        .map(|e| weighted_distance(&p.mean, &e.mean, w))
                        .collect()
                })
                .collect()),
            Scorer::Mahalanobis { subset, ridge } => {
                let cov = enrollment_covariance(enrollment, subset, *ridge)?;
                probes
                    .iter()
                    .map(|p| mahalanobis_scores(p, enrollment, subset, &cov))
                    .collect()
            }
        }
    }
}

/// Scores split by pairing: a probe against its own satellite is genuine,
/// against every other enrolled satellite an impostor.
struct Scored {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
    /// Probes whose argmin claim is their own satellite.
    correct_claims: usize,
    probes_with_reference: usize,
}

fn score(scorer: &Scorer, enrollment: &[Fingerprint], probes: &[Fingerprint]) -> Result<Scored> {
    let norm = Normalizer::fit(enrollment)?;
    let enr: Vec<Fingerprint> = enrollment.iter().map(|f| norm.apply(f)).collect();
    let prb: Vec<Fingerprint> = probes.iter().map(|f| norm.apply(f)).collect();
    let m = scorer.matrix(&enr, &prb)?;
    let mut out = Scored {
        genuine: Vec::new(),
        impostor: Vec::new(),
        correct_claims: 0,
        probes_with_reference: 0,
    };
    for (p, row) in prb.iter().zip(&m) {
        let own = enr.iter().position(|e| e.satellite_id == p.satellite_id);
        if let Some(i) = own {
            out.probes_with_reference += 1;
            let best = row.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k);
            if best == Some(i) {
                out.correct_claims += 1;
            }
        }
        for (e, &s) in enr.iter().zip(row) {
            if e.satellite_id == p.satellite_id {
                out.genuine.push(s);
            } else {
                out.impostor.push(s);
            }
        }
    }
    if out.genuine.is_empty() || out.impostor.is_empty() {
        return Err(Error::InsufficientData(
            "no genuine/impostor pairs between enrollment and probes".into(),
        ));
    }
    Ok(out)
}

/// Splits each satellite's enrollment messages into a reference half and a
/// pseudo-probe half.
fn split_halves(table: &SatelliteTable) -> (SatelliteTable, SatelliteTable) {
    let mut a = SatelliteTable::new();
    let mut b = SatelliteTable::new();
    for (&id, r) in table {
        if r.len() < 2 {
            continue;
        }
        let h = r.len() / 2;
        a.insert(id, r[..h].to_vec());
        b.insert(id, r[h..].to_vec());
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub name: String,
    pub n_features: usize,
    pub auc: f64,
    pub pd_at_fa: Vec<PdAtFa>,
    /// Threshold from the enrollment-only pseudo-probe ROC at the target FA.
    pub tau: f64,
    pub pd_at_tau: f64,
    pub fa_at_tau: f64,
    /// Fraction of probes whose closest enrolled satellite is their own.
    pub rank1_accuracy: f64,
    pub roc: RocCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaccPoint {
    pub n_acc: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationCurve {
    pub strategy: String,
    pub points: Vec<NaccPoint>,
    /// Spearman correlation between `n_acc` and AUC.
    pub spearman_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthReport {
    pub seed: u64,
    pub beta: f64,
    pub active_features: Vec<String>,
    pub fleet: Vec<FleetMember>,
    pub n_enrolled: usize,
    pub n_probes: usize,
    pub dr_table: DrTable,
    pub cross_stability: Vec<StabilityRow>,
    pub weights: Vec<WeightVector>,
    pub strategies: Vec<StrategyResult>,
    pub accumulation: Vec<AccumulationCurve>,
}

impl AuthReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn accumulation_curve(&self, name: &str) -> Option<&AccumulationCurve> {
        self.accumulation.iter().find(|s| s.strategy == name)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Long-format ROC points: `strategy,fa,pd`.
    pub fn write_roc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strategy", "fa", "pd"])?;
        for s in &self.strategies {
            for p in &s.roc.points {
                wr.write_record([s.name.clone(), p.fa.to_string(), p.pd.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// `strategy,n_acc,auc`.
    pub fn write_accumulation_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["strategy", "n_acc", "auc"])?;
        for c in &self.accumulation {
            for p in &c.points {
                wr.write_record([c.strategy.clone(), p.n_acc.to_string(), p.auc.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// `feature,dr_mean,dr_std,n_trials,verdict,weight_dr2`.
    pub fn write_dr_csv<W: Write>(&self, w: W) -> Result<()> {
        let dr2 = self.weights.iter().find(|w| w.scheme == WeightScheme::DrSquared);
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["feature", "dr_mean", "dr_std", "n_trials", "verdict", "weight_dr2"])?;
        for r in &self.dr_table.rows {
            let weight = dr2.and_then(|w| w.get(&r.feature)).unwrap_or(0.0);
            let verdict = serde_json::to_value(r.verdict)?;
            wr.write_record([
                r.feature.clone(),
                r.mean.to_string(),
                r.std.to_string(),
                r.n_trials.to_string(),
                verdict.as_str().unwrap_or_default().to_string(),
                weight.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Offline inputs that may replace the simulated ones.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Use these DRs for the IWAT weights instead of the enrollment bootstrap.
    pub dr_table: Option<DrTable>,
    pub strategies: Option<Vec<Strategy>>,
    /// Features weighted by the IWAT strategies instead of the beta rule.
    pub iwat_pool: Option<Vec<String>>,
}

/// Scores every strategy on enrollment (campaign A) and probe (campaign B)
/// feature tables.
pub fn evaluate_auth(
    enrollment: &SatelliteTable,
    probe: &SatelliteTable,
    beta: f64,
    protocol: &ProtocolConfig,
    overrides: &Overrides,
    seed: u64,
) -> Result<AuthReport> {
    protocol.validate()?;
    let active = match &overrides.iwat_pool {
        Some(pool) => indices(pool)?,
        None => active_feature_set(beta),
    };
    let bootstrap = balanced_dr(enrollment, &protocol.dr, derive_seed(seed, &[2]))?;
    let dr = overrides.dr_table.clone().unwrap_or_else(|| bootstrap.clone());
    let strategies = overrides.strategies.clone().unwrap_or_else(default_strategies);

    let enr_fp = fingerprints(enrollment, None)?;
    let probe_fp = fingerprints(probe, None)?;
    let (ref_half, pseudo_half) = split_halves(enrollment);
    let ref_fp = fingerprints(&ref_half, None)?;
    let pseudo_fp = fingerprints(&pseudo_half, None)?;

    let mut results = Vec::with_capacity(strategies.len());
    let mut accumulation = Vec::with_capacity(strategies.len());
    for s in &strategies {
        let scorer = Scorer::new(s, &dr, &active, protocol.glrt_ridge)?;
        let main = score(&scorer, &enr_fp, &probe_fp)?;
        let roc = roc_curve(&main.genuine, &main.impostor, &protocol.fa_targets)?;
        let offline = score(&scorer, &ref_fp, &pseudo_fp)?;
        let tau = threshold_at_fa(&offline.impostor, protocol.target_fa)?;
        let below = |v: &[f64]| v.iter().filter(|&&x| x < tau).count() as f64 / v.len() as f64;
        results.push(StrategyResult {
            name: s.name.clone(),
            n_features: scorer.dimension(),
            auc: roc.auc,
            pd_at_fa: roc.pd_at_fa.clone(),
            tau,
            pd_at_tau: below(&main.genuine),
            fa_at_tau: below(&main.impostor),
            rank1_accuracy: main.correct_claims as f64 / main.probes_with_reference.max(1) as f64,
            roc,
        });

        let points = protocol
            .n_acc_grid
            .iter()
            .map(|&n| {
                let p = fingerprints(probe, Some(n))?;
                let sc = score(&scorer, &enr_fp, &p)?;
                Ok(NaccPoint {
                    n_acc: n,
                    auc: super::mann_whitney_auc(&sc.genuine, &sc.impostor)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let x: Vec<f64> = points.iter().map(|p| p.n_acc as f64).collect();
        let y: Vec<f64> = points.iter().map(|p| p.auc).collect();
        accumulation.push(AccumulationCurve {
            strategy: s.name.clone(),
            spearman_rho: spearman(&x, &y),
            points,
        });
    }

    let weights = [WeightScheme::DrSquared, WeightScheme::Dr, WeightScheme::Equal]
        .into_iter()
        .map(|sc| iwat_weights(&dr, &active, sc))
        .collect::<Result<Vec<_>>>()?;

    Ok(AuthReport {
        seed,
        beta,
        active_features: active.iter().map(|&k| FEATURE_NAMES[k].to_string()).collect(),
        fleet: Vec::new(),
        n_enrolled: enr_fp.len(),
        n_probes: probe_fp.len(),
        dr_table: dr,
        cross_stability: cross_stability(&enr_fp, &probe_fp)?,
        weights,
        strategies: results,
        accumulation,
    })
}

/// Simulates both campaigns of a fleet and evaluates every strategy.
pub fn run_auth_experiment(fleet_cfg: &FleetConfig, protocol: &ProtocolConfig, seed: u64) -> Result<AuthReport> {
    run_auth_experiment_with(fleet_cfg, protocol, &Overrides::default(), seed)
}

pub fn run_auth_experiment_with(
    fleet_cfg: &FleetConfig,
    protocol: &ProtocolConfig,
    overrides: &Overrides,
    seed: u64,
) -> Result<AuthReport> {
    let c = simulate_campaigns(fleet_cfg, protocol, seed)?;
    let enr = group_by_satellite(c.enrollment);
    let prb = group_by_satellite(c.probe);
    let mut report = evaluate_auth(&enr, &prb, c.beta, protocol, overrides, seed)?;
    report.fleet = c.fleet;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (FleetConfig, ProtocolConfig) {
        (
            FleetConfig {
                n_satellites: 6,
                ..FleetConfig::default()
            },
            ProtocolConfig {
                messages_per_satellite: 40,
                n_acc_grid: vec![1, 5, 40],
                dr: DrConfig {
                    n_bal: 20,
                    n_trials: 5,
                    ..DrConfig::default()
                },
                ..ProtocolConfig::default()
            },
        )
    }

    #[test]
    fn campaigns_share_fleet_not_noise() {
        let (f, p) = small();
        let c = simulate_campaigns(&f, &p, 3).unwrap();
        assert_eq!(c.enrollment.len(), 6 * 40);
        assert_eq!(c.beta, 0.0);
        assert_ne!(c.enrollment[0].features, c.probe[0].features);
        let again = simulate_campaigns(&f, &p, 3).unwrap();
        assert_eq!(c, again);
        // Real pilots: the IQ estimates are pinned at 0.
        assert!(c.enrollment.iter().all(|r| r.features.iq_eps_hat == 0.0));
    }

    #[test]
    fn report_shape() {
        let (f, p) = small();
        let r = run_auth_experiment(&f, &p, 5).unwrap();
        assert_eq!(r.strategies.len(), default_strategies().len());
        assert_eq!(r.n_enrolled, 6);
        assert_eq!(r.fleet.len(), 6);
        assert_eq!(r.active_features.len(), 7);
        for s in &r.strategies {
            assert!((0.0..=1.0).contains(&s.auc));
            assert!(s.roc.points.len() <= 6 * 6 + 1);
        }
        assert_eq!(r.strategy("pa_only").unwrap().n_features, 3);
        assert_eq!(r.strategy("glrt_crb4").unwrap().n_features, 4);
        assert_eq!(r.accumulation_curve("pa_only").unwrap().points.len(), 3);
        // Every IQ score is 0, so the IQ-only ROC is a coin flip.
        assert_eq!(r.strategy("iq_only").unwrap().auc, 0.5);
        for w in &r.weights {
            assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        r.write_roc_csv(&mut buf).unwrap();
        r.write_accumulation_csv(&mut buf).unwrap();
        r.write_dr_csv(&mut buf).unwrap();
        r.write_json(&mut buf).unwrap();
    }

    #[test]
    fn published_dr_override_sets_weights() {
        let (f, p) = small();
        let dr = DrTable::from_values(&[("amp_var", 4.0), ("phase_acf1", 2.0)], &Default::default()).unwrap();
        let o = Overrides {
            dr_table: Some(dr),
            ..Overrides::default()
        };
        let r = run_auth_experiment_with(&f, &p, &o, 5).unwrap();
        let w = &r.weights[0];
        assert!((w.get("amp_var").unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn records_from_bursts_use_evm_snr() {
        let symbols = iridium_known_symbols();
        let p = HwiParams::from_degrees(0.02, 1.0, 0.03, 0.0);
        let b = synthesize_burst_for(
            4,
            &symbols,
            &p,
            &ChannelConfig::awgn(num_complex::Complex64::new(1.0, 0.0), 20.0),
            1,
        )
        .unwrap();
        let r = records_from_bursts(&[b.clone(), b], &PipelineConfig::default()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].burst_index, 1);
        assert!((r[0].snr_db - 20.0).abs() < 3.0, "{}", r[0].snr_db);
        assert_eq!(known_symbol_beta(&[]), 0.0);
        let q = PilotMode::Random {
            modulation: ConstellationKind::Qpsk,
            len: 4000,
        };
        let pat = q.pattern().unwrap();
        let qb = simulate_burst(1, &p, &pat, &ProtocolConfig::default(), 0, 0, 1).unwrap();
        assert!(known_symbol_beta(&[qb]) > 0.95);
    }

    #[test]
    fn invalid_protocol_rejected() {
        let p = ProtocolConfig {
            target_fa: 1.5,
            ..ProtocolConfig::default()
        };
        assert!(p.validate().is_err());
        let q = ProtocolConfig {
            pilots: PilotMode::Random {
                modulation: ConstellationKind::Qpsk,
                len: 10,
            },
            ..ProtocolConfig::default()
        };
        assert!(q.validate().is_err());
    }

    #[test]
    fn protocol_config_round_trip() {
        let p = ProtocolConfig::default();
        let s = serde_json::to_string(&p).unwrap();
        let back: ProtocolConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<ProtocolConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: ProtocolConfig = serde_json::from_str(r#"{"messages_per_satellite": 50}"#).unwrap();
        assert_eq!(partial.messages_per_satellite, 50);
    }
}
