use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hwifp::auth::experiment::{
    campaign_seed, evaluate_auth, fleet_seed, known_symbol_beta, records_from_bursts, run_auth_experiment_with,
    simulate_burst, simulate_campaign, simulate_campaigns, AuthReport, Overrides, PilotMode, ALL_SIX,
};
use hwifp::auth::{balanced_dr, cross_stability, fingerprints, group_by_satellite, DrTable, SatelliteTable};
use hwifp::burst_io::{read_burst_file, write_burst_json, IRIDIUM_MODULATION};
use hwifp::constellation::{Constellation, ConstellationKind};
use hwifp::estimator::{mc_crb_validation, McConfig};
use hwifp::features::{read_feature_csv, write_feature_csv, FeatureRecord};
use hwifp::fim::{
    channel_inflation, coupling_rho, crb_report, crb_sweep, fim_numerical, sub_block_eigen_ratio, subspace_angle_deg,
    write_crb_csv, ChannelInflation, NumericalMode,
};
use hwifp::rng::derive_seed;
use hwifp::signal_model::{bpsk_collapse, generate_fleet, PARAM_NAMES};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{write_atomic, OutDir};

/// Published discrimination ratios used by `--published-dr`.
pub const PUBLISHED_DR: [(&str, f64); 10] = [
    ("amp_var", 4.48),
    ("amp_range", 4.29),
    ("phase_acf1", 2.40),
    ("amp_acf1", 1.45),
    ("amp_kurtosis", 0.92),
    ("evm", 0.86),
    ("cfo_hat", 0.79),
    ("dc_i", 0.74),
    ("iq_eps_hat", 0.70),
    ("iq_phi_hat", 0.69),
];

fn constellation(name: &str) -> Result<Constellation> {
    Ok(Constellation::new(name.parse::<ConstellationKind>()?)?)
}

fn constellations(names: &[String]) -> Result<Vec<Constellation>> {
    names.iter().map(|n| constellation(n)).collect()
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Serialize)]
pub struct MomentRow {
    pub modulation: String,
    pub mu20_re: f64,
    pub mu20_im: f64,
    pub beta: f64,
    pub mu4: f64,
    pub mu6: f64,
    pub mu42_re: f64,
    pub mu42_im: f64,
    pub predicted_rank: usize,
}

pub fn moments(cfg: &ExperimentConfig, names: &[String], alphabets: &[PathBuf], out: &OutDir) -> Result<()> {
    let mut set = if names.is_empty() && alphabets.is_empty() {
        let mut v = constellations(&cfg.moments.modulations)?;
        for c in &cfg.moments.custom {
            v.push(c.build()?);
        }
        v
    } else {
        constellations(names)?
    };
    for p in alphabets {
        set.push(Constellation::from_json_file(p).with_context(|| format!("alphabet {}", p.display()))?);
    }
    let rows: Vec<MomentRow> = set
        .iter()
        .map(|c| {
            let m = c.moments();
            MomentRow {
                modulation: c.name().to_string(),
                mu20_re: m.mu20.re,
                mu20_im: m.mu20.im,
                beta: m.beta,
                mu4: m.mu4,
                mu6: m.mu6,
                mu42_re: m.mu42.re,
                mu42_im: m.mu42.im,
                predicted_rank: m.predicted_rank(),
            }
        })
        .collect();
    println!(
        "{:<12} {:>16} {:>8} {:>8} {:>8} {:>5}",
        "modulation", "mu20", "beta", "mu4", "mu6", "rank"
    );
    for r in &rows {
        println!(
            "{:<12} {:>16} {:>8.4} {:>8.4} {:>8.4} {:>5}",
            r.modulation,
            format!("{:.4}{:+.4}j", r.mu20_re, r.mu20_im),
            r.beta,
            r.mu4,
            r.mu6,
            r.predicted_rank
        );
    }
    out.write_csv("moments.csv", &rows)?;
    Ok(())
}

// ------------------------------------------------------------- crb-curves

pub fn crb_curves(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let c = &cfg.crb_curves;
    let rows = crb_sweep(
        &constellations(&c.modulations)?,
        &c.operating_point.params(),
        &c.snr_db,
        &c.n,
        cfg.rank_tol,
    )?;
    let path = out.write_with("crb_curves.csv", |buf| write_crb_csv(&rows, buf))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

// ------------------------------------------------------------ mc-validate

pub fn mc_validate(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let m = &cfg.mc_validate;
    let c = constellation(&m.modulation)?;
    let mc = McConfig {
        truth: m.truth.params(),
        snr_grid_db: m.snr_db.clone(),
        n: m.n,
        n_trials: m.n_trials,
        pairing: m.pairing,
        options: None,
    };
    let report = mc_crb_validation(&c, &mc, derive_seed(cfg.seed, &[3]))?;
    println!(
        "{:>7} {:<10} {:>12} {:>12} {:>8}",
        "snr_db", "param", "mse", "crb", "ratio"
    );
    for r in &report.rows {
        let ratio = r.ratio.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:>7} {:<10} {:>12.4e} {:>12} {:>8}",
            r.snr_db,
            r.param,
            r.mse,
            r.crb.0.to_string(),
            ratio
        );
    }
    out.write_with("mc_validation.csv", |buf| report.write_csv(buf))?;
    Ok(())
}

// -------------------------------------------------------- identifiability

#[derive(Debug, Serialize)]
pub struct IdentifiabilityRow {
    pub modulation: String,
    pub beta: f64,
    pub predicted_rank: usize,
    pub rank: usize,
    pub eigenvalues: [f64; 4],
    pub null_basis: Vec<[f64; 4]>,
    /// Angle between the numerical kernel and the real-alphabet collapse
    /// directions; present when the kernel is two-dimensional.
    pub collapse_angle_deg: Option<f64>,
    pub eigen_ratio_phi_im_alpha3: f64,
    pub rho_phi_im_alpha3: Option<f64>,
    pub rho_eps_re_alpha3: Option<f64>,
    pub channel_inflation: Option<ChannelInflation>,
}

#[derive(Debug, Serialize)]
pub struct IdentifiabilityReport {
    pub params: [&'static str; 4],
    pub n: usize,
    pub snr_db: f64,
    pub rank_tol: f64,
    pub rows: Vec<IdentifiabilityRow>,
}

fn numerical_none<T>(r: hwifp::Result<T>) -> hwifp::Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_numerical() => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn identifiability(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let s = &cfg.identifiability;
    let p = s.operating_point.params();
    let gamma = 10f64.powf(s.snr_db / 10.0);
    let mut rows = Vec::new();
    for c in constellations(&s.modulations)? {
        let m = c.moments();
        let f = fim_numerical(&c, &p, s.n, gamma, NumericalMode::Moment)?;
        let rep = crb_report(&f, cfg.rank_tol)?;
        let collapse_angle_deg = if rep.null_basis.len() == 2 {
            Some(subspace_angle_deg(&rep.null_basis, &bpsk_collapse(&p).null_basis)?)
        } else {
            None
        };
        rows.push(IdentifiabilityRow {
            modulation: c.name().to_string(),
            beta: m.beta,
            predicted_rank: m.predicted_rank(),
            rank: rep.rank,
            eigenvalues: f.eigenvalues(),
            null_basis: rep.null_basis.clone(),
            collapse_angle_deg,
            eigen_ratio_phi_im_alpha3: sub_block_eigen_ratio(&f, &[1, 3]),
            rho_phi_im_alpha3: numerical_none(coupling_rho(&f, 1, 3))?,
            rho_eps_re_alpha3: numerical_none(coupling_rho(&f, 0, 2))?,
            channel_inflation: numerical_none(channel_inflation(&c, &p, s.n, gamma))?,
        });
    }
    println!(
        "{:<10} {:>6} {:>5} {:>10} {:>12} {:>12}",
        "modulation", "beta", "rank", "angle_deg", "eig_ratio", "rho_phi_a3"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    for r in &rows {
        println!(
            "{:<10} {:>6.3} {:>5} {:>10} {:>12.4e} {:>12}",
            r.modulation,
            r.beta,
            r.rank,
            opt(r.collapse_angle_deg, 3),
            r.eigen_ratio_phi_im_alpha3,
            opt(r.rho_phi_im_alpha3, 4)
        );
    }
    out.write_json(
        "identifiability.json",
        &IdentifiabilityReport {
            params: PARAM_NAMES,
            n: s.n,
            snr_db: s.snr_db,
            rank_tol: cfg.rank_tol,
            rows,
        },
    )?;
    Ok(())
}

// -------------------------------------------------------------- fleet-sim

fn burst_modulation(p: &PilotMode) -> String {
    match p {
        PilotMode::Iridium => IRIDIUM_MODULATION.to_string(),
        PilotMode::Random { modulation, .. } => modulation.name().to_string(),
    }
}

pub fn fleet_sim(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let camp = simulate_campaigns(&cfg.fleet, &cfg.protocol, cfg.seed)?;
    out.write_with("enrollment_features.csv", |b| write_feature_csv(&camp.enrollment, b))?;
    out.write_with("probe_features.csv", |b| write_feature_csv(&camp.probe, b))?;
    out.write_json("fleet.json", &camp.fleet)?;

    let n_bursts = cfg.fleet_sim.emit_bursts.min(cfg.protocol.messages_per_satellite);
    if n_bursts > 0 {
        let pattern = cfg.protocol.pilots.pattern()?;
        let modulation = burst_modulation(&cfg.protocol.pilots);
        let stream = campaign_seed(cfg.seed);
        for (campaign, dir) in [(0u64, "enrollment"), (1, "probe")] {
            for member in &camp.fleet {
                for m in 0..n_bursts {
                    let b = simulate_burst(
                        member.satellite_id,
                        &member.truth,
                        &pattern,
                        &cfg.protocol,
                        campaign,
                        m,
                        stream,
                    )?;
                    let mut buf = Vec::new();
                    write_burst_json(&b, &modulation, &mut buf)?;
                    let name = format!("sat{:03}_{:04}.json", member.satellite_id, m);
                    write_atomic(&out.path("bursts").join(dir).join(name), &buf)?;
                }
            }
        }
    }
    println!(
        "{} satellites, beta = {:.3}: {} enrollment and {} probe feature rows",
        camp.fleet.len(),
        camp.beta,
        camp.enrollment.len(),
        camp.probe.len()
    );
    Ok(())
}

// ------------------------------------------------------------ dr-analysis

fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_feature_csv(f).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct DrCsvRow<'a> {
    feature: &'a str,
    dr_mean: f64,
    dr_std: f64,
    n_trials: usize,
    verdict: hwifp::auth::Verdict,
}

fn print_dr(dr: &DrTable) {
    println!("{:<14} {:>8} {:>8}  verdict", "feature", "dr", "std");
    for r in dr.sorted() {
        println!("{:<14} {:>8.3} {:>8.3}  {:?}", r.feature, r.mean, r.std, r.verdict);
    }
    if !dr.excluded.is_empty() {
        println!("excluded (fewer than {} messages): {:?}", dr.n_bal, dr.excluded);
    }
}

pub fn dr_analysis(cfg: &ExperimentConfig, features: Option<&Path>, probe: Option<&Path>, out: &OutDir) -> Result<()> {
    let enrollment: SatelliteTable = match features {
        Some(p) => group_by_satellite(read_features(p)?),
        None => {
            let fleet = generate_fleet(cfg.fleet.n_satellites, &cfg.fleet.spread, fleet_seed(cfg.seed))?;
            group_by_satellite(simulate_campaign(&fleet, &cfg.protocol, 0, campaign_seed(cfg.seed))?)
        }
    };
    let dr = balanced_dr(&enrollment, &cfg.protocol.dr, derive_seed(cfg.seed, &[2]))?;
    print_dr(&dr);
    let rows: Vec<DrCsvRow> = dr
        .sorted()
        .into_iter()
        .map(|r| DrCsvRow {
            feature: &r.feature,
            dr_mean: r.mean,
            dr_std: r.std,
            n_trials: r.n_trials,
            verdict: r.verdict,
        })
        .collect();
    out.write_csv("dr_table.csv", &rows)?;
    out.write_json("dr_table.json", &dr)?;
    if let Some(p) = probe {
        let probe = group_by_satellite(read_features(p)?);
        let stab = cross_stability(&fingerprints(&enrollment, None)?, &fingerprints(&probe, None)?)?;
        out.write_csv("cross_stability.csv", &stab)?;
    }
    Ok(())
}

// ----------------------------------------------------------- authenticate

pub enum AuthInput<'a> {
    Simulate,
    Features {
        enroll: &'a Path,
        probe: &'a Path,
        beta: Option<f64>,
    },
    Bursts {
        enroll: &'a Path,
        probe: &'a Path,
    },
}

fn read_burst_dir(dir: &Path) -> Result<Vec<hwifp::Burst>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json" || e == "bin"));
    paths.sort();
    paths
        .iter()
        .map(|p| read_burst_file(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

pub fn published_dr_table(cfg: &ExperimentConfig) -> hwifp::Result<DrTable> {
    DrTable::from_values(&PUBLISHED_DR, &cfg.protocol.dr.bands)
}

pub fn authenticate(cfg: &ExperimentConfig, input: AuthInput, published_dr: bool, out: &OutDir) -> Result<AuthReport> {
    let overrides = if published_dr {
        Overrides {
            dr_table: Some(published_dr_table(cfg)?),
            strategies: None,
            iwat_pool: Some(ALL_SIX.iter().map(|s| s.to_string()).collect()),
        }
    } else {
        Overrides::default()
    };
    let report = match input {
        AuthInput::Simulate => run_auth_experiment_with(&cfg.fleet, &cfg.protocol, &overrides, cfg.seed)?,
        AuthInput::Features { enroll, probe, beta } => {
            let beta = match beta {
                Some(b) => b,
                None => cfg.protocol.pilots.beta()?,
            };
            let e = group_by_satellite(read_features(enroll)?);
            let p = group_by_satellite(read_features(probe)?);
            evaluate_auth(&e, &p, beta, &cfg.protocol, &overrides, cfg.seed)?
        }
        AuthInput::Bursts { enroll, probe } => {
            let eb = read_burst_dir(enroll)?;
            let pb = read_burst_dir(probe)?;
            let beta = known_symbol_beta(&eb);
            let e = group_by_satellite(records_from_bursts(&eb, &cfg.protocol.pipeline)?);
            let p = group_by_satellite(records_from_bursts(&pb, &cfg.protocol.pipeline)?);
            evaluate_auth(&e, &p, beta, &cfg.protocol, &overrides, cfg.seed)?
        }
    };

    println!(
        "beta = {:.3}, {} enrolled, {} probes, active features: {}",
        report.beta,
        report.n_enrolled,
        report.n_probes,
        report.active_features.join(",")
    );
    print_dr(&report.dr_table);
    if let Some(w) = report.weights.first() {
        println!("weights ({:?}):", w.scheme);
        for name in &report.active_features {
            println!("  w({name}) = {:.3}", w.get(name).unwrap_or(0.0));
        }
    }
    println!(
        "{:<16} {:>3} {:>7} {:>9} {:>9} {:>7}",
        "strategy", "dim", "auc", "pd@tau", "fa@tau", "rank1"
    );
    for s in &report.strategies {
        println!(
            "{:<16} {:>3} {:>7.3} {:>9.3} {:>9.3} {:>7.3}",
            s.name, s.n_features, s.auc, s.pd_at_tau, s.fa_at_tau, s.rank1_accuracy
        );
    }

    out.write_with("auth_report.json", |b| report.write_json(b))?;
    out.write_with("roc.csv", |b| report.write_roc_csv(b))?;
    out.write_with("accumulation.csv", |b| report.write_accumulation_csv(b))?;
    out.write_with("dr_weights.csv", |b| report.write_dr_csv(b))?;
    Ok(report)
}
