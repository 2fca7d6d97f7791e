//! ROC curves and rank statistics. Scores follow the "lower is more genuine"
//! convention throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FA_TARGETS: [f64; 2] = [0.01, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fa: f64,
    pub pd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdAtFa {
    pub fa: f64,
    pub pd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) to (1, 1), one point per distinct observed score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub pd_at_fa: Vec<PdAtFa>,
}

impl RocCurve {
    /// Largest detection rate reachable without exceeding `fa`.
    pub fn pd_at(&self, fa: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.fa <= fa + 1e-12)
            .map(|p| p.pd)
            .fold(0.0, f64::max)
    }
}

fn check(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InsufficientData(format!("no {what} scores")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateInput(format!("NaN among {what} scores")));
    }
    Ok(())
}

/// Mann-Whitney estimate of P(genuine < impostor) + P(tie) / 2.
pub fn mann_whitney_auc(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    check(genuine, "genuine")?;
    check(impostor, "impostor")?;
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    // For each genuine score count impostors strictly above and tied.
    let (mut below, mut upto) = (0usize, 0usize);
    let mut wins = 0.0;
    for s in &g {
        while below < i.len() && i[below] < *s {
            below += 1;
        }
        while upto < i.len() && i[upto] <= *s {
            upto += 1;
        }
        wins += (i.len() - upto) as f64 + 0.5 * (upto - below) as f64;
    }
    Ok(wins / (g.len() as f64 * i.len() as f64))
}

/// ROC with P_D read at the default false-acceptance targets.
pub fn roc_auc(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    roc_curve(genuine, impostor, &DEFAULT_FA_TARGETS)
}

/// Threshold sweep accepting scores `<= t` for every observed `t`.
pub fn roc_curve(genuine: &[f64], impostor: &[f64], fa_targets: &[f64]) -> Result<RocCurve> {
    let auc = mann_whitney_auc(genuine, impostor)?;
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points = vec![RocPoint { fa: 0.0, pd: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        while k < all.len() && all[k].0 == t {
            if all[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fa: fp as f64 / ni,
            pd: tp as f64 / ng,
        });
    }
    let mut curve = RocCurve {
        points,
        auc,
        pd_at_fa: Vec::new(),
    };
    curve.pd_at_fa = fa_targets
        .iter()
        .map(|&fa| PdAtFa {
            fa,
            pd: curve.pd_at(fa),
        })
        .collect();
    Ok(curve)
}

/// Acceptance threshold for the rule `score < tau` that admits at most a
/// `target_fa` fraction of the impostor scores.
pub fn threshold_at_fa(impostor: &[f64], target_fa: f64) -> Result<f64> {
    check(impostor, "impostor")?;
    if !(0.0..=1.0).contains(&target_fa) {
        return Err(Error::InvalidParameter(format!("target FA {target_fa} outside [0, 1]")));
    }
    let mut s = impostor.to_vec();
    s.sort_by(f64::total_cmp);
    let k = (target_fa * s.len() as f64).floor() as usize;
    Ok(if k >= s.len() { f64::MAX } else { s[k] })
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    crate::features::pearson(&ranks(a), &ranks(b))
}
