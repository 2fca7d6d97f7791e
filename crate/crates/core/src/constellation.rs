//! Modulation alphabets and the constellation moments that drive every
//! identifiability result.
//!
//! All alphabets are normalized to unit average power. The moments
//! `mu20 = E[x^2]`, `mu4 = E[|x|^4]`, `mu6 = E[|x|^6]` are exact uniform
//! averages over the alphabet.

use std::collections::HashSet;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-power invariant.
pub const POWER_TOL: f64 = 1e-12;

/// Supported alphabet families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Bpsk,
    /// Orbcomm-style differential BPSK; shares the BPSK symbol set.
    Sdpsk,
    Qpsk,
    /// Differential QPSK; shares the QPSK symbol set.
    Dqpsk,
    Psk8,
    Qam16,
    Qam64,
    Custom,
}

impl ConstellationKind {
    /// The kinds listed in the standard moment table, in table order.
    pub const STANDARD: [ConstellationKind; 7] = [
        ConstellationKind::Bpsk,
        ConstellationKind::Sdpsk,
        ConstellationKind::Qpsk,
        ConstellationKind::Dqpsk,
        ConstellationKind::Psk8,
        ConstellationKind::Qam16,
        ConstellationKind::Qam64,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstellationKind::Bpsk => "bpsk",
            ConstellationKind::Sdpsk => "sdpsk",
            ConstellationKind::Qpsk => "qpsk",
            ConstellationKind::Dqpsk => "dqpsk",
            ConstellationKind::Psk8 => "8psk",
            ConstellationKind::Qam16 => "16qam",
            ConstellationKind::Qam64 => "64qam",
            ConstellationKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstellationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "bpsk" | "2psk" => ConstellationKind::Bpsk,
            "sdpsk" => ConstellationKind::Sdpsk,
            "qpsk" | "4psk" => ConstellationKind::Qpsk,
            "dqpsk" => ConstellationKind::Dqpsk,
            "8psk" | "psk8" => ConstellationKind::Psk8,
            "16qam" | "qam16" => ConstellationKind::Qam16,
            "64qam" | "qam64" => ConstellationKind::Qam64,
            "custom" => ConstellationKind::Custom,
            _ => return Err(Error::UnknownConstellation(s.to_string())),
        })
    }
}

/// A unit-power symbol alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    name: String,
    /// Factor applied to the raw points to reach unit power (1 for built-ins).
    scale: f64,
}

impl Constellation {
    /// Builds one of the standard alphabets.
    pub fn new(kind: ConstellationKind) -> Result<Self> {
        let points = match kind {
            ConstellationKind::Bpsk | ConstellationKind::Sdpsk => {
                vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]
            }
            ConstellationKind::Qpsk | ConstellationKind::Dqpsk => [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .iter()
                .map(|&(re, im)| Complex64::new(re, im) * FRAC_1_SQRT_2)
                .collect(),
            ConstellationKind::Psk8 => (0..8)
                .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 8.0))
                .collect(),
            ConstellationKind::Qam16 => square_qam(4),
            ConstellationKind::Qam64 => square_qam(8),
            ConstellationKind::Custom => {
                return Err(Error::InvalidConstellation(
                    "custom alphabets need an explicit point list".into(),
                ))
            }
        };
        let (points, scale) = normalize(points)?;
        Ok(Constellation {
            kind,
            points,
            name: kind.name().to_string(),
            scale,
        })
    }

    /// Accepts an arbitrary (possibly un-normalized) point list and rescales
    /// it to unit average power. The applied scale is kept in [`Self::scale`].
    pub fn custom(name: impl Into<String>, points: Vec<Complex64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConstellation("empty point list".into()));
        }
        if points.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(Error::InvalidConstellation("non-finite point".into()));
        }
        let mut seen = HashSet::new();
        for p in &points {
            if !seen.insert((p.re.to_bits(), p.im.to_bits())) {
                return Err(Error::InvalidConstellation(format!("duplicate point {p}")));
            }
        }
        let (points, scale) = normalize(points)?;
        Ok(Constellation {
            kind: ConstellationKind::Custom,
            points,
            name: name.into(),
            scale,
        })
    }

    /// Parses a JSON array of `[re, im]` pairs.
    pub fn from_json_str(name: impl Into<String>, json: &str) -> Result<Self> {
        let pairs: Vec<[f64; 2]> = serde_json::from_str(json)?;
        Self::custom(name, pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        Self::from_json_str(name, &text)
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point lies on the real axis (beta = 0 family).
    pub fn is_real(&self) -> bool {
        self.points.iter().all(|p| p.im == 0.0)
    }

    pub fn moments(&self) -> Moments {
        moments_of(&self.points)
    }
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let levels: Vec<f64> = (0..side).map(|i| 2.0 * i as f64 - (side as f64 - 1.0)).collect();
    levels
        .iter()
        .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im)))
        .collect()
}

fn normalize(points: Vec<Complex64>) -> Result<(Vec<Complex64>, f64)> {
    let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidConstellation("zero average power".into()));
    }
    let scale = power.sqrt().recip();
    Ok((points.into_iter().map(|p| p * scale).collect(), scale))
}

/// Moment summary of a unit-power alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// Complementary second moment `E[x^2]`.
    pub mu20: Complex64,
    pub mu4: f64,
    pub mu6: f64,
    /// Amplitude-weighted complementary moment `E[|x|^2 x^2]`; zero for
    /// circular and square-QAM alphabets.
    #[serde(default)]
    pub mu42: Complex64,
    /// IQ identifiability factor `1 - |mu20|^2`.
    pub beta: f64,
}

impl Moments {
    /// Moments for a circular unit-power alphabet with the given higher moments.
    pub fn circular(mu4: f64, mu6: f64) -> Self {
        Moments {
            mu20: Complex64::new(0.0, 0.0),
            mu4,
            mu6,
            mu42: Complex64::new(0.0, 0.0),
            beta: 1.0,
        }
    }

    /// FIM rank predicted from beta alone: 2 when the alphabet is real, 4 otherwise.
    pub fn predicted_rank(&self) -> usize {
        if self.beta.abs() < 1e-12 {
            2
        } else {
            4
        }
    }
}

/// Exact uniform moments over a point set.
pub fn moments_of(points: &[Complex64]) -> Moments {
    let n = points.len() as f64;
    let mut mu20 = Complex64::new(0.0, 0.0);
    let mut mu4 = 0.0;
    let mut mu6 = 0.0;
    let mut mu42 = Complex64::new(0.0, 0.0);
    for p in points {
        let p2 = p.norm_sqr();
        mu20 += p * p;
        mu42 += p2 * p * p;
        mu4 += p2 * p2;
        mu6 += p2 * p2 * p2;
    }
    mu20 /= n;
    Moments {
        mu20,
        mu4: mu4 / n,
        mu6: mu6 / n,
        mu42: mu42 / n,
        beta: 1.0 - mu20.norm_sqr(),
    }
}

/// Directional IQ sensitivities at an operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSensitivity {
    pub beta_eps: f64,
    pub beta_phi: f64,
    pub j_epsphi: f64,
}

pub fn directional_sensitivities(m: &Moments, eps: f64, phi: f64) -> DirectionalSensitivity {
    let rotated = Complex64::from_polar(1.0, -2.0 * phi) * m.mu20;
    DirectionalSensitivity {
        beta_eps: 0.5 * (1.0 - rotated.re),
        beta_phi: 0.5 * (1.0 + rotated.re),
        j_epsphi: 0.5 * (1.0 + eps) * rotated.im,
    }
}
