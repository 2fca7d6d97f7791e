//! Burst interchange files.
//!
//! JSON: `{"header": {...}, "samples": [[re, im], ...]}`.
//! Binary: `u32` little-endian header length, the header as JSON, then `n`
//! little-endian `f64` pairs.
//!
//! The known symbols are stored in the header unless the modulation is
//! `iridium`, whose fixed pattern is regenerated on read.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_model::{iridium_known_symbols, Burst, BurstMeta, ChannelConfig, HwiParams};

pub const IRIDIUM_MODULATION: &str = "iridium";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstHeader {
    pub satellite_id: u32,
    pub n: usize,
    pub snr_db: f64,
    pub modulation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<HwiParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_symbols: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonBurst {
    header: BurstHeader,
    samples: Vec<[f64; 2]>,
}

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn complexes(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}

fn header_for(b: &Burst, modulation: &str) -> BurstHeader {
    BurstHeader {
        satellite_id: b.meta.satellite_id,
        n: b.len(),
        snr_db: b.meta.channel.snr_db,
        modulation: modulation.to_string(),
        truth: b.meta.truth,
        known_symbols: (modulation != IRIDIUM_MODULATION).then(|| pairs(b.known_symbols())),
        seed: Some(b.meta.seed),
    }
}

fn burst_from(header: BurstHeader, samples: Vec<Complex64>) -> Result<Burst> {
    if samples.len() != header.n {
        return Err(Error::Format(format!(
            "header says n = {}, found {} samples",
            header.n,
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
        return Err(Error::Format("non-finite sample".into()));
    }
    let known = match &header.known_symbols {
        Some(k) => complexes(k),
        None if header.modulation == IRIDIUM_MODULATION => {
            let mut k = iridium_known_symbols();
            if header.n > k.len() {
                return Err(Error::Format(format!(
                    "iridium burst longer than its {} known symbols needs explicit known_symbols",
                    k.len()
                )));
            }
            k.truncate(header.n);
            k
        }
        None => return Err(Error::Format("known_symbols missing".into())),
    };
    let channel = ChannelConfig::awgn(Complex64::new(1.0, 0.0), header.snr_db);
    Burst::new(
        samples,
        known,
        BurstMeta {
            satellite_id: header.satellite_id,
            seed: header.seed.unwrap_or(0),
            channel,
            truth: header.truth,
        },
    )
    .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_burst_json<W: Write>(b: &Burst, modulation: &str, w: W) -> Result<()> {
    let doc = JsonBurst {
        header: header_for(b, modulation),
        samples: pairs(b.samples()),
    };
    serde_json::to_writer(w, &doc)?;
    Ok(())
}

pub fn read_burst_json<R: Read>(r: R) -> Result<Burst> {
    let doc: JsonBurst = serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
    burst_from(doc.header, complexes(&doc.samples))
}

pub fn write_burst_binary<W: Write>(b: &Burst, modulation: &str, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&header_for(b, modulation))?;
    let len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    for s in b.samples() {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_burst_binary<R: Read>(mut r: R) -> Result<Burst> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|e| Error::Format(format!("header length: {e}")))?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    let header: BurstHeader = serde_json::from_slice(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.n * 16 {
        return Err(Error::Format(format!(
            "expected {} sample bytes, found {}",
            header.n * 16,
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    burst_from(header, samples)
}

/// Reads either format; binary files are recognized by a `.bin` extension.
pub fn read_burst_file(path: impl AsRef<Path>) -> Result<Burst> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        read_burst_binary(&bytes[..])
    } else {
        read_burst_json(&bytes[..])
    }
}

pub fn write_burst_file(path: impl AsRef<Path>, b: &Burst, modulation: &str) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "bin") {
        write_burst_binary(b, modulation, &mut buf)?;
    } else {
        write_burst_json(b, modulation, &mut buf)?;
    }
    fs::write(path, buf)?;
    Ok(())
}
