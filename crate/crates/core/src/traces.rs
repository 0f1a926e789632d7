//! Sampled photocurrent traces and their on-disk encodings.
//!
//! Samples are detected photon counts per sampling interval (Gaussian
//! approximation), so for coherent light the per-sample variance equals the
//! per-sample mean. That mean is the shot-noise reference recorded in
//! [`SnlReference`].
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic        8 bytes  "NMORTRC\0"
//! version      u32      1
//! sample_rate  f64      Hz
//! rng_seed     u64
//! snl          3 × f64  probe, conjugate, difference (counts/sample)
//! gen_len      u32      length of generator tag, ≤ 256
//! generator    gen_len bytes, UTF-8
//! n            u64      sample count
//! samples      n × (probe f64, conjugate f64, difference f64)
//! ```

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"NMORTRC\0";
pub const BINARY_VERSION: u32 = 1;
const MAX_GENERATOR_LEN: usize = 256;
pub const CSV_HEADER: &str = "index,probe,conjugate,difference";

/// Which detected signal to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Probe,
    Conjugate,
    Difference,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Probe, Channel::Conjugate, Channel::Difference];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Probe => "probe",
            Channel::Conjugate => "conjugate",
            Channel::Difference => "difference",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "probe" => Ok(Channel::Probe),
            "conjugate" => Ok(Channel::Conjugate),
            "difference" => Ok(Channel::Difference),
            other => Err(format!("unknown channel '{other}' (probe|conjugate|difference)")),
        }
    }
}

/// Mean detected counts per sample of coherent light with the same power as
/// each channel. Shot-noise variance per sample equals these values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnlReference {
    pub probe: f64,
    pub conjugate: f64,
    pub difference: f64,
}

impl SnlReference {
    pub fn get(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Probe => self.probe,
            Channel::Conjugate => self.conjugate,
            Channel::Difference => self.difference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub rng_seed: u64,
    pub generator_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentTraces {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
    pub difference: Vec<f64>,
    pub sample_rate: f64,
    pub snl: SnlReference,
    pub provenance: Provenance,
}

/// Contiguous samples of all three channels.
#[derive(Debug, Clone, Default)]
pub struct TraceBlock {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
    pub difference: Vec<f64>,
}

impl TraceBlock {
    pub fn with_len(n: usize) -> Self {
        Self {
            probe: vec![0.0; n],
            conjugate: vec![0.0; n],
            difference: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe.is_empty()
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        match ch {
            Channel::Probe => &self.probe,
            Channel::Conjugate => &self.conjugate,
            Channel::Difference => &self.difference,
        }
    }
}

/// Random-access producer of trace samples. Implemented by materialized
/// traces and by the streaming synthesizer, so long acquisitions never need
/// to be held in memory.
pub trait TraceSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample_rate(&self) -> f64;

    fn snl(&self) -> SnlReference;

    /// Fills `block` (all channels, `block.len()` samples) starting at `start`.
    fn read(&self, start: usize, block: &mut TraceBlock) -> Result<()>;
}

impl PhotocurrentTraces {
    pub fn len(&self) -> usize {
        self.probe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probe.is_empty()
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        match ch {
            Channel::Probe => &self.probe,
            Channel::Conjugate => &self.conjugate,
            Channel::Difference => &self.difference,
        }
    }

    /// Checks the structural invariants: equal lengths, finite samples, and
    /// `difference == probe − conjugate` bit for bit.
    pub fn validate(&self) -> Result<()> {
        let n = self.probe.len();
        if self.conjugate.len() != n || self.difference.len() != n {
            return Err(Error::TraceFormat("channel lengths differ".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::TraceFormat(format!("invalid sample rate {}", self.sample_rate)));
        }
        for v in [self.snl.probe, self.snl.conjugate, self.snl.difference] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::TraceFormat(format!("invalid shot-noise reference {v}")));
            }
        }
        for i in 0..n {
            let (p, c, d) = (self.probe[i], self.conjugate[i], self.difference[i]);
            if !(p.is_finite() && c.is_finite() && d.is_finite()) {
                return Err(Error::TraceFormat(format!("non-finite sample at index {i}")));
            }
            if (p - c).to_bits() != d.to_bits() {
                return Err(Error::TraceFormat(format!(
                    "difference != probe - conjugate at index {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let gen = self.provenance.generator_version.as_bytes();
        let gen = &gen[..gen.len().min(MAX_GENERATOR_LEN)];
        let mut out = Vec::with_capacity(80 + gen.len() + 24 * self.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&self.provenance.rng_seed.to_le_bytes());
        for v in [self.snl.probe, self.snl.conjugate, self.snl.difference] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(gen.len() as u32).to_le_bytes());
        out.extend_from_slice(gen);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(&self.probe[i].to_le_bytes());
            out.extend_from_slice(&self.conjugate[i].to_le_bytes());
            out.extend_from_slice(&self.difference[i].to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != BINARY_MAGIC {
            return Err(Error::TraceFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::TraceFormat(format!("unsupported version {version}")));
        }
        let sample_rate = r.f64()?;
        let rng_seed = r.u64()?;
        let snl = SnlReference {
            probe: r.f64()?,
            conjugate: r.f64()?,
            difference: r.f64()?,
        };
        let gen_len = r.u32()? as usize;
        if gen_len > MAX_GENERATOR_LEN {
            return Err(Error::TraceFormat(format!("generator tag too long ({gen_len})")));
        }
        let generator_version = std::str::from_utf8(r.take(gen_len)?)
            .map_err(|_| Error::TraceFormat("generator tag is not UTF-8".into()))?
            .to_string();
        let n = r.u64()?;
        let remaining = (bytes.len() - r.pos) as u64;
        if n.checked_mul(24) != Some(remaining) {
            return Err(Error::TraceFormat(format!(
                "header declares {n} samples but {remaining} payload bytes follow"
            )));
        }
        let n = n as usize;
        let mut t = PhotocurrentTraces {
            probe: Vec::with_capacity(n),
            conjugate: Vec::with_capacity(n),
            difference: Vec::with_capacity(n),
            sample_rate,
            snl,
            provenance: Provenance {
                rng_seed,
                generator_version,
            },
        };
        for _ in 0..n {
            t.probe.push(r.f64()?);
            t.conjugate.push(r.f64()?);
            t.difference.push(r.f64()?);
        }
        t.validate()?;
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.len() + 5));
        let _ = writeln!(s, "# sample_rate_hz = {}", self.sample_rate);
        let _ = writeln!(s, "# rng_seed = {}", self.provenance.rng_seed);
        let _ = writeln!(s, "# generator = {}", self.provenance.generator_version);
        let _ = writeln!(
            s,
            "# snl_counts = {},{},{}",
            self.snl.probe, self.snl.conjugate, self.snl.difference
        );
        s.push_str(CSV_HEADER);
        s.push('\n');
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                i, self.probe[i], self.conjugate[i], self.difference[i]
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let fmt_err = |line: usize, msg: String| Error::TraceFormat(format!("line {line}: {msg}"));
        let mut sample_rate = None;
        let mut rng_seed = None;
        let mut generator = None;
        let mut snl = None;
        let mut header_seen = false;
        let mut t = PhotocurrentTraces {
            probe: Vec::new(),
            conjugate: Vec::new(),
            difference: Vec::new(),
            sample_rate: 0.0,
            snl: SnlReference {
                probe: 0.0,
                conjugate: 0.0,
                difference: 0.0,
            },
            provenance: Provenance {
                rng_seed: 0,
                generator_version: String::new(),
            },
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| fmt_err(line_no, "metadata line without '='".into()))?;
                let (k, v) = (k.trim(), v.trim());
                let num = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|_| fmt_err(line_no, format!("bad number '{v}'")))
                };
                match k {
                    "sample_rate_hz" => sample_rate = Some(num(v)?),
                    "rng_seed" => {
                        rng_seed = Some(
                            v.parse::<u64>()
                                .map_err(|_| fmt_err(line_no, format!("bad seed '{v}'")))?,
                        )
                    }
                    "generator" => generator = Some(v.to_string()),
                    "snl_counts" => {
                        let parts: Vec<&str> = v.split(',').collect();
                        if parts.len() != 3 {
                            return Err(fmt_err(line_no, "snl_counts needs three values".into()));
                        }
                        snl = Some(SnlReference {
                            probe: num(parts[0].trim())?,
                            conjugate: num(parts[1].trim())?,
                            difference: num(parts[2].trim())?,
                        });
                    }
                    other => return Err(fmt_err(line_no, format!("unknown metadata key '{other}'"))),
                }
                continue;
            }
            if !header_seen {
                if line != CSV_HEADER {
                    return Err(fmt_err(line_no, format!("expected header '{CSV_HEADER}'")));
                }
                header_seen = true;
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| {
                fields
                    .next()
                    .ok_or_else(|| fmt_err(line_no, format!("missing {name} column")))
            };
            let index: usize = next("index")?
                .trim()
                .parse()
                .map_err(|_| fmt_err(line_no, "bad index".into()))?;
            if index != t.probe.len() {
                return Err(fmt_err(line_no, format!("index {index} out of sequence")));
            }
            let mut val = |name: &str| -> Result<f64> {
                let s = next(name)?;
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| fmt_err(line_no, format!("bad {name} value '{s}'")))
            };
            let p = val("probe")?;
            let c = val("conjugate")?;
            let d = val("difference")?;
            if fields.next().is_some() {
                return Err(fmt_err(line_no, "too many columns".into()));
            }
            t.probe.push(p);
            t.conjugate.push(c);
            t.difference.push(d);
        }
        if !header_seen {
            return Err(Error::TraceFormat("missing header".into()));
        }
        t.sample_rate =
            sample_rate.ok_or_else(|| Error::TraceFormat("missing sample_rate_hz".into()))?;
        t.snl = snl.ok_or_else(|| Error::TraceFormat("missing snl_counts".into()))?;
        t.provenance = Provenance {
            rng_seed: rng_seed.ok_or_else(|| Error::TraceFormat("missing rng_seed".into()))?,
            generator_version: generator.unwrap_or_default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_binary())
    }
}

impl TraceSource for PhotocurrentTraces {
    fn len(&self) -> usize {
        self.probe.len()
    }

    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    fn snl(&self) -> SnlReference {
        self.snl
    }

    fn read(&self, start: usize, block: &mut TraceBlock) -> Result<()> {
        let end = start + block.len();
        if end > self.len() {
            return Err(Error::Configuration(format!(
                "read of samples {start}..{end} past trace end {}",
                self.len()
            )));
        }
        block.probe.copy_from_slice(&self.probe[start..end]);
        block.conjugate.copy_from_slice(&self.conjugate[start..end]);
        block.difference.copy_from_slice(&self.difference[start..end]);
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::TraceFormat("truncated input".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
