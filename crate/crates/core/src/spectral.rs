//! Spectrum-analyzer emulation and the metrology built on it.
//!
//! The PSD estimate is a segmented, windowed periodogram average. The
//! resolution bandwidth fixes the segment length through the window's
//! equivalent noise bandwidth (ENBW), so one bin integrates exactly `rbw` of
//! white noise. A video bandwidth narrower than the RBW is emulated as extra
//! averaging by `round(rbw / vbw)`. Spectra are reported in dB relative to
//! the shot-noise level of the analyzed channel.

use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::FieldDrive;
use crate::traces::{Channel, TraceBlock, TraceSource};

/// Bins on each side of a tone excluded from floor estimates.
pub const TONE_GUARD_BINS: usize = 3;
/// Bins on each side (beyond the guard) used for the local floor median.
pub const FLANK_BINS: usize = 50;
/// Minimum tone SNR for a linewidth measurement.
pub const LINEWIDTH_MIN_SNR_DB: f64 = 6.0;
/// A tone is detected when its excess power exceeds this many standard
/// errors of the averaged floor.
pub const DETECTION_SIGMAS: f64 = 3.0;

// Segments reduced per parallel batch. Fixed so the summation order, and
// hence every output bit, is independent of the thread count.
const SEGMENT_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// ENBW in bins.
    pub fn enbw_bins(self) -> f64 {
        match self {
            Window::Rectangular => 1.0,
            Window::Hann => 1.5,
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hann" => Ok(Window::Hann),
            "rectangular" => Ok(Window::Rectangular),
            other => Err(format!("unknown window '{other}' (hann|rectangular)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Resolution bandwidth, Hz (the noise bandwidth of one bin).
    pub rbw: f64,
    /// Video bandwidth, Hz.
    pub vbw: f64,
    pub trace_averages: usize,
    pub window: Window,
    /// Hz.
    pub center_frequency: f64,
    /// Hz.
    pub span: f64,
    pub channel: Channel,
}

impl SpectrumConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rbw", self.rbw), ("vbw", self.vbw), ("span", self.span)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Configuration(format!("{name} must be positive, got {v}")));
            }
        }
        if self.trace_averages == 0 {
            return Err(Error::Configuration("trace_averages must be >= 1".into()));
        }
        if !(self.center_frequency >= 0.0 && self.center_frequency.is_finite()) {
            return Err(Error::Configuration(format!(
                "center frequency must be >= 0, got {}",
                self.center_frequency
            )));
        }
        Ok(())
    }

    /// Extra averaging contributed by the video filter.
    pub fn vbw_factor(&self) -> usize {
        ((self.rbw / self.vbw).round() as usize).max(1)
    }

    pub fn segments_required(&self) -> usize {
        self.trace_averages * self.vbw_factor()
    }

    /// Segment length at which one bin has an ENBW of `rbw`. Rounded down,
    /// so the realized ENBW is never below `rbw`.
    pub fn segment_len(&self, sample_rate: f64) -> Result<usize> {
        self.validate()?;
        let exact = sample_rate * self.window.enbw_bins() / self.rbw;
        let n = (exact * (1.0 + 1e-12)).floor();
        if !(n >= 2.0) || !n.is_finite() || n > usize::MAX as f64 / 4.0 {
            return Err(Error::Configuration(format!(
                "rbw {} Hz at sample rate {} Hz gives an unusable segment length {exact}",
                self.rbw, sample_rate
            )));
        }
        Ok(n as usize)
    }

    pub fn samples_required(&self, sample_rate: f64) -> Result<usize> {
        Ok(self.segment_len(sample_rate)? * self.segments_required())
    }

    /// Trace duration, s, needed for the configured averaging.
    pub fn duration_required(&self, sample_rate: f64) -> Result<f64> {
        Ok(self.samples_required(sample_rate)? as f64 / sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    /// Hz, strictly increasing.
    pub frequencies: Vec<f64>,
    pub psd_db_rel_snl: Vec<f64>,
    /// Realized equivalent noise bandwidth of one bin, Hz.
    pub enbw: f64,
    /// Bin spacing, Hz.
    pub bin_width: f64,
    pub effective_averages: usize,
    /// One-sided shot-noise density used as the 0 dB reference, counts²/Hz.
    pub snl_psd: f64,
    pub config: SpectrumConfig,
}

impl NoiseSpectrum {
    /// PSD relative to the shot-noise level, linear.
    pub fn psd_rel_linear(&self) -> Vec<f64> {
        self.psd_db_rel_snl.iter().map(|d| 10f64.powf(d / 10.0)).collect()
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Index of the bin nearest `f0`; errors if `f0` lies outside the span.
    pub fn bin_of(&self, f0: f64) -> Result<usize> {
        let (first, last) = match (self.frequencies.first(), self.frequencies.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::domain("empty spectrum")),
        };
        if !(f0 >= first - 0.5 * self.bin_width && f0 <= last + 0.5 * self.bin_width) {
            return Err(Error::domain(format!(
                "frequency {f0} Hz outside analyzed span [{first}, {last}] Hz"
            )));
        }
        let k = ((f0 - first) / self.bin_width).round() as usize;
        Ok(k.min(self.len() - 1))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frequency_hz,psd_db_rel_snl\n");
        for (f, p) in self.frequencies.iter().zip(&self.psd_db_rel_snl) {
            s.push_str(&format!("{f},{p}\n"));
        }
        s
    }
}

/// Averaged one-sided periodogram (counts²/Hz) of `n_segments` consecutive,
/// non-overlapping, mean-removed segments of `samples`, for bins
/// `0..=segment_len/2`.
pub fn welch_psd(
    samples: &[f64],
    sample_rate: f64,
    window: Window,
    segment_len: usize,
    n_segments: usize,
) -> Result<Vec<f64>> {
    let source = SliceSource { samples, sample_rate };
    let bins = 0..segment_len / 2 + 1;
    let mut out = averaged_periodograms(&source, &[Channel::Probe], window, segment_len, n_segments, bins)?;
    Ok(out.remove(0))
}

struct SliceSource<'a> {
    samples: &'a [f64],
    sample_rate: f64,
}

impl TraceSource for SliceSource<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    fn snl(&self) -> crate::traces::SnlReference {
        crate::traces::SnlReference {
            probe: 1.0,
            conjugate: 1.0,
            difference: 1.0,
        }
    }

    fn read(&self, start: usize, block: &mut TraceBlock) -> Result<()> {
        let end = start + block.len();
        block.probe.copy_from_slice(&self.samples[start..end]);
        Ok(())
    }
}

fn averaged_periodograms(
    source: &dyn TraceSource,
    channels: &[Channel],
    window: Window,
    segment_len: usize,
    n_segments: usize,
    bins: std::ops::Range<usize>,
) -> Result<Vec<Vec<f64>>> {
    let needed = segment_len.saturating_mul(n_segments);
    if n_segments == 0 || segment_len < 2 || needed > source.len() {
        return Err(Error::Configuration(format!(
            "{n_segments} segments of {segment_len} samples need {needed} samples; trace has {}",
            source.len()
        )));
    }
    let fs = source.sample_rate();
    let w = window.coefficients(segment_len);
    let w_sq: f64 = w.iter().map(|v| v * v).sum();
    let nyquist = segment_len / 2;
    let even = segment_len.is_multiple_of(2);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(segment_len);

    let periodogram = |seg: usize| -> Result<Vec<Vec<f64>>> {
        let mut block = TraceBlock::with_len(segment_len);
        source.read(seg * segment_len, &mut block)?;
        let mut input = fft.make_input_vec();
        let mut spectrum = fft.make_output_vec();
        let mut scratch = fft.make_scratch_vec();
        let mut out = Vec::with_capacity(channels.len());
        for &ch in channels {
            let data = block.channel(ch);
            let mean = data.iter().sum::<f64>() / segment_len as f64;
            for ((dst, &x), &wk) in input.iter_mut().zip(data).zip(&w) {
                *dst = (x - mean) * wk;
            }
            fft.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
                .map_err(|e| Error::Configuration(format!("fft failed: {e}")))?;
            let row: Vec<f64> = bins
                .clone()
                .map(|k| {
                    let one_sided = if k == 0 || (even && k == nyquist) { 1.0 } else { 2.0 };
                    one_sided * spectrum[k].norm_sqr() / (fs * w_sq)
                })
                .collect();
            out.push(row);
        }
        Ok(out)
    };

    let mut acc = vec![vec![0.0; bins.len()]; channels.len()];
    let mut start = 0;
    while start < n_segments {
        let end = (start + SEGMENT_BATCH).min(n_segments);
        let batch: Vec<Vec<Vec<f64>>> = (start..end)
            .into_par_iter()
            .map(periodogram)
            .collect::<Result<_>>()?;
        for seg in batch {
            for (a, row) in acc.iter_mut().zip(seg) {
                for (x, v) in a.iter_mut().zip(row) {
                    *x += v;
                }
            }
        }
        start = end;
    }
    for a in &mut acc {
        for x in a.iter_mut() {
            *x /= n_segments as f64;
        }
    }
    Ok(acc)
}

/// PSD of `cfg.channel`, normalized so the channel's shot-noise floor reads 0 dB.
pub fn estimate_psd(source: &dyn TraceSource, cfg: &SpectrumConfig) -> Result<NoiseSpectrum> {
    Ok(estimate_psd_channels(source, cfg, &[cfg.channel])?.remove(0))
}

/// One pass over the trace producing a spectrum per requested channel; each
/// spectrum's config echo carries its own channel.
pub fn estimate_psd_channels(
    source: &dyn TraceSource,
    cfg: &SpectrumConfig,
    channels: &[Channel],
) -> Result<Vec<NoiseSpectrum>> {
    cfg.validate()?;
    let fs = source.sample_rate();
    let seg = cfg.segment_len(fs)?;
    let n_seg = cfg.segments_required();
    let needed = seg * n_seg;
    if needed > source.len() {
        return Err(Error::Configuration(format!(
            "{} averages × {} video factor at rbw {} Hz need {} samples ({:.6} s) but the trace \
             has {} ({:.6} s); increase duration to at least {:.6} s",
            cfg.trace_averages,
            cfg.vbw_factor(),
            cfg.rbw,
            needed,
            needed as f64 / fs,
            source.len(),
            source.len() as f64 / fs,
            needed as f64 / fs
        )));
    }
    let df = fs / seg as f64;
    let lo_f = cfg.center_frequency - 0.5 * cfg.span;
    let hi_f = cfg.center_frequency + 0.5 * cfg.span;
    let k_lo = ((lo_f / df).ceil().max(1.0)) as usize;
    let k_hi = ((hi_f / df).floor().min((seg / 2) as f64)).max(0.0) as usize;
    if k_lo > k_hi {
        return Err(Error::Configuration(format!(
            "span {lo_f}..{hi_f} Hz contains no analyzer bins (bin width {df} Hz, Nyquist {} Hz)",
            fs / 2.0
        )));
    }
    let w = cfg.window.coefficients(seg);
    let (sum_w, sum_w2) = w.iter().fold((0.0, 0.0), |(a, b), v| (a + v, b + v * v));
    let enbw = fs * sum_w2 / (sum_w * sum_w);
    let psds = averaged_periodograms(source, channels, cfg.window, seg, n_seg, k_lo..k_hi + 1)?;
    let snl = source.snl();
    let mut out = Vec::with_capacity(channels.len());
    for (&ch, psd) in channels.iter().zip(psds) {
        // White shot noise of c counts/sample has one-sided density 2c/fs.
        let snl_psd = 2.0 * snl.get(ch) / fs;
        if !(snl_psd > 0.0) {
            return Err(Error::Configuration(format!(
                "channel {} has no shot-noise reference (dark channel)",
                ch.name()
            )));
        }
        let psd_db_rel_snl = psd.iter().map(|p| 10.0 * (p / snl_psd).log10()).collect();
        out.push(NoiseSpectrum {
            frequencies: (k_lo..=k_hi).map(|k| k as f64 * df).collect(),
            psd_db_rel_snl,
            enbw,
            bin_width: df,
            effective_averages: n_seg,
            snl_psd,
            config: SpectrumConfig { channel: ch, ..*cfg },
        });
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Local noise floor around bin `k` (linear, relative to SNL): median of the
/// flanking bins outside the guard, rescaled from median to mean for the
/// averaged chi-squared bin statistics.
pub fn local_floor(spec: &NoiseSpectrum, k: usize) -> Result<f64> {
    let lin = spec.psd_rel_linear();
    let mut flank = Vec::with_capacity(2 * FLANK_BINS);
    for d in TONE_GUARD_BINS + 1..=TONE_GUARD_BINS + FLANK_BINS {
        if k >= d {
            flank.push(lin[k - d]);
        }
        if k + d < lin.len() {
            flank.push(lin[k + d]);
        }
    }
    if flank.len() < 8 {
        return Err(Error::NotMeasurable(format!(
            "only {} flanking bins around {} Hz; widen the span",
            flank.len(),
            spec.frequencies[k]
        )));
    }
    // Wilson-Hilferty: median(χ²_ν)/ν ≈ (1 − 2/(9ν))³ with ν = 2·averages.
    let nu = 2.0 * spec.effective_averages as f64;
    Ok(median(flank) / (1.0 - 2.0 / (9.0 * nu)).powi(3))
}

/// Mean noise level over the whole span (linear, relative to SNL), skipping
/// the guard region around `tone` when given.
pub fn floor_level(spec: &NoiseSpectrum, tone: Option<f64>) -> Result<f64> {
    let lin = spec.psd_rel_linear();
    let skip = match tone {
        Some(f0) => {
            let k = spec.bin_of(f0)?;
            Some(k.saturating_sub(TONE_GUARD_BINS)..=k + TONE_GUARD_BINS)
        }
        None => None,
    };
    let vals: Vec<f64> = lin
        .iter()
        .enumerate()
        .filter(|(i, _)| skip.as_ref().is_none_or(|r| !r.contains(i)))
        .map(|(_, v)| *v)
        .collect();
    if vals.is_empty() {
        return Err(Error::NotMeasurable("no bins left for a floor estimate".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Linear power SNR of the tone at `f0` in one ENBW: excess of the tone bin
/// over the local floor, divided by the floor.
pub fn tone_snr_linear(spec: &NoiseSpectrum, f0: f64) -> Result<f64> {
    let k = spec.bin_of(f0)?;
    let floor = local_floor(spec, k)?;
    let peak = 10f64.powf(spec.psd_db_rel_snl[k] / 10.0);
    Ok((peak - floor) / floor)
}

/// Tone SNR in dB (power). Negative infinity when the tone bin does not rise
/// above the floor.
pub fn tone_snr(spec: &NoiseSpectrum, f0: f64) -> Result<f64> {
    let snr = tone_snr_linear(spec, f0)?;
    Ok(if snr > 0.0 { 10.0 * snr.log10() } else { f64::NEG_INFINITY })
}

/// Tone power in counts² integrated over the guard region above the local
/// floor. Insensitive to where the tone falls within its bin.
pub fn tone_power(spec: &NoiseSpectrum, f0: f64) -> Result<f64> {
    let k = spec.bin_of(f0)?;
    let floor = local_floor(spec, k)?;
    let lin = spec.psd_rel_linear();
    let lo = k.saturating_sub(TONE_GUARD_BINS);
    let hi = (k + TONE_GUARD_BINS).min(lin.len() - 1);
    let excess: f64 = lin[lo..=hi].iter().map(|v| v - floor).sum();
    Ok(excess * spec.bin_width * spec.snl_psd)
}

/// Zero-to-peak amplitude (counts/sample) of the tone at `f0`.
pub fn tone_amplitude(spec: &NoiseSpectrum, f0: f64) -> Result<f64> {
    Ok((2.0 * tone_power(spec, f0)?.max(0.0)).sqrt())
}

/// Full width at half maximum of the tone peak near `f0`, Hz.
///
/// Measured on the amplitude (√power) profile above the local floor, the way
/// the peak appears on a linear-voltage analyzer display, with linear
/// interpolation between bins.
pub fn fwhm_linewidth(spec: &NoiseSpectrum, f0: f64) -> Result<f64> {
    let snr = tone_snr(spec, f0)?;
    if snr < LINEWIDTH_MIN_SNR_DB {
        return Err(Error::NotMeasurable(format!(
            "tone SNR {snr:.2} dB below the {LINEWIDTH_MIN_SNR_DB} dB needed for a linewidth"
        )));
    }
    let k0 = spec.bin_of(f0)?;
    let floor = local_floor(spec, k0)?;
    let amp: Vec<f64> = spec
        .psd_rel_linear()
        .iter()
        .map(|v| (v - floor).max(0.0).sqrt())
        .collect();
    let lo = k0.saturating_sub(1);
    let hi = (k0 + 1).min(amp.len() - 1);
    let peak_k = (lo..=hi)
        .max_by(|&a, &b| amp[a].total_cmp(&amp[b]))
        .unwrap_or(k0);
    let half = 0.5 * amp[peak_k];

    let mut right = None;
    for k in peak_k + 1..amp.len() {
        if amp[k] <= half {
            let frac = (amp[k - 1] - half) / (amp[k - 1] - amp[k]);
            right = Some(spec.frequencies[k - 1] + frac * spec.bin_width);
            break;
        }
    }
    let mut left = None;
    for k in (0..peak_k).rev() {
        if amp[k] <= half {
            let frac = (amp[k + 1] - half) / (amp[k + 1] - amp[k]);
            left = Some(spec.frequencies[k + 1] - frac * spec.bin_width);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::NotMeasurable(
            "peak does not fall to half maximum inside the span".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub channel: Channel,
    /// Power SNR of the tone in one ENBW, dB.
    pub snr_power_db: f64,
    /// Noise floor relative to the shot-noise level, power dB.
    pub squeezing_db: f64,
    /// Hz; absent when the tone is too weak for a width measurement.
    pub linewidth_fwhm: Option<f64>,
    /// T/√Hz.
    pub sensitivity: f64,
    /// T, zero-to-peak.
    pub applied_field: f64,
    pub field_convention: String,
    pub tone_frequency: f64,
    pub enbw: f64,
    pub effective_averages: usize,
}

/// Minimum resolvable field from the tone SNR and the realized ENBW:
/// `B / (10^(SNR/20)·√ENBW)`.
pub fn extract_sensitivity(spec: &NoiseSpectrum, applied: &FieldDrive) -> Result<SensitivityReport> {
    applied.validate()?;
    if !(applied.ac_amplitude > 0.0) {
        return Err(Error::domain("sensitivity needs a nonzero ac drive"));
    }
    let f0 = applied.ac_frequency;
    let snr_lin = tone_snr_linear(spec, f0)?;
    let threshold = DETECTION_SIGMAS / (spec.effective_averages as f64).sqrt();
    if !(snr_lin > threshold) {
        return Err(Error::NotMeasurable(format!(
            "tone at {f0} Hz not detected: excess {snr_lin:.4} of floor, threshold {threshold:.4}"
        )));
    }
    let snr_power_db = 10.0 * snr_lin.log10();
    let amplitude_snr = snr_lin.sqrt();
    let floor = floor_level(spec, Some(f0))?;
    let linewidth_fwhm = if snr_power_db >= LINEWIDTH_MIN_SNR_DB {
        Some(fwhm_linewidth(spec, f0)?)
    } else {
        None
    };
    Ok(SensitivityReport {
        channel: spec.config.channel,
        snr_power_db,
        squeezing_db: 10.0 * floor.log10(),
        linewidth_fwhm,
        sensitivity: applied.ac_amplitude / (amplitude_snr * spec.enbw.sqrt()),
        applied_field: applied.ac_amplitude,
        field_convention: "zero-to-peak".into(),
        tone_frequency: f0,
        enbw: spec.enbw,
        effective_averages: spec.effective_averages,
    })
}
