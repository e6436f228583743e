//! CSI simulation with hardware impairments, amplitude preprocessing and
//! gain calibration.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::FieldSet;
use crate::greens::{incident_field, wavenumber, AntennaModel, ArrayLayout};
use crate::linalg::{ComplexMatrix, C64};
use crate::scene::SensingDomain;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 100.0;
pub const DEFAULT_WINDOW: usize = 50;
const HAMPEL_SCALE: f64 = 1.4826;
const HAMPEL_THRESHOLD: f64 = 3.0;

/// Sample series for one (tx, rx, tone) link: either raw complex CSI or
/// amplitudes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSeries {
    pub tx: usize,
    pub rx: usize,
    pub tone: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iq: Option<Vec<C64>>,
}

impl LinkSeries {
    pub fn len(&self) -> usize {
        self.amp.as_ref().map(Vec::len).or_else(|| self.iq.as_ref().map(Vec::len)).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        match (&self.amp, &self.iq) {
            (Some(a), _) => a.clone(),
            (None, Some(iq)) => iq.iter().map(|v| v.norm()).collect(),
            (None, None) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    pub links: Vec<LinkSeries>,
    #[serde(default)]
    pub empty_scene: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
}

fn default_sample_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        let mut len = None;
        for l in &self.links {
            if l.amp.is_some() == l.iq.is_some() {
                return Err(Error::InvalidConfig(format!(
                    "link ({}, {}, {}) must carry exactly one of amp or iq",
                    l.tx, l.rx, l.tone
                )));
            }
            if let Some(a) = &l.amp {
                if a.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidConfig("amplitudes must be finite and non-negative".into()));
                }
            }
            match len {
                None => len = Some(l.len()),
                Some(n) if n != l.len() => {
                    return Err(Error::InvalidConfig("all links must have the same number of samples".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Position of each link keyed by (tx, rx, tone).
    pub fn index(&self) -> HashMap<(usize, usize, usize), usize> {
        self.links.iter().enumerate().map(|(i, l)| ((l.tx, l.rx, l.tone), i)).collect()
    }

    /// Same measurements with the phase discarded.
    pub fn to_amplitude_only(&self) -> Self {
        let links = self
            .links
            .iter()
            .map(|l| LinkSeries { tx: l.tx, rx: l.rx, tone: l.tone, amp: Some(l.amplitudes()), iq: None })
            .collect();
        Self { links, ..self.clone() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Per-link product of transmitter and receiver gains, and a per-receiver AGC
/// multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Row-major `n_tx × n_rx`.
    pub gains: Vec<f64>,
    pub agc: Vec<f64>,
}

impl GainTable {
    pub fn uniform(n_tx: usize, n_rx: usize, g: f64) -> Self {
        Self { n_tx, n_rx, gains: vec![g; n_tx * n_rx], agc: vec![1.0; n_rx] }
    }

    pub fn from_factors(g_tx: &[f64], g_rx: &[f64]) -> Self {
        let gains = g_tx.iter().flat_map(|t| g_rx.iter().map(move |r| t * r)).collect();
        Self { n_tx: g_tx.len(), n_rx: g_rx.len(), gains, agc: vec![1.0; g_rx.len()] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.len() != self.n_tx * self.n_rx || self.agc.len() != self.n_rx {
            return Err(Error::Shape("gain table dimensions disagree".into()));
        }
        if self.gains.iter().chain(&self.agc).any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("gains must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn gain(&self, tx: usize, rx: usize) -> f64 {
        self.gains[tx * self.n_rx + rx]
    }

    /// Link gain including AGC.
    pub fn effective(&self, tx: usize, rx: usize) -> f64 {
        self.gain(tx, rx) * self.agc[rx]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let g: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketPhase {
    #[default]
    UniformRandom,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Circular complex Gaussian added to the CSI sample.
    #[default]
    Complex,
    /// Real Gaussian added to the sample magnitude only.
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub amp_noise_sigma: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    pub packet_phase: PacketPhase,
    pub agc_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { amp_noise_sigma: 0.0, noise_model: NoiseModel::Complex, packet_phase: PacketPhase::UniformRandom, agc_jitter: 0.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { packet_phase: PacketPhase::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amp_noise_sigma >= 0.0 && self.agc_jitter >= 0.0) {
            return Err(Error::InvalidConfig("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Simulated CSI series for every link of `fields`.
///
/// `Y[t] = g · agc · (1 + jitter·ξ_t) · E_total · e^{jφ_t} + n_t`, with one
/// independent random stream per link so results do not depend on scheduling.
pub fn simulate_csi(fields: &FieldSet, gains: &GainTable, noise: &NoiseConfig, n_samples: usize) -> Result<MeasurementSet> {
    gains.validate()?;
    noise.validate()?;
    let (p, q) = (fields.n_tx(), fields.n_rx());
    if gains.n_tx != p || gains.n_rx != q {
        return Err(Error::Shape(format!("gain table is {}×{}, fields are {p}×{q}", gains.n_tx, gains.n_rx)));
    }
    let keys: Vec<(usize, usize, usize)> =
        (0..fields.tones.len()).flat_map(|t| (0..p).flat_map(move |tx| (0..q).map(move |rx| (t, tx, rx)))).collect();
    let links = keys
        .par_iter()
        .enumerate()
        .map(|(stream, &(tone, tx, rx))| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(stream as u64);
            let e = fields.tones[tone].e_total_rx[(tx, rx)] * gains.effective(tx, rx);
            let iq = (0..n_samples)
                .map(|_| {
                    let phase = match noise.packet_phase {
                        PacketPhase::UniformRandom => rng.gen_range(0.0..std::f64::consts::TAU),
                        PacketPhase::None => 0.0,
                    };
                    let mut s = e;
                    if noise.agc_jitter > 0.0 {
                        let xi: f64 = rng.sample(StandardNormal);
                        s *= 1.0 + noise.agc_jitter * xi;
                    }
                    let rot = C64::from_polar(1.0, phase);
                    let sigma = noise.amp_noise_sigma;
                    match noise.noise_model {
                        NoiseModel::Complex => {
                            let mut y = s * rot;
                            if sigma > 0.0 {
                                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                                y += C64::new(a, b) * (sigma / std::f64::consts::SQRT_2);
                            }
                            y
                        }
                        NoiseModel::Amplitude => {
                            let mut mag = s.norm();
                            if sigma > 0.0 {
                                let a: f64 = rng.sample(StandardNormal);
                                mag = (mag + sigma * a).max(0.0);
                            }
                            C64::from_polar(mag, s.arg() + phase)
                        }
                    }
                })
                .collect();
            LinkSeries { tx, rx, tone, amp: None, iq: Some(iq) }
        })
        .collect();
    Ok(MeasurementSet { sample_rate: DEFAULT_SAMPLE_RATE_HZ, links, empty_scene: false, scene_id: None })
}

/// Centered moving average; the window `[i - w/2, i + w - 1 - w/2]` is
/// truncated at the edges.
pub fn mean_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("cannot filter an empty series".into()));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("filter window must be at least 1".into()));
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in series {
        acc += v;
        prefix.push(acc);
    }
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Hampel filter: samples further than `3 · 1.4826 · MAD` from the rolling
/// median (window 50) are replaced by that median.
pub fn remove_outliers(series: &[f64]) -> Result<Vec<f64>> {
    remove_outliers_with(series, DEFAULT_WINDOW)
}

pub fn remove_outliers_with(series: &[f64], window: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::InvalidConfig("outlier removal needs at least 3 samples".into()));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("outlier window must be at least 1".into()));
    }
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    let mut out = series.to_vec();
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + window - half).min(n);
        buf.clear();
        buf.extend_from_slice(&series[lo..hi]);
        let med = median(&mut buf);
        for v in buf.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median(&mut buf);
        if (series[i] - med).abs() > HAMPEL_THRESHOLD * HAMPEL_SCALE * mad {
            out[i] = med;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window: usize,
    pub outliers: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, outliers: true }
    }
}

/// Mean amplitude of a link after outlier removal and smoothing.
pub fn link_amplitude(link: &LinkSeries, cfg: &PreprocessConfig) -> Result<f64> {
    let amp = link.amplitudes();
    let cleaned = if cfg.outliers && amp.len() >= 3 { remove_outliers_with(&amp, cfg.window)? } else { amp };
    let smooth = mean_filter(&cleaned, cfg.window)?;
    Ok(smooth.iter().sum::<f64>() / smooth.len() as f64)
}

/// Estimate `g_t g_r` per link from empty-scene measurements as the smoothed
/// mean amplitude over the modelled incident amplitude, averaged over tones.
/// For the default antenna model this is `r · mean|Y|`.
pub fn calibrate_gains(
    empty: &MeasurementSet,
    layout: &ArrayLayout,
    antenna: &AntennaModel,
    cfg: &PreprocessConfig,
) -> Result<GainTable> {
    empty.validate()?;
    antenna.validate()?;
    if !empty.empty_scene {
        warn!("calibrating gains from measurements not flagged as an empty scene");
    }
    let (p, q) = (layout.tx.len(), layout.rx.len());
    let index = empty.index();
    let mut sums = vec![0.0; p * q];
    let mut counts = vec![0usize; p * q];
    for (&(tx, rx, tone), &i) in &index {
        if tx >= p || rx >= q || tone >= layout.tones_hz.len() {
            return Err(Error::InvalidConfig(format!("link ({tx}, {rx}, {tone}) is outside the array layout")));
        }
        let mean = link_amplitude(&empty.links[i], cfg)?;
        if mean <= 0.0 {
            return Err(Error::ZeroAmplitude { tx, rx, tone });
        }
        let k0 = wavenumber(layout.tones_hz[tone]);
        let model = incident_field(antenna, layout.tx[tx], &[layout.rx[rx]], k0)?[0].norm();
        sums[tx * q + rx] += mean / model;
        counts[tx * q + rx] += 1;
    }
    let mut gains = Vec::with_capacity(p * q);
    for tx in 0..p {
        for rx in 0..q {
            let c = counts[tx * q + rx];
            if c == 0 {
                return Err(Error::MissingGain { tx, rx });
            }
            gains.push(sums[tx * q + rx] / c as f64);
        }
    }
    Ok(GainTable { n_tx: p, n_rx: q, gains, agc: vec![1.0; q] })
}

/// Normalized total-field amplitudes indexed `[tone][tx][rx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeData {
    pub n_tone: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub amp: Vec<f64>,
}

impl AmplitudeData {
    pub fn get(&self, tone: usize, tx: usize, rx: usize) -> f64 {
        self.amp[(tone * self.n_tx + tx) * self.n_rx + rx]
    }

    /// Amplitudes for one (tone, tx) pair across receivers.
    pub fn link_row(&self, tone: usize, tx: usize) -> &[f64] {
        let start = (tone * self.n_tx + tx) * self.n_rx;
        &self.amp[start..start + self.n_rx]
    }
}

/// `a_pq = mean(|Y_w|) / g` per link; phase is never estimated.
pub fn normalize_total_field(meas: &MeasurementSet, gains: &GainTable, cfg: &PreprocessConfig) -> Result<AmplitudeData> {
    meas.validate()?;
    gains.validate()?;
    let n_tone = meas.links.iter().map(|l| l.tone + 1).max().unwrap_or(0);
    let (p, q) = (gains.n_tx, gains.n_rx);
    let mut amp = vec![f64::NAN; n_tone * p * q];
    let values: Vec<(usize, f64)> = meas
        .links
        .par_iter()
        .map(|l| {
            if l.tx >= p || l.rx >= q {
                return Err(Error::MissingGain { tx: l.tx, rx: l.rx });
            }
            let a = link_amplitude(l, cfg)? / gains.effective(l.tx, l.rx);
            Ok(((l.tone * p + l.tx) * q + l.rx, a))
        })
        .collect::<Result<_>>()?;
    for (i, a) in values {
        amp[i] = a;
    }
    if let Some(i) = amp.iter().position(|a| a.is_nan()) {
        let (tone, rest) = (i / (p * q), i % (p * q));
        return Err(Error::InvalidConfig(format!("no measurements for link ({}, {}, {tone})", rest / q, rest % q)));
    }
    Ok(AmplitudeData { n_tone, n_tx: p, n_rx: q, amp })
}

/// Incident field at the cell centers for every transmitter on one tone.
pub fn incident_at_cells(layout: &ArrayLayout, domain: &SensingDomain, antenna: &AntennaModel, tone: usize) -> Result<ComplexMatrix> {
    let f = *layout.tones_hz.get(tone).ok_or_else(|| Error::InvalidConfig(format!("tone index {tone} out of range")))?;
    let k0 = wavenumber(f);
    let centers = domain.cell_centers();
    let mut m = ComplexMatrix::zeros(layout.tx.len(), centers.len());
    for (p, &src) in layout.tx.iter().enumerate() {
        m.row_mut(p).copy_from_slice(&incident_field(antenna, src, &centers, k0)?);
    }
    Ok(m)
}
