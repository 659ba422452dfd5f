//! Voice-activity and silence detection.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioTrace;
use crate::error::{Error, Result};

/// Energy assigned to a frame of exact silence, in dB.
pub const ENERGY_FLOOR_DB: f64 = -120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// sample index in the parent trace
    pub start_offset: usize,
    /// seconds
    pub duration: f64,
}

impl Utterance {
    pub fn new(samples: Vec<f64>, sample_rate: u32, start_offset: usize) -> Self {
        let duration = samples.len() as f64 / sample_rate as f64;
        Utterance { samples, sample_rate, start_offset, duration }
    }

    pub fn end_offset(&self) -> usize {
        self.start_offset + self.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub spectral_flatness: Vec<f64>,
    pub frame_energy: Vec<f64>,
    pub frame_length: usize,
    pub hop: usize,
}

impl FrameFeatures {
    pub fn n_frames(&self) -> usize {
        self.frame_energy.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// silence threshold sits this many dB under the median frame energy
    pub silence_offset_db: f64,
    pub flatness_threshold: f64,
    pub min_gap_ms: f64,
    pub min_utterance_s: f64,
    pub guard_frames: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            frame_ms: 32.0,
            hop_ms: 16.0,
            silence_offset_db: 10.0,
            flatness_threshold: 0.35,
            min_gap_ms: 200.0,
            min_utterance_s: 0.3,
            guard_frames: 1,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Geometric over arithmetic mean of a magnitude spectrum. Magnitudes are
/// floored relative to the spectral peak so the measure is gain invariant.
pub fn flatness(mag: &[f64]) -> f64 {
    let peak = mag.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 || mag.is_empty() {
        return 1.0;
    }
    let floor = peak * 1e-12;
    let n = mag.len() as f64;
    let lg = mag.iter().map(|m| (m.max(floor) / peak).ln()).sum::<f64>() / n;
    let ar = mag.iter().map(|m| m / peak).sum::<f64>() / n;
    (lg.exp() / ar).clamp(0.0, 1.0)
}

pub fn frame_features(trace: &AudioTrace, frame_ms: f64, hop_ms: f64) -> Result<FrameFeatures> {
    if frame_ms < 10.0 || hop_ms <= 0.0 || hop_ms > frame_ms {
        return Err(Error::Config(format!("bad framing {frame_ms} ms / {hop_ms} ms")));
    }
    let rate = trace.sample_rate as f64;
    let frame = (frame_ms * rate / 1000.0).round() as usize;
    let hop = ((hop_ms * rate / 1000.0).round() as usize).max(1);
    let x = &trace.samples;
    if x.len() < frame {
        return Err(Error::TooShort(format!("{} samples < one frame of {frame}", x.len())));
    }
    let n_frames = 1 + (x.len() - frame) / hop;
    let win = hann(frame);
    let fft = FftPlanner::new().plan_fft_forward(frame);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut mag = vec![0.0; frame / 2];
    let mut energy = Vec::with_capacity(n_frames);
    let mut flat = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let fr = &x[f * hop..f * hop + frame];
        let ms = fr.iter().map(|v| v * v).sum::<f64>() / frame as f64;
        energy.push(if ms > 0.0 { (10.0 * ms.log10()).max(ENERGY_FLOOR_DB) } else { ENERGY_FLOOR_DB });
        for (b, (&v, &w)) in buf.iter_mut().zip(fr.iter().zip(win.iter())) {
            *b = Complex::new(v * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, m) in mag.iter_mut().enumerate() {
            *m = buf[k + 1].norm();
        }
        flat.push(flatness(&mag));
    }
    Ok(FrameFeatures { spectral_flatness: flat, frame_energy: energy, frame_length: frame, hop })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Voiced-frame decisions used by [`segment`].
pub fn voiced_frames(ff: &FrameFeatures, cfg: &SegmenterConfig) -> Vec<bool> {
    let thr = median(&ff.frame_energy) - cfg.silence_offset_db;
    ff.frame_energy.iter().zip(&ff.spectral_flatness).map(|(&e, &fl)| e > thr && fl < cfg.flatness_threshold).collect()
}

pub fn segment(trace: &AudioTrace, cfg: &SegmenterConfig) -> Result<Vec<Utterance>> {
    let ff = frame_features(trace, cfg.frame_ms, cfg.hop_ms)?;
    let voiced = voiced_frames(&ff, cfg);
    let (frame, hop) = (ff.frame_length, ff.hop);
    let rate = trace.sample_rate as f64;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < voiced.len() {
        if voiced[i] {
            let mut j = i;
            while j < voiced.len() && voiced[j] {
                j += 1;
            }
            runs.push((i, j));
            i = j;
        } else {
            i += 1;
        }
    }

    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        if let Some(last) = merged.last_mut() {
            let gap_ms = (r.0 - last.1) as f64 * hop as f64 * 1000.0 / rate;
            if gap_ms < cfg.min_gap_ms {
                last.1 = r.1;
                continue;
            }
        }
        merged.push(r);
    }

    let n = trace.samples.len();
    let mut out: Vec<Utterance> = Vec::new();
    for (a, b) in merged {
        let a = a.saturating_sub(cfg.guard_frames);
        let b = (b + cfg.guard_frames).min(voiced.len());
        let mut s = a * hop;
        let e = ((b - 1) * hop + frame).min(n);
        if let Some(prev) = out.last() {
            s = s.max(prev.end_offset());
        }
        if e <= s || ((e - s) as f64 / rate) < cfg.min_utterance_s {
            continue;
        }
        out.push(Utterance::new(trace.samples[s..e].to_vec(), trace.sample_rate, s));
    }
    Ok(out)
}
