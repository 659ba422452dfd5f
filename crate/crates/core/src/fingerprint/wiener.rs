//! Two-pass Wiener noise suppression with harmonic regeneration.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WienerConfig {
    pub frame: usize,
    /// decision-directed smoothing of the a-priori SNR
    pub alpha: f64,
    /// mix between first-pass and regenerated spectra in the second pass
    pub rho: f64,
    pub gain_floor: f64,
    /// fraction of lowest-energy frames used as the noise estimate
    pub noise_fraction: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        WienerConfig { frame: 512, alpha: 0.98, rho: 0.5, gain_floor: 0.1, noise_fraction: 0.1 }
    }
}

fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).sqrt()).collect()
}

struct Stft {
    frame: usize,
    hop: usize,
    win: Vec<f64>,
    pad: usize,
}

impl Stft {
    fn new(frame: usize) -> Self {
        Stft { frame, hop: frame / 2, win: sqrt_hann(frame), pad: frame }
    }

    fn analyze(&self, x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex<f64>>> {
        let fft = planner.plan_fft_forward(self.frame);
        let mut padded = vec![0.0; self.pad];
        padded.extend_from_slice(x);
        padded.resize(padded.len() + 2 * self.pad, 0.0);
        let n_frames = (padded.len() - self.frame) / self.hop + 1;
        (0..n_frames)
            .map(|f| {
                let mut buf: Vec<Complex<f64>> = padded[f * self.hop..f * self.hop + self.frame]
                    .iter()
                    .zip(&self.win)
                    .map(|(&v, &w)| Complex::new(v * w, 0.0))
                    .collect();
                fft.process(&mut buf);
                buf
            })
            .collect()
    }

    fn synthesize(&self, frames: &[Vec<Complex<f64>>], len: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
        let ifft = planner.plan_fft_inverse(self.frame);
        let mut out = vec![0.0; (frames.len() - 1) * self.hop + self.frame];
        let scale = 1.0 / self.frame as f64;
        for (f, spec) in frames.iter().enumerate() {
            let mut buf = spec.clone();
            ifft.process(&mut buf);
            for (i, (c, &w)) in buf.iter().zip(&self.win).enumerate() {
                out[f * self.hop + i] += c.re * w * scale;
            }
        }
        out[self.pad..self.pad + len].to_vec()
    }
}

fn psd(frames: &[Vec<Complex<f64>>], idx: &[usize], bins: usize) -> Vec<f64> {
    let mut acc = vec![0.0; bins];
    for &f in idx {
        for (a, c) in acc.iter_mut().zip(&frames[f]) {
            *a += c.norm_sqr();
        }
    }
    let n = idx.len().max(1) as f64;
    acc.iter().map(|v| v / n).collect()
}

fn frame_energy(f: &[Complex<f64>]) -> f64 {
    f.iter().map(|c| c.norm_sqr()).sum()
}

/// Noise PSD from the lowest-energy fraction of frames that carry signal.
fn decile_noise(frames: &[Vec<Complex<f64>>], frac: f64, bins: usize) -> Vec<f64> {
    let mut order: Vec<(f64, usize)> = frames.iter().enumerate().map(|(i, f)| (frame_energy(f), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = ((frames.len() as f64 * frac).ceil() as usize).clamp(1, frames.len());
    let idx: Vec<usize> = order.iter().take(k).map(|p| p.1).collect();
    psd(frames, &idx, bins)
}

fn wiener_gain(xi: f64, floor: f64) -> f64 {
    (xi / (1.0 + xi)).max(floor)
}

/// Suppress stationary noise. The noise PSD comes from `noise_profile` when
/// given, otherwise from the quietest frames of `signal`.
pub fn suppress_noise(signal: &AudioTrace, noise_profile: Option<&AudioTrace>, cfg: &WienerConfig) -> AudioTrace {
    let x = &signal.samples;
    let stft = Stft::new(cfg.frame);
    let mut planner = FftPlanner::new();
    let frames = stft.analyze(x, &mut planner);
    let bins = cfg.frame;
    let noise = match noise_profile {
        Some(p) => {
            let nf = stft.analyze(&p.samples, &mut planner);
            // padding frames at the edges would bias the profile low
            let idx: Vec<usize> = (0..nf.len()).filter(|&i| frame_energy(&nf[i]) > 0.0).collect();
            if idx.is_empty() {
                vec![0.0; bins]
            } else {
                psd(&nf, &idx, bins)
            }
        }
        None => {
            let idx: Vec<usize> = (0..frames.len()).filter(|&i| frame_energy(&frames[i]) > 0.0).collect();
            let live: Vec<Vec<Complex<f64>>> = idx.iter().map(|&i| frames[i].clone()).collect();
            if live.is_empty() {
                vec![0.0; bins]
            } else {
                decile_noise(&live, cfg.noise_fraction, bins)
            }
        }
    };
    if noise.iter().all(|&v| v <= 0.0) {
        let mut out = signal.clone();
        out.samples = stft.synthesize(&frames, x.len(), &mut planner);
        return out;
    }

    // pass 1: decision-directed a-priori SNR
    let mut first: Vec<Vec<Complex<f64>>> = Vec::with_capacity(frames.len());
    let mut prev_clean = vec![0.0; bins];
    for fr in &frames {
        let mut g = vec![1.0; bins];
        for k in 0..bins {
            if noise[k] <= 0.0 {
                continue;
            }
            let post = fr[k].norm_sqr() / noise[k];
            let xi = cfg.alpha * prev_clean[k] / noise[k] + (1.0 - cfg.alpha) * (post - 1.0).max(0.0);
            g[k] = wiener_gain(xi, cfg.gain_floor);
        }
        let s: Vec<Complex<f64>> = fr.iter().zip(&g).map(|(c, gk)| c * gk).collect();
        prev_clean = s.iter().map(|c| c.norm_sqr()).collect();
        first.push(s);
    }

    // harmonic regeneration: rectify the first-pass estimate in time
    let ifft = planner.plan_fft_inverse(cfg.frame);
    let fft = planner.plan_fft_forward(cfg.frame);
    let mut out_frames = Vec::with_capacity(frames.len());
    for (fr, s1) in frames.iter().zip(&first) {
        let mut t = s1.clone();
        ifft.process(&mut t);
        let mut h: Vec<Complex<f64>> =
            t.iter().map(|c| Complex::new((c.re / cfg.frame as f64).max(0.0), 0.0)).collect();
        fft.process(&mut h);
        let mut y = fr.clone();
        for k in 0..bins {
            if noise[k] <= 0.0 {
                continue;
            }
            let xi = (cfg.rho * s1[k].norm_sqr() + (1.0 - cfg.rho) * h[k].norm_sqr()) / noise[k];
            y[k] *= wiener_gain(xi, cfg.gain_floor);
        }
        out_frames.push(y);
    }
    let mut out = signal.clone();
    out.samples = stft.synthesize(&out_frames, x.len(), &mut planner);
    out
}
