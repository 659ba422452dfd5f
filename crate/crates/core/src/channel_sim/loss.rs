//! Frame-erasure channel with loss concealment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concealment {
    RepeatSpectrum,
    Silence,
}

impl Concealment {
    pub fn name(self) -> &'static str {
        match self {
            Concealment::RepeatSpectrum => "repeat-spectrum",
            Concealment::Silence => "silence",
        }
    }
}

impl std::str::FromStr for Concealment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repeat-spectrum" => Ok(Concealment::RepeatSpectrum),
            "silence" => Ok(Concealment::Silence),
            _ => Err(Error::Config(format!("unknown concealment '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub loss_rate: f64,
    pub frame_ms: f64,
    pub concealment: Concealment,
    pub seed: u64,
}

impl LossProfile {
    pub fn clean() -> Self {
        LossProfile { loss_rate: 0.0, frame_ms: 20.0, concealment: Concealment::RepeatSpectrum, seed: 0 }
    }
}

/// Per-frame Bernoulli erasure pattern.
pub fn drop_pattern(n_frames: usize, rate: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_frames).map(|_| rng.gen::<f64>() < rate).collect()
}

/// Next frame synthesized from the previous frame's magnitude spectrum with
/// each bin's phase advanced by one frame length. At bin-centred frequencies
/// the advance is a whole number of cycles, so this is a periodic extension.
fn repeat_spectrum(prev: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = prev.len();
    let mut buf: Vec<Complex<f64>> = prev.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let adv = 2.0 * std::f64::consts::PI * k as f64 * n as f64 / n as f64;
        *c = Complex::from_polar(c.norm(), c.arg() + adv);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

pub fn lossy_channel(trace: &AudioTrace, profile: &LossProfile) -> Result<AudioTrace> {
    if profile.frame_ms < 2.5 {
        return Err(Error::Config(format!("frame length {} ms < 2.5 ms", profile.frame_ms)));
    }
    if !(0.0..=1.0).contains(&profile.loss_rate) {
        return Err(Error::Config(format!("loss rate {} outside [0,1]", profile.loss_rate)));
    }
    if profile.loss_rate == 0.0 {
        return Ok(trace.clone());
    }
    let frame = ((profile.frame_ms * trace.sample_rate as f64 / 1000.0).round() as usize).max(1);
    let x = &trace.samples;
    let n_frames = x.len().div_ceil(frame);
    let dropped = drop_pattern(n_frames, profile.loss_rate, profile.seed);
    let mut out = x.clone();
    let mut planner = FftPlanner::new();
    for (f, &lost) in dropped.iter().enumerate() {
        if !lost {
            continue;
        }
        let a = f * frame;
        let b = (a + frame).min(x.len());
        match profile.concealment {
            Concealment::Silence => out[a..b].fill(0.0),
            Concealment::RepeatSpectrum => {
                if a < frame {
                    out[a..b].fill(0.0);
                } else {
                    let prev = out[a - frame..a].to_vec();
                    let syn = repeat_spectrum(&prev, &mut planner);
                    out[a..b].copy_from_slice(&syn[..b - a]);
                }
            }
        }
    }
    let mut tr = trace.clone();
    tr.samples = out;
    Ok(tr)
}
