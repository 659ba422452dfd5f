//! Synthetic anechoic speech-like traces for the dry bank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioTrace;

/// First three formants (Hz) of a handful of vowels.
const VOWELS: [[f64; 3]; 7] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [640.0, 1190.0, 2390.0],
    [490.0, 1350.0, 1690.0],
    [660.0, 1720.0, 2410.0],
];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechConfig {
    pub n_utterances: usize,
    pub utterance_s: (f64, f64),
    pub gap_s: (f64, f64),
    pub f0_hz: (f64, f64),
    /// aspiration noise relative to the harmonic source
    pub breath: f64,
    pub syllable_s: f64,
    pub attack_ms: f64,
    /// release of inner syllables
    pub release_ms: f64,
    /// release of the final syllable of each utterance
    pub offset_ms: f64,
    pub peak: f64,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        SpeechConfig {
            n_utterances: 4,
            utterance_s: (0.6, 1.2),
            gap_s: (0.8, 1.1),
            f0_hz: (90.0, 240.0),
            breath: 0.5,
            syllable_s: 0.22,
            attack_ms: 20.0,
            release_ms: 50.0,
            offset_ms: 50.0,
            peak: 0.5,
        }
    }
}

/// Two-pole resonator with unity-ish peak gain.
fn resonator(x: &[f64], f: f64, bw: f64, fs: f64) -> Vec<f64> {
    let r = (-std::f64::consts::PI * bw / fs).exp();
    let a1 = -2.0 * r * (2.0 * std::f64::consts::PI * f / fs).cos();
    let a2 = r * r;
    let mut y = vec![0.0; x.len()];
    let (mut y1, mut y2) = (0.0, 0.0);
    for (o, &v) in y.iter_mut().zip(x) {
        let cur = (1.0 - r) * v - a1 * y1 - a2 * y2;
        *o = cur;
        y2 = y1;
        y1 = cur;
    }
    y
}

fn ramp_envelope(m: usize, att: usize, rel: usize) -> Vec<f64> {
    let mut env = vec![1.0; m];
    let att = att.min(m / 4);
    let rel = rel.min(m / 3);
    for (i, e) in env.iter_mut().take(att).enumerate() {
        *e = i as f64 / att as f64;
    }
    for i in 0..rel {
        env[m - rel + i] = 1.0 - (i + 1) as f64 / rel as f64;
    }
    env
}

fn utterance(rng: &mut ChaCha8Rng, dur: f64, f0: f64, cfg: &SpeechConfig, fs: f64) -> Vec<f64> {
    let n = (dur * fs) as usize;
    let nsyl = ((dur / cfg.syllable_s) as usize).max(1);
    let vib_rate = rng.gen_range(1.0..3.0);
    let vib_phase = rng.gen_range(0.0..6.0);
    let mut phase = 0.0;
    let n_harm = (4000.0 / f0) as usize;
    let mut src = vec![0.0; n];
    for (i, s) in src.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f = f0 * (1.0 + 0.08 * (2.0 * std::f64::consts::PI * vib_rate * t + vib_phase).sin() - 0.1 * t / dur);
        phase += 2.0 * std::f64::consts::PI * f / fs;
        *s = (1..n_harm).map(|h| (h as f64 * phase).sin() / h as f64).sum();
    }
    for s in src.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *s += cfg.breath * z;
    }
    let mut out = vec![0.0; n];
    for k in 0..nsyl {
        let a = k * n / nsyl;
        let b = (k + 1) * n / nsyl;
        let v = VOWELS[rng.gen_range(0..VOWELS.len())];
        let mut y = vec![0.0; b - a];
        for (&fm, &g) in v.iter().zip(&FORMANT_GAINS) {
            for (o, r) in y.iter_mut().zip(resonator(&src[a..b], fm, 80.0 + 0.05 * fm, fs)) {
                *o += g * r;
            }
        }
        let rel_ms = if k + 1 == nsyl { cfg.offset_ms } else { cfg.release_ms };
        let env = ramp_envelope(b - a, (cfg.attack_ms * fs / 1000.0) as usize, (rel_ms * fs / 1000.0) as usize);
        let level = rng.gen_range(0.6..1.0);
        for (i, (yy, e)) in y.iter().zip(&env).enumerate() {
            out[a + i] = yy * e * level;
        }
    }
    out
}

/// Deterministic speech-like trace: utterances of voiced syllables separated
/// by digital silence, peak-normalized to `cfg.peak`.
pub fn synth_speech(seed: u64, cfg: &SpeechConfig, rate: u32) -> AudioTrace {
    let fs = rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.gen_range(cfg.f0_hz.0..cfg.f0_hz.1);
    let mut x = vec![0.0; (0.3 * fs) as usize];
    for _ in 0..cfg.n_utterances {
        let dur = rng.gen_range(cfg.utterance_s.0..cfg.utterance_s.1);
        x.extend(utterance(&mut rng, dur, f0, cfg, fs));
        let gap = rng.gen_range(cfg.gap_s.0..cfg.gap_s.1);
        x.extend(std::iter::repeat_n(0.0, (gap * fs) as usize));
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in x.iter_mut() {
            *v *= cfg.peak / peak;
        }
    }
    AudioTrace::new(x, rate).expect("synthesized trace is valid")
}
