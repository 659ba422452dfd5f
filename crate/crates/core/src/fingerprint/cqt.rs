//! Constant-Q band powers computed in the frequency domain.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqtConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub bins_per_octave: usize,
}

impl Default for CqtConfig {
    fn default() -> Self {
        CqtConfig { f_min: 50.0, f_max: 2000.0, bins_per_octave: 24 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqtSpectrum {
    pub bins: Vec<f64>,
    pub center_freqs: Vec<f64>,
    pub bins_per_octave: usize,
    pub f_min: f64,
    pub f_max: f64,
}

/// Squared kernel magnitude on a contiguous run of FFT bins.
#[derive(Debug)]
struct SparseRow {
    start: usize,
    vals: Vec<f64>,
}

/// A constant-Q analyser bound to one sample rate. Kernel spectra are cached
/// per FFT size, so one instance should be reused across calls.
#[derive(Debug)]
pub struct Cqt {
    cfg: CqtConfig,
    rate: f64,
    freqs: Vec<f64>,
    lengths: Vec<usize>,
    q: f64,
    cache: Mutex<HashMap<usize, Arc<Vec<SparseRow>>>>,
}

pub fn bin_count(f_min: f64, f_max: f64, bpo: usize) -> usize {
    (bpo as f64 * (f_max / f_min).log2()).ceil() as usize
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

impl Cqt {
    pub fn new(cfg: &CqtConfig, sample_rate: u32) -> Result<Self> {
        let rate = sample_rate as f64;
        if cfg.f_min < 20.0 {
            return Err(Error::Config(format!("f_min {} < 20 Hz", cfg.f_min)));
        }
        if cfg.f_min >= cfg.f_max {
            return Err(Error::Config(format!("f_min {} >= f_max {}", cfg.f_min, cfg.f_max)));
        }
        if cfg.f_max > rate / 2.0 {
            return Err(Error::Config(format!("f_max {} above Nyquist", cfg.f_max)));
        }
        if cfg.bins_per_octave == 0 {
            return Err(Error::Config("bins_per_octave must be positive".into()));
        }
        let b = cfg.bins_per_octave as f64;
        let n = bin_count(cfg.f_min, cfg.f_max, cfg.bins_per_octave);
        let freqs: Vec<f64> = (0..n).map(|k| cfg.f_min * (k as f64 / b).exp2()).collect();
        let q = 1.0 / ((1.0 / b).exp2() - 1.0);
        let lengths = freqs.iter().map(|f| (q * rate / f).ceil() as usize).collect();
        Ok(Cqt { cfg: cfg.clone(), rate, freqs, lengths, q, cache: Mutex::new(HashMap::new()) })
    }

    pub fn n_bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Nominal quality factor 1/(2^(1/b) - 1).
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Realized quality factor per bin: f_k over the kernel bandwidth rate/N_k.
    pub fn realized_q(&self) -> Vec<f64> {
        self.freqs.iter().zip(&self.lengths).map(|(f, &n)| f * n as f64 / self.rate).collect()
    }

    pub fn max_kernel_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(1)
    }

    fn kernels(&self, nfft: usize) -> Arc<Vec<SparseRow>> {
        if let Some(k) = self.cache.lock().unwrap().get(&nfft) {
            return k.clone();
        }
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        let half = nfft / 2 + 1;
        let rows: Vec<SparseRow> = self
            .freqs
            .iter()
            .zip(&self.lengths)
            .map(|(&f, &len)| {
                let mut buf = vec![Complex::new(0.0, 0.0); nfft];
                let w: Vec<f64> =
                    (0..len).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()).collect();
                let ws: f64 = w.iter().sum();
                for (i, b) in buf.iter_mut().take(len).enumerate() {
                    let ph = 2.0 * std::f64::consts::PI * f * i as f64 / self.rate;
                    *b = Complex::from_polar(w[i] / ws, ph);
                }
                fft.process(&mut buf);
                // fold the negative-frequency response onto the half spectrum;
                // exact for real input since |X(-f)| = |X(f)|
                let mut mag: Vec<f64> = buf[..half].iter().map(|c| c.norm_sqr()).collect();
                for (f, m) in mag.iter_mut().enumerate().take(half - 1).skip(1) {
                    *m += buf[nfft - f].norm_sqr();
                }
                let peak = mag.iter().cloned().fold(0.0, f64::max);
                let thr = peak * 1e-14;
                let lo = mag.iter().position(|&m| m > thr).unwrap_or(0);
                let hi = mag.iter().rposition(|&m| m > thr).unwrap_or(0);
                SparseRow { start: lo, vals: mag[lo..=hi].to_vec() }
            })
            .collect();
        let rows = Arc::new(rows);
        self.cache.lock().unwrap().insert(nfft, rows.clone());
        rows
    }

    /// Kernel-response energy per bin, summed over time.
    pub fn power(&self, x: &[f64]) -> CqtSpectrum {
        let nfft = next_pow2(x.len() + self.max_kernel_len()).max(1 << 12);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(nfft, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
        let spec: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let kern = self.kernels(nfft);
        let scale = 1.0 / nfft as f64;
        let bins = kern
            .iter()
            .map(|row| row.vals.iter().zip(&spec[row.start..]).map(|(k, s)| k * s).sum::<f64>() * scale)
            .collect();
        CqtSpectrum {
            bins,
            center_freqs: self.freqs.clone(),
            bins_per_octave: self.cfg.bins_per_octave,
            f_min: self.cfg.f_min,
            f_max: self.cfg.f_max,
        }
    }
}

/// One-shot convenience wrapper; prefer a shared [`Cqt`] in loops.
pub fn cqt(signal: &[f64], sample_rate: u32, cfg: &CqtConfig) -> Result<CqtSpectrum> {
    Ok(Cqt::new(cfg, sample_rate)?.power(signal))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()).collect()
    }

    fn nearest(freqs: &[f64], f: f64) -> usize {
        let mut best = 0;
        for (k, &c) in freqs.iter().enumerate() {
            if (c.ln() - f.ln()).abs() < (freqs[best].ln() - f.ln()).abs() {
                best = k;
            }
        }
        best
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    #[test]
    fn bin_count_formula() {
        let c = Cqt::new(&CqtConfig::default(), 16000).unwrap();
        assert_eq!(c.n_bins(), 128);
        assert_eq!(bin_count(50.0, 2000.0, 24), 128);
    }

    #[test]
    fn geometric_centers_and_constant_q() {
        let c = Cqt::new(&CqtConfig::default(), 16000).unwrap();
        let r = (1.0f64 / 24.0).exp2();
        for w in c.center_freqs().windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        let q = c.realized_q();
        let (lo, hi) = q.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo - 1.0 < 0.01);
    }

    #[test]
    fn tone_lands_in_nearest_bin() {
        let c = Cqt::new(&CqtConfig::default(), 16000).unwrap();
        let s = c.power(&tone(440.0, 16000));
        assert_eq!(argmax(&s.bins), nearest(c.center_freqs(), 440.0));
    }

    #[test]
    fn zero_signal_zero_bins() {
        let s = cqt(&vec![0.0; 4000], 16000, &CqtConfig::default()).unwrap();
        assert!(s.bins.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_errors() {
        let bad = CqtConfig { f_min: 2000.0, f_max: 50.0, bins_per_octave: 24 };
        assert!(matches!(Cqt::new(&bad, 16000), Err(Error::Config(_))));
        let bad = CqtConfig { f_min: 10.0, ..Default::default() };
        assert!(Cqt::new(&bad, 16000).is_err());
        let bad = CqtConfig { f_max: 5000.0, ..Default::default() };
        assert!(Cqt::new(&bad, 8000).is_err());
    }

    #[test]
    fn power_matches_time_domain_convolution() {
        // oracle: convolve with the kernel directly and sum |y|^2
        let cfg = CqtConfig { f_min: 400.0, f_max: 800.0, bins_per_octave: 4 };
        let c = Cqt::new(&cfg, 16000).unwrap();
        let x: Vec<f64> = (0..1500).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let s = c.power(&x);
        for (k, &f) in c.center_freqs().iter().enumerate() {
            let len = c.lengths[k];
            let w: Vec<f64> =
                (0..len).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()).collect();
            let ws: f64 = w.iter().sum();
            let kern: Vec<Complex<f64>> = (0..len)
                .map(|i| Complex::from_polar(w[i] / ws, 2.0 * std::f64::consts::PI * f * i as f64 / 16000.0))
                .collect();
            let mut e = 0.0;
            for n in 0..x.len() + len - 1 {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, kv) in kern.iter().enumerate() {
                    if n >= i && n - i < x.len() {
                        acc += kv * x[n - i];
                    }
                }
                e += acc.norm_sqr();
            }
            assert!((s.bins[k] - e).abs() < 1e-9 * e.max(1e-30), "bin {k}: {} vs {e}", s.bins[k]);
        }
    }
}
