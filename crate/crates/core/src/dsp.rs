//! Small DSP helpers shared across modules.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser window evaluated at normalized positions r in [-1, 1].
#[derive(Debug, Clone, Copy)]
pub struct Kaiser {
    beta: f64,
    norm: f64,
}

impl Kaiser {
    pub fn new(beta: f64) -> Self {
        Kaiser { beta, norm: bessel_i0(beta) }
    }

    pub fn at(&self, r: f64) -> f64 {
        if r.abs() > 1.0 {
            return 0.0;
        }
        bessel_i0(self.beta * (1.0 - r * r).sqrt()) / self.norm
    }
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Full linear convolution via FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; n];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let nfft = n.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(nfft, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(nfft, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let s = 1.0 / nfft as f64;
    fa[..n].iter().map(|c| c.re * s).collect()
}

/// Linear-phase Kaiser-windowed FIR band-pass. `lo = 0` gives a low-pass,
/// `hi >= rate/2` a high-pass. `taps` must be odd.
pub fn fir_bandpass(lo: f64, hi: f64, rate: f64, taps: usize, beta: f64) -> Vec<f64> {
    let m = (taps - 1) as f64 / 2.0;
    let nyq = rate / 2.0;
    let (flo, fhi) = (lo / rate, hi.min(nyq) / rate);
    let win = Kaiser::new(beta);
    (0..taps)
        .map(|i| {
            let t = i as f64 - m;
            let mut h = if fhi * rate >= nyq {
                if t == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                2.0 * fhi * sinc(2.0 * fhi * t)
            };
            if flo > 0.0 {
                h -= 2.0 * flo * sinc(2.0 * flo * t);
            }
            h * win.at(t / m)
        })
        .collect()
}

/// Apply a linear-phase FIR and compensate its group delay.
pub fn filter_zero_phase(x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = (h.len() - 1) / 2;
    let y = fft_convolve(x, h);
    y[d..d + x.len()].to_vec()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn i0_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fft_convolve_matches_direct(
            a in prop::collection::vec(-1.0f64..1.0, 1..120),
            b in prop::collection::vec(-1.0f64..1.0, 1..120),
        ) {
            let x = fft_convolve(&a, &b);
            let y = direct(&a, &b);
            prop_assert_eq!(x.len(), y.len());
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
