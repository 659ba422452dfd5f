//! Room geometry, surface materials and image-source impulse responses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::sinc;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const FRAC_DELAY_TAPS: usize = 33;

const MATERIALS_TOML: &str = include_str!("../../data/materials.toml");

/// Energy reflection coefficients keyed by material name.
pub fn material_presets() -> BTreeMap<String, f64> {
    toml::from_str(MATERIALS_TOML).expect("bundled material table parses")
}

/// Amplitude reflection coefficient for a named material (sqrt of the
/// energy value).
pub fn material_amplitude(name: &str) -> Result<f64> {
    material_presets().get(name).map(|e| e.sqrt()).ok_or_else(|| Error::Config(format!("unknown material '{name}'")))
}

/// Surface order: x=0, x=L, y=0, y=W, floor (z=0), ceiling (z=H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    /// amplitude reflection coefficients
    pub surface_coeffs: [f64; 6],
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    pub max_order: usize,
    pub label: String,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!("room {}: non-positive dimension", self.label)));
        }
        if self.surface_coeffs.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return Err(Error::Config(format!("room {}: coefficient outside [0,1)", self.label)));
        }
        for p in [&self.source_pos, &self.mic_pos] {
            for a in 0..3 {
                if !(p[a] > 0.0 && p[a] < self.dims[a]) {
                    return Err(Error::Config(format!("room {}: position outside room", self.label)));
                }
            }
        }
        if dist(&self.source_pos, &self.mic_pos) < 1e-9 {
            return Err(Error::DegenerateGeometry("source and microphone coincide".into()));
        }
        Ok(())
    }

    /// Coefficients from six material names in surface order.
    pub fn coeffs_from_materials(names: &[String]) -> Result<[f64; 6]> {
        if names.len() != 6 {
            return Err(Error::Config(format!("expected 6 surface materials, got {}", names.len())));
        }
        let mut out = [0.0; 6];
        for (o, n) in out.iter_mut().zip(names) {
            *o = material_amplitude(n)?;
        }
        Ok(out)
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub rt60_est: f64,
}

/// Image coordinates along one axis: (1-2u)·p + 2lL, with |l-u| hits on the
/// near wall and |l| on the far wall.
fn axis_images(p: f64, len: f64, b0: f64, b1: f64, max_order: usize) -> Vec<(f64, f64, usize)> {
    let n = max_order as i64;
    let mut out = Vec::with_capacity(4 * max_order + 2);
    for u in 0..2i64 {
        for l in -n..=n {
            let h0 = (l - u).unsigned_abs() as usize;
            let h1 = l.unsigned_abs() as usize;
            if h0 + h1 > max_order {
                continue;
            }
            let pos = (1 - 2 * u) as f64 * p + 2.0 * l as f64 * len;
            out.push((pos, b0.powi(h0 as i32) * b1.powi(h1 as i32), h0 + h1));
        }
    }
    out
}

/// Image-source impulse response with windowed-sinc fractional delays and
/// 1/d spreading loss.
pub fn image_source_ir(room: &RoomSpec, rate: u32) -> Result<ImpulseResponse> {
    room.validate()?;
    let fs = rate as f64;
    let b = room.surface_coeffs;
    let ax = axis_images(room.source_pos[0], room.dims[0], b[0], b[1], room.max_order);
    let ay = axis_images(room.source_pos[1], room.dims[1], b[2], b[3], room.max_order);
    let az = axis_images(room.source_pos[2], room.dims[2], b[4], b[5], room.max_order);
    let m = room.mic_pos;
    let half = (FRAC_DELAY_TAPS / 2) as i64;

    let mut max_delay = 0.0f64;
    let mut images: Vec<(f64, f64)> = Vec::new();
    for &(x, gx, ox) in &ax {
        let dx2 = (x - m[0]).powi(2);
        for &(y, gy, oy) in &ay {
            if ox + oy > room.max_order {
                continue;
            }
            let dxy2 = dx2 + (y - m[1]).powi(2);
            let gxy = gx * gy;
            for &(z, gz, oz) in &az {
                if ox + oy + oz > room.max_order {
                    continue;
                }
                let g = gxy * gz;
                if g == 0.0 && ox + oy + oz > 0 {
                    continue;
                }
                let d = (dxy2 + (z - m[2]).powi(2)).sqrt();
                let delay = d / SPEED_OF_SOUND * fs;
                max_delay = max_delay.max(delay);
                images.push((delay, g / d));
            }
        }
    }
    let len = max_delay.ceil() as usize + half as usize + 2;
    let mut taps = vec![0.0; len];
    for (delay, amp) in images {
        let c = delay.round() as i64;
        for k in -half..=half {
            let n = c + k;
            if n < 0 || n as usize >= len {
                continue;
            }
            let t = n as f64 - delay;
            // Hann over the 33-tap support, centred on the true delay
            let r = t / (half as f64 + 1.0);
            if r.abs() >= 1.0 {
                continue;
            }
            let w = 0.5 + 0.5 * (std::f64::consts::PI * r).cos();
            taps[n as usize] += amp * sinc(t) * w;
        }
    }
    let rt60_est = rt60_from_ir(&taps, fs);
    Ok(ImpulseResponse { taps, sample_rate: rate, rt60_est })
}

/// Schroeder backward-integrated energy decay in dB, normalized to 0 dB.
pub fn schroeder_db(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc = vec![0.0; taps.len()];
    for i in (0..taps.len()).rev() {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return vec![f64::NEG_INFINITY; taps.len()];
    }
    edc.iter().map(|&e| 10.0 * (e / total).max(1e-300).log10()).collect()
}

/// Least-squares slope (dB per sample) of `y` over index range.
pub fn decay_slope(y: &[f64], lo: usize, hi: usize) -> Option<f64> {
    if hi <= lo + 1 {
        return None;
    }
    let n = (hi - lo) as f64;
    let mx = (lo + hi - 1) as f64 / 2.0;
    let my = y[lo..hi].iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y[lo..hi].iter().enumerate() {
        let dx = (lo + i) as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    Some(sxy / sxx)
}

/// RT60 from a line fit to the decay between -5 and -25 dB (T20), falling
/// back to -5..-15 dB when the decay is shallow.
pub fn rt60_from_ir(taps: &[f64], fs: f64) -> f64 {
    let edc = schroeder_db(taps);
    for end in [-25.0, -15.0] {
        let lo = edc.iter().position(|&v| v <= -5.0);
        let hi = edc.iter().position(|&v| v <= end);
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if let Some(s) = decay_slope(&edc, lo, hi) {
                if s < 0.0 {
                    return -60.0 / s / fs;
                }
            }
        }
    }
    0.0
}
