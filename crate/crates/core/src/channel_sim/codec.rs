//! Codec bandwidth emulation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioTrace;
use crate::dsp::{filter_zero_phase, fir_bandpass};
use crate::error::Error;

pub const CODEC_TAPS: usize = 1025;
/// Kaiser beta for roughly 60 dB stopband attenuation.
pub const CODEC_BETA: f64 = 5.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    Narrowband,
    Mediumband,
    Wideband,
    Superwideband,
}

impl CodecMode {
    pub const ALL: [CodecMode; 4] =
        [CodecMode::Narrowband, CodecMode::Mediumband, CodecMode::Wideband, CodecMode::Superwideband];

    /// Pass band in Hz; the upper edge is capped at Nyquist by the caller.
    pub fn band(self) -> (f64, f64) {
        match self {
            CodecMode::Narrowband => (300.0, 3400.0),
            CodecMode::Mediumband => (200.0, 6000.0),
            CodecMode::Wideband => (100.0, 8000.0),
            CodecMode::Superwideband => (50.0, f64::INFINITY),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecMode::Narrowband => "narrowband",
            CodecMode::Mediumband => "mediumband",
            CodecMode::Wideband => "wideband",
            CodecMode::Superwideband => "superwideband",
        }
    }
}

impl fmt::Display for CodecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodecMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        CodecMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown codec mode '{s}'")))
    }
}

pub fn codec_emulate(trace: &AudioTrace, mode: CodecMode) -> AudioTrace {
    let fs = trace.sample_rate as f64;
    let (lo, hi) = mode.band();
    let hi = hi.min(fs / 2.0);
    let h = fir_bandpass(lo, hi, fs, CODEC_TAPS, CODEC_BETA);
    let mut out = trace.clone();
    out.samples = filter_zero_phase(&trace.samples, &h);
    out
}
