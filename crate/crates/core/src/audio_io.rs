//! WAV input/output, resampling and the chunk-amplitude matrix.

use std::path::Path;

use ndarray::Array2;

use crate::dsp::{sinc, Kaiser};
use crate::error::{Error, Result};
use crate::segmentation::Utterance;

pub const SUPPORTED_RATES: [u32; 4] = [8000, 16000, 44100, 48000];
pub const CANONICAL_RATE: u32 = 16000;

/// Amplitude floor before the dB conversion (-120 dBFS).
pub const AMP_FLOOR: f64 = 1e-6;
/// Shift applied after the dB conversion so every entry is non-negative.
pub const DB_SHIFT: f64 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrace {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
}

impl AudioTrace {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(Error::Config(format!("unsupported sample rate {sample_rate}")));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("trace has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        Ok(AudioTrace { samples, sample_rate, label: None })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Scale to unit peak. Silent traces are returned unchanged.
    pub fn peak_normalized(&self) -> AudioTrace {
        let p = self.peak();
        let mut out = self.clone();
        if p > 0.0 {
            for s in &mut out.samples {
                *s /= p;
            }
        }
        out
    }
}

/// Read a 16-bit PCM WAV, downmixing stereo by averaging.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioTrace> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedCodec(format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample)));
    }
    let ch = spec.channels as usize;
    if ch == 0 || ch > 2 {
        return Err(Error::UnsupportedCodec(format!("{ch} channels")));
    }
    let raw: Vec<i16> = reader.samples::<i16>().collect::<std::result::Result<_, _>>()?;
    let samples: Vec<f64> =
        raw.chunks(ch).map(|fr| fr.iter().map(|&v| v as f64 / 32768.0).sum::<f64>() / ch as f64).collect();
    AudioTrace::new(samples, spec.sample_rate)
}

/// Write as mono 16-bit PCM. Samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, trace: &AudioTrace) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: trace.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &trace.samples {
        w.write_sample(quantize16(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn quantize16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

const RESAMPLE_ZEROS: f64 = 32.0;
const RESAMPLE_BETA: f64 = 8.0;
const RESAMPLE_CUTOFF: f64 = 0.92;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
pub fn resample(trace: &AudioTrace, target_rate: u32) -> Result<AudioTrace> {
    if !SUPPORTED_RATES.contains(&target_rate) {
        return Err(Error::Config(format!("unsupported target rate {target_rate}")));
    }
    let in_rate = trace.sample_rate as u64;
    let out_rate = target_rate as u64;
    if in_rate == out_rate {
        return Ok(trace.clone());
    }
    let n_in = trace.samples.len();
    let n_out = ((n_in as f64) * out_rate as f64 / in_rate as f64).round() as usize;
    // cutoff as a fraction of the input rate
    let fc = RESAMPLE_CUTOFF * 0.5 * in_rate.min(out_rate) as f64 / in_rate as f64;
    let half = RESAMPLE_ZEROS / (2.0 * fc);
    let win = Kaiser::new(RESAMPLE_BETA);
    let x = &trace.samples;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let num = n * in_rate;
        let t = (num / out_rate) as f64 + (num % out_rate) as f64 / out_rate as f64;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as usize).min(n_in.saturating_sub(1));
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let tau = k as f64 - t;
            acc += xk * 2.0 * fc * sinc(2.0 * fc * tau) * win.at(tau / half);
        }
        out.push(acc);
    }
    let mut tr = AudioTrace::new(out, target_rate)?;
    tr.label = trace.label.clone();
    Ok(tr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMatrix {
    /// rows = utterances, cols = time intervals
    pub data: Array2<f64>,
}

impl TraceMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }
    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Sample boundaries of `t` intervals over `len` samples. Interval j spans
/// `edges[j]..max(edges[j+1], edges[j]+1)`, clamped to `len`.
pub fn interval_edges(len: usize, t: usize) -> Vec<usize> {
    (0..=t).map(|j| j * len / t).collect()
}

pub fn interval_range(edges: &[usize], j: usize, len: usize) -> std::ops::Range<usize> {
    let a = edges[j].min(len.saturating_sub(1));
    let b = edges[j + 1].max(a + 1).min(len);
    a..b
}

/// Per-interval mean |amplitude| in shifted dB.
pub fn amplitude_row(samples: &[f64], t: usize) -> Vec<f64> {
    let edges = interval_edges(samples.len(), t);
    (0..t)
        .map(|j| {
            let r = interval_range(&edges, j, samples.len());
            let n = r.len() as f64;
            let m = samples[r].iter().map(|s| s.abs()).sum::<f64>() / n;
            20.0 * m.max(AMP_FLOOR).log10() + DB_SHIFT
        })
        .collect()
}

pub fn build_trace_matrix(utterances: &[Utterance], t: usize) -> Result<TraceMatrix> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("no utterances".into()));
    }
    if t < 8 {
        return Err(Error::Config(format!("interval count {t} < 8")));
    }
    let mut data = Array2::zeros((utterances.len(), t));
    for (i, u) in utterances.iter().enumerate() {
        if u.samples.is_empty() {
            return Err(Error::EmptyInput(format!("utterance {i} is empty")));
        }
        for (j, v) in amplitude_row(&u.samples, t).into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(TraceMatrix { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(samples: Vec<f64>) -> Utterance {
        Utterance::new(samples, 16000, 0)
    }

    fn tone(f: f64, rate: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64).sin()).collect()
    }

    fn tone_power(x: &[f64], f: f64, rate: u32) -> f64 {
        // single-bin DFT over the interior to avoid edge transients
        let a = x.len() / 8;
        let b = x.len() - a;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x[a..b].iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * f * (i + a) as f64 / rate as f64;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        (re * re + im * im) / ((b - a) as f64).powi(2)
    }

    #[test]
    fn wav_roundtrip_and_zero_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let s: Vec<f64> = (0..16000).map(|i| ((i % 200) as f64 - 100.0) / 32768.0).collect();
        write_wav(&p, &AudioTrace::new(s.clone(), 16000).unwrap()).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate, 16000);
        assert_eq!(r.samples, s);

        write_wav(&p, &AudioTrace::new(vec![0.0; 100], 16000).unwrap()).unwrap();
        assert!(read_wav(&p).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stereo_antiphase_downmixes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..500i16 {
            w.write_sample(i * 3).unwrap();
            w.write_sample(-i * 3).unwrap();
        }
        w.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 500);
        assert!(r.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unsupported_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedCodec(_))));

        let q = dir.path().join("bad.wav");
        std::fs::write(&q, b"RIFFxxxxWAVEjunk").unwrap();
        assert!(matches!(read_wav(&q), Err(Error::Format(_)) | Err(Error::Io(_))));
    }

    #[test]
    fn resample_identity_and_length() {
        let t = AudioTrace::new(tone(440.0, 16000, 16000), 16000).unwrap();
        assert_eq!(resample(&t, 16000).unwrap(), t);
        assert_eq!(resample(&t, 8000).unwrap().len(), 8000);
        assert_eq!(resample(&t, 44100).unwrap().len(), 44100);
    }

    #[test]
    fn resample_preserves_tone_power() {
        for (from, to) in [(16000, 8000), (8000, 16000), (44100, 16000), (48000, 16000)] {
            let n = from as usize;
            let t = AudioTrace::new(tone(440.0, from, n), from).unwrap();
            let r = resample(&t, to).unwrap();
            let p0 = tone_power(&t.samples, 440.0, from);
            let p1 = tone_power(&r.samples, 440.0, to);
            let db = 10.0 * (p1 / p0).log10();
            assert!(db.abs() < 0.5, "{from}->{to}: {db} dB");
        }
    }

    #[test]
    fn resample_rejects_alias_band() {
        // 6 kHz cannot be represented at 8 kHz; it must be suppressed, not folded to 2 kHz
        let t = AudioTrace::new(tone(6000.0, 16000, 16000), 16000).unwrap();
        let r = resample(&t, 8000).unwrap();
        let p0 = tone_power(&t.samples, 6000.0, 16000);
        let alias = tone_power(&r.samples, 2000.0, 8000);
        assert!(10.0 * (alias / p0).log10() < -60.0);
    }

    #[test]
    fn trace_matrix_examples() {
        let m = build_trace_matrix(&[utt(vec![0.5; 64])], 8).unwrap();
        let row = m.data.row(0);
        assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-12));

        let m = build_trace_matrix(&[utt(vec![0.0; 64])], 8).unwrap();
        assert!(m.data.iter().all(|&v| v.abs() < 1e-12));

        let ramp: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let m = build_trace_matrix(&[utt(ramp.clone())], 8).unwrap();
        for j in 1..8 {
            assert!(m.data[[0, j]] > m.data[[0, j - 1]]);
        }
        // direct mean oracle for the first interval
        let mean: f64 = ramp[0..8].iter().sum::<f64>() / 8.0;
        assert!((m.data[[0, 0]] - (20.0 * mean.log10() + 120.0)).abs() < 1e-9);

        assert!(matches!(build_trace_matrix(&[], 8), Err(Error::EmptyInput(_))));
        // shorter than t: every interval still holds one sample
        let m = build_trace_matrix(&[utt(vec![0.25; 3])], 8).unwrap();
        assert!(m.data.iter().all(|&v| (v - (20.0 * 0.25f64.log10() + 120.0)).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn matrix_sign_invariant(x in prop::collection::vec(-1.0f64..1.0, 16..400)) {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let a = build_trace_matrix(&[utt(x)], 8).unwrap();
            let b = build_trace_matrix(&[utt(neg)], 8).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn matrix_gain_shift(x in prop::collection::vec(0.01f64..1.0, 16..400), g in 0.1f64..4.0) {
            let y: Vec<f64> = x.iter().map(|v| v * g).collect();
            let a = build_trace_matrix(&[utt(x)], 8).unwrap();
            let b = build_trace_matrix(&[utt(y)], 8).unwrap();
            let shift = 20.0 * g.log10();
            for (u, v) in a.data.iter().zip(b.data.iter()) {
                prop_assert!((v - u - shift).abs() < 1e-9);
            }
        }

        #[test]
        fn wav_roundtrip_on_grid(q in prop::collection::vec(-32768i32..32768, 1..300)) {
            let s: Vec<f64> = q.iter().map(|&v| v as f64 / 32768.0).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.wav");
            write_wav(&p, &AudioTrace::new(s.clone(), 8000).unwrap()).unwrap();
            prop_assert_eq!(read_wav(&p).unwrap().samples, s);
        }
    }
}
