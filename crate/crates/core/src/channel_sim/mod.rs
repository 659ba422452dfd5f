//! Synthetic rooms, channels and corpora.

pub mod codec;
pub mod corpus;
pub mod loss;
pub mod room;
pub mod speech;

pub use codec::{codec_emulate, CodecMode};
pub use corpus::{generate_corpus, ChannelConfig, CorpusConfig};
pub use loss::{lossy_channel, Concealment, LossProfile};
pub use room::{image_source_ir, ImpulseResponse, RoomSpec};
pub use speech::{synth_speech, SpeechConfig};

use crate::audio_io::AudioTrace;
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};

/// Linear convolution without normalization.
pub fn convolve_raw(dry: &AudioTrace, ir: &ImpulseResponse) -> Result<Vec<f64>> {
    if dry.sample_rate != ir.sample_rate {
        return Err(Error::Config(format!(
            "rate mismatch: trace {} Hz, impulse response {} Hz",
            dry.sample_rate, ir.sample_rate
        )));
    }
    Ok(fft_convolve(&dry.samples, &ir.taps))
}

/// Linear convolution, peak-normalized to ±1.
pub fn convolve(dry: &AudioTrace, ir: &ImpulseResponse) -> Result<AudioTrace> {
    let y = convolve_raw(dry, ir)?;
    let mut out = AudioTrace { samples: y, sample_rate: dry.sample_rate, label: dry.label.clone() };
    out = out.peak_normalized();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::energy;
    use proptest::prelude::*;

    fn ir(taps: Vec<f64>) -> ImpulseResponse {
        ImpulseResponse { taps, sample_rate: 16000, rt60_est: 0.0 }
    }

    #[test]
    fn identity_and_shift() {
        let dry = AudioTrace::new(vec![0.1, -0.4, 0.2, 0.0, 0.3], 16000).unwrap();
        let y = convolve(&dry, &ir(vec![1.0])).unwrap();
        let want = dry.peak_normalized();
        assert_eq!(y.samples, want.samples);

        let y = convolve(&dry, &ir(vec![0.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(y.len(), dry.len() + 3);
        assert!(y.samples[..3].iter().all(|&v| v == 0.0));
        for (a, b) in y.samples[3..].iter().zip(&want.samples) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_mismatch() {
        let dry = AudioTrace::new(vec![0.1; 10], 8000).unwrap();
        assert!(matches!(convolve(&dry, &ir(vec![1.0])), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn peak_bounded_by_cauchy_schwarz(
            x in prop::collection::vec(-1.0f64..1.0, 1..200),
            h in prop::collection::vec(-1.0f64..1.0, 1..200),
        ) {
            prop_assume!(x.iter().any(|&v| v != 0.0));
            let dry = AudioTrace::new(x.clone(), 16000).unwrap();
            let y = convolve_raw(&dry, &ir(h.clone())).unwrap();
            prop_assert_eq!(y.len(), x.len() + h.len() - 1);
            let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(peak * peak <= energy(&x) * energy(&h) * (1.0 + 1e-9) + 1e-12);
            let n = convolve(&dry, &ir(h)).unwrap();
            prop_assert!(n.peak() <= 1.0 + 1e-12);
        }
    }
}
