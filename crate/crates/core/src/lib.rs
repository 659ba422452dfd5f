pub mod audio_io;
pub mod channel_sim;
pub mod classifier;
pub mod decomposition;
pub mod dsp;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod segmentation;

pub use error::{Error, Result};
