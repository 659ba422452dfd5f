//! Corpus generation: room × position × dry trace through a channel.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{codec_emulate, CodecMode};
use super::convolve;
use super::loss::{lossy_channel, Concealment, LossProfile};
use super::room::{image_source_ir, ImpulseResponse, RoomSpec};
use super::speech::{synth_speech, SpeechConfig};
use crate::audio_io::{quantize16, read_wav, resample, write_wav, AudioTrace};
use crate::error::{Error, Result};
use crate::harness::manifest::{DatasetManifest, ManifestEntry};

/// Peak level of rendered traces, leaving headroom for 16-bit storage.
pub const RENDER_PEAK: f64 = 0.9;
const POSITION_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub codec: CodecMode,
    pub loss_rate: f64,
    pub frame_ms: f64,
    pub concealment: Concealment,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            codec: CodecMode::Wideband,
            loss_rate: 0.0,
            frame_ms: 20.0,
            concealment: Concealment::RepeatSpectrum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub label: String,
    pub dims: [f64; 3],
    /// six material names in surface order; alternative to `coeffs`
    #[serde(default)]
    pub materials: Option<Vec<String>>,
    /// six amplitude reflection coefficients
    #[serde(default)]
    pub coeffs: Option<[f64; 6]>,
    pub source: [f64; 3],
    pub mic: [f64; 3],
}

impl RoomConfig {
    pub fn to_spec(&self, max_order: usize) -> Result<RoomSpec> {
        let surface_coeffs = match (&self.materials, &self.coeffs) {
            (Some(m), None) => RoomSpec::coeffs_from_materials(m)?,
            (None, Some(c)) => *c,
            _ => return Err(Error::Config(format!("room {}: give exactly one of materials or coeffs", self.label))),
        };
        let spec = RoomSpec {
            dims: self.dims,
            surface_coeffs,
            source_pos: self.source,
            mic_pos: self.mic,
            max_order,
            label: self.label.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Ten rooms of identical 6 × 4.5 × 3 m geometry differing only in the
/// material on each surface (x0, x1, y0, y1, floor, ceiling).
///
/// At most one pair of opposing surfaces is left without carpet: two hard
/// parallel walls give a flutter tail whose length keeps growing with the
/// image order. RT60 runs from about 0.2 s to 1.0 s at order 60.
pub fn default_rooms() -> Vec<RoomConfig> {
    const LAYOUTS: [&str; 10] =
        ["CCCCCC", "CCCCCW", "CCCWCW", "PCCPCC", "CGCGCG", "CCCCWW", "CCPCWW", "CCWWCP", "PCWWCP", "WCPWPC"];
    LAYOUTS
        .iter()
        .enumerate()
        .map(|(i, l)| RoomConfig {
            label: format!("room{i:02}"),
            dims: [6.0, 4.5, 3.0],
            materials: Some(
                l.chars()
                    .map(|c| {
                        match c {
                            'P' => "plaster",
                            'W' => "wood",
                            'C' => "carpet",
                            _ => "glass",
                        }
                        .to_string()
                    })
                    .collect(),
            ),
            coeffs: None,
            source: [1.5, 1.5, 1.5],
            mic: [3.5, 2.5, 1.2],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    pub positions: usize,
    /// synthesized dry traces when `dry_dir` is unset
    pub dry_traces: usize,
    pub dry_dir: Option<PathBuf>,
    pub max_order: usize,
    /// uniform jitter (m) applied to source and mic x/y per position
    pub position_jitter: f64,
    pub speech: SpeechConfig,
    pub channel: ChannelConfig,
    pub rooms: Vec<RoomConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            sample_rate: 16000,
            positions: 5,
            dry_traces: 10,
            dry_dir: None,
            max_order: 60,
            position_jitter: 0.5,
            speech: SpeechConfig::default(),
            channel: ChannelConfig::default(),
            rooms: default_rooms(),
        }
    }
}

impl CorpusConfig {
    pub fn room_specs(&self) -> Result<Vec<RoomSpec>> {
        self.rooms.iter().map(|r| r.to_spec(self.max_order)).collect()
    }

    /// Dry traces from `dry_dir` (sorted by file name) or synthesized.
    pub fn dry_bank(&self, seed: u64) -> Result<Vec<AudioTrace>> {
        match &self.dry_dir {
            Some(dir) => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(Error::Data(format!("no wav files in {}", dir.display())));
                }
                paths.iter().map(|p| resample(&read_wav(p)?, self.sample_rate)).collect()
            }
            None => Ok((0..self.dry_traces)
                .map(|d| synth_speech(derive_seed(seed, &[2, d as u64]), &self.speech, self.sample_rate))
                .collect()),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for a tuple of indices under a master seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Jitter source and mic positions for one recording position.
pub fn place(room: &RoomSpec, jitter: f64, seed: u64) -> RoomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = room.clone();
    for p in [&mut out.source_pos, &mut out.mic_pos] {
        for a in 0..2 {
            let d = if jitter > 0.0 { rng.gen_range(-jitter..jitter) } else { 0.0 };
            p[a] = (p[a] + d).clamp(POSITION_MARGIN, room.dims[a] - POSITION_MARGIN);
        }
    }
    out
}

/// Convolve, band-limit, drop frames, normalize and quantize to the 16-bit grid.
pub fn render_trace(
    dry: &AudioTrace,
    ir: &ImpulseResponse,
    channel: &ChannelConfig,
    loss_seed: u64,
) -> Result<AudioTrace> {
    let wet = convolve(dry, ir)?;
    let coded = codec_emulate(&wet, channel.codec);
    let profile = LossProfile {
        loss_rate: channel.loss_rate,
        frame_ms: channel.frame_ms,
        concealment: channel.concealment,
        seed: loss_seed,
    };
    let lossy = lossy_channel(&coded, &profile)?;
    let peak = lossy.peak();
    let scale = if peak > 0.0 { RENDER_PEAK / peak } else { 0.0 };
    let samples = lossy.samples.iter().map(|&v| quantize16(v * scale) as f64 / 32768.0).collect();
    Ok(AudioTrace { samples, sample_rate: dry.sample_rate, label: None })
}

pub struct RenderedTrace {
    pub trace: AudioTrace,
    pub entry: ManifestEntry,
}

/// Impulse responses for every (room, position), row-major by room.
pub fn room_irs(
    rooms: &[RoomSpec],
    positions: usize,
    jitter: f64,
    seed: u64,
    rate: u32,
) -> Result<Vec<ImpulseResponse>> {
    let jobs: Vec<(usize, usize)> = (0..rooms.len()).flat_map(|r| (0..positions).map(move |p| (r, p))).collect();
    jobs.par_iter()
        .map(|&(r, p)| {
            let placed = place(&rooms[r], jitter, derive_seed(seed, &[1, r as u64, p as u64]));
            image_source_ir(&placed, rate)
        })
        .collect()
}

/// Render every room × position × dry triple in memory.
pub fn render_corpus(
    rooms: &[RoomSpec],
    irs: &[ImpulseResponse],
    dry_bank: &[AudioTrace],
    positions: usize,
    channel: &ChannelConfig,
    seed: u64,
) -> Result<Vec<RenderedTrace>> {
    if rooms.len() < 2 {
        return Err(Error::Config("at least two rooms required".into()));
    }
    if dry_bank.is_empty() {
        return Err(Error::Config("empty dry bank".into()));
    }
    if irs.len() != rooms.len() * positions {
        return Err(Error::Config("impulse response count does not match rooms × positions".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..rooms.len())
        .flat_map(|r| (0..positions).flat_map(move |p| (0..dry_bank.len()).map(move |d| (r, p, d))))
        .collect();
    jobs.par_iter()
        .map(|&(r, p, d)| {
            let ts = derive_seed(seed, &[3, r as u64, p as u64, d as u64]);
            let mut trace = render_trace(&dry_bank[d], &irs[r * positions + p], channel, ts)?;
            trace.label = Some(rooms[r].label.clone());
            let entry = ManifestEntry {
                path: format!("r{r:02}_p{p:02}_d{d:03}.wav"),
                label: rooms[r].label.clone(),
                room_id: r,
                position_id: p,
                codec_mode: channel.codec.name().to_string(),
                loss_rate: channel.loss_rate,
                seed: ts,
            };
            Ok(RenderedTrace { trace, entry })
        })
        .collect()
}

/// Render the corpus into `out_dir` as WAV files plus `manifest.csv`.
pub fn generate_corpus(
    rooms: &[RoomSpec],
    dry_bank: &[AudioTrace],
    positions: usize,
    channel: &ChannelConfig,
    jitter: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let rate = dry_bank.first().map(|t| t.sample_rate).unwrap_or(16000);
    let irs = room_irs(rooms, positions, jitter, seed, rate)?;
    let rendered = render_corpus(rooms, &irs, dry_bank, positions, channel, seed)?;
    std::fs::create_dir_all(out_dir)?;
    for r in &rendered {
        write_wav(out_dir.join(&r.entry.path), &r.trace)?;
    }
    let m = DatasetManifest::new(out_dir, rendered.into_iter().map(|r| r.entry).collect());
    m.save(out_dir.join("manifest.csv"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_rooms(n: usize) -> Vec<RoomSpec> {
        let cfg = CorpusConfig { max_order: 3, ..Default::default() };
        cfg.room_specs().unwrap().into_iter().take(n).collect()
    }

    fn short_dry() -> AudioTrace {
        let cfg = SpeechConfig { n_utterances: 1, utterance_s: (0.3, 0.4), gap_s: (0.1, 0.2), ..Default::default() };
        synth_speech(1, &cfg, 16000)
    }

    #[test]
    fn counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            generate_corpus(&small_rooms(2), &[short_dry()], 1, &ChannelConfig::default(), 0.5, 9, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.locations(), vec!["room00".to_string(), "room01".to_string()]);
        let loaded = DatasetManifest::load(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let t = read_wav(loaded.resolve(&loaded.entries[0])).unwrap();
        assert!(t.peak() <= 1.0);
    }

    #[test]
    fn positions_change_ir_not_label() {
        let rooms = small_rooms(2);
        let irs = room_irs(&rooms, 2, 0.5, 4, 16000).unwrap();
        assert_ne!(irs[0].taps, irs[1].taps);
        let r = render_corpus(&rooms, &irs, &[short_dry()], 2, &ChannelConfig::default(), 4).unwrap();
        assert_eq!(r[0].entry.label, r[1].entry.label);
        assert_ne!(r[0].entry.position_id, r[1].entry.position_id);
    }

    #[test]
    fn reproducible() {
        let rooms = small_rooms(2);
        let ch = ChannelConfig { loss_rate: 0.2, ..Default::default() };
        let a =
            render_corpus(&rooms, &room_irs(&rooms, 2, 0.5, 11, 16000).unwrap(), &[short_dry()], 2, &ch, 11).unwrap();
        let b =
            render_corpus(&rooms, &room_irs(&rooms, 2, 0.5, 11, 16000).unwrap(), &[short_dry()], 2, &ch, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trace, y.trace);
            assert_eq!(x.entry, y.entry);
        }
    }

    #[test]
    fn needs_two_rooms() {
        let rooms = small_rooms(1);
        let irs = room_irs(&rooms, 1, 0.0, 0, 16000).unwrap();
        assert!(render_corpus(&rooms, &irs, &[short_dry()], 1, &ChannelConfig::default(), 0).is_err());
    }

    #[test]
    fn seeds_distinct() {
        let a = derive_seed(1, &[3, 0, 0, 1]);
        let b = derive_seed(1, &[3, 0, 1, 0]);
        let c = derive_seed(2, &[3, 0, 0, 1]);
        assert!(a != b && a != c && b != c);
    }
}
