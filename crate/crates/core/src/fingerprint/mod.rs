//! Location fingerprints: per-band reverberant over direct power ratios.

pub mod cqt;
pub mod store;
pub mod wiener;

use serde::{Deserialize, Serialize};

use crate::audio_io::{build_trace_matrix, interval_edges, resample, AudioTrace, TraceMatrix, CANONICAL_RATE};
use crate::decomposition::{deep_decompose, DecompositionResult, NmfConfig};
use crate::error::{Error, Result};
use crate::segmentation::{segment, SegmenterConfig, Utterance};
use cqt::{Cqt, CqtConfig, CqtSpectrum};
use wiener::{suppress_noise, WienerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintVector {
    pub p: Vec<f64>,
    pub band_mask: Vec<bool>,
    pub n_segments: usize,
}

impl FingerprintVector {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// How the decomposition is mapped back onto each utterance's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// per-interval share of the reverberant regeneration O′ in H¹Wˣ
    Regeneration,
    /// early and late windows after the decay onset of the utterance's trace row
    DecayWindows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// span before the voicing offset searched for the decay onset
    pub search_ms: f64,
    /// envelope smoothing before the onset fit
    pub smooth_ms: f64,
    /// gap between the decay onset and the start of the early window
    pub delay_ms: f64,
    pub direct_ms: f64,
    pub reverb_ms: f64,
    /// raised-cosine taper on each window edge
    pub taper_ms: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::DecayWindows,
            search_ms: 600.0,
            smooth_ms: 10.0,
            delay_ms: 0.0,
            direct_ms: 150.0,
            reverb_ms: 400.0,
            taper_ms: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    /// tail length as a multiple of the estimated RT60
    pub rt_factor: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// RT60 assumed when no decay can be fitted
    pub fallback_rt_s: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig { rt_factor: 0.5, min_s: 0.15, max_s: 0.8, fallback_rt_s: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    pub intervals: usize,
    pub suppress_noise: bool,
    pub segmenter: SegmenterConfig,
    pub wiener: WienerConfig,
    pub nmf: NmfConfig,
    pub cqt: CqtConfig,
    pub split: SplitConfig,
    pub tail: TailConfig,
    /// relative validity threshold on direct power
    pub eps_d: f64,
    /// segments whose median band ratio R/D reaches this show no decay and are dropped
    pub decay_guard: f64,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            intervals: 512,
            suppress_noise: true,
            segmenter: SegmenterConfig::default(),
            wiener: WienerConfig::default(),
            nmf: NmfConfig::default(),
            cqt: CqtConfig::default(),
            split: SplitConfig::default(),
            tail: TailConfig::default(),
            eps_d: 1e-8,
            decay_guard: 0.1,
        }
    }
}

/// P = R/D where D exceeds `eps_rel` of the segment's total direct power,
/// summed over segments.
pub fn normalize_and_aggregate(r: &[CqtSpectrum], d: &[CqtSpectrum], eps_rel: f64) -> Result<FingerprintVector> {
    if r.len() != d.len() || r.is_empty() {
        return Err(Error::Shape(format!("{} reverberant vs {} direct spectra", r.len(), d.len())));
    }
    let nb = r[0].bins.len();
    let mut p = vec![0.0; nb];
    let mut mask = vec![false; nb];
    for (ri, di) in r.iter().zip(d) {
        if ri.bins.len() != nb || di.bins.len() != nb || ri.center_freqs != di.center_freqs {
            return Err(Error::Shape("mismatched bin layouts".into()));
        }
        let total: f64 = di.bins.iter().sum();
        let eps = eps_rel * total;
        for k in 0..nb {
            if di.bins[k] > eps && di.bins[k] > 0.0 {
                p[k] += ri.bins[k] / di.bins[k];
                mask[k] = true;
            }
        }
    }
    Ok(FingerprintVector { p, band_mask: mask, n_segments: r.len() })
}

fn frame_db(x: &[f64], frame: usize) -> Vec<f64> {
    x.chunks(frame)
        .map(|c| {
            let e = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
            10.0 * e.max(1e-30).log10()
        })
        .collect()
}

/// RT60 from exponential-decay fits to the energy envelope after each
/// voicing offset; median over offsets with a usable decay.
pub fn estimate_rt(x: &[f64], rate: u32, utterances: &[Utterance]) -> Option<f64> {
    let frame = (rate as usize / 100).max(1);
    let fs = rate as f64 / frame as f64;
    let mut rts = Vec::new();
    for (i, u) in utterances.iter().enumerate() {
        let end = utterances.get(i + 1).map_or(x.len(), |n| n.start_offset);
        let start = u.end_offset().saturating_sub(rate as usize * 3 / 10).max(u.start_offset);
        if end <= start + 4 * frame {
            continue;
        }
        let env = frame_db(&x[start..end], frame);
        // offset peak: loudest frame in the last 300 ms of voicing
        let search = ((u.end_offset() - start) / frame).clamp(1, env.len());
        let (j0, l0) =
            env[..search].iter().enumerate().fold((0, f64::MIN), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
        let from = env[j0..].iter().position(|&v| v <= l0 - 5.0).map(|k| k + j0);
        let mut fitted = None;
        for depth in [25.0, 15.0] {
            let to = env[j0..].iter().position(|&v| v <= l0 - depth).map(|k| k + j0);
            if let (Some(a), Some(b)) = (from, to) {
                if let Some(s) = crate::channel_sim::room::decay_slope(&env, a, b + 1) {
                    if s < 0.0 {
                        fitted = Some(-60.0 / (s * fs));
                        break;
                    }
                }
            }
        }
        if let Some(rt) = fitted {
            rts.push(rt);
        }
    }
    if rts.is_empty() {
        return None;
    }
    rts.sort_by(|a, b| a.total_cmp(b));
    Some(rts[rts.len() / 2])
}

/// Extend each utterance into the following silence by `tail` samples,
/// never past the next utterance. Returns extended utterances and the
/// original voiced lengths.
pub fn extend_utterances(x: &[f64], rate: u32, utterances: &[Utterance], tail: usize) -> (Vec<Utterance>, Vec<usize>) {
    let mut out = Vec::with_capacity(utterances.len());
    let mut voiced = Vec::with_capacity(utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        let limit = utterances.get(i + 1).map_or(x.len(), |n| n.start_offset);
        let end = (u.end_offset() + tail).min(limit).max(u.end_offset());
        out.push(Utterance::new(x[u.start_offset..end].to_vec(), rate, u.start_offset));
        voiced.push(u.samples.len());
    }
    (out, voiced)
}

fn taper_window(len: usize, a: usize, b: usize, taper: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    let b = b.min(len);
    if a >= b {
        return w;
    }
    for (i, v) in w.iter_mut().enumerate().take(b).skip(a) {
        let from_a = i - a;
        let to_b = b - 1 - i;
        let edge = from_a.min(to_b);
        *v = if taper == 0 || edge >= taper {
            1.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / taper as f64).cos()
        };
    }
    w
}

/// Breakpoint of the best least-squares fit of a level that is flat and then
/// falls linearly. None when no falling fit exists.
pub fn hinge_break(y: &[f64]) -> Option<usize> {
    let n = y.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let sy: f64 = y.iter().sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let mut best: Option<(usize, f64)> = None;
    for b in 0..n - 2 {
        let (mut sz, mut szz, mut szy) = (0.0, 0.0, 0.0);
        for (j, &v) in y.iter().enumerate().skip(b) {
            let z = (j - b) as f64;
            sz += z;
            szz += z * z;
            szy += z * v;
        }
        let det = nf * szz - sz * sz;
        if det <= 0.0 {
            continue;
        }
        let slope = (nf * szy - sz * sy) / det;
        if slope >= 0.0 {
            continue;
        }
        let level = (sy - slope * sz) / nf;
        let sse = syy - level * sy - slope * szy;
        if best.is_none_or(|(_, e)| sse < e) {
            best = Some((b, sse));
        }
    }
    best.map(|(b, _)| b)
}

/// Per-sample (reverberant, direct) weights for one utterance row.
pub fn split_masks(
    dec: &DecompositionResult,
    o: &TraceMatrix,
    row: usize,
    len: usize,
    voiced_len: usize,
    rate: u32,
    cfg: &SplitConfig,
) -> (Vec<f64>, Vec<f64>) {
    let t = dec.wx.ncols();
    let edges = interval_edges(len, t);
    let interval_of = |s: usize| -> usize { edges.partition_point(|&e| e <= s).saturating_sub(1).min(t - 1) };
    match cfg.mode {
        SplitMode::Regeneration => {
            let full = dec.regenerated();
            let mut mr = vec![0.0; len];
            for (s, m) in mr.iter_mut().enumerate() {
                let j = interval_of(s);
                let tot = full[[row, j]];
                *m = if tot > 0.0 { (dec.reverberant[[row, j]] / tot).clamp(0.0, 1.0) } else { 0.0 };
            }
            let md = mr.iter().map(|v| 1.0 - v).collect();
            (mr, md)
        }
        SplitMode::DecayWindows => {
            let ms = |v: f64| (v * rate as f64 / 1000.0).round() as usize;
            let half = ms(cfg.smooth_ms) * t / len.max(1) / 2;
            let env: Vec<f64> = (0..t)
                .map(|j| {
                    let (a, b) = (j.saturating_sub(half), (j + half + 1).min(t));
                    (a..b).map(|k| o.data[[row, k]]).sum::<f64>() / (b - a) as f64
                })
                .collect();
            let vend = interval_of(voiced_len.saturating_sub(1).min(len - 1));
            let lim = interval_of(voiced_len.saturating_sub(ms(cfg.search_ms)));
            let j0 = lim + hinge_break(&env[lim..=vend]).unwrap_or(vend - lim);
            let s0 = edges[j0] + ms(cfg.delay_ms);
            let d_end = s0 + ms(cfg.direct_ms);
            let r_end = d_end + ms(cfg.reverb_ms);
            let taper = ms(cfg.taper_ms);
            let md = taper_window(len, s0, d_end, taper);
            let mr = taper_window(len, d_end, r_end, taper);
            (mr, md)
        }
    }
}

/// Decomposition, split and CQT of already segmented (and tail-extended)
/// utterances. `voiced_lens[i]` is the voiced length of utterance i before
/// tail extension.
pub fn fingerprint_utterances(
    utterances: &[Utterance],
    voiced_lens: &[usize],
    cfg: &FingerprintConfig,
    seed: u64,
) -> Result<FingerprintVector> {
    if utterances.is_empty() {
        return Err(Error::NoFingerprint("no utterances".into()));
    }
    let rate = utterances[0].sample_rate;
    let o = build_trace_matrix(utterances, cfg.intervals)?;
    let dec = deep_decompose(&o, &cfg.nmf, seed)?;
    let cq = Cqt::new(&cfg.cqt, rate)?;
    let mut rs = Vec::with_capacity(utterances.len());
    let mut ds = Vec::with_capacity(utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        let (mr, md) = split_masks(&dec, &o, i, u.samples.len(), voiced_lens[i], rate, &cfg.split);
        if mr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xr: Vec<f64> = u.samples.iter().zip(&mr).map(|(a, b)| a * b).collect();
        let xd: Vec<f64> = u.samples.iter().zip(&md).map(|(a, b)| a * b).collect();
        let (r, d) = (cq.power(&xr), cq.power(&xd));
        if median_ratio(&r, &d, cfg.eps_d).is_some_and(|m| m < cfg.decay_guard) {
            rs.push(r);
            ds.push(d);
        }
    }
    if rs.is_empty() {
        return Err(Error::NoFingerprint("no utterance with a usable decay".into()));
    }
    let fp = normalize_and_aggregate(&rs, &ds, cfg.eps_d)?;
    if !fp.band_mask.iter().any(|&b| b) {
        return Err(Error::NoFingerprint("no band with valid direct power".into()));
    }
    Ok(fp)
}

/// Median of R/D over the bands with valid direct power.
pub fn median_ratio(r: &CqtSpectrum, d: &CqtSpectrum, eps_rel: f64) -> Option<f64> {
    let eps = eps_rel * d.bins.iter().sum::<f64>();
    let mut v: Vec<f64> =
        r.bins.iter().zip(&d.bins).filter(|(_, &dd)| dd > eps && dd > 0.0).map(|(rr, dd)| rr / dd).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v[v.len() / 2])
}

/// Intermediate products of [`fingerprint_trace`].
#[derive(Debug, Clone)]
pub struct TraceAnalysis {
    pub fingerprint: FingerprintVector,
    pub rt_est: Option<f64>,
    pub n_utterances: usize,
}

/// Full pipeline on a raw trace: peak normalization, resampling, noise
/// suppression, segmentation, tail extension and fingerprinting.
pub fn analyze_trace(trace: &AudioTrace, cfg: &FingerprintConfig, seed: u64) -> Result<TraceAnalysis> {
    let mut x = trace.peak_normalized();
    if x.sample_rate != CANONICAL_RATE {
        x = resample(&x, CANONICAL_RATE)?.peak_normalized();
    }
    if cfg.suppress_noise {
        x = suppress_noise(&x, None, &cfg.wiener);
    }
    let utts = segment(&x, &cfg.segmenter)?;
    if utts.is_empty() {
        return Err(Error::NoFingerprint("no voiced utterances".into()));
    }
    let rt = estimate_rt(&x.samples, x.sample_rate, &utts);
    let tail_s = (rt.unwrap_or(cfg.tail.fallback_rt_s) * cfg.tail.rt_factor).clamp(cfg.tail.min_s, cfg.tail.max_s);
    let tail = (tail_s * x.sample_rate as f64).round() as usize;
    let (ext, voiced) = extend_utterances(&x.samples, x.sample_rate, &utts, tail);
    let fingerprint = fingerprint_utterances(&ext, &voiced, cfg, seed)?;
    Ok(TraceAnalysis { fingerprint, rt_est: rt, n_utterances: utts.len() })
}

pub fn fingerprint_trace(trace: &AudioTrace, cfg: &FingerprintConfig, seed: u64) -> Result<FingerprintVector> {
    Ok(analyze_trace(trace, cfg, seed)?.fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::convolve;
    use crate::channel_sim::room::{image_source_ir, RoomSpec};
    use crate::channel_sim::speech::{synth_speech, SpeechConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(bins: Vec<f64>) -> CqtSpectrum {
        let n = bins.len();
        CqtSpectrum {
            bins,
            center_freqs: (0..n).map(|k| 50.0 * 2f64.powf(k as f64 / 24.0)).collect(),
            bins_per_octave: 24,
            f_min: 50.0,
            f_max: 2000.0,
        }
    }

    fn room() -> RoomSpec {
        RoomSpec {
            dims: [6.0, 4.5, 3.0],
            surface_coeffs: [0.9, 0.9, 0.8, 0.8, 0.6, 0.85],
            source_pos: [1.5, 1.5, 1.5],
            mic_pos: [3.5, 2.5, 1.2],
            max_order: 12,
            label: "r".into(),
        }
    }

    fn speech() -> AudioTrace {
        let cfg = SpeechConfig { n_utterances: 2, ..SpeechConfig::default() };
        synth_speech(11, &cfg, CANONICAL_RATE)
    }

    fn reverberant() -> AudioTrace {
        let ir = image_source_ir(&room(), CANONICAL_RATE).unwrap();
        convolve(&speech(), &ir).unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn ratio_with_zero_guard() {
        let fp = normalize_and_aggregate(&[spec(vec![2.0, 4.0, 0.0])], &[spec(vec![1.0, 2.0, 0.0])], 1e-8).unwrap();
        assert_eq!(fp.p, vec![2.0, 2.0, 0.0]);
        assert_eq!(fp.band_mask, vec![true, true, false]);
        assert_eq!(fp.n_segments, 1);
    }

    #[test]
    fn segments_are_summed() {
        let d = || spec(vec![1.0, 1.0]);
        let fp = normalize_and_aggregate(&[spec(vec![1.0, 2.0]), spec(vec![3.0, 4.0])], &[d(), d()], 1e-8).unwrap();
        assert_eq!(fp.p, vec![4.0, 6.0]);
    }

    #[test]
    fn common_scale_cancels() {
        let r = [spec(vec![0.3, 1.7, 2.0])];
        let d = [spec(vec![0.9, 0.2, 5.0])];
        let a = normalize_and_aggregate(&r, &d, 1e-8).unwrap();
        let g = 37.5;
        let rs = [spec(r[0].bins.iter().map(|v| v * g).collect())];
        let ds = [spec(d[0].bins.iter().map(|v| v * g).collect())];
        let b = normalize_and_aggregate(&rs, &ds, 1e-8).unwrap();
        for (x, y) in a.p.iter().zip(&b.p) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn layout_mismatch() {
        let e = normalize_and_aggregate(&[spec(vec![1.0, 2.0])], &[spec(vec![1.0])], 1e-8);
        assert!(matches!(e, Err(Error::Shape(_))));
        let e = normalize_and_aggregate(&[spec(vec![1.0])], &[], 1e-8);
        assert!(matches!(e, Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn aggregation_is_order_free_and_masked(seed in 0u64..500, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |zeros: bool| -> CqtSpectrum {
                spec((0..8).map(|_| if zeros && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..3.0) }).collect())
            };
            let r: Vec<CqtSpectrum> = (0..n).map(|_| gen(false)).collect();
            let d: Vec<CqtSpectrum> = (0..n).map(|_| gen(true)).collect();
            let a = normalize_and_aggregate(&r, &d, 1e-8).unwrap();
            let rr: Vec<CqtSpectrum> = r.iter().rev().cloned().collect();
            let dr: Vec<CqtSpectrum> = d.iter().rev().cloned().collect();
            let b = normalize_and_aggregate(&rr, &dr, 1e-8).unwrap();
            prop_assert_eq!(&a.band_mask, &b.band_mask);
            for k in 0..8 {
                prop_assert!((a.p[k] - b.p[k]).abs() <= 1e-12 * a.p[k].abs().max(1.0));
                prop_assert!(a.p[k] >= 0.0);
                if !a.band_mask[k] {
                    prop_assert_eq!(a.p[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn hinge_recovers_break() {
        let y: Vec<f64> = (0..100).map(|j| if j < 37 { 80.0 } else { 80.0 - 0.5 * (j - 37) as f64 }).collect();
        assert_eq!(hinge_break(&y), Some(37));
        let rising: Vec<f64> = (0..50).map(|j| j as f64).collect();
        assert_eq!(hinge_break(&rising), None);
        assert_eq!(hinge_break(&[1.0, 0.0]), None);
    }

    #[test]
    fn rt_of_exponential_noise_decay() {
        let fs = 16000;
        let rt = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x: Vec<f64> = (0..fs / 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        x.extend((0..fs).map(|i| rng.gen_range(-1.0..1.0) * 10f64.powf(-3.0 * i as f64 / (fs as f64 * rt))));
        let u = Utterance::new(x[..fs as usize / 2].to_vec(), fs, 0);
        let est = estimate_rt(&x, fs, &[u]).unwrap();
        assert!((est - rt).abs() < 0.05 * rt, "{est}");
    }

    #[test]
    fn tails_stop_at_next_utterance() {
        let x = vec![0.1; 1000];
        let utts = [Utterance::new(vec![0.1; 100], 1000, 0), Utterance::new(vec![0.1; 100], 1000, 150)];
        let (ext, voiced) = extend_utterances(&x, 1000, &utts, 200);
        assert_eq!(ext[0].samples.len(), 150);
        assert_eq!(ext[1].samples.len(), 300);
        assert_eq!(voiced, vec![100, 100]);
    }

    #[test]
    fn gain_invariant() {
        let cfg = FingerprintConfig::default();
        let t = reverberant();
        let base = fingerprint_trace(&t, &cfg, 5).unwrap();
        for g in [0.5, 2.0] {
            let s = AudioTrace::new(t.samples.iter().map(|v| v * g).collect(), t.sample_rate).unwrap();
            let fp = fingerprint_trace(&s, &cfg, 5).unwrap();
            assert_eq!(fp.band_mask, base.band_mask);
            for (a, b) in fp.p.iter().zip(&base.p) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-300), "gain {g}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = FingerprintConfig::default();
        let t = reverberant();
        assert_eq!(fingerprint_trace(&t, &cfg, 5).unwrap(), fingerprint_trace(&t, &cfg, 5).unwrap());
    }

    #[test]
    fn anechoic_input_has_little_late_energy() {
        let cfg = FingerprintConfig::default();
        let wet = fingerprint_trace(&reverberant(), &cfg, 5).unwrap();
        let dry = fingerprint_trace(&speech(), &cfg, 5).map(|f| norm(&f.p)).unwrap_or(0.0);
        assert!(norm(&wet.p) > 0.0);
        assert!(dry < 0.01 * norm(&wet.p), "dry {dry} wet {}", norm(&wet.p));
    }

    #[test]
    fn fingerprint_has_cqt_length() {
        let fp = fingerprint_trace(&reverberant(), &FingerprintConfig::default(), 1).unwrap();
        assert_eq!(fp.len(), 128);
        assert!(fp.p.iter().zip(&fp.band_mask).all(|(&p, &m)| p >= 0.0 && (m || p == 0.0)));
    }

    #[test]
    fn silence_has_no_fingerprint() {
        let t = AudioTrace::new(vec![0.0; 16000], CANONICAL_RATE).unwrap();
        assert!(fingerprint_trace(&t, &FingerprintConfig::default(), 1).is_err());
    }
}
