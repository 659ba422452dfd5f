//! Synthetic-corpus experiments: closed world, codec ladder, packet loss and
//! open world.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio_io::AudioTrace;
use crate::channel_sim::codec::CodecMode;
use crate::channel_sim::corpus::{derive_seed, render_corpus, room_irs, ChannelConfig};
use crate::channel_sim::room::{ImpulseResponse, RoomSpec};
use crate::classifier::ClassifierConfig;
use crate::error::Result;
use crate::fingerprint::{FingerprintVector, TraceAnalysis};
use crate::harness::config::Config;
use crate::harness::evaluate::{collect_fingerprints, evaluate_fingerprints, fingerprint_all, EnsembleTrainer};
use crate::harness::kfold::kfold_split;
use crate::harness::manifest::{ManifestEntry, UNLABELLED};
use crate::harness::report::EvaluationReport;

/// Rooms, impulse responses and dry speech shared by every channel variant.
pub struct Bench {
    pub cfg: Config,
    pub seed: u64,
    pub rooms: Vec<RoomSpec>,
    pub irs: Vec<ImpulseResponse>,
    pub dry: Vec<AudioTrace>,
}

/// Fingerprints of one rendered corpus.
pub struct Fingerprinted {
    pub entries: Vec<ManifestEntry>,
    pub analyses: Vec<Option<TraceAnalysis>>,
    pub rt_mae: Option<f64>,
}

impl Fingerprinted {
    pub fn fingerprints(&self) -> Vec<Option<FingerprintVector>> {
        self.analyses.iter().map(|a| a.as_ref().map(|a| a.fingerprint.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub experiment: String,
    pub variable: String,
    pub value: String,
    pub report: EvaluationReport,
}

impl Bench {
    pub fn new(cfg: &Config, seed: u64) -> Result<Bench> {
        cfg.validate()?;
        let rooms = cfg.corpus.room_specs()?;
        let irs = room_irs(&rooms, cfg.corpus.positions, cfg.corpus.position_jitter, seed, cfg.corpus.sample_rate)?;
        let dry = cfg.corpus.dry_bank(seed)?;
        Ok(Bench { cfg: cfg.clone(), seed, rooms, irs, dry })
    }

    pub fn fingerprint(&self, channel: &ChannelConfig) -> Result<Fingerprinted> {
        let rendered = render_corpus(&self.rooms, &self.irs, &self.dry, self.cfg.corpus.positions, channel, self.seed)?;
        let traces: Vec<AudioTrace> = rendered.iter().map(|r| r.trace.clone()).collect();
        let entries: Vec<ManifestEntry> = rendered.into_iter().map(|r| r.entry).collect();
        let names: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
        let analyses = collect_fingerprints(fingerprint_all(&traces, &self.cfg.fingerprint, self.seed), &names)?;
        let errs: Vec<f64> = analyses
            .iter()
            .zip(&entries)
            .filter_map(|(a, e)| {
                let est = a.as_ref()?.rt_est?;
                Some((est - self.irs[e.room_id * self.cfg.corpus.positions + e.position_id].rt60_est).abs())
            })
            .collect();
        let rt_mae = if errs.is_empty() { None } else { Some(errs.iter().sum::<f64>() / errs.len() as f64) };
        Ok(Fingerprinted { entries, analyses, rt_mae })
    }

    /// Evaluate with the labels of `hidden` locations stripped from training.
    pub fn evaluate(&self, fp: &Fingerprinted, hidden: &[String], title: &str) -> Result<EvaluationReport> {
        self.evaluate_with(fp, hidden, title, &self.cfg.classifier)
    }

    pub fn evaluate_with(
        &self,
        fp: &Fingerprinted,
        hidden: &[String],
        title: &str,
        classifier: &ClassifierConfig,
    ) -> Result<EvaluationReport> {
        let start = Instant::now();
        let ev = &self.cfg.evaluation;
        let folds = kfold_split(&fp.entries, ev.k, self.seed, ev.inverted)?;
        let truth: Vec<String> = fp.entries.iter().map(|e| e.label.clone()).collect();
        let train: Vec<String> =
            truth.iter().map(|l| if hidden.contains(l) { UNLABELLED.to_string() } else { l.clone() }).collect();
        let trainer = EnsembleTrainer(classifier.clone());
        let mut r = evaluate_fingerprints(&fp.fingerprints(), &truth, &train, &folds, &trainer, self.seed)?;
        r.title = title.to_string();
        let mut echo = self.cfg.clone();
        echo.classifier = classifier.clone();
        r.config_echo = format!("seed = {}\n{}", self.seed, echo.to_toml());
        r.rt_mae = fp.rt_mae;
        r.wall_clock_s = start.elapsed().as_secs_f64();
        Ok(r)
    }

    pub fn channel(&self, f: impl FnOnce(&mut ChannelConfig)) -> ChannelConfig {
        let mut c = self.cfg.corpus.channel.clone();
        f(&mut c);
        c
    }

    /// Locations whose labels are stripped at a given unlabelled fraction.
    pub fn hidden_locations(&self, fraction: f64) -> Vec<String> {
        let mut labels: Vec<String> = self.rooms.iter().map(|r| r.label.clone()).collect();
        let n = (fraction * labels.len() as f64).round() as usize;
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[6])));
        labels.truncate(n);
        labels.sort();
        labels
    }
}

fn row(experiment: &str, variable: &str, value: String, report: EvaluationReport) -> SeriesRow {
    SeriesRow { experiment: experiment.into(), variable: variable.into(), value, report }
}

/// Configured channel, all labels; the configured ensemble and the same
/// ensemble with bagging toggled.
pub fn closed_world(bench: &Bench) -> Result<Vec<SeriesRow>> {
    let fp = bench.fingerprint(&bench.cfg.corpus.channel)?;
    closed_world_from(bench, &fp)
}

pub fn closed_world_from(bench: &Bench, fp: &Fingerprinted) -> Result<Vec<SeriesRow>> {
    let mut other = bench.cfg.classifier.clone();
    other.bagging = !other.bagging;
    let mut rows = Vec::new();
    for cls in [&bench.cfg.classifier, &other] {
        let on = if cls.bagging { "on" } else { "off" };
        let r = bench.evaluate_with(fp, &[], &format!("closed world, bagging {on}"), cls)?;
        rows.push(row("closed-world", "bagging", on.into(), r));
    }
    Ok(rows)
}

pub fn codec_ladder(bench: &Bench) -> Result<Vec<SeriesRow>> {
    bench
        .cfg
        .experiments
        .codecs
        .iter()
        .map(|&m: &CodecMode| {
            let fp = bench.fingerprint(&bench.channel(|c| c.codec = m))?;
            Ok(row("codec", "codec", m.name().into(), bench.evaluate(&fp, &[], &format!("codec {}", m.name()))?))
        })
        .collect()
}

/// Loss-rate series under the configured concealment, then each
/// concealment at the comparison rate.
pub fn packet_loss(bench: &Bench) -> Result<Vec<SeriesRow>> {
    let ex = &bench.cfg.experiments;
    let mut out = Vec::new();
    let base = bench.cfg.corpus.channel.concealment;
    for &rate in &ex.loss_rates {
        let fp = bench.fingerprint(&bench.channel(|c| c.loss_rate = rate))?;
        let title = format!("loss {rate} {}", base.name());
        out.push(row("packet-loss", base.name(), format!("{rate}"), bench.evaluate(&fp, &[], &title)?));
    }
    for &conc in &ex.concealments {
        let fp = bench.fingerprint(&bench.channel(|c| {
            c.loss_rate = ex.concealment_rate;
            c.concealment = conc;
        }))?;
        let title = format!("concealment {} at {}", conc.name(), ex.concealment_rate);
        out.push(row(
            "concealment",
            conc.name(),
            format!("{}", ex.concealment_rate),
            bench.evaluate(&fp, &[], &title)?,
        ));
    }
    Ok(out)
}

pub fn open_world(bench: &Bench) -> Result<Vec<SeriesRow>> {
    let fp = bench.fingerprint(&bench.cfg.corpus.channel)?;
    bench
        .cfg
        .experiments
        .unlabelled_fractions
        .iter()
        .map(|&f| {
            let hidden = bench.hidden_locations(f);
            let title = format!("open world, unlabelled fraction {f} ({})", hidden.join(" "));
            Ok(row("open-world", "unlabelled_fraction", format!("{f}"), bench.evaluate(&fp, &hidden, &title)?))
        })
        .collect()
}

pub fn series_csv(rows: &[SeriesRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "experiment",
        "variable",
        "value",
        "detection_rate",
        "fpr",
        "reject_rate",
        "rt_mae",
        "fingerprint_failures",
    ])?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.variable.clone(),
            r.value.clone(),
            format!("{:.6}", r.report.detection_rate),
            format!("{:.6}", r.report.fpr),
            format!("{:.6}", r.report.reject_rate),
            r.report.rt_mae.map_or(String::new(), |v| format!("{v:.6}")),
            r.report.fingerprint_failures.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::Data(e.to_string()))
}

/// series.csv plus one report directory per row.
pub fn write_series(dir: &Path, rows: &[SeriesRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("series.csv"), series_csv(rows)?)?;
    for r in rows {
        let name = format!("{}_{}_{}", r.experiment, r.variable, r.value).replace(['/', ' '], "_");
        r.report.write(&dir.join(name))?;
    }
    Ok(())
}

/// Which experiments `run` executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ClosedWorld,
    Codec,
    PacketLoss,
    OpenWorld,
    All,
}

impl std::str::FromStr for ExperimentKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "closed-world" => ExperimentKind::ClosedWorld,
            "codec" => ExperimentKind::Codec,
            "packet-loss" => ExperimentKind::PacketLoss,
            "open-world" => ExperimentKind::OpenWorld,
            "all" => ExperimentKind::All,
            _ => return Err(crate::Error::Config(format!("unknown experiment {s:?}"))),
        })
    }
}

pub fn run(kind: ExperimentKind, cfg: &Config, seed: u64) -> Result<Vec<SeriesRow>> {
    let bench = Bench::new(cfg, seed)?;
    let mut rows = Vec::new();
    if matches!(kind, ExperimentKind::ClosedWorld | ExperimentKind::All) {
        rows.extend(closed_world(&bench)?);
    }
    if matches!(kind, ExperimentKind::Codec | ExperimentKind::All) {
        rows.extend(codec_ladder(&bench)?);
    }
    if matches!(kind, ExperimentKind::PacketLoss | ExperimentKind::All) {
        rows.extend(packet_loss(&bench)?);
    }
    if matches!(kind, ExperimentKind::OpenWorld | ExperimentKind::All) {
        rows.extend(open_world(&bench)?);
    }
    Ok(rows)
}
