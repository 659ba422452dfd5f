use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use echoprint::audio_io::read_wav;
use echoprint::channel_sim::corpus::generate_corpus;
use echoprint::classifier::{train, EnsembleModel};
use echoprint::fingerprint::fingerprint_trace;
use echoprint::fingerprint::store::{load_fingerprints, save_fingerprints, FingerprintRecord};
use echoprint::harness::config::Config;
use echoprint::harness::evaluate::evaluate;
use echoprint::harness::experiments::{run, write_series, ExperimentKind};
use echoprint::harness::manifest::DatasetManifest;
use echoprint::segmentation::segment;
use echoprint::{Error, Result};

#[derive(Parser)]
#[command(name = "echoprint", version, about = "Room fingerprinting from reverberation in speech traces")]
struct Cli {
    /// TOML configuration; defaults apply to anything it leaves out
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic corpus (WAV files and manifest.csv) into --out
    Simulate,
    /// Write the voiced segments of a WAV file to segments.csv
    Segment { input: PathBuf },
    /// Fingerprint every trace of a manifest into fingerprints.csv
    Fingerprint {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train an ensemble from a fingerprint file into model.json
    Train {
        #[arg(long)]
        fingerprints: PathBuf,
    },
    /// Classify a fingerprint file with a trained model into classifications.csv
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fingerprints: PathBuf,
    },
    /// k-fold evaluation of the traces in a manifest
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// closed-world, codec, packet-loss, open-world or all
    Experiment {
        #[arg(default_value = "all")]
        kind: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    std::fs::create_dir_all(&cli.out)?;
    match &cli.cmd {
        Cmd::Simulate => simulate(&cfg, cli.seed, &cli.out),
        Cmd::Segment { input } => segment_file(&cfg, input, &cli.out),
        Cmd::Fingerprint { manifest } => fingerprint(&cfg, cli.seed, manifest, &cli.out),
        Cmd::Train { fingerprints } => {
            let recs = load_fingerprints(fingerprints)?;
            let data: Vec<_> = recs.into_iter().map(|r| (r.fingerprint, r.label)).collect();
            let model = train(&data, &cfg.classifier, cli.seed)?;
            model.save(cli.out.join("model.json"))?;
            println!("trained {} locations", model.per_location.len());
            Ok(())
        }
        Cmd::Classify { model, fingerprints } => classify(model, fingerprints, &cli.out),
        Cmd::Evaluate { manifest } => {
            let m = DatasetManifest::load(manifest)?;
            let ev = &cfg.evaluation;
            let mut r = evaluate(&m, &cfg.fingerprint, &cfg.classifier, ev.k, ev.inverted, cli.seed)?;
            r.title = format!("evaluation of {}", manifest.display());
            r.config_echo = format!("seed = {}\n{}", cli.seed, cfg.to_toml());
            r.write(&cli.out)?;
            print!("{}", r.summary().lines().take(3).collect::<Vec<_>>().join("\n") + "\n");
            Ok(())
        }
        Cmd::Experiment { kind } => {
            let kind: ExperimentKind = kind.parse()?;
            let rows = run(kind, &cfg, cli.seed)?;
            write_series(&cli.out, &rows)?;
            for r in &rows {
                println!(
                    "{:<14} {:<22} {:<12} detection {:.4}  fpr {:.4}  reject {:.4}",
                    r.experiment, r.variable, r.value, r.report.detection_rate, r.report.fpr, r.report.reject_rate
                );
            }
            Ok(())
        }
    }
}

fn simulate(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let rooms = cfg.corpus.room_specs()?;
    let dry = cfg.corpus.dry_bank(seed)?;
    let m = generate_corpus(
        &rooms,
        &dry,
        cfg.corpus.positions,
        &cfg.corpus.channel,
        cfg.corpus.position_jitter,
        seed,
        out,
    )?;
    println!("wrote {} traces to {}", m.entries.len(), out.display());
    Ok(())
}

fn segment_file(cfg: &Config, input: &Path, out: &Path) -> Result<()> {
    let t = read_wav(input)?;
    let utts = segment(&t, &cfg.fingerprint.segmenter)?;
    let mut w = csv::Writer::from_path(out.join("segments.csv"))?;
    w.write_record(["index", "start_s", "end_s", "duration_s"])?;
    let fs = t.sample_rate as f64;
    for (i, u) in utts.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.4}", u.start_offset as f64 / fs),
            format!("{:.4}", u.end_offset() as f64 / fs),
            format!("{:.4}", u.duration),
        ])?;
    }
    w.flush()?;
    println!("{} segments", utts.len());
    Ok(())
}

fn fingerprint(cfg: &Config, seed: u64, manifest: &Path, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let m = DatasetManifest::load(manifest)?;
    let s = echoprint::channel_sim::corpus::derive_seed(seed, &[4]);
    let results: Vec<Result<Option<FingerprintRecord>>> = m
        .entries
        .par_iter()
        .map(|e| {
            let t = read_wav(m.resolve(e))?;
            match fingerprint_trace(&t, &cfg.fingerprint, s) {
                Ok(fp) => Ok(Some(FingerprintRecord { label: e.label.clone(), fingerprint: fp })),
                Err(Error::NoFingerprint(msg)) => {
                    log::warn!("{}: {msg}", e.path);
                    Ok(None)
                }
                Err(err) => Err(err),
            }
        })
        .collect();
    let recs: Vec<FingerprintRecord> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    save_fingerprints(out.join("fingerprints.csv"), &recs)?;
    println!("{} of {} traces fingerprinted", recs.len(), m.entries.len());
    Ok(())
}

fn classify(model: &Path, fingerprints: &Path, out: &Path) -> Result<()> {
    let model = EnsembleModel::load(model)?;
    let recs = load_fingerprints(fingerprints)?;
    let mut w = csv::Writer::from_path(out.join("classifications.csv"))?;
    let labels = model.labels();
    let mut header = vec!["row".to_string(), "label".into(), "predicted".into()];
    header.extend(labels.iter().map(|l| format!("votes_{l}")));
    w.write_record(&header)?;
    for (i, r) in recs.iter().enumerate() {
        let c = model.classify(&r.fingerprint)?;
        let mut row = vec![i.to_string(), r.label.clone(), c.label.clone()];
        row.extend(labels.iter().map(|l| c.votes[l].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("classified {} fingerprints", recs.len());
    Ok(())
}
