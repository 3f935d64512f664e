use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fusetrack::io::{
    annotation_records, labeled_frames, load_boxes, load_detections, load_rasters, overlay_records, pose_samples,
    read_json, sample_records, save_rasters, track_records, write_boxes, write_detections, write_json, write_jsonl,
};
use fusetrack::metrics::LabeledFrame;
use fusetrack::pipeline::{fit_spatial, run_pipeline, sweep, track, write_sweep_csv, SweepGrid};
use fusetrack::simulator::simulate;
use fusetrack::spatial::{SpatialModel, SpatialModelDocument};
use fusetrack::{evaluate, RunConfig};

#[derive(Parser)]
#[command(name = "fusetrack", version, about = "Multi-detector fusion tracker")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence from the config's scenario.
    Simulate {
        /// Directory receiving detections.jsonl, annotations.jsonl,
        /// training.jsonl and rasters.bin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the spatial model on annotation records.
    TrainSpatial {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Track a detection file.
    Track {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Appearance rasters; the appearance term is off without them.
        #[arg(long)]
        rasters: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-frame geometry (tracks and detections) as JSONL.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Score tracks against annotations.
    Evaluate {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// JSON report; the text table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid on the config's scenario.
    Sweep {
        /// JSON object with lists `a`, `tau`, `delta`, `alpha`, `lambda`.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration; `--scenario` adds a default
    /// scenario when the config has none.
    Config {
        #[arg(long)]
        scenario: bool,
    },
    /// Simulate, train, track and evaluate in one go.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} path given (flag or config paths)"),
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag.or_else(|| cfg.paths.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn pad(mut frames: Vec<LabeledFrame>, len: usize) -> Vec<LabeledFrame> {
    frames.resize(len, Vec::new());
    frames
}

fn write_report(path: &Path, report: &fusetrack::MotReport) -> Result<()> {
    write_json(path, report)?;
    fs::write(path.with_extension("txt"), report.table())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { out } => {
            let Some(scenario) = &cfg.scenario else { bail!("config has no scenario") };
            let dir = out_dir(out, &cfg)?;
            let sim = simulate(scenario)?;
            write_detections(&dir.join("detections.jsonl"), &sim.detections)?;
            write_boxes(&dir.join("annotations.jsonl"), &annotation_records(&sim.ground_truth))?;
            write_boxes(&dir.join("training.jsonl"), &sample_records(&sim.training))?;
            save_rasters(&dir.join("rasters.bin"), &sim.rasters)?;
            eprintln!("simulated {} frames into {}", sim.detections.len(), dir.display());
        }
        Command::TrainSpatial { annotations, out } => {
            let path = pick(annotations, &cfg.paths.training, "training annotations")?;
            let samples = pose_samples(&load_boxes(&path)?, cfg.regions);
            if samples.is_empty() {
                bail!("{} holds no complete pose samples", path.display());
            }
            let model = fit_spatial(&cfg, &samples)?;
            let out = pick(out, &cfg.paths.spatial_model, "model output")?;
            write_json(&out, &model.to_document())?;
            eprintln!("fitted {} clusters on {} samples", model.clusters(), samples.len());
        }
        Command::Track { detections, model, rasters, out, overlay } => {
            let dets = load_detections(&pick(detections, &cfg.paths.detections, "detections")?)?;
            let doc: SpatialModelDocument = read_json(&pick(model, &cfg.paths.spatial_model, "spatial model")?)?;
            let model = SpatialModel::from_document(&doc)?;
            let rasters = match rasters.or_else(|| cfg.paths.rasters.clone()) {
                Some(p) => Some(load_rasters(&p)?),
                None => None,
            };
            if let Some(r) = &rasters {
                if r.len() < dets.len() {
                    bail!("{} rasters for {} detection frames", r.len(), dets.len());
                }
            }
            let tracks = track(&cfg, &model, &dets, rasters.as_deref())?;
            let out = match out {
                Some(p) => p,
                None => out_dir(None, &cfg)?.join("tracks.jsonl"),
            };
            write_boxes(&out, &track_records(&tracks))?;
            if let Some(p) = overlay {
                write_jsonl(BufWriter::new(File::create(&p)?), overlay_records(&tracks, &dets))?;
            }
        }
        Command::Evaluate { tracks, annotations, out } => {
            let region = cfg.eval.region;
            let hyp = labeled_frames(&load_boxes(&tracks)?, region);
            let gt = labeled_frames(&load_boxes(&pick(annotations, &cfg.paths.annotations, "annotations")?)?, region);
            let len = hyp.len().max(gt.len());
            let report = evaluate(&pad(hyp, len), &pad(gt, len), &cfg.eval)?;
            print!("{}", report.table());
            if let Some(p) = out {
                write_report(&p, &report)?;
            }
        }
        Command::Sweep { grid, out } => {
            let grid: SweepGrid = read_json(&grid)?;
            let rows = sweep(&cfg, &grid)?;
            match out {
                Some(p) => write_sweep_csv(BufWriter::new(File::create(&p)?), &rows)?,
                None => write_sweep_csv(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Config { scenario } => {
            let mut cfg = cfg;
            if scenario && cfg.scenario.is_none() {
                cfg.scenario = Some(Default::default());
            }
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        Command::Run { out } => {
            let dir = out_dir(out, &cfg)?;
            let result = run_pipeline(&cfg)?;
            write_detections(&dir.join("detections.jsonl"), &result.simulation.detections)?;
            write_boxes(&dir.join("annotations.jsonl"), &annotation_records(&result.simulation.ground_truth))?;
            write_json(&dir.join("spatial_model.json"), &result.model.to_document())?;
            write_boxes(&dir.join("tracks.jsonl"), &track_records(&result.tracks))?;
            write_report(&dir.join("report.json"), &result.report)?;
            print!("{}", result.report.table());
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
