//! End-to-end composition: simulate, fit the spatial model, track, evaluate,
//! and parameter sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceRaster;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::Detection;
use crate::metrics::{evaluate, EvalConfig, LabeledFrame, MotReport};
use crate::par;
use crate::simulator::{simulate, Simulation};
use crate::spatial::{PoseSample, SpatialModel};
use crate::tracker::{track_sequence, FrameOutput};

/// Boxes of one 0-based region from tracker output.
pub fn tracked_region(outputs: &[FrameOutput], region: usize) -> Vec<LabeledFrame> {
    outputs
        .iter()
        .map(|o| o.persons.iter().map(|p| (p.identity, p.boxes[region])).collect())
        .collect()
}

pub fn fit_spatial(cfg: &RunConfig, samples: &[PoseSample]) -> Result<SpatialModel> {
    SpatialModel::fit(samples, &cfg.fit_options(), cfg.image_size)
}

pub fn track(
    cfg: &RunConfig,
    model: &SpatialModel,
    detections: &[Vec<Detection>],
    rasters: Option<&[AppearanceRaster]>,
) -> Result<Vec<FrameOutput>> {
    track_sequence(&cfg.tracker()?, model, detections, rasters)
}

pub fn score(cfg: &EvalConfig, outputs: &[FrameOutput], truth: &[LabeledFrame]) -> Result<MotReport> {
    evaluate(&tracked_region(outputs, cfg.region - 1), truth, cfg)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub simulation: Simulation,
    pub model: SpatialModel,
    pub tracks: Vec<FrameOutput>,
    pub report: MotReport,
}

/// Simulates the configured scenario, fits the spatial model on its training
/// split, tracks the sequence and scores it.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let scenario = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| Error::config("scenario", "required to run the pipeline"))?;
    let simulation = simulate(scenario)?;
    let model = fit_spatial(cfg, &simulation.training)?;
    let tracks = track(cfg, &model, &simulation.detections, Some(&simulation.rasters))?;
    let truth = simulation.ground_truth.region_boxes(cfg.eval.region - 1);
    let report = score(&cfg.eval, &tracks, &truth)?;
    Ok(PipelineOutput {
        simulation,
        model,
        tracks,
        report,
    })
}

/// Values to sweep; an empty list keeps the base configuration's value.
/// `lambda` sets all six term weights at once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub a: Vec<f64>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub a: f64,
    pub tau: f64,
    pub delta: f64,
    pub alpha: f64,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub point: SweepPoint,
    pub report: MotReport,
}

impl SweepGrid {
    /// Cartesian product in a fixed order (a slowest, lambda fastest).
    pub fn points(&self, base: &RunConfig) -> Vec<SweepPoint> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let lambdas: Vec<Option<f64>> = if self.lambda.is_empty() {
            vec![None]
        } else {
            self.lambda.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &a in &or(&self.a, base.grouping.a) {
            for &tau in &or(&self.tau, base.grouping.tau) {
                for &delta in &or(&self.delta, base.appearance.delta) {
                    for &alpha in &or(&self.alpha, base.energy.alpha) {
                        for &lambda in &lambdas {
                            out.push(SweepPoint { a, tau, delta, alpha, lambda });
                        }
                    }
                }
            }
        }
        out
    }
}

impl SweepPoint {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.grouping.a = self.a;
        cfg.grouping.tau = self.tau;
        cfg.appearance.delta = self.delta;
        cfg.energy.alpha = self.alpha;
        if let Some(l) = self.lambda {
            cfg.energy.lambdas = crate::energy::TermWeights::uniform(l);
        }
        cfg
    }
}

/// Runs every grid point on one simulation and model. Points run in parallel;
/// each tracker itself runs sequentially and rows keep grid order.
pub fn sweep(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let scenario = base
        .scenario
        .as_ref()
        .ok_or_else(|| Error::config("scenario", "required to run a sweep"))?;
    let simulation = simulate(scenario)?;
    let model = fit_spatial(base, &simulation.training)?;
    let truth = simulation.ground_truth.region_boxes(base.eval.region - 1);
    let points = grid.points(base);
    let configs: Vec<RunConfig> = points
        .iter()
        .map(|p| {
            let mut c = p.apply(base);
            c.execution = par::Execution::Sequential;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let reports = par::map(&configs, base.execution, |c| {
        let tracks = track(c, &model, &simulation.detections, Some(&simulation.rasters))?;
        score(&c.eval, &tracks, &truth)
    });
    points
        .into_iter()
        .zip(reports)
        .enumerate()
        .map(|(index, (point, report))| Ok(SweepRow { index, point, report: report? }))
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "index,a,tau,delta,alpha,lambda,mota,motp,fp,fn,ids,recall,precision,gt")?;
    for r in rows {
        let p = &r.point;
        let m = &r.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            p.a,
            p.tau,
            p.delta,
            p.alpha,
            p.lambda.map_or(String::new(), |l| l.to_string()),
            m.mota,
            m.motp,
            m.fp,
            m.fn_,
            m.ids,
            m.recall,
            m.precision,
            m.gt
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order() {
        let base = RunConfig::default();
        let grid = SweepGrid { a: vec![0.3, 0.7], tau: vec![0.4, 0.6], ..Default::default() };
        let pts = grid.points(&base);
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[1].a, pts[1].tau), (0.3, 0.6));
        assert_eq!((pts[2].a, pts[2].tau), (0.7, 0.4));
        assert_eq!(pts[0].delta, 0.5);
    }
}
