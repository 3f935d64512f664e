//! Online multi-person tracking: first-frame initialization, per-frame
//! preprocessing, the incremental person-count search and identity
//! bookkeeping.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::appearance::{extract_feature, AppearanceBank, AppearanceFeature, AppearanceRaster, IdentityDecision};
use crate::energy::{evaluate, EnergyConfig, FrameContext, FrameSolution, Focus, PreviousFrame};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::grouping::{by_detector, group_all_detectors, GroupingConfig};
use crate::optimizer::{optimize_fixed_m, solution_energy, OptimizerConfig, MIN_SIDE};
use crate::par::{self, Execution};
use crate::spatial::{RegionMap, SpatialModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub grouping: GroupingConfig,
    pub energy: EnergyConfig,
    pub optimizer: OptimizerConfig,
    /// Identity re-acquisition threshold on appearance similarity.
    pub delta: f64,
    pub regions: usize,
    pub region_map: RegionMap,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            grouping: GroupingConfig::default(),
            energy: EnergyConfig::default(),
            optimizer: OptimizerConfig::default(),
            delta: 0.5,
            regions: 2,
            region_map: RegionMap([(1, 0), (2, 1)].into_iter().collect()),
            execution: Execution::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.grouping.validate()?;
        self.energy.validate()?;
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config("delta", "must lie in [0, 1]"));
        }
        if self.regions == 0 {
            return Err(Error::config("regions", "at least one region is required"));
        }
        if self.region_map.0.is_empty() {
            return Err(Error::config("detectors", "at least one detector is required"));
        }
        for (id, &r) in &self.region_map.0 {
            if r >= self.regions {
                return Err(Error::config(
                    "detectors",
                    format!("detector {id} maps to region {} but only {} regions exist", r + 1, self.regions),
                ));
            }
        }
        Ok(())
    }
}

/// A tracked person in one frame, boxes in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPerson {
    pub identity: u64,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub frame: usize,
    pub persons: Vec<TrackedPerson>,
    pub energy: f64,
}

/// Everything carried from one frame to the next. Boxes are normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    /// Number of frames processed.
    pub frame: usize,
    pub solution: FrameSolution,
    pub velocities: FrameSolution,
    pub identities: Vec<u64>,
    /// Features of the current boxes on the current raster.
    pub features: Vec<Vec<AppearanceFeature>>,
    pub bank: AppearanceBank,
    /// Persons that survived the last preprocessing step.
    pub m_star: usize,
}

impl TrackerState {
    fn empty(regions: usize) -> Self {
        Self {
            frame: 0,
            solution: FrameSolution::empty(regions),
            velocities: FrameSolution::empty(regions),
            identities: Vec::new(),
            features: Vec::new(),
            bank: AppearanceBank::default(),
            m_star: 0,
        }
    }

    pub fn persons(&self) -> usize {
        self.solution.persons()
    }
}

/// Result of preprocessing: which previous persons stay and where they are
/// predicted in the new frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub keep: Vec<bool>,
    /// Constant-velocity prediction of every previous person.
    pub predicted: FrameSolution,
}

impl Preprocessed {
    pub fn m_star(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

fn sanitize(b: BoundingBox, min_side: f64) -> BoundingBox {
    let b = BoundingBox::from_corners(b.x1, b.y1, b.x2, b.y2);
    let (cx, cy) = b.center();
    let w = b.width().max(min_side);
    let h = b.height().max(min_side);
    BoundingBox::from_center(cx, cy, w, h)
}

/// Constant-velocity prediction and the out-of-view test. A person is
/// dropped when some predicted region box reaches the boundary band and no
/// detection of the matching region lies within the detection radius of any
/// of the person's predicted boxes.
pub fn preprocess(state: &TrackerState, detections: &[Detection], cfg: &TrackerConfig) -> Preprocessed {
    let (w, h) = cfg.energy.image_size;
    let margin = cfg.optimizer.boundary_margin;
    let radius = cfg.optimizer.radius_px((w, h));
    let regions = cfg.regions;
    let mut predicted = FrameSolution::empty(regions);
    let mut keep = Vec::with_capacity(state.persons());
    for m in 0..state.persons() {
        let boxes: Vec<BoundingBox> = (0..regions)
            .map(|l| {
                let x = state.solution.box_coords(m, l);
                let v = state.velocities.box_coords(m, l);
                sanitize(
                    BoundingBox::from_array([x[0] + v[0], x[1] + v[1], x[2] + v[2], x[3] + v[3]]),
                    2.0 * MIN_SIDE,
                )
            })
            .collect();
        let near_boundary = boxes
            .iter()
            .any(|b| b.x1 < margin || b.y1 < margin || b.x2 > 1.0 - margin || b.y2 > 1.0 - margin);
        let detected_nearby = boxes.iter().enumerate().any(|(l, b)| {
            let (cx, cy) = b.denormalize(w, h).center();
            detections.iter().any(|d| {
                cfg.region_map.region_of(d.detector_id) == Some(l) && {
                    let (dx, dy) = d.bbox.center();
                    ((dx - cx).powi(2) + (dy - cy).powi(2)).sqrt() <= radius
                }
            })
        });
        keep.push(!(near_boundary && !detected_nearby));
        predicted.push_person(&boxes);
    }
    Preprocessed { keep, predicted }
}

/// One candidate person per detection and subcategory, normalized.
fn candidates(detections: &[Detection], model: &SpatialModel, cfg: &TrackerConfig) -> Result<Vec<Vec<f64>>> {
    let (w, h) = cfg.energy.image_size;
    let mut out = Vec::new();
    for dets in by_detector(detections).values() {
        for d in dets {
            for c in 0..model.clusters() {
                let boxes = model.predict_configuration(c, d, &cfg.region_map)?;
                out.push(
                    boxes
                        .iter()
                        .flat_map(|b| sanitize(b.normalize(w, h), 2.0 * MIN_SIDE).to_array())
                        .collect(),
                );
            }
        }
    }
    Ok(out)
}

/// Incremental person-count search: keep adding the best remaining candidate
/// while the optimized objective strictly decreases. Every person count is
/// optimized from the raw initialization (predicted survivors plus the
/// accepted candidates), not from the previous optimum.
fn search_person_count(
    start: FrameSolution,
    ctx: &FrameContext,
    mut pool: Vec<Vec<f64>>,
    cfg: &TrackerConfig,
) -> Result<(FrameSolution, f64)> {
    let mut init = start;
    let (mut best, mut best_energy) = if init.persons() == 0 {
        let e = solution_energy(&init, ctx, &cfg.energy);
        (init.clone(), e)
    } else {
        let o = optimize_fixed_m(init.clone(), ctx, &cfg.energy, &cfg.optimizer)?;
        (o.solution, o.energy)
    };

    while !pool.is_empty() {
        let new_index = init.persons();
        let scores = par::map(&pool, cfg.execution, |cand| {
            let mut trial = init.clone();
            trial.push_person_coords(cand);
            if !trial.is_well_formed(MIN_SIDE) {
                return f64::INFINITY;
            }
            evaluate(&trial, ctx, &cfg.energy, Focus::Person(new_index), None).0
        });
        let Some((pick, _)) = scores
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        else {
            break;
        };
        let cand = pool.remove(pick);
        let mut next = init.clone();
        next.push_person_coords(&cand);
        let trial = optimize_fixed_m(next.clone(), ctx, &cfg.energy, &cfg.optimizer)?;
        if trial.energy < best_energy {
            init = next;
            best = trial.solution;
            best_energy = trial.energy;
        } else {
            break;
        }
    }
    Ok((best, best_energy))
}

fn region_features(sol: &FrameSolution, m: usize, raster: Option<&AppearanceRaster>, cfg: &TrackerConfig) -> Vec<AppearanceFeature> {
    let (w, h) = cfg.energy.image_size;
    (0..sol.regions())
        .map(|l| match raster {
            Some(r) => extract_feature(r, &sol.bbox(m, l).denormalize(w, h)).unwrap_or_else(|_| AppearanceFeature::zero(r.bins())),
            None => AppearanceFeature::zero(0),
        })
        .collect()
}

/// Online tracker over one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    model: SpatialModel,
    state: TrackerState,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, model: SpatialModel) -> Result<Self> {
        cfg.validate()?;
        if model.regions() != cfg.regions {
            return Err(Error::config(
                "regions",
                format!("spatial model has {} regions, configuration has {}", model.regions(), cfg.regions),
            ));
        }
        let (mw, mh) = model.image_size();
        let (w, h) = cfg.energy.image_size;
        if (mw - w).abs() > 1e-9 || (mh - h).abs() > 1e-9 {
            return Err(Error::config("image_size", "spatial model was fitted for a different image size"));
        }
        let regions = cfg.regions;
        Ok(Self {
            cfg,
            model,
            state: TrackerState::empty(regions),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn model(&self) -> &SpatialModel {
        &self.model
    }

    /// Processes the next frame.
    pub fn step(&mut self, detections: &[Detection], raster: Option<&AppearanceRaster>) -> Result<FrameOutput> {
        if let Some(d) = detections.iter().find(|d| self.cfg.region_map.region_of(d.detector_id).is_none()) {
            return Err(Error::config("detectors", format!("detection from unregistered detector {}", d.detector_id)));
        }
        let energy = if self.state.frame == 0 {
            self.initialize_first_frame(detections, raster)?
        } else {
            self.update_frame(detections, raster)?
        };
        Ok(self.output(energy))
    }

    fn output(&self, energy: f64) -> FrameOutput {
        let (w, h) = self.cfg.energy.image_size;
        let s = &self.state;
        FrameOutput {
            frame: s.frame - 1,
            persons: (0..s.persons())
                .map(|m| TrackedPerson {
                    identity: s.identities[m],
                    boxes: s.solution.person(m).iter().map(|b| b.denormalize(w, h)).collect(),
                })
                .collect(),
            energy,
        }
    }

    pub fn initialize_first_frame(&mut self, detections: &[Detection], raster: Option<&AppearanceRaster>) -> Result<f64> {
        let cfg = &self.cfg;
        let groups = group_all_detectors(&by_detector(detections), &cfg.grouping);
        let ctx = FrameContext::new(&groups, &cfg.region_map, &self.model, cfg.energy.image_size)?;
        let pool = candidates(detections, &self.model, cfg)?;
        let (solution, energy) = search_person_count(FrameSolution::empty(cfg.regions), &ctx, pool, cfg)?;

        let mut state = TrackerState::empty(cfg.regions);
        state.frame = 1;
        for m in 0..solution.persons() {
            let features = region_features(&solution, m, raster, cfg);
            let identity = state.bank.next_identity;
            state.bank.insert(identity, features.clone());
            state.identities.push(identity);
            state.features.push(features);
            state.velocities.push_person_coords(&vec![0.0; 4 * cfg.regions]);
        }
        state.solution = solution;
        self.state = state;
        Ok(energy)
    }

    pub fn update_frame(&mut self, detections: &[Detection], raster: Option<&AppearanceRaster>) -> Result<f64> {
        let cfg = &self.cfg;
        let regions = cfg.regions;
        let groups = group_all_detectors(&by_detector(detections), &cfg.grouping);
        let pre = preprocess(&self.state, detections, cfg);

        let mut prev = PreviousFrame {
            solution: FrameSolution::empty(regions),
            velocities: FrameSolution::empty(regions),
            features: Vec::new(),
        };
        let mut start = FrameSolution::empty(regions);
        let mut survivor_ids = Vec::new();
        for m in (0..self.state.persons()).filter(|&m| pre.keep[m]) {
            prev.solution.push_person_coords(self.state.solution.person_coords(m));
            prev.velocities.push_person_coords(self.state.velocities.person_coords(m));
            prev.features.push(self.state.features[m].clone());
            start.push_person_coords(pre.predicted.person_coords(m));
            survivor_ids.push(self.state.identities[m]);
        }
        let m_star = survivor_ids.len();

        let ctx = FrameContext::new(&groups, &cfg.region_map, &self.model, cfg.energy.image_size)?
            .with_previous(Some(prev.clone()))
            .with_raster(raster);
        let pool = candidates(detections, &self.model, cfg)?;
        let (solution, energy) = search_person_count(start, &ctx, pool, cfg)?;

        let mut bank = self.state.bank.clone();
        let mut identities = survivor_ids;
        let mut features = Vec::with_capacity(solution.persons());
        let mut velocities = FrameSolution::empty(regions);
        for m in 0..solution.persons() {
            let f = region_features(&solution, m, raster, cfg);
            if m < m_star {
                bank.update(identities[m], &f);
                let v: Vec<f64> = solution
                    .person_coords(m)
                    .iter()
                    .zip(prev.solution.person_coords(m))
                    .map(|(a, b)| a - b)
                    .collect();
                velocities.push_person_coords(&v);
            } else {
                let active: BTreeSet<u64> = identities.iter().copied().collect();
                match bank.match_identity(&f, cfg.delta, &active) {
                    IdentityDecision::Existing { identity, .. } => {
                        bank.update(identity, &f);
                        identities.push(identity);
                    }
                    IdentityDecision::Fresh { identity, .. } => {
                        bank.insert(identity, f.clone());
                        identities.push(identity);
                    }
                }
                velocities.push_person_coords(&vec![0.0; 4 * regions]);
            }
            features.push(f);
        }

        self.state = TrackerState {
            frame: self.state.frame + 1,
            solution,
            velocities,
            identities,
            features,
            bank,
            m_star,
        };
        Ok(energy)
    }
}

/// Runs a tracker over a whole sequence.
pub fn track_sequence(
    cfg: &TrackerConfig,
    model: &SpatialModel,
    frames: &[Vec<Detection>],
    rasters: Option<&[AppearanceRaster]>,
) -> Result<Vec<FrameOutput>> {
    let mut tracker = Tracker::new(cfg.clone(), model.clone())?;
    frames
        .iter()
        .enumerate()
        .map(|(t, dets)| tracker.step(dets, rasters.and_then(|r| r.get(t))))
        .collect()
}
