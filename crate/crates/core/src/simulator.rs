//! Synthetic multi-person sequences with a body and a head region, noisy
//! detectors, depth statistics and appearance rasters.
//!
//! Region 1 is the full body, region 2 the head. Each pose places the head
//! by a fixed affine map of the body box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceRaster;
use crate::error::{Error, Result};
use crate::geometry::{intersection_area, BoundingBox, DepthStats, Detection};
use crate::spatial::PoseSample;

pub const BODY: usize = 0;
pub const HEAD: usize = 1;
pub const REGIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pose {
    Standing,
    Sitting,
    LyingLeft,
    LyingRight,
}

impl Pose {
    pub const ALL: [Pose; 4] = [Pose::Standing, Pose::Sitting, Pose::LyingLeft, Pose::LyingRight];

    /// Body width and height for a person of standing height `size`.
    pub fn body_extent(self, size: f64) -> (f64, f64) {
        match self {
            Pose::Standing => (0.4 * size, size),
            Pose::Sitting => (0.5 * size, 0.7 * size),
            Pose::LyingLeft | Pose::LyingRight => (size, 0.35 * size),
        }
    }

    /// Head box as an affine function of the body box.
    pub fn head_from_body(self, b: &BoundingBox) -> BoundingBox {
        let (w, h) = (b.width(), b.height());
        let (cx, cy) = b.center();
        match self {
            Pose::Standing => BoundingBox::from_array([cx - 0.15 * w, b.y1, cx + 0.15 * w, b.y1 + h / 7.0]),
            Pose::Sitting => BoundingBox::from_array([cx - 0.2 * w, b.y1, cx + 0.2 * w, b.y1 + h / 5.0]),
            Pose::LyingLeft => BoundingBox::from_array([b.x1, cy - 0.3 * h, b.x1 + 0.2 * w, cy + 0.3 * h]),
            Pose::LyingRight => BoundingBox::from_array([b.x2 - 0.2 * w, cy - 0.3 * h, b.x2, cy + 0.3 * h]),
        }
    }

    /// Unclipped body and head boxes centered on the body center.
    pub fn boxes(self, center: (f64, f64), size: f64) -> [BoundingBox; 2] {
        let (w, h) = self.body_extent(size);
        let body = BoundingBox::from_center(center.0, center.1, w, h);
        [body, self.head_from_body(&body)]
    }
}

/// Velocity in px/frame from `start_frame` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub start_frame: usize,
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseInterval {
    pub start_frame: usize,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    /// Body center at frame 0, px.
    pub start: (f64, f64),
    /// Standing height, px.
    pub size: f64,
    pub depth: f64,
    #[serde(default)]
    pub motion: Vec<MotionSegment>,
    #[serde(default)]
    pub poses: Vec<PoseInterval>,
    /// Reflect the velocity instead of leaving the image.
    #[serde(default)]
    pub bounce: bool,
    /// Two appearance bins (upper, lower body); drawn at random when absent.
    #[serde(default)]
    pub signature: Option<[u8; 2]>,
}

impl PersonSpec {
    pub fn pose_at(&self, frame: usize) -> Pose {
        self.poses
            .iter()
            .filter(|p| p.start_frame <= frame)
            .max_by_key(|p| p.start_frame)
            .map_or(Pose::Standing, |p| p.pose)
    }

    pub fn velocity_at(&self, frame: usize) -> (f64, f64) {
        self.motion
            .iter()
            .filter(|s| s.start_frame <= frame)
            .max_by_key(|s| s.start_frame)
            .map_or((0.0, 0.0), |s| s.velocity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSpec {
    pub id: u32,
    /// 1-based region index.
    pub region: usize,
    pub miss_rate: f64,
    /// Mean false positives per frame.
    pub fp_rate: f64,
    /// Corner noise, px.
    pub noise_std: f64,
    pub tp_score: (f64, f64),
    pub fp_score: (f64, f64),
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            id: 1,
            region: 1,
            miss_rate: 0.0,
            fp_rate: 0.0,
            noise_std: 0.0,
            tp_score: (5.0, 2.0),
            fp_score: (2.0, 5.0),
        }
    }
}

impl DetectorSpec {
    pub fn body(id: u32) -> Self {
        Self { id, region: BODY + 1, ..Default::default() }
    }

    pub fn head(id: u32) -> Self {
        Self { id, region: HEAD + 1, ..Default::default() }
    }

    pub fn with_noise(mut self, miss_rate: f64, fp_rate: f64, noise_std: f64) -> Self {
        self.miss_rate = miss_rate;
        self.fp_rate = fp_rate;
        self.noise_std = noise_std;
        self
    }
}

/// Settings for persons generated at random on top of the scripted ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomPersons {
    pub size: (f64, f64),
    pub speed: (f64, f64),
    /// Frames between velocity changes.
    pub segment: (usize, usize),
    pub depth: (f64, f64),
    /// Probability of switching pose at each velocity change.
    pub pose_change: f64,
}

impl Default for RandomPersons {
    fn default() -> Self {
        Self {
            size: (70.0, 100.0),
            speed: (0.5, 2.0),
            segment: (20, 60),
            depth: (1.5, 5.0),
            pose_change: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub image_size: (usize, usize),
    pub n_frames: usize,
    /// Total persons; any beyond `persons` are generated at random.
    pub n_persons: usize,
    pub persons: Vec<PersonSpec>,
    pub random: RandomPersons,
    pub detectors: Vec<DetectorSpec>,
    /// Noise on the per-detection depth mean.
    pub depth_noise: f64,
    pub depth_std: f64,
    /// Miss-rate multiplier for a person whose body is more than half covered
    /// by a nearer person's body.
    pub occlusion_factor: f64,
    pub bins: usize,
    /// Bins below this value are used only for the background.
    pub background_bins: usize,
    /// Edge band, as a fraction of the image size, where bouncing persons turn.
    pub bounce_margin: f64,
    pub training_samples: usize,
    /// Relative jitter of training head boxes.
    pub training_jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: (320, 240),
            n_frames: 100,
            n_persons: 3,
            persons: Vec::new(),
            random: RandomPersons::default(),
            detectors: vec![DetectorSpec::body(1), DetectorSpec::head(2)],
            depth_noise: 0.05,
            depth_std: 0.15,
            occlusion_factor: 2.0,
            bins: 32,
            background_bins: 8,
            bounce_margin: 0.08,
            training_samples: 200,
            training_jitter: 0.02,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::config("scenario.image_size", "must be positive"));
        }
        if self.persons.len() > self.n_persons {
            return Err(Error::config("scenario.n_persons", "fewer than the scripted persons"));
        }
        if !(1..=256).contains(&self.bins) || self.background_bins == 0 || self.background_bins >= self.bins {
            return Err(Error::config("scenario.bins", "need 0 < background_bins < bins <= 256"));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("scenario.detectors", "at least one detector is required"));
        }
        let mut ids: Vec<u32> = self.detectors.iter().map(|d| d.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::config("scenario.detectors", "detector ids must be unique"));
        }
        for d in &self.detectors {
            if !(1..=REGIONS).contains(&d.region) {
                return Err(Error::config("scenario.detectors.region", format!("must lie in [1, {REGIONS}]")));
            }
            if !(0.0..=1.0).contains(&d.miss_rate) {
                return Err(Error::config("scenario.detectors.miss_rate", "must lie in [0, 1]"));
            }
            if !(d.fp_rate >= 0.0 && d.fp_rate.is_finite()) {
                return Err(Error::config("scenario.detectors.fp_rate", "must be non-negative"));
            }
            if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
                return Err(Error::config("scenario.detectors.noise_std", "must be non-negative"));
            }
            for (a, b) in [d.tp_score, d.fp_score] {
                if !(a > 0.0 && b > 0.0) {
                    return Err(Error::config("scenario.detectors.score", "Beta parameters must be positive"));
                }
            }
        }
        for p in &self.persons {
            if !(p.size > 0.0) {
                return Err(Error::config("scenario.persons.size", "must be positive"));
            }
            if let Some(sig) = p.signature {
                if sig.iter().any(|&b| b as usize >= self.bins) {
                    return Err(Error::config("scenario.persons.signature", "bin out of range"));
                }
            }
        }
        if !(self.depth_noise >= 0.0 && self.depth_std >= 0.0) {
            return Err(Error::config("scenario.depth", "noise and std must be non-negative"));
        }
        if !(self.occlusion_factor >= 1.0) {
            return Err(Error::config("scenario.occlusion_factor", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.bounce_margin) {
            return Err(Error::config("scenario.bounce_margin", "must lie in [0, 0.5)"));
        }
        let r = &self.random;
        if !(r.size.0 > 0.0 && r.size.0 <= r.size.1 && r.speed.0 >= 0.0 && r.speed.0 <= r.speed.1) {
            return Err(Error::config("scenario.random", "ranges must be ordered and positive"));
        }
        if r.segment.0 == 0 || r.segment.0 > r.segment.1 || r.depth.0 > r.depth.1 {
            return Err(Error::config("scenario.random", "ranges must be ordered and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPerson {
    pub identity: u64,
    pub pose: Pose,
    /// Boxes clipped to the image.
    pub boxes: Vec<BoundingBox>,
    /// At least half of the region's box lies in the image.
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<Vec<GroundTruthPerson>>,
}

impl GroundTruth {
    /// Visible boxes of one region, per frame, with identities.
    pub fn region_boxes(&self, region: usize) -> Vec<Vec<(u64, BoundingBox)>> {
        self.frames
            .iter()
            .map(|f| {
                f.iter()
                    .filter(|p| p.visible.get(region).copied().unwrap_or(false))
                    .map(|p| (p.identity, p.boxes[region]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub ground_truth: GroundTruth,
    pub detections: Vec<Vec<Detection>>,
    pub rasters: Vec<AppearanceRaster>,
    pub training: Vec<PoseSample>,
    /// Persons actually simulated, random ones included.
    pub persons: Vec<PersonSpec>,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

fn random_persons(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<PersonSpec> {
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let extra = cfg.n_persons - cfg.persons.len();
    let r = &cfg.random;
    (0..extra)
        .map(|i| {
            let size = uniform(rng, r.size);
            // spread start columns so persons do not begin on top of each other
            let col = (i as f64 + 0.5) / extra as f64;
            let (bw, bh) = Pose::Standing.body_extent(size);
            let lo_x = cfg.bounce_margin * w + bw / 2.0;
            let lo_y = cfg.bounce_margin * h + bh / 2.0;
            let cx = (lo_x + col * (w - 2.0 * lo_x)).clamp(lo_x, (w - lo_x).max(lo_x));
            let cy = uniform(rng, (lo_y, (h - lo_y).max(lo_y)));
            let mut motion = Vec::new();
            let mut poses = Vec::new();
            let mut t = 0;
            while t < cfg.n_frames {
                let speed = uniform(rng, r.speed);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                motion.push(MotionSegment { start_frame: t, velocity: (speed * angle.cos(), speed * angle.sin()) });
                if t > 0 && r.pose_change > 0.0 && rng.random_bool(r.pose_change.min(1.0)) {
                    let pose = Pose::ALL[rng.random_range(0..Pose::ALL.len())];
                    poses.push(PoseInterval { start_frame: t, pose });
                }
                t += rng.random_range(r.segment.0..=r.segment.1);
            }
            PersonSpec {
                start: (cx, cy),
                size,
                depth: uniform(rng, r.depth),
                motion,
                poses,
                bounce: true,
                signature: None,
            }
        })
        .collect()
}

fn assign_signatures(cfg: &ScenarioConfig, persons: &mut [PersonSpec], rng: &mut ChaCha8Rng) {
    let free: Vec<u8> = (cfg.background_bins..cfg.bins).map(|b| b as u8).collect();
    let mut pairs: Vec<[u8; 2]> = free.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    // deterministic shuffle
    for i in (1..pairs.len()).rev() {
        let j = rng.random_range(0..=i);
        pairs.swap(i, j);
    }
    for (next, p) in persons.iter_mut().filter(|p| p.signature.is_none()).enumerate() {
        let sig = if pairs.is_empty() {
            [free[0], free[free.len() - 1]]
        } else {
            pairs[next % pairs.len()]
        };
        p.signature = Some(sig);
    }
}

/// Integrates the motion model and returns per-frame (center, pose).
fn trajectory(p: &PersonSpec, cfg: &ScenarioConfig) -> Vec<((f64, f64), Pose)> {
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let (mx, my) = (cfg.bounce_margin * w, cfg.bounce_margin * h);
    let mut c = p.start;
    let mut flip = (1.0, 1.0);
    let mut last_velocity = None;
    let mut out = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let pose = p.pose_at(t);
        if t > 0 {
            let v = p.velocity_at(t);
            if last_velocity != Some(v) {
                flip = (1.0, 1.0);
                last_velocity = Some(v);
            }
            let mut next = (c.0 + flip.0 * v.0, c.1 + flip.1 * v.1);
            if p.bounce {
                let [body, _] = pose.boxes(next, p.size);
                if (body.x1 < mx && flip.0 * v.0 < 0.0) || (body.x2 > w - mx && flip.0 * v.0 > 0.0) {
                    flip.0 = -flip.0;
                    next.0 = c.0 + flip.0 * v.0;
                }
                if (body.y1 < my && flip.1 * v.1 < 0.0) || (body.y2 > h - my && flip.1 * v.1 > 0.0) {
                    flip.1 = -flip.1;
                    next.1 = c.1 + flip.1 * v.1;
                }
            }
            c = next;
        }
        out.push((c, pose));
    }
    out
}

fn visible_fraction(b: &BoundingBox, w: f64, h: f64) -> f64 {
    if b.area() <= 0.0 {
        return 0.0;
    }
    b.clip(w, h).map_or(0.0, |c| c.area() / b.area())
}

fn paint(raster: &mut AppearanceRaster, body: &BoundingBox, sig: [u8; 2]) {
    let x0 = body.x1.max(0.0).floor() as usize;
    let x1 = (body.x2.min(raster.width() as f64).ceil() as usize).min(raster.width());
    let y0 = body.y1.max(0.0).floor() as usize;
    let y1 = (body.y2.min(raster.height() as f64).ceil() as usize).min(raster.height());
    let mid = body.center().1;
    for y in y0..y1 {
        let bin = if (y as f64 + 0.5) < mid { sig[0] } else { sig[1] };
        for x in x0..x1 {
            raster.set(x, y, bin);
        }
    }
}

fn training_split(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<PoseSample> {
    let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let jitter = Normal::new(0.0, cfg.training_jitter.max(0.0)).expect("valid std");
    (0..cfg.training_samples)
        .map(|i| {
            let pose = Pose::ALL[i % Pose::ALL.len()];
            let size = uniform(rng, cfg.random.size);
            let center = (uniform(rng, (0.2 * w, 0.8 * w)), uniform(rng, (0.2 * h, 0.8 * h)));
            let [body, head] = pose.boxes(center, size);
            let (hw, hh) = (head.width(), head.height());
            let mut j = || if cfg.training_jitter > 0.0 { jitter.sample(rng) } else { 0.0 };
            let head = BoundingBox::from_corners(
                head.x1 + j() * hw,
                head.y1 + j() * hh,
                head.x2 + j() * hw,
                head.y2 + j() * hh,
            );
            PoseSample { boxes: vec![body, head] }
        })
        .collect()
}

/// Deterministic function of the configuration.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Simulation> {
    cfg.validate()?;
    let (wi, hi) = cfg.image_size;
    let (w, h) = (wi as f64, hi as f64);
    let mut setup_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut det_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    det_rng.set_stream(1);
    let mut raster_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    raster_rng.set_stream(2);
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(3);

    let mut persons = cfg.persons.clone();
    persons.extend(random_persons(cfg, &mut setup_rng));
    assign_signatures(cfg, &mut persons, &mut setup_rng);
    let paths: Vec<_> = persons.iter().map(|p| trajectory(p, cfg)).collect();

    let background: Vec<u8> = (0..wi * hi)
        .map(|_| raster_rng.random_range(0..cfg.background_bins) as u8)
        .collect();
    let background = AppearanceRaster::new(wi, hi, cfg.bins, background)?;

    let depth_noise = Normal::new(0.0, cfg.depth_noise).expect("valid std");
    let mut ground_truth = GroundTruth::default();
    let mut detections = Vec::with_capacity(cfg.n_frames);
    let mut rasters = Vec::with_capacity(cfg.n_frames);

    for t in 0..cfg.n_frames {
        // unclipped geometry of every person
        let raw: Vec<([BoundingBox; 2], Pose)> = paths
            .iter()
            .zip(&persons)
            .map(|(path, p)| (path[t].1.boxes(path[t].0, p.size), path[t].1))
            .collect();

        let mut frame = Vec::new();
        for (i, (boxes, pose)) in raw.iter().enumerate() {
            let clipped: Vec<Option<BoundingBox>> = boxes.iter().map(|b| b.clip(w, h)).collect();
            if clipped[BODY].is_none() {
                continue;
            }
            let visible: Vec<bool> = boxes.iter().map(|b| visible_fraction(b, w, h) >= 0.5).collect();
            frame.push(GroundTruthPerson {
                identity: i as u64 + 1,
                pose: *pose,
                boxes: clipped
                    .iter()
                    .zip(boxes)
                    .map(|(c, b)| c.unwrap_or(BoundingBox::from_corners(
                        b.x1.clamp(0.0, w),
                        b.y1.clamp(0.0, h),
                        b.x2.clamp(0.0, w),
                        b.y2.clamp(0.0, h),
                    )))
                    .collect(),
                visible,
            });
        }

        let occluded: Vec<bool> = (0..persons.len())
            .map(|i| {
                let b = &raw[i].0[BODY];
                (0..persons.len()).any(|j| {
                    j != i
                        && persons[j].depth < persons[i].depth
                        && b.area() > 0.0
                        && intersection_area(b, &raw[j].0[BODY]) / b.area() > 0.5
                })
            })
            .collect();

        let mut dets = Vec::new();
        for d in &cfg.detectors {
            let region = d.region - 1;
            let noise = Normal::new(0.0, d.noise_std).expect("valid std");
            let tp = Beta::new(d.tp_score.0, d.tp_score.1).expect("valid beta");
            for gt in &frame {
                if !gt.visible[region] {
                    continue;
                }
                let i = (gt.identity - 1) as usize;
                let miss = if occluded[i] { (d.miss_rate * cfg.occlusion_factor).min(1.0) } else { d.miss_rate };
                if miss > 0.0 && det_rng.random_bool(miss) {
                    continue;
                }
                let b = gt.boxes[region];
                let b = if d.noise_std > 0.0 {
                    let n: [f64; 4] = std::array::from_fn(|_| noise.sample(&mut det_rng));
                    BoundingBox::from_corners(b.x1 + n[0], b.y1 + n[1], b.x2 + n[2], b.y2 + n[3]).clip(w, h)
                } else {
                    Some(b)
                };
                let score = tp.sample(&mut det_rng).max(1e-6);
                let mean = persons[i].depth + if cfg.depth_noise > 0.0 { depth_noise.sample(&mut det_rng) } else { 0.0 };
                if let Some(bbox) = b.filter(|b| b.area() > 0.0) {
                    dets.push(Detection {
                        bbox,
                        score,
                        detector_id: d.id,
                        depth: DepthStats::new(mean, cfg.depth_std),
                    });
                }
            }
            if d.fp_rate > 0.0 {
                let count = Poisson::new(d.fp_rate).expect("valid rate").sample(&mut det_rng) as usize;
                let fp = Beta::new(d.fp_score.0, d.fp_score.1).expect("valid beta");
                for _ in 0..count {
                    let size = uniform(&mut det_rng, cfg.random.size);
                    let (bw, bh) = if region == BODY {
                        Pose::Standing.body_extent(size)
                    } else {
                        (0.3 * 0.4 * size, size / 7.0)
                    };
                    let cx = det_rng.random_range(bw / 2.0..(w - bw / 2.0).max(bw / 2.0 + 1e-9));
                    let cy = det_rng.random_range(bh / 2.0..(h - bh / 2.0).max(bh / 2.0 + 1e-9));
                    let bbox = BoundingBox::from_center(cx, cy, bw, bh);
                    let score = fp.sample(&mut det_rng).max(1e-6);
                    let mean = uniform(&mut det_rng, cfg.random.depth);
                    if let Some(bbox) = bbox.clip(w, h) {
                        dets.push(Detection {
                            bbox,
                            score,
                            detector_id: d.id,
                            depth: DepthStats::new(mean, 2.0 * cfg.depth_std),
                        });
                    }
                }
            }
        }

        let mut raster = background.clone();
        let mut order: Vec<usize> = (0..persons.len()).collect();
        order.sort_by(|&a, &b| persons[b].depth.total_cmp(&persons[a].depth).then(a.cmp(&b)));
        for i in order {
            paint(&mut raster, &raw[i].0[BODY], persons[i].signature.expect("assigned"));
        }

        ground_truth.frames.push(frame);
        detections.push(dets);
        rasters.push(raster);
    }

    Ok(Simulation {
        ground_truth,
        detections,
        rasters,
        training: training_split(cfg, &mut train_rng),
        persons,
    })
}
