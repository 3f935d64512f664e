//! The six cost terms of the per-frame energy and their analytic gradients.
//!
//! Every term works in normalized image coordinates (pixels divided by the
//! image width or height). The total is `sum lambda_i * scale_i * E_i`; the
//! per-term scales bring the raw terms to comparable magnitude so that unit
//! weights are a sensible default.

use serde::{Deserialize, Serialize};

use crate::appearance::{extract_feature_with_jacobian, AppearanceFeature, AppearanceRaster};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::grouping::DetectionGroup;
use crate::spatial::{RegionMap, SpatialModel};

/// Floor on squared same-region distances inside the exclusion term.
pub const EXCLUSION_FLOOR: f64 = 1e-8;

/// Smooth minimum `sum z e^{alpha z} / sum e^{alpha z}` for `alpha < 0`.
pub fn softmin(values: &[f64], alpha: f64) -> Result<f64> {
    softmin_with_grad(values, alpha).map(|(s, _)| s)
}

/// Smooth minimum and its partial derivatives w.r.t. every input.
pub fn softmin_with_grad(values: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        return Err(Error::EmptySoftmin);
    }
    // Shift by the minimum: alpha < 0 makes it the largest exponent.
    let weights: Vec<f64> = values.iter().map(|&z| (alpha * (z - lo)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let s = lo + values.iter().zip(&p).map(|(z, p)| (z - lo) * p).sum::<f64>();
    let grad = values
        .iter()
        .zip(&p)
        .map(|(z, p)| p * (1.0 + alpha * (z - s)))
        .collect();
    Ok((s, grad))
}

/// Box coordinates of every person and region, person-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSolution {
    regions: usize,
    coords: Vec<f64>,
}

impl FrameSolution {
    pub fn empty(regions: usize) -> Self {
        Self { regions, coords: Vec::new() }
    }

    pub fn from_persons(regions: usize, persons: &[Vec<BoundingBox>]) -> Self {
        let mut s = Self::empty(regions);
        for p in persons {
            s.push_person(p);
        }
        s
    }

    pub fn from_coords(regions: usize, coords: Vec<f64>) -> Self {
        assert!(regions > 0 && coords.len().is_multiple_of(4 * regions));
        Self { regions, coords }
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn persons(&self) -> usize {
        self.coords.len() / (4 * self.regions)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn offset(&self, m: usize, l: usize) -> usize {
        (m * self.regions + l) * 4
    }

    pub fn box_coords(&self, m: usize, l: usize) -> [f64; 4] {
        let o = self.offset(m, l);
        [self.coords[o], self.coords[o + 1], self.coords[o + 2], self.coords[o + 3]]
    }

    pub fn bbox(&self, m: usize, l: usize) -> BoundingBox {
        BoundingBox::from_array(self.box_coords(m, l))
    }

    pub fn person(&self, m: usize) -> Vec<BoundingBox> {
        (0..self.regions).map(|l| self.bbox(m, l)).collect()
    }

    pub fn person_coords(&self, m: usize) -> &[f64] {
        let o = self.offset(m, 0);
        &self.coords[o..o + 4 * self.regions]
    }

    pub fn push_person(&mut self, boxes: &[BoundingBox]) {
        assert_eq!(boxes.len(), self.regions);
        self.coords.extend(boxes.iter().flat_map(|b| b.to_array()));
    }

    pub fn push_person_coords(&mut self, coords: &[f64]) {
        assert_eq!(coords.len(), 4 * self.regions);
        self.coords.extend_from_slice(coords);
    }

    pub fn truncate(&mut self, persons: usize) {
        self.coords.truncate(persons * 4 * self.regions);
    }

    /// Persons' boxes all have positive width and height of at least `min_side`.
    pub fn is_well_formed(&self, min_side: f64) -> bool {
        self.coords
            .chunks_exact(4)
            .all(|b| b.iter().all(|v| v.is_finite()) && b[2] - b[0] >= min_side && b[3] - b[1] >= min_side)
    }

    pub fn map_boxes(&self, f: impl Fn(&BoundingBox) -> BoundingBox) -> Self {
        let coords = self
            .coords
            .chunks_exact(4)
            .flat_map(|c| f(&BoundingBox::from_array([c[0], c[1], c[2], c[3]])).to_array())
            .collect();
        Self { regions: self.regions, coords }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermWeights {
    pub det: f64,
    pub spa: f64,
    pub exc: f64,
    pub reg: f64,
    pub tra: f64,
    pub app: f64,
}

impl TermWeights {
    pub const fn uniform(v: f64) -> Self {
        Self { det: v, spa: v, exc: v, reg: v, tra: v, app: v }
    }

    fn as_array(&self) -> [(&'static str, f64); 6] {
        [
            ("det", self.det),
            ("spa", self.spa),
            ("exc", self.exc),
            ("reg", self.reg),
            ("tra", self.tra),
            ("app", self.app),
        ]
    }

    fn mul(&self, o: &Self) -> Self {
        Self {
            det: self.det * o.det,
            spa: self.spa * o.spa,
            exc: self.exc * o.exc,
            reg: self.reg * o.reg,
            tra: self.tra * o.tra,
            app: self.app * o.app,
        }
    }
}

impl Default for TermWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

/// Normalization applied to each raw term before weighting.
pub const DEFAULT_TERM_SCALES: TermWeights = TermWeights {
    det: 2500.0,
    spa: 1000.0,
    exc: 1e-3,
    reg: 1.0,
    tra: 1000.0,
    app: 10.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// Softmin sharpness, negative.
    pub alpha: f64,
    pub lambdas: TermWeights,
    pub scales: TermWeights,
    pub image_size: (f64, f64),
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            alpha: -2000.0,
            lambdas: TermWeights::default(),
            scales: DEFAULT_TERM_SCALES,
            image_size: (320.0, 240.0),
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha < 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("energy.alpha", "must be a finite negative number"));
        }
        for (name, v) in self.lambdas.as_array() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("energy.lambdas.{name}"), "must be non-negative"));
            }
        }
        for (name, v) in self.scales.as_array() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("energy.scales.{name}"), "must be non-negative"));
            }
        }
        let (w, h) = self.image_size;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::config("image_size", "width and height must be positive"));
        }
        Ok(())
    }

    /// Effective multiplier of every term.
    pub fn effective(&self) -> TermWeights {
        self.lambdas.mul(&self.scales)
    }
}

/// A detection in normalized coordinates, tagged with the region it informs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMember {
    pub region: usize,
    pub weight: f64,
    pub coords: [f64; 4],
}

/// Tracked state carried over from the previous frame, restricted to the
/// persons still in view. Indices match the first persons of the current
/// solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousFrame {
    pub solution: FrameSolution,
    pub velocities: FrameSolution,
    /// Feature of each surviving person's region boxes on the previous
    /// frame's raster.
    pub features: Vec<Vec<AppearanceFeature>>,
}

impl PreviousFrame {
    pub fn survivors(&self) -> usize {
        self.solution.persons()
    }
}

pub struct FrameContext<'a> {
    pub groups: Vec<Vec<GroupMember>>,
    pub model: &'a SpatialModel,
    pub prev: Option<PreviousFrame>,
    pub raster: Option<&'a AppearanceRaster>,
    pub image_size: (f64, f64),
}

impl<'a> FrameContext<'a> {
    /// Normalizes pixel-space groups. Members from detectors absent from
    /// `region_map` are rejected.
    pub fn new(
        groups: &[DetectionGroup],
        region_map: &RegionMap,
        model: &'a SpatialModel,
        image_size: (f64, f64),
    ) -> Result<Self> {
        let (w, h) = image_size;
        let groups = groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|d| {
                        let region = region_map.region_of(d.detector_id).ok_or_else(|| {
                            Error::config("detectors", format!("detector {} has no region", d.detector_id))
                        })?;
                        Ok(GroupMember {
                            region,
                            weight: d.score,
                            coords: d.bbox.normalize(w, h).to_array(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            groups,
            model,
            prev: None,
            raster: None,
            image_size,
        })
    }

    pub fn with_previous(mut self, prev: Option<PreviousFrame>) -> Self {
        self.prev = prev;
        self
    }

    pub fn with_raster(mut self, raster: Option<&'a AppearanceRaster>) -> Self {
        self.raster = raster;
        self
    }

    pub fn survivors(&self) -> usize {
        self.prev.as_ref().map_or(0, PreviousFrame::survivors)
    }
}

/// Which persons the separable terms are evaluated for. Coupled terms
/// (detection matching and exclusion) always cover every person.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Focus {
    All,
    Person(usize),
}

impl Focus {
    fn includes(&self, m: usize) -> bool {
        match *self {
            Focus::All => true,
            Focus::Person(p) => p == m,
        }
    }
}

fn add_scaled(grad: &mut Option<&mut [f64]>, offset: usize, v: [f64; 4], scale: f64) {
    if let Some(g) = grad.as_deref_mut() {
        for k in 0..4 {
            g[offset + k] += scale * v[k];
        }
    }
}

fn sq(v: [f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn diff(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

/// Detection matching: per group, softmin over persons of the weighted
/// squared distance between each member and the person's matching region.
/// Infinite when groups exist but no person does.
pub fn e_det(sol: &FrameSolution, ctx: &FrameContext, alpha: f64, grad: Option<&mut [f64]>, weight: f64) -> f64 {
    let mut grad = grad;
    if ctx.groups.is_empty() {
        return 0.0;
    }
    if sol.persons() == 0 {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for group in &ctx.groups {
        let costs: Vec<f64> = (0..sol.persons())
            .map(|m| {
                group
                    .iter()
                    .map(|d| d.weight * sq(diff(d.coords, sol.box_coords(m, d.region))))
                    .sum()
            })
            .collect();
        let (s, ds) = softmin_with_grad(&costs, alpha).expect("non-empty");
        total += s;
        if grad.is_some() {
            for (m, dsm) in ds.iter().enumerate() {
                for d in group {
                    let r = diff(sol.box_coords(m, d.region), d.coords);
                    add_scaled(&mut grad, sol.offset(m, d.region), r, weight * dsm * 2.0 * d.weight);
                }
            }
        }
    }
    total
}

/// Deformable spatial consistency: per person, softmin over subcategories of
/// the summed projection residual over ordered region pairs.
pub fn e_spa(
    sol: &FrameSolution,
    ctx: &FrameContext,
    alpha: f64,
    focus: Focus,
    grad: Option<&mut [f64]>,
    weight: f64,
) -> f64 {
    let mut grad = grad;
    let model = ctx.model;
    let regions = sol.regions();
    if regions < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for m in (0..sol.persons()).filter(|&m| focus.includes(m)) {
        let boxes: Vec<[f64; 4]> = (0..regions).map(|l| sol.box_coords(m, l)).collect();
        let residuals = model.residuals(&boxes);
        let (s, ds) = softmin_with_grad(&residuals, alpha).expect("at least one subcategory");
        total += s;
        if grad.is_none() {
            continue;
        }
        for (c, dsc) in ds.iter().enumerate() {
            let k = weight * dsc * 2.0;
            for from in 0..regions {
                for to in (0..regions).filter(|&to| to != from) {
                    let a = model.projection(c, from, to);
                    let r = diff(a.apply(&boxes[from]), boxes[to]);
                    // d/dx_from = A_lin^T r, d/dx_to = -r
                    let mut g_from = [0.0; 4];
                    for (j, gj) in g_from.iter_mut().enumerate() {
                        *gj = (0..4).map(|i| a.0[i][j] * r[i]).sum();
                    }
                    add_scaled(&mut grad, sol.offset(m, from), g_from, k);
                    add_scaled(&mut grad, sol.offset(m, to), r, -k);
                }
            }
        }
    }
    total
}

/// Mutual exclusion over ordered person pairs, per region.
pub fn e_exc(sol: &FrameSolution, grad: Option<&mut [f64]>, weight: f64) -> f64 {
    let mut grad = grad;
    let n = sol.persons();
    let mut total = 0.0;
    for l in 0..sol.regions() {
        for m in 0..n {
            for q in (m + 1)..n {
                let d = diff(sol.box_coords(m, l), sol.box_coords(q, l));
                let d2 = sq(d);
                if d2 <= EXCLUSION_FLOOR {
                    total += 2.0 / EXCLUSION_FLOOR;
                    continue;
                }
                // both orders of the pair
                total += 2.0 / d2;
                let k = weight * 2.0 * (-2.0) / (d2 * d2);
                add_scaled(&mut grad, sol.offset(m, l), d, k);
                add_scaled(&mut grad, sol.offset(q, l), d, -k);
            }
        }
    }
    total
}

/// Person-count regularizer; constant w.r.t. the boxes.
pub fn e_reg(sol: &FrameSolution) -> f64 {
    sol.persons() as f64
}

/// Trajectory consistency for persons carried over from the previous frame.
pub fn e_tra(sol: &FrameSolution, ctx: &FrameContext, focus: Focus, grad: Option<&mut [f64]>, weight: f64) -> f64 {
    let mut grad = grad;
    let Some(prev) = &ctx.prev else { return 0.0 };
    let mut total = 0.0;
    for m in (0..prev.survivors().min(sol.persons())).filter(|&m| focus.includes(m)) {
        for l in 0..sol.regions() {
            let v = diff(sol.box_coords(m, l), prev.solution.box_coords(m, l));
            let r = diff(v, prev.velocities.box_coords(m, l));
            total += sq(r);
            add_scaled(&mut grad, sol.offset(m, l), r, weight * 2.0);
        }
    }
    total
}

/// Appearance consistency: negative inner product between each surviving
/// person's previous features and the features under its current boxes.
/// Infinite if a box has collapsed.
pub fn e_app(sol: &FrameSolution, ctx: &FrameContext, focus: Focus, grad: Option<&mut [f64]>, weight: f64) -> f64 {
    let mut grad = grad;
    let (Some(prev), Some(raster)) = (&ctx.prev, ctx.raster) else {
        return 0.0;
    };
    let (w, h) = ctx.image_size;
    let scale = [w, h, w, h];
    let mut total = 0.0;
    for m in (0..prev.survivors().min(sol.persons())).filter(|&m| focus.includes(m)) {
        for l in 0..sol.regions() {
            let q = &prev.features[m][l];
            if q.is_zero() {
                continue;
            }
            let pixel = sol.bbox(m, l).denormalize(w, h);
            let Ok((psi, jac)) = extract_feature_with_jacobian(raster, &pixel) else {
                return f64::INFINITY;
            };
            total -= q.dot(&psi);
            if grad.is_some() {
                let mut g = [0.0; 4];
                for (qb, row) in q.0.iter().zip(&jac) {
                    for k in 0..4 {
                        g[k] -= qb * row[k] * scale[k];
                    }
                }
                add_scaled(&mut grad, sol.offset(m, l), g, weight);
            }
        }
    }
    total
}

/// Raw value of every term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TermValues {
    pub det: f64,
    pub spa: f64,
    pub exc: f64,
    pub reg: f64,
    pub tra: f64,
    pub app: f64,
}

/// Evaluates the weighted energy; `grad` (if given) must hold one entry per
/// coordinate and receives the gradient (overwritten).
pub fn evaluate(
    sol: &FrameSolution,
    ctx: &FrameContext,
    cfg: &EnergyConfig,
    focus: Focus,
    grad: Option<&mut [f64]>,
) -> (f64, TermValues) {
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        assert_eq!(g.len(), sol.coords().len());
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let k = cfg.effective();
    let mut t = TermValues::default();
    // Terms are summed in fixed order; zero weights are skipped entirely.
    if k.det > 0.0 {
        t.det = e_det(sol, ctx, cfg.alpha, grad.as_deref_mut(), k.det);
    }
    if k.spa > 0.0 {
        t.spa = e_spa(sol, ctx, cfg.alpha, focus, grad.as_deref_mut(), k.spa);
    }
    if k.exc > 0.0 {
        t.exc = e_exc(sol, grad.as_deref_mut(), k.exc);
    }
    t.reg = e_reg(sol);
    if ctx.prev.is_some() {
        if k.tra > 0.0 {
            t.tra = e_tra(sol, ctx, focus, grad.as_deref_mut(), k.tra);
        }
        if k.app > 0.0 {
            t.app = e_app(sol, ctx, focus, grad, k.app);
        }
    }
    let weighted = |w: f64, v: f64| if w > 0.0 { w * v } else { 0.0 };
    let total = weighted(k.det, t.det)
        + weighted(k.spa, t.spa)
        + weighted(k.exc, t.exc)
        + weighted(k.reg, t.reg)
        + weighted(k.tra, t.tra)
        + weighted(k.app, t.app);
    (total, t)
}

/// Weighted total over all persons and its gradient.
pub fn total_energy(sol: &FrameSolution, ctx: &FrameContext, cfg: &EnergyConfig) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; sol.coords().len()];
    let (value, _) = evaluate(sol, ctx, cfg, Focus::All, Some(&mut grad));
    (value, grad)
}
