//! Deformable spatial relationship between regions of interest.
//!
//! Training samples are clustered into pose subcategories on a translation-
//! and scale-invariant pose feature, then one affine map per ordered region
//! pair and subcategory is fitted by ridge regression in normalized image
//! coordinates. The maps predict where the other regions of a person should
//! sit given one region's box.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::kmeans::kmeans;

/// Affine map on a box 4-vector, stored as a 4x5 matrix acting on
/// `[x1, y1, x2, y2, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection(pub [[f64; 5]; 4]);

impl Projection {
    pub fn identity() -> Self {
        let mut m = [[0.0; 5]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Projection(m)
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        let mut p = Self::identity();
        p.0[0][4] = dx;
        p.0[1][4] = dy;
        p.0[2][4] = dx;
        p.0[3][4] = dy;
        p
    }

    pub fn apply(&self, x: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, row) in out.iter_mut().zip(&self.0) {
            *o = row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3] + row[4];
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn row_major(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    fn from_row_major(v: &[f64]) -> Option<Self> {
        if v.len() != 20 || v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let mut m = [[0.0; 5]; 4];
        for (i, x) in v.iter().enumerate() {
            m[i / 5][i % 5] = *x;
        }
        Some(Projection(m))
    }
}

/// Detector id to region index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMap(pub BTreeMap<u32, usize>);

impl RegionMap {
    pub fn region_of(&self, detector_id: u32) -> Option<usize> {
        self.0.get(&detector_id).copied()
    }
}

/// One annotated person: a box for every region, indexed by region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub boxes: Vec<BoundingBox>,
}

/// Per non-anchor region: center offset normalized by the anchor's width and
/// height, and the log of the linear size ratio.
pub fn pose_feature(sample: &PoseSample, anchor: usize) -> Result<Vec<f64>> {
    let a = sample
        .boxes
        .get(anchor)
        .ok_or_else(|| Error::Spatial(format!("anchor region {anchor} missing from sample")))?;
    let (aw, ah) = (a.width(), a.height());
    if aw <= 0.0 || ah <= 0.0 {
        return Err(Error::Spatial("anchor box has zero area".into()));
    }
    let (acx, acy) = a.center();
    let mut feature = Vec::with_capacity(3 * (sample.boxes.len() - 1));
    for (r, b) in sample.boxes.iter().enumerate() {
        if r == anchor {
            continue;
        }
        let (cx, cy) = b.center();
        let ratio = (b.area() / (aw * ah)).max(1e-12);
        feature.extend([(cx - acx) / aw, (cy - acy) / ah, 0.5 * ratio.ln()]);
    }
    Ok(feature)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub clusters: usize,
    pub ridge: f64,
    pub anchor_region: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            clusters: 4,
            ridge: 1e-4,
            anchor_region: 0,
            seed: 0,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Subcategory of every training sample.
    pub assignments: Vec<usize>,
    pub kmeans_objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialModel {
    clusters: usize,
    regions: usize,
    ridge: f64,
    anchor_region: usize,
    image_size: (f64, f64),
    centroids: Vec<Vec<f64>>,
    /// Indexed by `(c * regions + from) * regions + to`; diagonal entries are
    /// identities and unused.
    projections: Vec<Projection>,
}

impl SpatialModel {
    /// Every projection is the identity.
    pub fn identity(regions: usize, clusters: usize, image_size: (f64, f64)) -> Self {
        Self {
            clusters,
            regions,
            ridge: 0.0,
            anchor_region: 0,
            image_size,
            centroids: vec![vec![0.0; 3 * regions.saturating_sub(1)]; clusters],
            projections: vec![Projection::identity(); clusters * regions * regions],
        }
    }

    /// Builds a model from explicit maps, `maps[c][from][to]` in normalized
    /// coordinates.
    pub fn from_projections(maps: Vec<Vec<Vec<Projection>>>, image_size: (f64, f64)) -> Self {
        let clusters = maps.len();
        let regions = maps.first().map_or(0, |m| m.len());
        let mut model = Self::identity(regions, clusters, image_size);
        for (c, per_from) in maps.iter().enumerate() {
            for (from, per_to) in per_from.iter().enumerate() {
                for (to, p) in per_to.iter().enumerate() {
                    let i = model.index(c, from, to);
                    model.projections[i] = *p;
                }
            }
        }
        model
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn image_size(&self) -> (f64, f64) {
        self.image_size
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    fn index(&self, c: usize, from: usize, to: usize) -> usize {
        (c * self.regions + from) * self.regions + to
    }

    /// Map from region `from` to region `to` under subcategory `c`, in
    /// normalized coordinates.
    pub fn projection(&self, c: usize, from: usize, to: usize) -> &Projection {
        &self.projections[self.index(c, from, to)]
    }

    pub fn fit(samples: &[PoseSample], opts: &FitOptions, image_size: (f64, f64)) -> Result<Self> {
        Self::fit_with_report(samples, opts, image_size).map(|(m, _)| m)
    }

    pub fn fit_with_report(
        samples: &[PoseSample],
        opts: &FitOptions,
        image_size: (f64, f64),
    ) -> Result<(Self, FitReport)> {
        let c_count = opts.clusters;
        if c_count == 0 {
            return Err(Error::Spatial("at least one subcategory is required".into()));
        }
        if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
            return Err(Error::Spatial("ridge must be a non-negative number".into()));
        }
        if image_size.0 <= 0.0 || image_size.1 <= 0.0 {
            return Err(Error::Spatial("image size must be positive".into()));
        }
        let regions = samples.first().map_or(0, |s| s.boxes.len());
        if regions == 0 {
            return Err(Error::Spatial("no training samples".into()));
        }
        if let Some(bad) = samples.iter().position(|s| s.boxes.len() != regions) {
            return Err(Error::Spatial(format!(
                "sample {bad} has {} regions, expected {regions}",
                samples[bad].boxes.len()
            )));
        }
        if samples.iter().flat_map(|s| &s.boxes).any(|b| !b.is_valid()) {
            return Err(Error::Spatial("training sample contains an invalid box".into()));
        }
        if opts.anchor_region >= regions {
            return Err(Error::Spatial(format!("anchor region {} out of range", opts.anchor_region)));
        }

        let features = samples
            .iter()
            .map(|s| pose_feature(s, opts.anchor_region))
            .collect::<Result<Vec<_>>>()?;
        let distinct: BTreeSet<Vec<u64>> = features
            .iter()
            .map(|f| f.iter().map(|v| v.to_bits()).collect())
            .collect();
        if distinct.len() < c_count {
            return Err(Error::Spatial(format!(
                "{} distinct pose samples cannot form {c_count} subcategories",
                distinct.len()
            )));
        }

        let km = kmeans(&features, c_count, opts.seed, opts.max_iter);
        let (w, h) = image_size;
        let normalized: Vec<Vec<[f64; 4]>> = samples
            .iter()
            .map(|s| s.boxes.iter().map(|b| b.normalize(w, h).to_array()).collect())
            .collect();

        let mut model = Self {
            clusters: c_count,
            regions,
            ridge: opts.ridge,
            anchor_region: opts.anchor_region,
            image_size,
            centroids: km.centroids.clone(),
            projections: vec![Projection::identity(); c_count * regions * regions],
        };
        for c in 0..c_count {
            let members: Vec<&Vec<[f64; 4]>> = normalized
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(s, _)| s)
                .collect();
            for from in 0..regions {
                for to in (0..regions).filter(|&to| to != from) {
                    let pairs: Vec<([f64; 4], [f64; 4])> =
                        members.iter().map(|s| (s[from], s[to])).collect();
                    let i = model.index(c, from, to);
                    model.projections[i] = ridge_regression(&pairs, opts.ridge)?;
                }
            }
        }
        Ok((
            model,
            FitReport {
                assignments: km.assignments,
                kmeans_objective: km.objective,
            },
        ))
    }

    /// Applies the `(c, from, to)` map to a pixel-space box.
    pub fn project(&self, c: usize, from: usize, to: usize, bbox: &BoundingBox) -> BoundingBox {
        let (w, h) = self.image_size;
        let out = self.projection(c, from, to).apply(&bbox.normalize(w, h).to_array());
        BoundingBox::from_corners(out[0], out[1], out[2], out[3]).denormalize(w, h)
    }

    /// Full candidate person predicted from one detection under subcategory
    /// `c`. The detection's own region keeps its box.
    pub fn predict_configuration(
        &self,
        c: usize,
        detection: &Detection,
        region_map: &RegionMap,
    ) -> Result<Vec<BoundingBox>> {
        let from = region_map.region_of(detection.detector_id).ok_or_else(|| {
            Error::config("detectors", format!("detector {} has no region", detection.detector_id))
        })?;
        Ok((0..self.regions)
            .map(|to| {
                if to == from {
                    detection.bbox
                } else {
                    self.project(c, from, to, &detection.bbox)
                }
            })
            .collect())
    }

    /// Summed squared residual of every ordered region pair under each
    /// subcategory, for one person in normalized coordinates.
    pub fn residuals(&self, boxes: &[[f64; 4]]) -> Vec<f64> {
        (0..self.clusters)
            .map(|c| {
                let mut r = 0.0;
                for from in 0..self.regions {
                    for to in (0..self.regions).filter(|&to| to != from) {
                        let pred = self.projection(c, from, to).apply(&boxes[from]);
                        r += pred.iter().zip(&boxes[to]).map(|(p, x)| (p - x) * (p - x)).sum::<f64>();
                    }
                }
                r
            })
            .collect()
    }

    pub fn to_document(&self) -> SpatialModelDocument {
        let mut projections = BTreeMap::new();
        for c in 0..self.clusters {
            for from in 0..self.regions {
                for to in (0..self.regions).filter(|&to| to != from) {
                    projections.insert(
                        format!("{}/{}/{}", c + 1, from + 1, to + 1),
                        self.projection(c, from, to).row_major(),
                    );
                }
            }
        }
        SpatialModelDocument {
            clusters: self.clusters,
            regions: self.regions,
            ridge: self.ridge,
            anchor_region: self.anchor_region + 1,
            image_size: [self.image_size.0, self.image_size.1],
            centroids: self.centroids.clone(),
            projections,
        }
    }

    pub fn from_document(doc: &SpatialModelDocument) -> Result<Self> {
        let bad = |m: String| Error::Spatial(m);
        if doc.clusters == 0 || doc.regions == 0 {
            return Err(bad("C and regions must be positive".into()));
        }
        if doc.anchor_region == 0 || doc.anchor_region > doc.regions {
            return Err(bad(format!("anchor_region {} out of range", doc.anchor_region)));
        }
        let mut model = Self::identity(doc.regions, doc.clusters, (doc.image_size[0], doc.image_size[1]));
        model.ridge = doc.ridge;
        model.anchor_region = doc.anchor_region - 1;
        model.centroids = doc.centroids.clone();
        for c in 0..doc.clusters {
            for from in 0..doc.regions {
                for to in (0..doc.regions).filter(|&to| to != from) {
                    let key = format!("{}/{}/{}", c + 1, from + 1, to + 1);
                    let v = doc
                        .projections
                        .get(&key)
                        .ok_or_else(|| bad(format!("projection {key} missing")))?;
                    let p = Projection::from_row_major(v)
                        .ok_or_else(|| bad(format!("projection {key} must hold 20 finite numbers")))?;
                    let i = model.index(c, from, to);
                    model.projections[i] = p;
                }
            }
        }
        Ok(model)
    }
}

/// JSON form of a fitted model. Region and subcategory numbers are 1-based;
/// projections are keyed `"c/l/l'"` and stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialModelDocument {
    #[serde(rename = "C")]
    pub clusters: usize,
    pub regions: usize,
    pub ridge: f64,
    pub anchor_region: usize,
    pub image_size: [f64; 2],
    pub centroids: Vec<Vec<f64>>,
    pub projections: BTreeMap<String, Vec<f64>>,
}

/// Minimizes `sum ||A [x; 1] - y||^2 + ridge ||A||_F^2`.
fn ridge_regression(pairs: &[([f64; 4], [f64; 4])], ridge: f64) -> Result<Projection> {
    let mut gram = SMatrix::<f64, 5, 5>::zeros();
    let mut cross = SMatrix::<f64, 5, 4>::zeros();
    for (x, y) in pairs {
        let xb = SVector::<f64, 5>::new(x[0], x[1], x[2], x[3], 1.0);
        let yv = SVector::<f64, 4>::new(y[0], y[1], y[2], y[3]);
        gram += xb * xb.transpose();
        cross += xb * yv.transpose();
    }
    gram += SMatrix::<f64, 5, 5>::identity() * ridge;
    let solution = match gram.cholesky() {
        Some(ch) => ch.solve(&cross),
        None => gram
            .svd(true, true)
            .solve(&cross, 1e-12)
            .map_err(|e| Error::Spatial(format!("regression failed: {e}")))?,
    };
    let mut m = [[0.0; 5]; 4];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = solution[(c, r)];
        }
    }
    let p = Projection(m);
    if p.0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Spatial("regression produced non-finite entries".into()));
    }
    Ok(p)
}
