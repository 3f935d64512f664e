//! Differentiable histogram appearance features and the lifetime appearance
//! bank used for identity re-acquisition.
//!
//! A feature is the Gaussian-weighted bin histogram of a raster under a box:
//! the Gaussian sits at the box center with per-axis standard deviation equal
//! to half the side length. Each axis kernel is cut at three standard
//! deviations with a tangent correction so the weights and their first
//! derivatives vanish continuously at the cut; the histogram is then
//! L2-normalized. The Gaussian's normalizing constant is dropped since it
//! cancels under normalization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Cut-off of the per-axis kernel, in standard deviations.
pub const KERNEL_CUTOFF_SIGMAS: f64 = 3.0;

/// Per-pixel bin indices (0-based) of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppearanceRaster {
    width: usize,
    height: usize,
    bins: usize,
    data: Vec<u8>,
}

impl AppearanceRaster {
    pub fn new(width: usize, height: usize, bins: usize, data: Vec<u8>) -> Result<Self> {
        if bins == 0 || bins > 256 {
            return Err(Error::config("appearance.bins", "must lie in [1, 256]"));
        }
        if data.len() != width * height {
            return Err(Error::config("raster", "pixel count does not match width x height"));
        }
        if data.iter().any(|&b| b as usize >= bins) {
            return Err(Error::config("raster", "pixel bin index out of range"));
        }
        Ok(Self { width, height, bins, data })
    }

    pub fn filled(width: usize, height: usize, bins: usize, bin: u8) -> Self {
        Self::new(width, height, bins, vec![bin; width * height]).expect("valid fill")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn bin_at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, bin: u8) {
        debug_assert!((bin as usize) < self.bins);
        self.data[y * self.width + x] = bin;
    }
}

/// Unit-norm histogram, or the zero vector for boxes off the raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceFeature(pub Vec<f64>);

impl AppearanceFeature {
    pub fn zero(bins: usize) -> Self {
        Self(vec![0.0; bins])
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|v| *v /= n);
        }
        self
    }
}

/// Mean and diagonal covariance of the weighting Gaussian for a box.
pub fn gaussian_moments(b: &BoundingBox) -> ((f64, f64), (f64, f64)) {
    let mu = (0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2));
    let sx = (b.x2 - b.x1) / 2.0;
    let sy = (b.y2 - b.y1) / 2.0;
    (mu, (sx * sx, sy * sy))
}

/// Kernel weights along one axis: value, d/dmu, d/dsigma per pixel in
/// `[lo, lo + len)`.
struct AxisKernel {
    lo: usize,
    value: Vec<f64>,
    d_mu: Vec<f64>,
    d_sigma: Vec<f64>,
}

fn axis_kernel(mu: f64, sigma: f64, extent: usize) -> Option<AxisKernel> {
    let reach = KERNEL_CUTOFF_SIGMAS * sigma;
    let lo = (mu - reach - 0.5).ceil().max(0.0);
    let hi = (mu + reach - 0.5).floor().min(extent as f64 - 1.0);
    if hi < lo {
        return None;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let s_cut = 0.5 * KERNEL_CUTOFF_SIGMAS * KERNEL_CUTOFF_SIGMAS;
    let e_cut = (-s_cut).exp();
    let n = hi - lo + 1;
    let mut k = AxisKernel {
        lo,
        value: Vec::with_capacity(n),
        d_mu: Vec::with_capacity(n),
        d_sigma: Vec::with_capacity(n),
    };
    for i in lo..=hi {
        let r = (i as f64 + 0.5 - mu) / sigma;
        let s = 0.5 * r * r;
        if s >= s_cut {
            k.value.push(0.0);
            k.d_mu.push(0.0);
            k.d_sigma.push(0.0);
            continue;
        }
        let e = (-s).exp();
        // e^{-s} minus its tangent line at the cut-off
        k.value.push(e - e_cut * (1.0 + s_cut - s));
        let slope = e - e_cut;
        k.d_mu.push(slope * r / sigma);
        k.d_sigma.push(slope * r * r / sigma);
    }
    Some(k)
}

fn outside(raster: &AppearanceRaster, b: &BoundingBox) -> bool {
    b.x2 <= 0.0 || b.y2 <= 0.0 || b.x1 >= raster.width as f64 || b.y1 >= raster.height as f64
}

/// Unnormalized histogram and, optionally, its Jacobian w.r.t. the corners.
fn raw_histogram(
    raster: &AppearanceRaster,
    b: &BoundingBox,
    with_jacobian: bool,
) -> Result<Option<(Vec<f64>, Vec<[f64; 4]>)>> {
    if !b.is_valid() || b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    if outside(raster, b) {
        return Ok(None);
    }
    let ((mx, my), _) = gaussian_moments(b);
    let (sx, sy) = (b.width() / 2.0, b.height() / 2.0);
    let (Some(kx), Some(ky)) = (axis_kernel(mx, sx, raster.width), axis_kernel(my, sy, raster.height)) else {
        return Ok(None);
    };
    let nb = raster.bins;
    let mut u = vec![0.0; nb];
    // d u / d (mu_x, sigma_x, mu_y, sigma_y)
    let mut du = vec![[0.0; 4]; if with_jacobian { nb } else { 0 }];
    let mut row_v = vec![0.0; nb];
    let mut row_m = vec![0.0; nb];
    let mut row_s = vec![0.0; nb];
    for (jy, &gy) in ky.value.iter().enumerate() {
        let y = ky.lo + jy;
        let row = &raster.data[y * raster.width + kx.lo..y * raster.width + kx.lo + kx.value.len()];
        row_v.iter_mut().for_each(|v| *v = 0.0);
        if with_jacobian {
            row_m.iter_mut().for_each(|v| *v = 0.0);
            row_s.iter_mut().for_each(|v| *v = 0.0);
            for (ix, &bin) in row.iter().enumerate() {
                let bin = bin as usize;
                row_v[bin] += kx.value[ix];
                row_m[bin] += kx.d_mu[ix];
                row_s[bin] += kx.d_sigma[ix];
            }
        } else {
            for (ix, &bin) in row.iter().enumerate() {
                row_v[bin as usize] += kx.value[ix];
            }
        }
        for bin in 0..nb {
            u[bin] += gy * row_v[bin];
        }
        if with_jacobian {
            let (gmy, gsy) = (ky.d_mu[jy], ky.d_sigma[jy]);
            for bin in 0..nb {
                du[bin][0] += gy * row_m[bin];
                du[bin][1] += gy * row_s[bin];
                du[bin][2] += gmy * row_v[bin];
                du[bin][3] += gsy * row_v[bin];
            }
        }
    }
    // (mu, sigma) -> corners: mu = (a + b) / 2, sigma = (b - a) / 2
    let jac = du
        .iter()
        .map(|d| {
            [
                0.5 * (d[0] - d[1]),
                0.5 * (d[2] - d[3]),
                0.5 * (d[0] + d[1]),
                0.5 * (d[2] + d[3]),
            ]
        })
        .collect();
    Ok(Some((u, jac)))
}

pub fn extract_feature(raster: &AppearanceRaster, b: &BoundingBox) -> Result<AppearanceFeature> {
    Ok(match raw_histogram(raster, b, false)? {
        Some((u, _)) => AppearanceFeature(u).normalized(),
        None => AppearanceFeature::zero(raster.bins),
    })
}

/// Feature plus its Jacobian: row `b` holds d psi_b / d (x1, y1, x2, y2).
pub fn extract_feature_with_jacobian(
    raster: &AppearanceRaster,
    b: &BoundingBox,
) -> Result<(AppearanceFeature, Vec<[f64; 4]>)> {
    let Some((u, ju)) = raw_histogram(raster, b, true)? else {
        return Ok((AppearanceFeature::zero(raster.bins), vec![[0.0; 4]; raster.bins]));
    };
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return Ok((AppearanceFeature::zero(raster.bins), vec![[0.0; 4]; raster.bins]));
    }
    let psi: Vec<f64> = u.iter().map(|v| v / n).collect();
    let mut proj = [0.0; 4];
    for (p, j) in psi.iter().zip(&ju) {
        for k in 0..4 {
            proj[k] += p * j[k];
        }
    }
    let jac = psi
        .iter()
        .zip(&ju)
        .map(|(p, j)| {
            let mut row = [0.0; 4];
            for k in 0..4 {
                row[k] = (j[k] - p * proj[k]) / n;
            }
            row
        })
        .collect();
    Ok((AppearanceFeature(psi), jac))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    /// One feature per region.
    pub features: Vec<AppearanceFeature>,
    /// Number of frames this person has been seen in.
    pub frames: u64,
}

/// Outcome of matching a new person against the bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdentityDecision {
    Existing { identity: u64, score: f64 },
    Fresh { identity: u64, score: f64 },
}

impl IdentityDecision {
    pub fn identity(&self) -> u64 {
        match *self {
            IdentityDecision::Existing { identity, .. } | IdentityDecision::Fresh { identity, .. } => identity,
        }
    }

    pub fn score(&self) -> f64 {
        match *self {
            IdentityDecision::Existing { score, .. } | IdentityDecision::Fresh { score, .. } => score,
        }
    }
}

/// Appearance model of every person seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceBank {
    pub entries: BTreeMap<u64, BankEntry>,
    pub next_identity: u64,
}

impl Default for AppearanceBank {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            next_identity: 1,
        }
    }
}

impl AppearanceBank {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, identity: u64) -> Option<&BankEntry> {
        self.entries.get(&identity)
    }

    /// Best similarity over stored persons (skipping `exclude`) and regions.
    /// Ties go to the lowest identity.
    pub fn best_match(&self, candidate: &[AppearanceFeature], exclude: &BTreeSet<u64>) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for (&id, entry) in self.entries.iter().filter(|(id, _)| !exclude.contains(id)) {
            let score = entry
                .features
                .iter()
                .zip(candidate)
                .map(|(phi, psi)| phi.dot(psi))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((id, score));
            }
        }
        best
    }

    /// Returns the stored identity when its similarity reaches `delta`,
    /// otherwise reserves a fresh one. Fresh identities are never reused.
    pub fn match_identity(
        &mut self,
        candidate: &[AppearanceFeature],
        delta: f64,
        exclude: &BTreeSet<u64>,
    ) -> IdentityDecision {
        match self.best_match(candidate, exclude) {
            Some((identity, score)) if score >= delta => IdentityDecision::Existing { identity, score },
            other => {
                let identity = self.next_identity;
                self.next_identity += 1;
                IdentityDecision::Fresh {
                    identity,
                    score: other.map_or(0.0, |(_, s)| s.max(0.0)),
                }
            }
        }
    }

    /// Stores a new person with a frame count of one.
    pub fn insert(&mut self, identity: u64, features: Vec<AppearanceFeature>) {
        self.next_identity = self.next_identity.max(identity + 1);
        let features = features.into_iter().map(AppearanceFeature::normalized).collect();
        self.entries.insert(identity, BankEntry { features, frames: 1 });
    }

    /// Running mean over frames, re-normalized to unit length. Unknown
    /// identities are inserted.
    pub fn update(&mut self, identity: u64, features: &[AppearanceFeature]) {
        let Some(entry) = self.entries.get_mut(&identity) else {
            self.insert(identity, features.to_vec());
            return;
        };
        let f = entry.frames as f64;
        for (phi, psi) in entry.features.iter_mut().zip(features) {
            let mean: Vec<f64> = phi.0.iter().zip(&psi.0).map(|(a, b)| (f * a + b) / (f + 1.0)).collect();
            *phi = AppearanceFeature(mean).normalized();
        }
        entry.frames += 1;
    }
}
