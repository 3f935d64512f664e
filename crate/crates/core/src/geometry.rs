//! Bounding-box arithmetic, depth statistics and the two pairwise similarity
//! scores (overlap ratio and depth kernel) used when grouping detections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to depth standard deviations before kernel evaluation.
pub const DEPTH_STD_FLOOR: f64 = 1e-3;

/// Axis-aligned box given by its upper-left and lower-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Builds a box, rejecting inverted or non-finite corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from two arbitrary corners, reordering them as needed.
    pub fn from_corners(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self {
            x1: ax.min(bx),
            y1: ay.min(by),
            x2: ax.max(bx),
            y2: ay.max(by),
        }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            x1: v[0],
            y1: v[1],
            x2: v[2],
            y2: v[3],
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Divides x coordinates by `width` and y coordinates by `height`.
    pub fn normalize(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1 / width,
            y1: self.y1 / height,
            x2: self.x2 / width,
            y2: self.y2 / height,
        }
    }

    pub fn denormalize(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1 * width,
            y1: self.y1 * height,
            x2: self.x2 * width,
            y2: self.y2 * height,
        }
    }

    /// Clips the box to `[0, width] x [0, height]`. Returns `None` when
    /// nothing of the box remains inside.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let b = Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        (b.x2 > b.x1 && b.y2 > b.y1).then_some(b)
    }

    /// Squared Euclidean distance between the two corner 4-vectors.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Mean and standard deviation of the depth values inside a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub mean: f64,
    pub std: f64,
}

impl DepthStats {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// One detector output. Scores are normalized into (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub detector_id: u32,
    pub depth: DepthStats,
}

/// Which denominator the second depth kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKernel {
    /// Both kernels scaled by their own detection's depth variance.
    #[default]
    Symmetric,
    /// Second kernel scaled by the squared depth mean, as printed in the
    /// original formula. Kept for comparison only.
    Literal,
}

pub fn intersection_area(b1: &BoundingBox, b2: &BoundingBox) -> f64 {
    let w = b1.x2.min(b2.x2) - b1.x1.max(b2.x1);
    let h = b1.y2.min(b2.y2) - b1.y1.max(b2.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

pub fn iou(b1: &BoundingBox, b2: &BoundingBox) -> f64 {
    let inter = intersection_area(b1, b2);
    let union = b1.area() + b2.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection over the smaller of the two areas. Zero-area boxes give 0.
pub fn overlap_probability(b1: &BoundingBox, b2: &BoundingBox) -> f64 {
    let smaller = b1.area().min(b2.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    (intersection_area(b1, b2) / smaller).clamp(0.0, 1.0)
}

/// Average of two Gaussian kernels on the difference of depth means.
pub fn depth_similarity(d1: &DepthStats, d2: &DepthStats) -> f64 {
    depth_similarity_with(d1, d2, DepthKernel::Symmetric)
}

pub fn depth_similarity_with(d1: &DepthStats, d2: &DepthStats, kernel: DepthKernel) -> f64 {
    let diff2 = (d1.mean - d2.mean).powi(2);
    let s1 = d1.std.max(DEPTH_STD_FLOOR);
    let scale2 = match kernel {
        DepthKernel::Symmetric => d2.std.max(DEPTH_STD_FLOOR),
        DepthKernel::Literal => d2.mean.abs().max(DEPTH_STD_FLOOR),
    };
    0.5 * (-diff2 / (2.0 * s1 * s1)).exp() + 0.5 * (-diff2 / (2.0 * scale2 * scale2)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn intersection_cases() {
        assert_eq!(intersection_area(&bb(0., 0., 10., 10.), &bb(0., 0., 10., 10.)), 100.0);
        assert_eq!(intersection_area(&bb(0., 0., 10., 10.), &bb(20., 20., 30., 30.)), 0.0);
        assert_eq!(intersection_area(&bb(0., 0., 10., 10.), &bb(5., 0., 15., 10.)), 50.0);
    }

    #[test]
    fn overlap_cases() {
        assert_eq!(overlap_probability(&bb(0., 0., 10., 10.), &bb(2., 2., 4., 5.)), 1.0);
        assert_eq!(overlap_probability(&bb(0., 0., 10., 10.), &bb(20., 20., 30., 30.)), 0.0);
        assert_eq!(overlap_probability(&bb(0., 0., 10., 10.), &bb(5., 0., 15., 10.)), 0.5);
        // zero-area box is defined as no overlap
        assert_eq!(overlap_probability(&bb(0., 0., 10., 10.), &bb(3., 3., 3., 8.)), 0.0);
    }

    #[test]
    fn depth_cases() {
        let s = depth_similarity(&DepthStats::new(5.0, 2.0), &DepthStats::new(5.0, 3.0));
        assert_eq!(s, 1.0);
        let s = depth_similarity(&DepthStats::new(5.0, 2.0), &DepthStats::new(7.0, 2.0));
        assert!((s - (-0.5f64).exp()).abs() < 1e-12);
        let s = depth_similarity(&DepthStats::new(0.0, 1.0), &DepthStats::new(10.0, 1.0));
        assert!((s - (-50.0f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn zero_std_is_floored() {
        let s = depth_similarity(&DepthStats::new(1.0, 0.0), &DepthStats::new(1.0005, 0.0));
        assert!(s.is_finite() && s > 0.0 && s < 1.0);
    }

    #[test]
    fn literal_kernel_differs() {
        let a = DepthStats::new(2.0, 0.5);
        let b = DepthStats::new(3.0, 0.5);
        let sym = depth_similarity_with(&a, &b, DepthKernel::Symmetric);
        let lit = depth_similarity_with(&a, &b, DepthKernel::Literal);
        assert!((lit - (0.5 * (-2.0f64).exp() + 0.5 * (-1.0f64 / 18.0).exp())).abs() < 1e-12);
        assert!(lit > sym);
    }

    #[test]
    fn inverted_box_rejected() {
        assert!(BoundingBox::new(10., 10., 5., 5.).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::from_corners(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn similarity_scores_symmetric_and_bounded(a in arb_box(), b in arb_box(),
            m1 in 0.0..10.0f64, s1 in 0.0..3.0f64, m2 in 0.0..10.0f64, s2 in 0.0..3.0f64) {
            let p = overlap_probability(&a, &b);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p, overlap_probability(&b, &a));
            let d1 = DepthStats::new(m1, s1);
            let d2 = DepthStats::new(m2, s2);
            let q = depth_similarity(&d1, &d2);
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert!((q - depth_similarity(&d2, &d1)).abs() < 1e-15);
            prop_assert_eq!(depth_similarity(&d1, &d1), 1.0);
            prop_assert!((intersection_area(&a, &a) - a.area()).abs() < 1e-9);
        }
    }
}
