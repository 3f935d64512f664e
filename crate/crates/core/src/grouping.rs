//! Cross-detector grouping of per-frame detections into candidate persons.
//!
//! Two detector outputs are compared through a similarity matrix whose
//! largest entry is selected repeatedly; its row and column are removed so
//! every box is paired at most once. Pairs whose probability exceeds `tau`
//! are merged. With more than two detectors the procedure folds: groups
//! built so far are matched against the next detector, in ascending
//! detector id order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{depth_similarity_with, overlap_probability, DepthKernel, Detection};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    /// Weight of the overlap term; `1 - a` goes to depth similarity.
    pub a: f64,
    /// Acceptance threshold on the pair probability.
    pub tau: f64,
    pub depth_kernel: DepthKernel,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            tau: 0.5,
            depth_kernel: DepthKernel::Symmetric,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::config("grouping.a", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("grouping.tau", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Detections hypothesized to belong to one person, at most one per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGroup {
    pub members: Vec<Detection>,
}

impl DetectionGroup {
    pub fn singleton(det: Detection) -> Self {
        Self { members: vec![det] }
    }

    pub fn contains_detector(&self, detector_id: u32) -> bool {
        self.members.iter().any(|m| m.detector_id == detector_id)
    }
}

pub fn pair_probability(d1: &Detection, d2: &Detection, cfg: &GroupingConfig) -> Result<f64> {
    if d1.detector_id == d2.detector_id {
        return Err(Error::SameDetector(d1.detector_id, d2.detector_id));
    }
    let over = overlap_probability(&d1.bbox, &d2.bbox);
    let depth = depth_similarity_with(&d1.depth, &d2.depth, cfg.depth_kernel);
    Ok(cfg.a * over + (1.0 - cfg.a) * depth)
}

/// Probability that `det` joins `group`: the best pair probability over the
/// group's members. `None` when the group already holds a box from the same
/// detector, in which case the pair can never merge.
fn group_probability(group: &DetectionGroup, det: &Detection, cfg: &GroupingConfig) -> Option<f64> {
    if group.contains_detector(det.detector_id) {
        return None;
    }
    group
        .members
        .iter()
        .filter_map(|m| pair_probability(m, det, cfg).ok())
        .fold(None, |best: Option<f64>, p| Some(best.map_or(p, |b| b.max(p))))
}

/// Greedy one-to-one matching of existing groups against one detector's boxes.
///
/// Ties on the maximum resolve to the lowest (row, column). Unmatched
/// detections are appended as singleton groups in their input order.
pub fn group_two_sets(
    groups: Vec<DetectionGroup>,
    dets: &[Detection],
    cfg: &GroupingConfig,
) -> Vec<DetectionGroup> {
    let mut groups = groups;
    if dets.is_empty() {
        return groups;
    }
    let rows = groups.len();
    let cols = dets.len();
    let matrix: Vec<Option<f64>> = groups
        .iter()
        .flat_map(|g| dets.iter().map(move |d| group_probability(g, d, cfg)))
        .collect();

    let mut row_open = vec![true; rows];
    let mut col_open = vec![true; cols];
    let mut det_taken = vec![false; cols];
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for r in (0..rows).filter(|&r| row_open[r]) {
            for c in (0..cols).filter(|&c| col_open[c]) {
                if let Some(p) = matrix[r * cols + c] {
                    if best.is_none_or(|(_, _, b)| p > b) {
                        best = Some((r, c, p));
                    }
                }
            }
        }
        let Some((r, c, p)) = best else { break };
        // Everything left is no larger than the selected maximum.
        if p <= cfg.tau {
            break;
        }
        row_open[r] = false;
        col_open[c] = false;
        det_taken[c] = true;
        groups[r].members.push(dets[c]);
    }
    groups.extend(
        dets.iter()
            .zip(&det_taken)
            .filter(|(_, &taken)| !taken)
            .map(|(d, _)| DetectionGroup::singleton(*d)),
    );
    groups
}

/// Groups one frame's detections across all detectors.
pub fn group_all_detectors(
    frame_detections: &BTreeMap<u32, Vec<Detection>>,
    cfg: &GroupingConfig,
) -> Vec<DetectionGroup> {
    frame_detections
        .values()
        .fold(Vec::new(), |groups, dets| group_two_sets(groups, dets, cfg))
}

/// Splits a flat detection list by detector id.
pub fn by_detector(dets: &[Detection]) -> BTreeMap<u32, Vec<Detection>> {
    let mut map: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        map.entry(d.detector_id).or_default().push(*d);
    }
    map
}

/// Groups every frame of a sequence; frames are independent.
pub fn group_frames(
    frames: &[Vec<Detection>],
    cfg: &GroupingConfig,
    exec: Execution,
) -> Vec<Vec<DetectionGroup>> {
    par::map(frames, exec, |dets| group_all_detectors(&by_detector(dets), cfg))
}
