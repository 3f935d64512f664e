//! CLEAR MOT evaluation of tracker output against ground truth.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Matching {
    /// A pair is valid when IoU reaches the threshold.
    Iou,
    /// A pair is valid when the center distance is at most `max_px`.
    CenterDistance { max_px: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// 1-based region to evaluate.
    pub region: usize,
    pub matching: Matching,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            region: 1,
            matching: Matching::Iou,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::config("eval.iou_threshold", "must lie in (0, 1)"));
        }
        if self.region == 0 {
            return Err(Error::config("eval.region", "regions are 1-based"));
        }
        if let Matching::CenterDistance { max_px } = self.matching {
            if !(max_px > 0.0 && max_px.is_finite()) {
                return Err(Error::config("eval.matching.max_px", "must be positive"));
            }
        }
        Ok(())
    }

    fn valid(&self, gt: &BoundingBox, tr: &BoundingBox) -> Option<f64> {
        match self.matching {
            Matching::Iou => {
                let o = iou(gt, tr);
                (o >= self.iou_threshold).then_some(1.0 - o)
            }
            Matching::CenterDistance { max_px } => {
                let (a, b) = (gt.center(), tr.center());
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                (d <= max_px).then_some(d)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub ids_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub frames: usize,
    pub gt: usize,
    pub hypotheses: usize,
    pub matches: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ids: usize,
}

impl MotReport {
    pub fn table(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MotReport {
    /// Percentages, one header line and one value line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = ["MOTA", "MOTP", "FP", "FN", "IDs", "Recall", "Precision"];
        let vals = [self.mota, self.motp, self.fp_rate, self.fn_rate, self.ids_rate, self.recall, self.precision];
        let header: Vec<String> = cols.iter().map(|c| format!("{c:>10}")).collect();
        let values: Vec<String> = vals.iter().map(|v| format!("{:>10.2}", 100.0 * v)).collect();
        writeln!(f, "{}", header.join(""))?;
        writeln!(f, "{}", values.join(""))
    }
}

/// One frame of labeled boxes.
pub type LabeledFrame = Vec<(u64, BoundingBox)>;

/// Correspondences persist while still valid; the rest are matched by
/// minimum-cost assignment. An identity switch is counted whenever a truth
/// object is matched to a hypothesis other than its last one. Rates are
/// divided by the number of truth boxes (or 1 when there are none).
pub fn evaluate(tracks: &[LabeledFrame], truth: &[LabeledFrame], cfg: &EvalConfig) -> Result<MotReport> {
    cfg.validate()?;
    if tracks.len() != truth.len() {
        return Err(Error::FrameMismatch {
            tracks: tracks.len(),
            truth: truth.len(),
        });
    }
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let (mut gt_total, mut hyp_total, mut matches, mut fp, mut fn_, mut ids) = (0, 0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;

    for (hyp, gt) in tracks.iter().zip(truth) {
        gt_total += gt.len();
        hyp_total += hyp.len();
        let mut gt_match: Vec<Option<usize>> = vec![None; gt.len()];
        let mut hyp_used = vec![false; hyp.len()];

        for (g, (gid, gbox)) in gt.iter().enumerate() {
            let Some(&tid) = last.get(gid) else { continue };
            if let Some(h) = hyp.iter().position(|(id, _)| *id == tid) {
                if !hyp_used[h] && cfg.valid(gbox, &hyp[h].1).is_some() {
                    gt_match[g] = Some(h);
                    hyp_used[h] = true;
                }
            }
        }

        let free_gt: Vec<usize> = (0..gt.len()).filter(|&g| gt_match[g].is_none()).collect();
        let free_hyp: Vec<usize> = (0..hyp.len()).filter(|&h| !hyp_used[h]).collect();
        if !free_gt.is_empty() && !free_hyp.is_empty() {
            // invalid pairs cost more than any full set of valid ones
            let costs: Vec<Vec<Option<f64>>> = free_gt
                .iter()
                .map(|&g| free_hyp.iter().map(|&h| cfg.valid(&gt[g].1, &hyp[h].1)).collect())
                .collect();
            let max_valid = costs.iter().flatten().flatten().fold(0.0f64, |a, &b| a.max(b));
            let big = (max_valid + 1.0) * (free_gt.len().max(free_hyp.len()) as f64 + 1.0);
            let matrix: Vec<Vec<f64>> = costs.iter().map(|r| r.iter().map(|c| c.unwrap_or(big)).collect()).collect();
            for (i, col) in min_cost_assignment(&matrix).into_iter().enumerate() {
                if let Some(j) = col {
                    if costs[i][j].is_some() {
                        gt_match[free_gt[i]] = Some(free_hyp[j]);
                        hyp_used[free_hyp[j]] = true;
                    }
                }
            }
        }

        for (g, m) in gt_match.iter().enumerate() {
            match *m {
                Some(h) => {
                    let (gid, gbox) = &gt[g];
                    let (tid, tbox) = &hyp[h];
                    matches += 1;
                    iou_sum += iou(gbox, tbox);
                    if let Some(prev) = last.insert(*gid, *tid) {
                        if prev != *tid {
                            ids += 1;
                        }
                    }
                }
                None => fn_ += 1,
            }
        }
        fp += hyp_used.iter().filter(|u| !**u).count();
    }

    let denom = gt_total.max(1) as f64;
    Ok(MotReport {
        mota: 1.0 - (fp + fn_ + ids) as f64 / denom,
        motp: if matches > 0 { iou_sum / matches as f64 } else { 0.0 },
        fp_rate: fp as f64 / denom,
        fn_rate: fn_ as f64 / denom,
        ids_rate: ids as f64 / denom,
        recall: matches as f64 / denom,
        precision: if matches + fp > 0 { matches as f64 / (matches + fp) as f64 } else { 0.0 },
        frames: truth.len(),
        gt: gt_total,
        hypotheses: hyp_total,
        matches,
        fp,
        fn_,
        ids,
    })
}
