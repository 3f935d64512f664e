//! Block gradient descent for a fixed number of persons.
//!
//! Each block is one person's boxes across all regions. Blocks are visited
//! in ascending order; each takes one backtracking (Armijo) step along its
//! negative gradient. A sweep counts as one iteration.

use serde::{Deserialize, Serialize};

use crate::energy::{evaluate, EnergyConfig, FrameContext, FrameSolution, Focus};
use crate::error::{Error, Result};

/// Boxes narrower than this (normalized units) are treated as collapsed.
pub const MIN_SIDE: f64 = 1e-4;

const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Initial step size, normalized units.
    pub step: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Fraction of the image size treated as the boundary band.
    pub boundary_margin: f64,
    /// Pixel radius for "a detection around the predicted box"; defaults to
    /// a tenth of the image diagonal.
    pub detection_radius: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            backtrack: 0.5,
            max_halvings: 20,
            max_iters: 500,
            rel_tol: 1e-6,
            boundary_margin: 0.05,
            detection_radius: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("optimizer.step", "must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::config("optimizer.backtrack", "must lie in (0, 1)"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::config("optimizer.rel_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("optimizer.max_iters", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.boundary_margin) {
            return Err(Error::config("optimizer.boundary_margin", "must lie in [0, 0.5)"));
        }
        if let Some(r) = self.detection_radius {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::config("optimizer.detection_radius", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn radius_px(&self, image_size: (f64, f64)) -> f64 {
        self.detection_radius
            .unwrap_or_else(|| 0.1 * (image_size.0 * image_size.0 + image_size.1 * image_size.1).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub solution: FrameSolution,
    pub energy: f64,
    pub sweeps: usize,
    /// Full energy before the first sweep and after each one.
    pub history: Vec<f64>,
}

fn value(sol: &FrameSolution, ctx: &FrameContext, cfg: &EnergyConfig, focus: Focus) -> f64 {
    if !sol.is_well_formed(MIN_SIDE) {
        return f64::INFINITY;
    }
    evaluate(sol, ctx, cfg, focus, None).0
}

/// Full weighted energy, infinite for collapsed boxes.
pub fn solution_energy(sol: &FrameSolution, ctx: &FrameContext, cfg: &EnergyConfig) -> f64 {
    value(sol, ctx, cfg, Focus::All)
}

pub fn optimize_fixed_m(
    init: FrameSolution,
    ctx: &FrameContext,
    energy: &EnergyConfig,
    cfg: &OptimizerConfig,
) -> Result<Optimized> {
    let mut sol = init;
    let mut current = solution_energy(&sol, ctx, energy);
    if !current.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    let persons = sol.persons();
    let block = 4 * sol.regions();
    let mut history = vec![current];
    let mut steps = vec![cfg.step; persons];
    let mut last: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; persons];
    let mut grad = vec![0.0; sol.coords().len()];
    let mut sweeps = 0;

    while sweeps < cfg.max_iters && persons > 0 {
        sweeps += 1;
        for m in 0..persons {
            let (f0, _) = evaluate(&sol, ctx, energy, Focus::Person(m), Some(&mut grad));
            let offset = sol.offset(m, 0);
            let g = &grad[offset..offset + block];
            let g2: f64 = g.iter().map(|v| v * v).sum();
            if g2 == 0.0 || !g2.is_finite() {
                continue;
            }
            let base: Vec<f64> = sol.person_coords(m).to_vec();
            // Barzilai-Borwein guess from this block's previous step
            let mut t = steps[m];
            if let Some((px, pg)) = &last[m] {
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..block {
                    let (dx, dg) = (base[k] - px[k], g[k] - pg[k]);
                    ss += dx * dx;
                    sy += dx * dg;
                }
                if sy > 0.0 && ss > 0.0 {
                    t = (ss / sy).min(cfg.step);
                }
            }
            last[m] = Some((base.clone(), g.to_vec()));
            let mut accepted = false;
            for _ in 0..=cfg.max_halvings {
                for (k, x) in sol.coords_mut()[offset..offset + block].iter_mut().enumerate() {
                    *x = base[k] - t * g[k];
                }
                let f1 = value(&sol, ctx, energy, Focus::Person(m));
                if f1 <= f0 - ARMIJO_C * t * g2 {
                    accepted = true;
                    break;
                }
                t *= cfg.backtrack;
            }
            if accepted {
                steps[m] = (t / cfg.backtrack).min(cfg.step);
            } else {
                sol.coords_mut()[offset..offset + block].copy_from_slice(&base);
                steps[m] = t.max(f64::MIN_POSITIVE);
            }
        }
        let next = solution_energy(&sol, ctx, energy);
        history.push(next);
        let decrease = current - next;
        current = next;
        if decrease <= cfg.rel_tol * current.abs().max(1.0) {
            break;
        }
    }

    Ok(Optimized {
        solution: sol,
        energy: current,
        sweeps,
        history,
    })
}
