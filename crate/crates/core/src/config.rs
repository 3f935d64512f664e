//! Run configuration: one JSON document holding every module's settings and
//! the detector registry.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyConfig, TermWeights, DEFAULT_TERM_SCALES};
use crate::error::{Error, Result};
use crate::grouping::GroupingConfig;
use crate::metrics::EvalConfig;
use crate::optimizer::OptimizerConfig;
use crate::par::Execution;
use crate::simulator::ScenarioConfig;
use crate::spatial::{FitOptions, RegionMap};
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorEntry {
    pub id: u32,
    /// 1-based region this detector fires on.
    pub region: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub alpha: f64,
    pub lambdas: TermWeights,
    pub scales: TermWeights,
}

impl Default for EnergySection {
    fn default() -> Self {
        let e = EnergyConfig::default();
        Self {
            alpha: e.alpha,
            lambdas: e.lambdas,
            scales: DEFAULT_TERM_SCALES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceSection {
    /// Similarity needed to re-acquire a stored identity.
    pub delta: f64,
}

impl Default for AppearanceSection {
    fn default() -> Self {
        Self { delta: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSection {
    pub clusters: usize,
    pub ridge: f64,
    /// 1-based region used as the clustering anchor.
    pub anchor_region: usize,
    pub max_iter: usize,
}

impl Default for SpatialSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            clusters: f.clusters,
            ridge: f.ridge,
            anchor_region: f.anchor_region + 1,
            max_iter: f.max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub detections: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub rasters: Option<PathBuf>,
    pub spatial_model: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: (f64, f64),
    /// Number of regions per person.
    pub regions: usize,
    pub detectors: Vec<DetectorEntry>,
    pub grouping: GroupingConfig,
    pub energy: EnergySection,
    pub optimizer: OptimizerConfig,
    pub appearance: AppearanceSection,
    pub spatial: SpatialSection,
    pub eval: EvalConfig,
    pub execution: Execution,
    pub scenario: Option<ScenarioConfig>,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: (320.0, 240.0),
            regions: 2,
            detectors: vec![DetectorEntry { id: 1, region: 1 }, DetectorEntry { id: 2, region: 2 }],
            grouping: GroupingConfig::default(),
            energy: EnergySection::default(),
            optimizer: OptimizerConfig::default(),
            appearance: AppearanceSection::default(),
            spatial: SpatialSection::default(),
            eval: EvalConfig::default(),
            execution: Execution::default(),
            scenario: None,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.regions;
        if l == 0 {
            return Err(Error::config("regions", "at least one region is required"));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("detectors", "at least one detector is required"));
        }
        let mut seen = BTreeSet::new();
        for d in &self.detectors {
            if !seen.insert(d.id) {
                return Err(Error::config("detectors", format!("detector {} registered twice", d.id)));
            }
            if !(1..=l).contains(&d.region) {
                return Err(Error::config("detectors", format!("detector {} region {} outside [1, {l}]", d.id, d.region)));
            }
        }
        if !(1..=l).contains(&self.eval.region) {
            return Err(Error::config("eval.region", format!("must lie in [1, {l}]")));
        }
        if !(1..=l).contains(&self.spatial.anchor_region) {
            return Err(Error::config("spatial.anchor_region", format!("must lie in [1, {l}]")));
        }
        if self.spatial.clusters == 0 {
            return Err(Error::config("spatial.clusters", "must be at least 1"));
        }
        if !(self.spatial.ridge >= 0.0 && self.spatial.ridge.is_finite()) {
            return Err(Error::config("spatial.ridge", "must be non-negative"));
        }
        self.eval.validate()?;
        self.tracker()?.validate()?;
        if let Some(s) = &self.scenario {
            s.validate()?;
            if (s.image_size.0 as f64, s.image_size.1 as f64) != self.image_size {
                return Err(Error::config("scenario.image_size", "must equal image_size"));
            }
            for d in &s.detectors {
                match self.detectors.iter().find(|e| e.id == d.id) {
                    None => {
                        return Err(Error::config(
                            "scenario.detectors",
                            format!("detector {} is not in the detector registry", d.id),
                        ))
                    }
                    Some(e) if e.region != d.region => {
                        return Err(Error::config(
                            "scenario.detectors",
                            format!("detector {} region differs from the registry", d.id),
                        ))
                    }
                    _ => {}
                }
            }
            if l != crate::simulator::REGIONS {
                return Err(Error::config("regions", "the simulator produces exactly 2 regions"));
            }
        }
        Ok(())
    }

    pub fn region_map(&self) -> RegionMap {
        RegionMap(self.detectors.iter().map(|d| (d.id, d.region - 1)).collect())
    }

    pub fn energy_config(&self) -> EnergyConfig {
        EnergyConfig {
            alpha: self.energy.alpha,
            lambdas: self.energy.lambdas,
            scales: self.energy.scales,
            image_size: self.image_size,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            clusters: self.spatial.clusters,
            ridge: self.spatial.ridge,
            anchor_region: self.spatial.anchor_region.saturating_sub(1),
            seed: self.seed,
            max_iter: self.spatial.max_iter,
        }
    }

    pub fn tracker(&self) -> Result<TrackerConfig> {
        let cfg = TrackerConfig {
            grouping: self.grouping,
            energy: self.energy_config(),
            optimizer: self.optimizer,
            delta: self.appearance.delta,
            regions: self.regions,
            region_map: self.region_map(),
            execution: self.execution,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn undefined_scenario_detector_rejected() {
        let mut cfg = RunConfig { scenario: Some(ScenarioConfig::default()), ..Default::default() };
        cfg.detectors.pop();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "scenario.detectors"), "{err}");
    }

    #[test]
    fn region_out_of_range() {
        let mut cfg = RunConfig::default();
        cfg.detectors[1].region = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(RunConfig::from_json(r#"{"regoins": 2}"#).is_err());
    }
}
