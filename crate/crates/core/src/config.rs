//! Run configuration: one JSON file governs every pipeline stage; CLI flags
//! only override individual keys.

use serde::{Deserialize, Serialize};

use crate::cohort::{cmc, CohortGrid};
use crate::design::{DegeneratePolicy, LonePsuPolicy};
use crate::error::Result;
use crate::inference::InferenceConfig;
use crate::model::{ComponentPriors, ModelSpec, Variant};
use crate::priors::PcCorrelationPrior;
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub origin_year: i32,
    pub origin_month: i32,
    pub cohort_len_months: i32,
    pub num_cohorts: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            origin_year: 2000,
            origin_month: 1,
            cohort_len_months: 6,
            num_cohorts: 38,
        }
    }
}

impl CohortConfig {
    pub fn grid(&self) -> Result<CohortGrid> {
        CohortGrid::new(
            cmc(self.origin_year, self.origin_month)?,
            self.cohort_len_months,
            self.num_cohorts,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RhoPriorConfig {
    pub u0: f64,
    pub alpha0: f64,
}

impl Default for RhoPriorConfig {
    fn default() -> Self {
        Self { u0: 0.7, alpha0: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: String,
    pub fixed_effect_precision: f64,
    pub pc_priors: ComponentPriors,
    pub rho_prior: RhoPriorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "ICAR-AR1".into(),
            fixed_effect_precision: 0.001,
            pc_priors: ComponentPriors::default(),
            rho_prior: RhoPriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub lone_psu: LonePsuPolicy,
    pub degenerate_cells: DegeneratePolicy,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lone_psu: LonePsuPolicy::Certainty,
            degenerate_cells: DegeneratePolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 = use all available cores.
    pub threads: usize,
    pub ri_age_months: i32,
    pub cohort: CohortConfig,
    pub model: ModelConfig,
    pub estimation: EstimationConfig,
    pub inference: InferenceConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20000101,
            threads: 0,
            ri_age_months: 9,
            cohort: CohortConfig::default(),
            model: ModelConfig::default(),
            estimation: EstimationConfig::default(),
            inference: InferenceConfig::default(),
            simulate: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::parse(&self.model.variant)
    }

    /// Model spec for given data dimensions.
    pub fn model_spec(&self, num_areas: usize, num_surveys: usize) -> Result<ModelSpec> {
        Ok(ModelSpec {
            variant: self.variant()?,
            num_areas,
            num_cohorts: self.cohort.num_cohorts,
            num_surveys,
            priors: self.model.pc_priors,
            rho_prior: PcCorrelationPrior::new(self.model.rho_prior.u0, self.model.rho_prior.alpha0)?,
            fixed_effect_precision: self.model.fixed_effect_precision,
        })
    }
}
