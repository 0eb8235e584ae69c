//! Synthetic populations, campaign exposure and stratified cluster surveys
//! with known truth, for end-to-end validation.
//!
//! The scenario design is original: lattice adjacency, campaign windows
//! aligned to cohort boundaries with wide (9-59 month) target ranges so
//! whole cohorts share one exposure history, cluster-level Gaussian
//! intercepts on the logit scale to induce design effects, and an optional
//! lognormal per-child weight scheme. The simulator carries its own copy of
//! the opportunity-counting rule so the cohort-processing stage can be
//! checked against it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{cmc, ChildRecord, CohortGrid, SiaEvent};
use crate::design::expit;
use crate::error::{Error, Result};
use crate::gmrf::{interaction_precision, sample_from_structure, scale_structured, structure_matrix, StructureKind, TimeKind};
use crate::graph::AdjacencyGraph;
use crate::model::{Hyperparameters, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Equal,
    Variable,
}

/// One simulated campaign; applies to every area unless `area_subset` lists
/// specific area indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSia {
    pub start_cmc: i32,
    pub end_cmc: i32,
    pub min_age_months: i32,
    pub max_age_months: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_subset: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lattice_rows: usize,
    pub lattice_cols: usize,
    /// Extra areas chained onto the lattice for non-rectangular counts.
    #[serde(default)]
    pub extra_areas: usize,
    pub origin_cmc: i32,
    pub cohort_len_months: i32,
    pub num_cohorts: usize,
    pub ri_age_months: i32,
    pub survey_cmcs: Vec<i32>,
    pub variant: Variant,
    pub beta0: f64,
    pub beta1: f64,
    pub hyper: Hyperparameters,
    pub sias: Vec<SimSia>,
    pub clusters_per_area: usize,
    pub children_per_cluster: usize,
    pub weight_scheme: WeightScheme,
    pub sigma_cluster: f64,
    /// Sampled age-at-interview range, in completed months.
    pub age_range_months: (i32, i32),
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lattice_rows * self.lattice_cols == 0 {
            return Err(Error::InvalidInput("lattice must be non-empty".into()));
        }
        if self.survey_cmcs.is_empty()
            || self.clusters_per_area == 0
            || self.children_per_cluster == 0
        {
            return Err(Error::InvalidInput("survey and sample counts must be >= 1".into()));
        }
        self.hyper.validate(self.variant)?;
        if self.age_range_months.0 < 0 || self.age_range_months.0 > self.age_range_months.1 {
            return Err(Error::InvalidInput("invalid age range".into()));
        }
        self.grid().map(|_| ())
    }

    pub fn num_areas(&self) -> usize {
        self.lattice_rows * self.lattice_cols + self.extra_areas
    }

    pub fn grid(&self) -> Result<CohortGrid> {
        CohortGrid::new(self.origin_cmc, self.cohort_len_months, self.num_cohorts)
    }

    pub fn graph(&self) -> AdjacencyGraph {
        let base = self.lattice_rows * self.lattice_cols;
        let mut edges = Vec::new();
        for r in 0..self.lattice_rows {
            for c in 0..self.lattice_cols {
                let i = r * self.lattice_cols + c;
                if c + 1 < self.lattice_cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < self.lattice_rows {
                    edges.push((i, i + self.lattice_cols));
                }
            }
        }
        for e in 0..self.extra_areas {
            edges.push((base + e, e % base));
        }
        AdjacencyGraph::new(self.num_areas(), &edges).expect("simulated graph is valid")
    }

    pub fn area_id(&self, i: usize) -> String {
        format!("a{i:03}")
    }

    pub fn survey_id(&self, s: usize) -> String {
        format!("s{s:02}")
    }

    pub fn sia_events(&self) -> Vec<SiaEvent> {
        self.sias
            .iter()
            .enumerate()
            .map(|(k, s)| SiaEvent {
                sia_id: format!("sia{k:02}"),
                start_cmc: s.start_cmc,
                end_cmc: s.end_cmc,
                min_age_months: s.min_age_months,
                max_age_months: s.max_age_months,
                area_ids: match &s.area_subset {
                    Some(list) => list.iter().map(|&i| self.area_id(i)).collect(),
                    None => (0..self.num_areas()).map(|i| self.area_id(i)).collect(),
                },
            })
            .collect()
    }

    /// A campaign whose exposed-birth window is aligned to cohort
    /// boundaries: cohorts `first..=last` (1-based) are exposed exactly,
    /// given a 9-59 month target range and surveys outside the window.
    /// Unless `first_cohort` is 1 (where the lower age cut can fall below
    /// the grid), the cohort span must cover at least 50 months.
    pub fn aligned_sia(&self, first_cohort: usize, last_cohort: usize) -> SimSia {
        let len = self.cohort_len_months;
        let lo_birth = self.origin_cmc + (first_cohort as i32 - 1) * len;
        let hi_birth = self.origin_cmc + last_cohort as i32 * len - 1;
        let end_cmc = hi_birth + 9;
        let start_cmc = (lo_birth + 59).min(end_cmc);
        assert!(
            first_cohort == 1 || lo_birth + 59 <= end_cmc,
            "aligned campaign needs a >= 50-month cohort span unless it starts at cohort 1"
        );
        SimSia {
            start_cmc,
            end_cmc,
            min_age_months: 9,
            max_age_months: 59,
            area_subset: None,
        }
    }

    /// Small lattice scenario: nine areas, ten 6-month cohorts from 2000,
    /// three surveys, two aligned campaigns.
    pub fn small_scenario(seed: u64) -> Self {
        let origin = cmc(2000, 1).expect("valid date");
        let mut cfg = Self {
            lattice_rows: 3,
            lattice_cols: 3,
            extra_areas: 0,
            origin_cmc: origin,
            cohort_len_months: 6,
            num_cohorts: 10,
            ri_age_months: 9,
            survey_cmcs: vec![origin + 60, origin + 72, origin + 84],
            variant: Variant::IcarAr1,
            beta0: 0.3,
            beta1: 0.3,
            hyper: Hyperparameters {
                sigma_alpha: 0.5,
                sigma_gamma: 0.1,
                sigma_delta: 0.2,
                sigma_tau: 0.1,
                sigma_phi: 0.3,
                sigma_epsilon: 0.15,
                rho_phi: Some(0.8),
            },
            sias: Vec::new(),
            clusters_per_area: 5,
            children_per_cluster: 10,
            weight_scheme: WeightScheme::Variable,
            sigma_cluster: 0.25,
            age_range_months: (0, 59),
            seed,
        };
        cfg.sias = vec![cfg.aligned_sia(1, 5), cfg.aligned_sia(2, 10)];
        cfg
    }

    /// National-scale scenario: 37 areas, 38 six-month cohorts (2000-2018),
    /// nine surveys, six aligned campaigns.
    pub fn national_scenario(seed: u64) -> Self {
        let origin = cmc(2000, 1).expect("valid date");
        let survey_years = [2003, 2007, 2008, 2011, 2013, 2014, 2015, 2016, 2018];
        let mut cfg = Self {
            lattice_rows: 6,
            lattice_cols: 6,
            extra_areas: 1,
            origin_cmc: origin,
            cohort_len_months: 6,
            num_cohorts: 38,
            ri_age_months: 9,
            survey_cmcs: survey_years
                .iter()
                .map(|&y| cmc(y, 6).expect("valid date"))
                .collect(),
            variant: Variant::IcarAr1,
            beta0: 0.0,
            beta1: 0.3,
            hyper: Hyperparameters {
                sigma_alpha: 0.45,
                sigma_gamma: 0.07,
                sigma_delta: 0.2,
                sigma_tau: 0.09,
                sigma_phi: 0.65,
                sigma_epsilon: 0.25,
                rho_phi: Some(0.75),
            },
            sias: Vec::new(),
            clusters_per_area: 6,
            children_per_cluster: 12,
            weight_scheme: WeightScheme::Variable,
            sigma_cluster: 0.25,
            age_range_months: (0, 59),
            seed,
        };
        cfg.sias = (0..6)
            .map(|k| cfg.aligned_sia(1 + 5 * k, (10 + 5 * k).min(cfg.num_cohorts)))
            .collect();
        cfg
    }
}

/// Latent truth drawn from the model at the configured hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta0: f64,
    pub beta1: f64,
    /// mu[area][cohort]: true routine-coverage linear predictor.
    pub mu: Vec<Vec<f64>>,
    /// expit(mu), the target of estimation.
    pub p_ri: Vec<Vec<f64>>,
    /// Survey bias effects used when generating data (not part of p_ri).
    pub epsilon: Vec<f64>,
}

pub fn simulate_truth(config: &SimConfig) -> Result<SimTruth> {
    config.validate()?;
    let graph = config.graph();
    let (i, b) = (config.num_areas(), config.num_cohorts);
    let h = &config.hyper;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let icar = scale_structured(structure_matrix(StructureKind::Icar, i, Some(&graph))?)?;
    let rw2 = scale_structured(structure_matrix(StructureKind::Rw2, b, None)?)?;
    let time_kind = match config.variant {
        Variant::IidIid | Variant::IcarIid => TimeKind::Iid,
        Variant::IidRw2 | Variant::IcarRw2 => TimeKind::Rw2,
        Variant::IidAr1 | Variant::IcarAr1 => TimeKind::Ar1(h.rho_phi.unwrap_or(0.0)),
    };
    let (inter, _) = interaction_precision(config.variant.space_kind(), time_kind, i, b, &graph)?;

    let alpha = sample_from_structure(&icar, h.sigma_alpha, &mut rng)?;
    let gamma: Vec<f64> = (0..i).map(|_| h.sigma_gamma * rng.sample::<f64, _>(StandardNormal)).collect();
    let delta = sample_from_structure(&rw2, h.sigma_delta, &mut rng)?;
    let tau: Vec<f64> = (0..b).map(|_| h.sigma_tau * rng.sample::<f64, _>(StandardNormal)).collect();
    let phi = sample_from_structure(&inter, h.sigma_phi, &mut rng)?;
    let epsilon: Vec<f64> = (0..config.survey_cmcs.len())
        .map(|_| h.sigma_epsilon * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut mu = vec![vec![0.0; b]; i];
    let mut p_ri = vec![vec![0.0; b]; i];
    for a in 0..i {
        for t in 0..b {
            let m = config.beta0 + alpha[a] + gamma[a] + delta[t] + tau[t] + phi[a * b + t];
            mu[a][t] = m;
            p_ri[a][t] = expit(m);
        }
    }
    Ok(SimTruth {
        beta0: config.beta0,
        beta1: config.beta1,
        mu,
        p_ri,
        epsilon,
    })
}

/// A simulated child along with the simulator's own exposure bookkeeping.
#[derive(Debug, Clone)]
pub struct SimChild {
    pub record: ChildRecord,
    pub cohort: usize,
    pub had_ri: bool,
    pub sia_count: u32,
}

// The simulator's independent copy of the opportunity rule.
fn sim_opportunity(
    birth_cmc: i32,
    interview_cmc: i32,
    area: usize,
    config: &SimConfig,
) -> (bool, u32) {
    let had_ri = interview_cmc - birth_cmc >= config.ri_age_months;
    let mut count = 0;
    for sia in &config.sias {
        if let Some(subset) = &sia.area_subset {
            if !subset.contains(&area) {
                continue;
            }
        }
        let lo = sia.start_cmc.max(birth_cmc + sia.min_age_months);
        let hi = sia
            .end_cmc
            .min(interview_cmc - 1)
            .min(birth_cmc + sia.max_age_months);
        if lo <= hi {
            count += 1;
        }
    }
    (had_ri, count)
}

/// Generate survey rosters for every configured survey.
pub fn simulate_survey(truth: &SimTruth, config: &SimConfig) -> Result<Vec<SimChild>> {
    config.validate()?;
    let grid = config.grid()?;
    let b = config.num_cohorts;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(0x5EED_5EED));
    let mut out = Vec::new();

    for (s, &interview) in config.survey_cmcs.iter().enumerate() {
        let lo_birth = (interview - config.age_range_months.1).max(grid.origin_cmc);
        let hi_birth = (interview - config.age_range_months.0)
            .min(grid.origin_cmc + grid.cohort_len_months * b as i32 - 1);
        if lo_birth > hi_birth {
            return Err(Error::InvalidInput(format!(
                "survey at cmc {interview} sees no births inside the cohort grid"
            )));
        }
        let span = (hi_birth - lo_birth + 1) as u32;
        for area in 0..config.num_areas() {
            for cluster in 0..config.clusters_per_area {
                let u_cluster = config.sigma_cluster * rng.sample::<f64, _>(StandardNormal);
                for _ in 0..config.children_per_cluster {
                    let birth = lo_birth + rng.random_range(0..span) as i32;
                    let cohort = grid
                        .cohort_index(birth)
                        .expect("birth drawn inside the grid");
                    let (had_ri, sia_count) = sim_opportunity(birth, interview, area, config);
                    let eta = truth.mu[area][cohort - 1]
                        + truth.beta1 * sia_count as f64
                        + truth.epsilon[s]
                        + u_cluster;
                    let p = expit(eta);
                    let mcv1 = u8::from(rng.random::<f64>() < p);
                    let weight = match config.weight_scheme {
                        WeightScheme::Equal => 1.0,
                        WeightScheme::Variable => {
                            (0.5 * rng.sample::<f64, _>(StandardNormal)).exp()
                        }
                    };
                    out.push(SimChild {
                        record: ChildRecord {
                            survey_id: config.survey_id(s),
                            area_id: config.area_id(area),
                            stratum_id: config.area_id(area),
                            cluster_id: format!("s{s:02}-a{area:03}-c{cluster:03}"),
                            weight,
                            birth_cmc: birth,
                            interview_cmc: interview,
                            mcv1,
                        },
                        cohort,
                        had_ri,
                        sia_count,
                    });
                }
            }
        }
    }
    Ok(out)
}
