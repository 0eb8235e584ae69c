//! Joint latent-field layout and prior assembly.
//!
//! The latent vector stacks β0, β1, spatial effects α (structured) and γ
//! (IID), temporal effects δ (RW2) and τ (IID), the space-time interaction φ,
//! and survey effects ε. Each observed cell maps onto it through a sparse row
//! with ones at its effects and the SIA indicator at β1. The joint prior
//! precision is block-diagonal with per-block PC-prior scale parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{
    interaction_precision, scale_structured, structure_matrix, Constraint, ConstraintKind,
    SpaceKind, StructureKind, StructureMatrix, TimeKind,
};
use crate::graph::AdjacencyGraph;
use crate::priors::{PcCorrelationPrior, PcPrecisionPrior};
use crate::sparse::{SparseVec, SymCsr};

/// The six space-time interaction variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum Variant {
    #[serde(rename = "IID-IID")]
    IidIid,
    #[serde(rename = "ICAR-IID")]
    IcarIid,
    #[serde(rename = "IID-RW2")]
    IidRw2,
    #[serde(rename = "ICAR-RW2")]
    IcarRw2,
    #[serde(rename = "IID-AR1")]
    IidAr1,
    #[serde(rename = "ICAR-AR1")]
    IcarAr1,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::IidIid,
        Variant::IcarIid,
        Variant::IidRw2,
        Variant::IcarRw2,
        Variant::IidAr1,
        Variant::IcarAr1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::IidIid => "IID-IID",
            Variant::IcarIid => "ICAR-IID",
            Variant::IidRw2 => "IID-RW2",
            Variant::IcarRw2 => "ICAR-RW2",
            Variant::IidAr1 => "IID-AR1",
            Variant::IcarAr1 => "ICAR-AR1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn space_kind(&self) -> SpaceKind {
        match self {
            Variant::IidIid | Variant::IidRw2 | Variant::IidAr1 => SpaceKind::Iid,
            _ => SpaceKind::Icar,
        }
    }

    pub fn has_rho(&self) -> bool {
        matches!(self, Variant::IidAr1 | Variant::IcarAr1)
    }

    fn time_kind(&self, rho: f64) -> TimeKind {
        match self {
            Variant::IidIid | Variant::IcarIid => TimeKind::Iid,
            Variant::IidRw2 | Variant::IcarRw2 => TimeKind::Rw2,
            Variant::IidAr1 | Variant::IcarAr1 => TimeKind::Ar1(rho),
        }
    }
}

/// PC-prior calibration per variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentPriors {
    pub alpha: PcPrecisionPrior,
    pub gamma: PcPrecisionPrior,
    pub delta: PcPrecisionPrior,
    pub tau: PcPrecisionPrior,
    pub phi: PcPrecisionPrior,
    pub epsilon: PcPrecisionPrior,
}

impl Default for ComponentPriors {
    fn default() -> Self {
        // Pr(σ > 2) = 0.01 for structured terms, Pr(σ > 1) = 0.01 for IID terms
        let structured = PcPrecisionPrior { u: 2.0, alpha: 0.01 };
        let iid = PcPrecisionPrior { u: 1.0, alpha: 0.01 };
        Self {
            alpha: structured,
            gamma: iid,
            delta: structured,
            tau: iid,
            phi: structured,
            epsilon: iid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub num_areas: usize,
    pub num_cohorts: usize,
    pub num_surveys: usize,
    pub priors: ComponentPriors,
    /// Only consulted for AR1 variants.
    pub rho_prior: PcCorrelationPrior,
    /// Vague Gaussian precision for β0, β1.
    pub fixed_effect_precision: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_areas == 0 || self.num_cohorts == 0 || self.num_surveys == 0 {
            return Err(Error::InvalidInput(
                "model dimensions must all be >= 1".into(),
            ));
        }
        if !(self.fixed_effect_precision > 0.0) {
            return Err(Error::InvalidInput(
                "fixed_effect_precision must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Scale parameters of the six variance components plus the interaction
/// autocorrelation for AR1 variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma_alpha: f64,
    pub sigma_gamma: f64,
    pub sigma_delta: f64,
    pub sigma_tau: f64,
    pub sigma_phi: f64,
    pub sigma_epsilon: f64,
    pub rho_phi: Option<f64>,
}

impl Hyperparameters {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        for (name, s) in self.sigmas() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidInput(format!("sigma_{name} must be > 0, got {s}")));
            }
        }
        match (variant.has_rho(), self.rho_phi) {
            (true, Some(r)) if r.abs() < 1.0 => Ok(()),
            (true, Some(r)) => Err(Error::InvalidInput(format!("rho_phi must be in (-1,1), got {r}"))),
            (true, None) => Err(Error::InvalidInput("AR1 variant requires rho_phi".into())),
            (false, _) => Ok(()),
        }
    }

    pub fn sigmas(&self) -> [(&'static str, f64); 6] {
        [
            ("alpha", self.sigma_alpha),
            ("gamma", self.sigma_gamma),
            ("delta", self.sigma_delta),
            ("tau", self.sigma_tau),
            ("phi", self.sigma_phi),
            ("epsilon", self.sigma_epsilon),
        ]
    }
}

/// Index ranges of the latent blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub num_areas: usize,
    pub num_cohorts: usize,
    pub num_surveys: usize,
}

impl LatentLayout {
    pub fn dim(&self) -> usize {
        2 + 2 * self.num_areas + 2 * self.num_cohorts + self.num_areas * self.num_cohorts
            + self.num_surveys
    }

    pub fn beta0(&self) -> usize {
        0
    }

    pub fn beta1(&self) -> usize {
        1
    }

    pub fn alpha(&self, i: usize) -> usize {
        2 + i
    }

    pub fn gamma(&self, i: usize) -> usize {
        2 + self.num_areas + i
    }

    pub fn delta(&self, b: usize) -> usize {
        2 + 2 * self.num_areas + b
    }

    pub fn tau(&self, b: usize) -> usize {
        2 + 2 * self.num_areas + self.num_cohorts + b
    }

    pub fn phi(&self, i: usize, b: usize) -> usize {
        2 + 2 * self.num_areas + 2 * self.num_cohorts + i * self.num_cohorts + b
    }

    pub fn epsilon(&self, s: usize) -> usize {
        2 + 2 * self.num_areas + 2 * self.num_cohorts + self.num_areas * self.num_cohorts + s
    }

    /// Latent block containing a flat index, for diagnostics.
    pub fn block_name(&self, index: usize) -> String {
        let (i, b, s) = (self.num_areas, self.num_cohorts, self.num_surveys);
        let bounds = [
            (1, "beta0"),
            (2, "beta1"),
            (2 + i, "alpha"),
            (2 + 2 * i, "gamma"),
            (2 + 2 * i + b, "delta"),
            (2 + 2 * i + 2 * b, "tau"),
            (2 + 2 * i + 2 * b + i * b, "phi"),
            (2 + 2 * i + 2 * b + i * b + s, "epsilon"),
        ];
        for (end, name) in bounds {
            if index < end {
                return name.to_string();
            }
        }
        format!("out-of-range({index})")
    }
}

pub fn build_layout(spec: &ModelSpec) -> Result<LatentLayout> {
    spec.validate()?;
    Ok(LatentLayout {
        num_areas: spec.num_areas,
        num_cohorts: spec.num_cohorts,
        num_surveys: spec.num_surveys,
    })
}

/// One direct estimate resolved to model indices (all 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsCell {
    pub area: usize,
    pub cohort: usize,
    pub survey: usize,
    pub x: u8,
    pub theta_hat: f64,
    pub theta_var: f64,
}

/// Sparse observation rows mapping the latent field to cell predictors.
pub fn build_observation_matrix(cells: &[ObsCell], layout: &LatentLayout) -> Result<Vec<SparseVec>> {
    let dim = layout.dim();
    cells
        .iter()
        .map(|c| {
            if c.area >= layout.num_areas || c.cohort >= layout.num_cohorts
                || c.survey >= layout.num_surveys
            {
                return Err(Error::InvalidInput(format!(
                    "cell ({}, {}, {}) outside model dimensions",
                    c.area, c.cohort, c.survey
                )));
            }
            if !(c.theta_var > 0.0) {
                return Err(Error::InvalidInput(
                    "observation variance must be positive".into(),
                ));
            }
            let mut entries = vec![
                (layout.beta0(), 1.0),
                (layout.alpha(c.area), 1.0),
                (layout.gamma(c.area), 1.0),
                (layout.delta(c.cohort), 1.0),
                (layout.tau(c.cohort), 1.0),
                (layout.phi(c.area, c.cohort), 1.0),
                (layout.epsilon(c.survey), 1.0),
            ];
            if c.x == 1 {
                entries.push((layout.beta1(), 1.0));
            }
            Ok(SparseVec::new(dim, entries))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BlockMeta {
    pub name: &'static str,
    pub rank: usize,
    pub log_pdet: f64,
}

/// Joint prior precision for one hyperparameter configuration.
#[derive(Debug, Clone)]
pub struct PriorModel {
    pub layout: LatentLayout,
    pub q: SymCsr,
    pub constraints: Vec<Constraint>,
    pub blocks: Vec<BlockMeta>,
    /// Null directions intentionally left unconstrained (the RW2 trend).
    pub free_null_dims: usize,
}

/// Structure matrices that do not change across hyperparameter values.
#[derive(Debug, Clone)]
pub struct ModelStructures {
    pub spec: ModelSpec,
    pub layout: LatentLayout,
    pub graph: AdjacencyGraph,
    alpha: StructureMatrix,
    delta: StructureMatrix,
    /// Pre-built interaction for variants without ρ.
    fixed_interaction: Option<(StructureMatrix, Vec<Constraint>)>,
    /// Scaled spatial factor for AR1 variants.
    space_factor: Option<StructureMatrix>,
}

impl ModelStructures {
    pub fn new(spec: &ModelSpec, graph: &AdjacencyGraph) -> Result<Self> {
        spec.validate()?;
        if graph.num_areas() != spec.num_areas {
            return Err(Error::InvalidInput(format!(
                "graph has {} areas, model expects {}",
                graph.num_areas(),
                spec.num_areas
            )));
        }
        let layout = build_layout(spec)?;
        let alpha = scale_structured(structure_matrix(
            StructureKind::Icar,
            spec.num_areas,
            Some(graph),
        )?)?;
        let delta = scale_structured(structure_matrix(StructureKind::Rw2, spec.num_cohorts, None)?)?;

        let (fixed_interaction, space_factor) = if spec.variant.has_rho() {
            let space = match spec.variant.space_kind() {
                SpaceKind::Iid => structure_matrix(StructureKind::Iid, spec.num_areas, None)?,
                SpaceKind::Icar => alpha.clone(),
            };
            (None, Some(space))
        } else {
            let inter = interaction_precision(
                spec.variant.space_kind(),
                spec.variant.time_kind(0.0),
                spec.num_areas,
                spec.num_cohorts,
                graph,
            )?;
            (Some(inter), None)
        };
        Ok(Self {
            spec: spec.clone(),
            layout,
            graph: graph.clone(),
            alpha,
            delta,
            fixed_interaction,
            space_factor,
        })
    }

    /// Solver ordering for this model's dimensions and graph.
    pub fn solver_permutation(&self) -> Vec<usize> {
        solver_permutation(&self.layout, &self.graph)
    }

    fn ar1_interaction(&self, rho: Option<f64>) -> Result<(StructureMatrix, Vec<Constraint>)> {
        let rho = rho.ok_or_else(|| Error::InvalidInput("AR1 variant requires rho_phi".into()))?;
        let space = self.space_factor.as_ref().expect("AR1 variants carry a space factor");
        let time = structure_matrix(StructureKind::Ar1(rho), self.spec.num_cohorts, None)?;
        let q = crate::gmrf::kron(&space.q, &time.q)?;
        let (i, b) = (self.spec.num_areas, self.spec.num_cohorts);
        let rank_s = i - space.rank_deficiency;
        let log_pdet = b as f64 * space.log_pdet + rank_s as f64 * time.log_pdet;
        let mut constraints = Vec::new();
        for u in &space.null_space {
            for t in 0..b {
                let entries: Vec<(usize, f64)> = (0..i)
                    .filter(|&a| u[a] != 0.0)
                    .map(|a| (a * b + t, u[a]))
                    .collect();
                constraints.push(Constraint {
                    vector: SparseVec::new(i * b, entries),
                    kind: ConstraintKind::PhiSpacePerTime,
                });
            }
        }
        let structure = StructureMatrix {
            kind: StructureKind::Ar1(rho),
            q,
            rank_deficiency: space.rank_deficiency * b,
            null_space: Vec::new(),
            log_pdet,
            scaled: true,
        };
        Ok((structure, constraints))
    }

    /// Joint prior precision and block bookkeeping at `hyper` (values only;
    /// the constraint set is hyperparameter-independent, see
    /// [`Self::constraint_set`]).
    pub fn assemble_q_blocks(&self, hyper: &Hyperparameters) -> Result<(SymCsr, Vec<BlockMeta>)> {
        hyper.validate(self.spec.variant)?;
        let layout = self.layout;
        let (i, b, s) = (layout.num_areas, layout.num_cohorts, layout.num_surveys);
        let dim = layout.dim();

        let mut trips: Vec<(usize, usize, f64)> = Vec::new();
        let mut blocks = Vec::new();

        let fe = self.spec.fixed_effect_precision;
        trips.push((layout.beta0(), layout.beta0(), fe));
        trips.push((layout.beta1(), layout.beta1(), fe));
        blocks.push(BlockMeta { name: "beta0", rank: 1, log_pdet: fe.ln() });
        blocks.push(BlockMeta { name: "beta1", rank: 1, log_pdet: fe.ln() });

        let prec_a = hyper.sigma_alpha.powi(-2);
        push_block(&mut trips, &self.alpha.q, layout.alpha(0), prec_a);
        let rank_a = i - self.alpha.rank_deficiency;
        blocks.push(BlockMeta {
            name: "alpha",
            rank: rank_a,
            log_pdet: rank_a as f64 * prec_a.ln() + self.alpha.log_pdet,
        });

        let prec_g = hyper.sigma_gamma.powi(-2);
        for a in 0..i {
            trips.push((layout.gamma(a), layout.gamma(a), prec_g));
        }
        blocks.push(BlockMeta { name: "gamma", rank: i, log_pdet: i as f64 * prec_g.ln() });

        let prec_d = hyper.sigma_delta.powi(-2);
        push_block(&mut trips, &self.delta.q, layout.delta(0), prec_d);
        let rank_d = b - self.delta.rank_deficiency;
        blocks.push(BlockMeta {
            name: "delta",
            rank: rank_d,
            log_pdet: rank_d as f64 * prec_d.ln() + self.delta.log_pdet,
        });

        let prec_t = hyper.sigma_tau.powi(-2);
        for t in 0..b {
            trips.push((layout.tau(t), layout.tau(t), prec_t));
        }
        blocks.push(BlockMeta { name: "tau", rank: b, log_pdet: b as f64 * prec_t.ln() });

        let prec_p = hyper.sigma_phi.powi(-2);
        let inter_owned;
        let inter: &StructureMatrix = match &self.fixed_interaction {
            Some((s2, _)) => s2,
            None => {
                inter_owned = self.ar1_interaction(hyper.rho_phi)?;
                &inter_owned.0
            }
        };
        push_block(&mut trips, &inter.q, layout.phi(0, 0), prec_p);
        let rank_p = i * b - inter.rank_deficiency;
        blocks.push(BlockMeta {
            name: "phi",
            rank: rank_p,
            log_pdet: rank_p as f64 * prec_p.ln() + inter.log_pdet,
        });

        let prec_e = hyper.sigma_epsilon.powi(-2);
        for v in 0..s {
            trips.push((layout.epsilon(v), layout.epsilon(v), prec_e));
        }
        blocks.push(BlockMeta { name: "epsilon", rank: s, log_pdet: s as f64 * prec_e.ln() });

        Ok((SymCsr::from_triplets(dim, &trips)?, blocks))
    }

    /// Identifiability constraints in global latent coordinates: sum-to-zero
    /// per spatial component for α, sum-to-zero for δ (the trend direction is
    /// deliberately left to the data), and the interaction's null-space set.
    pub fn constraint_set(&self) -> Result<Vec<Constraint>> {
        let layout = self.layout;
        let (i, b) = (layout.num_areas, layout.num_cohorts);
        let dim = layout.dim();
        let mut constraints = Vec::new();
        for v in &self.alpha.null_space {
            let entries: Vec<(usize, f64)> = (0..i)
                .filter(|&a| v[a] != 0.0)
                .map(|a| (layout.alpha(a), v[a]))
                .collect();
            constraints.push(Constraint {
                vector: SparseVec::new(dim, entries),
                kind: ConstraintKind::AlphaSum,
            });
        }
        constraints.push(Constraint {
            vector: SparseVec::new(dim, (0..b).map(|t| (layout.delta(t), 1.0)).collect()),
            kind: ConstraintKind::DeltaSum,
        });
        let inter_owned;
        let inter_constraints: &[Constraint] = match &self.fixed_interaction {
            Some((_, c2)) => c2.as_slice(),
            None => {
                inter_owned = self.ar1_interaction(Some(0.5))?;
                inter_owned.1.as_slice()
            }
        };
        let phi_off = layout.phi(0, 0);
        for c in inter_constraints {
            let entries: Vec<(usize, f64)> = c
                .vector
                .idx
                .iter()
                .zip(&c.vector.val)
                .map(|(ix, v)| (phi_off + ix, *v))
                .collect();
            constraints.push(Constraint {
                vector: SparseVec::new(dim, entries),
                kind: c.kind,
            });
        }
        Ok(constraints)
    }

    /// Null directions deliberately left unconstrained (the RW2 trend).
    pub fn free_null_dims(&self) -> usize {
        self.delta.rank_deficiency.saturating_sub(1)
    }

    /// Basis of the unconstrained prior null directions: the centred linear
    /// trend on the δ block, when the RW2 has one.
    pub fn free_null_vectors(&self) -> Vec<SparseVec> {
        let layout = self.layout;
        let b = layout.num_cohorts;
        if self.free_null_dims() == 0 {
            return Vec::new();
        }
        let entries: Vec<(usize, f64)> = (0..b)
            .map(|t| (layout.delta(t), t as f64 - (b as f64 - 1.0) / 2.0))
            .collect();
        vec![SparseVec::new(layout.dim(), entries)]
    }

    /// Assemble the joint prior precision at `hyper`.
    pub fn assemble_prior(&self, hyper: &Hyperparameters) -> Result<PriorModel> {
        let (q, blocks) = self.assemble_q_blocks(hyper)?;
        let constraints = self.constraint_set()?;
        let free_null_dims = self.free_null_dims();
        debug_assert_eq!(
            blocks.iter().map(|bl| bl.rank).sum::<usize>() + constraints.len() + free_null_dims,
            self.layout.dim(),
            "block ranks, constraints and free null directions must partition the latent dimension"
        );
        Ok(PriorModel {
            layout: self.layout,
            q,
            constraints,
            blocks,
            free_null_dims,
        })
    }
}

// scatter a structure block (upper triangle) at a diagonal offset
fn push_block(trips: &mut Vec<(usize, usize, f64)>, q: &SymCsr, offset: usize, scale: f64) {
    for r in 0..q.n {
        let (cols, vals) = q.row(r);
        for (c, v) in cols.iter().zip(vals) {
            if *c >= r {
                trips.push((offset + r, offset + c, v * scale));
            }
        }
    }
}

/// Spec-level convenience: assemble the joint prior precision directly.
pub fn joint_prior_precision(
    spec: &ModelSpec,
    hyper: &Hyperparameters,
    graph: &AdjacencyGraph,
) -> Result<PriorModel> {
    ModelStructures::new(spec, graph)?.assemble_prior(hyper)
}

/// Deterministic solver ordering: interaction effects slice-by-slice in
/// cohort order with areas in RCM order, then the narrow global blocks, so
/// the profile factorization stays close to block-banded.
pub fn solver_permutation(layout: &LatentLayout, graph: &AdjacencyGraph) -> Vec<usize> {
    let (b, s) = (layout.num_cohorts, layout.num_surveys);
    let area_order = graph.rcm_order();
    let mut perm = Vec::with_capacity(layout.dim());
    for t in 0..b {
        for &a in &area_order {
            perm.push(layout.phi(a, t));
        }
    }
    for t in 0..b {
        perm.push(layout.delta(t));
        perm.push(layout.tau(t));
    }
    for &a in &area_order {
        perm.push(layout.alpha(a));
        perm.push(layout.gamma(a));
    }
    for v in 0..s {
        perm.push(layout.epsilon(v));
    }
    perm.push(layout.beta0());
    perm.push(layout.beta1());
    debug_assert_eq!(perm.len(), layout.dim());
    perm
}

pub fn default_rho_prior() -> PcCorrelationPrior {
    PcCorrelationPrior::new(0.7, 0.7).expect("default correlation prior is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(variant: Variant, i: usize, b: usize, s: usize) -> ModelSpec {
        ModelSpec {
            variant,
            num_areas: i,
            num_cohorts: b,
            num_surveys: s,
            priors: ComponentPriors::default(),
            rho_prior: default_rho_prior(),
            fixed_effect_precision: 0.001,
        }
    }

    fn hyper(rho: Option<f64>) -> Hyperparameters {
        Hyperparameters {
            sigma_alpha: 1.0,
            sigma_gamma: 1.0,
            sigma_delta: 1.0,
            sigma_tau: 1.0,
            sigma_phi: 1.0,
            sigma_epsilon: 1.0,
            rho_phi: rho,
        }
    }

    #[test]
    fn layout_dimensions() {
        let l = build_layout(&spec(Variant::IcarAr1, 37, 38, 9)).unwrap();
        assert_eq!(l.dim(), 1567);
        // 2 + 2I + 2B + I·B + S with I = B = S = 1
        let tiny = build_layout(&spec(Variant::IidIid, 1, 1, 1)).unwrap();
        assert_eq!(tiny.dim(), 8);
    }

    #[test]
    fn layouts_identical_across_variants() {
        let a = build_layout(&spec(Variant::IidIid, 5, 4, 3)).unwrap();
        let b = build_layout(&spec(Variant::IcarAr1, 5, 4, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observation_rows_have_seven_plus_x_entries() {
        let l = build_layout(&spec(Variant::IidIid, 3, 4, 2)).unwrap();
        let cells = [
            ObsCell { area: 0, cohort: 1, survey: 0, x: 0, theta_hat: 0.0, theta_var: 1.0 },
            ObsCell { area: 2, cohort: 3, survey: 1, x: 1, theta_hat: 0.5, theta_var: 0.5 },
        ];
        let rows = build_observation_matrix(&cells, &l).unwrap();
        assert_eq!(rows[0].idx.len(), 7);
        assert_relative_eq!(rows[0].val.iter().sum::<f64>(), 7.0);
        assert_eq!(rows[1].idx.len(), 8);
        assert_relative_eq!(rows[1].val.iter().sum::<f64>(), 8.0);
    }

    #[test]
    fn rows_same_cell_different_survey_differ_only_in_epsilon() {
        let l = build_layout(&spec(Variant::IidIid, 3, 4, 2)).unwrap();
        let cells = [
            ObsCell { area: 1, cohort: 2, survey: 0, x: 0, theta_hat: 0.0, theta_var: 1.0 },
            ObsCell { area: 1, cohort: 2, survey: 1, x: 0, theta_hat: 0.0, theta_var: 1.0 },
        ];
        let rows = build_observation_matrix(&cells, &l).unwrap();
        let diff: Vec<usize> = rows[0]
            .idx
            .iter()
            .chain(rows[1].idx.iter())
            .copied()
            .filter(|ix| !(rows[0].idx.contains(ix) && rows[1].idx.contains(ix)))
            .collect();
        assert_eq!(diff, vec![l.epsilon(0), l.epsilon(1)]);
    }

    #[test]
    fn unknown_indices_rejected() {
        let l = build_layout(&spec(Variant::IidIid, 3, 4, 2)).unwrap();
        let bad = [ObsCell { area: 3, cohort: 0, survey: 0, x: 0, theta_hat: 0.0, theta_var: 1.0 }];
        assert!(build_observation_matrix(&bad, &l).is_err());
    }

    #[test]
    fn iid_iid_phi_block_is_identity() {
        let g = AdjacencyGraph::path(2);
        let m = joint_prior_precision(&spec(Variant::IidIid, 2, 2, 1), &hyper(None), &g).unwrap();
        let d = m.q.to_dense();
        let l = m.layout;
        for i in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(d[l.phi(i, b)][l.phi(i, b)], 1.0, epsilon = 1e-14);
                for j in 0..2 {
                    for c in 0..2 {
                        if (i, b) != (j, c) {
                            assert_relative_eq!(d[l.phi(i, b)][l.phi(j, c)], 0.0, epsilon = 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn doubling_sigma_gamma_quarters_the_block() {
        let g = AdjacencyGraph::path(3);
        let s = spec(Variant::IidIid, 3, 3, 2);
        let m1 = joint_prior_precision(&s, &hyper(None), &g).unwrap();
        let mut h2 = hyper(None);
        h2.sigma_gamma = 2.0;
        let m2 = joint_prior_precision(&s, &h2, &g).unwrap();
        let l = m1.layout;
        let (d1, d2) = (m1.q.to_dense(), m2.q.to_dense());
        for a in 0..3 {
            assert_relative_eq!(d2[l.gamma(a)][l.gamma(a)], d1[l.gamma(a)][l.gamma(a)] / 4.0);
        }
    }

    #[test]
    fn joint_log_pdet_matches_dense_oracle() {
        let g = AdjacencyGraph::lattice(2, 2);
        for variant in [Variant::IcarRw2, Variant::IcarAr1, Variant::IidAr1] {
            let s = spec(variant, 4, 4, 2);
            let mut h = hyper(variant.has_rho().then_some(0.6));
            h.sigma_alpha = 0.8;
            h.sigma_phi = 1.3;
            let m = joint_prior_precision(&s, &h, &g).unwrap();
            let dense = m.q.to_dense();
            let nd = nalgebra::DMatrix::from_fn(m.q.n, m.q.n, |r, c| dense[r][c]);
            let ev = nd.symmetric_eigen().eigenvalues;
            let oracle: f64 = ev.iter().filter(|&&e| e > 1e-8).map(|e| e.ln()).sum();
            let ours: f64 = m.blocks.iter().map(|b| b.log_pdet).sum();
            assert_relative_eq!(ours, oracle, epsilon = 1e-7, max_relative = 1e-8);
        }
    }

    #[test]
    fn null_space_equals_constraint_span_plus_trend() {
        let g = AdjacencyGraph::path(3);
        let m = joint_prior_precision(&spec(Variant::IcarRw2, 3, 5, 2), &hyper(None), &g).unwrap();
        let dense = m.q.to_dense();
        let nd = nalgebra::DMatrix::from_fn(m.q.n, m.q.n, |r, c| dense[r][c]);
        let ev = nd.symmetric_eigen();
        let null_dim = ev.eigenvalues.iter().filter(|&&e| e.abs() < 1e-8).count();
        assert_eq!(null_dim, m.constraints.len() + m.free_null_dims);
        // every constraint vector is annihilated by Q
        for c in &m.constraints {
            let v = c.vector.to_dense();
            let mut y = vec![0.0; m.q.n];
            m.q.matvec(&v, &mut y);
            for yi in y {
                assert_relative_eq!(yi, 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn intercept_only_latent_predicts_the_intercept_everywhere() {
        let l = build_layout(&spec(Variant::IidIid, 3, 4, 2)).unwrap();
        let cells = [
            ObsCell { area: 0, cohort: 0, survey: 0, x: 0, theta_hat: 0.0, theta_var: 1.0 },
            ObsCell { area: 2, cohort: 3, survey: 1, x: 1, theta_hat: 0.0, theta_var: 1.0 },
        ];
        let rows = build_observation_matrix(&cells, &l).unwrap();
        let mut latent = vec![0.0; l.dim()];
        latent[l.beta0()] = 1.7;
        for row in &rows {
            assert_relative_eq!(row.dot_dense(&latent), 1.7, epsilon = 1e-14);
        }
    }

    #[test]
    fn exposure_shifts_the_predictor_by_beta1_exactly() {
        let l = build_layout(&spec(Variant::IidIid, 3, 4, 2)).unwrap();
        let cells = [
            ObsCell { area: 1, cohort: 2, survey: 1, x: 0, theta_hat: 0.0, theta_var: 1.0 },
            ObsCell { area: 1, cohort: 2, survey: 1, x: 1, theta_hat: 0.0, theta_var: 1.0 },
        ];
        let rows = build_observation_matrix(&cells, &l).unwrap();
        let mut latent: Vec<f64> = (0..l.dim()).map(|i| (i as f64 * 0.13).sin()).collect();
        latent[l.beta1()] = 0.32;
        let diff = rows[1].dot_dense(&latent) - rows[0].dot_dense(&latent);
        assert_relative_eq!(diff, 0.32, epsilon = 1e-14);
    }

    #[test]
    fn solver_permutation_is_complete() {
        let g = AdjacencyGraph::lattice(3, 3);
        let l = build_layout(&spec(Variant::IcarAr1, 9, 6, 2)).unwrap();
        let mut p = solver_permutation(&l, &g);
        p.sort_unstable();
        assert_eq!(p, (0..l.dim()).collect::<Vec<_>>());
    }
}
