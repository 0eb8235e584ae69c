//! Cross-module integration: the simulator against the cohort classifier,
//! design estimation against sampling theory, and the fit/predict loop on
//! synthetic data with known truth.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ricover_core::cohort::{build_cells, opportunity_profile, CohortGrid};
use ricover_core::design::{
    design_variance, direct_estimates, expit, ht_estimate, DegeneratePolicy, LonePsuPolicy,
};
use ricover_core::inference::{explore_hyper, fixed_effects, ri_coverage, sample_posterior, FitWorkspace, InferenceConfig};
use ricover_core::io::{resolve_cells, IdIndex};
use ricover_core::model::ModelStructures;
use ricover_core::sim::{simulate_survey, simulate_truth, SimConfig, WeightScheme};

/// The simulator and the cohort classifier carry independent copies of the
/// opportunity rule; they must agree child by child, and every kept cell's
/// label must equal the simulator's intended exposure.
#[test]
fn simulator_and_classifier_agree_on_opportunity_logic() {
    for seed in [1u64, 2, 3] {
        let config = SimConfig::small_scenario(seed);
        let truth = simulate_truth(&config).unwrap();
        let children = simulate_survey(&truth, &config).unwrap();
        let calendar = config.sia_events();
        let grid = config.grid().unwrap();

        for child in &children {
            let profile =
                opportunity_profile(&child.record, &calendar, config.ri_age_months).unwrap();
            assert_eq!(profile.had_ri, child.had_ri, "RI flag disagrees");
            assert_eq!(profile.sia_count, child.sia_count, "SIA count disagrees");
            assert_eq!(grid.cohort_index(child.record.birth_cmc), Some(child.cohort));
        }

        let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
        let (cells, rejections) =
            build_cells(&records, &calendar, &grid, config.ri_age_months).unwrap();
        let kept: usize = cells.iter().map(|c| c.children.len()).sum();
        assert_eq!(kept + rejections.len(), records.len());
        // the classifier's cell label equals the simulator's intended label
        let mut by_key: std::collections::BTreeMap<(String, usize, String), Vec<&ricover_core::sim::SimChild>> =
            Default::default();
        for child in &children {
            by_key
                .entry((
                    child.record.area_id.clone(),
                    child.cohort,
                    child.record.survey_id.clone(),
                ))
                .or_default()
                .push(child);
        }
        for cell in &cells {
            let members = &by_key[&(cell.area_id.clone(), cell.cohort, cell.survey_id.clone())];
            assert!(members
                .iter()
                .all(|m| m.sia_count as u8 == cell.sia_indicator && m.had_ri));
        }
        // groups the simulator knows to be homogeneous with exposure <= 1
        // must all have been kept
        for (key, members) in &by_key {
            let homogeneous = members.iter().all(|m| {
                m.had_ri && m.sia_count == members[0].sia_count && members[0].sia_count <= 1
            });
            if homogeneous {
                assert!(
                    cells.iter().any(|c| (
                        c.area_id.clone(),
                        c.cohort,
                        c.survey_id.clone()
                    ) == *key),
                    "homogeneous group {key:?} was dropped"
                );
            }
        }
    }
}

#[test]
fn null_campaign_effect_is_statistically_invisible() {
    // β1 = 0 with flat truth: pooled coverage in exposed and unexposed cells
    // must be indistinguishable (two-sample z test at the 1% level)
    let mut exposed = (0usize, 0usize);
    let mut unexposed = (0usize, 0usize);
    for seed in 0..20u64 {
        let mut config = SimConfig::small_scenario(1000 + seed);
        config.beta1 = 0.0;
        config.sigma_cluster = 0.0;
        config.weight_scheme = WeightScheme::Equal;
        config.hyper.sigma_alpha = 1e-9;
        config.hyper.sigma_gamma = 1e-9;
        config.hyper.sigma_delta = 1e-9;
        config.hyper.sigma_tau = 1e-9;
        config.hyper.sigma_phi = 1e-9;
        config.hyper.sigma_epsilon = 1e-9;
        let truth = simulate_truth(&config).unwrap();
        let children = simulate_survey(&truth, &config).unwrap();
        let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
        let (cells, _) = build_cells(
            &records,
            &config.sia_events(),
            &config.grid().unwrap(),
            config.ri_age_months,
        )
        .unwrap();
        for cell in &cells {
            let bucket = if cell.sia_indicator == 1 { &mut exposed } else { &mut unexposed };
            bucket.0 += cell.children.iter().filter(|c| c.mcv1 == 1).count();
            bucket.1 += cell.children.len();
        }
    }
    let (x1, n1) = exposed;
    let (x0, n0) = unexposed;
    assert!(n1 > 500 && n0 > 500, "needs both exposure groups populated");
    let p1 = x1 as f64 / n1 as f64;
    let p0 = x0 as f64 / n0 as f64;
    let pool = (x1 + x0) as f64 / (n1 + n0) as f64;
    let z = (p1 - p0) / (pool * (1.0 - pool) * (1.0 / n1 as f64 + 1.0 / n0 as f64)).sqrt();
    assert!(z.abs() < 2.576, "z = {z} rejects the null at 1%");
}

#[test]
fn design_variance_tracks_binomial_under_srs() {
    // no cluster effect, equal weights: the between-cluster variance should
    // match binomial sampling variance on average
    let mut ratios = Vec::new();
    for seed in 0..12u64 {
        let mut config = SimConfig::small_scenario(500 + seed);
        config.sigma_cluster = 0.0;
        config.weight_scheme = WeightScheme::Equal;
        config.children_per_cluster = 40;
        let truth = simulate_truth(&config).unwrap();
        let children = simulate_survey(&truth, &config).unwrap();
        let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
        let (cells, _) = build_cells(
            &records,
            &config.sia_events(),
            &config.grid().unwrap(),
            config.ri_age_months,
        )
        .unwrap();
        for cell in &cells {
            let (p, n) = ht_estimate(&cell).unwrap();
            if p <= 0.05 || p >= 0.95 || n < 20 {
                continue;
            }
            let v = design_variance(&cell, LonePsuPolicy::Certainty).unwrap();
            let binom = p * (1.0 - p) / n as f64;
            ratios.push(v / binom);
        }
    }
    assert!(ratios.len() > 50, "needs enough usable cells, got {}", ratios.len());
    let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.8..=1.25).contains(&mean), "mean variance ratio {mean}");
}

#[test]
fn ht_estimates_converge_on_huge_cells() {
    // cells of a few 10⁴ children: the HT estimate must sit within 0.01 of
    // the true overall coverage
    let mut config = SimConfig::small_scenario(77);
    config.lattice_rows = 1;
    config.lattice_cols = 1;
    config.clusters_per_area = 600;
    config.children_per_cluster = 600;
    config.sigma_cluster = 0.0;
    config.survey_cmcs = vec![config.origin_cmc + 72];
    let truth = simulate_truth(&config).unwrap();
    let children = simulate_survey(&truth, &config).unwrap();
    let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
    let grid = config.grid().unwrap();
    let (cells, _) = build_cells(&records, &config.sia_events(), &grid, 9).unwrap();
    let mut checked = 0;
    for cell in &cells {
        if cell.children.len() < 20_000 {
            continue;
        }
        let (p_hat, _) = ht_estimate(&cell).unwrap();
        let area: usize = cell.area_id[1..].parse().unwrap();
        let p_true = expit(
            truth.mu[area][cell.cohort - 1]
                + truth.beta1 * cell.sia_indicator as f64
                + truth.epsilon[0],
        );
        assert!(
            (p_hat - p_true).abs() < 0.01,
            "cell ({}, {}, {}): {p_hat} vs {p_true}",
            cell.area_id,
            cell.cohort,
            cell.survey_id
        );
        checked += 1;
    }
    assert!(checked >= 5, "checked only {checked} large cells");
}

#[test]
fn single_cluster_per_child_reduces_to_with_replacement_variance() {
    use ricover_core::cohort::{ChildRecord, EligibleCell};
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(3..40);
        let children: Vec<ChildRecord> = (0..n)
            .map(|k| ChildRecord {
                survey_id: "s".into(),
                area_id: "a".into(),
                stratum_id: "h".into(),
                cluster_id: format!("c{k}"),
                weight: 1.0,
                birth_cmc: 1200,
                interview_cmc: 1260,
                mcv1: u8::from(rng.random::<f64>() < 0.6),
            })
            .collect();
        let cell = EligibleCell {
            area_id: "a".into(),
            cohort: 1,
            survey_id: "s".into(),
            sia_indicator: 0,
            children,
        };
        let (p, _) = ht_estimate(&cell).unwrap();
        let v = design_variance(&cell, LonePsuPolicy::Certainty).unwrap();
        let closed = p * (1.0 - p) / (n as f64 - 1.0);
        assert!((v - closed).abs() < 1e-12, "{v} vs {closed}");
    }
}

#[test]
fn logit_variance_decreases_with_sample_size() {
    // i.i.d. equal-weight cells at fixed p̂: V̂ strictly decreasing in n
    let mut prev = f64::INFINITY;
    for n in [20usize, 40, 80, 160] {
        use ricover_core::cohort::{ChildRecord, EligibleCell};
        // fixed composition p̂ = 0.6 split over two clusters to keep v̂ > 0
        let children: Vec<ChildRecord> = (0..n)
            .map(|k| ChildRecord {
                survey_id: "s".into(),
                area_id: "a".into(),
                stratum_id: "h".into(),
                cluster_id: format!("c{}", k % (n / 2)),
                weight: 1.0,
                birth_cmc: 1200,
                interview_cmc: 1260,
                mcv1: u8::from(k % 5 < 3),
            })
            .collect();
        let cell = EligibleCell {
            area_id: "a".into(),
            cohort: 1,
            survey_id: "s".into(),
            sia_indicator: 0,
            children,
        };
        let (estimates, _) =
            direct_estimates(&[cell], LonePsuPolicy::Certainty, DegeneratePolicy::Drop).unwrap();
        let v = estimates[0].theta_var;
        assert!(v < prev, "V̂ did not decrease at n = {n}: {v} >= {prev}");
        prev = v;
    }
}

#[test]
fn twelve_month_cohorts_keep_no_more_children() {
    for seed in [11u64, 12, 13] {
        let config = SimConfig::small_scenario(seed);
        let truth = simulate_truth(&config).unwrap();
        let children = simulate_survey(&truth, &config).unwrap();
        let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
        let calendar = config.sia_events();
        let grid6 = config.grid().unwrap();
        let grid12 = CohortGrid::new(config.origin_cmc, 12, config.num_cohorts / 2).unwrap();
        let (cells6, _) = build_cells(&records, &calendar, &grid6, 9).unwrap();
        let (cells12, _) = build_cells(&records, &calendar, &grid12, 9).unwrap();
        let kept6: usize = cells6.iter().map(|c| c.children.len()).sum();
        let kept12: usize = cells12.iter().map(|c| c.children.len()).sum();
        assert!(
            kept12 <= kept6,
            "12-month cohorts kept more children ({kept12} > {kept6})"
        );
    }
}

#[test]
fn fit_and_predict_recover_sensible_coverage() {
    // one small replicate end to end: the posterior intervals should be
    // proper probabilities, ordered, and mostly bracket the truth
    let config = SimConfig::small_scenario(9);
    let truth = simulate_truth(&config).unwrap();
    let children = simulate_survey(&truth, &config).unwrap();
    let records: Vec<_> = children.iter().map(|c| c.record.clone()).collect();
    let grid = config.grid().unwrap();
    let (cells, _) = build_cells(&records, &config.sia_events(), &grid, 9).unwrap();
    let (estimates, _) =
        direct_estimates(&cells, LonePsuPolicy::Certainty, DegeneratePolicy::Drop).unwrap();

    let areas = IdIndex::from_iter(estimates.iter().map(|e| e.area_id.clone()));
    let surveys = IdIndex::from_iter(estimates.iter().map(|e| e.survey_id.clone()));
    let obs = resolve_cells(&estimates, &areas, &surveys, config.num_cohorts).unwrap();
    let spec = ricover_core::model::ModelSpec {
        variant: config.variant,
        num_areas: areas.len(),
        num_cohorts: config.num_cohorts,
        num_surveys: surveys.len(),
        priors: Default::default(),
        rho_prior: ricover_core::model::default_rho_prior(),
        fixed_effect_precision: 0.001,
    };
    let structures = ModelStructures::new(&spec, &config.graph()).unwrap();
    let ws = FitWorkspace::new(&structures, obs).unwrap();
    let cfg = InferenceConfig { grid_points_per_dim: 1, grad_tol: 1e-3, ..Default::default() };
    let explore = explore_hyper(&ws, &cfg).unwrap();
    let draws = sample_posterior(&ws, &explore.grid, 500, config.seed).unwrap();
    let cov = ri_coverage(&draws, &structures.layout);
    assert_eq!(cov.len(), areas.len() * config.num_cohorts);
    let mut hits = 0usize;
    for s in &cov {
        assert!(s.lower95 <= s.median && s.median <= s.upper95);
        assert!(s.lower95 > 0.0 && s.upper95 < 1.0);
        let t = truth.p_ri[s.area][s.cohort];
        if (s.lower95..=s.upper95).contains(&t) {
            hits += 1;
        }
    }
    // one replicate: expect rough nominal coverage, not exact calibration
    assert!(
        hits as f64 >= 0.7 * cov.len() as f64,
        "only {hits}/{} intervals caught the truth",
        cov.len()
    );
    let effects = fixed_effects(&draws, &structures.layout);
    assert_eq!(effects.len(), 3);
    assert!(effects.iter().any(|e| e.param == "exp_beta1"));
}
