//! Birth-cohort construction and eligibility screening.
//!
//! Survey rosters and the SIA calendar are aligned on the CMC month scale to
//! decide, per child, whether the routine-immunization opportunity has passed
//! and how many campaign opportunities the child has had before the interview.
//! Children are then grouped into (area, cohort, survey) cells; only groups in
//! which every child had the RI opportunity and the same campaign exposure
//! (zero or one) are kept. Everything else lands in the rejection log.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One surveyed child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub survey_id: String,
    pub area_id: String,
    pub stratum_id: String,
    pub cluster_id: String,
    /// Relative number of children represented (must be > 0).
    pub weight: f64,
    pub birth_cmc: i32,
    pub interview_cmc: i32,
    /// Ever received MCV1 by the interview (0/1).
    pub mcv1: u8,
}

impl ChildRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "child weight must be positive, got {}",
                self.weight
            )));
        }
        if self.interview_cmc < self.birth_cmc {
            return Err(Error::InvalidInput(
                "interview_cmc before birth_cmc".into(),
            ));
        }
        if self.mcv1 > 1 {
            return Err(Error::InvalidInput(format!(
                "mcv1 must be 0 or 1, got {}",
                self.mcv1
            )));
        }
        Ok(())
    }
}

/// One campaign from the SIA calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiaEvent {
    pub sia_id: String,
    pub start_cmc: i32,
    pub end_cmc: i32,
    pub min_age_months: i32,
    pub max_age_months: i32,
    pub area_ids: BTreeSet<String>,
}

impl SiaEvent {
    pub fn validate(&self) -> Result<()> {
        if self.start_cmc > self.end_cmc {
            return Err(Error::InvalidInput(format!(
                "SIA {}: start_cmc > end_cmc",
                self.sia_id
            )));
        }
        if self.min_age_months < 0 || self.min_age_months > self.max_age_months {
            return Err(Error::InvalidInput(format!(
                "SIA {}: invalid target age range {}..{}",
                self.sia_id, self.min_age_months, self.max_age_months
            )));
        }
        Ok(())
    }
}

/// Partition of birth months into fixed-width cohorts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortGrid {
    /// CMC of the first month of cohort 1.
    pub origin_cmc: i32,
    pub cohort_len_months: i32,
    pub num_cohorts: usize,
}

impl CohortGrid {
    pub fn new(origin_cmc: i32, cohort_len_months: i32, num_cohorts: usize) -> Result<Self> {
        if cohort_len_months <= 0 || 12 % cohort_len_months != 0 {
            return Err(Error::InvalidInput(format!(
                "cohort_len_months must divide 12, got {cohort_len_months}"
            )));
        }
        if num_cohorts == 0 {
            return Err(Error::InvalidInput("num_cohorts must be >= 1".into()));
        }
        Ok(Self {
            origin_cmc,
            cohort_len_months,
            num_cohorts,
        })
    }

    /// 1-based cohort index for a birth month, `None` when outside the grid.
    pub fn cohort_index(&self, birth_cmc: i32) -> Option<usize> {
        let offset = birth_cmc - self.origin_cmc;
        if offset < 0 {
            return None;
        }
        let b = (offset / self.cohort_len_months) as usize + 1;
        if b <= self.num_cohorts {
            Some(b)
        } else {
            None
        }
    }
}

/// Century-Month Code: `12*(year-1900) + month`.
pub fn cmc(year: i32, month: i32) -> Result<i32> {
    if !(1..=12).contains(&month) {
        return Err(Error::InvalidInput(format!(
            "month must be in 1..=12, got {month}"
        )));
    }
    if year < 1900 {
        return Err(Error::InvalidInput(format!(
            "year must be >= 1900, got {year}"
        )));
    }
    Ok(12 * (year - 1900) + month)
}

/// Per-child vaccination-opportunity summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpportunityProfile {
    pub had_ri: bool,
    pub sia_count: u32,
}

/// Count the RI and SIA opportunities a child has had strictly before the
/// interview month. An SIA counts when some month of its window, clipped at
/// `interview_cmc - 1`, falls inside the child's target age range.
pub fn opportunity_profile(
    child: &ChildRecord,
    calendar: &[SiaEvent],
    ri_age_months: i32,
) -> Result<OpportunityProfile> {
    if ri_age_months < 0 {
        return Err(Error::InvalidInput(format!(
            "ri_age_months must be non-negative, got {ri_age_months}"
        )));
    }
    let had_ri = child.interview_cmc - child.birth_cmc >= ri_age_months;
    let mut sia_count = 0u32;
    for event in calendar {
        if !event.area_ids.contains(&child.area_id) {
            continue;
        }
        let window_end = event.end_cmc.min(child.interview_cmc - 1);
        let eligible_start = child.birth_cmc + event.min_age_months;
        let eligible_end = child.birth_cmc + event.max_age_months;
        if event.start_cmc.max(eligible_start) <= window_end.min(eligible_end) {
            sia_count += 1;
        }
    }
    Ok(OpportunityProfile { had_ri, sia_count })
}

/// One eligible (area, cohort, survey) analysis cell.
#[derive(Debug, Clone)]
pub struct EligibleCell {
    pub area_id: String,
    pub cohort: usize,
    pub survey_id: String,
    /// 0 = RI only, 1 = RI plus one SIA opportunity.
    pub sia_indicator: u8,
    pub children: Vec<ChildRecord>,
}

/// A child excluded from analysis, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub survey_id: String,
    pub area_id: String,
    pub stratum_id: String,
    pub cluster_id: String,
    pub birth_cmc: i32,
    pub interview_cmc: i32,
    pub reason: String,
}

pub const REASON_OUT_OF_GRID: &str = "out of cohort grid";
pub const REASON_NO_RI: &str = "no RI opportunity";
pub const REASON_MIXED_SIA: &str = "mixed SIA exposure";
pub const REASON_MULTI_SIA: &str = "more than one SIA";

fn reject(child: &ChildRecord, reason: &str) -> Rejection {
    Rejection {
        survey_id: child.survey_id.clone(),
        area_id: child.area_id.clone(),
        stratum_id: child.stratum_id.clone(),
        cluster_id: child.cluster_id.clone(),
        birth_cmc: child.birth_cmc,
        interview_cmc: child.interview_cmc,
        reason: reason.to_string(),
    }
}

/// Group children into eligible cells, dropping whole groups whose members
/// disagree on exposure. Rejection-reason precedence within a dropped group:
/// no-RI, then mixed exposure, then multi-SIA.
pub fn build_cells(
    children: &[ChildRecord],
    calendar: &[SiaEvent],
    grid: &CohortGrid,
    ri_age_months: i32,
) -> Result<(Vec<EligibleCell>, Vec<Rejection>)> {
    for event in calendar {
        event.validate()?;
    }
    let mut rejections = Vec::new();
    let mut groups: BTreeMap<(String, usize, String), Vec<(ChildRecord, OpportunityProfile)>> =
        BTreeMap::new();

    for child in children {
        child.validate()?;
        let Some(b) = grid.cohort_index(child.birth_cmc) else {
            rejections.push(reject(child, REASON_OUT_OF_GRID));
            continue;
        };
        let profile = opportunity_profile(child, calendar, ri_age_months)?;
        groups
            .entry((child.area_id.clone(), b, child.survey_id.clone()))
            .or_default()
            .push((child.clone(), profile));
    }

    let mut cells = Vec::new();
    for ((area_id, cohort, survey_id), members) in groups {
        let any_no_ri = members.iter().any(|(_, p)| !p.had_ri);
        let first_count = members[0].1.sia_count;
        let mixed = members.iter().any(|(_, p)| p.sia_count != first_count);
        let reason = if any_no_ri {
            Some(REASON_NO_RI)
        } else if mixed {
            Some(REASON_MIXED_SIA)
        } else if first_count >= 2 {
            Some(REASON_MULTI_SIA)
        } else {
            None
        };
        match reason {
            Some(r) => rejections.extend(members.iter().map(|(c, _)| reject(c, r))),
            None => cells.push(EligibleCell {
                area_id,
                cohort,
                survey_id,
                sia_indicator: first_count as u8,
                children: members.into_iter().map(|(c, _)| c).collect(),
            }),
        }
    }
    Ok((cells, rejections))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(area: &str, birth: i32, interview: i32) -> ChildRecord {
        ChildRecord {
            survey_id: "s1".into(),
            area_id: area.into(),
            stratum_id: "st1".into(),
            cluster_id: "c1".into(),
            weight: 1.0,
            birth_cmc: birth,
            interview_cmc: interview,
            mcv1: 1,
        }
    }

    fn sia(start: i32, end: i32, min_age: i32, max_age: i32, areas: &[&str]) -> SiaEvent {
        SiaEvent {
            sia_id: "sia1".into(),
            start_cmc: start,
            end_cmc: end,
            min_age_months: min_age,
            max_age_months: max_age,
            area_ids: areas.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn cmc_formula() {
        assert_eq!(cmc(2000, 1).unwrap(), 1201);
        assert_eq!(cmc(1900, 1).unwrap(), 1);
        assert_eq!(cmc(2001, 7).unwrap(), 1219);
        assert!(cmc(2000, 13).is_err());
        assert!(cmc(2000, 0).is_err());
    }

    #[test]
    fn cohort_index_six_month_grid() {
        let grid = CohortGrid::new(cmc(2000, 1).unwrap(), 6, 38).unwrap();
        assert_eq!(grid.cohort_index(cmc(2000, 1).unwrap()), Some(1));
        assert_eq!(grid.cohort_index(cmc(2000, 6).unwrap()), Some(1));
        assert_eq!(grid.cohort_index(cmc(2000, 7).unwrap()), Some(2));
        assert_eq!(grid.cohort_index(cmc(1999, 12).unwrap()), None);
        assert_eq!(grid.cohort_index(cmc(2019, 1).unwrap()), None);
    }

    #[test]
    fn profile_before_any_sia() {
        // Cohort b=1 child interviewed early in 2001: RI had, no SIA yet.
        let c = child("a1", cmc(2000, 3).unwrap(), cmc(2001, 3).unwrap());
        let cal = vec![sia(
            cmc(2001, 6).unwrap(),
            cmc(2001, 12).unwrap(),
            9,
            59,
            &["a1"],
        )];
        let p = opportunity_profile(&c, &cal, 9).unwrap();
        assert_eq!(p, OpportunityProfile { had_ri: true, sia_count: 0 });
    }

    #[test]
    fn profile_after_one_sia_both_cohorts() {
        let cal = vec![sia(
            cmc(2001, 6).unwrap(),
            cmc(2001, 12).unwrap(),
            9,
            59,
            &["a1"],
        )];
        // b=1 and b=2 children interviewed at t=5 (early 2002).
        for birth in [cmc(2000, 3).unwrap(), cmc(2000, 9).unwrap()] {
            let c = child("a1", birth, cmc(2002, 3).unwrap());
            let p = opportunity_profile(&c, &cal, 9).unwrap();
            assert_eq!(p, OpportunityProfile { had_ri: true, sia_count: 1 });
        }
    }

    #[test]
    fn profile_empty_calendar() {
        let c = child("a1", 1200, 1215);
        let p = opportunity_profile(&c, &[], 9).unwrap();
        assert_eq!(p, OpportunityProfile { had_ri: true, sia_count: 0 });
    }

    #[test]
    fn sia_overlapping_interview_month_only_does_not_count() {
        // Window starts in the interview month: no month <= interview-1 remains.
        let c = child("a1", 1200, 1220);
        let cal = vec![sia(1220, 1224, 9, 59, &["a1"])];
        let p = opportunity_profile(&c, &cal, 9).unwrap();
        assert_eq!(p.sia_count, 0);
    }

    #[test]
    fn negative_ri_age_is_invalid() {
        let c = child("a1", 1200, 1215);
        assert!(opportunity_profile(&c, &[], -1).is_err());
    }

    #[test]
    fn homogeneous_group_becomes_cell() {
        let grid = CohortGrid::new(1201, 6, 10).unwrap();
        let kids: Vec<_> = (0..3).map(|_| child("a1", 1203, 1218)).collect();
        let (cells, rej) = build_cells(&kids, &[], &grid, 9).unwrap();
        assert_eq!(cells.len(), 1);
        assert!(rej.is_empty());
        assert_eq!(cells[0].sia_indicator, 0);
        assert_eq!(cells[0].children.len(), 3);
    }

    #[test]
    fn mixed_exposure_group_dropped() {
        let grid = CohortGrid::new(1201, 6, 10).unwrap();
        // Same cohort, same area/survey; one child interviewed after the SIA.
        let cal = vec![sia(1216, 1217, 9, 59, &["a1"])];
        let kids = vec![child("a1", 1203, 1215), child("a1", 1203, 1220)];
        let (cells, rej) = build_cells(&kids, &cal, &grid, 9).unwrap();
        assert!(cells.is_empty());
        assert_eq!(rej.len(), 2);
        assert!(rej.iter().all(|r| r.reason == REASON_MIXED_SIA));
    }

    #[test]
    fn two_sia_group_dropped() {
        let grid = CohortGrid::new(1201, 6, 10).unwrap();
        let cal = vec![
            sia(1216, 1217, 9, 59, &["a1"]),
            sia(1230, 1231, 9, 59, &["a1"]),
        ];
        let kids = vec![child("a1", 1203, 1240), child("a1", 1204, 1240)];
        let (cells, rej) = build_cells(&kids, &cal, &grid, 9).unwrap();
        assert!(cells.is_empty());
        assert!(rej.iter().all(|r| r.reason == REASON_MULTI_SIA));
    }

    #[test]
    fn too_young_group_dropped() {
        let grid = CohortGrid::new(1201, 6, 10).unwrap();
        let kids = vec![child("a1", 1203, 1205)];
        let (cells, rej) = build_cells(&kids, &[], &grid, 9).unwrap();
        assert!(cells.is_empty());
        assert_eq!(rej[0].reason, REASON_NO_RI);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cohort_index_is_monotone_and_partitions(
                origin in 1150i32..1250,
                len in prop::sample::select(vec![1i32, 2, 3, 4, 6, 12]),
                num in 1usize..40,
                b1 in 1100i32..1400,
                b2 in 1100i32..1400,
            ) {
                let grid = CohortGrid::new(origin, len, num).unwrap();
                let (lo, hi) = (b1.min(b2), b1.max(b2));
                match (grid.cohort_index(lo), grid.cohort_index(hi)) {
                    (Some(a), Some(b)) => prop_assert!(a <= b),
                    _ => {}
                }
                // every in-grid month maps to exactly one cohort, and the
                // cohort's month range contains it
                for m in origin..origin + len * num as i32 {
                    let b = grid.cohort_index(m).expect("in-grid month");
                    let start = origin + (b as i32 - 1) * len;
                    prop_assert!((start..start + len).contains(&m));
                }
                prop_assert_eq!(grid.cohort_index(origin - 1), None);
                prop_assert_eq!(grid.cohort_index(origin + len * num as i32), None);
            }

            #[test]
            fn sia_count_is_monotone_in_interview_time(
                birth in 1190i32..1260,
                start in 1200i32..1280,
                width in 0i32..18,
                min_age in 0i32..12,
                extra_age in 0i32..60,
                t1 in 0i32..80,
                t2 in 0i32..80,
            ) {
                let cal = vec![SiaEvent {
                    sia_id: "s".into(),
                    start_cmc: start,
                    end_cmc: start + width,
                    min_age_months: min_age,
                    max_age_months: min_age + extra_age,
                    area_ids: ["a1".to_string()].into_iter().collect(),
                }];
                let (early, late) = (birth + t1.min(t2), birth + t1.max(t2));
                let mut child = ChildRecord {
                    survey_id: "s1".into(),
                    area_id: "a1".into(),
                    stratum_id: "st".into(),
                    cluster_id: "c".into(),
                    weight: 1.0,
                    birth_cmc: birth,
                    interview_cmc: early,
                    mcv1: 0,
                };
                let c_early = opportunity_profile(&child, &cal, 9).unwrap().sia_count;
                child.interview_cmc = late;
                let c_late = opportunity_profile(&child, &cal, 9).unwrap().sia_count;
                prop_assert!(c_early <= c_late);
            }
        }
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let grid = CohortGrid::new(1201, 6, 10).unwrap();
        let cal = vec![sia(1216, 1218, 9, 59, &["a1"])];
        let mut kids = Vec::new();
        for i in 0..40 {
            let mut c = child(if i % 3 == 0 { "a1" } else { "a2" }, 1195 + i, 1240);
            c.cluster_id = format!("c{}", i % 4);
            kids.push(c);
        }
        let (cells, rej) = build_cells(&kids, &cal, &grid, 9).unwrap();
        let kept: usize = cells.iter().map(|c| c.children.len()).sum();
        assert_eq!(kept + rej.len(), kids.len());
        // every kept child appears exactly once
        let mut seen = std::collections::BTreeSet::new();
        for cell in &cells {
            for ch in &cell.children {
                assert!(seen.insert((ch.area_id.clone(), ch.birth_cmc, ch.cluster_id.clone())));
            }
        }
    }
}
