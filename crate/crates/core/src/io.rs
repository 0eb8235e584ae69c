//! CSV and JSON file formats for every pipeline stage.
//!
//! Every output starts with a `# manifest: <hash>` comment line tying it to
//! the run manifest; readers skip `#` comments. Schema mismatches name the
//! offending column, malformed values name the line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assess::AssessmentReport;
use crate::cohort::{ChildRecord, EligibleCell, Rejection, SiaEvent};
use crate::design::{CellEstimate, ExcludedCell};
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::inference::{FixedEffectSummary, HyperGridPoint, PosteriorSummary};
use crate::model::{Hyperparameters, Variant};

/// Sorted unique string identifiers with index lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdIndex {
    ids: Vec<String>,
}

impl IdIndex {
    pub fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut ids: Vec<String> = iter.into_iter().collect();
        ids.sort();
        ids.dedup();
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Ingestion {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let headers = reader.headers().map_err(Error::Csv)?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Ingestion {
            file: path.display().to_string(),
            line: 1,
            message: format!("expected columns {expected:?}, found {got:?}"),
        });
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse::<T>().map_err(|_| Error::Ingestion {
        file: path.display().to_string(),
        line: line_of(record),
        message: format!("column {name}: cannot parse {raw:?}"),
    })
}

/// Buffered CSV writer with the manifest comment line already emitted.
pub fn manifest_writer(path: &Path, manifest_hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# manifest: {manifest_hash}")?;
    Ok(csv::Writer::from_writer(file))
}

pub const CHILDREN_HEADER: [&str; 8] = [
    "survey_id",
    "area_id",
    "stratum_id",
    "cluster_id",
    "weight",
    "birth_cmc",
    "interview_cmc",
    "mcv1",
];

/// Read a survey roster. Rows with missing birth month, vaccination status,
/// or a non-usable weight become rejections (no imputation); anything that
/// fails to parse is a hard error with its line number.
pub fn read_children(path: &Path) -> Result<(Vec<ChildRecord>, Vec<Rejection>)> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &CHILDREN_HEADER)?;
    let mut children = Vec::new();
    let mut rejections = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        if record.len() != CHILDREN_HEADER.len() {
            return Err(Error::Ingestion {
                file: path.display().to_string(),
                line: line_of(&record),
                message: format!("expected {} columns, found {}", CHILDREN_HEADER.len(), record.len()),
            });
        }
        let survey_id: String = parse_field(path, &record, 0, "survey_id")?;
        let area_id: String = parse_field(path, &record, 1, "area_id")?;
        let stratum_id: String = parse_field(path, &record, 2, "stratum_id")?;
        let cluster_id: String = parse_field(path, &record, 3, "cluster_id")?;

        let mut reject = |reason: &str, birth: i32, interview: i32| {
            rejections.push(Rejection {
                survey_id: survey_id.clone(),
                area_id: area_id.clone(),
                stratum_id: stratum_id.clone(),
                cluster_id: cluster_id.clone(),
                birth_cmc: birth,
                interview_cmc: interview,
                reason: reason.to_string(),
            });
        };

        if record.get(5).unwrap_or("").is_empty() {
            reject("missing birth_cmc", 0, 0);
            continue;
        }
        if record.get(7).unwrap_or("").is_empty() {
            reject("missing mcv1", 0, 0);
            continue;
        }
        let weight: f64 = parse_field(path, &record, 4, "weight")?;
        let birth_cmc: i32 = parse_field(path, &record, 5, "birth_cmc")?;
        let interview_cmc: i32 = parse_field(path, &record, 6, "interview_cmc")?;
        let mcv1: u8 = parse_field(path, &record, 7, "mcv1")?;
        if mcv1 > 1 {
            return Err(Error::Ingestion {
                file: path.display().to_string(),
                line: line_of(&record),
                message: format!("column mcv1: must be 0 or 1, found {mcv1}"),
            });
        }
        if !(weight > 0.0) || !weight.is_finite() {
            reject("nonpositive weight", birth_cmc, interview_cmc);
            continue;
        }
        if interview_cmc < birth_cmc {
            reject("interview before birth", birth_cmc, interview_cmc);
            continue;
        }
        children.push(ChildRecord {
            survey_id,
            area_id,
            stratum_id,
            cluster_id,
            weight,
            birth_cmc,
            interview_cmc,
            mcv1,
        });
    }
    Ok((children, rejections))
}

pub fn write_children(path: &Path, manifest_hash: &str, children: &[ChildRecord]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(CHILDREN_HEADER)?;
    for c in children {
        w.write_record(&[
            c.survey_id.clone(),
            c.area_id.clone(),
            c.stratum_id.clone(),
            c.cluster_id.clone(),
            c.weight.to_string(),
            c.birth_cmc.to_string(),
            c.interview_cmc.to_string(),
            c.mcv1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SIA_HEADER: [&str; 6] = [
    "sia_id",
    "start_cmc",
    "end_cmc",
    "min_age_months",
    "max_age_months",
    "area_ids",
];

pub fn read_sia_calendar(path: &Path) -> Result<Vec<SiaEvent>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &SIA_HEADER)?;
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        let event = SiaEvent {
            sia_id: parse_field(path, &record, 0, "sia_id")?,
            start_cmc: parse_field(path, &record, 1, "start_cmc")?,
            end_cmc: parse_field(path, &record, 2, "end_cmc")?,
            min_age_months: parse_field(path, &record, 3, "min_age_months")?,
            max_age_months: parse_field(path, &record, 4, "max_age_months")?,
            area_ids: record
                .get(5)
                .unwrap_or("")
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string())
                .collect(),
        };
        event.validate().map_err(|e| Error::Ingestion {
            file: path.display().to_string(),
            line: line_of(&record),
            message: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_sia_calendar(path: &Path, manifest_hash: &str, events: &[SiaEvent]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(SIA_HEADER)?;
    for e in events {
        let areas: Vec<&str> = e.area_ids.iter().map(|s| s.as_str()).collect();
        w.write_record(&[
            e.sia_id.clone(),
            e.start_cmc.to_string(),
            e.end_cmc.to_string(),
            e.min_age_months.to_string(),
            e.max_age_months.to_string(),
            areas.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const ADJACENCY_HEADER: [&str; 2] = ["area_id", "neighbor_id"];

/// Read the adjacency list. Isolated areas appear as rows with an empty
/// neighbor. The listing must be symmetric.
pub fn read_adjacency(path: &Path) -> Result<(AdjacencyGraph, IdIndex)> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &ADJACENCY_HEADER)?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        let a: String = parse_field(path, &record, 0, "area_id")?;
        let b = record.get(1).unwrap_or("").to_string();
        pairs.push((a, b));
    }
    let index = IdIndex::from_iter(
        pairs
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .filter(|s| !s.is_empty()),
    );
    let mut edge_set = std::collections::BTreeSet::new();
    for (a, b) in &pairs {
        if b.is_empty() {
            continue;
        }
        edge_set.insert((a.clone(), b.clone()));
    }
    for (a, b) in &edge_set {
        if !edge_set.contains(&(b.clone(), a.clone())) {
            return Err(Error::Ingestion {
                file: path.display().to_string(),
                line: 0,
                message: format!("adjacency not symmetric: ({a},{b}) lacks ({b},{a})"),
            });
        }
    }
    let edges: Vec<(usize, usize)> = edge_set
        .iter()
        .filter_map(|(a, b)| {
            let (ia, ib) = (index.index_of(a)?, index.index_of(b)?);
            (ia < ib).then_some((ia, ib))
        })
        .collect();
    let graph = AdjacencyGraph::new(index.len(), &edges)?;
    Ok((graph, index))
}

pub fn write_adjacency(path: &Path, manifest_hash: &str, graph: &AdjacencyGraph, ids: &IdIndex) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(ADJACENCY_HEADER)?;
    for i in 0..graph.num_areas() {
        if graph.neighbors(i).is_empty() {
            w.write_record(&[ids.id(i), ""])?;
        }
        for &j in graph.neighbors(i) {
            w.write_record(&[ids.id(i), ids.id(j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const CELLS_HEADER: [&str; 10] = [
    "area_id",
    "cohort",
    "survey_id",
    "x",
    "stratum_id",
    "cluster_id",
    "weight",
    "birth_cmc",
    "interview_cmc",
    "mcv1",
];

pub fn write_cells(path: &Path, manifest_hash: &str, cells: &[EligibleCell]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(CELLS_HEADER)?;
    for cell in cells {
        for c in &cell.children {
            w.write_record(&[
                cell.area_id.clone(),
                cell.cohort.to_string(),
                cell.survey_id.clone(),
                cell.sia_indicator.to_string(),
                c.stratum_id.clone(),
                c.cluster_id.clone(),
                c.weight.to_string(),
                c.birth_cmc.to_string(),
                c.interview_cmc.to_string(),
                c.mcv1.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cells(path: &Path) -> Result<Vec<EligibleCell>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &CELLS_HEADER)?;
    let mut groups: BTreeMap<(String, usize, String, u8), Vec<ChildRecord>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        let area_id: String = parse_field(path, &record, 0, "area_id")?;
        let cohort: usize = parse_field(path, &record, 1, "cohort")?;
        let survey_id: String = parse_field(path, &record, 2, "survey_id")?;
        let x: u8 = parse_field(path, &record, 3, "x")?;
        let child = ChildRecord {
            survey_id: survey_id.clone(),
            area_id: area_id.clone(),
            stratum_id: parse_field(path, &record, 4, "stratum_id")?,
            cluster_id: parse_field(path, &record, 5, "cluster_id")?,
            weight: parse_field(path, &record, 6, "weight")?,
            birth_cmc: parse_field(path, &record, 7, "birth_cmc")?,
            interview_cmc: parse_field(path, &record, 8, "interview_cmc")?,
            mcv1: parse_field(path, &record, 9, "mcv1")?,
        };
        groups.entry((area_id, cohort, survey_id, x)).or_default().push(child);
    }
    Ok(groups
        .into_iter()
        .map(|((area_id, cohort, survey_id, x), children)| EligibleCell {
            area_id,
            cohort,
            survey_id,
            sia_indicator: x,
            children,
        })
        .collect())
}

pub const REJECTIONS_HEADER: [&str; 7] = [
    "survey_id",
    "area_id",
    "stratum_id",
    "cluster_id",
    "birth_cmc",
    "interview_cmc",
    "reason",
];

pub fn write_rejections(path: &Path, manifest_hash: &str, rejections: &[Rejection]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(REJECTIONS_HEADER)?;
    for r in rejections {
        w.write_record(&[
            r.survey_id.clone(),
            r.area_id.clone(),
            r.stratum_id.clone(),
            r.cluster_id.clone(),
            r.birth_cmc.to_string(),
            r.interview_cmc.to_string(),
            r.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const DIRECT_HEADER: [&str; 9] = [
    "area_id", "cohort", "survey_id", "x", "n", "p_hat", "v_hat", "theta_hat", "V_hat",
];

pub fn write_direct_estimates(path: &Path, manifest_hash: &str, estimates: &[CellEstimate]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(DIRECT_HEADER)?;
    for e in estimates {
        w.write_record(&[
            e.area_id.clone(),
            e.cohort.to_string(),
            e.survey_id.clone(),
            e.x.to_string(),
            e.n.to_string(),
            e.p_hat.to_string(),
            e.v_hat.to_string(),
            e.theta_hat.to_string(),
            e.theta_var.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_direct_estimates(path: &Path) -> Result<Vec<CellEstimate>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &DIRECT_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        out.push(CellEstimate {
            area_id: parse_field(path, &record, 0, "area_id")?,
            cohort: parse_field(path, &record, 1, "cohort")?,
            survey_id: parse_field(path, &record, 2, "survey_id")?,
            x: parse_field(path, &record, 3, "x")?,
            n: parse_field(path, &record, 4, "n")?,
            p_hat: parse_field(path, &record, 5, "p_hat")?,
            v_hat: parse_field(path, &record, 6, "v_hat")?,
            theta_hat: parse_field(path, &record, 7, "theta_hat")?,
            theta_var: parse_field(path, &record, 8, "V_hat")?,
        });
    }
    Ok(out)
}

/// Resolve direct estimates to model indices against the area and survey
/// id maps and the cohort grid size.
pub fn resolve_cells(
    estimates: &[CellEstimate],
    areas: &IdIndex,
    surveys: &IdIndex,
    num_cohorts: usize,
) -> Result<Vec<crate::model::ObsCell>> {
    estimates
        .iter()
        .map(|e| {
            let area = areas.index_of(&e.area_id).ok_or_else(|| Error::Ingestion {
                file: "direct_estimates".into(),
                line: 0,
                message: format!("unknown area id {:?}", e.area_id),
            })?;
            let survey = surveys.index_of(&e.survey_id).ok_or_else(|| Error::Ingestion {
                file: "direct_estimates".into(),
                line: 0,
                message: format!("unknown survey id {:?}", e.survey_id),
            })?;
            if e.cohort == 0 || e.cohort > num_cohorts {
                return Err(Error::Ingestion {
                    file: "direct_estimates".into(),
                    line: 0,
                    message: format!("cohort {} outside 1..={num_cohorts}", e.cohort),
                });
            }
            Ok(crate::model::ObsCell {
                area,
                cohort: e.cohort - 1,
                survey,
                x: e.x,
                theta_hat: e.theta_hat,
                theta_var: e.theta_var,
            })
        })
        .collect()
}

pub const EXCLUDED_HEADER: [&str; 6] = ["area_id", "cohort", "survey_id", "n", "p_hat", "reason"];

pub fn write_excluded_cells(path: &Path, manifest_hash: &str, rows: &[ExcludedCell]) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(EXCLUDED_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.area_id.clone(),
            r.cohort.to_string(),
            r.survey_id.clone(),
            r.n.to_string(),
            r.p_hat.to_string(),
            r.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const COVERAGE_HEADER: [&str; 5] = ["area_id", "cohort", "median", "lower95", "upper95"];

pub fn write_ri_coverage(
    path: &Path,
    manifest_hash: &str,
    summaries: &[PosteriorSummary],
    areas: &IdIndex,
) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(COVERAGE_HEADER)?;
    for s in summaries {
        w.write_record(&[
            areas.id(s.area).to_string(),
            (s.cohort + 1).to_string(),
            s.median.to_string(),
            s.lower95.to_string(),
            s.upper95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const HYPER_HEADER: [&str; 10] = [
    "variant",
    "sigma_alpha",
    "sigma_gamma",
    "sigma_delta",
    "sigma_tau",
    "sigma_phi",
    "sigma_epsilon",
    "rho_phi",
    "log_posterior",
    "weight",
];

pub fn write_hyper_posterior(
    path: &Path,
    manifest_hash: &str,
    variant: Variant,
    grid: &[HyperGridPoint],
) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(HYPER_HEADER)?;
    for p in grid {
        let h = &p.hyper;
        w.write_record(&[
            variant.as_str().to_string(),
            h.sigma_alpha.to_string(),
            h.sigma_gamma.to_string(),
            h.sigma_delta.to_string(),
            h.sigma_tau.to_string(),
            h.sigma_phi.to_string(),
            h.sigma_epsilon.to_string(),
            h.rho_phi.map(|r| r.to_string()).unwrap_or_default(),
            p.log_posterior.to_string(),
            p.weight.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const FIXED_EFFECTS_HEADER: [&str; 4] = ["param", "median", "lower95", "upper95"];

pub fn write_fixed_effects(
    path: &Path,
    manifest_hash: &str,
    effects: &[FixedEffectSummary],
) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(FIXED_EFFECTS_HEADER)?;
    for e in effects {
        w.write_record(&[
            e.param.clone(),
            e.median.to_string(),
            e.lower95.to_string(),
            e.upper95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const ASSESSMENT_HEADER: [&str; 10] = [
    "variant",
    "dic",
    "waic",
    "lcpo",
    "share_icar",
    "share_space_iid",
    "share_rw2",
    "share_time_iid",
    "share_space_time",
    "share_survey",
];

pub fn write_assessment(
    path: &Path,
    manifest_hash: &str,
    rows: &[(Variant, AssessmentReport)],
) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(ASSESSMENT_HEADER)?;
    for (variant, r) in rows {
        let s = r.variance_shares;
        w.write_record(&[
            variant.as_str().to_string(),
            r.dic.to_string(),
            r.waic.to_string(),
            r.lcpo.to_string(),
            s.icar.to_string(),
            s.space_iid.to_string(),
            s.rw2.to_string(),
            s.time_iid.to_string(),
            s.space_time.to_string(),
            s.survey.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const TRUTH_HEADER: [&str; 3] = ["area_id", "cohort", "p_ri_true"];

pub fn write_truth(
    path: &Path,
    manifest_hash: &str,
    p_ri: &[Vec<f64>],
    areas: &IdIndex,
) -> Result<()> {
    let mut w = manifest_writer(path, manifest_hash)?;
    w.write_record(TRUTH_HEADER)?;
    for (i, row) in p_ri.iter().enumerate() {
        for (b, p) in row.iter().enumerate() {
            w.write_record(&[areas.id(i).to_string(), (b + 1).to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<(String, usize, f64)>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &TRUTH_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        out.push((
            parse_field(path, &record, 0, "area_id")?,
            parse_field(path, &record, 1, "cohort")?,
            parse_field(path, &record, 2, "p_ri_true")?,
        ));
    }
    Ok(out)
}

/// Serialized fit: the hyperparameter grid plus everything needed to rebuild
/// posteriors (layout dimensions, id maps, solver metadata).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub manifest_hash: String,
    pub variant: Variant,
    pub num_areas: usize,
    pub num_cohorts: usize,
    pub num_surveys: usize,
    pub area_ids: IdIndex,
    pub survey_ids: IdIndex,
    pub grid: Vec<HyperGridPoint>,
    pub mode: Hyperparameters,
    pub mode_log_posterior: f64,
    pub mode_grad_norm: f64,
    pub evaluations: usize,
    /// Factorization metadata: profile envelope entries under the solver
    /// ordering.
    pub envelope_size: usize,
    pub ordering: String,
}

pub fn write_fit(path: &Path, fit: &FitFile) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(fit).expect("fit serializes"))?;
    Ok(())
}

pub fn read_fit(path: &Path) -> Result<FitFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Ingestion {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn children_round_trip_with_rejections() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("children.csv");
        std::fs::write(
            &path,
            "# manifest: deadbeef\n\
             survey_id,area_id,stratum_id,cluster_id,weight,birth_cmc,interview_cmc,mcv1\n\
             s1,a1,st1,c1,1.5,1205,1250,1\n\
             s1,a1,st1,c1,1.0,,1250,0\n\
             s1,a1,st1,c2,0.0,1210,1250,1\n\
             s1,a2,st2,c3,2.0,1240,1230,0\n",
        )
        .unwrap();
        let (children, rejections) = read_children(&path).unwrap();
        assert_eq!(children.len(), 1);
        assert_eq!(rejections.len(), 3);
        let reasons: Vec<&str> = rejections.iter().map(|r| r.reason.as_str()).collect();
        assert!(reasons.contains(&"missing birth_cmc"));
        assert!(reasons.contains(&"nonpositive weight"));
        assert!(reasons.contains(&"interview before birth"));
    }

    #[test]
    fn malformed_number_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("children.csv");
        std::fs::write(
            &path,
            "survey_id,area_id,stratum_id,cluster_id,weight,birth_cmc,interview_cmc,mcv1\n\
             s1,a1,st1,c1,abc,1205,1250,1\n",
        )
        .unwrap();
        match read_children(&path) {
            Err(Error::Ingestion { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("weight"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_names_columns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("children.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        match read_children(&path) {
            Err(Error::Ingestion { message, .. }) => {
                assert!(message.contains("survey_id"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn adjacency_symmetry_enforced() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("adjacency.csv");
        std::fs::write(&path, "area_id,neighbor_id\na1,a2\n").unwrap();
        assert!(read_adjacency(&path).is_err());
        std::fs::write(&path, "area_id,neighbor_id\na1,a2\na2,a1\na3,\n").unwrap();
        let (graph, index) = read_adjacency(&path).unwrap();
        assert_eq!(graph.num_areas(), 3);
        assert_eq!(index.ids(), &["a1".to_string(), "a2".into(), "a3".into()]);
        assert_eq!(graph.degree(2), 0);
    }

    #[test]
    fn direct_estimates_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("direct.csv");
        let rows = vec![CellEstimate {
            area_id: "a1".into(),
            cohort: 3,
            survey_id: "s1".into(),
            x: 1,
            n: 12,
            p_hat: 0.75,
            v_hat: 0.01,
            theta_hat: 1.0986122886681098,
            theta_var: 0.2844444444444444,
        }];
        write_direct_estimates(&path, "cafe", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest: cafe\n"));
        let back = read_direct_estimates(&path).unwrap();
        assert_eq!(back, rows);
    }
}
