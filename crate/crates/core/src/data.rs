//! Observed-data records shared by all fitters and estimators.
//!
//! A study is a collection of groups; each group's members share a random
//! effect and form one i.i.d. sampling unit. Covariates are stored as
//! already-constructed design columns (any squared terms are precomputed at
//! ingestion). `event = false` encodes a right-censored observation.
//!
//! CSV schema (header required, UTF-8, `.` decimal separator):
//! `group_id,individual_id,<covariate columns...>,treatment,time,event`

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: design covariates, binary treatment, observed time, and
/// event indicator (`true` = event observed, `false` = censored).
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub individual_id: String,
    pub covariates: Vec<f64>,
    pub treatment: bool,
    pub observed_time: f64,
    pub event: bool,
}

/// A group of records sharing a random effect; the i.i.d. sampling unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub group_id: String,
    pub members: Vec<IndividualRecord>,
}

impl GroupData {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Number of treated members.
    pub fn treated_count(&self) -> usize {
        self.members.iter().filter(|m| m.treatment).count()
    }

    /// Number of treated members other than `j`.
    pub fn treated_others(&self, j: usize) -> usize {
        self.treated_count() - usize::from(self.members[j].treatment)
    }
}

/// All observed data: `m` groups plus the covariate column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    pub groups: Vec<GroupData>,
    pub covariate_names: Vec<String>,
}

impl StudyData {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_individuals(&self) -> usize {
        self.groups.iter().map(GroupData::size).sum()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }
}

/// A target `μ(t, a, α)`; `own_treatment = None` requests the marginal
/// target `μ(t, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub time_horizon: f64,
    pub own_treatment: Option<bool>,
    pub alpha: f64,
}

impl TargetSpec {
    pub fn new(time_horizon: f64, own_treatment: Option<bool>, alpha: f64) -> Result<Self> {
        let spec = TargetSpec { time_horizon, own_treatment, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "allocation probability must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.time_horizon > 0.0 && self.time_horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time horizon must be positive and finite, got {}",
                self.time_horizon
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.own_treatment {
            Some(a) => write!(f, "mu({}, {}, {})", self.time_horizon, u8::from(a), self.alpha),
            None => write!(f, "mu({}, {})", self.time_horizon, self.alpha),
        }
    }
}

/// One invariant violation found by [`validate_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub group_id: Option<String>,
    pub individual_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.group_id, &self.individual_id) {
            (Some(g), Some(i)) => write!(f, "group {g}, individual {i}: {}", self.message),
            (Some(g), None) => write!(f, "group {g}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Report listing every invariant violation; empty iff the data are usable
/// by all fitters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the structural invariants: at least one group, unique group ids,
/// nonempty groups with unique member ids, finite nonnegative times, and
/// covariate vectors matching the declared names. Report-only, no errors.
pub fn validate_study(data: &StudyData) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |g: Option<&str>, i: Option<&str>, msg: String| {
        report.violations.push(Violation {
            group_id: g.map(str::to_owned),
            individual_id: i.map(str::to_owned),
            message: msg,
        });
    };

    if data.groups.is_empty() {
        push(None, None, "study contains no groups".into());
    }
    let mut seen_groups: HashMap<&str, usize> = HashMap::new();
    for group in &data.groups {
        if let Some(_prev) = seen_groups.insert(&group.group_id, 1) {
            push(Some(&group.group_id), None, "duplicate group id".into());
        }
        if group.members.is_empty() {
            push(Some(&group.group_id), None, "group has no members".into());
        }
        let mut seen_members: HashMap<&str, usize> = HashMap::new();
        for member in &group.members {
            if seen_members.insert(&member.individual_id, 1).is_some() {
                push(
                    Some(&group.group_id),
                    Some(&member.individual_id),
                    "duplicate individual id within group".into(),
                );
            }
            if !(member.observed_time >= 0.0 && member.observed_time.is_finite()) {
                push(
                    Some(&group.group_id),
                    Some(&member.individual_id),
                    format!("observed time must be finite and >= 0, got {}", member.observed_time),
                );
            }
            if member.covariates.len() != data.covariate_names.len() {
                push(
                    Some(&group.group_id),
                    Some(&member.individual_id),
                    format!(
                        "covariate vector has length {}, expected {}",
                        member.covariates.len(),
                        data.covariate_names.len()
                    ),
                );
            }
            if member.covariates.iter().any(|c| !c.is_finite()) {
                push(
                    Some(&group.group_id),
                    Some(&member.individual_id),
                    "covariates contain non-finite values".into(),
                );
            }
        }
    }
    report
}

fn parse_binary(field: &str, column: &str, line: u64) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::InvalidData(format!(
            "line {line}: column '{column}' must be 0 or 1, got '{other}'"
        ))),
    }
}

/// Read a study from CSV. Rows are grouped by `group_id` in order of first
/// appearance, so ingestion is deterministic for a given file.
pub fn read_study_csv<R: Read>(reader: R) -> Result<StudyData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 5
        || cols.first() != Some(&"group_id")
        || cols.get(1) != Some(&"individual_id")
        || cols.get(cols.len() - 3) != Some(&"treatment")
        || cols.get(cols.len() - 2) != Some(&"time")
        || cols.last() != Some(&"event")
    {
        return Err(Error::InvalidData(
            "header must be group_id,individual_id,<covariates...>,treatment,time,event".into(),
        ));
    }
    let covariate_names: Vec<String> =
        cols[2..cols.len() - 3].iter().map(|s| s.to_string()).collect();
    let ncov = covariate_names.len();

    let mut groups: Vec<GroupData> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (rownum, row) in rdr.records().enumerate() {
        let row = row?;
        let line = rownum as u64 + 2;
        if row.len() != cols.len() {
            return Err(Error::InvalidData(format!(
                "line {line}: expected {} fields, got {}",
                cols.len(),
                row.len()
            )));
        }
        let mut covariates = Vec::with_capacity(ncov);
        for (k, name) in covariate_names.iter().enumerate() {
            let raw = &row[2 + k];
            let v: f64 = raw.parse().map_err(|_| {
                Error::InvalidData(format!("line {line}: column '{name}' is not a number: '{raw}'"))
            })?;
            covariates.push(v);
        }
        let time: f64 = row[2 + ncov + 1].parse().map_err(|_| {
            Error::InvalidData(format!("line {line}: column 'time' is not a number"))
        })?;
        let record = IndividualRecord {
            individual_id: row[1].to_string(),
            covariates,
            treatment: parse_binary(&row[2 + ncov], "treatment", line)?,
            observed_time: time,
            event: parse_binary(&row[2 + ncov + 2], "event", line)?,
        };
        let gid = row[0].to_string();
        let gi = *index.entry(gid.clone()).or_insert_with(|| {
            groups.push(GroupData { group_id: gid, members: Vec::new() });
            groups.len() - 1
        });
        groups[gi].members.push(record);
    }
    Ok(StudyData { groups, covariate_names })
}

pub fn read_study_csv_path(path: &Path) -> Result<StudyData> {
    read_study_csv(std::fs::File::open(path)?)
}

/// Format a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a study in the ingestion schema. Floats carry 17 significant digits.
pub fn write_study_csv<W: Write>(data: &StudyData, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["group_id".to_string(), "individual_id".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    header.extend(["treatment".into(), "time".into(), "event".into()]);
    wtr.write_record(&header)?;
    for group in &data.groups {
        for m in &group.members {
            let mut row = vec![group.group_id.clone(), m.individual_id.clone()];
            row.extend(m.covariates.iter().map(|&c| fmt_g17(c)));
            row.push(u8::from(m.treatment).to_string());
            row.push(fmt_g17(m.observed_time));
            row.push(u8::from(m.event).to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_study_csv_path(data: &StudyData, path: &Path) -> Result<()> {
    write_study_csv(data, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, time: f64) -> IndividualRecord {
        IndividualRecord {
            individual_id: id.into(),
            covariates: vec![1.5, 0.2],
            treatment: true,
            observed_time: time,
            event: true,
        }
    }

    fn one_group_study() -> StudyData {
        StudyData {
            groups: vec![GroupData { group_id: "g1".into(), members: vec![record("i1", 3.0)] }],
            covariate_names: vec!["L1".into(), "L2".into()],
        }
    }

    #[test]
    fn valid_study_passes() {
        assert!(validate_study(&one_group_study()).is_ok());
    }

    #[test]
    fn negative_time_is_reported_with_ids() {
        let mut study = one_group_study();
        study.groups[0].members[0].observed_time = -1.0;
        let report = validate_study(&study);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.group_id.as_deref(), Some("g1"));
        assert_eq!(v.individual_id.as_deref(), Some("i1"));
    }

    #[test]
    fn duplicate_group_ids_are_reported() {
        let mut study = one_group_study();
        study.groups.push(study.groups[0].clone());
        let report = validate_study(&study);
        assert!(report.violations.iter().any(|v| v.message.contains("duplicate group id")));
    }

    #[test]
    fn validation_is_idempotent() {
        let study = one_group_study();
        assert_eq!(validate_study(&study), validate_study(&study));
    }

    #[test]
    fn covariate_length_mismatch_reported() {
        let mut study = one_group_study();
        study.groups[0].members[0].covariates.pop();
        assert!(!validate_study(&study).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let study = StudyData {
            groups: vec![
                GroupData {
                    group_id: "7".into(),
                    members: vec![record("a", 1.25), record("b", 0.0625)],
                },
                GroupData { group_id: "g2".into(), members: vec![record("c", 10.0)] },
            ],
            covariate_names: vec!["L1".into(), "L2".into()],
        };
        let mut buf = Vec::new();
        write_study_csv(&study, &mut buf).unwrap();
        let back = read_study_csv(buf.as_slice()).unwrap();
        assert_eq!(study, back);
    }

    #[test]
    fn csv_rejects_bad_header_and_bad_binary() {
        let bad = "group,individual_id,L1,treatment,time,event\n1,a,0.5,1,2.0,1\n";
        assert!(read_study_csv(bad.as_bytes()).is_err());
        let bad2 = "group_id,individual_id,L1,treatment,time,event\n1,a,0.5,2,2.0,1\n";
        match read_study_csv(bad2.as_bytes()) {
            Err(Error::InvalidData(msg)) => assert!(msg.contains("treatment")),
            other => panic!("expected InvalidData, got {other:?}"),
        }
    }

    #[test]
    fn csv_groups_by_first_appearance() {
        let text = "group_id,individual_id,L1,L2,treatment,time,event\n\
                    g2,a,0,0,1,1.0,1\n\
                    g1,b,0,0,0,2.0,0\n\
                    g2,c,0,0,1,3.0,1\n";
        let study = read_study_csv(text.as_bytes()).unwrap();
        assert_eq!(study.groups.len(), 2);
        assert_eq!(study.groups[0].group_id, "g2");
        assert_eq!(study.groups[0].members.len(), 2);
        assert_eq!(study.groups[1].members.len(), 1);
    }

    #[test]
    fn target_spec_bounds() {
        assert!(TargetSpec::new(100.0, Some(true), 0.5).is_ok());
        assert!(TargetSpec::new(100.0, None, 1.2).is_err());
        assert!(TargetSpec::new(100.0, None, 0.0).is_err());
        assert!(TargetSpec::new(0.0, Some(false), 0.5).is_err());
    }
}
