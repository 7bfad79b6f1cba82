//! CSV layouts of the patient, claim and panel files.

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Facility, PatientProfile, Severity};
use crate::severity::{ClaimRecord, SeverityCategory};
use crate::synth::PanelRow;

pub const PATIENT_COLUMNS: [&str; 14] = [
    "patient_id",
    "age",
    "male",
    "minority",
    "urban",
    "rural_hukou",
    "distance_km",
    "low_income",
    "poor_household",
    "distant",
    "disadvantaged",
    "high_income",
    "facility_choice",
    "used_ambulatory",
];

pub const CLAIM_COLUMNS: [&str; 8] = [
    "patient_id",
    "year",
    "record_type",
    "facility_type",
    "diagnosis_class",
    "diagnosis_code",
    "total_cost_rmb",
    "oop_cost_rmb",
];

pub const PANEL_COLUMNS: [&str; 10] = [
    "patient_id",
    "year",
    "post",
    "disadvantaged",
    "used_ambulatory",
    "severity",
    "age",
    "male",
    "minority",
    "urban",
];

/// Severity placeholder for patients read from disk, before a severity
/// measure has been built from their claims.
pub const UNASSIGNED_THETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub patient_id: u64,
    pub age: f64,
    pub male: u8,
    pub minority: u8,
    pub urban: u8,
    pub rural_hukou: u8,
    pub distance_km: f64,
    pub low_income: u8,
    pub poor_household: u8,
    pub distant: u8,
    pub disadvantaged: u8,
    pub high_income: u8,
    pub facility_choice: u8,
    pub used_ambulatory: u8,
}

fn flag(name: &str, id: u64, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Data(format!(
            "patient {id}: `{name}` must be 0 or 1, got {v}"
        ))),
    }
}

impl From<&PatientProfile> for PatientRow {
    fn from(p: &PatientProfile) -> Self {
        PatientRow {
            patient_id: p.id,
            age: p.age,
            male: p.male as u8,
            minority: p.minority as u8,
            urban: p.urban as u8,
            rural_hukou: p.rural_hukou as u8,
            distance_km: p.distance_km,
            low_income: (!p.high_income) as u8,
            poor_household: p.poor_household as u8,
            distant: p.distant as u8,
            disadvantaged: p.disadvantaged() as u8,
            high_income: p.high_income as u8,
            facility_choice: p.facility.code(),
            used_ambulatory: p.used_ambulatory as u8,
        }
    }
}

impl PatientRow {
    /// Profile with a placeholder severity; the flags must be consistent.
    pub fn to_profile(&self) -> Result<PatientProfile> {
        let id = self.patient_id;
        let p = PatientProfile {
            id,
            theta: Severity::new(UNASSIGNED_THETA)?,
            facility: Facility::try_from(self.facility_choice)?,
            poor_household: flag("poor_household", id, self.poor_household)?,
            distant: flag("distant", id, self.distant)?,
            rural_hukou: flag("rural_hukou", id, self.rural_hukou)?,
            urban: flag("urban", id, self.urban)?,
            minority: flag("minority", id, self.minority)?,
            male: flag("male", id, self.male)?,
            high_income: flag("high_income", id, self.high_income)?,
            age: self.age,
            distance_km: self.distance_km,
            used_ambulatory: flag("used_ambulatory", id, self.used_ambulatory)?,
        };
        if flag("disadvantaged", id, self.disadvantaged)? != p.disadvantaged() {
            return Err(Error::Data(format!(
                "patient {id}: `disadvantaged` must equal poor_household OR distant"
            )));
        }
        if flag("low_income", id, self.low_income)? == p.high_income {
            return Err(Error::Data(format!(
                "patient {id}: `low_income` must be the complement of `high_income`"
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCsvRow {
    pub patient_id: u64,
    pub year: i32,
    pub post: u8,
    pub disadvantaged: u8,
    pub used_ambulatory: u8,
    pub severity: SeverityCategory,
    pub age: f64,
    pub male: u8,
    pub minority: u8,
    pub urban: u8,
}

impl From<&PanelRow> for PanelCsvRow {
    fn from(r: &PanelRow) -> Self {
        PanelCsvRow {
            patient_id: r.patient_id,
            year: r.year,
            post: r.post as u8,
            disadvantaged: r.disadvantaged as u8,
            used_ambulatory: r.used_ambulatory as u8,
            severity: r.category,
            age: r.age,
            male: r.male as u8,
            minority: r.minority as u8,
            urban: r.urban as u8,
        }
    }
}

impl PanelCsvRow {
    pub fn to_row(&self) -> Result<PanelRow> {
        let id = self.patient_id;
        Ok(PanelRow {
            patient_id: id,
            year: self.year,
            post: flag("post", id, self.post)?,
            disadvantaged: flag("disadvantaged", id, self.disadvantaged)?,
            used_ambulatory: flag("used_ambulatory", id, self.used_ambulatory)?,
            category: self.severity,
            age: self.age,
            male: flag("male", id, self.male)?,
            minority: flag("minority", id, self.minority)?,
            urban: flag("urban", id, self.urban)?,
        })
    }
}

/// Serializes rows to CSV bytes.
pub fn to_csv_bytes<T: Serialize>(
    rows: impl IntoIterator<Item = T>,
    header: &[&str],
) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("CSV buffer: {e}")))
}

/// Reads a CSV file after checking that every required column is present.
pub fn read_csv<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let present: BTreeSet<String> = r.headers()?.iter().map(str::to_string).collect();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !present.contains(**c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns {
            file: path.display().to_string(),
            columns: missing,
        });
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn patients_csv(patients: &[PatientProfile]) -> Result<Vec<u8>> {
    to_csv_bytes(patients.iter().map(PatientRow::from), &PATIENT_COLUMNS)
}

pub fn claims_csv(claims: &[ClaimRecord]) -> Result<Vec<u8>> {
    to_csv_bytes(claims, &CLAIM_COLUMNS)
}

pub fn panel_csv(rows: &[PanelRow]) -> Result<Vec<u8>> {
    to_csv_bytes(rows.iter().map(PanelCsvRow::from), &PANEL_COLUMNS)
}

pub fn read_patients(path: &Path) -> Result<Vec<PatientProfile>> {
    let rows: Vec<PatientRow> = read_csv(path, &PATIENT_COLUMNS)?;
    let patients: Vec<PatientProfile> = rows
        .iter()
        .map(PatientRow::to_profile)
        .collect::<Result<_>>()?;
    let ids: BTreeSet<u64> = patients.iter().map(|p| p.id).collect();
    if ids.len() != patients.len() {
        return Err(Error::Data(format!(
            "{}: duplicate patient_id values",
            path.display()
        )));
    }
    Ok(patients)
}

pub fn read_claims(path: &Path) -> Result<Vec<ClaimRecord>> {
    let claims: Vec<ClaimRecord> = read_csv(path, &CLAIM_COLUMNS)?;
    for c in &claims {
        c.validate()?;
    }
    Ok(claims)
}

pub fn read_panel(path: &Path) -> Result<Vec<PanelRow>> {
    let rows: Vec<PanelCsvRow> = read_csv(path, &PANEL_COLUMNS)?;
    rows.iter().map(PanelCsvRow::to_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_population, simulate_costs, PopulationConfig};

    #[test]
    fn round_trip() {
        let cfg = PopulationConfig {
            n_patients: 50,
            ..PopulationConfig::default()
        };
        let pop = generate_population(&cfg).unwrap();
        let claims = simulate_costs(&pop, &cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pp = dir.path().join("p.csv");
        let cp = dir.path().join("c.csv");
        std::fs::write(&pp, patients_csv(&pop.patients).unwrap()).unwrap();
        std::fs::write(&cp, claims_csv(&claims).unwrap()).unwrap();
        let back = read_patients(&pp).unwrap();
        for (a, b) in back.iter().zip(&pop.patients) {
            assert_eq!(PatientRow::from(a), PatientRow::from(b));
        }
        assert_eq!(read_claims(&cp).unwrap(), claims);
    }

    #[test]
    fn missing_columns_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "patient_id,year,record_type\n1,2019,inpatient\n").unwrap();
        match read_claims(&p) {
            Err(Error::MissingColumns { columns, .. }) => {
                assert_eq!(columns.len(), 5);
                assert!(columns.contains(&"total_cost_rmb".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_flags_rejected() {
        let mut row = PatientRow::from(
            &generate_population(&PopulationConfig {
                n_patients: 1,
                ..PopulationConfig::default()
            })
            .unwrap()
            .patients[0],
        );
        row.disadvantaged = 1 - row.disadvantaged;
        assert!(row.to_profile().is_err());
    }
}
