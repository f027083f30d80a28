use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Diagnosis class; the discriminant is the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Diagnosis {
    Cn = 0,
    Mci = 1,
    Ad = 2,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Cn, Diagnosis::Mci, Diagnosis::Ad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Cn => "CN",
            Diagnosis::Mci => "MCI",
            Diagnosis::Ad => "AD",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Diagnosis {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s.trim() {
            "CN" => Ok(Diagnosis::Cn),
            "MCI" => Ok(Diagnosis::Mci),
            "AD" => Ok(Diagnosis::Ad),
            other => Err(DataError::Format(format!(
                "label {other:?} is not one of CN, MCI, AD"
            ))),
        }
    }
}

/// One study. Paths are stored as written in the manifest (relative paths are
/// relative to the manifest's directory).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub subject_id: String,
    pub session_id: String,
    pub mri_path: PathBuf,
    pub pet_path: Option<PathBuf>,
    pub label: Diagnosis,
}

impl SampleRecord {
    pub fn is_paired(&self) -> bool {
        self.pet_path.is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.subject_id.as_str()))
            .map(|r| r.subject_id.clone())
            .collect()
    }

    /// Records whose subject is in `subjects`, in manifest order.
    pub fn select(&self, subjects: &[String]) -> Vec<SampleRecord> {
        let set: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        self.records
            .iter()
            .filter(|r| set.contains(r.subject_id.as_str()))
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert((r.subject_id.as_str(), r.session_id.as_str())) {
                return Err(DataError::Format(format!(
                    "duplicate (subject, session) pair ({}, {})",
                    r.subject_id, r.session_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    subject_id: String,
    session_id: String,
    mri_path: String,
    pet_path: String,
    label: String,
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &manifest.records {
        w.serialize(Row {
            subject_id: r.subject_id.clone(),
            session_id: r.session_id.clone(),
            mri_path: r.mri_path.to_string_lossy().into_owned(),
            pet_path: r
                .pet_path
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_default(),
            label: r.label.to_string(),
        })
        .map_err(|e| DataError::Format(e.to_string()))?;
    }
    if manifest.records.is_empty() {
        w.write_record(["subject_id", "session_id", "mri_path", "pet_path", "label"])
            .map_err(|e| DataError::Format(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| DataError::Format(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_slice());
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row =
            row.map_err(|e| DataError::Format(format!("{} row {}: {e}", path.display(), i + 1)))?;
        records.push(SampleRecord {
            subject_id: row.subject_id,
            session_id: row.session_id,
            mri_path: PathBuf::from(row.mri_path),
            pet_path: (!row.pet_path.trim().is_empty()).then(|| PathBuf::from(row.pet_path)),
            label: row
                .label
                .parse()
                .map_err(|e| DataError::Format(format!("{} row {}: {e}", path.display(), i + 1)))?,
        });
    }
    let manifest = Manifest {
        records,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_duplicate_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rec = |s: &str, ses: &str, pet: bool| SampleRecord {
            subject_id: s.into(),
            session_id: ses.into(),
            mri_path: format!("mri/{s}_{ses}.raw").into(),
            pet_path: pet.then(|| format!("pet/{s}_{ses}.raw").into()),
            label: Diagnosis::Mci,
        };
        let m = Manifest {
            records: vec![rec("a", "1", true), rec("a", "2", false)],
            root: dir.path().to_path_buf(),
        };
        write_manifest(&m, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject_id,session_id,mri_path,pet_path,label\n"));
        assert_eq!(read_manifest(&p).unwrap(), m);

        fs::write(&p, text.replace(",2,", ",1,")).unwrap();
        assert!(matches!(read_manifest(&p), Err(DataError::Format(m)) if m.contains("duplicate")));
    }

    #[test]
    fn bad_label_rejected() {
        assert!("XX".parse::<Diagnosis>().is_err());
        assert_eq!("AD".parse::<Diagnosis>().unwrap().index(), 2);
    }
}
