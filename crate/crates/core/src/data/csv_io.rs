//! CSV ingestion and export.
//!
//! Layout of a dataset directory:
//!
//! - `clinical.csv`: `patient_id` then one column per schema field
//! - `radiomics.csv`: `patient_id` then `r000` .. `r112`
//! - `labels.csv`: `patient_id,label[,split]`
//! - `schema.json`: the clinical field manifest

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use super::record::{
    ClinicalSchema, ClinicalValue, DatasetSplit, FieldKind, PatientRecord, SplitName,
    RADIOMIC_FEATURES,
};
use crate::error::{Error, Result};

pub const CLINICAL_FILE: &str = "clinical.csv";
pub const RADIOMIC_FILE: &str = "radiomics.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SCHEMA_FILE: &str = "schema.json";

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(f))
}

struct Table {
    header: Vec<String>,
    rows: Vec<(String, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("patient_id") {
        return Err(Error::Schema(format!(
            "{}: first column must be patient_id",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "{} row {}: {} columns, header has {}",
                path.display(),
                i + 2,
                rec.len(),
                header.len()
            )));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Ingestion(format!(
                "{}: duplicated patient_id {id}",
                path.display()
            )));
        }
        rows.push((id, rec.iter().skip(1).map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn parse_f64(text: &str, what: impl Fn() -> String) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("{}: {text:?} is not a finite number", what())))
}

/// Loaded records plus the optional split tag carried by `labels.csv`.
pub struct LoadedRecords {
    pub records: Vec<PatientRecord>,
    pub splits: Option<Vec<SplitName>>,
}

/// Joins the three CSV files on `patient_id`, in `clinical.csv` row order.
pub fn load_csv(
    schema: &ClinicalSchema,
    clinical_path: &Path,
    radiomic_path: &Path,
    labels_path: &Path,
) -> Result<Vec<PatientRecord>> {
    Ok(load_tables(schema, clinical_path, radiomic_path, labels_path)?.records)
}

fn load_tables(
    schema: &ClinicalSchema,
    clinical_path: &Path,
    radiomic_path: &Path,
    labels_path: &Path,
) -> Result<LoadedRecords> {
    schema.validate()?;
    let clinical = read_table(clinical_path)?;
    let radiomic = read_table(radiomic_path)?;
    let labels = read_table(labels_path)?;

    let columns: HashMap<&str, usize> = clinical.header[1..]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let missing: Vec<&str> = schema.names().filter(|n| !columns.contains_key(n)).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "{}: missing column(s) {}",
            clinical_path.display(),
            missing.join(", ")
        )));
    }
    if radiomic.header.len() != RADIOMIC_FEATURES + 1 {
        return Err(Error::Schema(format!(
            "{}: {} radiomic columns, expected {RADIOMIC_FEATURES}",
            radiomic_path.display(),
            radiomic.header.len() - 1
        )));
    }
    let label_col = labels.header.iter().position(|h| h == "label").ok_or_else(|| {
        Error::Schema(format!("{}: no label column", labels_path.display()))
    })?;
    let split_col = labels.header.iter().position(|h| h == "split");

    let rad_by_id: HashMap<&str, &Vec<String>> =
        radiomic.rows.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let lab_by_id: HashMap<&str, &Vec<String>> =
        labels.rows.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let clin_ids: BTreeSet<&str> = clinical.rows.iter().map(|(id, _)| id.as_str()).collect();

    let mut offenders: BTreeSet<String> = BTreeSet::new();
    for (id, _) in &clinical.rows {
        if !rad_by_id.contains_key(id.as_str()) {
            offenders.insert(format!("{id} (no radiomics row)"));
        }
        if !lab_by_id.contains_key(id.as_str()) {
            offenders.insert(format!("{id} (no label row)"));
        }
    }
    for id in rad_by_id.keys().chain(lab_by_id.keys()) {
        if !clin_ids.contains(id) {
            offenders.insert(format!("{id} (no clinical row)"));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion(format!(
            "unjoinable patient ids: {}",
            offenders.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut records = Vec::with_capacity(clinical.rows.len());
    let mut splits = split_col.map(|_| Vec::with_capacity(clinical.rows.len()));
    for (id, values) in &clinical.rows {
        let mut fields = BTreeMap::new();
        for f in &schema.fields {
            let text = &values[columns[f.name.as_str()]];
            let v = match f.kind {
                FieldKind::Continuous => ClinicalValue::Number(parse_f64(text, || {
                    format!("patient {id} field {}", f.name)
                })?),
                FieldKind::Categorical => ClinicalValue::Text(text.clone()),
            };
            fields.insert(f.name.clone(), v);
        }
        let radiomic = rad_by_id[id.as_str()]
            .iter()
            .enumerate()
            .map(|(j, t)| parse_f64(t, || format!("patient {id} radiomic {j}")))
            .collect::<Result<Vec<_>>>()?;
        let lrow = lab_by_id[id.as_str()];
        let label = match lrow[label_col - 1].as_str() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Schema(format!(
                    "patient {id}: label {other:?} is not 0/1"
                )))
            }
        };
        if let (Some(c), Some(s)) = (split_col, splits.as_mut()) {
            s.push(lrow[c - 1].parse()?);
        }
        records.push(PatientRecord {
            patient_id: id.clone(),
            clinical: fields,
            radiomic,
            label,
        });
    }
    Ok(LoadedRecords { records, splits })
}

/// Standard file paths inside a dataset directory.
pub struct DatasetPaths {
    pub clinical: PathBuf,
    pub radiomic: PathBuf,
    pub labels: PathBuf,
    pub schema: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            clinical: dir.join(CLINICAL_FILE),
            radiomic: dir.join(RADIOMIC_FILE),
            labels: dir.join(LABELS_FILE),
            schema: dir.join(SCHEMA_FILE),
        }
    }
}

/// Reads a dataset directory whose `labels.csv` carries a `split` column.
/// Falls back to the stand-in schema when `schema.json` is absent.
pub fn load_dataset_dir(dir: &Path) -> Result<(ClinicalSchema, DatasetSplit)> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("{} is not a directory", dir.display())));
    }
    let paths = DatasetPaths::in_dir(dir);
    let schema = if paths.schema.exists() {
        ClinicalSchema::load(&paths.schema)?
    } else {
        ClinicalSchema::stand_in()
    };
    let loaded = load_tables(&schema, &paths.clinical, &paths.radiomic, &paths.labels)?;
    let splits = loaded.splits.ok_or_else(|| {
        Error::Schema(format!("{}: no split column", paths.labels.display()))
    })?;
    let mut out = DatasetSplit::default();
    for (r, s) in loaded.records.into_iter().zip(splits) {
        match s {
            SplitName::Train => out.train.push(r),
            SplitName::Val => out.val.push(r),
            SplitName::Test => out.test.push(r),
        }
    }
    out.check_disjoint()?;
    Ok((schema, out))
}

/// Writes the four dataset files. Output is a pure function of the inputs.
pub fn write_dataset_dir(dir: &Path, schema: &ClinicalSchema, data: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    schema.save(&paths.schema)?;

    let mut clin = csv::Writer::from_path(&paths.clinical)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(schema.names().map(str::to_string));
    clin.write_record(&header)?;
    let mut rad = csv::Writer::from_path(&paths.radiomic)?;
    let mut rheader = vec!["patient_id".to_string()];
    rheader.extend((0..RADIOMIC_FEATURES).map(|j| format!("r{j:03}")));
    rad.write_record(&rheader)?;
    let mut lab = csv::Writer::from_path(&paths.labels)?;
    lab.write_record(["patient_id", "label", "split"])?;

    for (split, r) in data.iter() {
        let mut row = vec![r.patient_id.clone()];
        for name in schema.names() {
            let v = r.clinical.get(name).ok_or_else(|| {
                Error::Schema(format!("patient {}: missing field {name}", r.patient_id))
            })?;
            row.push(v.to_string());
        }
        clin.write_record(&row)?;
        let mut rrow = vec![r.patient_id.clone()];
        rrow.extend(r.radiomic.iter().map(|v| v.to_string()));
        rad.write_record(&rrow)?;
        lab.write_record([r.patient_id.as_str(), &r.label.to_string(), split.as_str()])?;
    }
    for w in [&mut clin, &mut rad, &mut lab] {
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn write_files(dir: &Path, ids_clin: &[&str], ids_rad: &[&str], ids_lab: &[&str]) {
        let schema = ClinicalSchema::stand_in();
        let mut c = String::from("patient_id");
        for f in &schema.fields {
            write!(c, ",{}", f.name).unwrap();
        }
        c.push('\n');
        for id in ids_clin {
            c.push_str(id);
            for f in &schema.fields {
                match f.kind {
                    FieldKind::Continuous => c.push_str(",1.5"),
                    FieldKind::Categorical => c.push_str(",x"),
                }
            }
            c.push('\n');
        }
        std::fs::write(dir.join(CLINICAL_FILE), c).unwrap();
        let mut r = String::from("patient_id");
        for j in 0..RADIOMIC_FEATURES {
            write!(r, ",r{j:03}").unwrap();
        }
        r.push('\n');
        for id in ids_rad {
            r.push_str(id);
            for j in 0..RADIOMIC_FEATURES {
                write!(r, ",{}", j as f64 * 0.5).unwrap();
            }
            r.push('\n');
        }
        std::fs::write(dir.join(RADIOMIC_FILE), r).unwrap();
        let mut l = String::from("patient_id,label\n");
        for id in ids_lab {
            writeln!(l, "{id},1").unwrap();
        }
        std::fs::write(dir.join(LABELS_FILE), l).unwrap();
    }

    fn load(dir: &Path) -> Result<Vec<PatientRecord>> {
        let p = DatasetPaths::in_dir(dir);
        load_csv(&ClinicalSchema::stand_in(), &p.clinical, &p.radiomic, &p.labels)
    }

    #[test]
    fn consistent_rows_join() {
        let dir = tempfile::tempdir().unwrap();
        let ids = ["a", "b", "c"];
        write_files(dir.path(), &ids, &["c", "b", "a"], &ids);
        let recs = load(dir.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].patient_id, "b");
        assert_eq!(recs[1].radiomic[2], 1.0);
    }

    #[test]
    fn missing_radiomic_row_names_id() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &["a", "b", "c"], &["a", "c"], &["a", "b", "c"]);
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Ingestion(m) if m.contains("b (no radiomics row)")), "{err}");
    }

    #[test]
    fn duplicated_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &["a", "a"], &["a"], &["a"]);
        assert!(matches!(load(dir.path()), Err(Error::Ingestion(_))));
    }

    #[test]
    fn wrong_column_count_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), &["a"], &["a"], &["a"]);
        let path = dir.path().join(LABELS_FILE);
        std::fs::write(&path, "patient_id,label\na,1,extra\n").unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Schema(_))));
    }
}
