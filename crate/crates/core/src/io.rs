//! CSV and JSON persistence.
//!
//! Estimate tables use the header
//! `type_id,w,phi_hat_<outcome>...,eta2_hat_<outcome>...,x_<covariate>...` and
//! raw studies use `y_<outcome>...,d,propensity,env,x_<covariate>...`. Floats
//! are written in shortest round-trip form, so save then load is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EstimateTable, RawStudy, TypeRow, Unit};
use crate::tree_model::TreeModel;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_field(record: &csv::StringRecord, col: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(Error::InvalidRow {
            row,
            message: format!("missing value in column '{name}'"),
        });
    }
    let v: f64 = raw.parse().map_err(|_| Error::InvalidRow {
        row,
        message: format!("column '{name}': cannot parse '{raw}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidRow {
            row,
            message: format!("column '{name}': non-finite value {raw}"),
        });
    }
    Ok(v)
}

/// Column layout of an estimate-table header.
struct EstimateColumns {
    id: usize,
    weight: usize,
    phi: Vec<usize>,
    eta: Vec<usize>,
    x: Vec<usize>,
    outcomes: Vec<String>,
    covariates: Vec<String>,
}

fn estimate_columns(header: &csv::StringRecord) -> Result<EstimateColumns> {
    let mut id = None;
    let mut weight = None;
    let mut phi = Vec::new();
    let mut eta = Vec::new();
    let mut x = Vec::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if h == "type_id" {
            id = Some(i);
        } else if h == "w" {
            weight = Some(i);
        } else if let Some(n) = h.strip_prefix("phi_hat_") {
            phi.push((n.to_string(), i));
        } else if let Some(n) = h.strip_prefix("eta2_hat_") {
            eta.push((n.to_string(), i));
        } else if let Some(n) = h.strip_prefix("x_") {
            x.push((n.to_string(), i));
        } else {
            return Err(Error::InvalidHeader(format!("unexpected column '{h}'")));
        }
    }
    let id = id.ok_or_else(|| Error::InvalidHeader("missing 'type_id' column".into()))?;
    let weight = weight.ok_or_else(|| Error::InvalidHeader("missing 'w' column".into()))?;
    if phi.is_empty() {
        return Err(Error::InvalidHeader("no phi_hat_ columns".into()));
    }
    if x.is_empty() {
        return Err(Error::InvalidHeader("no x_ columns".into()));
    }
    let mut eta_cols = Vec::with_capacity(phi.len());
    for (name, _) in &phi {
        let col = eta
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::InvalidHeader(format!("missing 'eta2_hat_{name}'")))?;
        eta_cols.push(col);
    }
    if eta.len() != phi.len() {
        return Err(Error::InvalidHeader(
            "eta2_hat_ columns do not match phi_hat_ columns".into(),
        ));
    }
    Ok(EstimateColumns {
        id,
        weight,
        outcomes: phi.iter().map(|(n, _)| n.clone()).collect(),
        phi: phi.into_iter().map(|(_, c)| c).collect(),
        eta: eta_cols,
        covariates: x.iter().map(|(n, _)| n.clone()).collect(),
        x: x.into_iter().map(|(_, c)| c).collect(),
    })
}

/// Parses an estimate table from CSV text.
pub fn read_estimate_table_from<R: Read>(reader: R) -> Result<EstimateTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let cols = estimate_columns(rdr.headers()?)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: usize, name: &str| parse_field(&rec, c, name, row);
        let type_id = rec.get(cols.id).unwrap_or("").trim().to_string();
        if type_id.is_empty() {
            return Err(Error::InvalidRow {
                row,
                message: "empty type_id".into(),
            });
        }
        let weight = get(cols.weight, "w")?;
        let phi_hat = cols
            .phi
            .iter()
            .zip(&cols.outcomes)
            .map(|(c, n)| get(*c, &format!("phi_hat_{n}")))
            .collect::<Result<_>>()?;
        let eta2_hat: Vec<f64> = cols
            .eta
            .iter()
            .zip(&cols.outcomes)
            .map(|(c, n)| get(*c, &format!("eta2_hat_{n}")))
            .collect::<Result<_>>()?;
        let covariates = cols
            .x
            .iter()
            .zip(&cols.covariates)
            .map(|(c, n)| get(*c, &format!("x_{n}")))
            .collect::<Result<_>>()?;
        rows.push(TypeRow {
            type_id,
            covariates,
            weight,
            phi_hat,
            eta2_hat,
        });
    }
    EstimateTable::new(rows, cols.outcomes, cols.covariates)
}

pub fn read_estimate_table(path: &Path) -> Result<EstimateTable> {
    read_estimate_table_from(open(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::InvalidRow { row, message } => Error::InvalidRow {
            row,
            message: format!("{message} (in {})", path.display()),
        },
        other => other,
    }
}

pub fn estimate_table_to_csv(table: &EstimateTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["type_id".to_string(), "w".to_string()];
    header.extend(table.outcome_names().iter().map(|n| format!("phi_hat_{n}")));
    header.extend(table.outcome_names().iter().map(|n| format!("eta2_hat_{n}")));
    header.extend(table.covariate_names().iter().map(|n| format!("x_{n}")));
    w.write_record(&header)?;
    for row in table.rows() {
        let mut rec = vec![row.type_id.clone(), row.weight.to_string()];
        rec.extend(row.phi_hat.iter().map(f64::to_string));
        rec.extend(row.eta2_hat.iter().map(f64::to_string));
        rec.extend(row.covariates.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Invalid(format!("csv buffer: {e}")))
}

pub fn write_estimate_table(table: &EstimateTable, path: &Path) -> Result<()> {
    write_atomic(path, &estimate_table_to_csv(table)?)
}

/// Parses a raw study from CSV text.
pub fn read_raw_study_from<R: Read>(reader: R) -> Result<RawStudy> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let (mut d, mut o, mut env) = (None, None, None);
    for (i, h) in header.iter().enumerate() {
        match h {
            "d" => d = Some(i),
            "propensity" => o = Some(i),
            "env" => env = Some(i),
            _ => {
                if let Some(n) = h.strip_prefix("y_") {
                    y.push((n.to_string(), i));
                } else if let Some(n) = h.strip_prefix("x_") {
                    x.push((n.to_string(), i));
                } else {
                    return Err(Error::InvalidHeader(format!("unexpected column '{h}'")));
                }
            }
        }
    }
    let need = |c: Option<usize>, name: &str| {
        c.ok_or_else(|| Error::InvalidHeader(format!("missing '{name}' column")))
    };
    let (d, o, env) = (need(d, "d")?, need(o, "propensity")?, need(env, "env")?);
    if y.is_empty() || x.is_empty() {
        return Err(Error::InvalidHeader(
            "need at least one y_ and one x_ column".into(),
        ));
    }
    let mut units = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let treated = match rec.get(d).unwrap_or("").trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("treatment must be 0 or 1, got '{other}'"),
                })
            }
        };
        let env_id = rec.get(env).unwrap_or("").trim().to_string();
        if env_id.is_empty() {
            return Err(Error::InvalidRow {
                row,
                message: "empty env".into(),
            });
        }
        units.push(Unit {
            y: y.iter()
                .map(|(n, c)| parse_field(&rec, *c, &format!("y_{n}"), row))
                .collect::<Result<_>>()?,
            treated,
            propensity: parse_field(&rec, o, "propensity", row)?,
            covariates: x
                .iter()
                .map(|(n, c)| parse_field(&rec, *c, &format!("x_{n}"), row))
                .collect::<Result<_>>()?,
            env: env_id,
        });
    }
    RawStudy::new(
        units,
        y.into_iter().map(|(n, _)| n).collect(),
        x.into_iter().map(|(n, _)| n).collect(),
    )
}

pub fn read_raw_study(path: &Path) -> Result<RawStudy> {
    read_raw_study_from(open(path)?).map_err(|e| with_path(e, path))
}

pub fn raw_study_to_csv(study: &RawStudy) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = study.outcome_names.iter().map(|n| format!("y_{n}")).collect();
    header.extend(["d", "propensity", "env"].map(String::from));
    header.extend(study.covariate_names.iter().map(|n| format!("x_{n}")));
    w.write_record(&header)?;
    for u in &study.units {
        let mut rec: Vec<String> = u.y.iter().map(f64::to_string).collect();
        rec.push(if u.treated { "1" } else { "0" }.into());
        rec.push(u.propensity.to_string());
        rec.push(u.env.clone());
        rec.extend(u.covariates.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::Invalid(format!("csv buffer: {e}")))
}

pub fn write_raw_study(study: &RawStudy, path: &Path) -> Result<()> {
    write_atomic(path, &raw_study_to_csv(study)?)
}

/// Saves a model after checking its invariants.
pub fn save_tree(model: &TreeModel, path: &Path) -> Result<()> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidTree(violations.join("; ")));
    }
    let mut text = model.to_json()?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_tree(path: &Path) -> Result<TreeModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TreeModel::from_json(&text)
}
