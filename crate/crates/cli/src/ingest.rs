use std::path::Path;

use serde::{Deserialize, Serialize};
use stmle::design::Dataset;

use crate::config::{AnalysisConfig, ColumnTransform};
use crate::CliError;

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

impl Roles {
    pub fn from_config(cfg: &AnalysisConfig) -> Self {
        Roles {
            outcome: cfg.outcome.clone(),
            treatment: cfg.treatment.clone(),
            covariates: cfg.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowAccounting {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_used: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: Dataset,
    pub accounting: RowAccounting,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

pub fn apply_transform(t: ColumnTransform, x: &mut [f64], col: &str) -> Result<(), CliError> {
    match t {
        ColumnTransform::Identity => {}
        ColumnTransform::Asinh => x.iter_mut().for_each(|v| *v = v.asinh()),
        ColumnTransform::Log1p => {
            if let Some(v) = x.iter().find(|v| **v <= -1.0) {
                return Err(CliError::Config(format!("log1p of column `{col}` is undefined at {v}")));
            }
            x.iter_mut().for_each(|v| *v = v.ln_1p());
        }
        ColumnTransform::Center => {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter_mut().for_each(|v| *v -= m);
        }
    }
    Ok(())
}

/// Reads the role columns of a headed CSV file, drops rows with a missing
/// role value, applies the transforms and builds a [`Dataset`].
pub fn load_csv(
    path: &Path,
    roles: &Roles,
    transform_of: impl Fn(&str) -> ColumnTransform,
) -> Result<Ingested, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Config(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let find = |name: &str| -> Result<usize, CliError> {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!(
                "{}: column `{name}` not found (header: {})",
                path.display(),
                header.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let role_names: Vec<&str> = std::iter::once(roles.outcome.as_str())
        .chain(std::iter::once(roles.treatment.as_str()))
        .chain(roles.covariates.iter().map(String::as_str))
        .collect();
    let idx = role_names.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    let (mut read, mut dropped) = (0usize, 0usize);
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| CliError::Config(format!("{}:{line}: {e}", path.display())))?;
        read += 1;
        let cells: Vec<&str> = idx.iter().map(|&j| rec.get(j).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (k, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Config(format!(
                    "{}:{line}: column `{}`: cannot parse `{cell}` as a number",
                    path.display(),
                    role_names[k]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Config(format!(
                    "{}:{line}: column `{}`: non-finite value",
                    path.display(),
                    role_names[k]
                )));
            }
            cols[k].push(v);
        }
    }
    let used = read - dropped;
    if used == 0 {
        return Err(CliError::Config(format!(
            "{}: no rows left after dropping {dropped} with missing values",
            path.display()
        )));
    }

    let mut a = Vec::with_capacity(used);
    for (i, &t) in cols[1].iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(CliError::Config(format!(
                "treatment column `{}` must be 0/1; data row {} has {t}",
                roles.treatment,
                i + 1
            )));
        }
        a.push(t as u8);
    }
    let treated = a.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == used {
        return Err(CliError::Config(format!(
            "all {used} rows are in one treatment arm; both arms are required"
        )));
    }
    for (k, name) in role_names.iter().enumerate() {
        if k != 1 {
            apply_transform(transform_of(name), &mut cols[k], name)?;
        }
    }
    let p = roles.covariates.len();
    let mut w = Vec::with_capacity(used * p);
    for i in 0..used {
        for col in &cols[2..] {
            w.push(col[i]);
        }
    }
    let y = std::mem::take(&mut cols[0]);
    let data = Dataset::new(roles.covariates.clone(), w, a, y).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Ingested {
        data,
        accounting: RowAccounting {
            rows_read: read,
            rows_dropped: dropped,
            rows_used: used,
        },
    })
}

/// Writes a dataset with covariate columns followed by `A` and `Y`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = data.columns().to_vec();
    header.push("A".into());
    header.push("Y".into());
    w.write_record(&header).map_err(CliError::from_csv)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.w(i).iter().map(|v| v.to_string()).collect();
        row.push(data.a(i).to_string());
        row.push(data.y(i).to_string());
        w.write_record(&row).map_err(CliError::from_csv)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}
