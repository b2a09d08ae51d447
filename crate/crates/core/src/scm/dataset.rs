use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScmError;

/// Where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    /// Hash of the generating model.
    pub model: Option<String>,
    #[serde(default)]
    pub intervention: Vec<(String, u8)>,
}

/// Binary samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    vars: Vec<String>,
    data: Vec<u8>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(vars: Vec<String>, data: Vec<u8>, meta: DatasetMeta) -> Result<Self, ScmError> {
        if vars.is_empty() {
            return Err(ScmError::Dataset("no variables".into()));
        }
        if !data.len().is_multiple_of(vars.len()) {
            return Err(ScmError::Dataset(format!("{} values do not fill rows of {}", data.len(), vars.len())));
        }
        if let Some(i) = data.iter().position(|&b| b > 1) {
            return Err(ScmError::Dataset(format!("row {} holds non-binary value {}", i / vars.len() + 1, data[i])));
        }
        Ok(Dataset { vars, data, meta })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.vars.len()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let k = self.vars.len();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.vars.len())
    }

    pub fn var_index(&self, name: &str) -> Result<usize, ScmError> {
        self.vars.iter().position(|v| v == name).ok_or_else(|| ScmError::UnknownVariable(name.to_string()))
    }

    /// Packed row: bit `i` holds column `i`.
    pub fn packed(&self, i: usize) -> usize {
        self.row(i).iter().enumerate().fold(0, |acc, (j, &b)| acc | (b as usize) << j)
    }

    /// Count of every packed assignment; needs at most 24 columns.
    pub fn counts(&self) -> Vec<u64> {
        assert!(self.vars.len() <= 24, "too many columns to tabulate");
        let mut c = vec![0u64; 1 << self.vars.len()];
        for i in 0..self.num_rows() {
            c[self.packed(i)] += 1;
        }
        c
    }

    /// Columns `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<Dataset, ScmError> {
        let idx = names.iter().map(|n| self.var_index(n)).collect::<Result<Vec<_>, _>>()?;
        let mut data = Vec::with_capacity(self.num_rows() * idx.len());
        for r in self.rows() {
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Dataset::new(names.to_vec(), data, self.meta.clone())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScmError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.vars).map_err(csv_err)?;
        let mut buf = Vec::with_capacity(self.vars.len());
        for r in self.rows() {
            buf.clear();
            buf.extend(r.iter().map(|&b| if b == 1 { "1" } else { "0" }));
            w.write_record(&buf).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset, ScmError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let vars: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
        let mut data = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != vars.len() {
                return Err(ScmError::Dataset(format!("line {}: {} fields, expected {}", i + 2, rec.len(), vars.len())));
            }
            for field in rec.iter() {
                match field.trim() {
                    "0" => data.push(0),
                    "1" => data.push(1),
                    other => return Err(ScmError::Dataset(format!("line {}: value '{other}' is not 0 or 1", i + 2))),
                }
            }
        }
        if data.is_empty() {
            return Err(ScmError::Dataset("no rows".into()));
        }
        Dataset::new(vars, data, DatasetMeta::default())
    }

    /// Path of the provenance sidecar written next to `csv`.
    pub fn meta_path(csv: &Path) -> PathBuf {
        csv.with_extension("meta.json")
    }

    /// CSV plus provenance sidecar.
    pub fn save(&self, path: &Path) -> Result<(), ScmError> {
        self.write_csv(path)?;
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| ScmError::Dataset(e.to_string()))?;
        std::fs::write(Self::meta_path(path), json)?;
        Ok(())
    }

    /// CSV plus the sidecar, when one exists.
    pub fn load(path: &Path) -> Result<Dataset, ScmError> {
        let mut d = Self::read_csv(path)?;
        let meta = Self::meta_path(path);
        if meta.exists() {
            let text = std::fs::read_to_string(meta)?;
            d.meta = serde_json::from_str(&text).map_err(|e| ScmError::Dataset(e.to_string()))?;
        }
        Ok(d)
    }
}

fn csv_err(e: csv::Error) -> ScmError {
    ScmError::Dataset(e.to_string())
}
