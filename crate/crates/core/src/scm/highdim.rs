use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, ScmError};
use crate::util;

/// Which columns were expanded and to how many bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighDimMap {
    pub k: usize,
    pub covariates: Vec<String>,
}

impl HighDimMap {
    pub fn column_names(&self, var: &str) -> Vec<String> {
        (0..self.k).map(|i| format!("{var}_{i}")).collect()
    }
}

/// Replace every covariate column by `k` random bits whose parity is the original value.
pub fn expand_high_dim(d: &Dataset, covariates: &[String], k: usize, seed: u64) -> Result<(Dataset, HighDimMap), ScmError> {
    if k == 0 {
        return Err(ScmError::InvalidArgument("expansion width must be at least 1".into()));
    }
    let idx = covariates.iter().map(|c| d.var_index(c)).collect::<Result<Vec<_>, _>>()?;
    let mut vars = Vec::new();
    let map = HighDimMap { k, covariates: covariates.to_vec() };
    for (j, name) in d.vars().iter().enumerate() {
        if idx.contains(&j) {
            vars.extend(map.column_names(name));
        } else {
            vars.push(name.clone());
        }
    }
    let mut rng = util::rng(seed);
    let mut data = Vec::with_capacity(d.num_rows() * vars.len());
    for row in d.rows() {
        for (j, &b) in row.iter().enumerate() {
            if idx.contains(&j) {
                let mut parity = 0u8;
                for _ in 0..k - 1 {
                    let r = rng.random::<bool>() as u8;
                    parity ^= r;
                    data.push(r);
                }
                data.push(b ^ parity);
            } else {
                data.push(b);
            }
        }
    }
    Ok((Dataset::new(vars, data, d.meta.clone())?, map))
}

/// Inverse of [`expand_high_dim`]: XOR each covariate's bits back into one column.
pub fn decode_high_dim(d: &Dataset, map: &HighDimMap) -> Result<Dataset, ScmError> {
    let mut vars = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut j = 0;
    while j < d.num_vars() {
        let name = &d.vars()[j];
        let owner = map.covariates.iter().find(|c| name == &format!("{c}_0"));
        match owner {
            Some(c) => {
                let cols: Vec<usize> = map.column_names(c).iter().map(|n| d.var_index(n)).collect::<Result<_, _>>()?;
                vars.push(c.clone());
                j += cols.len();
                groups.push(cols);
            }
            None => {
                vars.push(name.clone());
                groups.push(vec![j]);
                j += 1;
            }
        }
    }
    let mut data = Vec::with_capacity(d.num_rows() * vars.len());
    for row in d.rows() {
        data.extend(groups.iter().map(|g| g.iter().fold(0u8, |acc, &c| acc ^ row[c])));
    }
    Dataset::new(vars, data, d.meta.clone())
}
