//! `fchan` version 1: JSON channel-batch files.
//!
//! ```text
//! { "version": 1, "array": {..}, "scenario": {..}, "B": int,
//!   "data": [ B × [ N × [ K × [re, im] ] ] ] }
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ArrayConfig, ChannelBatch, ScenarioConfig};
use crate::error::{Error, Result};
use crate::numfmt;

pub const FCHAN_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FchanDoc {
    version: u32,
    array: ArrayConfig,
    scenario: ScenarioConfig,
    #[serde(rename = "B")]
    b: usize,
    data: Vec<Vec<Vec<[f64; 2]>>>,
}

pub fn to_fchan_bytes(batch: &ChannelBatch) -> Result<Vec<u8>> {
    let data = batch
        .realizations
        .iter()
        .map(|h| {
            h.row_iter()
                .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
                .collect()
        })
        .collect();
    let doc = FchanDoc {
        version: FCHAN_VERSION,
        array: batch.array.clone(),
        scenario: batch.scenario.clone(),
        b: batch.len(),
        data,
    };
    Ok(numfmt::to_json_sig17(&doc)?)
}

pub fn from_fchan_bytes(bytes: &[u8]) -> Result<ChannelBatch> {
    let doc: FchanDoc = serde_json::from_slice(bytes)?;
    if doc.version != FCHAN_VERSION {
        return Err(Error::Parse(format!("unsupported fchan version {}", doc.version)));
    }
    doc.array.validate()?;
    doc.scenario.validate(&doc.array)?;
    let (n, k) = (doc.array.num_ports(), doc.scenario.users_k);
    if doc.data.len() != doc.b {
        return Err(Error::Parse(format!(
            "B = {} but {} realizations stored",
            doc.b,
            doc.data.len()
        )));
    }
    let mut realizations = Vec::with_capacity(doc.b);
    for (b, rows) in doc.data.iter().enumerate() {
        if rows.len() != n || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Parse(format!("realization {b} is not {n}x{k}")));
        }
        let h = DMatrix::from_fn(n, k, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Parse(format!("realization {b} has non-finite entries")));
        }
        realizations.push(h);
    }
    Ok(ChannelBatch {
        array: doc.array,
        scenario: doc.scenario,
        realizations,
    })
}

pub fn write_fchan(batch: &ChannelBatch, path: &Path) -> Result<()> {
    let bytes = to_fchan_bytes(batch)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_fchan(path: &Path) -> Result<ChannelBatch> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_fchan_bytes(&bytes)
}
