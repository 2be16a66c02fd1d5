//! Matrix and dataset serialization.
//!
//! Matrices are headerless CSV, row-major, one row per line, values written
//! with 17 significant digits so a write/read round trip is exact. A
//! synthetic dataset is a directory {X.csv, A.csv, S.csv, phi.json,
//! meta.json}.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixingGeneration, MixingMatrix, MixtureDataset, SourceMatrix};
use crate::nonlinear::NonlinearSpec;

/// Write a matrix as headerless CSV.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 26);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            // 17 significant digits round-trip f64 exactly.
            out.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Read a headerless CSV matrix; ragged rows and non-numeric cells report
/// the offending line.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} cells, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "empty matrix file".into(),
        });
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Sidecar metadata for a serialized dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub dirichlet_mu: Vec<f64>,
    pub seed: u64,
    pub generation: MixingGeneration,
}

/// Write {X.csv, A.csv, S.csv, phi.json, meta.json} under `dir`.
pub fn write_dataset(dir: &Path, ds: &MixtureDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("X.csv"), &ds.x)?;
    let Some(truth) = &ds.truth else {
        return Err(Error::Input(
            "dataset has no ground truth to serialize".into(),
        ));
    };
    write_matrix(&dir.join("A.csv"), &truth.mixing.a)?;
    write_matrix(&dir.join("S.csv"), &truth.sources.s)?;
    fs::write(
        dir.join("phi.json"),
        serde_json::to_string_pretty(&truth.phi)?,
    )?;
    let meta = DatasetMeta {
        m: ds.x.nrows(),
        r: truth.sources.s.nrows(),
        n: ds.x.ncols(),
        dirichlet_mu: truth.sources.dirichlet_mu.clone(),
        seed: truth.sources.seed,
        generation: truth.mixing.generation,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<MixtureDataset> {
    let x = read_matrix(&dir.join("X.csv"))?;
    let a = read_matrix(&dir.join("A.csv"))?;
    let s = read_matrix(&dir.join("S.csv"))?;
    let phi: NonlinearSpec = serde_json::from_str(&fs::read_to_string(dir.join("phi.json"))?)?;
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    Ok(MixtureDataset {
        x,
        truth: Some(crate::model::GroundTruth {
            mixing: MixingMatrix {
                a,
                generation: meta.generation,
            },
            sources: SourceMatrix {
                s,
                dirichlet_mu: meta.dirichlet_mu,
                seed: meta.seed,
            },
            phi,
        }),
    })
}
