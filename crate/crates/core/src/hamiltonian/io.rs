use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::{BlockMatrix, OrbitalLayout};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"SO2FMAT\0";

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    layout: OrbitalLayout,
    data: Vec<Vec<f64>>,
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows).map(|r| m.row(r).to_vec()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::MatrixFile("rows must form a square matrix".into()));
    }
    Ok(Matrix::from_rows(rows))
}

pub fn to_json(h: &BlockMatrix) -> Result<String> {
    Ok(serde_json::to_string(&MatrixJson {
        layout: h.layout.clone(),
        data: matrix_rows(&h.matrix),
    })?)
}

pub fn from_json(s: &str) -> Result<BlockMatrix> {
    let j: MatrixJson = serde_json::from_str(s)?;
    BlockMatrix::new(j.layout, matrix_from_rows(&j.data)?)
}

pub fn to_binary(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.data.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_binary(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 16 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::MatrixFile("bad magic".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if n.checked_mul(n).and_then(|x| x.checked_mul(8)) != Some(body.len()) {
        return Err(Error::MatrixFile(format!("expected {n}x{n} entries, got {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Matrix::from_vec(n, n, data))
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Writes JSON, or the raw binary form when the extension is `.bin`.
pub fn save_matrix(path: &Path, h: &BlockMatrix) -> Result<()> {
    if is_binary(path) {
        fs::write(path, to_binary(&h.matrix))?;
    } else {
        fs::write(path, to_json(h)?)?;
    }
    Ok(())
}

/// Binary files carry no layout; `layout` supplies it.
pub fn load_matrix(path: &Path, layout: Option<&OrbitalLayout>) -> Result<BlockMatrix> {
    if is_binary(path) {
        let m = from_binary(&fs::read(path)?)?;
        let layout = layout
            .cloned()
            .ok_or_else(|| Error::MatrixFile(format!("{}: binary matrix needs a layout", path.display())))?;
        BlockMatrix::new(layout, m)
    } else {
        let h = from_json(&fs::read_to_string(path)?)?;
        if let Some(l) = layout {
            if *l != h.layout {
                return Err(Error::Dimension(format!("{}: layout differs", path.display())));
            }
        }
        Ok(h)
    }
}
