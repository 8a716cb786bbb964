//! Row matrices and their binary file format.
//!
//! Layout, all little-endian: magic `TXEM`, `u32` version (1), `u32` dim,
//! `u32` count, `count` x `u32` row ids, then `count * dim` x `f32`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TXEM";
const VERSION: u32 = 1;

/// Dense `f32` rows, each tagged with an id.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    dim: usize,
    ids: Vec<u32>,
    data: Vec<f32>,
}

impl RowMatrix {
    pub fn new(dim: usize, ids: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        Ok(RowMatrix { dim, ids, data })
    }

    pub fn zeros(dim: usize, count: usize) -> Self {
        RowMatrix {
            dim,
            ids: (0..count as u32).collect(),
            data: vec![0.0; dim * count],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.dim as u32, self.ids.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for id in &self.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MatrixFormat("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut next = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next(&mut r)?;
        if version != VERSION {
            return Err(Error::MatrixFormat(format!("unsupported version {version}")));
        }
        let dim = next(&mut r)? as usize;
        let count = next(&mut r)? as usize;
        let ids = (0..count).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?;
        let data = (0..count * dim)
            .map(|_| next(&mut r).map(f32::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::MatrixFormat(format!("{} trailing bytes", rest.len())));
        }
        RowMatrix::new(dim, ids, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.ids.len() * 4 + self.data.len() * 4);
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::Cursor::new(std::fs::read(path)?))
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub fn l2_normalize(v: &mut [f32]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / n) as f32;
        }
    }
}

/// Mention embeddings: one unit-norm row per mention, ordered by mention id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(RowMatrix);

impl EmbeddingMatrix {
    /// Normalizes each row to unit length.
    pub fn from_rows(dim: usize, rows: Vec<(u32, Vec<f32>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, mut v) in rows {
            if v.len() != dim {
                return Err(Error::DimMismatch { expected: dim, found: v.len() });
            }
            l2_normalize(&mut v);
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Ok(EmbeddingMatrix(RowMatrix::new(dim, ids, data)?))
    }

    /// Wraps an existing matrix, rejecting rows that are not unit-norm.
    pub fn from_matrix(m: RowMatrix) -> Result<Self> {
        for i in 0..m.len() {
            let n = dot(m.row(i), m.row(i)).sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::MatrixFormat(format!("row {i} has norm {n}")));
            }
        }
        Ok(EmbeddingMatrix(m))
    }

    pub fn matrix(&self) -> &RowMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        self.0.ids()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.0.row(i)
    }

    /// Cosine similarity of rows `i` and `j`.
    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.0.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_matrix(RowMatrix::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_roundtrip(dim in 1usize..8, rows in 0usize..6, seed in any::<u32>()) {
            let data: Vec<f32> = (0..dim * rows)
                .map(|k| ((k as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e6 - 2000.0)
                .collect();
            let ids = (0..rows as u32).map(|i| i * 3 + 1).collect();
            let m = RowMatrix::new(dim, ids, data).unwrap();
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 16 + rows * 4 + dim * rows * 4);
            prop_assert_eq!(RowMatrix::read_from(&buf[..]).unwrap(), m);
        }
    }

    #[test]
    fn header_layout() {
        let m = RowMatrix::new(2, vec![7], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TXEM");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[16..20], &[7, 0, 0, 0]);
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(RowMatrix::read_from(&b"NOPE"[..]).is_err());
        let m = RowMatrix::new(1, vec![0], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(RowMatrix::read_from(&buf[..]).is_err());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let e = EmbeddingMatrix::from_rows(3, vec![(0, vec![3.0, 4.0, 0.0]), (1, vec![0.0, 0.0, 2.0])]).unwrap();
        for i in 0..2 {
            assert!((e.similarity(i, i) - 1.0).abs() < 1e-6);
        }
        assert!(EmbeddingMatrix::from_matrix(RowMatrix::new(1, vec![0], vec![2.0]).unwrap()).is_err());
    }
}
