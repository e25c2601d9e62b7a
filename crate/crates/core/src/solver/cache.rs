//! Binary record cache for re-solving across process invocations.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "DSCTREC\0" | version u32 | n_dofs u64 | n_nodes u64
//! n_scalings u64 | (element u64, factor f64)*
//! n_records u64  | record*
//! record: node u64 | n_i u64 | n_b u64 | eliminated u64[n_i] | interface u64[n_b]
//!         factor lower f64[n_i(n_i+1)/2] | coupling f64[n_i·n_b] | rhs f64[n_i]
//!         schur lower f64[n_b(n_b+1)/2] | g f64[n_b]
//! ```

use super::{EliminationRecord, Records, SchurContribution};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const MAGIC: &[u8; 8] = b"DSCTREC\0";
pub const CACHE_VERSION: u32 = 1;

/// Records of a completed solve together with the element scalings applied
/// so far (in application order).
#[derive(Debug, Clone, PartialEq)]
pub struct RecordCache {
    pub n_dofs: usize,
    pub n_nodes: usize,
    pub scalings: Vec<(usize, f64)>,
    pub records: Records,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn ids(&mut self, ids: &[usize]) {
        ids.iter().for_each(|&i| self.u64(i));
    }
    fn floats(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of file (need {n} more bytes)")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| self.err("integer out of range"))
    }

    /// A length that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        if n.checked_mul(unit).is_none_or(|b| b > self.data.len() - self.pos) {
            return Err(Error::Format { offset: at, message: format!("length {n} exceeds file size") });
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn ids(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u64()).collect()
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.data.len() - self.pos) {
            return Err(self.err(format!("unexpected end of file (need {n} floats)")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn lower_to_full(n: usize, lower: Vec<f64>) -> DenseMatrix {
    DenseMatrix::from_lower(n, &lower).expect("length checked by reader")
}

/// Lower factor stored as its lower triangle.
fn factor_from_lower(n: usize, lower: Vec<f64>) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = lower[k];
            k += 1;
        }
    }
    m
}

impl RecordCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        w.u64(self.n_dofs);
        w.u64(self.n_nodes);
        w.u64(self.scalings.len());
        for &(e, f) in &self.scalings {
            w.u64(e);
            w.f64(f);
        }
        w.u64(self.records.len());
        for r in self.records.values() {
            w.u64(r.node);
            w.u64(r.eliminated.len());
            w.u64(r.interface.len());
            w.ids(&r.eliminated);
            w.ids(&r.interface);
            w.floats(&r.factor.lower_triangle());
            w.floats(r.coupling.as_slice());
            w.floats(&r.rhs);
            w.floats(&r.schur.s.lower_triangle());
            w.floats(&r.schur.g);
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<RecordCache> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format { offset: 0, message: "not a record cache (bad magic)".into() });
        }
        let at = r.pos;
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::Format { offset: at, message: format!("unsupported cache version {version}") });
        }
        let n_dofs = r.u64()?;
        let n_nodes = r.u64()?;
        let n_scalings = r.len(16)?;
        let mut scalings = Vec::with_capacity(n_scalings);
        for _ in 0..n_scalings {
            scalings.push((r.u64()?, r.f64()?));
        }
        let n_records = r.len(24)?;
        let mut records = Records::new();
        for _ in 0..n_records {
            let at = r.pos;
            let node = r.u64()?;
            let n_i = r.len(8)?;
            let n_b = r.len(8)?;
            let eliminated = r.ids(n_i)?;
            let interface = r.ids(n_b)?;
            let factor = factor_from_lower(n_i, r.floats(n_i * (n_i + 1) / 2)?);
            let coupling = DenseMatrix::from_row_major(n_i, n_b, r.floats(n_i * n_b)?);
            let rhs = r.floats(n_i)?;
            let s = lower_to_full(n_b, r.floats(n_b * (n_b + 1) / 2)?);
            let g = r.floats(n_b)?;
            let schur = SchurContribution { source: node, dof_ids: interface.clone(), s, g };
            let record = EliminationRecord { node, eliminated, interface, factor, coupling, rhs, schur };
            if records.insert(node, record).is_some() {
                return Err(Error::Format { offset: at, message: format!("duplicate record for node {node}") });
            }
        }
        if r.pos != data.len() {
            return Err(r.err("trailing bytes after last record"));
        }
        Ok(RecordCache { n_dofs, n_nodes, scalings, records })
    }
}
