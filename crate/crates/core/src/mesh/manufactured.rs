use super::element::{element_load, Point};
use super::Mesh;
use crate::error::{Error, Result};
use std::f64::consts::PI;
use std::str::FromStr;

/// Manufactured solutions vanishing on the boundary of `[0,Lx]×[0,Ly]×[0,Lz]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManufacturedCase {
    /// `u = x(Lx−x)·y(Ly−y)·z(Lz−z)`
    Poly2,
    /// `u = Π sin(π xᵢ / Lᵢ)`
    Trig,
}

impl FromStr for ManufacturedCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poly2" => Ok(Self::Poly2),
            "trig" => Ok(Self::Trig),
            other => Err(Error::InvalidArgument(format!("unknown manufactured case '{other}' (expected poly2 or trig)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub case: ManufacturedCase,
    pub extents: Point,
}

impl ExactSolution {
    pub fn value(&self, x: Point) -> f64 {
        let l = self.extents;
        match self.case {
            ManufacturedCase::Poly2 => (0..3).map(|d| x[d] * (l[d] - x[d])).product(),
            ManufacturedCase::Trig => (0..3).map(|d| (PI * x[d] / l[d]).sin()).product(),
        }
    }

    /// Source term `f = −Δu`.
    pub fn source(&self, x: Point) -> f64 {
        let l = self.extents;
        match self.case {
            ManufacturedCase::Poly2 => {
                let q: [f64; 3] = std::array::from_fn(|d| x[d] * (l[d] - x[d]));
                2.0 * (q[1] * q[2] + q[0] * q[2] + q[0] * q[1])
            }
            ManufacturedCase::Trig => {
                let k2: f64 = l.iter().map(|li| (PI / li).powi(2)).sum();
                k2 * self.value(x)
            }
        }
    }
}

/// Integrates `f = −Δu` into every element load vector (with `p+3` Gauss
/// points per direction) and returns the exact-solution evaluator.
pub fn manufactured_problem(mesh: &mut Mesh, case: ManufacturedCase) -> Result<ExactSolution> {
    let exact = ExactSolution { case, extents: mesh.extents };
    for e in &mut mesh.elements {
        if e.degree == 0 || e.modes.len() != e.dof_ids.len() {
            return Err(Error::InvalidArgument(format!("element {} has no shape-function layout", e.id)));
        }
        e.load = element_load(&e.corners, e.degree, &e.modes, &|x| exact.source(x), e.degree + 3)?;
    }
    Ok(exact)
}
