//! Structured p-version hexahedral discretisations of the Poisson problem.
//!
//! Every element of an `nx × ny × nz` grid carries the full tensor-product
//! hierarchic basis of degree `p`. Shape functions attached to the same
//! geometric entity (vertex, edge, face, cell) in neighbouring elements are
//! identified through a global entity key. Local directions coincide with the
//! global axes, so odd edge/face modes have a consistent orientation in every
//! element. Entities on the domain boundary carry homogeneous Dirichlet data
//! and are dropped from the system at generation time.

pub mod basis;
mod element;
mod io;
mod manufactured;

pub use element::{box_corners, bubble_count, dof_layout, element_stiffness, Mode, Point, CORNER_INDEX};
pub use io::MeshFile;
pub use manufactured::{manufactured_problem, ExactSolution, ManufacturedCase};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use std::collections::BTreeMap;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn centroid(&self) -> Point {
        std::array::from_fn(|d| 0.5 * (self.min[d] + self.max[d]))
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: std::array::from_fn(|d| self.min[d].min(other.min[d])),
            max: std::array::from_fn(|d| self.max[d].max(other.max[d])),
        }
    }
}

/// Geometric entity a global DOF is attached to, with its mode indices
/// (the 1D hierarchic degrees along the entity's tangential directions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DofEntity {
    Vertex,
    Edge { mode: u8 },
    Face { modes: [u8; 2] },
    Interior { modes: [u8; 3] },
}

impl DofEntity {
    fn from_mode(mode: &Mode) -> Self {
        let bubbles: Vec<u8> = mode.iter().copied().filter(|&m| m >= 2).collect();
        match bubbles.as_slice() {
            [] => DofEntity::Vertex,
            [m] => DofEntity::Edge { mode: *m },
            [a, b] => DofEntity::Face { modes: [*a, *b] },
            [a, b, c] => DofEntity::Interior { modes: [*a, *b, *c] },
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: usize,
    pub corners: [Point; 8],
    /// Polynomial degree; 0 when unknown (imported matrices).
    pub degree: usize,
    /// Global ids of the free DOFs, in local order.
    pub dof_ids: Vec<usize>,
    /// Shape-function mode of each free DOF; empty when unknown.
    pub modes: Vec<Mode>,
    pub stiffness: DenseMatrix,
    pub load: Vec<f64>,
}

impl Element {
    pub fn bbox(&self) -> Aabb {
        let mut b = Aabb { min: self.corners[0], max: self.corners[0] };
        for c in &self.corners[1..] {
            b = b.union(&Aabb { min: *c, max: *c });
        }
        b
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub elements: Vec<Element>,
    pub n_dofs: usize,
    /// Entity tag per DOF id; empty for imported meshes.
    pub dof_entity: Vec<DofEntity>,
    pub extents: Point,
}

impl Mesh {
    pub fn element(&self, id: usize) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn element_index(&self, id: usize) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }

    /// Scales one element's stiffness matrix `K_e → c·K_e` (material change).
    pub fn scale_element(&mut self, id: usize, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale factor {factor} must be positive")));
        }
        let idx = self
            .element_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown element id {id}")))?;
        self.elements[idx].stiffness.scale(factor);
        Ok(())
    }

    /// Checks the structural invariants: dense DOF ids, every DOF referenced,
    /// matching block sizes.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_dofs];
        for e in &self.elements {
            let n = e.dof_ids.len();
            if e.stiffness.rows() != n || e.stiffness.cols() != n || e.load.len() != n {
                return Err(Error::Inconsistency(format!("element {} has inconsistent block sizes", e.id)));
            }
            if !e.modes.is_empty() && e.modes.len() != n {
                return Err(Error::Inconsistency(format!("element {} has {} modes for {n} dofs", e.id, e.modes.len())));
            }
            for &d in &e.dof_ids {
                if d >= self.n_dofs {
                    return Err(Error::Inconsistency(format!("element {} references dof {d} ≥ n_dofs", e.id)));
                }
                seen[d] = true;
            }
        }
        if let Some(d) = seen.iter().position(|s| !s) {
            return Err(Error::Inconsistency(format!("dof {d} is not referenced by any element")));
        }
        Ok(())
    }

    /// Gauss-point L2 error `(Σ_e ∫ (u_h − u)²)^½` of a nodal coefficient
    /// vector against an exact solution, with `points_per_dir` points per
    /// direction in every element.
    pub fn solution_error(&self, values: &[f64], exact: &ExactSolution, points_per_dir: usize) -> Result<f64> {
        let mut sum = 0.0;
        for e in &self.elements {
            if e.modes.len() != e.dof_ids.len() || e.degree == 0 {
                return Err(Error::InvalidArgument(format!("element {} has no shape-function layout", e.id)));
            }
            let coeffs: Vec<f64> = e.dof_ids.iter().map(|&d| values[d]).collect();
            sum += element::element_squared_error(
                &e.corners,
                e.degree,
                &e.modes,
                &coeffs,
                &|x| exact.value(x),
                points_per_dir,
            )?;
        }
        Ok(sum.sqrt())
    }
}

/// Global key of a shape function: doubled grid coordinates of the entity
/// centre plus the bubble indices along each axis (0 for linear directions).
type EntityKey = ([usize; 3], [u8; 3]);

/// Generates the structured grid of `nx·ny·nz` degree-`p` elements on
/// `[0,Lx]×[0,Ly]×[0,Lz]` with homogeneous Dirichlet boundary. Loads are zero;
/// see [`manufactured_problem`].
pub fn generate_mesh(nx: usize, ny: usize, nz: usize, extents: Point, p: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidArgument(format!("grid dimensions must be ≥ 1, got {nx}×{ny}×{nz}")));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("polynomial degree must be ≥ 1".into()));
    }
    if !extents.iter().all(|&l| l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("extents must be positive, got {extents:?}")));
    }
    let counts = [nx, ny, nz];
    let h: [f64; 3] = std::array::from_fn(|d| extents[d] / counts[d] as f64);
    let layout = dof_layout(p);

    let key_of = |cell: [usize; 3], mode: &Mode| -> Option<EntityKey> {
        let mut pos = [0usize; 3];
        let mut bub = [0u8; 3];
        for d in 0..3 {
            pos[d] = match mode[d] {
                0 => 2 * cell[d],
                1 => 2 * cell[d] + 2,
                m => {
                    bub[d] = m;
                    2 * cell[d] + 1
                }
            };
            if pos[d] == 0 || pos[d] == 2 * counts[d] {
                return None;
            }
        }
        Some((pos, bub))
    };

    let cells: Vec<[usize; 3]> = (0..nz)
        .flat_map(|k| (0..ny).flat_map(move |j| (0..nx).map(move |i| [i, j, k])))
        .collect();

    // z-major numbering of free entities, modes last
    let mut numbering: BTreeMap<([usize; 3], [u8; 3]), (usize, DofEntity)> = BTreeMap::new();
    for &cell in &cells {
        for mode in &layout {
            if let Some((pos, bub)) = key_of(cell, mode) {
                numbering
                    .entry(([pos[2], pos[1], pos[0]], bub))
                    .or_insert((0, DofEntity::from_mode(mode)));
            }
        }
    }
    let mut dof_entity = Vec::with_capacity(numbering.len());
    for (id, v) in numbering.values_mut().enumerate() {
        v.0 = id;
        dof_entity.push(v.1);
    }

    let mut elements = Vec::with_capacity(cells.len());
    for (id, &cell) in cells.iter().enumerate() {
        let lo: Point = std::array::from_fn(|d| cell[d] as f64 * h[d]);
        let hi: Point = std::array::from_fn(|d| if cell[d] + 1 == counts[d] { extents[d] } else { (cell[d] + 1) as f64 * h[d] });
        let corners = box_corners(lo, hi);
        let (k_full, _) = element_stiffness(&corners, p)?;
        let mut local = Vec::new();
        let mut dof_ids = Vec::new();
        let mut modes = Vec::new();
        for (a, mode) in layout.iter().enumerate() {
            if let Some((pos, bub)) = key_of(cell, mode) {
                local.push(a);
                dof_ids.push(numbering[&([pos[2], pos[1], pos[0]], bub)].0);
                modes.push(*mode);
            }
        }
        let n = local.len();
        let mut k = DenseMatrix::zeros(n, n);
        for (r, &a) in local.iter().enumerate() {
            for (c, &b) in local.iter().enumerate() {
                k[(r, c)] = k_full[(a, b)];
            }
        }
        elements.push(Element { id, corners, degree: p, dof_ids, modes, stiffness: k, load: vec![0.0; n] });
    }

    Ok(Mesh { elements, n_dofs: dof_entity.len(), dof_entity, extents })
}
