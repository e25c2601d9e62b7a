//! Hexahedral p-version element: geometry map, stiffness and load integration.

use super::basis::{gauss_legendre, hierarchic};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub type Point = [f64; 3];

/// Corner order: the bottom face `(−,−,−) (+,−,−) (+,+,−) (−,+,−)` followed by
/// the top face in the same order.
pub const CORNER_INDEX: [[u8; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Tensor-product mode of one element shape function: the 1D hierarchic index
/// used along each local direction.
pub type Mode = [u8; 3];

/// Element shape-function layout for degree `p` in tensor order
/// (`ξ` fastest, then `η`, then `ζ`).
pub fn dof_layout(p: usize) -> Vec<Mode> {
    let mut out = Vec::with_capacity((p + 1).pow(3));
    for c in 0..=p {
        for b in 0..=p {
            for a in 0..=p {
                out.push([a as u8, b as u8, c as u8]);
            }
        }
    }
    out
}

/// Number of local directions in which the mode is a bubble (index ≥ 2):
/// 0 vertex, 1 edge, 2 face, 3 interior.
pub fn bubble_count(mode: &Mode) -> usize {
    mode.iter().filter(|&&m| m >= 2).count()
}

/// Per-quadrature-point data of the geometry map.
struct MappedPoint {
    weight: f64,
    position: Point,
    inv_jacobian_t: [[f64; 3]; 3],
}

fn map_point(corners: &[Point; 8], xi: [f64; 3]) -> (Point, [[f64; 3]; 3], f64) {
    let mut x = [0.0; 3];
    let mut jac = [[0.0; 3]; 3]; // jac[i][j] = ∂x_i/∂ξ_j
    for (corner, idx) in corners.iter().zip(CORNER_INDEX.iter()) {
        let s: [f64; 3] = std::array::from_fn(|d| if idx[d] == 0 { -1.0 } else { 1.0 });
        let f: [f64; 3] = std::array::from_fn(|d| 0.5 * (1.0 + s[d] * xi[d]));
        let n = f[0] * f[1] * f[2];
        let dn = [0.5 * s[0] * f[1] * f[2], 0.5 * s[1] * f[0] * f[2], 0.5 * s[2] * f[0] * f[1]];
        for i in 0..3 {
            x[i] += n * corner[i];
            for j in 0..3 {
                jac[i][j] += corner[i] * dn[j];
            }
        }
    }
    let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
    (x, jac, det)
}

fn inverse_transpose(j: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    // cofactor matrix / det = J^{-T}
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| j[r0][c0] * j[r1][c1] - j[r0][c1] * j[r1][c0];
    [
        [c(1, 2, 1, 2) / det, -c(1, 2, 0, 2) / det, c(1, 2, 0, 1) / det],
        [-c(0, 2, 1, 2) / det, c(0, 2, 0, 2) / det, -c(0, 2, 0, 1) / det],
        [c(0, 1, 1, 2) / det, -c(0, 1, 0, 2) / det, c(0, 1, 0, 1) / det],
    ]
}

fn quadrature(corners: &[Point; 8], points_per_dir: usize) -> Result<(Vec<[f64; 3]>, Vec<MappedPoint>)> {
    let (x, w) = gauss_legendre(points_per_dir);
    let mut refs = Vec::with_capacity(points_per_dir.pow(3));
    let mut mapped = Vec::with_capacity(points_per_dir.pow(3));
    for k in 0..points_per_dir {
        for j in 0..points_per_dir {
            for i in 0..points_per_dir {
                let xi = [x[i], x[j], x[k]];
                let (pos, jac, det) = map_point(corners, xi);
                if !(det > 0.0) {
                    return Err(Error::DegenerateElement { point: refs.len(), det });
                }
                refs.push(xi);
                mapped.push(MappedPoint {
                    weight: w[i] * w[j] * w[k] * det,
                    position: pos,
                    inv_jacobian_t: inverse_transpose(&jac, det),
                });
            }
        }
    }
    Ok((refs, mapped))
}

/// Shape-function values and reference gradients at a reference point.
fn shape_at(p: usize, layout: &[Mode], xi: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let bases: [(Vec<f64>, Vec<f64>); 3] = std::array::from_fn(|d| hierarchic(p, xi[d]));
    let mut val = Vec::with_capacity(layout.len());
    let mut grad = Vec::with_capacity(layout.len());
    for m in layout {
        let (a, b, c) = (m[0] as usize, m[1] as usize, m[2] as usize);
        let (vx, dx) = (bases[0].0[a], bases[0].1[a]);
        let (vy, dy) = (bases[1].0[b], bases[1].1[b]);
        let (vz, dz) = (bases[2].0[c], bases[2].1[c]);
        val.push(vx * vy * vz);
        grad.push([dx * vy * vz, vx * dy * vz, vx * vy * dz]);
    }
    (val, grad)
}

/// Laplace stiffness matrix `∫ ∇N_a·∇N_b dx` of one hexahedron over all
/// `(p+1)³` shape functions, integrated with `(p+1)` Gauss points per
/// direction. Returns the matrix and its DOF layout.
pub fn element_stiffness(corners: &[Point; 8], p: usize) -> Result<(DenseMatrix, Vec<Mode>)> {
    if p == 0 {
        return Err(Error::InvalidArgument("polynomial degree must be at least 1".into()));
    }
    let layout = dof_layout(p);
    let n = layout.len();
    let (refs, mapped) = quadrature(corners, p + 1)?;
    let mut k = DenseMatrix::zeros(n, n);
    let mut phys = vec![[0.0; 3]; n];
    for (xi, q) in refs.iter().zip(&mapped) {
        let (_, grad) = shape_at(p, &layout, *xi);
        for (g, out) in grad.iter().zip(phys.iter_mut()) {
            *out = std::array::from_fn(|i| {
                q.inv_jacobian_t[i][0] * g[0] + q.inv_jacobian_t[i][1] * g[1] + q.inv_jacobian_t[i][2] * g[2]
            });
        }
        for a in 0..n {
            let ga = phys[a];
            for b in 0..=a {
                let gb = phys[b];
                k[(a, b)] += q.weight * (ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2]);
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            k[(b, a)] = k[(a, b)];
        }
    }
    Ok((k, layout))
}

/// Load vector `∫ f N_a dx` for the given modes.
pub(crate) fn element_load(
    corners: &[Point; 8],
    p: usize,
    modes: &[Mode],
    source: &dyn Fn(Point) -> f64,
    points_per_dir: usize,
) -> Result<Vec<f64>> {
    let (refs, mapped) = quadrature(corners, points_per_dir)?;
    let mut f = vec![0.0; modes.len()];
    for (xi, q) in refs.iter().zip(&mapped) {
        let (val, _) = shape_at(p, modes, *xi);
        let s = source(q.position) * q.weight;
        for (fa, v) in f.iter_mut().zip(&val) {
            *fa += s * v;
        }
    }
    Ok(f)
}

/// `∫ (u_h - u)² dx` over one element, where `u_h = Σ coeff_a N_a`.
pub(crate) fn element_squared_error(
    corners: &[Point; 8],
    p: usize,
    modes: &[Mode],
    coeffs: &[f64],
    exact: &dyn Fn(Point) -> f64,
    points_per_dir: usize,
) -> Result<f64> {
    let (refs, mapped) = quadrature(corners, points_per_dir)?;
    let mut sum = 0.0;
    for (xi, q) in refs.iter().zip(&mapped) {
        let (val, _) = shape_at(p, modes, *xi);
        let uh: f64 = val.iter().zip(coeffs).map(|(v, c)| v * c).sum();
        let e = uh - exact(q.position);
        sum += q.weight * e * e;
    }
    Ok(sum)
}

pub fn box_corners(lo: Point, hi: Point) -> [Point; 8] {
    std::array::from_fn(|c| {
        let idx = CORNER_INDEX[c];
        std::array::from_fn(|d| if idx[d] == 0 { lo[d] } else { hi[d] })
    })
}
