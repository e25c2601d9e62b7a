//! Mesh JSON export/import.
//!
//! ```json
//! { "n_dofs": 1, "elements": [ { "id": 0, "dofs": [0], "k_lower": [0.33], "f": [0.1] } ] }
//! ```
//!
//! `k_lower` is the row-major lower triangle of the element matrix. The
//! optional `corners`, `degree`, `modes` and top-level `extents` fields carry
//! geometry; corners are required to build a partition tree.

use super::element::{Mode, Point};
use super::{Element, Mesh};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub n_dofs: usize,
    pub elements: Vec<ElementEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<Point>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementEntry {
    pub id: usize,
    pub dofs: Vec<usize>,
    pub k_lower: Vec<f64>,
    pub f: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corners: Option<[Point; 8]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Mode>>,
}

impl From<&Mesh> for MeshFile {
    fn from(mesh: &Mesh) -> Self {
        MeshFile {
            n_dofs: mesh.n_dofs,
            extents: Some(mesh.extents),
            elements: mesh
                .elements
                .iter()
                .map(|e| ElementEntry {
                    id: e.id,
                    dofs: e.dof_ids.clone(),
                    k_lower: e.stiffness.lower_triangle(),
                    f: e.load.clone(),
                    corners: Some(e.corners),
                    degree: (e.degree > 0).then_some(e.degree),
                    modes: (!e.modes.is_empty()).then(|| e.modes.clone()),
                })
                .collect(),
        }
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

impl Mesh {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshFile::from(self)).expect("mesh serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Mesh> {
        let file: MeshFile = serde_json::from_str(text).map_err(|e| Error::Format {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let mut elements = Vec::with_capacity(file.elements.len());
        let mut extents = [0.0f64; 3];
        for entry in file.elements {
            let n = entry.dofs.len();
            let bad = |message: String| Error::Format { offset: 0, message };
            let stiffness = DenseMatrix::from_lower(n, &entry.k_lower).ok_or_else(|| {
                bad(format!("element {}: k_lower has {} entries, expected {}", entry.id, entry.k_lower.len(), n * (n + 1) / 2))
            })?;
            if entry.f.len() != n {
                return Err(bad(format!("element {}: f has {} entries, expected {n}", entry.id, entry.f.len())));
            }
            let corners = entry
                .corners
                .ok_or_else(|| bad(format!("element {}: missing corners", entry.id)))?;
            for c in &corners {
                for d in 0..3 {
                    extents[d] = extents[d].max(c[d]);
                }
            }
            elements.push(Element {
                id: entry.id,
                corners,
                degree: entry.degree.unwrap_or(0),
                dof_ids: entry.dofs,
                modes: entry.modes.unwrap_or_default(),
                stiffness,
                load: entry.f,
            });
        }
        let mesh = Mesh { elements, n_dofs: file.n_dofs, dof_entity: Vec::new(), extents: file.extents.unwrap_or(extents) };
        mesh.validate()?;
        Ok(mesh)
    }
}
