//! Mesh and field file formats, and the plain-text output records.
//!
//! Curves are JSON `{"kind": "curve", "positions": [[x, y], ...]}` (2 or 3
//! coordinates per vertex); surfaces are Wavefront OBJ with `v` and
//! triangular `f` records. Fields are JSON `{"values": [[...], ...]}` or a
//! bare array of vectors. Output vectors have as many components as the
//! ambient space of their mesh.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::decomposition::DecompositionResult;
use crate::dynamics::SimState;
use crate::error::{MembraneError, Result};
use crate::field::{AmbientField, Vec3};
use crate::mesh::EmbeddedMesh;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveFile {
    kind: String,
    positions: Vec<Vec<f64>>,
}

fn to_vec3(v: &[f64], what: &str, i: usize) -> Result<(Vec3, usize)> {
    if !(v.len() == 2 || v.len() == 3) {
        return Err(MembraneError::InvalidInput(format!(
            "{what} {i} has {} components, expected 2 or 3",
            v.len()
        )));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(MembraneError::InvalidInput(format!("{what} {i} is not finite")));
    }
    Ok((Vec3::new(v[0], v[1], v.get(2).copied().unwrap_or(0.0)), v.len()))
}

fn uniform_vectors(rows: &[Vec<f64>], what: &str) -> Result<(Vec<Vec3>, usize)> {
    let mut dim = None;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let (v, d) = to_vec3(r, what, i)?;
        if *dim.get_or_insert(d) != d {
            return Err(MembraneError::InvalidInput(format!(
                "{what} {i} has {d} components, earlier entries have {}",
                dim.unwrap()
            )));
        }
        out.push(v);
    }
    Ok((out, dim.unwrap_or(3)))
}

pub fn parse_curve_json(text: &str) -> Result<EmbeddedMesh> {
    let file: CurveFile = serde_json::from_str(text)?;
    if file.kind != "curve" {
        return Err(MembraneError::InvalidInput(format!(
            "mesh kind must be \"curve\", got {:?}",
            file.kind
        )));
    }
    let (positions, dim) = uniform_vectors(&file.positions, "position")?;
    EmbeddedMesh::curve(positions, dim)
}

pub fn parse_obj(text: &str) -> Result<EmbeddedMesh> {
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let bad = |msg: &str| MembraneError::InvalidInput(format!("OBJ line {}: {msg}", ln + 1));
        match it.next() {
            None => {}
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad coordinate")))
                    .collect::<Result<_>>()?;
                if !(c.len() == 3 || c.len() == 4) || c.iter().any(|x| !x.is_finite()) {
                    return Err(bad("vertex needs 3 finite coordinates"));
                }
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        match first.parse::<usize>() {
                            Ok(k) if k >= 1 => Ok(k - 1),
                            _ => Err(bad("face indices must be positive integers")),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad("only triangular faces are supported"));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            Some("vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib") => {}
            Some(other) => return Err(bad(&format!("unsupported record {other:?}"))),
        }
    }
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&v| v >= positions.len())) {
        return Err(MembraneError::InvalidInput(format!(
            "face {:?} references a missing vertex (have {})",
            t.map(|v| v + 1),
            positions.len()
        )));
    }
    EmbeddedMesh::surface(positions, triangles)
}

/// Load a mesh, choosing the format from the extension (`.json` or `.obj`).
pub fn load_mesh(path: &Path) -> Result<EmbeddedMesh> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("json") => parse_curve_json(&text),
        Some("obj") => parse_obj(&text),
        _ => Err(MembraneError::InvalidInput(format!(
            "cannot infer mesh format of {}; use .json or .obj",
            path.display()
        ))),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FieldFile {
    Wrapped {
        values: Vec<Vec<f64>>,
    },
    Bare(Vec<Vec<f64>>),
}

/// Parse a vector field for `mesh`. On planar meshes 2-vectors are accepted,
/// and 3-vectors must have zero third component.
pub fn parse_field(text: &str, mesh: &EmbeddedMesh) -> Result<AmbientField> {
    let rows = match serde_json::from_str::<FieldFile>(text) {
        Ok(FieldFile::Wrapped { values }) | Ok(FieldFile::Bare(values)) => values,
        Err(_) => {
            return Err(MembraneError::InvalidInput(
                "field must be {\"values\": [[...], ...]} or an array of vectors".into(),
            ))
        }
    };
    if rows.len() != mesh.n_vertices() {
        return Err(MembraneError::ShapeMismatch { expected: mesh.n_vertices(), got: rows.len() });
    }
    let (values, dim) = uniform_vectors(&rows, "field value")?;
    if dim > mesh.ambient_dim() {
        if let Some(i) = values.iter().position(|v| v.z != 0.0) {
            return Err(MembraneError::InvalidInput(format!(
                "field value {i} leaves the plane of a planar curve"
            )));
        }
    }
    Ok(AmbientField(values))
}

pub fn load_field(path: &Path, mesh: &EmbeddedMesh) -> Result<AmbientField> {
    parse_field(&std::fs::read_to_string(path)?, mesh)
}

/// Vectors as JSON arrays with `dim` components.
pub fn vectors_json(values: &[Vec3], dim: usize) -> Value {
    Value::Array(values.iter().map(|v| json!(v.as_slice()[..dim].to_vec())).collect())
}

pub fn decomposition_json(result: &DecompositionResult, dim: usize) -> Value {
    json!({
        "x_mu": vectors_json(&result.x_mu.0, dim),
        "pressure": result.pressure.0,
        "constraint_residual_norm": result.constraint_residual_norm,
        "orthogonality_defect": result.orthogonality_defect,
        "solver_iterations": result.solver_iterations,
    })
}

/// One trajectory frame as a single JSON line (no trailing newline).
pub fn frame_json_line(state: &SimState, dim: usize) -> String {
    json!({
        "t": state.t,
        "step": state.step,
        "positions": vectors_json(&state.positions, dim),
        "velocity": vectors_json(&state.velocity.0, dim),
        "pressure": state.pressure.0,
    })
    .to_string()
}

pub const DIAGNOSTICS_HEADER: &str = "t,step,energy,potential_energy,max_density_deviation,\
constraint_residual,pressure_min,pressure_mean,pressure_max,min_mean_curvature";

pub fn diagnostics_csv_row(state: &SimState) -> String {
    let d = &state.diagnostics;
    let mut s = String::new();
    write!(
        s,
        "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        state.t,
        state.step,
        d.kinetic_energy,
        d.potential_energy,
        d.max_density_deviation,
        d.constraint_residual,
        d.pressure_min,
        d.pressure_mean,
        d.pressure_max,
        d.min_mean_curvature
    )
    .expect("writing to a String cannot fail");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_json_roundtrip() {
        let m = parse_curve_json(r#"{"kind":"curve","positions":[[1,0],[0,1],[-1,0],[0,-1]]}"#).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.ambient_dim(), 2);
        let m = parse_curve_json(r#"{"kind":"curve","positions":[[1,0,0],[0,1,0.1],[-1,0,0],[0,-1,0]]}"#).unwrap();
        assert_eq!(m.ambient_dim(), 3);
        assert!(parse_curve_json(r#"{"kind":"curve","positions":[[1,0],[0,1,0],[-1,0],[0,-1]]}"#).is_err());
        assert!(parse_curve_json(r#"{"kind":"surface","positions":[]}"#).is_err());
        assert!(parse_curve_json("not json").is_err());
    }

    #[test]
    fn obj_tetrahedron() {
        let obj = "# tet\nv 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1 2 3\nf 1 3 4\nf 1 4 2\nf 2 4 3\n";
        let m = parse_obj(obj).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn fields_in_both_layouts() {
        let m = parse_curve_json(r#"{"kind":"curve","positions":[[1,0],[0,1],[-1,0],[0,-1]]}"#).unwrap();
        let a = parse_field(r#"{"values":[[1,0],[0,1],[-1,0],[0,-1]]}"#, &m).unwrap();
        let b = parse_field(r#"[[1,0,0],[0,1,0],[-1,0,0],[0,-1,0]]"#, &m).unwrap();
        assert_eq!(a, b);
        assert!(parse_field(r#"[[1,0],[0,1]]"#, &m).is_err());
        assert!(parse_field(r#"[[1,0,1],[0,1,0],[-1,0,0],[0,-1,0]]"#, &m).is_err());
    }

    #[test]
    fn planar_output_has_two_components() {
        let v = vectors_json(&[Vec3::new(1.0, 2.0, 0.0)], 2);
        assert_eq!(v.to_string(), "[[1.0,2.0]]");
    }
}
