//! Minimal Wavefront OBJ support: `v` (with optional vertex color), `vn`,
//! `vt` and triangular `f` records.

use std::fmt::Write as _;
use std::path::Path;

use super::{compute_vertex_normals, TriangleMesh};
use crate::error::{Error, Result};
use crate::math::Vec3;

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (v, a) in mesh.vertices.iter().zip(&mesh.vertex_albedo) {
        let _ = writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, a.x, a.y, a.z);
    }
    for n in &mesh.vertex_normals {
        let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
    }
    for uv in &mesh.vertex_uv {
        let _ = writeln!(out, "vt {} {}", uv[0], uv[1]);
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        let _ = writeln!(out, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
    }
    std::fs::write(path, out).map_err(|e| Error::io("writing mesh", path, e))
}

fn parse_floats(path: &Path, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {line_no}: bad number {s:?}")))
        })
        .collect()
}

/// Reads a mesh; attributes are matched to vertices through the face records.
/// Missing normals are recomputed.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io("reading mesh", path, e))?;
    let mut vertices = Vec::new();
    let mut albedo = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut corner_attrs: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        match tag {
            "v" => {
                let vals = parse_floats(path, line_no, &rest)?;
                if vals.len() != 3 && vals.len() != 6 {
                    return Err(Error::format(path, format!("line {line_no}: expected 3 or 6 values")));
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                albedo.push(if vals.len() == 6 {
                    Vec3::new(vals[3], vals[4], vals[5])
                } else {
                    Vec3::repeat(0.5)
                });
            }
            "vn" => {
                let vals = parse_floats(path, line_no, &rest)?;
                if vals.len() != 3 {
                    return Err(Error::format(path, format!("line {line_no}: expected 3 values")));
                }
                normals.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            "vt" => {
                let vals = parse_floats(path, line_no, &rest)?;
                if vals.len() < 2 {
                    return Err(Error::format(path, format!("line {line_no}: expected 2 values")));
                }
                uvs.push([vals[0], vals[1]]);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::format(path, format!("line {line_no}: only triangles are supported")));
                }
                let mut face = [0u32; 3];
                for (k, corner) in rest.iter().enumerate() {
                    let mut parts = corner.split('/');
                    let idx = |s: Option<&str>| -> Result<Option<usize>> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => s
                                .parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| Some(i - 1))
                                .ok_or_else(|| Error::format(path, format!("line {line_no}: bad index {s:?}"))),
                        }
                    };
                    let v = idx(parts.next())?
                        .ok_or_else(|| Error::format(path, format!("line {line_no}: missing vertex index")))?;
                    let vt = idx(parts.next())?;
                    let vn = idx(parts.next())?;
                    face[k] = v as u32;
                    corner_attrs.push((v, vt, vn));
                }
                faces.push(face);
            }
            _ => {}
        }
    }

    let n = vertices.len();
    let mut mesh = TriangleMesh {
        vertex_normals: vec![Vec3::z(); n],
        vertex_albedo: albedo,
        vertex_uv: vec![[0.0, 0.0]; n],
        vertices,
        faces,
    };
    mesh.check_topology().map_err(|e| Error::format(path, e.to_string()))?;

    let mut have_normals = !corner_attrs.is_empty();
    for &(v, vt, vn) in &corner_attrs {
        if let Some(t) = vt {
            let uv = uvs
                .get(t)
                .ok_or_else(|| Error::format(path, format!("texture index {} out of range", t + 1)))?;
            mesh.vertex_uv[v] = *uv;
        }
        match vn {
            Some(k) => {
                let nrm = normals
                    .get(k)
                    .ok_or_else(|| Error::format(path, format!("normal index {} out of range", k + 1)))?;
                mesh.vertex_normals[v] = *nrm;
            }
            None => have_normals = false,
        }
    }
    if !have_normals {
        mesh = compute_vertex_normals(&mesh);
    }
    Ok(mesh)
}
