//! Wavefront OBJ reading (`v`, `vn`, `vt`, `f`; other records ignored).

use std::fs;
use std::path::Path;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

/// Reads an OBJ file. Polygons are fan-triangulated around their first corner.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path)
}

/// Parses OBJ text; `path` only labels errors.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut positions = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut faces: Vec<[Corner; 3]> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" | "vn" => {
                let vals = parse_reals(tokens, 3, line_no, &err)?;
                let p = Vec3::new(vals[0], vals[1], vals[2]);
                if tag == "v" {
                    positions.push(p)
                } else {
                    normals.push(p)
                }
            }
            "vt" => {
                let vals = parse_reals(tokens, 2, line_no, &err)?;
                uvs.push([vals[0], vals[1]]);
            }
            "f" => {
                let corners = tokens
                    .map(|tok| parse_corner(tok, [positions.len(), uvs.len(), normals.len()]))
                    .collect::<std::result::Result<Vec<_>, String>>()
                    .map_err(|m| err(line_no, m))?;
                if corners.len() < 3 {
                    return Err(err(line_no, format!("face has {} corners, need at least 3", corners.len())));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let triangles: Vec<[usize; 3]> = faces.iter().map(|f| [f[0].v, f[1].v, f[2].v]).collect();
    let mut mesh = Mesh::new(positions, triangles);

    if faces.iter().flatten().all(|c| c.vt.is_some()) && !faces.is_empty() {
        mesh.corner_uvs = Some(faces.iter().flatten().map(|c| uvs[c.vt.unwrap()]).collect());
    }
    if !normals.is_empty() {
        // average the file's per-corner normals onto vertices; vertices
        // without any usable vn keep their area-weighted normal
        let mut acc = vec![Vec3::zeros(); mesh.positions.len()];
        for c in faces.iter().flatten() {
            if let Some(n) = c.vn.and_then(|k| normals[k].try_normalize(0.0)) {
                acc[c.v] += n;
            }
        }
        for (dst, sum) in mesh.vertex_normals.iter_mut().zip(acc) {
            if let Some(n) = sum.try_normalize(1e-12) {
                *dst = n;
            }
        }
    }
    Ok(mesh)
}

fn parse_reals<'a>(
    tokens: impl Iterator<Item = &'a str>,
    need: usize,
    line: usize,
    err: &impl Fn(usize, String) -> Error,
) -> Result<Vec<f64>> {
    let vals = tokens
        .take(need)
        .map(|t| t.parse::<f64>().map_err(|_| err(line, format!("invalid number `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() < need {
        return Err(err(line, format!("expected {need} numbers")));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(err(line, "non-finite coordinate".into()));
    }
    Ok(vals)
}

/// Resolves a 1-based (or negative, relative) OBJ index into a 0-based one.
fn resolve(token: &str, count: usize, what: &str) -> std::result::Result<usize, String> {
    let i: i64 = token
        .parse()
        .map_err(|_| format!("invalid {what} index `{token}`"))?;
    let resolved = match i {
        0 => return Err(format!("{what} index 0 is invalid (OBJ indices start at 1)")),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(format!("{what} index {i} out of range ({count} defined)"));
    }
    Ok(resolved as usize)
}

fn parse_corner(tok: &str, counts: [usize; 3]) -> std::result::Result<Corner, String> {
    let mut parts = tok.split('/');
    let v = resolve(parts.next().unwrap_or(""), counts[0], "vertex")?;
    let opt = |p: Option<&str>, count, what| match p {
        None | Some("") => Ok(None),
        Some(s) => resolve(s, count, what).map(Some),
    };
    let vt = opt(parts.next(), counts[1], "texture")?;
    let vn = opt(parts.next(), counts[2], "normal")?;
    Ok(Corner { v, vt, vn })
}
