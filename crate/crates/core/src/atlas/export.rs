use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::BakedAtlas;
use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Writes `mesh` as OBJ. Corner UVs, when present, become `vt` records shared
/// by corners with the same vertex and UV, so seams produce duplicates.
pub fn write_obj<W: Write>(mesh: &Mesh, out: &mut W, mtl: Option<(&str, &str)>) -> Result<()> {
    if let Some((lib, material)) = mtl {
        writeln!(out, "mtllib {lib}")?;
        writeln!(out, "usemtl {material}")?;
    }
    for p in &mesh.positions {
        writeln!(out, "v {:.6} {:.6} {:.6}", p.x, p.y, p.z)?;
    }
    let Some(uvs) = &mesh.corner_uvs else {
        for t in &mesh.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        return Ok(());
    };
    if uvs.len() != 3 * mesh.triangles.len() {
        return Err(Error::contract("corner UV count does not match the triangles"));
    }
    let mut ids: HashMap<(usize, u64, u64), usize> = HashMap::new();
    let mut corner_vt = Vec::with_capacity(uvs.len());
    for (k, uv) in uvs.iter().enumerate() {
        let key = (mesh.triangles[k / 3][k % 3], uv[0].to_bits(), uv[1].to_bits());
        let id = match ids.get(&key) {
            Some(&id) => id,
            None => {
                let id = ids.len();
                ids.insert(key, id);
                writeln!(out, "vt {:.6} {:.6}", uv[0], uv[1])?;
                id
            }
        };
        corner_vt.push(id + 1);
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = |j: usize| corner_vt[3 * t + j];
        writeln!(out, "f {}/{} {}/{} {}/{}", tri[0] + 1, c(0), tri[1] + 1, c(1), tri[2] + 1, c(2))?;
    }
    Ok(())
}

/// Writes the baked atlas on `mesh` (original coordinates) to `path`, plus
/// an MTL next to it whose diffuse map is `texture`.
pub fn export_obj(mesh: &Mesh, baked: &BakedAtlas, path: impl AsRef<Path>, texture: &str) -> Result<()> {
    let path = path.as_ref();
    if baked.triangle_charts.len() != mesh.triangle_count() || baked.vertex_charts.len() != mesh.vertex_count() {
        return Err(Error::contract("baked atlas does not match the mesh"));
    }
    let mtl_path = path.with_extension("mtl");
    let mtl_name = mtl_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::contract("output path has no file name"))?
        .to_owned();
    let textured = baked.apply_to(mesh);
    let mut obj = BufWriter::new(File::create(path)?);
    write_obj(&textured, &mut obj, Some((&mtl_name, "atlas")))?;
    obj.flush()?;
    let mut mtl = BufWriter::new(File::create(&mtl_path)?);
    writeln!(mtl, "newmtl atlas")?;
    writeln!(mtl, "Ka 0 0 0")?;
    writeln!(mtl, "Kd 1 1 1")?;
    writeln!(mtl, "Ks 0 0 0")?;
    writeln!(mtl, "map_Kd {texture}")?;
    mtl.flush()?;
    Ok(())
}
