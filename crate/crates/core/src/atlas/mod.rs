//! Baking field predictions onto meshes, square-chart packing, OBJ/MTL
//! export and atlas images.

mod export;
mod pack;
mod raster;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::fields::AtlasModel;
use crate::geometry::{Mesh, Vec3};

pub use export::{export_obj, write_obj};
pub use pack::{pack_atlas, ChartLayout, ChartRect};
pub use raster::{pixel_uv, rasterize_normal_atlas, render_normal_atlas, render_preview, sample_image, texture_preview};

/// Baked UVs are rounded to this step so a 6-decimal OBJ round trip is exact.
pub const UV_QUANTUM: f64 = 1e-6;
const UV_STEPS: f64 = 1e6;

pub fn quantize_uv(v: f64) -> f64 {
    (v * UV_STEPS).round() / UV_STEPS
}

/// Quantizes `v` to the nearest step inside `[lo, hi]`.
fn quantize_within(v: f64, lo: f64, hi: f64) -> f64 {
    let k = (v * UV_STEPS).round().clamp((lo * UV_STEPS).ceil(), (hi * UV_STEPS).floor());
    k / UV_STEPS
}

/// Per-vertex and per-corner results of baking a model onto a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct BakedAtlas {
    /// `argmax_i c(v)[i]`, lowest index on ties.
    pub vertex_charts: Vec<usize>,
    /// `t_chart(v)` in chart-local coordinates.
    pub vertex_uvs: Vec<[f64; 2]>,
    /// Chart used by each triangle's corners.
    pub triangle_charts: Vec<usize>,
    /// Packed, quantized UV per corner (`3 * triangles`).
    pub corner_uvs: Vec<[f64; 2]>,
    pub layout: ChartLayout,
    /// Sorted vertex pairs of edges whose endpoints disagree on chart.
    pub seam_edges: Vec<[usize; 2]>,
}

impl BakedAtlas {
    pub fn corner_charts(&self) -> Vec<usize> {
        self.triangle_charts.iter().flat_map(|&c| [c; 3]).collect()
    }

    /// Vertices per chart.
    pub fn chart_vertex_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.layout.cells.len()];
        for &c in &self.vertex_charts {
            counts[c] += 1;
        }
        counts
    }

    /// Copy of `mesh` carrying the baked corner attributes.
    pub fn apply_to(&self, mesh: &Mesh) -> Mesh {
        Mesh {
            corner_uvs: Some(self.corner_uvs.clone()),
            corner_charts: Some(self.corner_charts()),
            ..mesh.clone()
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    // first maximum wins
    p.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

/// Bakes `model` onto `mesh`, which must already be in the model's
/// normalized coordinates. Charts are packed for a `atlas_res` texture.
///
/// A triangle whose vertices disagree takes the chart with the largest
/// summed probability over its corners, and its corner UVs are evaluated
/// under that chart.
pub fn bake(model: &AtlasModel, mesh: &Mesh, atlas_res: usize) -> Result<BakedAtlas> {
    if !model.is_finite() {
        return Err(Error::contract("model has non-finite parameters"));
    }
    let n = model.n_charts();
    let layout = pack_atlas(n, atlas_res)?;
    let pmf = model.chart_pmf_batch::<f64>(&mesh.positions);
    if pmf.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::contract("model produces non-finite chart probabilities"));
    }
    let vertex_charts: Vec<usize> = pmf.iter().map(|p| argmax(p)).collect();

    let triangle_charts: Vec<usize> = mesh
        .triangles
        .iter()
        .map(|tri| {
            let c = tri.map(|v| vertex_charts[v]);
            if c[0] == c[1] && c[1] == c[2] {
                c[0]
            } else {
                let votes: Vec<f64> = (0..n).map(|i| tri.iter().map(|&v| pmf[v][i]).sum()).collect();
                argmax(&votes)
            }
        })
        .collect();

    // evaluate t_i only where chart i is needed
    let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (v, &c) in vertex_charts.iter().enumerate() {
        needed[c].insert(v);
    }
    for (tri, &c) in mesh.triangles.iter().zip(&triangle_charts) {
        needed[c].extend(tri.iter().copied());
    }
    let mut local: Vec<std::collections::HashMap<usize, [f64; 2]>> = Vec::with_capacity(n);
    for (i, verts) in needed.iter().enumerate() {
        let ids: Vec<usize> = verts.iter().copied().collect();
        let pts: Vec<Vec3> = ids.iter().map(|&v| mesh.positions[v]).collect();
        let uvs = model.texture_batch::<f64>(i, &pts)?;
        local.push(ids.into_iter().zip(uvs).collect());
    }

    let vertex_uvs = vertex_charts
        .iter()
        .enumerate()
        .map(|(v, &c)| local[c][&v])
        .collect();
    let corner_uvs = mesh
        .triangles
        .iter()
        .zip(&triangle_charts)
        .flat_map(|(tri, &c)| {
            let rect = layout.cells[c];
            let local = &local[c];
            tri.map(move |v| {
                let uv = rect.pack(local[&v]);
                [0, 1].map(|k| quantize_within(uv[k], rect.origin[k], rect.origin[k] + rect.size))
            })
        })
        .collect();

    let mut seams = BTreeSet::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if vertex_charts[a] != vertex_charts[b] {
                seams.insert([a.min(b), a.max(b)]);
            }
        }
    }

    Ok(BakedAtlas {
        vertex_charts,
        vertex_uvs,
        triangle_charts,
        corner_uvs,
        layout,
        seam_edges: seams.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ModelConfig;
    use crate::geometry::icosphere;

    fn tiny(n: usize) -> AtlasModel {
        let cfg = ModelConfig {
            n_charts: n,
            texture_res: 4,
            layers: 2,
            width: 8,
            ..ModelConfig::default()
        };
        AtlasModel::new(cfg, 3).unwrap()
    }

    /// c prefers chart 1 for x > 0 with logit gap `k * |x|`.
    fn split_on_x(m: &mut AtlasModel, k: f32) {
        // hidden unit 0 = relu(x), unit 1 = relu(-x); raw x is encoding row 0
        let &(w0, b0) = m.c.layers.first().unwrap();
        let p = m.store.get_mut(w0);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        p.values[0] = 1.0;
        p.values[1] = -1.0;
        m.store.get_mut(b0).values.iter_mut().for_each(|v| *v = 0.0);
        let &(w, b) = m.c.layers.last().unwrap();
        m.store.get_mut(b).values.iter_mut().for_each(|v| *v = 0.0);
        let n = m.n_charts();
        let p = m.store.get_mut(w);
        p.values.iter_mut().for_each(|v| *v = 0.0);
        p.values[1] = k;
        p.values[n] = k;
    }

    #[test]
    fn single_chart_bake() {
        let m = tiny(1);
        let mesh = icosphere(1);
        let baked = bake(&m, &mesh, 64).unwrap();
        assert!(baked.vertex_charts.iter().all(|&c| c == 0));
        assert!(baked.seam_edges.is_empty());
        for (v, uv) in baked.vertex_uvs.iter().enumerate() {
            let direct = m.texture_coord(0, &mesh.positions[v]).unwrap().u;
            assert!((uv[0] - direct[0]).abs() < 1e-6 && (uv[1] - direct[1]).abs() < 1e-6);
        }
        assert_eq!(baked.chart_vertex_counts(), vec![mesh.vertex_count()]);
    }

    #[test]
    fn forced_regions_bake_exactly() {
        let mut m = tiny(2);
        split_on_x(&mut m, 50.0);
        let mesh = icosphere(2);
        let baked = bake(&m, &mesh, 64).unwrap();
        for (v, p) in mesh.positions.iter().enumerate() {
            if p.x.abs() > 0.05 {
                assert_eq!(baked.vertex_charts[v], usize::from(p.x > 0.0), "vertex {v} at {p:?}");
            }
        }
        assert!(!baked.seam_edges.is_empty());
        // corners sit inside their chart cell
        for (k, uv) in baked.corner_uvs.iter().enumerate() {
            let rect = baked.layout.cells[baked.triangle_charts[k / 3]];
            assert!(rect.contains(*uv, 0.0), "{uv:?} outside {rect:?}");
        }
        // scaling the logits keeps every argmax
        let mut sharper = m.clone();
        let &(w, _) = sharper.c.layers.last().unwrap();
        sharper.store.get_mut(w).values.iter_mut().for_each(|v| *v *= 3.0);
        assert_eq!(bake(&sharper, &mesh, 64).unwrap().vertex_charts, baked.vertex_charts);
    }

    #[test]
    fn non_finite_model_refused() {
        let mut m = tiny(1);
        m.store.get_mut(m.sigma).values[0] = f32::NAN;
        assert!(bake(&m, &icosphere(0), 16).is_err());
    }

    #[test]
    fn quantization_survives_six_decimals() {
        for k in 0..1000 {
            let v = quantize_uv(k as f64 * 0.000_987_654_3 + 0.1234567);
            let printed: f64 = format!("{v:.6}").parse().unwrap();
            assert_eq!(printed, v);
        }
    }
}
