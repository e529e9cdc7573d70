//! Atlas quality from rendered views: seam visibility, area distortion,
//! angle distortion, their combination, and texel coverage.

mod render;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::atlas::{argmax, BakedAtlas};
use crate::error::{Error, Result};
use crate::fields::AtlasModel;
use crate::geometry::{Mesh, RayCaster, SampleSource, Vec3, DEGENERATE_AREA};

pub use render::{render_buffers, sample_cameras, Camera, CameraRig, PixelBuffer, PixelSample};

/// UV triangles with a smaller doubled signed area are skipped by the
/// conformal metric.
pub const DEGENERATE_UV_AREA: f64 = 1e-14;

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// `1 - boundary/hit`, where a hit pixel is on a boundary when a 4-neighbour
/// hit pixel at similar depth has a UV further than `uv_threshold` away.
/// `None` when nothing was hit.
pub fn metric_boundary(buf: &PixelBuffer, uv_threshold: f64, depth_threshold: f64) -> Option<f64> {
    let hits = buf.hit_count();
    if hits == 0 {
        return None;
    }
    let (w, h) = (buf.width, buf.height);
    let mut boundary = 0usize;
    for y in 0..h {
        for x in 0..w {
            let Some(p) = buf.get(x, y) else { continue };
            let neighbours = [
                (x > 0).then(|| (x - 1, y)),
                (x + 1 < w).then(|| (x + 1, y)),
                (y > 0).then(|| (x, y - 1)),
                (y + 1 < h).then(|| (x, y + 1)),
            ];
            let on_seam = neighbours.into_iter().flatten().any(|(nx, ny)| {
                buf.get(nx, ny).is_some_and(|q| {
                    let du = p.uv[0] - q.uv[0];
                    let dv = p.uv[1] - q.uv[1];
                    (du * du + dv * dv).sqrt() > uv_threshold && (p.depth - q.depth).abs() <= depth_threshold
                })
            });
            boundary += usize::from(on_seam);
        }
    }
    Some(1.0 - boundary as f64 / hits as f64)
}

fn corner_uvs(mesh: &Mesh) -> Result<&[[f64; 2]]> {
    mesh.corner_uvs
        .as_deref()
        .filter(|u| u.len() == 3 * mesh.triangle_count())
        .ok_or_else(|| Error::contract("mesh has no per-corner UVs"))
}

fn uv_area(uv: &[[f64; 2]], t: usize) -> f64 {
    let [a, b, c] = [uv[3 * t], uv[3 * t + 1], uv[3 * t + 2]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
}

/// `max(0, 1 - median|r/median(r) - 1|)` over hit pixels, with `r` the
/// UV-to-surface area ratio of the pixel's triangle.
pub fn metric_stretch(mesh: &Mesh, buf: &PixelBuffer) -> Result<Option<f64>> {
    let uv = corner_uvs(mesh)?;
    let mut ratios: Vec<f64> = buf
        .pixels
        .iter()
        .flatten()
        .filter_map(|p| {
            let area = mesh.triangle_area(p.triangle);
            (area > DEGENERATE_AREA).then(|| uv_area(uv, p.triangle) / area)
        })
        .collect();
    let Some(mid) = median(&mut ratios) else {
        return Ok(None);
    };
    if !(mid > 0.0) {
        return Ok(Some(0.0));
    }
    let mut dev: Vec<f64> = ratios.iter().map(|r| (r / mid - 1.0).abs()).collect();
    Ok(median(&mut dev).map(|d| (1.0 - d).max(0.0)))
}

/// `|cos|` of the angle between the surface directions of `+u` and `+v`
/// on triangle `t`, or `None` for a degenerate UV triangle.
pub fn tangent_cosine(mesh: &Mesh, uv: &[[f64; 2]], t: usize) -> Option<f64> {
    let [p0, p1, p2] = mesh.corners(t);
    let [a, b, c] = [uv[3 * t], uv[3 * t + 1], uv[3 * t + 2]];
    let (e1, e2) = (p1 - p0, p2 - p0);
    let (du1, dv1, du2, dv2) = (b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1]);
    let det = du1 * dv2 - du2 * dv1;
    if !(det.abs() > DEGENERATE_UV_AREA) {
        return None;
    }
    let tangent: Vec3 = (e1 * dv2 - e2 * dv1) / det;
    let bitangent: Vec3 = (e2 * du1 - e1 * du2) / det;
    let norm = tangent.norm() * bitangent.norm();
    (norm > 0.0 && norm.is_finite()).then(|| (tangent.dot(&bitangent) / norm).abs().min(1.0))
}

/// `1 - median |cos(tangent, bitangent)|` over hit pixels.
pub fn metric_conformal(mesh: &Mesh, buf: &PixelBuffer) -> Result<Option<f64>> {
    let uv = corner_uvs(mesh)?;
    let mut cosines: Vec<f64> = buf
        .pixels
        .iter()
        .flatten()
        .filter_map(|p| tangent_cosine(mesh, uv, p.triangle))
        .collect();
    Ok(median(&mut cosines).map(|m| 1.0 - m))
}

/// Per-view scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub boundary: f64,
    pub stretch: f64,
    pub conformal: f64,
    pub editability: f64,
    pub hit_pixels: usize,
}

impl ViewMetrics {
    pub fn new(boundary: f64, stretch: f64, conformal: f64, hit_pixels: usize) -> Self {
        Self {
            boundary,
            stretch,
            conformal,
            editability: editability(boundary, stretch, conformal),
            hit_pixels,
        }
    }
}

/// `boundary * (stretch + conformal) / 2`.
pub fn editability(boundary: f64, stretch: f64, conformal: f64) -> f64 {
    boundary * (stretch + conformal) / 2.0
}

/// Mean of the per-view editability values; 0 for no views.
pub fn metric_editability(views: &[ViewMetrics]) -> f64 {
    if views.is_empty() {
        return 0.0;
    }
    views.iter().map(|v| v.editability).sum::<f64>() / views.len() as f64
}

/// Fraction of the `n * texel_res^2` chart texels hit by `t_i(x)` for
/// `sample_count` surface samples, `i` being the most probable chart at `x`.
pub fn metric_uv_efficiency(
    model: &AtlasModel,
    source: &SampleSource,
    texel_res: usize,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if texel_res == 0 {
        return Err(Error::contract("texel resolution must be positive"));
    }
    let n = model.n_charts();
    let mut marked = vec![false; n * texel_res * texel_res];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const CHUNK: usize = 1 << 16;
    let mut remaining = sample_count;
    while remaining > 0 {
        let count = remaining.min(CHUNK);
        remaining -= count;
        let xs: Vec<Vec3> = source.draw(count, &mut rng)?.into_iter().map(|s| s.x).collect();
        let pmf = model.chart_pmf_batch::<f32>(&xs);
        let mut by_chart: Vec<Vec<Vec3>> = vec![Vec::new(); n];
        for (x, p) in xs.iter().zip(&pmf) {
            by_chart[argmax(p)].push(*x);
        }
        for (i, pts) in by_chart.iter().enumerate() {
            for uv in model.texture_batch::<f32>(i, pts)? {
                if !(uv[0].is_finite() && uv[1].is_finite()) {
                    continue;
                }
                let tx = ((uv[0] * texel_res as f64).floor().max(0.0) as usize).min(texel_res - 1);
                let ty = ((uv[1] * texel_res as f64).floor().max(0.0) as usize).min(texel_res - 1);
                marked[(i * texel_res + ty) * texel_res + tx] = true;
            }
        }
    }
    Ok(marked.iter().filter(|&&m| m).count() as f64 / marked.len() as f64)
}

/// Settings recorded with every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsParams {
    pub views: usize,
    pub seed: u64,
    pub camera: CameraRig,
    pub uv_threshold: f64,
    /// Fraction of the bounding-sphere diameter treated as a depth discontinuity.
    pub depth_fraction: f64,
    pub texel_res: usize,
    pub sample_count: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            views: 16,
            seed: 0,
            camera: CameraRig::default(),
            uv_threshold: 0.1,
            depth_fraction: 0.02,
            texel_res: 128,
            sample_count: 1 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub boundary: f64,
    pub stretch: f64,
    pub conformal: f64,
    /// Combination of the three view-averaged scores above.
    pub editability: f64,
    /// Average of the per-view editability values.
    pub editability_view_mean: f64,
    /// Texel coverage; absent when no model was supplied.
    pub uv_efficiency: Option<f64>,
    pub views: Vec<ViewMetrics>,
    /// Views that hit nothing and were left out of the averages.
    pub empty_views: usize,
    pub depth_threshold: f64,
    pub params: MetricsParams,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields serialize")
    }
}

/// Renders `params.views` cameras of `mesh` (which must carry corner UVs)
/// and averages the per-view scores.
pub fn evaluate_mesh(mesh: &Mesh, params: &MetricsParams) -> Result<MetricsReport> {
    corner_uvs(mesh)?;
    let cameras = sample_cameras(mesh, params.views, params.seed, &params.camera)?;
    let (_, radius) = mesh.bounding_sphere().expect("cameras need bounds");
    let depth_threshold = params.depth_fraction * 2.0 * radius;
    let caster = RayCaster::new(mesh);
    let mut views = Vec::with_capacity(cameras.len());
    let mut empty_views = 0;
    for cam in &cameras {
        let buf = render_buffers(&caster, cam)?;
        let boundary = metric_boundary(&buf, params.uv_threshold, depth_threshold);
        let stretch = metric_stretch(mesh, &buf)?;
        let conformal = metric_conformal(mesh, &buf)?;
        match (boundary, stretch, conformal) {
            (Some(b), Some(s), Some(c)) => views.push(ViewMetrics::new(b, s, c, buf.hit_count())),
            _ => empty_views += 1,
        }
    }
    if views.is_empty() {
        return Err(Error::contract("no evaluation view hit the mesh"));
    }
    let mean = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / views.len() as f64;
    let (boundary, stretch, conformal) = (mean(|v| v.boundary), mean(|v| v.stretch), mean(|v| v.conformal));
    Ok(MetricsReport {
        boundary,
        stretch,
        conformal,
        editability: editability(boundary, stretch, conformal),
        editability_view_mean: metric_editability(&views),
        uv_efficiency: None,
        views,
        empty_views,
        depth_threshold,
        params: params.clone(),
    })
}

/// Full evaluation of a baked model on `mesh` (normalized coordinates), with
/// texel coverage measured on samples of the same mesh.
pub fn evaluate(model: &AtlasModel, mesh: &Mesh, baked: &BakedAtlas, params: &MetricsParams) -> Result<MetricsReport> {
    let mut report = evaluate_mesh(&baked.apply_to(mesh), params)?;
    let source = SampleSource::from_mesh(mesh.clone(), false)?;
    report.uv_efficiency = Some(metric_uv_efficiency(
        model,
        &source,
        params.texel_res,
        params.sample_count,
        params.seed,
    )?);
    Ok(report)
}
