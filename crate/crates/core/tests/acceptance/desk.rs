use std::time::Instant;

use uvfield::atlas::{bake, export_obj, write_obj};
use uvfield::fields::{write_checkpoint, AtlasModel};
use uvfield::geometry::{icosphere, load_mesh, parse_obj, Mesh, Normalization, SampleSource};
use uvfield::losses::{LossTerm, LossWeights};
use uvfield::metrics::{evaluate, evaluate_mesh, MetricsParams, MetricsReport};
use uvfield::trainer::{fit, TrainConfig, TrainLog};

use crate::support::Outcome;

/// Window for the leading and trailing loss means.
const WINDOW: usize = 500;
const ATLAS_RES: usize = 1024;

/// Icosphere with 1280 triangles.
pub fn desk_mesh() -> Mesh {
    icosphere(3)
}

/// Reduced architecture and batch for the single-core desk budget. The small
/// batches make the Chamfer and 2D cycle terms noisy, so both carry more weight.
pub fn desk_config() -> TrainConfig {
    let weights = LossWeights {
        w_232: 10.0,
        w_surface: 50.0,
        ..LossWeights::default()
    };
    TrainConfig {
        n_charts: 4,
        iterations: 10_000,
        batch_surface: 256,
        batch_uv: 256,
        layers: 4,
        width: 64,
        pe_degree_ts: 2,
        lr_mlp: 3e-3,
        seed: 1,
        weights,
        ..TrainConfig::default()
    }
}

pub struct DeskRun {
    pub model: AtlasModel,
    pub log: TrainLog,
    pub checkpoint: Vec<u8>,
    pub report: MetricsReport,
    pub seconds: f64,
}

impl DeskRun {
    pub fn train(config: &TrainConfig) -> Self {
        let mesh = desk_mesh();
        let source = SampleSource::from_mesh(mesh.clone(), config.flat_normals).unwrap();
        let start = Instant::now();
        let (model, log) = fit(&source, config).unwrap();
        let seconds = start.elapsed().as_secs_f64();
        let baked = bake(&model, &mesh, ATLAS_RES).unwrap();
        let report = evaluate(&model, &mesh, &baked, &MetricsParams::default()).unwrap();
        Self {
            checkpoint: write_checkpoint(&model),
            model,
            log,
            report,
            seconds,
        }
    }

    pub fn summary(&self) -> String {
        let r = &self.report;
        format!(
            "boundary {:.4} stretch {:.4} conformal {:.4} editability {:.4} uv_efficiency {:.4}, trained in {:.0}s",
            r.boundary,
            r.stretch,
            r.conformal,
            r.editability,
            r.uv_efficiency.unwrap_or(f64::NAN),
            self.seconds
        )
    }
}

pub fn end_to_end(run: &DeskRun) -> Outcome {
    let mut problems = Vec::new();
    for t in LossTerm::ALL {
        let (lead, trail) = run.log.leading_trailing_means(t, WINDOW).unwrap();
        if !(trail < lead) {
            problems.push(format!("{t} trailing {trail:.5} >= leading {lead:.5}"));
        }
    }
    let r = &run.report;
    let uv_eff = r.uv_efficiency.unwrap_or(f64::NAN);
    for (name, value, min) in [
        ("boundary", r.boundary, 0.90),
        ("conformal", r.conformal, 0.85),
        ("uv_efficiency", uv_eff, 0.60),
    ] {
        if !(value >= min) {
            problems.push(format!("{name} {value:.4} < {min}"));
        }
    }
    let mut detail = run.summary();
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join(", ")));
    }
    Outcome::new(problems.is_empty(), detail)
}

pub fn ablations(full: &DeskRun) -> Outcome {
    let mut no_distortion = desk_config();
    no_distortion.weights.w_conformal = 0.0;
    no_distortion.weights.w_stretch = 0.0;
    let no_distortion = DeskRun::train(&no_distortion);
    let mut no_cluster = desk_config();
    no_cluster.weights.w_cluster = 0.0;
    let no_cluster = DeskRun::train(&no_cluster);

    let conformal_drops = no_distortion.report.conformal < full.report.conformal;
    let boundary_drops = no_cluster.report.boundary < full.report.boundary;
    let detail = format!(
        "conformal {:.4} without distortion terms vs {:.4} full; boundary {:.4} without cluster term vs {:.4} full",
        no_distortion.report.conformal, full.report.conformal, no_cluster.report.boundary, full.report.boundary
    );
    Outcome::new(conformal_drops && boundary_drops, detail)
}

pub fn same_run(a: &DeskRun, b: &DeskRun) -> Vec<&'static str> {
    let mut differ = Vec::new();
    if a.log.to_csv(false) != b.log.to_csv(false) {
        differ.push("log");
    }
    if a.checkpoint != b.checkpoint {
        differ.push("checkpoint");
    }
    if a.report.to_json() != b.report.to_json() {
        differ.push("report");
    }
    differ
}

/// Fields of two reports that differ by more than `tol`.
fn report_gaps(a: &MetricsReport, b: &MetricsReport, tol: f64) -> Vec<String> {
    let mut pairs = vec![
        ("boundary", a.boundary, b.boundary),
        ("stretch", a.stretch, b.stretch),
        ("conformal", a.conformal, b.conformal),
        ("editability", a.editability, b.editability),
    ];
    for (va, vb) in a.views.iter().zip(&b.views) {
        pairs.push(("view boundary", va.boundary, vb.boundary));
        pairs.push(("view stretch", va.stretch, vb.stretch));
        pairs.push(("view conformal", va.conformal, vb.conformal));
    }
    let mut gaps: Vec<String> = pairs
        .into_iter()
        .filter(|(_, x, y)| !((x - y).abs() <= tol))
        .map(|(name, x, y)| format!("{name} {x} vs {y}"))
        .collect();
    if a.views.len() != b.views.len() {
        gaps.push(format!("view count {} vs {}", a.views.len(), b.views.len()));
    }
    gaps
}

pub fn baking_fidelity(model: &AtlasModel) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    // positions as they come back from a 6-decimal OBJ, so the re-import is exact
    let mut text = Vec::new();
    write_obj(&desk_mesh(), &mut text, None).unwrap();
    let mesh = parse_obj(std::str::from_utf8(&text).unwrap(), dir.path()).unwrap();

    let baked = bake(model, &mesh, ATLAS_RES).unwrap();
    let mut vertex_gap = 0.0f64;
    for (v, x) in mesh.positions.iter().enumerate() {
        let chart = baked.vertex_charts[v];
        let direct = model.texture_coord(chart, x).unwrap().u;
        let uv = baked.vertex_uvs[v];
        vertex_gap = vertex_gap.max((uv[0] - direct[0]).abs()).max((uv[1] - direct[1]).abs());
    }
    let mut corner_gap = 0.0f64;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let chart = baked.triangle_charts[t];
        for (k, v) in tri.iter().enumerate() {
            let direct = baked.layout.cells[chart].pack(model.texture_coord(chart, &mesh.positions[*v]).unwrap().u);
            let uv = baked.corner_uvs[3 * t + k];
            corner_gap = corner_gap.max((uv[0] - direct[0]).abs()).max((uv[1] - direct[1]).abs());
        }
    }

    let path = dir.path().join("baked.obj");
    export_obj(&mesh, &baked, &path, "atlas.png").unwrap();
    let imported = load_mesh(&path).unwrap();
    let imported_uvs = imported.corner_uvs.clone().unwrap_or_default();
    let same_shape = imported_uvs.len() == baked.corner_uvs.len() && imported.positions == mesh.positions;
    let round_trip_gap = baked
        .corner_uvs
        .iter()
        .zip(&imported_uvs)
        .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
        .fold(0.0, f64::max);

    let params = MetricsParams::default();
    let direct_report = evaluate_mesh(&baked.apply_to(&mesh), &params).unwrap();
    let imported_report = evaluate_mesh(&imported, &params).unwrap();
    let gaps = report_gaps(&direct_report, &imported_report, 1e-6);

    let pass = vertex_gap <= 1e-6 && corner_gap <= 1e-6 && same_shape && round_trip_gap <= 1e-5 && gaps.is_empty();
    let mut detail = format!(
        "vertex uv gap {vertex_gap:.1e}, packed corner gap {corner_gap:.1e} (tol 1e-6), round-trip gap {round_trip_gap:.1e} (tol 1e-5), re-imported metrics {}",
        if gaps.is_empty() { "agree within 1e-6" } else { "differ" }
    );
    if !same_shape {
        detail.push_str("; re-imported mesh differs in shape");
    }
    if !gaps.is_empty() {
        detail.push_str(&format!("; {}", gaps.join(", ")));
    }
    Outcome::new(pass, detail)
}

/// Full default configuration on a user-supplied bunny mesh.
pub fn bunny(path: &str) -> Outcome {
    let raw = match load_mesh(path) {
        Ok(m) => m,
        Err(e) => return Outcome::new(false, format!("cannot load {path}: {e}")),
    };
    let norm = Normalization::fit(raw.positions.iter()).unwrap();
    let mesh = raw.transformed(&norm);
    let config = TrainConfig {
        n_charts: 4,
        ..TrainConfig::default()
    };
    let source = SampleSource::from_mesh(mesh.clone(), false).unwrap();
    let start = Instant::now();
    let (model, _) = fit(&source, &config).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let baked = bake(&model, &mesh, ATLAS_RES).unwrap();
    let r = evaluate(&model, &mesh, &baked, &MetricsParams::default()).unwrap();
    let uv_eff = r.uv_efficiency.unwrap_or(f64::NAN);
    let targets = [
        ("boundary", r.boundary, 0.976),
        ("stretch", r.stretch, 0.976),
        ("conformal", r.conformal, 0.940),
        ("uv_efficiency", uv_eff, 0.846),
    ];
    let pass = targets.iter().all(|(_, v, t)| (v - t).abs() <= 0.05);
    let detail = targets
        .iter()
        .map(|(k, v, t)| format!("{k} {v:.4} (target {t} +- 0.05)"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(pass, format!("{detail}, trained in {seconds:.0}s"))
}
