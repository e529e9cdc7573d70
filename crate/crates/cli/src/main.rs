//! `uvfield`: fit, bake, evaluate and preview multi-chart UV atlases.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvfield::atlas::{bake, export_obj, rasterize_normal_atlas, texture_preview};
use uvfield::fields::{checkpoint, restore, AtlasModel};
use uvfield::geometry::{
    load_mesh, load_point_cloud, sample_surface, visibility_filter, Mesh, Normalization, SampleSource,
};
use uvfield::metrics::{evaluate_mesh, metric_uv_efficiency, sample_cameras, CameraRig, MetricsParams};
use uvfield::trainer::{TrainConfig, Trainer};
use uvfield::Error;

/// Samples kept from the mesh before visibility filtering.
const VISIBILITY_POOL: usize = 1 << 16;
const VISIBILITY_VIEWS: usize = 64;

#[derive(Parser)]
#[command(name = "uvfield", version, about = "Multi-chart UV atlases from neural surface fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a chart atlas for a mesh or an oriented point cloud.
    Fit(FitArgs),
    /// Bake a model onto a mesh and export OBJ + MTL + normal atlas.
    Bake(BakeArgs),
    /// Score an atlas and write a JSON report.
    Eval(EvalArgs),
    /// Render a texture wrapped through a baked atlas.
    Preview(PreviewArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["mesh", "points"])))]
struct FitArgs {
    /// Triangle mesh (OBJ).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Point cloud with `x y z nx ny nz` per line.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    charts: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` settings, applied before the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train only on mesh samples visible from a sphere of viewpoints.
    #[arg(long)]
    visibility_filter: bool,
    /// Training log (CSV); defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct BakeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    atlas: PathBuf,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    atlas_res: u64,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(true).args(["baked", "model"])))]
struct EvalArgs {
    /// Baked OBJ carrying `vt` records.
    #[arg(long)]
    baked: Option<PathBuf>,
    /// Model for texel coverage, or for baking in memory without `--baked`.
    #[arg(long, requires = "mesh")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    views: u64,
    /// Render resolution per view.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    res: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    /// Atlas resolution used when baking in memory.
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    atlas_res: u64,
}

#[derive(Args)]
struct PreviewArgs {
    #[arg(long)]
    baked: PathBuf,
    #[arg(long)]
    texture: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    views: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    res: u64,
    /// Output prefix; views are written as `PREFIX_000.png`, ...
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn format(message: impl Into<String>) -> Self {
        Self {
            code: 5,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteLoss { .. } | Error::NumericFault { .. } => 3,
            Error::Incompatible(_) => 4,
            Error::Parse { .. } | Error::Checkpoint(_) | Error::Image(_) => 5,
            Error::Contract(_) | Error::Io(_) => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} `{}` does not exist", path.display())))
    }
}

/// Loads a mesh and its bounding-box normalization.
fn load_normalized(path: &Path) -> CliResult<(Mesh, Normalization)> {
    require_file(path, "mesh")?;
    let mesh = load_mesh(path)?;
    mesh.validate()
        .map_err(|m| Failure::format(format!("{}: {m}", path.display())))?;
    let norm = Normalization::fit(mesh.positions.iter())
        .ok_or_else(|| Failure::format(format!("{}: degenerate bounds", path.display())))?;
    Ok((mesh, norm))
}

fn load_model(path: &Path) -> CliResult<AtlasModel> {
    require_file(path, "model")?;
    Ok(restore(path)?)
}

fn load_baked(path: &Path) -> CliResult<Mesh> {
    require_file(path, "baked OBJ")?;
    let mesh = load_mesh(path)?;
    if mesh.corner_uvs.is_none() {
        return Err(Failure::format(format!("{} has no texture coordinates", path.display())));
    }
    Ok(mesh)
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        require_file(path, "config")?;
        let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(n) = args.charts {
        config.n_charts = n as usize;
    }
    if let Some(k) = args.iters {
        config.iterations = k;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (source, norm) = match (&args.mesh, &args.points) {
        (Some(path), None) => {
            let (mesh, norm) = load_normalized(path)?;
            let mesh = mesh.transformed(&norm);
            let source = if args.visibility_filter {
                let pool = sample_surface(&mesh, VISIBILITY_POOL, &mut rng)?;
                let visible = visibility_filter(&mesh, &pool, VISIBILITY_VIEWS);
                if visible.is_empty() {
                    return Err(Failure::usage("no visible samples survive the visibility filter"));
                }
                SampleSource::Points(visible)
            } else {
                SampleSource::from_mesh(mesh, config.flat_normals)?
            };
            (source, norm)
        }
        (None, Some(path)) => {
            if args.visibility_filter {
                return Err(Failure::usage("--visibility-filter needs --mesh"));
            }
            require_file(path, "point cloud")?;
            let cloud = load_point_cloud(path, &mut rng)?;
            let norm = Normalization::fit(cloud.samples.iter().map(|s| &s.x))
                .ok_or_else(|| Failure::format(format!("{}: degenerate bounds", path.display())))?;
            let samples = cloud.samples.iter().map(|s| s.transformed(&norm)).collect();
            (SampleSource::Points(samples), norm)
        }
        _ => return Err(Failure::usage("give exactly one of --mesh and --points")),
    };

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    let mut trainer = Trainer::new(&source, config.clone())?;
    trainer.model.normalization = norm;
    let outcome = (|| -> uvfield::Result<()> {
        while !trainer.done() {
            trainer.step()?;
            let it = trainer.iteration();
            if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && !trainer.done() {
                checkpoint(&trainer.model, &args.out)?;
            }
        }
        Ok(())
    })();
    // the log is useful even when training aborts
    fs::write(&log_path, trainer.log.to_csv(true)).map_err(|e| Failure::usage(format!("{}: {e}", log_path.display())))?;
    outcome?;
    checkpoint(&trainer.model, &args.out)?;
    let last = trainer.log.records.last().map_or(f64::NAN, |r| r.total);
    println!(
        "fit: {} iterations, {} charts, final loss {last:.6}, model {}, log {}",
        config.iterations,
        config.n_charts,
        args.out.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_bake(args: BakeArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let (mesh, _) = load_normalized(&args.mesh)?;
    let norm = model.check_scene(mesh.positions.iter())?;
    let baked = bake(&model, &mesh.transformed(&norm), args.atlas_res as usize)?;
    let texture = args
        .atlas
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::usage("atlas path has no file name"))?;
    // reference the atlas relative to the OBJ when they share a directory
    let reference = if args.atlas.parent() == args.out.parent() {
        texture.to_owned()
    } else {
        args.atlas.display().to_string()
    };
    export_obj(&mesh, &baked, &args.out, &reference)?;
    rasterize_normal_atlas(&model, args.atlas_res as usize, &args.atlas)?;
    println!(
        "bake: {} seam edges, chart vertex counts {:?}, wrote {} and {}",
        baked.seam_edges.len(),
        baked.chart_vertex_counts(),
        args.out.display(),
        args.atlas.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let params = MetricsParams {
        views: args.views as usize,
        seed: args.seed,
        camera: CameraRig {
            width: args.res as usize,
            height: args.res as usize,
            ..CameraRig::default()
        },
        ..MetricsParams::default()
    };
    let fitted = match (&args.model, &args.mesh) {
        (Some(model), Some(mesh)) => {
            let model = load_model(model)?;
            let (mesh, _) = load_normalized(mesh)?;
            let norm = model.check_scene(mesh.positions.iter())?;
            Some((model, mesh.transformed(&norm)))
        }
        _ => None,
    };
    let textured = match (&args.baked, &fitted) {
        (Some(path), _) => {
            let mesh = load_baked(path)?;
            let norm = Normalization::fit(mesh.positions.iter())
                .ok_or_else(|| Failure::format(format!("{}: degenerate bounds", path.display())))?;
            mesh.transformed(&norm)
        }
        (None, Some((model, mesh))) => bake(model, mesh, args.atlas_res as usize)?.apply_to(mesh),
        (None, None) => return Err(Failure::usage("give --baked or --model with --mesh")),
    };
    let mut report = evaluate_mesh(&textured, &params)?;
    if let Some((model, mesh)) = &fitted {
        let source = SampleSource::from_mesh(mesh.clone(), false)?;
        report.uv_efficiency = Some(metric_uv_efficiency(
            model,
            &source,
            params.texel_res,
            params.sample_count,
            params.seed,
        )?);
    }
    fs::write(&args.report, report.to_json() + "\n")
        .map_err(|e| Failure::usage(format!("{}: {e}", args.report.display())))?;
    let uv = report.uv_efficiency.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    println!(
        "eval: boundary {:.4} stretch {:.4} conformal {:.4} editability {:.4} uv_efficiency {uv} ({} views)",
        report.boundary,
        report.stretch,
        report.conformal,
        report.editability,
        report.views.len()
    );
    Ok(())
}

fn cmd_preview(args: PreviewArgs) -> CliResult<()> {
    let mesh = load_baked(&args.baked)?;
    require_file(&args.texture, "texture")?;
    let texture = image::open(&args.texture)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.texture.display())))?
        .to_rgb8();
    let rig = CameraRig {
        width: args.res as usize,
        height: args.res as usize,
        ..CameraRig::default()
    };
    let cameras = sample_cameras(&mesh, args.views as usize, args.seed, &rig)?;
    let written = texture_preview(&mesh, &texture, &cameras, &args.out)?;
    println!("preview: wrote {} images", written.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bake(a) => cmd_bake(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Preview(a) => cmd_preview(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
