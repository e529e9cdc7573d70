use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::pack_atlas;
use crate::error::{Error, Result};
use crate::fields::AtlasModel;
use crate::geometry::{Mesh, RayCaster};
use crate::metrics::Camera;

/// Maps a component in `[-1, 1]` to an 8-bit channel.
fn encode(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8
}

/// Packed UV at the centre of pixel `(px, py)`; row 0 is `v = 1`.
pub fn pixel_uv(px: u32, py: u32, width: u32, height: u32) -> [f64; 2] {
    [(px as f64 + 0.5) / width as f64, 1.0 - (py as f64 + 0.5) / height as f64]
}

/// Pixels of one chart cell and their chart-local uvs.
type CellPixels = (Vec<(u32, u32)>, Vec<[f64; 2]>);

/// The normal grids `N_i` resampled into their packed cells, `(x,y,z)`
/// stored as `(v+1)/2` RGB. Pixels outside every cell are black.
pub fn render_normal_atlas(model: &AtlasModel, resolution: usize) -> Result<RgbImage> {
    let layout = pack_atlas(model.n_charts(), resolution)?;
    let res = u32::try_from(resolution).map_err(|_| Error::contract("atlas resolution too large"))?;
    let mut img = RgbImage::new(res, res);
    let mut by_chart: Vec<CellPixels> = vec![Default::default(); layout.cells.len()];
    for py in 0..res {
        for px in 0..res {
            let uv = pixel_uv(px, py, res, res);
            if let Some(i) = layout.chart_at(uv) {
                by_chart[i].0.push((px, py));
                by_chart[i].1.push(layout.cells[i].unpack(uv));
            }
        }
    }
    for (i, (pixels, local)) in by_chart.iter().enumerate() {
        for (&(px, py), n) in pixels.iter().zip(model.normal_batch(i, local)?) {
            img.put_pixel(px, py, Rgb([encode(n.x), encode(n.y), encode(n.z)]));
        }
    }
    Ok(img)
}

pub fn rasterize_normal_atlas(model: &AtlasModel, resolution: usize, path: impl AsRef<Path>) -> Result<()> {
    render_normal_atlas(model, resolution)?.save(path.as_ref())?;
    Ok(())
}

/// Bilinear lookup with edge clamping; channels in `[0, 1]`.
pub fn sample_image(img: &RgbImage, uv: [f64; 2]) -> [f64; 3] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let x = uv[0] * w as f64 - 0.5;
    let y = (1.0 - uv[1]) * h as f64 - 0.5;
    let axis = |c: f64, n: usize| {
        let c = if c.is_finite() { c.clamp(0.0, (n - 1) as f64) } else { 0.0 };
        let i0 = (c.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let (x0, x1, fx) = axis(x, w);
    let (y0, y1, fy) = axis(y, h);
    let at = |x: usize, y: usize, c: usize| img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0;
    [0, 1, 2].map(|c| {
        let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
        let bot = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Ray-cast render of `mesh` (carrying corner UVs) textured with `texture`,
/// shaded by `|face normal . view ray|`. Misses are black.
pub fn render_preview(mesh: &Mesh, texture: &RgbImage, camera: &Camera) -> Result<RgbImage> {
    if texture.width() == 0 || texture.height() == 0 {
        return Err(Error::contract("texture image is empty"));
    }
    let caster = RayCaster::new(mesh);
    let buf = crate::metrics::render_buffers(&caster, camera)?;
    let (w, h) = (camera.width as u32, camera.height as u32);
    let mut img = RgbImage::new(w, h);
    for py in 0..h {
        for px in 0..w {
            let Some(p) = buf.get(px as usize, py as usize) else { continue };
            let shade = mesh
                .face_normal(p.triangle)
                .map_or(0.0, |n| n.dot(&camera.ray(px as usize, py as usize)).abs());
            let colour = sample_image(texture, p.uv).map(|c| (c * shade * 255.0).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(px, py, Rgb(colour));
        }
    }
    Ok(img)
}

/// Writes one render per camera as `PREFIX_000.png`, `PREFIX_001.png`, ...
pub fn texture_preview(mesh: &Mesh, texture: &RgbImage, cameras: &[Camera], prefix: &Path) -> Result<Vec<PathBuf>> {
    let stem = prefix
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::contract("preview prefix has no file name"))?;
    cameras
        .iter()
        .enumerate()
        .map(|(k, cam)| {
            let path = prefix.with_file_name(format!("{stem}_{k:03}.png"));
            render_preview(mesh, texture, cam)?.save(&path)?;
            Ok(path)
        })
        .collect()
}
