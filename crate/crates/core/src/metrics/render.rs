use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, RayCaster, Vec3};

/// Pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

/// Camera placement used for evaluation views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CameraRig {
    /// Multiple of the bounding-sphere radius.
    pub distance: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            distance: 2.5,
            fov_deg: 45.0,
            width: 256,
            height: 256,
        }
    }
}

impl Camera {
    pub fn new(position: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let forward = target - position;
        if !(forward.norm() > 0.0) {
            return Err(Error::contract("camera position coincides with its target"));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::contract(format!("field of view {fov_y} outside (0, pi)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::contract("image size must be positive"));
        }
        if forward.cross(&up).norm() <= 1e-12 * forward.norm() * up.norm() {
            return Err(Error::contract("camera up vector is parallel to the view direction"));
        }
        Ok(Self {
            position,
            target,
            up,
            fov_y,
            width,
            height,
        })
    }

    /// Orthonormal `(right, up, forward)`.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.target - self.position).normalize();
        let r = f.cross(&self.up).normalize();
        (r, r.cross(&f), f)
    }

    /// Unit direction through the centre of pixel `(px, py)`; row 0 is the top.
    pub fn ray(&self, px: usize, py: usize) -> Vec3 {
        let (r, u, f) = self.basis();
        let half = (self.fov_y / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * half * aspect;
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * half;
        (f + r * x + u * y).normalize()
    }
}

/// `count` cameras uniformly placed on a sphere around the mesh, looking at
/// its vertex centroid.
pub fn sample_cameras(mesh: &Mesh, count: usize, seed: u64, rig: &CameraRig) -> Result<Vec<Camera>> {
    if count == 0 {
        return Err(Error::contract("need at least one camera"));
    }
    let (centre, radius) = mesh
        .bounding_sphere()
        .filter(|(c, r)| *r > 0.0 && r.is_finite() && c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::contract("mesh has degenerate bounds"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let dir = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            let up = if z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
            Camera::new(
                centre + dir * (rig.distance * radius),
                centre,
                up,
                rig.fov_deg.to_radians(),
                rig.width,
                rig.height,
            )
        })
        .collect()
}

/// What the primary ray of one pixel hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSample {
    pub triangle: usize,
    /// Barycentric interpolation of the packed corner UVs.
    pub uv: [f64; 2],
    /// Distance along the ray.
    pub depth: f64,
}

/// Row-major per-pixel hits.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Option<PixelSample>>,
}

impl PixelBuffer {
    pub fn get(&self, x: usize, y: usize) -> Option<&PixelSample> {
        self.pixels[y * self.width + x].as_ref()
    }

    pub fn hit_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }
}

/// Casts one ray per pixel through its centre. The caster's mesh must carry
/// corner UVs.
pub fn render_buffers(caster: &RayCaster<'_>, camera: &Camera) -> Result<PixelBuffer> {
    let mesh = caster.mesh();
    let uvs = mesh
        .corner_uvs
        .as_ref()
        .filter(|u| u.len() == 3 * mesh.triangle_count())
        .ok_or_else(|| Error::contract("mesh has no per-corner UVs"))?;
    let mut pixels = Vec::with_capacity(camera.width * camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let dir = camera.ray(px, py);
            pixels.push(caster.intersect(&camera.position, &dir).map(|hit| {
                let t = hit.triangle;
                let b = hit.barycentrics;
                let uv = (0..3).fold([0.0, 0.0], |acc, k| {
                    let c = uvs[3 * t + k];
                    [acc[0] + b[k] * c[0], acc[1] + b[k] * c[1]]
                });
                PixelSample {
                    triangle: t,
                    uv,
                    depth: hit.distance,
                }
            }));
        }
    }
    Ok(PixelBuffer {
        width: camera.width,
        height: camera.height,
        pixels,
    })
}
