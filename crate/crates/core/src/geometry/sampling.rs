use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::mesh::DEGENERATE_AREA;
use super::{Mesh, Normalization, RayCaster, Vec3};
use crate::error::{Error, Result};

/// A surface point with its normal and an orthonormal tangent pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub x: Vec3,
    pub normal: Vec3,
    pub tangent_p: Vec3,
    pub tangent_q: Vec3,
    /// Source triangle, when drawn from a mesh.
    pub triangle: Option<usize>,
}

impl SurfaceSample {
    /// Position mapped by `transform`; directions are unchanged by a uniform
    /// scale and translation.
    pub fn transformed(&self, transform: &Normalization) -> Self {
        Self {
            x: transform.apply(&self.x),
            ..*self
        }
    }
}

/// Random tangent pair `(p, q)` with `q = normal x p`.
///
/// The in-plane rotation is uniform in `[0, 2pi)`.
pub fn tangent_frame<R: Rng + ?Sized>(normal: &Vec3, rng: &mut R) -> Result<(Vec3, Vec3)> {
    let n = normal
        .try_normalize(1e-12)
        .ok_or_else(|| Error::contract("tangent_frame needs a non-zero normal"))?;
    let helper = Vec3::ith(n.iamin(), 1.0);
    let p0 = (helper - n * helper.dot(&n)).normalize();
    let q0 = n.cross(&p0);
    let theta = rng.random::<f64>() * TAU;
    let p = (p0 * theta.cos() + q0 * theta.sin()).normalize();
    let q = n.cross(&p).normalize();
    Ok((p, q))
}

/// Area-proportional triangle picker built from a cumulative area table.
#[derive(Clone, Debug)]
pub struct AreaSampler {
    cumulative: Vec<f64>,
    triangles: Vec<usize>,
    /// Use face normals instead of interpolated vertex normals.
    pub flat_normals: bool,
}

impl AreaSampler {
    /// Degenerate triangles (area <= 1e-12) are left out of the table.
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut triangles = Vec::new();
        let mut total = 0.0;
        for t in 0..mesh.triangle_count() {
            let a = mesh.triangle_area(t);
            if a > DEGENERATE_AREA {
                total += a;
                cumulative.push(total);
                triangles.push(t);
            }
        }
        if !(total > 0.0) {
            return Err(Error::contract("mesh has zero total area"));
        }
        Ok(Self {
            cumulative,
            triangles,
            flat_normals: false,
        })
    }

    pub fn total_area(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Inverse-transform pick for `r` uniform in `[0, 1)`.
    pub fn pick(&self, r: f64) -> usize {
        let target = r * self.total_area();
        let k = self.cumulative.partition_point(|&c| c <= target);
        self.triangles[k.min(self.triangles.len() - 1)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, mesh: &Mesh, rng: &mut R) -> SurfaceSample {
        let t = self.pick(rng.random());
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let b = [1.0 - s, s * (1.0 - r2), s * r2];
        let [i, j, k] = mesh.triangles[t];
        let [a, bb, c] = mesh.corners(t);
        let x = a * b[0] + bb * b[1] + c * b[2];
        let face = mesh.face_normal(t).expect("table excludes degenerate triangles");
        let normal = if self.flat_normals {
            face
        } else {
            let vn = &mesh.vertex_normals;
            (vn[i] * b[0] + vn[j] * b[1] + vn[k] * b[2]).try_normalize(1e-12).unwrap_or(face)
        };
        let (tangent_p, tangent_q) = tangent_frame(&normal, rng).expect("normal is unit");
        SurfaceSample {
            x,
            normal,
            tangent_p,
            tangent_q,
            triangle: Some(t),
        }
    }
}

/// `count` area-uniform samples with smooth normals.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, count: usize, rng: &mut R) -> Result<Vec<SurfaceSample>> {
    let sampler = AreaSampler::new(mesh)?;
    Ok((0..count).map(|_| sampler.sample(mesh, rng)).collect())
}

/// Where training samples come from.
#[derive(Clone, Debug)]
pub enum SampleSource {
    /// Fresh area-uniform samples on every draw.
    Mesh { mesh: Mesh, sampler: AreaSampler },
    /// With-replacement draws from a fixed pool; each draw gets a fresh
    /// tangent rotation.
    Points(Vec<SurfaceSample>),
}

impl SampleSource {
    pub fn from_mesh(mesh: Mesh, flat_normals: bool) -> Result<Self> {
        let mut sampler = AreaSampler::new(&mesh)?;
        sampler.flat_normals = flat_normals;
        Ok(Self::Mesh { mesh, sampler })
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Points(p) if p.is_empty())
    }

    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<SurfaceSample>> {
        match self {
            Self::Mesh { mesh, sampler } => Ok((0..count).map(|_| sampler.sample(mesh, rng)).collect()),
            Self::Points(pool) => {
                if pool.is_empty() {
                    return Err(Error::contract("sample source is empty"));
                }
                (0..count)
                    .map(|_| {
                        let mut s = pool[rng.random_range(0..pool.len())];
                        (s.tangent_p, s.tangent_q) = tangent_frame(&s.normal, rng)?;
                        Ok(s)
                    })
                    .collect()
            }
        }
    }
}

/// Keeps the samples that are the first hit of a ray from at least one of
/// `views` viewpoints spread over a sphere of 2.5x the bounding radius.
pub fn visibility_filter(mesh: &Mesh, samples: &[SurfaceSample], views: usize) -> Vec<SurfaceSample> {
    let Some((centre, radius)) = mesh.bounding_sphere() else {
        return Vec::new();
    };
    let caster = RayCaster::new(mesh);
    let eyes: Vec<Vec3> = fibonacci_sphere(views.max(1))
        .into_iter()
        .map(|d| centre + d * (2.5 * radius))
        .collect();
    let tol = 1e-6 * radius.max(1e-12);
    samples
        .iter()
        .filter(|s| {
            eyes.iter().any(|eye| {
                let to_point = s.x - eye;
                let dist = to_point.norm();
                match caster.intersect(eye, &(to_point / dist)) {
                    Some(hit) => hit.distance >= dist - tol,
                    None => true,
                }
            })
        })
        .copied()
        .collect()
}

/// Evenly spread unit vectors (golden-angle spiral).
pub(crate) fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Samples parsed from an ASCII point cloud.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub samples: Vec<SurfaceSample>,
    /// Records dropped because their normal was zero.
    pub rejected: usize,
}

/// Reads `x y z nx ny nz` records, one per line. Blank lines and `#`
/// comments are skipped.
pub fn load_point_cloud<R: Rng + ?Sized>(path: impl AsRef<Path>, rng: &mut R) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cloud = PointCloud::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("invalid number `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 6 {
            return Err(err(format!("expected 6 numbers, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let x = Vec3::new(vals[0], vals[1], vals[2]);
        let Some(normal) = Vec3::new(vals[3], vals[4], vals[5]).try_normalize(1e-12) else {
            cloud.rejected += 1;
            continue;
        };
        let (tangent_p, tangent_q) = tangent_frame(&normal, rng)?;
        cloud.samples.push(SurfaceSample {
            x,
            normal,
            tangent_p,
            tangent_q,
            triangle: None,
        });
    }
    Ok(cloud)
}

/// Writes samples in the format read by [`load_point_cloud`], using the
/// shortest representation that parses back to the same value.
pub fn write_point_cloud(path: impl AsRef<Path>, samples: &[SurfaceSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        let (x, n) = (s.x, s.normal);
        let _ = writeln!(out, "{} {} {} {} {} {}", x.x, x.y, x.z, n.x, n.y, n.z);
    }
    fs::write(path, out)?;
    Ok(())
}
