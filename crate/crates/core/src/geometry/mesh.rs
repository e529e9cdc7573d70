use nalgebra::Vector3;

use super::Vec3;

/// Triangles with area at or below this are skipped by the area sampler.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh.
///
/// `corner_uvs` and `corner_charts`, when present, hold one entry per
/// triangle corner (`3 * triangles.len()` entries), as read from `vt`
/// records or produced by baking.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
    pub corner_uvs: Option<Vec<[f64; 2]>>,
    pub corner_charts: Option<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh and derives area-weighted vertex normals.
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let mut mesh = Self {
            positions,
            triangles,
            vertex_normals: Vec::new(),
            corner_uvs: None,
            corner_charts: None,
        };
        mesh.vertex_normals = mesh.area_weighted_normals();
        mesh
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.positions[a], self.positions[b], self.positions[c]]
    }

    /// Unnormalised normal; its length is twice the triangle area.
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(t).norm()
    }

    pub fn face_normal(&self, t: usize) -> Option<Vec3> {
        self.face_cross(t).try_normalize(0.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Sums each face's cross product (area-weighted normal) into its vertices.
    pub fn area_weighted_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for t in 0..self.triangles.len() {
            let n = self.face_cross(t);
            for &v in &self.triangles[t] {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vector3::z))
            .collect()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(self.positions.iter())
    }

    /// Vertex centroid and the largest distance from it to any vertex.
    pub fn bounding_sphere(&self) -> Option<(Vec3, f64)> {
        if self.positions.is_empty() {
            return None;
        }
        let centroid = self.positions.iter().sum::<Vec3>() / self.positions.len() as f64;
        let radius = self
            .positions
            .iter()
            .map(|p| (p - centroid).norm())
            .fold(0.0, f64::max);
        Some((centroid, radius))
    }

    /// Applies `transform` to positions; normals are unaffected by a
    /// uniform scale and translation.
    pub fn transformed(&self, transform: &Normalization) -> Mesh {
        Mesh {
            positions: self.positions.iter().map(|p| transform.apply(p)).collect(),
            ..self.clone()
        }
    }

    /// Checks index ranges and normal lengths.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.positions.len();
        if let Some(t) = self.triangles.iter().position(|tri| tri.iter().any(|&i| i >= n)) {
            return Err(format!("triangle {t} references a vertex out of range"));
        }
        if self.vertex_normals.len() != n {
            return Err("vertex normal count does not match vertex count".into());
        }
        if let Some(v) = self
            .vertex_normals
            .iter()
            .position(|nrm| (nrm.norm() - 1.0).abs() > 1e-4)
        {
            return Err(format!("vertex normal {v} is not unit length"));
        }
        if let Some(uvs) = &self.corner_uvs {
            if uvs.len() != 3 * self.triangles.len() {
                return Err("corner uv count does not match triangle count".into());
            }
        }
        if let Some(charts) = &self.corner_charts {
            if charts.len() != 3 * self.triangles.len() {
                return Err("corner chart count does not match triangle count".into());
            }
        }
        Ok(())
    }
}

pub(crate) fn bounds_of<'a>(points: impl Iterator<Item = &'a Vec3>) -> Option<(Vec3, Vec3)> {
    points.fold(None, |acc, p| match acc {
        None => Some((*p, *p)),
        Some((lo, hi)) => Some((lo.inf(p), hi.sup(p))),
    })
}

/// Uniform scale plus translation taking a scene into `[-1, 1]^3`.
///
/// `apply(p) = (p - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self::identity()
    }
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }

    /// Centres the bounding box and scales its largest half-extent to 1.
    pub fn fit<'a>(points: impl Iterator<Item = &'a Vec3>) -> Option<Self> {
        let (lo, hi) = bounds_of(points)?;
        let half = (hi - lo).max() * 0.5;
        if !(half > 0.0) || !half.is_finite() {
            return None;
        }
        Some(Self {
            center: (lo + hi) * 0.5,
            scale: 1.0 / half,
        })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center
    }

    /// Relative agreement of two transforms, used to match checkpoints to meshes.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        let scale_ok = (self.scale - other.scale).abs() <= tol * self.scale.abs().max(other.scale.abs());
        let extent = 1.0 / self.scale.abs().max(f64::MIN_POSITIVE);
        scale_ok && (self.center - other.center).norm() <= tol * extent
    }
}
