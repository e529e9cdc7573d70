use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uvfield::fields::{positional_encoding_with, AtlasModel, Mlp, ModelConfig};
use uvfield::geometry::{icosphere, sample_surface, SurfaceSample, Vec3};
use uvfield::losses::Batch;

/// Outcome of one criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn tiny(n: usize, layers: usize, seed: u64) -> AtlasModel {
    let cfg = ModelConfig {
        n_charts: n,
        texture_res: 4,
        layers,
        width: 8,
        ..ModelConfig::default()
    };
    AtlasModel::new(cfg, seed).unwrap()
}

/// Adds uniform noise in `[-scale, scale)` to every parameter.
pub fn randomize(model: &mut AtlasModel, rng: &mut ChaCha8Rng, scale: f64) {
    for p in model.store.iter_mut() {
        for v in &mut p.values {
            *v += rng.random_range(-scale..scale) as f32;
        }
    }
}

/// Makes `mlp` ignore its input and emit `bias` before its head.
pub fn constant_output(model: &mut AtlasModel, mlp: &Mlp, bias: &[f32]) {
    let &(w, b) = mlp.layers.last().unwrap();
    model.store.get_mut(w).values.fill(0.0);
    model.store.get_mut(b).values.copy_from_slice(bias);
}

/// Turns a single-layer `mlp` into `head(sum coef * x_raw[k])`, with each
/// entry `(k, out, coef)` reading raw input component `k` into output `out`.
pub fn raw_linear(model: &mut AtlasModel, mlp: &Mlp, entries: &[(usize, usize, f32)]) {
    assert_eq!(mlp.layers.len(), 1, "raw_linear needs a single affine layer");
    let (w, b) = mlp.layers[0];
    let out_dim = mlp.out_dim;
    let rows = raw_rows(mlp.in_dim, mlp.pe_degree, model.config.include_input);
    let wp = model.store.get_mut(w);
    wp.values.fill(0.0);
    for &(k, out, coef) in entries {
        wp.values[rows[k] * out_dim + out] = coef;
    }
    model.store.get_mut(b).values.fill(0.0);
}

/// Encoding row that carries each raw input component, found by probing the encoder.
fn raw_rows(in_dim: usize, degree: usize, include_input: bool) -> Vec<usize> {
    let zero = positional_encoding_with(&vec![0.0; in_dim], degree, include_input);
    (0..in_dim)
        .map(|k| {
            let mut x = vec![0.0; in_dim];
            x[k] = 0.3125;
            let enc = positional_encoding_with(&x, degree, include_input);
            let hits: Vec<usize> = (0..enc.len()).filter(|&r| enc[r] == 0.3125 && zero[r] == 0.0).collect();
            assert_eq!(hits.len(), 1, "raw input component {k} not found in the encoding");
            hits[0]
        })
        .collect()
}

pub fn sample_at(x: Vec3) -> SurfaceSample {
    SurfaceSample {
        x,
        normal: Vec3::z(),
        tangent_p: Vec3::x(),
        tangent_q: Vec3::y(),
        triangle: None,
    }
}

/// `b` surface samples on a shrunken sphere with random tangent frames and
/// `m` uniform texture-space points.
pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, m: usize) -> Batch {
    let mut surface = sample_surface(&icosphere(1), b, rng).unwrap();
    for s in &mut surface {
        s.x *= 0.8;
    }
    let uv = (0..m).map(|_| [rng.random(), rng.random()]).collect();
    Batch { surface, uv }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
