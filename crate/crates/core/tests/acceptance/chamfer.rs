use rand::Rng;

use uvfield::fields::AtlasModel;
use uvfield::geometry::Vec3;
use uvfield::losses::{loss_surface, Batch};

use crate::support::{randomize, random_batch, rng, tiny, Outcome};

const BATCHES: usize = 50;
const MAX_POINTS: usize = 64;
const TOLERANCE: f64 = 1e-6;

/// Symmetric Chamfer distance between the surface samples and every
/// `s_i(u)`, by exhaustive search.
fn brute_force(model: &AtlasModel, batch: &Batch) -> f64 {
    let xs: Vec<Vec3> = batch.surface.iter().map(|s| s.x).collect();
    let ys: Vec<Vec3> = (0..model.n_charts())
        .flat_map(|i| model.surface_batch::<f64>(i, &batch.uv).unwrap())
        .collect();
    let nearest = |from: &[Vec3], to: &[Vec3]| {
        from.iter()
            .map(|a| to.iter().map(|b| (a - b).norm_squared()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    nearest(&xs, &ys) + nearest(&ys, &xs)
}

pub fn run(seed: u64) -> (Outcome, Vec<u64>) {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut fingerprint = Vec::new();
    for _ in 0..BATCHES {
        let n = r.random_range(1..=3);
        let mut model = tiny(n, 2, r.random());
        randomize(&mut model, &mut r, 0.3);
        let b = r.random_range(1..=MAX_POINTS);
        let m = r.random_range(1..=MAX_POINTS / n);
        let batch = random_batch(&mut r, b, m);
        let got = loss_surface(&model, &batch).unwrap();
        let want = brute_force(&model, &batch);
        worst = worst.max((got - want).abs());
        fingerprint.push(got.to_bits());
    }
    let detail = format!("{BATCHES} batches of <= {MAX_POINTS} points, largest deviation {worst:e} (tol {TOLERANCE:e})");
    (Outcome::new(worst <= TOLERANCE, detail), fingerprint)
}
