use rand::seq::IndexedRandom;
use rand::Rng;

use uvfield::autodiff::ParamId;
use uvfield::fields::AtlasModel;
use uvfield::geometry::Vec3;
use uvfield::losses::{Batch, LossGraph, LossTerm, LossWeights, DEFAULT_EPSILON};

use crate::support::{randomize, random_batch, rng, tiny, Outcome};

const TRIALS: usize = 100;
const COORDS_PER_TRIAL: usize = 8;
const STEP: f32 = 1e-4;
const TOLERANCE: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;

/// Value of `term` with the model as given. The cluster term holds its
/// centroids fixed, so its reference is the frozen-centroid objective.
struct Objective {
    term: LossTerm,
    batch: Batch,
    centroid_dist: Option<Vec<Vec<f64>>>,
}

impl Objective {
    fn new(term: LossTerm, batch: Batch, base: &AtlasModel) -> Self {
        let centroid_dist = (term == LossTerm::Cluster).then(|| frozen_distances(base, &batch));
        Self {
            term,
            batch,
            centroid_dist,
        }
    }

    fn value(&self, model: &AtlasModel) -> f64 {
        match &self.centroid_dist {
            Some(dist) => {
                let xs: Vec<Vec3> = self.batch.surface.iter().map(|s| s.x).collect();
                let pmf = model.chart_pmf_batch::<f64>(&xs);
                let total: f64 = pmf
                    .iter()
                    .zip(dist)
                    .map(|(p, d)| p.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                    .sum();
                total / xs.len() as f64
            }
            None => graph_value(model, &self.batch, self.term),
        }
    }
}

fn graph_value(model: &AtlasModel, batch: &Batch, term: LossTerm) -> f64 {
    let lg = LossGraph::<f64>::build(model, batch, &LossWeights::only(term), DEFAULT_EPSILON).unwrap();
    lg.term_value(term).unwrap()
}

/// `||mu_i - x||^2` per sample and chart with PMF-weighted batch centroids.
fn frozen_distances(model: &AtlasModel, batch: &Batch) -> Vec<Vec<f64>> {
    let xs: Vec<Vec3> = batch.surface.iter().map(|s| s.x).collect();
    let pmf = model.chart_pmf_batch::<f64>(&xs);
    let n = model.n_charts();
    let centroids: Vec<Vec3> = (0..n)
        .map(|i| {
            let mass: f64 = pmf.iter().map(|p| p[i]).sum();
            let moment: Vec3 = pmf.iter().zip(&xs).map(|(p, x)| x * p[i]).sum();
            moment / mass
        })
        .collect();
    xs.iter()
        .map(|x| centroids.iter().map(|mu| (mu - x).norm_squared()).collect())
        .collect()
}

pub struct Summary {
    pub checked: usize,
    pub kinks: usize,
    pub failures: Vec<String>,
    pub worst: f64,
    pub fingerprint: Vec<u64>,
}

/// Reverse-mode gradients of every loss term against central differences
/// on random tiny models and 4-point batches.
pub fn check(seed: u64) -> Summary {
    let mut s = Summary {
        checked: 0,
        kinks: 0,
        failures: Vec::new(),
        worst: 0.0,
        fingerprint: Vec::new(),
    };
    for term in LossTerm::ALL {
        for trial in 0..TRIALS {
            let mut r = rng(seed ^ ((term.index() as u64) << 32) ^ trial as u64);
            let mut model = tiny(2, 2, r.random());
            randomize(&mut model, &mut r, 0.3);
            let batch = random_batch(&mut r, 4, 4);
            let objective = Objective::new(term, batch, &model);

            let lg = LossGraph::<f64>::build(&model, &objective.batch, &LossWeights::only(term), DEFAULT_EPSILON).unwrap();
            let base = lg.term_value(term).unwrap();
            let grads = lg.graph.backward(lg.term(term).unwrap()).unwrap();
            drop(lg);
            let reference_base = objective.value(&model);
            if (reference_base - base).abs() > 1e-12 * base.abs().max(1.0) {
                s.failures.push(format!("{term} trial {trial}: value {base} vs reference {reference_base}"));
            }

            let mut touched = Vec::new();
            let mut all = Vec::new();
            for (p, param) in model.store.iter().enumerate() {
                for k in 0..param.len() {
                    all.push((p, k));
                    if grads.params[p].is_some() {
                        touched.push((p, k));
                    }
                }
            }
            let mut coords: Vec<(usize, usize)> = touched.choose_multiple(&mut r, COORDS_PER_TRIAL - 2).copied().collect();
            coords.extend(all.choose_multiple(&mut r, 2).copied());

            for (p, k) in coords {
                let analytic = grads.params[p].as_ref().map_or(0.0, |g| g[k]);
                let Some(numeric) = central_difference(&model, &objective, ParamId(p), k, base) else {
                    s.kinks += 1;
                    continue;
                };
                s.checked += 1;
                s.fingerprint.extend([analytic.to_bits(), numeric.to_bits()]);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                s.worst = s.worst.max(err);
                if err > TOLERANCE {
                    s.failures.push(format!(
                        "{term} trial {trial} param {p}[{k}]: analytic {analytic:e} numeric {numeric:e}"
                    ));
                }
            }
        }
    }
    s
}

/// Central difference using the exact stored perturbations, or `None` when
/// the one-sided slopes disagree (a ReLU, argmin or texel kink inside the step).
fn central_difference(model: &AtlasModel, objective: &Objective, id: ParamId, k: usize, base: f64) -> Option<f64> {
    let p0 = model.store.get(id).values[k];
    let at = |v: f32| {
        let mut m = model.clone();
        m.store.get_mut(id).values[k] = v;
        objective.value(&m)
    };
    let central = |step: f32| {
        let (hi, lo) = (p0 + step, p0 - step);
        let (f_hi, f_lo) = (at(hi), at(lo));
        let fwd = (f_hi - base) / (hi as f64 - p0 as f64);
        let bwd = (base - f_lo) / (p0 as f64 - lo as f64);
        ((f_hi - f_lo) / (hi as f64 - lo as f64), (fwd - bwd).abs())
    };
    let (wide, wide_gap) = central(STEP);
    let (narrow, narrow_gap) = central(STEP / 4.0);
    // smooth functions give matching estimates at both steps and nearly equal
    // one-sided slopes; a kink inside the step breaks one or the other
    let scale = wide.abs().max(narrow.abs()).max(FLOOR);
    if (wide - narrow).abs() > 0.1 * TOLERANCE * scale || wide_gap.max(narrow_gap) > 0.02 * scale {
        return None;
    }
    Some(narrow)
}

pub fn run(seed: u64) -> (Outcome, Vec<u64>) {
    let s = check(seed);
    let total = s.checked + s.kinks;
    // a vacuous run (everything skipped as a kink) must not pass
    let enough = s.checked * 10 >= total * 9;
    let pass = s.failures.is_empty() && enough;
    let mut detail = format!(
        "{} loss terms x {TRIALS} trials, {} coordinates checked, {} skipped at kinks, worst relative error {:.2e} (tol {TOLERANCE:e})",
        LossTerm::ALL.len(),
        s.checked,
        s.kinks,
        s.worst
    );
    if let Some(f) = s.failures.first() {
        detail.push_str(&format!("; {} failures, first: {f}", s.failures.len()));
    }
    (Outcome::new(pass, detail), s.fingerprint)
}
