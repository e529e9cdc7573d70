use uvfield::fields::AtlasModel;
use uvfield::geometry::Vec3;
use uvfield::losses::{
    differential_probe, loss_cluster, loss_conformal, loss_cycle_2d, loss_cycle_3d, loss_entropy, loss_stretch,
    loss_surface, loss_texture, Batch, DEFAULT_EPSILON,
};

use crate::support::{constant_output, raw_linear, sample_at, tiny, Outcome};

const LIMIT: f64 = 1e-10;

/// Two charts whose PMF is one-hot on the sign of x: chart 0 at +x, chart 1 at -x.
fn sign_split_model() -> AtlasModel {
    let mut m = tiny(2, 1, 11);
    let c = m.c.clone();
    raw_linear(&mut m, &c, &[(0, 0, 100.0), (0, 1, -100.0)]);
    m
}

fn all_constant_surface(m: &mut AtlasModel, x: Vec3) {
    for s in m.s.clone() {
        constant_output(m, &s, &[x.x as f32, x.y as f32, x.z as f32]);
    }
}

/// Each loss on the input constructed to make it vanish.
pub fn cases() -> Vec<(&'static str, f64)> {
    let x0 = Vec3::new(0.25, -0.5, 0.125);
    let a = Vec3::new(1.0, 0.0, 0.0);
    let b = -a;
    let mut out = Vec::new();

    // s_i constant at the only surface point: s(t(x)) = x
    let mut m = tiny(2, 2, 1);
    all_constant_surface(&mut m, x0);
    let batch = Batch {
        surface: vec![sample_at(x0); 4],
        uv: vec![[0.3, 0.7]; 4],
    };
    out.push(("cycle_3d identity cycle", loss_cycle_3d(&m, &batch).unwrap()));
    // every point of the surface set coincides with every s_i(u)
    out.push(("surface coincident sets", loss_surface(&m, &batch).unwrap()));

    // t_i constant at the only texture point: t(s(u)) = u
    let mut m = tiny(2, 2, 2);
    for t in m.t.clone() {
        constant_output(&mut m, &t, &[0.0, 0.0]);
    }
    let batch = Batch {
        surface: vec![sample_at(x0)],
        uv: vec![[0.5, 0.5]; 4],
    };
    out.push(("cycle_2d identity cycle", loss_cycle_2d(&m, &batch).unwrap()));

    // s_0 lands at +x and s_1 at -x, where the PMF is one-hot on the right chart
    let mut m = sign_split_model();
    let (s0, s1) = (m.s[0].clone(), m.s[1].clone());
    constant_output(&mut m, &s0, &[1.0, 0.0, 0.0]);
    constant_output(&mut m, &s1, &[-1.0, 0.0, 0.0]);
    let batch = Batch {
        surface: vec![sample_at(a)],
        uv: vec![[0.1, 0.9], [0.6, 0.2]],
    };
    out.push(("entropy one-hot PMFs", loss_entropy(&m, &batch).unwrap()));

    // two hard clusters, each collapsed onto its own centroid
    let m = sign_split_model();
    let batch = Batch {
        surface: vec![sample_at(a), sample_at(a), sample_at(b), sample_at(b)],
        uv: vec![],
    };
    out.push(("cluster equal centroids", loss_cluster(&m, &batch).unwrap()));

    // t(x) = sigmoid(x, y) probed along x and y at the origin
    let mut m = tiny(1, 1, 3);
    let t = m.t[0].clone();
    raw_linear(&mut m, &t, &[(0, 0, 1.0), (1, 1, 1.0)]);
    let batch = Batch {
        surface: vec![sample_at(Vec3::zeros())],
        uv: vec![[0.5, 0.5]],
    };
    out.push(("conformal orthogonal probes", loss_conformal(&m, &batch).unwrap()));

    let probe = differential_probe(&m, 0, &batch.surface[0], DEFAULT_EPSILON).unwrap();
    let area = (probe.du_p[0] * probe.du_q[1] - probe.du_p[1] * probe.du_q[0]).abs();
    m.store.get_mut(m.sigma).values[0] = area as f32;
    out.push(("stretch area equals sigma", loss_stretch(&m, &batch).unwrap()));

    // untrained normal grids hold +z everywhere
    let m = tiny(2, 2, 4);
    let batch = Batch {
        surface: vec![sample_at(x0), sample_at(a), sample_at(Vec3::new(0.0, 0.6, -0.8))],
        uv: vec![[0.5, 0.5]],
    };
    out.push(("texture matching normals", loss_texture(&m, &batch).unwrap()));
    out
}

pub fn run() -> (Outcome, Vec<u64>) {
    let cases = cases();
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, v)| !(v.abs() <= LIMIT))
        .map(|(name, v)| format!("{name} = {v:e}"))
        .collect();
    let worst = cases.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let mut detail = format!("{} fixed points, largest value {worst:e} (limit {LIMIT:e})", cases.len());
    if !bad.is_empty() {
        detail.push_str(&format!("; nonzero: {}", bad.join(", ")));
    }
    let fingerprint = cases.iter().map(|(_, v)| v.to_bits()).collect();
    (Outcome::new(bad.is_empty(), detail), fingerprint)
}
