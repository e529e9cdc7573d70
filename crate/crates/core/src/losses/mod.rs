//! Training objectives over a batch of surface samples and texture-space points.
//!
//! All terms of one step are built into a single graph so each MLP runs
//! once per input set: `s_i` on the uv points, `t_i` on the surface points,
//! their tangent probes and `s_i(uv)` together, `s_i` again on `t_i(x)`,
//! and `c` on the surface points plus every `s_i(uv)`.

use std::fmt;

use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::error::{Error, Result};
use crate::fields::AtlasModel;
use crate::geometry::{SurfaceSample, Vec3};

/// Floor applied to PMF entries inside logarithms.
pub const PMF_FLOOR: f64 = 1e-12;
/// Charts whose batch mass is below this get no cluster contribution.
pub const CLUSTER_MASS_FLOOR: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Surface samples and uniform texture-space points for one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub surface: Vec<SurfaceSample>,
    pub uv: Vec<[f64; 2]>,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        if self.uv.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::contract("uv batch entries must lie in [0,1]^2"));
        }
        Ok(())
    }
}

/// One loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossTerm {
    Cycle3d,
    Cycle2d,
    Entropy,
    Surface,
    Cluster,
    Conformal,
    Stretch,
    Texture,
}

impl LossTerm {
    pub const ALL: [LossTerm; 8] = [
        LossTerm::Cycle3d,
        LossTerm::Cycle2d,
        LossTerm::Entropy,
        LossTerm::Surface,
        LossTerm::Cluster,
        LossTerm::Conformal,
        LossTerm::Stretch,
        LossTerm::Texture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Cycle3d => "cycle_3d",
            LossTerm::Cycle2d => "cycle_2d",
            LossTerm::Entropy => "entropy",
            LossTerm::Surface => "surface",
            LossTerm::Cluster => "cluster",
            LossTerm::Conformal => "conformal",
            LossTerm::Stretch => "stretch",
            LossTerm::Texture => "texture",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-negative weight per loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_323: f64,
    pub w_232: f64,
    pub w_entropy: f64,
    pub w_surface: f64,
    pub w_cluster: f64,
    pub w_conformal: f64,
    pub w_stretch: f64,
    pub w_texture: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_323: 1.0,
            w_232: 1.0,
            w_entropy: 0.04,
            w_surface: 10.0,
            w_cluster: 0.5,
            w_conformal: 0.4,
            w_stretch: 0.1,
            w_texture: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self::from_array([0.0; 8])
    }

    /// Weight 1 on `term`, 0 elsewhere.
    pub fn only(term: LossTerm) -> Self {
        let mut w = [0.0; 8];
        w[term.index()] = 1.0;
        Self::from_array(w)
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.w_323,
            self.w_232,
            self.w_entropy,
            self.w_surface,
            self.w_cluster,
            self.w_conformal,
            self.w_stretch,
            self.w_texture,
        ]
    }

    pub fn from_array(w: [f64; 8]) -> Self {
        Self {
            w_323: w[0],
            w_232: w[1],
            w_entropy: w[2],
            w_surface: w[3],
            w_cluster: w[4],
            w_conformal: w[5],
            w_stretch: w[6],
            w_texture: w[7],
        }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        self.as_array()[term.index()]
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        let mut w = self.as_array();
        w[term.index()] = value;
        *self = Self::from_array(w);
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::contract(format!("weight for {t} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub terms: [f64; 8],
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, term: LossTerm) -> f64 {
        self.terms[term.index()]
    }
}

/// Images of a sample's tangent probes under `t_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DifferentialProbe {
    pub epsilon: f64,
    pub du_p: [f64; 2],
    pub du_q: [f64; 2],
}

/// `du_p = t_i(x + eps p) - t_i(x)` and likewise for `q`, in double precision.
pub fn differential_probe(model: &AtlasModel, i: usize, sample: &SurfaceSample, epsilon: f64) -> Result<DifferentialProbe> {
    let pts = [
        sample.x,
        sample.x + sample.tangent_p * epsilon,
        sample.x + sample.tangent_q * epsilon,
    ];
    let uv = model.texture_batch::<f64>(i, &pts)?;
    Ok(DifferentialProbe {
        epsilon,
        du_p: [uv[1][0] - uv[0][0], uv[1][1] - uv[0][1]],
        du_q: [uv[2][0] - uv[0][0], uv[2][1] - uv[0][1]],
    })
}

/// Per-chart nodes shared by the loss terms.
struct ChartNodes {
    /// `t_i(x)`, `B x 2`
    t_x: NodeId,
    /// tangent probe images, `B x 2` each
    du_p: NodeId,
    du_q: NodeId,
    /// `s_i(t_i(x))`, `B x 3`
    s_t: NodeId,
    /// `s_i(uv)`, `M x 3`, and `t_i(s_i(uv))`, `M x 2`
    s_u: Option<NodeId>,
    t_s: Option<NodeId>,
    /// `c(s_i(uv))`, `M x n`
    c_su: Option<NodeId>,
}

/// A loss graph for one batch. Terms missing their inputs (empty sample
/// sets) are absent.
pub struct LossGraph<'p, R: Real> {
    pub graph: Graph<'p, R>,
    terms: [Option<NodeId>; 8],
    /// Weighted sum; present only when every term is.
    pub total: Option<NodeId>,
}

impl<'p, R: Real> LossGraph<'p, R> {
    pub fn build(model: &'p AtlasModel, batch: &Batch, weights: &LossWeights, epsilon: f64) -> Result<Self> {
        batch.validate()?;
        weights.validate()?;
        let n = model.n_charts();
        let b = batch.surface.len();
        let m = batch.uv.len();
        let mut g = Graph::<R>::new(&model.store);

        let x_rows: Vec<[f64; 3]> = batch.surface.iter().map(|s| s.x.into()).collect();
        let x = g.input(Tensor::from_rows(&x_rows));
        let probed = |dir: fn(&SurfaceSample) -> Vec3| {
            let rows: Vec<[f64; 3]> = batch.surface.iter().map(|s| (s.x + dir(s) * epsilon).into()).collect();
            Tensor::from_rows(&rows)
        };
        let xp = g.input(probed(|s| s.tangent_p));
        let xq = g.input(probed(|s| s.tangent_q));
        let uv_rows: Vec<[f64; 2]> = batch.uv.clone();
        let u = g.input(Tensor::from_rows(&uv_rows));

        let mut charts = Vec::with_capacity(n);
        if b > 0 || m > 0 {
            for i in 0..n {
                let s_u = (m > 0).then(|| model.surface_node(&mut g, i, u));
                let mut parts = vec![x, xp, xq];
                parts.extend(s_u);
                let t_in = g.concat_rows(&parts);
                let t_all = model.texture_node(&mut g, i, t_in);
                let t_x = g.slice_rows(t_all, 0, b);
                let t_p = g.slice_rows(t_all, b, b);
                let t_q = g.slice_rows(t_all, 2 * b, b);
                let du_p = g.sub(t_p, t_x);
                let du_q = g.sub(t_q, t_x);
                let t_s = s_u.map(|_| g.slice_rows(t_all, 3 * b, m));
                let s_t = model.surface_node(&mut g, i, t_x);
                charts.push(ChartNodes {
                    t_x,
                    du_p,
                    du_q,
                    s_t,
                    s_u,
                    t_s,
                    c_su: None,
                });
            }
        }

        // c on [x; s_1(uv); ...; s_n(uv)]
        let mut c_in = vec![x];
        c_in.extend(charts.iter().filter_map(|c| c.s_u));
        let c_all = if b + n * m > 0 {
            let joined = g.concat_rows(&c_in);
            Some(model.chart_pmf_node(&mut g, joined))
        } else {
            None
        };
        let c_x = c_all.filter(|_| b > 0).map(|c| g.slice_rows(c, 0, b));
        if m > 0 {
            for (i, ch) in charts.iter_mut().enumerate() {
                ch.c_su = Some(g.slice_rows(c_all.unwrap(), b + i * m, m));
            }
        }

        let mut terms = [None; 8];
        if let Some(c_x) = c_x {
            terms[LossTerm::Cycle3d.index()] = Some(chart_weighted_mean(&mut g, c_x, &charts, |g, ch| {
                let d = g.sub(ch.s_t, x);
                g.row_sum_sq(d)
            }));
            terms[LossTerm::Conformal.index()] = Some(chart_weighted_mean(&mut g, c_x, &charts, |g, ch| {
                g.cos_sq(ch.du_p, ch.du_q)
            }));
            let sigma = g.param(model.sigma);
            terms[LossTerm::Stretch.index()] = Some(chart_weighted_mean(&mut g, c_x, &charts, |g, ch| {
                let area = g.parallelogram_area(ch.du_p, ch.du_q);
                let dev = g.sub_scalar(area, sigma);
                g.square(dev)
            }));
            let nrm_rows: Vec<[f64; 3]> = batch.surface.iter().map(|s| s.normal.into()).collect();
            let nrm = g.input(Tensor::from_rows(&nrm_rows));
            let mut chart_i = 0;
            terms[LossTerm::Texture.index()] = Some(chart_weighted_mean(&mut g, c_x, &charts, |g, ch| {
                let looked = model.normal_node(g, chart_i, ch.t_x);
                chart_i += 1;
                let d = g.sub(looked, nrm);
                g.row_sum_sq(d)
            }));
            terms[LossTerm::Cluster.index()] = Some(cluster_term(&mut g, c_x, batch));
        }
        if m > 0 {
            let mut acc = None;
            for ch in &charts {
                let d = g.sub(ch.t_s.unwrap(), u);
                let r = g.row_sum_sq(d);
                acc = Some(acc.map_or(r, |a| g.add(a, r)));
            }
            terms[LossTerm::Cycle2d.index()] = Some(g.mean(acc.unwrap()));

            let mut acc = None;
            for (i, ch) in charts.iter().enumerate() {
                let p = g.column(ch.c_su.unwrap(), i);
                let l = g.log_floor(p, PMF_FLOOR);
                let s = g.sum(l);
                acc = Some(acc.map_or(s, |a| g.add(a, s)));
            }
            terms[LossTerm::Entropy.index()] = Some(g.scale(acc.unwrap(), -1.0 / m as f64));
        }
        if b > 0 && m > 0 {
            let parts: Vec<NodeId> = charts.iter().map(|c| c.s_u.unwrap()).collect();
            let mapped = g.concat_rows(&parts);
            let fwd = g.min_sq_dist(x, mapped);
            let bwd = g.min_sq_dist(mapped, x);
            let fwd = g.mean(fwd);
            let bwd = g.mean(bwd);
            terms[LossTerm::Surface.index()] = Some(g.add(fwd, bwd));
        }

        let total = if terms.iter().all(Option::is_some) {
            let mut acc = None;
            for t in LossTerm::ALL {
                let w = g.scale(terms[t.index()].unwrap(), weights.get(t));
                acc = Some(acc.map_or(w, |a| g.add(a, w)));
            }
            acc
        } else {
            None
        };
        Ok(Self { graph: g, terms, total })
    }

    pub fn term(&self, t: LossTerm) -> Option<NodeId> {
        self.terms[t.index()]
    }

    pub fn term_value(&self, t: LossTerm) -> Option<f64> {
        self.term(t).map(|id| self.graph.scalar(id))
    }

    /// Term values and weighted total; fails on the first non-finite term.
    pub fn report(&self) -> Result<LossReport> {
        let total_id = self
            .total
            .ok_or_else(|| Error::contract("batch needs both surface samples and uv points"))?;
        let mut terms = [0.0; 8];
        for t in LossTerm::ALL {
            let v = self.term_value(t).unwrap();
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: 0, term: t.name() });
            }
            terms[t.index()] = v;
        }
        let total = self.graph.scalar(total_id);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: 0, term: "total" });
        }
        Ok(LossReport { terms, total })
    }
}

/// `mean_x sum_i c(x)[i] * per_chart_i(x)`.
fn chart_weighted_mean<R: Real>(
    g: &mut Graph<'_, R>,
    c_x: NodeId,
    charts: &[ChartNodes],
    mut per_chart: impl FnMut(&mut Graph<'_, R>, &ChartNodes) -> NodeId,
) -> NodeId {
    let mut acc = None;
    for (i, ch) in charts.iter().enumerate() {
        let v = per_chart(g, ch);
        let w = g.column(c_x, i);
        let wv = g.mul(w, v);
        acc = Some(acc.map_or(wv, |a| g.add(a, wv)));
    }
    g.mean(acc.unwrap())
}

/// Distance of each point to every chart's PMF-weighted centroid, with the
/// centroids held constant.
fn cluster_term<R: Real>(g: &mut Graph<'_, R>, c_x: NodeId, batch: &Batch) -> NodeId {
    let c = g.value(c_x).to_f64_vec();
    let n = g.value(c_x).cols;
    let d = cluster_distances(&c, n, batch.surface.iter().map(|s| s.x));
    let d = g.input(Tensor::from_f64(batch.surface.len(), n, &d));
    let r = g.row_dot(c_x, d);
    g.mean(r)
}

/// Row-major `B x n` matrix of `||mu_i - x||^2`, zero for charts without mass.
pub(crate) fn cluster_distances(pmf: &[f64], n: usize, xs: impl Iterator<Item = Vec3> + Clone) -> Vec<f64> {
    let mut mass = vec![0.0; n];
    let mut moment = vec![Vec3::zeros(); n];
    for (row, x) in pmf.chunks(n).zip(xs.clone()) {
        for i in 0..n {
            mass[i] += row[i];
            moment[i] += x * row[i];
        }
    }
    let centroids: Vec<Option<Vec3>> = (0..n)
        .map(|i| (mass[i] >= CLUSTER_MASS_FLOOR).then(|| moment[i] / mass[i]))
        .collect();
    xs.flat_map(|x| {
        centroids
            .iter()
            .map(move |mu| mu.map_or(0.0, |mu| (mu - x).norm_squared()))
            .collect::<Vec<_>>()
    })
    .collect()
}

fn single_term(model: &AtlasModel, batch: &Batch, term: LossTerm, need: &str) -> Result<f64> {
    let lg = LossGraph::<f64>::build(model, batch, &LossWeights::only(term), DEFAULT_EPSILON)?;
    lg.term_value(term)
        .ok_or_else(|| Error::contract(format!("{term} needs a non-empty {need}")))
}

pub fn loss_cycle_3d(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Cycle3d, "surface set")
}

pub fn loss_cycle_2d(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Cycle2d, "uv set")
}

pub fn loss_entropy(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Entropy, "uv set")
}

pub fn loss_surface(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Surface, "surface set and uv set")
}

pub fn loss_cluster(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Cluster, "surface set")
}

pub fn loss_conformal(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Conformal, "surface set")
}

pub fn loss_stretch(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Stretch, "surface set")
}

pub fn loss_texture(model: &AtlasModel, batch: &Batch) -> Result<f64> {
    single_term(model, batch, LossTerm::Texture, "surface set")
}

/// Weighted sum of all terms in double precision, with unweighted term values.
pub fn total_loss(model: &AtlasModel, batch: &Batch, weights: &LossWeights) -> Result<LossReport> {
    LossGraph::<f64>::build(model, batch, weights, DEFAULT_EPSILON)?.report()
}
