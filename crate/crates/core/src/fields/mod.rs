//! The learnable atlas: chart-assignment field, per-chart texture and
//! surface fields, the stretch scalar and per-chart normal grids.
//!
//! Charts are indexed from 0.

mod checkpoint;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Parameter, Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{Normalization, Vec3};

/// Relative tolerance when matching a scene to a model's normalization.
pub const SCENE_TOLERANCE: f64 = 1e-6;

pub use checkpoint::{checkpoint, read_checkpoint, restore, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Rows per forward pass in the batched evaluators.
const EVAL_CHUNK: usize = 4096;

/// Architecture of an [`AtlasModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_charts: usize,
    /// Normal grid side length.
    pub texture_res: usize,
    /// Affine layers per MLP.
    pub layers: usize,
    /// Hidden channels per MLP.
    pub width: usize,
    pub pe_degree_c: usize,
    pub pe_degree_ts: usize,
    /// Keep the raw coordinate next to the sin/cos bands.
    pub include_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_charts: 1,
            texture_res: 128,
            layers: 8,
            width: 256,
            pe_degree_c: 1,
            pe_degree_ts: 4,
            include_input: true,
        }
    }
}

impl ModelConfig {
    pub fn with_charts(n_charts: usize) -> Self {
        Self {
            n_charts,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_charts == 0 {
            return Err(Error::contract("chart count must be at least 1"));
        }
        if self.layers == 0 || self.width == 0 || self.texture_res == 0 {
            return Err(Error::contract("layers, width and texture_res must be at least 1"));
        }
        if self.pe_degree_c == 0 || self.pe_degree_ts == 0 {
            return Err(Error::contract("positional encoding degree must be at least 1"));
        }
        Ok(())
    }

    pub fn encoded_dim(&self, dim: usize, degree: usize) -> usize {
        dim * (2 * degree + usize::from(self.include_input))
    }
}

/// Output nonlinearity of an MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Softmax,
    Sigmoid,
    Linear,
}

/// Fully connected ReLU network over a positional encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `(weight, bias)` per affine layer; weights are `in x out`.
    pub layers: Vec<(ParamId, ParamId)>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub pe_degree: usize,
    pub head: Head,
}

impl Mlp {
    /// Scalar parameter count of an MLP with `layers` affine layers.
    pub fn param_count(d_in: usize, width: usize, layers: usize, d_out: usize) -> usize {
        if layers == 1 {
            return d_in * d_out + d_out;
        }
        d_in * width + width + (layers - 2) * (width * width + width) + width * d_out + d_out
    }

    fn build(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        in_dim: usize,
        out_dim: usize,
        pe_degree: usize,
        head: Head,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let enc = cfg.encoded_dim(in_dim, pe_degree);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { enc } else { cfg.width };
            let last = l + 1 == cfg.layers;
            let d_out = if last { out_dim } else { cfg.width };
            // He-uniform; the last layer is zero for c and t, shrunk for s
            let scale = match (last, head) {
                (false, _) => 1.0,
                (true, Head::Linear) => 0.1,
                (true, _) => 0.0,
            };
            let bound = (6.0 / d_in as f64).sqrt() * scale;
            let w: Vec<f32> = (0..d_in * d_out)
                .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) as f32 } else { 0.0 })
                .collect();
            let wid = store.push(Parameter::new(d_in, d_out, ParamGroup::Mlp, w));
            let bid = store.push(Parameter::new(1, d_out, ParamGroup::Mlp, vec![0.0; d_out]));
            layers.push((wid, bid));
        }
        Self {
            layers,
            in_dim,
            out_dim,
            pe_degree,
            head,
        }
    }

    /// Appends encoding, layers and head to `g`.
    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId, include_input: bool) -> NodeId {
        let mut h = g.positional_encoding(x, self.pe_degree, include_input);
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = g.affine(h, w, b);
            if l + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        match self.head {
            Head::Softmax => g.softmax(h),
            Head::Sigmoid => g.sigmoid(h),
            Head::Linear => h,
        }
    }
}

/// A texture coordinate in a given chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UvPoint {
    pub u: [f64; 2],
    pub chart: usize,
}

/// All learnable state plus the scene normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub c: Mlp,
    pub t: Vec<Mlp>,
    pub s: Vec<Mlp>,
    pub sigma: ParamId,
    pub normals: Vec<ParamId>,
    pub normalization: Normalization,
}

/// Default-architecture model with `n` charts.
pub fn init_model(n: usize, texture_res: usize, seed: u64) -> Result<AtlasModel> {
    AtlasModel::new(
        ModelConfig {
            n_charts: n,
            texture_res,
            ..ModelConfig::default()
        },
        seed,
    )
}

impl AtlasModel {
    /// Parameters are pushed in checkpoint order: c, t_1..t_n, s_1..s_n,
    /// sigma, N_1..N_n. Sigma starts at 1 and every texel at (0, 0, 1).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = config.n_charts;
        let c = Mlp::build(&mut store, &config, 3, n, config.pe_degree_c, Head::Softmax, &mut rng);
        let t = (0..n)
            .map(|_| Mlp::build(&mut store, &config, 3, 2, config.pe_degree_ts, Head::Sigmoid, &mut rng))
            .collect();
        let s = (0..n)
            .map(|_| Mlp::build(&mut store, &config, 2, 3, config.pe_degree_ts, Head::Linear, &mut rng))
            .collect();
        let sigma = store.push(Parameter::new(1, 1, ParamGroup::Sigma, vec![1.0]));
        let texels = config.texture_res * config.texture_res;
        let flat_up: Vec<f32> = (0..texels).flat_map(|_| [0.0, 0.0, 1.0]).collect();
        let normals = (0..n)
            .map(|_| store.push(Parameter::new(texels, 3, ParamGroup::Texture, flat_up.clone())))
            .collect();
        Ok(Self {
            config,
            store,
            c,
            t,
            s,
            sigma,
            normals,
            normalization: Normalization::identity(),
        })
    }

    pub fn n_charts(&self) -> usize {
        self.config.n_charts
    }

    pub fn mlp_count(&self) -> usize {
        1 + self.t.len() + self.s.len()
    }

    pub fn sigma_value(&self) -> f64 {
        self.store.get(self.sigma).values[0] as f64
    }

    pub fn check_chart(&self, i: usize) -> Result<()> {
        if i >= self.n_charts() {
            return Err(Error::contract(format!(
                "chart index {i} out of range for {} charts",
                self.n_charts()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.store.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    /// Fails unless `points` normalize to the transform the model was trained under.
    pub fn check_scene<'a>(&self, points: impl Iterator<Item = &'a Vec3>) -> Result<Normalization> {
        let fitted = Normalization::fit(points).ok_or_else(|| Error::contract("scene has degenerate bounds"))?;
        if !fitted.approx_eq(&self.normalization, SCENE_TOLERANCE) {
            return Err(Error::Incompatible(format!(
                "scene normalization (centre {:?}, scale {}) differs from the model's (centre {:?}, scale {})",
                fitted.center.as_slice(),
                fitted.scale,
                self.normalization.center.as_slice(),
                self.normalization.scale
            )));
        }
        Ok(self.normalization)
    }

    // graph builders

    pub fn chart_pmf_node<R: Real>(&self, g: &mut Graph<'_, R>, x: NodeId) -> NodeId {
        self.c.forward(g, x, self.config.include_input)
    }

    pub fn texture_node<R: Real>(&self, g: &mut Graph<'_, R>, i: usize, x: NodeId) -> NodeId {
        self.t[i].forward(g, x, self.config.include_input)
    }

    pub fn surface_node<R: Real>(&self, g: &mut Graph<'_, R>, i: usize, u: NodeId) -> NodeId {
        self.s[i].forward(g, u, self.config.include_input)
    }

    pub fn normal_node<R: Real>(&self, g: &mut Graph<'_, R>, i: usize, uv: NodeId) -> NodeId {
        g.bilinear(uv, self.normals[i], self.config.texture_res)
    }

    // batched evaluation

    fn eval_rows<R: Real>(
        &self,
        rows: &[Vec<f64>],
        dim: usize,
        f: impl Fn(&mut Graph<'_, R>, NodeId) -> NodeId,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_CHUNK) {
            let flat: Vec<f64> = chunk.iter().flat_map(|r| r.iter().copied()).collect();
            let mut g = Graph::<R>::new(&self.store);
            let x = g.input(Tensor::from_f64(chunk.len(), dim, &flat));
            let y = f(&mut g, x);
            let v = g.value(y);
            out.extend((0..v.rows).map(|r| v.row(r).iter().map(|e| e.as_f64()).collect()));
        }
        out
    }

    /// Chart PMFs of many points, evaluated in precision `R`.
    pub fn chart_pmf_batch<R: Real>(&self, xs: &[Vec3]) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = xs.iter().map(|p| p.as_slice().to_vec()).collect();
        self.eval_rows::<R>(&rows, 3, |g, x| self.chart_pmf_node(g, x))
    }

    pub fn texture_batch<R: Real>(&self, i: usize, xs: &[Vec3]) -> Result<Vec<[f64; 2]>> {
        self.check_chart(i)?;
        let rows: Vec<Vec<f64>> = xs.iter().map(|p| p.as_slice().to_vec()).collect();
        Ok(self
            .eval_rows::<R>(&rows, 3, |g, x| self.texture_node(g, i, x))
            .into_iter()
            .map(|r| [r[0], r[1]])
            .collect())
    }

    pub fn surface_batch<R: Real>(&self, i: usize, us: &[[f64; 2]]) -> Result<Vec<Vec3>> {
        self.check_chart(i)?;
        let rows: Vec<Vec<f64>> = us.iter().map(|u| u.to_vec()).collect();
        Ok(self
            .eval_rows::<R>(&rows, 2, |g, u| self.surface_node(g, i, u))
            .into_iter()
            .map(|r| Vec3::new(r[0], r[1], r[2]))
            .collect())
    }

    /// Bilinear lookups into `N_i`.
    pub fn normal_batch(&self, i: usize, us: &[[f64; 2]]) -> Result<Vec<Vec3>> {
        self.check_chart(i)?;
        let rows: Vec<Vec<f64>> = us.iter().map(|u| u.to_vec()).collect();
        Ok(self
            .eval_rows::<f64>(&rows, 2, |g, u| self.normal_node(g, i, u))
            .into_iter()
            .map(|r| Vec3::new(r[0], r[1], r[2]))
            .collect())
    }

    // single-point evaluation in double precision

    pub fn chart_pmf(&self, x: &Vec3) -> Vec<f64> {
        self.chart_pmf_batch::<f64>(std::slice::from_ref(x)).remove(0)
    }

    pub fn texture_coord(&self, i: usize, x: &Vec3) -> Result<UvPoint> {
        let u = self.texture_batch::<f64>(i, std::slice::from_ref(x))?[0];
        Ok(UvPoint { u, chart: i })
    }

    pub fn surface_coord(&self, i: usize, u: [f64; 2]) -> Result<Vec3> {
        Ok(self.surface_batch::<f64>(i, &[u])?[0])
    }

    pub fn normal_texture_lookup(&self, i: usize, u: [f64; 2]) -> Result<Vec3> {
        Ok(self.normal_batch(i, &[u])?[0])
    }
}

/// `[x, sin(2^j pi x), cos(2^j pi x)]` per component for `j < degree`.
pub fn positional_encoding(x: &[f64], degree: usize) -> Vec<f64> {
    positional_encoding_with(x, degree, true)
}

pub fn positional_encoding_with(x: &[f64], degree: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (2 * degree + 1));
    for &v in x {
        if include_input {
            out.push(v);
        }
        for j in 0..degree {
            let a = (1u64 << j) as f64 * PI * v;
            out.extend([a.sin(), a.cos()]);
        }
    }
    out
}
