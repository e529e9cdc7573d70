use crate::error::{Error, Result};
use crate::fields::ModelConfig;
use crate::losses::{LossTerm, LossWeights, DEFAULT_EPSILON};

/// Everything that shapes a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_charts: usize,
    pub iterations: usize,
    pub batch_surface: usize,
    pub batch_uv: usize,
    pub seed: u64,
    pub lr_mlp: f64,
    pub lr_sigma: f64,
    pub lr_texture: f64,
    pub weights: LossWeights,
    pub texture_res: usize,
    pub epsilon: f64,
    /// Steps between checkpoints written by the driver; 0 disables them.
    pub checkpoint_every: usize,
    /// Steps between log records; the last step is always logged.
    pub log_every: usize,
    pub layers: usize,
    pub width: usize,
    pub pe_degree_c: usize,
    pub pe_degree_ts: usize,
    pub include_input: bool,
    /// Face normals instead of interpolated vertex normals for mesh samples.
    pub flat_normals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            n_charts: 1,
            iterations: 50_000,
            batch_surface: 4096,
            batch_uv: 4096,
            seed: 0,
            lr_mlp: 1e-4,
            lr_sigma: 0.1,
            lr_texture: 0.04,
            weights: LossWeights::default(),
            texture_res: model.texture_res,
            epsilon: DEFAULT_EPSILON,
            checkpoint_every: 0,
            log_every: 1,
            layers: model.layers,
            width: model.width,
            pe_degree_c: model.pe_degree_c,
            pe_degree_ts: model.pe_degree_ts,
            include_input: model.include_input,
            flat_normals: false,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_charts: self.n_charts,
            texture_res: self.texture_res,
            layers: self.layers,
            width: self.width,
            pe_degree_c: self.pe_degree_c,
            pe_degree_ts: self.pe_degree_ts,
            include_input: self.include_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.batch_surface == 0 || self.batch_uv == 0 || self.log_every == 0 {
            return Err(Error::contract("batch sizes and log_every must be at least 1"));
        }
        for (name, lr) in [("lr_mlp", self.lr_mlp), ("lr_sigma", self.lr_sigma), ("lr_texture", self.lr_texture)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::contract(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::contract("epsilon must be positive"));
        }
        self.weights.validate()
    }

    /// Applies one `key = value` setting. Weight keys use the term names
    /// (`w_323`, `w_232`, `w_entropy`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::contract(format!("invalid value `{v}` for `{key}`")))
        }
        let weight_key = |k: &str| match k {
            "w_323" => Some(LossTerm::Cycle3d),
            "w_232" => Some(LossTerm::Cycle2d),
            "w_entropy" => Some(LossTerm::Entropy),
            "w_surface" => Some(LossTerm::Surface),
            "w_cluster" => Some(LossTerm::Cluster),
            "w_conformal" => Some(LossTerm::Conformal),
            "w_stretch" => Some(LossTerm::Stretch),
            "w_texture" => Some(LossTerm::Texture),
            _ => None,
        };
        match key {
            "n_charts" | "charts" => self.n_charts = num(key, value)?,
            "iterations" | "iters" => self.iterations = num(key, value)?,
            "batch_surface" => self.batch_surface = num(key, value)?,
            "batch_uv" => self.batch_uv = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr_mlp" => self.lr_mlp = num(key, value)?,
            "lr_sigma" => self.lr_sigma = num(key, value)?,
            "lr_texture" => self.lr_texture = num(key, value)?,
            "texture_res" => self.texture_res = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "pe_degree_c" => self.pe_degree_c = num(key, value)?,
            "pe_degree_ts" => self.pe_degree_ts = num(key, value)?,
            "include_input" => self.include_input = num(key, value)?,
            "flat_normals" => self.flat_normals = num(key, value)?,
            k => match weight_key(k) {
                Some(term) => self.weights.set(term, num(key, value)?),
                None => return Err(Error::contract(format!("unknown config key `{k}`"))),
            },
        }
        Ok(())
    }

    /// Applies a flat `key = value` text, one setting per line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("line {}: expected key = value", idx + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::contract(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(())
    }
}
