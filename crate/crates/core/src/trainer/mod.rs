//! Optimization loop: fresh batch, loss graph, backward, Adam per group on
//! a shared cosine schedule.

mod config;
mod log;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, cosine_decay_factor, AdamConfig, ParamGroup, StepOutcome};
use crate::error::{Error, Result};
use crate::fields::AtlasModel;
use crate::geometry::SampleSource;
use crate::losses::{Batch, LossGraph, LossReport};

pub use crate::fields::{checkpoint, restore};
pub use config::TrainConfig;
pub use log::{LogRecord, TrainLog};

/// Stream of the batch generator; model initialisation uses the plain seed.
const BATCH_STREAM: u64 = 1;

/// Fresh surface samples plus i.i.d. uniform texture-space points.
pub fn make_batch<R: Rng + ?Sized>(source: &SampleSource, config: &TrainConfig, rng: &mut R) -> Result<Batch> {
    if source.is_empty() {
        return Err(Error::contract("sample source is empty"));
    }
    let surface = source.draw(config.batch_surface, rng)?;
    let uv = (0..config.batch_uv).map(|_| [rng.random(), rng.random()]).collect();
    Ok(Batch { surface, uv })
}

/// Stateful trainer; one [`Trainer::step`] per iteration.
pub struct Trainer<'s> {
    pub model: AtlasModel,
    pub config: TrainConfig,
    pub log: TrainLog,
    source: &'s SampleSource,
    rng: ChaCha8Rng,
    adam: AdamConfig,
    iteration: usize,
    started: Instant,
}

impl<'s> Trainer<'s> {
    pub fn new(source: &'s SampleSource, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = AtlasModel::new(config.model_config(), config.seed)?;
        Self::resume(source, config, model)
    }

    /// Continues from an existing model (optimizer moments are those stored in it).
    pub fn resume(source: &'s SampleSource, config: TrainConfig, model: AtlasModel) -> Result<Self> {
        config.validate()?;
        if source.is_empty() {
            return Err(Error::contract("sample source is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BATCH_STREAM);
        Ok(Self {
            model,
            config,
            log: TrainLog::default(),
            source,
            rng,
            adam: AdamConfig::default(),
            iteration: 0,
            started: Instant::now(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    fn base_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Mlp => self.config.lr_mlp,
            ParamGroup::Sigma => self.config.lr_sigma,
            ParamGroup::Texture => self.config.lr_texture,
        }
    }

    /// Runs one iteration and returns the unweighted terms measured before the update.
    pub fn step(&mut self) -> Result<LossReport> {
        let it = self.iteration;
        let batch = make_batch(self.source, &self.config, &mut self.rng)?;
        let (report, grads) = {
            let lg = LossGraph::<f32>::build(&self.model, &batch, &self.config.weights, self.config.epsilon)?;
            let report = lg.report().map_err(|e| match e {
                Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { iteration: it, term },
                other => other,
            })?;
            let grads = lg.graph.backward(lg.total.expect("full batch")).map_err(|e| match e {
                Error::NumericFault { .. } => Error::NonFiniteLoss {
                    iteration: it,
                    term: "gradient",
                },
                other => other,
            })?;
            (report, grads)
        };
        self.model.store.set_gradients(&grads.params);
        let factor = cosine_decay_factor(it as u64, self.config.iterations as u64);
        let lrs = [ParamGroup::Mlp, ParamGroup::Sigma, ParamGroup::Texture].map(|g| factor * self.base_lr(g));
        for p in self.model.store.iter_mut() {
            let lr = match p.group {
                ParamGroup::Mlp => lrs[0],
                ParamGroup::Sigma => lrs[1],
                ParamGroup::Texture => lrs[2],
            };
            if adam_step(p, lr, self.adam, it as u64 + 1) == StepOutcome::Skipped {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    term: "gradient",
                });
            }
        }
        self.iteration += 1;
        if it.is_multiple_of(self.config.log_every) || self.iteration == self.config.iterations {
            self.log.records.push(LogRecord {
                iteration: it,
                terms: report.terms,
                total: report.total,
                lr: factor * self.base_lr(ParamGroup::Mlp),
                seconds: self.started.elapsed().as_secs_f64(),
            });
        }
        Ok(report)
    }

    /// Runs the remaining iterations.
    pub fn run(&mut self) -> Result<()> {
        while !self.done() {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains a fresh model for `config.iterations` steps.
pub fn fit(source: &SampleSource, config: &TrainConfig) -> Result<(AtlasModel, TrainLog)> {
    let mut trainer = Trainer::new(source, config.clone())?;
    trainer.run()?;
    Ok((trainer.model, trainer.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            n_charts: 2,
            iterations: 20,
            batch_surface: 16,
            batch_uv: 16,
            seed: 11,
            texture_res: 8,
            layers: 2,
            width: 8,
            ..TrainConfig::default()
        }
    }

    fn sphere() -> SampleSource {
        SampleSource::from_mesh(icosphere(1), false).unwrap()
    }

    #[test]
    fn batch_sizes_and_uv_moments() {
        let src = sphere();
        let cfg = TrainConfig {
            batch_surface: 7,
            batch_uv: 100_000,
            ..tiny_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batch(&src, &cfg, &mut rng).unwrap();
        assert_eq!((b.surface.len(), b.uv.len()), (7, 100_000));
        let mean = b.uv.iter().fold([0.0, 0.0], |a, u| [a[0] + u[0], a[1] + u[1]]);
        for m in mean {
            assert!((m / 1e5 - 0.5).abs() < 0.01);
        }
        let again = make_batch(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b, again);
        assert!(make_batch(&SampleSource::Points(vec![]), &cfg, &mut rng).is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let cfg = TrainConfig {
            iterations: 0,
            ..tiny_config()
        };
        let (model, log) = fit(&sphere(), &cfg).unwrap();
        assert_eq!(model, AtlasModel::new(cfg.model_config(), cfg.seed).unwrap());
        assert!(log.records.is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let src = sphere();
        let (a, la) = fit(&src, &tiny_config()).unwrap();
        let (b, lb) = fit(&src, &tiny_config()).unwrap();
        assert_eq!(crate::fields::write_checkpoint(&a), crate::fields::write_checkpoint(&b));
        assert_eq!(la.to_csv(false), lb.to_csv(false));
        assert_eq!(la.records.len(), 20);
        assert!(la.records.windows(2).all(|w| w[0].iteration < w[1].iteration));
    }

    #[test]
    fn sparse_logging_keeps_last_step() {
        let cfg = TrainConfig {
            log_every: 6,
            ..tiny_config()
        };
        let (_, log) = fit(&sphere(), &cfg).unwrap();
        let its: Vec<usize> = log.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 6, 12, 18, 19]);
    }

    #[test]
    fn non_finite_data_aborts_with_iteration() {
        let mut s = crate::geometry::sample_surface(&icosphere(0), 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        s[0].x.x = f64::NAN;
        let src = SampleSource::Points(vec![s[0]]);
        match fit(&src, &tiny_config()) {
            Err(Error::NonFiniteLoss { iteration: 0, .. }) => {}
            other => panic!("expected abort, got {:?}", other.map(|_| ())),
        }
    }
}
