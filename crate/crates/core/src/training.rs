//! Minibatch training loop and test-set evaluation.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::encoder::SinusoidalConfig;
use crate::error::{Error, Result};
use crate::geo::{knn_graph_weighted, EdgeWeighting, LonLat, SpatialGraph};
use crate::layers::Backbone;
use crate::model::{LossMode, ModelConfig, ModelInput, PeGnnModel};
use crate::moran::batch_moran_target;
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    pub n_batch: usize,
    pub tsteps: usize,
    pub lr: f64,
    pub lambda: f64,
    pub learned_weights: bool,
    pub seed: u64,
    pub backbone: Backbone,
    pub use_pe: bool,
    pub emb_dim: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub scales: usize,
    pub dropout_p: f64,
    pub hidden_dim: usize,
    pub edge_weighting: EdgeWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            n_batch: 1024,
            tsteps: 1500,
            lr: 1e-3,
            lambda: 0.0,
            learned_weights: false,
            seed: 42,
            backbone: Backbone::Gcn,
            use_pe: true,
            emb_dim: 64,
            sigma_min: 0.01,
            sigma_max: 1.0,
            scales: 16,
            dropout_p: 0.1,
            hidden_dim: 64,
            edge_weighting: EdgeWeighting::Binary,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.n_batch < self.k + 1 {
            return Err(Error::Config(format!(
                "n_batch ({}) must be at least k + 1 ({})",
                self.n_batch,
                self.k + 1
            )));
        }
        if self.tsteps == 0 {
            return Err(Error::Config("tsteps must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.model_config(0).validate()
    }

    pub fn loss_mode(&self) -> LossMode {
        if self.learned_weights {
            LossMode::Learned
        } else {
            LossMode::Fixed {
                lambda: self.lambda,
            }
        }
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            feature_dim,
            use_pe: self.use_pe,
            emb_dim: self.emb_dim,
            sinusoidal: SinusoidalConfig {
                sigma_min: self.sigma_min,
                sigma_max: self.sigma_max,
                scales: self.scales,
            },
            hidden_dim: self.hidden_dim,
            dropout_p: self.dropout_p,
            backbone: self.backbone,
            edge_weighting: self.edge_weighting,
            loss: self.loss_mode(),
        }
    }
}

/// One minibatch with its own kNN graph over the sampled points.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub input: ModelInput,
    pub graph: SpatialGraph,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, indices: Vec<usize>, k: usize, weighting: EdgeWeighting) -> Result<Self> {
        let coords: Vec<LonLat> = indices.iter().map(|&i| ds.points[i].coords).collect();
        Ok(Batch {
            input: ds.model_input(&indices)?,
            graph: knn_graph_weighted(&coords, k, weighting)?,
            targets: indices.iter().map(|&i| ds.points[i].target).collect(),
            indices,
        })
    }
}

/// Uniform sample of `min(n_batch, n)` distinct indices out of `0..n`,
/// returned sorted. Each call is an independent draw.
pub fn sample_minibatch<R: Rng + ?Sized>(n: usize, n_batch: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot sample from an empty training set".into()));
    }
    let mut idx = rand::seq::index::sample(rng, n, n_batch.min(n)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub main_loss: f64,
    pub aux_loss: f64,
    pub total_loss: f64,
    pub sigma_main: Option<f64>,
    pub sigma_aux: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn main_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.main_loss).collect()
    }

    /// Per-step losses as CSV; the sigma columns are blank for fixed weights.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "main_loss", "aux_loss", "total_loss", "sigma_main", "sigma_aux"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.main_loss.to_string(),
                r.aux_loss.to_string(),
                r.total_loss.to_string(),
                opt(r.sigma_main),
                opt(r.sigma_aux),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub batch_indices: Vec<usize>,
    pub moran_targets: Vec<f64>,
}

/// Stepwise trainer. The model is initialised from `seed`; minibatch sampling
/// and dropout draw from a second stream of the same seed.
pub struct Trainer<'a> {
    data: &'a Dataset,
    config: TrainConfig,
    model: PeGnnModel,
    optimizer: AdamState,
    rng: ChaCha8Rng,
    step: usize,
    started: Instant,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.len() < config.k + 1 {
            return Err(Error::InsufficientPoints {
                needed: config.k + 1,
                got: data.len(),
            });
        }
        let model = PeGnnModel::new(config.model_config(data.feature_dim()), config.seed)?;
        let optimizer = AdamState::new(
            &model.params,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            data,
            config,
            model,
            optimizer,
            rng,
            step: 0,
            started: Instant::now(),
            report: TrainReport::default(),
        })
    }

    pub fn model(&self) -> &PeGnnModel {
        &self.model
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let indices = sample_minibatch(self.data.len(), self.config.n_batch, &mut self.rng)?;
        let batch = Batch::from_indices(self.data, indices, self.config.k, self.config.edge_weighting)?;
        let moran_targets = batch_moran_target(&batch.targets, &batch.graph)?;

        let mut tape = Tape::new();
        let vars = tape.bind_params(&self.model.params);
        let out = self
            .model
            .forward(&mut tape, &vars, &batch.input, &batch.graph, true, &mut self.rng)?;
        let parts = self.model.loss(&mut tape, &vars, out, &batch.targets, &moran_targets)?;
        let total = tape.scalar(parts.total);
        if !(total.is_finite() && parts.main.is_finite() && parts.aux.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                main_loss: parts.main,
                aux_loss: parts.aux,
                total_loss: total,
            });
        }
        tape.backward(parts.total)?;
        tape.accumulate_param_grads(&mut self.model.params);
        self.optimizer.step(&mut self.model.params)?;

        let sigmas = self.model.sigmas();
        let record = StepRecord {
            step: self.step,
            main_loss: parts.main,
            aux_loss: parts.aux,
            total_loss: total,
            sigma_main: sigmas.map(|s| s.0),
            sigma_aux: sigmas.map(|s| s.1),
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        self.report.records.push(record);
        Ok(StepOutcome {
            record,
            batch_indices: batch.indices,
            moran_targets,
        })
    }

    pub fn finish(mut self) -> (PeGnnModel, TrainReport) {
        self.report.wall_clock_s = self.started.elapsed().as_secs_f64();
        (self.model, self.report)
    }
}

/// Runs `config.tsteps` optimisation steps on `data`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(PeGnnModel, TrainReport)> {
    let mut trainer = Trainer::new(data, config.clone())?;
    for _ in 0..config.tsteps {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn compute(pred: &[f64], target: &[f64]) -> Result<Self> {
        if pred.len() != target.len() {
            return Err(Error::dim("metrics", &[pred.len()], &[target.len()]));
        }
        if pred.is_empty() {
            return Err(Error::EmptyInput("metrics over zero points".into()));
        }
        let n = pred.len() as f64;
        let (se, ae) = pred.iter().zip(target).fold((0.0, 0.0), |(se, ae), (p, t)| {
            let d = p - t;
            (se + d * d, ae + d.abs())
        });
        Ok(Metrics {
            mse: se / n,
            mae: ae / n,
        })
    }
}

/// Eval-mode predictions for every point of `test`, propagated over a kNN
/// graph built from the test points alone.
pub fn predict_dataset(model: &PeGnnModel, test: &Dataset, k: usize) -> Result<Vec<f64>> {
    if test.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: test.len(),
        });
    }
    let indices: Vec<usize> = (0..test.len()).collect();
    let batch = Batch::from_indices(test, indices, k, model.config.edge_weighting)?;
    Ok(model.predict(&batch.input, &batch.graph)?.0)
}

/// MSE and MAE on `test` in the units of its stored targets.
pub fn evaluate(model: &PeGnnModel, test: &Dataset, k: usize) -> Result<Metrics> {
    Metrics::compute(&predict_dataset(model, test, k)?, &test.targets())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    fn quick_config() -> TrainConfig {
        TrainConfig {
            n_batch: 64,
            tsteps: 20,
            emb_dim: 8,
            hidden_dim: 8,
            scales: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_generate(200, 1, &[1.0]).unwrap();
        let cfg = TrainConfig {
            lambda: 0.5,
            ..quick_config()
        };
        let (a, ra) = train(&ds, &cfg).unwrap();
        let (b, rb) = train(&ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra.main_losses(), rb.main_losses());
        let (c, _) = train(&ds, &TrainConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn one_step_moves_parameters() {
        let ds = synth_generate(100, 2, &[1.0]).unwrap();
        let cfg = TrainConfig {
            tsteps: 1,
            ..quick_config()
        };
        let init = PeGnnModel::new(cfg.model_config(0), cfg.seed).unwrap();
        let (model, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_ne!(init.params, model.params);
    }

    #[test]
    fn minibatch_inclusion_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, b, trials) = (1000, 32, 10_000);
        let mut counts = vec![0usize; n];
        for _ in 0..trials {
            let idx = sample_minibatch(n, b, &mut rng).unwrap();
            assert_eq!(idx.len(), b);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            for i in idx {
                counts[i] += 1;
            }
        }
        // each count ~ Binomial(trials, b/n)
        let p = b as f64 / n as f64;
        let (mean, sd) = (trials as f64 * p, (trials as f64 * p * (1.0 - p)).sqrt());
        let outside_3sd = counts.iter().filter(|&&c| (c as f64 - mean).abs() > 3.0 * sd).count();
        assert!(outside_3sd <= n / 100, "{outside_3sd} points beyond 3 sd");
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() < 5.0 * sd));

        assert_eq!(sample_minibatch(5, 10, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sample_minibatch(0, 10, &mut rng).is_err());
    }

    #[test]
    fn constant_predictor_scores_variance() {
        let y = [0.1, 0.4, 0.5, 0.9, 0.35];
        let mean = y.iter().sum::<f64>() / 5.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        let m = Metrics::compute(&[mean; 5], &y).unwrap();
        assert!((m.mse - var).abs() < 1e-15);
    }

    #[test]
    fn batch_graphs_stay_inside_the_batch() {
        let ds = synth_generate(300, 6, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = sample_minibatch(ds.len(), 40, &mut rng).unwrap();
        let batch = Batch::from_indices(&ds, idx, 5, EdgeWeighting::Binary).unwrap();
        assert_eq!(batch.graph.n(), 40);
        assert!(batch.graph.edges().iter().all(|e| e.src < 40 && e.dst < 40));
        assert_eq!(batch.graph.edges().len(), 40 * 5);
    }

    #[test]
    fn evaluation_does_not_mutate_model() {
        let ds = synth_generate(120, 3, &[1.0]).unwrap();
        let (model, _) = train(&ds, &quick_config()).unwrap();
        let before = model.clone();
        let m1 = evaluate(&model, &ds, 5).unwrap();
        let m2 = evaluate(&model, &ds, 5).unwrap();
        assert_eq!(model, before);
        assert_eq!(m1, m2);
        assert!(m1.mae * m1.mae <= m1.mse + 1e-15);
        assert!(evaluate(&model, &ds.subset(&[0]), 5).is_err());
    }

    #[test]
    fn metrics_hand_cases() {
        let m = Metrics::compute(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        let m = Metrics::compute(&[0.0, 0.0], &[1.0, -3.0]).unwrap();
        assert_eq!((m.mse, m.mae), (5.0, 2.0));
        assert!(Metrics::compute(&[], &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            n_batch: 5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            tsteps: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            scales: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lamda": 0.5}"#);
        assert!(parsed.is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"lambda": 0.5}"#).unwrap();
        assert_eq!(parsed.lambda, 0.5);
        assert_eq!(parsed.k, 5);
    }

    #[test]
    fn report_csv_layout() {
        let ds = synth_generate(60, 4, &[1.0]).unwrap();
        let cfg = TrainConfig {
            tsteps: 2,
            n_batch: 30,
            ..quick_config()
        };
        let (_, fixed) = train(&ds, &cfg).unwrap();
        let mut buf = Vec::new();
        fixed.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,main_loss,aux_loss,total_loss,sigma_main,sigma_aux");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",,"));

        let (_, learned) = train(&ds, &TrainConfig { learned_weights: true, ..cfg }).unwrap();
        assert!(learned.records.iter().all(|r| r.sigma_main.unwrap() > 0.0));
    }
}
