//! PE-GNN assembly: positional encoder, two shared graph layers and two
//! linear heads (main target and local Moran's I), plus the training losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::encoder::{PositionalEncoder, SinusoidalConfig};
use crate::error::{Error, Result};
use crate::geo::{EdgeWeighting, SpatialGraph};
use crate::layers::{Backbone, GraphLayer, GraphOperators, Init, Linear};

/// How the auxiliary Moran's I loss is weighted against the main loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossMode {
    /// `mse_main + λ·mse_aux`.
    Fixed { lambda: f64 },
    /// Homoscedastic uncertainty weighting with learned log-variances.
    Learned,
}

impl Default for LossMode {
    fn default() -> Self {
        LossMode::Fixed { lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub use_pe: bool,
    pub emb_dim: usize,
    pub sinusoidal: SinusoidalConfig,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    pub backbone: Backbone,
    pub edge_weighting: EdgeWeighting,
    pub loss: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 0,
            use_pe: true,
            emb_dim: 64,
            sinusoidal: SinusoidalConfig::default(),
            hidden_dim: 64,
            dropout_p: 0.1,
            backbone: Backbone::Gcn,
            edge_weighting: EdgeWeighting::Binary,
            loss: LossMode::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_pe {
            self.sinusoidal.validate()?;
            if self.emb_dim == 0 {
                return Err(Error::Config("emb_dim must be positive".into()));
            }
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if let LossMode::Fixed { lambda } = self.loss {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::Config(format!(
                    "lambda must be finite and non-negative, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Width of the first layer input: features plus either the coordinate
    /// embedding or the two raw coordinate columns.
    pub fn input_dim(&self) -> usize {
        self.feature_dim + if self.use_pe { self.emb_dim } else { 2 }
    }

    pub fn uses_aux(&self) -> bool {
        match self.loss {
            LossMode::Fixed { lambda } => lambda > 0.0,
            LossMode::Learned => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeights {
    Fixed {
        lambda: f64,
    },
    Learned {
        log_var_main: ParamId,
        log_var_aux: ParamId,
    },
}

/// Per-batch model inputs: `n × p` features and `n × 2` coordinates as fed to
/// the encoder (or, without it, used directly as two extra features).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub features: Tensor,
    pub coords: Tensor,
}

impl ModelInput {
    pub fn new(features: Tensor, coords: Tensor) -> Result<Self> {
        let (n, _) = features.rows_cols();
        match coords.shape() {
            [m, 2] if *m == n => {}
            other => return Err(Error::dim("model_input", features.shape(), other)),
        }
        if features.shape().len() != 2 {
            return Err(Error::dim("model_input", features.shape(), &[n, 0]));
        }
        Ok(ModelInput { features, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.rows_cols().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub main: Var,
    pub aux: Var,
}

/// Loss node plus the two unweighted task losses.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub main: f64,
    pub aux: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeGnnModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: Option<PositionalEncoder>,
    pub layers: [GraphLayer; 2],
    pub head_main: Linear,
    pub head_aux: Linear,
    pub loss_weights: LossWeights,
}

impl PeGnnModel {
    /// Builds a model with seeded random initialisation. Parameters are
    /// registered in a fixed order: encoder, layer 1, layer 2, main head,
    /// auxiliary head, then the log-variances in learned-loss mode.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = if config.use_pe {
            Some(PositionalEncoder::new(
                config.sinusoidal,
                config.emb_dim,
                &mut params,
                "encoder.projection",
                &mut rng,
            )?)
        } else {
            None
        };
        let hidden = config.hidden_dim;
        let layers = [
            GraphLayer::new(config.backbone, &mut params, "layer1", config.input_dim(), hidden, &mut rng),
            GraphLayer::new(config.backbone, &mut params, "layer2", hidden, hidden, &mut rng),
        ];
        let head_main = Linear::new(&mut params, "head_main", hidden, 1, Init::FanIn, &mut rng);
        let head_aux = Linear::new(&mut params, "head_aux", hidden, 1, Init::FanIn, &mut rng);
        let loss_weights = match config.loss {
            LossMode::Fixed { lambda } => LossWeights::Fixed { lambda },
            LossMode::Learned => LossWeights::Learned {
                log_var_main: params.add("log_var_main", Tensor::scalar(0.0)),
                log_var_aux: params.add("log_var_aux", Tensor::scalar(0.0)),
            },
        };
        Ok(PeGnnModel {
            config,
            params,
            encoder,
            layers,
            head_main,
            head_aux,
            loss_weights,
        })
    }

    /// Records the forward pass on `tape`. `vars` must come from binding
    /// `self.params` on the same tape; `rng` drives dropout in training mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: &ModelInput,
        graph: &SpatialGraph,
        training: bool,
        rng: &mut R,
    ) -> Result<ModelOutput> {
        let n = input.len();
        if graph.n() != n {
            return Err(Error::dim("model_forward", &[n], &[graph.n()]));
        }
        let (_, p) = input.features.rows_cols();
        if p != self.config.feature_dim {
            return Err(Error::dim(
                "model_forward",
                input.features.shape(),
                &[n, self.config.feature_dim],
            ));
        }

        let location = match &self.encoder {
            Some(enc) => enc.forward(tape, vars, &input.coords)?,
            None => tape.constant(&input.coords),
        };
        let h0 = if p == 0 {
            location
        } else {
            let x = tape.constant(&input.features);
            tape.concat_cols(x, location)?
        };

        let ops = GraphOperators::register(tape, graph);
        let h1 = self.layers[0].forward(tape, vars, h0, &ops)?;
        let h1 = tape.relu(h1);
        let h1 = tape.dropout(h1, self.config.dropout_p, training, rng)?;
        let h2 = self.layers[1].forward(tape, vars, h1, &ops)?;

        Ok(ModelOutput {
            main: self.head_main.forward(tape, vars, h2)?,
            aux: self.head_aux.forward(tape, vars, h2)?,
        })
    }

    /// Eval-mode predictions `(main, aux)` without gradient bookkeeping.
    pub fn predict(&self, input: &ModelInput, graph: &SpatialGraph) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = tape.bind_params(&self.params);
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, input, graph, false, &mut rng)?;
        Ok((tape.value(out.main).to_vec(), tape.value(out.aux).to_vec()))
    }

    /// Training objective for one batch.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        out: ModelOutput,
        targets: &[f64],
        moran_targets: &[f64],
    ) -> Result<LossParts> {
        let y = tape.constant(&Tensor::vector(targets.to_vec()));
        let i_target = tape.constant(&Tensor::vector(moran_targets.to_vec()));
        let total = match self.loss_weights {
            LossWeights::Fixed { lambda } => combined_loss(tape, out.main, y, out.aux, i_target, lambda)?,
            LossWeights::Learned {
                log_var_main,
                log_var_aux,
            } => uncertainty_loss(
                tape,
                out.main,
                y,
                out.aux,
                i_target,
                vars[log_var_main.index()],
                vars[log_var_aux.index()],
            )?,
        };
        Ok(LossParts {
            total,
            main: mse_value(tape.value(out.main), targets)?,
            aux: mse_value(tape.value(out.aux), moran_targets)?,
        })
    }

    /// Current `(σ_main, σ_aux)` in learned-loss mode.
    pub fn sigmas(&self) -> Option<(f64, f64)> {
        match self.loss_weights {
            LossWeights::Fixed { .. } => None,
            LossWeights::Learned {
                log_var_main,
                log_var_aux,
            } => {
                let sigma = |id| (self.params.get(id).values()[0] / 2.0).exp();
                Some((sigma(log_var_main), sigma(log_var_aux)))
            }
        }
    }
}

fn mse_value(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dim("mse", &[pred.len()], &[target.len()]));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse over zero elements".into()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `mse(ŷ, y) + λ·mse(Î, I)`; with λ = 0 the auxiliary term is not recorded at all.
pub fn combined_loss(
    tape: &mut Tape,
    y_hat: Var,
    y: Var,
    i_hat: Var,
    i_target: Var,
    lambda: f64,
) -> Result<Var> {
    let main = tape.mse(y_hat, y)?;
    if lambda == 0.0 {
        let (a, b) = (tape.shape(i_hat), tape.shape(i_target));
        if a.0 * a.1 != b.0 * b.1 {
            return Err(Error::dim("combined_loss", &[a.0, a.1], &[b.0, b.1]));
        }
        return Ok(main);
    }
    let aux = tape.mse(i_hat, i_target)?;
    let weighted = tape.scale(aux, lambda);
    tape.add(main, weighted)
}

/// `L_main / (2σ²_main) + L_aux / (2σ²_aux) + ½(log σ²_main + log σ²_aux)` with
/// `σ² = exp(log_var)`.
pub fn uncertainty_loss(
    tape: &mut Tape,
    y_hat: Var,
    y: Var,
    i_hat: Var,
    i_target: Var,
    log_var_main: Var,
    log_var_aux: Var,
) -> Result<Var> {
    let weighted = |tape: &mut Tape, loss: Var, log_var: Var| -> Result<Var> {
        let neg = tape.scale(log_var, -1.0);
        let precision = tape.exp(neg);
        let scaled = tape.mul(loss, precision)?;
        Ok(tape.scale(scaled, 0.5))
    };
    let main = tape.mse(y_hat, y)?;
    let aux = tape.mse(i_hat, i_target)?;
    let main = weighted(tape, main, log_var_main)?;
    let aux = weighted(tape, aux, log_var_aux)?;
    let log_sum = tape.add(log_var_main, log_var_aux)?;
    let reg = tape.scale(log_sum, 0.5);
    let tasks = tape.add(main, aux)?;
    tape.add(tasks, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{knn_graph, LonLat};
    use crate::gradcheck::finite_difference_check;

    fn vec_var(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(&Tensor::vector(v.to_vec()))
    }

    fn random_input(n: usize, p: usize, seed: u64) -> (ModelInput, SpatialGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen()).collect();
        let feats: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let geo: Vec<LonLat> = coords
            .chunks(2)
            .map(|c| LonLat { lon: c[0], lat: c[1] })
            .collect();
        let input = ModelInput::new(
            Tensor::matrix(n, p, feats).unwrap(),
            Tensor::matrix(n, 2, coords).unwrap(),
        )
        .unwrap();
        (input, knn_graph(&geo, 5).unwrap())
    }

    fn small_config(use_pe: bool, loss: LossMode) -> ModelConfig {
        ModelConfig {
            feature_dim: 3,
            use_pe,
            emb_dim: 8,
            sinusoidal: SinusoidalConfig::new(0.05, 1.0, 4).unwrap(),
            hidden_dim: 8,
            dropout_p: 0.0,
            loss,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn output_shapes() {
        let model = PeGnnModel::new(small_config(true, LossMode::default()), 1).unwrap();
        let (input, graph) = random_input(32, 3, 2);
        let (main, aux) = model.predict(&input, &graph).unwrap();
        assert_eq!((main.len(), aux.len()), (32, 32));
    }

    #[test]
    fn zero_parameters_give_bias_constants() {
        let mut model = PeGnnModel::new(small_config(true, LossMode::default()), 1).unwrap();
        for t in model.params.tensors_mut() {
            t.values_mut().fill(0.0);
        }
        let main_bias = model.head_main.bias;
        let aux_bias = model.head_aux.bias;
        model.params.get_mut(main_bias).values_mut()[0] = 0.3;
        model.params.get_mut(aux_bias).values_mut()[0] = -0.2;
        let (input, graph) = random_input(10, 3, 3);
        let (main, aux) = model.predict(&input, &graph).unwrap();
        assert!(main.iter().all(|&v| v == 0.3));
        assert!(aux.iter().all(|&v| v == -0.2));
    }

    #[test]
    fn baseline_matches_plain_two_layer_gcn() {
        let model = PeGnnModel::new(small_config(false, LossMode::default()), 5).unwrap();
        assert!(model.encoder.is_none());
        let (input, graph) = random_input(20, 3, 6);
        let (main, _) = model.predict(&input, &graph).unwrap();

        // hand-assembled Ā·relu(Ā·[X, C]·W1 + b1)·W2 + b2 followed by the main head
        let abar = crate::geo::normalize_adjacency(&graph);
        let p = &model.params;
        let dense = |name: &str| p.by_name(name).unwrap().clone();
        let x = {
            let (f, c) = (input.features.values(), input.coords.values());
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|i| [&f[i * 3..i * 3 + 3], &c[i * 2..i * 2 + 2]].concat())
                .collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let propagate = |t: &Tensor| {
            let (n, d) = t.rows_cols();
            let mut out = vec![0.0; n * d];
            abar.matmul_dense(t.values(), d, &mut out);
            Tensor::matrix(n, d, out).unwrap()
        };
        let add_bias = |t: Tensor, b: &Tensor| {
            let d = b.numel();
            let v = t
                .values()
                .chunks(d)
                .flat_map(|r| r.iter().zip(b.values()).map(|(x, y)| x + y))
                .collect();
            Tensor::matrix(t.rows_cols().0, d, v).unwrap()
        };
        let h1 = add_bias(propagate(&x).matmul(&dense("layer1.weight")).unwrap(), &dense("layer1.bias"));
        let h1 = Tensor::matrix(20, 8, h1.values().iter().map(|v| v.max(0.0)).collect()).unwrap();
        let h2 = add_bias(propagate(&h1).matmul(&dense("layer2.weight")).unwrap(), &dense("layer2.bias"));
        let y = add_bias(h2.matmul(&dense("head_main.weight")).unwrap(), &dense("head_main.bias"));
        assert_eq!(y.values(), main.as_slice());
    }

    #[test]
    fn combined_loss_values() {
        let mut tape = Tape::new();
        let y_hat = vec_var(&mut tape, &[1.0, 2.0]);
        let i_hat = vec_var(&mut tape, &[0.5, 0.5]);
        let l = combined_loss(&mut tape, y_hat, y_hat, i_hat, i_hat, 0.5).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        // main mse 0.2, aux mse 0.1
        let y_hat = vec_var(&mut tape, &[0.2f64.sqrt(), 0.2f64.sqrt()]);
        let y = vec_var(&mut tape, &[0.0, 0.0]);
        let i_hat = vec_var(&mut tape, &[0.1f64.sqrt(), -(0.1f64.sqrt())]);
        let i = vec_var(&mut tape, &[0.0, 0.0]);
        let l = combined_loss(&mut tape, y_hat, y, i_hat, i, 0.5).unwrap();
        assert!((tape.scalar(l) - 0.25).abs() < 1e-15);
        let l0 = combined_loss(&mut tape, y_hat, y, i_hat, i, 0.0).unwrap();
        let main = tape.mse(y_hat, y).unwrap();
        assert_eq!(tape.scalar(l0), tape.scalar(main));

        let short = vec_var(&mut tape, &[0.0]);
        assert!(combined_loss(&mut tape, y_hat, y, i_hat, short, 0.0).is_err());
    }

    #[test]
    fn uncertainty_loss_values() {
        let mut tape = Tape::new();
        let y_hat = vec_var(&mut tape, &[1.0, 1.0]);
        let y = vec_var(&mut tape, &[0.0, 0.0]);
        let i_hat = vec_var(&mut tape, &[0.0, 3.0]);
        let i = vec_var(&mut tape, &[0.0, 1.0]);
        let zero = tape.leaf(&Tensor::scalar(0.0), true);
        let zero2 = tape.leaf(&Tensor::scalar(0.0), true);
        let l = uncertainty_loss(&mut tape, y_hat, y, i_hat, i, zero, zero2).unwrap();
        // L_main = 1, L_aux = 2
        assert!((tape.scalar(l) - 1.5).abs() < 1e-15);

        let two = tape.leaf(&Tensor::scalar(2.0), true);
        let two2 = tape.leaf(&Tensor::scalar(2.0), true);
        let l = uncertainty_loss(&mut tape, y, y, i, i, two, two2).unwrap();
        assert!((tape.scalar(l) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_loss_stationary_in_log_var() {
        // L_main = 1 and log_var_main = 0: d/ds [e^{-s}/2 + s/2] = 0
        let mut params = ParamSet::new();
        params.add("s_main", Tensor::scalar(0.0));
        params.add("s_aux", Tensor::scalar(0.3));
        let mut tape = Tape::new();
        let vars = tape.bind_params(&params);
        let y_hat = vec_var(&mut tape, &[1.0]);
        let y = vec_var(&mut tape, &[0.0]);
        let l = uncertainty_loss(&mut tape, y_hat, y, y, y, vars[0], vars[1]).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(vars[0]).unwrap()[0].abs() < 1e-15);

        params.get_mut(crate::autodiff::ParamId(0)).values_mut()[0] = -0.4;
        let report = finite_difference_check(
            |tape, v| {
                let y_hat = vec_var(tape, &[1.0]);
                let y = vec_var(tape, &[0.0]);
                uncertainty_loss(tape, y_hat, y, y, y, v[0], v[1])
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn uncertainty_loss_symmetric_in_tasks() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 2.0]);
        let b = vec_var(&mut tape, &[0.0, 1.0]);
        let c = vec_var(&mut tape, &[3.0, 1.0]);
        let d = vec_var(&mut tape, &[2.0, 0.0]);
        let lv = tape.leaf(&Tensor::scalar(0.7), true);
        let lv2 = tape.leaf(&Tensor::scalar(0.7), true);
        let l1 = uncertainty_loss(&mut tape, a, b, c, d, lv, lv2).unwrap();
        let l2 = uncertainty_loss(&mut tape, c, d, a, b, lv, lv2).unwrap();
        assert_eq!(tape.scalar(l1), tape.scalar(l2));
    }

    #[test]
    fn lambda_zero_leaves_aux_head_without_gradient() {
        let mut model = PeGnnModel::new(small_config(true, LossMode::Fixed { lambda: 0.0 }), 9).unwrap();
        let (input, graph) = random_input(16, 3, 10);
        let mut tape = Tape::new();
        let vars = tape.bind_params(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(&mut tape, &vars, &input, &graph, true, &mut rng).unwrap();
        let y: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let parts = model.loss(&mut tape, &vars, out, &y, &y).unwrap();
        tape.backward(parts.total).unwrap();
        tape.accumulate_param_grads(&mut model.params);
        for id in [model.head_aux.weight, model.head_aux.bias] {
            assert!(model.params.get(id).grad().unwrap().iter().all(|&g| g == 0.0));
        }
        let main_w = model.params.get(model.head_main.weight).grad().unwrap();
        assert!(main_w.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(true, LossMode::Fixed { lambda: -1.0 });
        assert!(PeGnnModel::new(cfg.clone(), 0).is_err());
        cfg.loss = LossMode::Learned;
        cfg.dropout_p = 1.0;
        assert!(PeGnnModel::new(cfg.clone(), 0).is_err());
        cfg.dropout_p = 0.1;
        let model = PeGnnModel::new(cfg, 0).unwrap();
        assert_eq!(model.sigmas(), Some((1.0, 1.0)));
    }

    #[test]
    fn feature_width_mismatch_is_rejected() {
        let model = PeGnnModel::new(small_config(true, LossMode::default()), 1).unwrap();
        let (_, graph) = random_input(8, 3, 2);
        let input = ModelInput::new(Tensor::zeros(vec![8, 2]), Tensor::zeros(vec![8, 2])).unwrap();
        assert!(matches!(model.predict(&input, &graph), Err(Error::Dimension { .. })));
    }
}
