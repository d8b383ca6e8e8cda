//! Learnable layers shared by the encoder and the graph backbone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, SparseId, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::matrix(rows, cols, values).expect("consistent shape")
}

fn zero_bias(dim: usize) -> Tensor {
    Tensor::matrix(1, dim, vec![0.0; dim]).expect("bias shape")
}

fn glorot_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

fn check_width(tape: &Tape, x: Var, in_dim: usize, op: &'static str) -> Result<()> {
    let (n, d) = tape.shape(x);
    if d != in_dim {
        return Err(Error::dim(op, &[n, d], &[in_dim]));
    }
    Ok(())
}

/// Weight initialisation schemes; all biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U(−b, b) with b = 1/√fan_in.
    FanIn,
    /// U(−b, b) with b = √(6 / (fan_in + fan_out)).
    Glorot,
}

impl Init {
    fn bound(self, in_dim: usize, out_dim: usize) -> f64 {
        match self {
            Init::FanIn => 1.0 / (in_dim.max(1) as f64).sqrt(),
            Init::Glorot => glorot_bound(in_dim, out_dim),
        }
    }
}

/// Fully connected map `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            uniform(rng, in_dim, out_dim, init.bound(in_dim, out_dim)),
        );
        let bias = params.add(format!("{name}.bias"), zero_bias(out_dim));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        check_width(tape, x, self.in_dim, "linear")?;
        let xw = tape.matmul(x, vars[self.weight.index()])?;
        tape.add_bias(xw, vars[self.bias.index()])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Gcn,
    Sage,
}

/// Graph convolution `Ā·H·W + b`; the activation is applied by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            uniform(rng, in_dim, out_dim, glorot_bound(in_dim, out_dim)),
        );
        let bias = params.add(format!("{name}.bias"), zero_bias(out_dim));
        GcnLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `norm_adj` must be the normalized adjacency of the batch graph.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], h: Var, norm_adj: SparseId) -> Result<Var> {
        check_width(tape, h, self.in_dim, "gcn_layer")?;
        let propagated = tape.spmm(norm_adj, h)?;
        let hw = tape.matmul(propagated, vars[self.weight.index()])?;
        tape.add_bias(hw, vars[self.bias.index()])
    }
}

/// GraphSAGE layer with a mean aggregator over out-neighbours:
/// `H·W_self + mean_{j∈N(i)}(H_j)·W_neigh + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SageLayer {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SageLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = glorot_bound(in_dim, out_dim);
        let w_self = params.add(format!("{name}.w_self"), uniform(rng, in_dim, out_dim, bound));
        let w_neigh = params.add(format!("{name}.w_neigh"), uniform(rng, in_dim, out_dim, bound));
        let bias = params.add(format!("{name}.bias"), zero_bias(out_dim));
        SageLayer {
            w_self,
            w_neigh,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `mean_agg` is the row-standardized adjacency; isolated rows are zero,
    /// which yields a zero neighbour mean.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], h: Var, mean_agg: SparseId) -> Result<Var> {
        check_width(tape, h, self.in_dim, "sage_layer")?;
        let own = tape.matmul(h, vars[self.w_self.index()])?;
        let mean = tape.spmm(mean_agg, h)?;
        let neigh = tape.matmul(mean, vars[self.w_neigh.index()])?;
        let sum = tape.add(own, neigh)?;
        tape.add_bias(sum, vars[self.bias.index()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphLayer {
    Gcn(GcnLayer),
    Sage(SageLayer),
}

impl GraphLayer {
    pub fn new<R: Rng + ?Sized>(
        backbone: Backbone,
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        match backbone {
            Backbone::Gcn => GraphLayer::Gcn(GcnLayer::new(params, name, in_dim, out_dim, rng)),
            Backbone::Sage => GraphLayer::Sage(SageLayer::new(params, name, in_dim, out_dim, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], h: Var, ops: &GraphOperators) -> Result<Var> {
        match self {
            GraphLayer::Gcn(l) => l.forward(tape, vars, h, ops.norm_adj),
            GraphLayer::Sage(l) => l.forward(tape, vars, h, ops.mean_agg),
        }
    }
}

/// Sparse propagation operators of one batch graph, registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GraphOperators {
    pub norm_adj: SparseId,
    pub mean_agg: SparseId,
}

impl GraphOperators {
    pub fn register(tape: &mut Tape, graph: &crate::geo::SpatialGraph) -> Self {
        GraphOperators {
            norm_adj: tape.sparse_constant(crate::geo::normalize_adjacency(graph)),
            mean_agg: tape.sparse_constant(crate::geo::row_standardize(graph)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::SpatialGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(params: &mut ParamSet, id: ParamId, values: Vec<f64>) {
        params.get_mut(id).values_mut().copy_from_slice(&values);
    }

    fn run_layer(layer: GraphLayer, params: &ParamSet, graph: &SpatialGraph, h: Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = tape.bind_params(params);
        let ops = GraphOperators::register(&mut tape, graph);
        let h = tape.constant(&h);
        let out = layer.forward(&mut tape, &vars, h, &ops).unwrap();
        tape.value(out).to_vec()
    }

    #[test]
    fn gcn_identity_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let layer = GcnLayer::new(&mut params, "g", 2, 2, &mut rng);
        set(&mut params, layer.weight, vec![1.0, 0.0, 0.0, 1.0]);
        let g = SpatialGraph::from_pairs(3, &[]).unwrap();
        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(run_layer(GraphLayer::Gcn(layer), &params, &g, h.clone()), h.values());

        set(&mut params, layer.weight, vec![0.0; 4]);
        assert_eq!(run_layer(GraphLayer::Gcn(layer), &params, &g, h), vec![0.0; 6]);
    }

    #[test]
    fn gcn_two_node_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let layer = GcnLayer::new(&mut params, "g", 1, 1, &mut rng);
        set(&mut params, layer.weight, vec![1.0]);
        let g = SpatialGraph::from_pairs(2, &[(0, 1), (1, 0)]).unwrap();
        let h = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(run_layer(GraphLayer::Gcn(layer), &params, &g, h), vec![2.0, 2.0]);
    }

    #[test]
    fn gcn_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let layer = GcnLayer::new(&mut params, "g", 3, 1, &mut rng);
        let g = SpatialGraph::from_pairs(2, &[]).unwrap();
        let mut tape = Tape::new();
        let vars = tape.bind_params(&params);
        let ops = GraphOperators::register(&mut tape, &g);
        let h = tape.constant(&Tensor::zeros(vec![2, 2]));
        assert!(matches!(
            layer.forward(&mut tape, &vars, h, ops.norm_adj),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sage_without_edges_ignores_neighbour_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let layer = SageLayer::new(&mut params, "s", 2, 1, &mut rng);
        set(&mut params, layer.w_self, vec![2.0, -1.0]);
        set(&mut params, layer.bias, vec![0.5]);
        let g = SpatialGraph::from_pairs(2, &[]).unwrap();
        let h = Tensor::matrix(2, 2, vec![1.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(run_layer(GraphLayer::Sage(layer), &params, &g, h), vec![1.5, 4.5]);
    }

    #[test]
    fn sage_mean_of_identical_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let layer = SageLayer::new(&mut params, "s", 2, 2, &mut rng);
        set(&mut params, layer.w_self, vec![0.0; 4]);
        let w_neigh = params.get(layer.w_neigh).values().to_vec();
        let g = SpatialGraph::from_pairs(3, &[(0, 1), (0, 2)]).unwrap();
        let h = Tensor::matrix(3, 2, vec![9.0, 9.0, 0.25, -1.5, 0.25, -1.5]).unwrap();
        let out = run_layer(GraphLayer::Sage(layer), &params, &g, h);
        let expected = [
            0.25 * w_neigh[0] - 1.5 * w_neigh[2],
            0.25 * w_neigh[1] - 1.5 * w_neigh[3],
        ];
        assert_eq!(&out[..2], &expected);
    }

    #[test]
    fn sage_two_node_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let layer = SageLayer::new(&mut params, "s", 1, 1, &mut rng);
        set(&mut params, layer.w_self, vec![1.0]);
        set(&mut params, layer.w_neigh, vec![1.0]);
        let g = SpatialGraph::from_pairs(2, &[(0, 1), (1, 0)]).unwrap();
        let h = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(run_layer(GraphLayer::Sage(layer), &params, &g, h), vec![4.0, 4.0]);
    }
}
