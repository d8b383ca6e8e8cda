//! Positional encoder: multi-scale sinusoidal transform of coordinates
//! followed by a learnable sigmoid projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Init, Linear};

/// Grid scales `σ_s = σ_min · g^{s/(S−1)}` with `g = σ_max / σ_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidalConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub scales: usize,
}

impl Default for SinusoidalConfig {
    fn default() -> Self {
        SinusoidalConfig {
            sigma_min: 0.01,
            sigma_max: 1.0,
            scales: 16,
        }
    }
}

impl SinusoidalConfig {
    pub fn new(sigma_min: f64, sigma_max: f64, scales: usize) -> Result<Self> {
        let cfg = SinusoidalConfig {
            sigma_min,
            sigma_max,
            scales,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(Error::Config(format!(
                "sigma_min must be positive, got {}",
                self.sigma_min
            )));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > self.sigma_min) {
            return Err(Error::Config(format!(
                "sigma_max ({}) must exceed sigma_min ({})",
                self.sigma_max, self.sigma_min
            )));
        }
        if self.scales < 2 {
            return Err(Error::Config(format!(
                "need at least 2 grid scales, got {}: the scale exponent s/(S-1) is undefined for S = 1",
                self.scales
            )));
        }
        Ok(())
    }

    /// Ratio between the largest and smallest grid scale.
    pub fn growth(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    pub fn scale(&self, s: usize) -> f64 {
        self.sigma_min * self.growth().powf(s as f64 / (self.scales - 1) as f64)
    }

    /// Output width of the transform: 2 dimensions × (cos, sin) × S scales.
    pub fn width(&self) -> usize {
        4 * self.scales
    }
}

fn check_coords(coords: &Tensor) -> Result<usize> {
    match coords.shape() {
        [n, 2] => Ok(*n),
        other => Err(Error::dim("positional_encoder", other, &[0, 2])),
    }
}

/// Applies the sinusoidal transform row by row. Column layout is scale-major,
/// then dimension, then `[cos, sin]`: column `4s + 2v` holds `cos(c_v / σ_s)`.
pub fn sinusoidal_transform(coords: &Tensor, cfg: &SinusoidalConfig) -> Result<Tensor> {
    cfg.validate()?;
    let n = check_coords(coords)?;
    let inv_scales: Vec<f64> = (0..cfg.scales).map(|s| 1.0 / cfg.scale(s)).collect();
    let mut out = Vec::with_capacity(n * cfg.width());
    for row in coords.values().chunks(2) {
        for inv in &inv_scales {
            for &c in row {
                let (sin, cos) = (c * inv).sin_cos();
                out.push(cos);
                out.push(sin);
            }
        }
    }
    Tensor::matrix(n, cfg.width(), out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalEncoder {
    pub config: SinusoidalConfig,
    pub projection: Linear,
    pub emb_dim: usize,
}

impl PositionalEncoder {
    /// Registers the projection under `{name}.weight` / `{name}.bias`; weights
    /// start uniform in ±1/√(4S) and the bias at zero.
    pub fn new<R: Rng + ?Sized>(
        config: SinusoidalConfig,
        emb_dim: usize,
        params: &mut ParamSet,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if emb_dim == 0 {
            return Err(Error::Config("emb_dim must be positive".into()));
        }
        let projection = Linear::new(params, name, config.width(), emb_dim, Init::FanIn, rng);
        Ok(PositionalEncoder {
            config,
            projection,
            emb_dim,
        })
    }

    /// `sigmoid(ST(coords)·W + b)` recorded on the tape.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], coords: &Tensor) -> Result<Var> {
        let st = sinusoidal_transform(coords, &self.config)?;
        let st = tape.constant(&st);
        let z = self.projection.forward(tape, vars, st)?;
        Ok(tape.sigmoid(z))
    }

    /// Embeddings for `coords` without gradient tracking.
    pub fn encode(&self, params: &ParamSet, coords: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = tape.bind_params(params);
        let out = self.forward(&mut tape, &vars, coords)?;
        let (n, d) = tape.shape(out);
        Tensor::matrix(n, d, tape.value(out).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coords(rows: &[[f64; 2]]) -> Tensor {
        Tensor::matrix(rows.len(), 2, rows.concat()).unwrap()
    }

    fn encoder(emb_dim: usize, seed: u64) -> (PositionalEncoder, ParamSet) {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = PositionalEncoder::new(SinusoidalConfig::default(), emb_dim, &mut params, "pe", &mut rng)
            .unwrap();
        (enc, params)
    }

    #[test]
    fn zero_coordinates() {
        let cfg = SinusoidalConfig::new(0.05, 2.0, 5).unwrap();
        let st = sinusoidal_transform(&coords(&[[0.0, 0.0]]), &cfg).unwrap();
        assert_eq!(st.shape(), &[1, 20]);
        for (i, v) in st.values().iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn two_scale_direct_evaluation() {
        let cfg = SinusoidalConfig::new(1.0, 2.0, 2).unwrap();
        let st = sinusoidal_transform(&coords(&[[1.0, 0.0]]), &cfg).unwrap();
        let v = st.values();
        // scale 0, dimension 0
        assert!((v[0] - 1.0f64.cos()).abs() < 1e-15);
        assert!((v[1] - 1.0f64.sin()).abs() < 1e-15);
        assert!((v[0] - 0.5403).abs() < 1e-4 && (v[1] - 0.8415).abs() < 1e-4);
        // scale 1, dimension 0
        assert!((v[4] - 0.8776).abs() < 1e-4 && (v[5] - 0.4794).abs() < 1e-4);
        // dimension 1 is zero
        assert_eq!(&v[2..4], &[1.0, 0.0]);
    }

    #[test]
    fn geometric_scales() {
        let cfg = SinusoidalConfig::new(0.01, 1.0, 3).unwrap();
        assert!((cfg.growth() - 100.0).abs() < 1e-12);
        for (s, expected) in [0.01, 0.1, 1.0].iter().enumerate() {
            assert!((cfg.scale(s) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn single_scale_rejected() {
        let err = SinusoidalConfig::new(0.1, 1.0, 1).unwrap_err().to_string();
        assert!(err.contains("S = 1"), "{err}");
        assert!(SinusoidalConfig::new(1.0, 1.0, 4).is_err());
        assert!(SinusoidalConfig::new(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn zero_projection_gives_half() {
        let (enc, mut params) = encoder(8, 0);
        params.get_mut(enc.projection.weight).values_mut().fill(0.0);
        let out = enc.encode(&params, &coords(&[[0.3, 0.9], [0.1, 0.2]])).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape_and_bad_columns() {
        let (enc, params) = encoder(64, 1);
        let c = Tensor::matrix(7, 2, vec![0.5; 14]).unwrap();
        assert_eq!(enc.encode(&params, &c).unwrap().shape(), &[7, 64]);
        let bad = Tensor::matrix(7, 3, vec![0.5; 21]).unwrap();
        assert!(matches!(enc.encode(&params, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let (enc, mut params) = encoder(6, 2);
        let c = coords(&[[0.1, 0.7], [0.4, 0.2], [0.9, 0.55]]);
        let report = finite_difference_check(
            |tape, vars| {
                let out = enc.forward(tape, vars, &c)?;
                Ok(tape.sum(out))
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn distinct_coordinates_get_distinct_embeddings() {
        let (enc, params) = encoder(16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 2]> = (0..200).map(|_| [rng.gen(), rng.gen()]).collect();
        let out = enc.encode(&params, &coords(&pts)).unwrap();
        let rows: Vec<&[f64]> = out.values().chunks(16).collect();
        for i in 0..rows.len() {
            for j in 0..i {
                let diff = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff > 1e-9, "rows {i} and {j} collide");
            }
        }
    }

    proptest! {
        #[test]
        fn transform_properties(x in -3.0..3.0f64, y in -3.0..3.0f64, s in 0usize..16) {
            let cfg = SinusoidalConfig::default();
            let st = sinusoidal_transform(&coords(&[[x, y]]), &cfg).unwrap();
            let again = sinusoidal_transform(&coords(&[[x, y]]), &cfg).unwrap();
            prop_assert_eq!(st.values(), again.values());
            let v = st.values();
            prop_assert!(v.iter().all(|e| (-1.0..=1.0).contains(e)));
            for pair in v.chunks(2) {
                prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
            }
            // shifting dimension 0 by one full period of scale s
            let shifted = sinusoidal_transform(
                &coords(&[[x + 2.0 * std::f64::consts::PI * cfg.scale(s), y]]),
                &cfg,
            ).unwrap();
            let base = 4 * s;
            prop_assert!((shifted.values()[base] - v[base]).abs() < 1e-9);
            prop_assert!((shifted.values()[base + 1] - v[base + 1]).abs() < 1e-9);
        }

        #[test]
        fn embeddings_in_open_unit_interval(x in -2.0..2.0f64, y in -2.0..2.0f64, seed in 0u64..50) {
            let (enc, params) = encoder(8, seed);
            let out = enc.encode(&params, &coords(&[[x, y]])).unwrap();
            prop_assert!(out.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
