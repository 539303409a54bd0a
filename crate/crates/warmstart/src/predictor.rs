//! The warm-start predictor: an L-layer ReLU network.
//!
//! The network computes `W_L phi(W_{L-1} phi(... phi(W_1 theta)))` with
//! `phi = max(0, .)` elementwise and no activation on the last layer. Biases
//! are carried as an extra column on each weight matrix, with a 1 appended to
//! that layer's input; bias columns therefore participate in the Frobenius and
//! spectral norms used by the certificate computations.

use crate::error::{Error, Result};
use crate::numerics::{relu, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    layers: Vec<Matrix>,
    bias: bool,
    /// [d, hidden..., p]
    sizes: Vec<usize>,
}

impl ModelWeights {
    /// He-normal initialization: entries N(0, 2/fan_in), bias columns zero.
    pub fn init(sizes: &[usize], bias: bool, seed: u64) -> ModelWeights {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            let cols = fan_in + usize::from(bias);
            let m = Matrix::from_fn(fan_out, cols, |_, j| {
                if bias && j == fan_in {
                    0.0
                } else {
                    dist.sample(&mut rng)
                }
            });
            layers.push(m);
        }
        ModelWeights {
            layers,
            bias,
            sizes: sizes.to_vec(),
        }
    }

    /// The cold-start predictor: identical to `init`, never trained. Callers
    /// reserve a dedicated seed stream for it.
    pub fn cold_start(sizes: &[usize], bias: bool, seed: u64) -> ModelWeights {
        ModelWeights::init(sizes, bias, seed)
    }

    pub fn zeros(sizes: &[usize], bias: bool) -> ModelWeights {
        let mut w = ModelWeights::init(sizes, bias, 0);
        for l in &mut w.layers {
            l.scale_in_place(0.0);
        }
        w
    }

    pub fn from_layers(layers: Vec<Matrix>, bias: bool) -> Result<ModelWeights> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        sizes.push(layers[0].cols() - usize::from(bias));
        for (i, l) in layers.iter().enumerate() {
            let expect = sizes[i] + usize::from(bias);
            if l.cols() != expect {
                return Err(Error::Shape {
                    what: "layer input",
                    expected: expect,
                    got: l.cols(),
                });
            }
            sizes.push(l.rows());
        }
        Ok(ModelWeights {
            layers,
            bias,
            sizes,
        })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn bias(&self) -> bool {
        self.bias
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Largest number of output units in any layer.
    pub fn max_width(&self) -> usize {
        self.sizes[1..].iter().copied().max().unwrap()
    }

    /// Input to layer `i` given that layer's incoming activation.
    pub fn layer_input(&self, activation: &[f64]) -> Vec<f64> {
        if self.bias {
            let mut v = Vec::with_capacity(activation.len() + 1);
            v.extend_from_slice(activation);
            v.push(1.0);
            v
        } else {
            activation.to_vec()
        }
    }

    /// The warm start h_w(theta).
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.input_dim() {
            return Err(Error::Shape {
                what: "predictor input",
                expected: self.input_dim(),
                got: theta.len(),
            });
        }
        let mut a = theta.to_vec();
        let last = self.layers.len() - 1;
        for (i, w) in self.layers.iter().enumerate() {
            let z = w.matvec(&self.layer_input(&a));
            a = if i < last { relu(&z) } else { z };
        }
        Ok(a)
    }

    /// Squared L2 norm over every weight entry (bias columns included).
    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                let f = l.frobenius_norm();
                f * f
            })
            .sum()
    }

    // -- weight files: plain-text header, then little-endian f64 matrices ----

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(f, "warmstart-weights v1")?;
        writeln!(f, "sizes: {}", sizes.join(" "))?;
        writeln!(f, "bias: {}", self.bias)?;
        writeln!(f, "meta: {}", meta.replace('\n', " "))?;
        writeln!(f)?;
        for l in &self.layers {
            for v in l.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelWeights> {
        let raw = std::fs::read(path)?;
        let split = find_blank_line(&raw)
            .ok_or_else(|| Error::Parse(format!("{}: missing header terminator", path.display())))?;
        let header = std::str::from_utf8(&raw[..split])
            .map_err(|_| Error::Parse("weight header is not utf-8".into()))?;
        let mut sizes: Option<Vec<usize>> = None;
        let mut bias = true;
        for line in header.lines() {
            if let Some(rest) = line.strip_prefix("sizes: ") {
                let parsed: std::result::Result<Vec<usize>, _> =
                    rest.split_whitespace().map(|t| t.parse()).collect();
                sizes = Some(parsed.map_err(|_| Error::Parse("bad sizes line".into()))?);
            } else if let Some(rest) = line.strip_prefix("bias: ") {
                bias = rest.trim() == "true";
            }
        }
        let sizes = sizes.ok_or_else(|| Error::Parse("weight file missing sizes".into()))?;
        let mut body = &raw[split..];
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let rows = w[1];
            let cols = w[0] + usize::from(bias);
            let count = rows * cols;
            if body.len() < count * 8 {
                return Err(Error::Parse("weight file truncated".into()));
            }
            let m = Matrix::from_fn(rows, cols, |i, j| {
                let off = (i * cols + j) * 8;
                f64::from_le_bytes(body[off..off + 8].try_into().unwrap())
            });
            body = &body[count * 8..];
            layers.push(m);
        }
        ModelWeights::from_layers(layers, bias)
    }
}

/// Byte offset just past the first blank line ("\n\n").
pub(crate) fn find_blank_line(raw: &[u8]) -> Option<usize> {
    raw.windows(2).position(|w| w == b"\n\n").map(|p| p + 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    #[test]
    fn zero_weights_zero_output() {
        let w = ModelWeights::zeros(&[3, 4, 2], true);
        assert_eq!(w.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        // L = 1 direct map with an identity block and zero bias column.
        let m = Matrix::from_fn(3, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let w = ModelWeights::from_layers(vec![m], true).unwrap();
        let theta = vec![0.5, -1.0, 2.0];
        assert_eq!(w.forward(&theta).unwrap(), theta);
    }

    #[test]
    fn relu_kills_negative_path() {
        let w1 = Matrix::from_rows(&[vec![-1.0, 0.0]]);
        let w2 = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let w = ModelWeights::from_layers(vec![w1, w2], true).unwrap();
        assert_eq!(w.forward(&[3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn init_deterministic_per_seed() {
        let a = ModelWeights::init(&[4, 8, 3], true, 9);
        let b = ModelWeights::init(&[4, 8, 3], true, 9);
        let c = ModelWeights::init(&[4, 8, 3], true, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_hidden_layers_is_direct_map() {
        let w = ModelWeights::init(&[5, 3], true, 1);
        assert_eq!(w.depth(), 1);
        assert_eq!(w.forward(&[0.0; 5]).unwrap().len(), 3);
    }

    #[test]
    fn relu_scale_invariance_between_layers() {
        // Without biases, scaling one layer by s and another by 1/s leaves the
        // output unchanged: relu commutes with positive scaling.
        let mut w = ModelWeights::init(&[4, 6, 6, 3], false, 21);
        let theta = vec![0.3, -0.7, 1.1, 0.2];
        let before = w.forward(&theta).unwrap();
        let s = 3.7;
        w.layers_mut()[0].scale_in_place(s);
        w.layers_mut()[2].scale_in_place(1.0 / s);
        let after = w.forward(&theta).unwrap();
        let diff: Vec<f64> = before.iter().zip(&after).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-9 * (1.0 + norm(&before)));
    }

    #[test]
    fn single_weight_changes_output_on_active_path() {
        let mut w = ModelWeights::init(&[3, 5, 2], true, 33);
        let theta = vec![1.0, 2.0, -0.5];
        let before = w.forward(&theta).unwrap();
        // Find an active hidden unit so the bumped weight is on a live path.
        let hidden = relu(&w.layers()[0].matvec(&w.layer_input(&theta)));
        let j = hidden.iter().position(|&h| h > 0.0).expect("no active unit");
        let old = w.layers()[1].get(0, j);
        w.layers_mut()[1].set(0, j, old + 1.0);
        let after = w.forward(&theta).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.wts");
        let w = ModelWeights::init(&[4, 7, 2], true, 5);
        w.save(&path, "seed=5").unwrap();
        let loaded = ModelWeights::load(&path).unwrap();
        assert_eq!(w, loaded);
    }
}
