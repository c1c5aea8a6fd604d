//! Feed-forward risk models with a flat parameter vector and hand-written
//! backpropagation. A model without hidden layers is logistic regression.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Shape of a risk model.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden layer widths; empty for logistic regression.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout probability on hidden units, used in training mode only.
    pub dropout: f64,
}

impl Architecture {
    pub fn logistic(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input_dim);
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    /// `(fan_in, fan_out, offset)` of every layer in the flat parameter vector.
    fn layers(&self) -> Vec<(usize, usize, usize)> {
        let sizes = self.sizes();
        let mut off = 0;
        sizes
            .windows(2)
            .map(|w| {
                let l = (w[0], w[1], off);
                off += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.hidden.contains(&0) {
            return Err(TrainError::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Intermediate values of a forward pass needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer (the first is the feature matrix).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers of every hidden layer, if dropout was active.
    masks: Vec<Option<Array2<f64>>>,
    pub logits: Vec<f64>,
}

/// A parameterised map from features to a risk score in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    pub architecture: Architecture,
    /// Per layer: weights `(fan_out × fan_in)` row-major, then biases.
    pub params: Vec<f64>,
}

impl RiskModel {
    /// Glorot-uniform weights and zero biases; logistic models start at zero.
    pub fn init<R: Rng>(architecture: Architecture, rng: &mut R) -> Result<Self, TrainError> {
        architecture.validate()?;
        let mut params = vec![0.0; architecture.n_params()];
        if !architecture.hidden.is_empty() {
            for (fan_in, fan_out, off) in architecture.layers() {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for p in &mut params[off..off + fan_in * fan_out] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(Self { architecture, params })
    }

    pub fn from_params(architecture: Architecture, params: Vec<f64>) -> Result<Self, TrainError> {
        architecture.validate()?;
        if params.len() != architecture.n_params() {
            return Err(TrainError::Format(format!(
                "expected {} parameters, found {}",
                architecture.n_params(),
                params.len()
            )));
        }
        Ok(Self { architecture, params })
    }

    /// Forward pass with explicit parameters. Dropout is applied only when `rng` is given.
    pub fn forward_with<R: Rng>(&self, params: &[f64], x: ArrayView2<f64>, mut rng: Option<&mut R>) -> ForwardCache {
        let arch = &self.architecture;
        let layers = arch.layers();
        let n_layers = layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers - 1);
        let mut current = x.to_owned();
        for (l, &(fan_in, fan_out, off)) in layers.iter().enumerate() {
            let w = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out]).expect("layer shape");
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = current.dot(&w.t());
            for mut row in z.rows_mut() {
                for (v, bj) in row.iter_mut().zip(b) {
                    *v += bj;
                }
            }
            inputs.push(current);
            if l + 1 == n_layers {
                let logits = z.column(0).to_vec();
                return ForwardCache {
                    inputs,
                    pre,
                    masks,
                    logits,
                };
            }
            let mut a = z.mapv(|v| arch.activation.apply(v));
            let mask = match rng.as_deref_mut() {
                Some(r) if arch.dropout > 0.0 => {
                    let keep = 1.0 - arch.dropout;
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            current = a;
        }
        unreachable!("architecture always has an output layer")
    }

    /// Gradient of `Σ_i dlogits[i]·logit_i` with respect to the parameters.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
        let arch = &self.architecture;
        let layers = arch.layers();
        let mut grad = vec![0.0; params.len()];
        let n = dlogits.len();
        let mut delta = Array2::from_shape_vec((n, 1), dlogits.to_vec()).expect("logit gradient shape");
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out, off) = layers[l];
            let input = &cache.inputs[l];
            let gw = delta.t().dot(input);
            for (g, v) in grad[off..off + fan_in * fan_out].iter_mut().zip(gw.iter()) {
                *g = *v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].iter_mut().zip(gb.iter()) {
                *g = *v;
            }
            if l == 0 {
                break;
            }
            let w = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out]).expect("layer shape");
            let mut d = delta.dot(&w);
            if let Some(m) = &cache.masks[l - 1] {
                d *= m;
            }
            let pre = &cache.pre[l - 1];
            d.zip_mut_with(pre, |dv, &p| *dv *= arch.activation.derivative(p));
            delta = d;
        }
        grad
    }

    /// Logits in evaluation mode.
    pub fn logits(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.forward_with::<rand_chacha::ChaCha8Rng>(&self.params, x, None).logits
    }

    /// Risk scores in evaluation mode.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.logits(x).into_iter().map(sigmoid).collect()
    }

    /// Text format: a `risk-model v1` header, the architecture, then one parameter per line.
    pub fn to_text(&self) -> String {
        let a = &self.architecture;
        let mut s = String::new();
        let _ = writeln!(s, "risk-model v1");
        let _ = writeln!(s, "input_dim {}", a.input_dim);
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "activation {}", a.activation.name());
        let _ = writeln!(s, "dropout {}", a.dropout);
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |m: &str| TrainError::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("risk-model v1") {
            return Err(bad("missing 'risk-model v1' header"));
        }
        let mut field = |name: &str| -> Result<String, TrainError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing '{name}' line")))?;
            line.strip_prefix(name)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| bad(&format!("expected '{name}', found '{line}'")))
        };
        let parse_err = |what: &str| bad(&format!("invalid {what}"));
        let input_dim = field("input_dim")?.parse().map_err(|_| parse_err("input_dim"))?;
        let hidden = field("hidden")?
            .split_whitespace()
            .map(|h| h.parse().map_err(|_| parse_err("hidden width")))
            .collect::<Result<Vec<usize>, _>>()?;
        let activation = match field("activation")?.as_str() {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(bad(&format!("unknown activation '{other}'"))),
        };
        let dropout = field("dropout")?.parse().map_err(|_| parse_err("dropout"))?;
        let n: usize = field("params")?.parse().map_err(|_| parse_err("parameter count"))?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| parse_err("parameter")))
            .collect::<Result<Vec<f64>, _>>()?;
        if params.len() != n {
            return Err(bad(&format!("declared {n} parameters, found {}", params.len())));
        }
        Self::from_params(
            Architecture {
                input_dim,
                hidden,
                activation,
                dropout,
            },
            params,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_x() -> Array2<f64> {
        Array2::from_shape_vec((4, 3), vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.7, 1.5, 1.5, 0.1, -2.0, 0.4, 0.9]).unwrap()
    }

    #[test]
    fn logistic_forward_is_affine() {
        let arch = Architecture::logistic(3);
        let m = RiskModel::from_params(arch, vec![0.5, -0.25, 1.0, 0.1]).unwrap();
        let x = toy_x();
        let logits = m.logits(x.view());
        for (i, row) in x.rows().into_iter().enumerate() {
            let direct = 0.5 * row[0] - 0.25 * row[1] + row[2] + 0.1;
            assert!((logits[i] - direct).abs() < 1e-15);
        }
        assert!(m.predict(x.view()).iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![5, 4],
            activation: Activation::Tanh,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = RiskModel::init(arch, &mut rng).unwrap();
        let x = toy_x();
        let coef = [0.3, -1.2, 0.7, 2.0];
        let f = |p: &[f64]| -> f64 {
            let c = m.forward_with::<ChaCha8Rng>(p, x.view(), None);
            c.logits.iter().zip(&coef).map(|(l, k)| l * k).sum()
        };
        let cache = m.forward_with::<ChaCha8Rng>(&m.params, x.view(), None);
        let g = m.backward(&m.params, &cache, &coef);
        let h = 1e-6;
        for k in 0..m.params.len() {
            let mut p = m.params.clone();
            p[k] += h;
            let up = f(&p);
            p[k] -= 2.0 * h;
            let down = f(&p);
            assert!(((up - down) / (2.0 * h) - g[k]).abs() < 1e-7, "param {k}");
        }
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![8],
            activation: Activation::Relu,
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = RiskModel::init(arch, &mut rng).unwrap();
        let x = toy_x();
        assert_eq!(m.predict(x.view()), m.predict(x.view()));
        let a = m.forward_with(&m.params, x.view(), Some(&mut rng)).logits;
        assert_ne!(a, m.logits(x.view()));
    }

    #[test]
    fn text_round_trip() {
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![3],
            activation: Activation::Tanh,
            dropout: 0.1,
        };
        let m = RiskModel::init(arch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let back = RiskModel::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(RiskModel::from_text("risk-model v2\n").is_err());
        let truncated: String = m.to_text().lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(RiskModel::from_text(&truncated).is_err());
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut a = Architecture::logistic(2);
        a.dropout = 1.0;
        assert!(a.validate().is_err());
        a.dropout = 0.0;
        a.hidden = vec![0];
        assert!(a.validate().is_err());
    }
}
