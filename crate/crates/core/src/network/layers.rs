use rand::Rng as _;

use super::Mode;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{standard_normals, Rng};
use crate::tensor::Tensor;

/// Dense layer with weight normalization: the effective weight of output unit
/// `i` is `gain[i] * direction[i] / ‖direction[i]‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNormDense {
    /// `out × in`
    pub direction: Tensor,
    /// `[out]`
    pub gain: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Tape handles for the three parameter tensors of a [`WeightNormDense`].
#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub direction: Var,
    pub gain: Var,
    pub bias: Var,
}

impl WeightNormDense {
    /// Directions drawn from `N(0, 2 / fan_in)`, unit gains, zero biases.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let v = standard_normals(rng, fan_in * fan_out)
            .into_iter()
            .map(|z| z * std)
            .collect();
        WeightNormDense {
            direction: Tensor::new(vec![fan_out, fan_in], v).expect("shape"),
            gain: Tensor::ones(&[fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.direction.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.direction.rows()
    }

    pub fn effective_weight(&self) -> Tensor {
        let cols = self.fan_in();
        let mut w = self.direction.values().to_vec();
        for (i, row) in w.chunks_mut(cols).enumerate() {
            let norm = row
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(crate::autodiff::NORM_FLOOR);
            let s = self.gain.values()[i] / norm;
            row.iter_mut().for_each(|v| *v *= s);
        }
        Tensor::matrix(self.fan_out(), cols, w).expect("shape")
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDense {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundDense {
            direction: put(&self.direction),
            gain: put(&self.gain),
            bias: put(&self.bias),
        }
    }

    /// `x · Wᵀ + b` for `x` of shape `batch × in`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundDense, x: Var) -> Result<Var> {
        let (_, cols) = tape.value(x).dims2()?;
        if cols != self.fan_in() {
            return Err(Error::Shape {
                op: "dense input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: self.direction.shape().to_vec(),
            });
        }
        let out = self.fan_out();
        let norms = tape.row_norm(bound.direction)?;
        let gain = tape.reshape(bound.gain, out, 1)?;
        let scale = tape.div(gain, norms)?;
        let w = tape.mul(bound.direction, scale)?;
        let wt = tape.transpose(w)?;
        let y = tape.matmul(x, wt)?;
        let b = tape.reshape(bound.bias, 1, out)?;
        tape.add(y, b)
    }
}

/// Per-sample, per-unit dropout with inverted scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureDropout {
    pub rate: f64,
}

impl FeatureDropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(FeatureDropout { rate })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Additive zero-mean Gaussian noise, active only in training mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianNoise {
    pub sigma: f64,
}

impl GaussianNoise {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(GaussianNoise { sigma })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if mode == Mode::Eval || self.sigma == 0.0 {
            return Ok(x);
        }
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let noise = standard_normals(rng, n)
            .into_iter()
            .map(|z| z * self.sigma)
            .collect();
        let noise = tape.constant(Tensor::new(shape, noise)?);
        tape.add(x, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng::seeded;

    #[test]
    fn effective_rows_have_gain_norm() {
        let mut layer = WeightNormDense::new(7, 5, &mut seeded(1));
        layer.gain = Tensor::new(vec![5], vec![0.5, -2.0, 3.0, 1.0, 0.01]).unwrap();
        let w = layer.effective_weight();
        for i in 0..5 {
            let norm = w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - layer.gain.values()[i].abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_forward_matches_effective_weight() {
        let layer = WeightNormDense::new(3, 2, &mut seeded(2));
        let x = Tensor::from_rows(&[vec![0.1, -0.4, 0.9], vec![1.0, 0.0, -1.0]]).unwrap();
        let mut tape = Tape::new();
        let b = layer.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &b, xv).unwrap();
        let expected = x.matmul(&layer.effective_weight().transpose().unwrap()).unwrap();
        for (a, e) in tape.value(y).values().iter().zip(expected.values()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_input_mismatch_is_shape_error() {
        let layer = WeightNormDense::new(3, 2, &mut seeded(2));
        let mut tape = Tape::new();
        let b = layer.bind(&mut tape, true);
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(layer.forward(&mut tape, &b, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let layer = WeightNormDense::new(4, 3, &mut seeded(3));
        let mut layer = layer;
        layer.bias = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::new(vec![5, 4], standard_normals(&mut seeded(4), 20)).unwrap();
        let params = [layer.direction.clone(), layer.gain.clone(), layer.bias.clone(), x];
        let err = grad_check(&params, 1e-5, |t, v| {
            let b = BoundDense {
                direction: v[0],
                gain: v[1],
                bias: v[2],
            };
            let y = layer.forward(t, &b, v[3])?;
            let y = t.tanh(y)?;
            let y = t.square(y)?;
            t.mean(y)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn stochastic_layers_are_identity_in_eval_and_degenerate_cases() {
        let x = Tensor::new(vec![3, 4], standard_normals(&mut seeded(5), 12)).unwrap();
        let mut rng = seeded(6);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let d = FeatureDropout::new(0.5).unwrap();
        let n = GaussianNoise::new(0.3).unwrap();
        assert_eq!(d.apply(&mut tape, xv, Mode::Eval, &mut rng).unwrap(), xv);
        assert_eq!(n.apply(&mut tape, xv, Mode::Eval, &mut rng).unwrap(), xv);
        let d0 = FeatureDropout::new(0.0).unwrap();
        let n0 = GaussianNoise::new(0.0).unwrap();
        assert_eq!(d0.apply(&mut tape, xv, Mode::Train, &mut rng).unwrap(), xv);
        assert_eq!(n0.apply(&mut tape, xv, Mode::Train, &mut rng).unwrap(), xv);
        assert!(FeatureDropout::new(1.0).is_err());
        assert!(GaussianNoise::new(-0.1).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let base = [0.5, -1.0, 2.0, 0.25];
        let reps = 100_000;
        let x = Tensor::new(vec![reps, 4], base.repeat(reps)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let d = FeatureDropout::new(0.2).unwrap();
        let y = d.apply(&mut tape, xv, Mode::Train, &mut seeded(7)).unwrap();
        let y = tape.mean_rows(y).unwrap();
        for (m, b) in tape.value(y).values().iter().zip(base) {
            assert!(((m - b) / b).abs() < 0.02, "{m} vs {b}");
        }
    }
}
