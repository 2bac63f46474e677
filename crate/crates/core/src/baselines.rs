//! Supervised baselines: L2-penalized logistic regression and the
//! discriminator architecture trained on labels alone.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::network::{Checkpoint, NetworkConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{seeded, standard_normals};
use crate::tensor::{gemm, Tensor};
use crate::trainer::{init_models, train, TrainConfig, TrainOutcome, TrainingData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub penalty: f64,
    pub learning_rate: f64,
    /// Adam iterations before the Newton polish.
    pub max_iters: usize,
    pub newton_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    /// Starting weights are N(0, init_scale²) from this seed; 0 scale starts at the origin.
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            penalty: 1e-4,
            learning_rate: 0.05,
            max_iters: 2_000,
            newton_iters: 50,
            tolerance: 1e-6,
            seed: 0,
            init_scale: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrFit {
    pub model: LogisticModel,
    /// Objective after every accepted step, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn margins(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = x.dims2()?;
        if d != self.dim() {
            return Err(Error::Shape {
                op: "logistic model input",
                lhs: vec![n, d],
                rhs: vec![self.dim()],
            });
        }
        Ok((0..n)
            .map(|i| self.bias + x.row(i).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect())
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.margins(x)?.into_iter().map(sigmoid).collect())
    }

    /// Mean cross-entropy plus `penalty/2 · ‖w‖²`.
    pub fn objective(&self, x: &Tensor, y: &[u8]) -> Result<f64> {
        Ok(self.objective_and_grad(x, y)?.0)
    }

    fn objective_and_grad(&self, x: &Tensor, y: &[u8]) -> Result<(f64, Vec<f64>, f64)> {
        let z = self.margins(x)?;
        let n = z.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; self.dim()];
        let mut gb = 0.0;
        for (i, (&zi, &yi)) in z.iter().zip(y).enumerate() {
            let yi = yi as f64;
            loss += softplus(zi) - yi * zi;
            let r = (sigmoid(zi) - yi) / n;
            gb += r;
            for (g, a) in gw.iter_mut().zip(x.row(i)) {
                *g += r * a;
            }
        }
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += self.penalty * w;
        }
        Ok((loss / n + 0.5 * self.penalty * sq, gw, gb))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("kind".into(), "logistic".into());
        metadata.insert("penalty".into(), format!("{:?}", self.penalty));
        Checkpoint {
            metadata,
            tensors: vec![
                ("lr.weights".into(), Tensor::new(vec![self.dim()], self.weights.clone()).expect("1-d")),
                ("lr.bias".into(), Tensor::scalar(self.bias)),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "logistic" {
            return Err(Error::Data("checkpoint does not hold a logistic model".into()));
        }
        let penalty = ck
            .meta("penalty")?
            .parse()
            .map_err(|_| Error::Data("bad penalty in checkpoint".into()))?;
        Ok(LogisticModel {
            weights: ck.tensor("lr.weights")?.values().to_vec(),
            bias: ck.tensor("lr.bias")?.item(),
            penalty,
        })
    }
}

/// Full-batch Adam on the penalized cross-entropy, then Newton steps with
/// backtracking until the gradient norm drops below `tolerance`.
///
/// An Adam step that raises the objective is undone, the moments reset and
/// the learning rate halved; accepted steps let the rate grow back toward its
/// base. Accepted objectives never increase in either phase.
pub fn lr_train(x: &Tensor, y: &[u8], cfg: &LrConfig) -> Result<LrFit> {
    let (n, d) = x.dims2()?;
    if n == 0 || y.is_empty() {
        return Err(Error::contract("logistic regression needs a non-empty training set"));
    }
    if y.len() != n {
        return Err(Error::contract(format!("{} labels for {n} rows", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::contract(format!("label {bad} is not in {{0, 1}}")));
    }
    if !(cfg.penalty >= 0.0) {
        return Err(Error::Config("penalty must be >= 0".into()));
    }
    let weights = if cfg.init_scale > 0.0 {
        standard_normals(&mut seeded(cfg.seed), d)
            .into_iter()
            .map(|v| v * cfg.init_scale)
            .collect()
    } else {
        vec![0.0; d]
    };
    let mut model = LogisticModel {
        weights,
        bias: 0.0,
        penalty: cfg.penalty,
    };
    let mut adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-12,
    };
    adam_cfg.validate()?;

    let mut w = Tensor::new(vec![d], model.weights.clone())?;
    let mut b = Tensor::scalar(model.bias);
    let mut state = AdamState::new([&w, &b]);
    let (mut obj, mut gw, mut gb) = model.objective_and_grad(x, y)?;
    let mut trace = vec![obj];
    let grad_norm = |gw: &[f64], gb: f64| (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
    let mut iterations = 0;
    while iterations < cfg.max_iters && grad_norm(&gw, gb) >= cfg.tolerance {
        iterations += 1;
        let saved = (w.clone(), b.clone());
        state.step(
            &mut [&mut w, &mut b],
            &[Tensor::new(vec![d], gw.clone())?, Tensor::scalar(gb)],
            &adam_cfg,
        )?;
        let trial = LogisticModel {
            weights: w.values().to_vec(),
            bias: b.item(),
            penalty: cfg.penalty,
        };
        let (t_obj, t_gw, t_gb) = trial.objective_and_grad(x, y)?;
        if !t_obj.is_finite() {
            return Err(Error::Numerical(format!("logistic objective is {t_obj} at iteration {iterations}")));
        }
        if t_obj <= obj {
            model = trial;
            (obj, gw, gb) = (t_obj, t_gw, t_gb);
            trace.push(obj);
            adam_cfg.learning_rate = (adam_cfg.learning_rate * 1.1).min(cfg.learning_rate);
        } else {
            // momentum may point uphill after an overshoot; restart it
            (w, b) = (saved.0, saved.1);
            state = AdamState::new([&w, &b]);
            adam_cfg.learning_rate *= 0.5;
            if adam_cfg.learning_rate < 1e-14 {
                break;
            }
        }
    }
    let mut newton = 0;
    while newton < cfg.newton_iters && grad_norm(&gw, gb) >= cfg.tolerance {
        newton += 1;
        let step = newton_direction(&model, x, &gw, gb)?;
        let slope: f64 = step.iter().zip(gw.iter().chain([&gb])).map(|(s, g)| s * g).sum();
        // backtracking line search along the descent direction -step
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let trial = LogisticModel {
                weights: model.weights.iter().zip(&step).map(|(w, s)| w - t * s).collect(),
                bias: model.bias - t * step[d],
                penalty: cfg.penalty,
            };
            let (t_obj, t_gw, t_gb) = trial.objective_and_grad(x, y)?;
            if t_obj <= obj - 1e-4 * t * slope || (t_obj <= obj && grad_norm(&t_gw, t_gb) < grad_norm(&gw, gb)) {
                model = trial;
                (obj, gw, gb) = (t_obj, t_gw, t_gb);
                trace.push(obj);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LrFit {
        model,
        objective_trace: trace,
        grad_norm: grad_norm(&gw, gb),
        iterations: iterations + newton,
    })
}

/// Solves `H s = g` for the penalized Hessian over `(w, b)`.
fn newton_direction(model: &LogisticModel, x: &Tensor, gw: &[f64], gb: f64) -> Result<Vec<f64>> {
    let (n, d) = x.dims2()?;
    let p = model.predict_proba(x)?;
    // rows of [x, 1] scaled by sqrt(p(1-p)/n)
    let mut a = Vec::with_capacity(n * (d + 1));
    for (i, pi) in p.iter().enumerate() {
        let s = (pi * (1.0 - pi) / n as f64).sqrt();
        a.extend(x.row(i).iter().map(|v| v * s));
        a.push(s);
    }
    let m = d + 1;
    let mut h = vec![0.0; m * m];
    gemm(m, n, m, &a, true, &a, false, &mut h, 0.0);
    for j in 0..m {
        h[j * m + j] += if j < d { model.penalty } else { 0.0 } + 1e-12;
    }
    let h = DMatrix::from_row_slice(m, m, &h);
    let g = DVector::from_iterator(m, gw.iter().copied().chain([gb]));
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Numerical("logistic Hessian is not positive definite".into()))?;
    Ok(chol.solve(&g).iter().copied().collect())
}

/// The discriminator architecture trained on the supervised loss only.
pub fn nn_d_train(data: &TrainingData, net: &NetworkConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        loss: LossConfig::nn_d(),
        ..cfg.clone()
    };
    let (d, g) = init_models(net, cfg.seed)?;
    let data = TrainingData {
        unlabeled: None,
        ..data.clone()
    };
    train(d, g, &data, &cfg)
}
