use super::layers::{BoundDense, FeatureDropout, GaussianNoise, WeightNormDense};
use super::{Mode, NetworkConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, standard_normals, Rng};
use crate::tensor::Tensor;

/// Rows evaluated per tape when scoring large cohorts.
const EVAL_CHUNK: usize = 4096;

/// Tape handles for every layer of a network, hidden layers first.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    pub layers: Vec<BoundDense>,
}

impl BoundNetwork {
    /// Parameter handles in the same order as `params()` on the network.
    pub fn vars(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.direction, l.gain, l.bias])
            .collect()
    }
}

fn bind_all(layers: &[&WeightNormDense], tape: &mut Tape, trainable: bool) -> BoundNetwork {
    BoundNetwork {
        layers: layers.iter().map(|l| l.bind(tape, trainable)).collect(),
    }
}

fn named_params<'a>(prefix: &str, layers: &[&'a WeightNormDense]) -> Vec<(String, &'a Tensor)> {
    let n = layers.len();
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            let name = if i + 1 == n {
                format!("{prefix}.out")
            } else {
                format!("{prefix}.hidden{i}")
            };
            [
                (format!("{name}.direction"), &l.direction),
                (format!("{name}.gain"), &l.gain),
                (format!("{name}.bias"), &l.bias),
            ]
        })
        .collect()
}

/// Tape handles of a discriminator pass.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars {
    /// `batch × 2`: the real-class logits `(l0, l1)`.
    pub logits: Var,
    /// `batch × feat_dim`: last hidden activation, `f(x)`.
    pub features: Var,
}

/// Evaluated discriminator outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub logits: Tensor,
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub hidden: Vec<WeightNormDense>,
    pub head: WeightNormDense,
    pub leaky_slope: f64,
    pub noise: GaussianNoise,
    pub dropout: FeatureDropout,
}

impl Discriminator {
    pub fn new(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut hidden = Vec::with_capacity(cfg.d_hidden.len());
        let mut fan_in = cfg.feature_dim;
        for &w in &cfg.d_hidden {
            hidden.push(WeightNormDense::new(fan_in, w, rng));
            fan_in = w;
        }
        let head = WeightNormDense::new(fan_in, 2, rng);
        Ok(Discriminator {
            hidden,
            head,
            leaky_slope: cfg.leaky_slope,
            noise: GaussianNoise::new(cfg.noise_sigma)?,
            dropout: FeatureDropout::new(cfg.dropout_rate)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].fan_in()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.fan_in()
    }

    fn layers(&self) -> Vec<&WeightNormDense> {
        self.hidden.iter().chain(std::iter::once(&self.head)).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut WeightNormDense> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .collect()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        named_params("d", &self.layers())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.direction, &mut l.gain, &mut l.bias])
            .collect()
    }

    /// Records the parameters on `tape`; frozen parameters get no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        bind_all(&self.layers(), tape, trainable)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundNetwork,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<DiscriminatorVars> {
        let (_, cols) = tape.value(x).dims2()?;
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "discriminator input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let mut h = x;
        let mut features = x;
        for (layer, b) in self.hidden.iter().zip(&bound.layers) {
            h = layer.forward(tape, b, h)?;
            h = tape.leaky_relu(h, self.leaky_slope)?;
            features = h;
            h = self.noise.apply(tape, h, mode, rng)?;
            h = self.dropout.apply(tape, h, mode, rng)?;
        }
        let logits = self.head.forward(tape, &bound.layers[self.hidden.len()], h)?;
        Ok(DiscriminatorVars { logits, features })
    }

    /// Deterministic eval-mode pass.
    pub fn evaluate(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let mut logits = Vec::new();
        let mut features = Vec::new();
        let (rows, _) = x.dims2()?;
        // eval mode never draws from this generator
        let mut unused = rng::seeded(0);
        for start in (0..rows).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(rows)).collect();
            let chunk = x.select_rows(&idx)?;
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let xv = tape.constant(chunk);
            let out = self.forward(&mut tape, &bound, xv, Mode::Eval, &mut unused)?;
            logits.push(tape.value(out.logits).clone());
            features.push(tape.value(out.features).clone());
        }
        let logits: Vec<&Tensor> = logits.iter().collect();
        let features: Vec<&Tensor> = features.iter().collect();
        Ok(DiscriminatorOutput {
            logits: Tensor::concat_rows(&logits)?,
            features: Tensor::concat_rows(&features)?,
        })
    }
}

/// `p(y = 1 | x) = exp(l1) / (exp(l0) + exp(l1))` per row, in eval mode.
pub fn predict_proba(d: &Discriminator, x: &Tensor) -> Result<Tensor> {
    let out = d.evaluate(x)?;
    let p = out
        .logits
        .values()
        .chunks(2)
        .map(|l| positive_probability(l[0], l[1]))
        .collect::<Vec<_>>();
    Tensor::matrix(p.len(), 1, p)
}

pub(crate) fn positive_probability(l0: f64, l1: f64) -> f64 {
    let z = l1 - l0;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub hidden: Vec<WeightNormDense>,
    pub out: WeightNormDense,
    pub leaky_slope: f64,
    pub dropout: FeatureDropout,
}

impl Generator {
    pub fn new(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut hidden = Vec::with_capacity(cfg.g_hidden.len());
        let mut fan_in = cfg.latent_dim;
        for &w in &cfg.g_hidden {
            hidden.push(WeightNormDense::new(fan_in, w, rng));
            fan_in = w;
        }
        let out = WeightNormDense::new(fan_in, cfg.feature_dim, rng);
        Ok(Generator {
            hidden,
            out,
            leaky_slope: cfg.leaky_slope,
            dropout: FeatureDropout::new(cfg.dropout_rate)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.out.fan_out()
    }

    fn layers(&self) -> Vec<&WeightNormDense> {
        self.hidden.iter().chain(std::iter::once(&self.out)).collect()
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        named_params("g", &self.layers())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.out))
            .flat_map(|l| [&mut l.direction, &mut l.gain, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundNetwork {
        bind_all(&self.layers(), tape, trainable)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundNetwork,
        z: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (_, cols) = tape.value(z).dims2()?;
        if cols != self.latent_dim() {
            return Err(Error::Shape {
                op: "generator latent",
                lhs: tape.value(z).shape().to_vec(),
                rhs: vec![self.latent_dim()],
            });
        }
        let mut h = z;
        for (layer, b) in self.hidden.iter().zip(&bound.layers) {
            h = layer.forward(tape, b, h)?;
            h = tape.leaky_relu(h, self.leaky_slope)?;
            h = self.dropout.apply(tape, h, mode, rng)?;
        }
        let h = self.out.forward(tape, &bound.layers[self.hidden.len()], h)?;
        tape.tanh(h)
    }

    /// Samples without recording gradients.
    pub fn generate(&self, z: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &bound, zv, mode, rng)?;
        Ok(tape.value(out).clone())
    }
}

/// I.i.d. standard normal latent codes, `batch × latent_dim`.
pub fn sample_latent(batch: usize, latent_dim: usize, rng: &mut Rng) -> Result<Tensor> {
    if batch == 0 || latent_dim == 0 {
        return Err(Error::contract("latent batch and dimension must be positive"));
    }
    Tensor::matrix(batch, latent_dim, standard_normals(rng, batch * latent_dim))
}
