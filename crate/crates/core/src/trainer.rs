//! Alternating minibatch training of the discriminator and generator.
//!
//! Each step takes one Adam update of the discriminator on the configured
//! discriminator objective, then (when the adversarial game is on) one update
//! of the generator on fresh latent samples. Labeled epochs drive the loop;
//! unlabeled rows cycle as an independent shuffled stream.
//!
//! All randomness comes from sub-streams of `TrainConfig::seed`:
//! `trainer/init-d`, `trainer/init-g`, `trainer/split`, `trainer/labeled`,
//! `trainer/unlabeled` and `trainer/step`.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{csv_err, Error, Result};
use crate::losses::{discriminator_loss, generator_loss, LossConfig, LossReport};
use crate::metrics::{pr_auc, pr_curve, ScoredCohort};
use crate::network::{predict_proba, sample_latent, Discriminator, Generator, Mode, NetworkConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{substream, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Shared size of the labeled, unlabeled and generated minibatches.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Validation PR-AUC is logged every this many epochs; 0 disables it.
    pub eval_every: usize,
    /// Share of the labeled rows held out for validation logging.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            loss: LossConfig::default(),
            eval_every: 10,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        self.adam().validate()?;
        self.loss.validate()
    }
}

/// Feature matrices and labels for one training run.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub labeled: Tensor,
    pub labels: Vec<u8>,
    pub unlabeled: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub pr_auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<(usize, LossReport)>,
    pub evals: Vec<EvalRecord>,
    /// Labeled row indices held out for validation.
    pub validation_rows: Vec<usize>,
    /// Every labeled row index that appeared in a training minibatch.
    pub trained_rows: BTreeSet<usize>,
}

impl TrainLog {
    pub fn write_step_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "term", "value"]).map_err(|e| csv_err(path, e))?;
        for (step, report) in &self.steps {
            for t in &report.terms {
                w.write_record([step.to_string(), t.name.clone(), format!("{:?}", t.value)])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_eval_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["epoch", "pr_auc"]).map_err(|e| csv_err(path, e))?;
        for e in &self.evals {
            w.write_record([e.epoch.to_string(), format!("{:?}", e.pr_auc)])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Freshly initialized networks for `seed`.
pub fn init_models(net: &NetworkConfig, seed: u64) -> Result<(Discriminator, Generator)> {
    let d = Discriminator::new(net, &mut substream(seed, "trainer/init-d"))?;
    let g = Generator::new(net, &mut substream(seed, "trainer/init-g"))?;
    Ok((d, g))
}

/// Networks plus their optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub d: Discriminator,
    pub g: Generator,
    d_opt: AdamState,
    g_opt: AdamState,
    cfg: TrainConfig,
}

fn grads_in_order(grads: &Gradients, vars: &[Var], params: &[(String, &Tensor)]) -> Vec<Tensor> {
    vars.iter()
        .zip(params)
        .map(|(&v, (_, p))| grads.get_or_zeros(v, p))
        .collect()
}

impl Trainer {
    pub fn new(d: Discriminator, g: Generator, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if d.input_dim() != g.output_dim() {
            return Err(Error::Shape {
                op: "generator output vs discriminator input",
                lhs: vec![g.output_dim()],
                rhs: vec![d.input_dim()],
            });
        }
        let d_opt = AdamState::new(d.params().into_iter().map(|(_, t)| t));
        let g_opt = AdamState::new(g.params().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            d,
            g,
            d_opt,
            g_opt,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(
        &mut self,
        labeled: &Tensor,
        labels: &[u8],
        unlabeled: Option<&Tensor>,
        rng: &mut Rng,
    ) -> Result<LossReport> {
        let loss = &self.cfg.loss;
        let adam = self.cfg.adam();
        let batch = labeled.rows();
        let needs_unlabeled = loss.use_unlabeled || loss.use_ent || loss.use_fm;
        let unlabeled = match (needs_unlabeled, unlabeled) {
            (true, None) => return Err(Error::contract("config uses unlabeled data but none was given")),
            (true, Some(u)) => Some(u),
            (false, _) => None,
        };

        // discriminator
        let mut tape = Tape::new();
        let bd = self.d.bind(&mut tape, true);
        let xl = tape.constant(labeled.clone());
        let out_l = self.d.forward(&mut tape, &bd, xl, Mode::Train, rng)?;
        let out_u = match unlabeled {
            Some(u) if loss.use_unlabeled || loss.use_ent => {
                let xu = tape.constant(u.clone());
                Some(self.d.forward(&mut tape, &bd, xu, Mode::Train, rng)?.logits)
            }
            _ => None,
        };
        let out_f = if loss.use_generator {
            let z = sample_latent(batch, self.g.latent_dim(), rng)?;
            let fake = self.g.generate(&z, Mode::Train, rng)?;
            let xf = tape.constant(fake);
            Some(self.d.forward(&mut tape, &bd, xf, Mode::Train, rng)?.logits)
        } else {
            None
        };
        let (d_loss, mut report) = discriminator_loss(&mut tape, loss, out_l.logits, out_u, out_f, labels)?;
        if !report.d_total.is_finite() {
            return Err(Error::Numerical(format!(
                "discriminator loss is {} ({:?})",
                report.d_total, report.terms
            )));
        }
        let grads = tape.backward(d_loss)?;
        let grads = grads_in_order(&grads, &bd.vars(), &self.d.params());
        self.d_opt.step(&mut self.d.params_mut(), &grads, &adam)?;

        if !loss.use_generator {
            return Ok(report);
        }

        // generator, against the updated discriminator
        let mut tape = Tape::new();
        let bg = self.g.bind(&mut tape, true);
        let bd = self.d.bind(&mut tape, false);
        let z = sample_latent(batch, self.g.latent_dim(), rng)?;
        let zv = tape.constant(z);
        let fake = self.g.forward(&mut tape, &bg, zv, Mode::Train, rng)?;
        let out_f = self.d.forward(&mut tape, &bd, fake, Mode::Train, rng)?;
        let f_unl = match unlabeled {
            Some(u) if loss.use_fm => {
                let xu = tape.constant(u.clone());
                Some(self.d.forward(&mut tape, &bd, xu, Mode::Train, rng)?.features)
            }
            _ => None,
        };
        let f_lab = if loss.use_pt {
            let xl = tape.constant(labeled.clone());
            Some(self.d.forward(&mut tape, &bd, xl, Mode::Train, rng)?.features)
        } else {
            None
        };
        let (g_loss, g_report) = generator_loss(&mut tape, loss, &out_f, f_unl, f_lab)?;
        if !g_report.g_total.is_finite() {
            return Err(Error::Numerical(format!("generator loss is {}", g_report.g_total)));
        }
        let grads = tape.backward(g_loss)?;
        let grads = grads_in_order(&grads, &bg.vars(), &self.g.params());
        self.g_opt.step(&mut self.g.params_mut(), &grads, &adam)?;

        report = report.merge(g_report);
        Ok(report)
    }
}

/// Row indices cycling through a shuffled order, reshuffled on exhaustion.
struct RowStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl RowStream {
    fn new(n: usize, rng: Rng) -> Self {
        let mut s = RowStream {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.reshuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Seeded split of `0..n` into (train, validation) row indices.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "trainer/split"));
    let n_val = ((n as f64) * fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub d: Discriminator,
    pub g: Generator,
    pub log: TrainLog,
}

/// Runs `cfg.epochs` epochs of `⌈n_train / batch⌉` steps each.
pub fn train(d: Discriminator, g: Generator, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let n = data.labeled.rows();
    if n == 0 || data.labels.is_empty() {
        return Err(Error::contract("training needs a non-empty labeled set"));
    }
    if data.labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} labeled rows", data.labels.len())));
    }
    let mut trainer = Trainer::new(d, g, cfg.clone())?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            d: trainer.d,
            g: trainer.g,
            log,
        });
    }

    let (train_rows, val_rows) = validation_split(n, cfg.validation_fraction, cfg.seed);
    log.validation_rows = val_rows.clone();
    let val = if val_rows.is_empty() {
        None
    } else {
        let labels: Vec<u8> = val_rows.iter().map(|&i| data.labels[i]).collect();
        Some((data.labeled.select_rows(&val_rows)?, labels))
    };

    let mut labeled_rng = substream(cfg.seed, "trainer/labeled");
    let mut unlabeled_stream = data
        .unlabeled
        .as_ref()
        .map(|u| RowStream::new(u.rows(), substream(cfg.seed, "trainer/unlabeled")));
    let mut step_rng = substream(cfg.seed, "trainer/step");

    let b = cfg.batch_size;
    let n_train = train_rows.len();
    let steps_per_epoch = n_train.div_ceil(b);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order = train_rows.clone();
        order.shuffle(&mut labeled_rng);
        for k in 0..steps_per_epoch {
            let rows: Vec<usize> = (0..b).map(|i| order[(k * b + i) % n_train]).collect();
            log.trained_rows.extend(rows.iter().copied());
            let xl = data.labeled.select_rows(&rows)?;
            let yl: Vec<u8> = rows.iter().map(|&i| data.labels[i]).collect();
            let xu = match (&mut unlabeled_stream, &data.unlabeled) {
                (Some(s), Some(u)) => Some(u.select_rows(&s.take(b))?),
                _ => None,
            };
            let report = trainer
                .train_step(&xl, &yl, xu.as_ref(), &mut step_rng)
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("step {step}: {msg}")),
                    other => other,
                })?;
            log.steps.push((step, report));
            step += 1;
        }
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
            if let Some((x, y)) = &val {
                if y.contains(&1) {
                    let p = predict_proba(&trainer.d, x)?;
                    let cohort = ScoredCohort::new(p.into_values(), y.clone())?;
                    log.evals.push(EvalRecord {
                        epoch,
                        pr_auc: pr_auc(&pr_curve(&cohort)?),
                    });
                }
            }
        }
    }
    Ok(TrainOutcome {
        d: trainer.d,
        g: trainer.g,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normals};

    fn net() -> NetworkConfig {
        NetworkConfig {
            feature_dim: 4,
            latent_dim: 3,
            d_hidden: vec![8, 6, 6, 5, 4],
            g_hidden: vec![4, 5, 6, 6, 8],
            ..NetworkConfig::default()
        }
    }

    fn toy(n: usize, seed: u64) -> TrainingData {
        let mut rng = seeded(seed);
        let noise = standard_normals(&mut rng, n * 4);
        let mut x = Vec::with_capacity(n * 4);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 4 == 0) as u8;
            let centre = if label == 1 { 0.5 } else { -0.5 };
            for k in 0..4 {
                x.push((centre + 0.15 * noise[i * 4 + k]).clamp(-1.0, 1.0));
            }
            y.push(label);
        }
        let u = standard_normals(&mut rng, 3 * n * 4).into_iter().map(|v| (0.5 * v).tanh()).collect();
        TrainingData {
            labeled: Tensor::matrix(n, 4, x).unwrap(),
            labels: y,
            unlabeled: Some(Tensor::matrix(3 * n, 4, u).unwrap()),
        }
    }

    fn cfg(loss: LossConfig) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-3,
            loss,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn nn_d_step_leaves_generator_untouched() {
        let (d, g) = init_models(&net(), 1).unwrap();
        let g_before = g.clone();
        let mut t = Trainer::new(d, g, cfg(LossConfig::nn_d())).unwrap();
        let data = toy(16, 2);
        let rows: Vec<usize> = (0..8).collect();
        let x = data.labeled.select_rows(&rows).unwrap();
        let report = t.train_step(&x, &data.labels[..8], None, &mut seeded(3)).unwrap();
        assert_eq!(t.g, g_before);
        assert_eq!(report.terms.len(), 1);
    }

    #[test]
    fn weight_norm_rows_track_gains_after_updates() {
        let (d, g) = init_models(&net(), 1).unwrap();
        let mut t = Trainer::new(d, g, cfg(LossConfig::ssl_fm_pt())).unwrap();
        let data = toy(16, 2);
        let rows: Vec<usize> = (0..8).collect();
        let x = data.labeled.select_rows(&rows).unwrap();
        let u = data.unlabeled.as_ref().unwrap().select_rows(&rows).unwrap();
        for _ in 0..5 {
            t.train_step(&x, &data.labels[..8], Some(&u), &mut seeded(3)).unwrap();
        }
        for layer in t.d.hidden.iter().chain(t.g.hidden.iter()) {
            let w = layer.effective_weight();
            for i in 0..layer.fan_out() {
                let norm = w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - layer.gain.values()[i].abs()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn every_arm_trains_and_logs_its_terms() {
        let data = toy(20, 4);
        for (name, loss) in LossConfig::ablation_arms() {
            let (d, g) = init_models(&net(), 5).unwrap();
            let c = cfg(loss);
            let out = train(d, g, &data, &c).unwrap();
            let steps = c.epochs * (20 - 2usize).div_ceil(8);
            assert_eq!(out.log.steps.len(), steps, "{name}");
            let terms = out.log.steps[0].1.terms.len();
            let expected = match name {
                "nn_d" => 1,
                "original_gan" => 3,
                "ssl_fm" => 4,
                "ssl_fm_pt" | "ssl_fm_ent" => 5,
                _ => 6,
            };
            assert_eq!(terms, expected, "{name}");
            assert!(out.log.steps.iter().all(|(_, r)| r.d_total.is_finite()));
        }
    }

    #[test]
    fn validation_rows_never_train() {
        let data = toy(40, 6);
        let (d, g) = init_models(&net(), 7).unwrap();
        let out = train(d, g, &data, &cfg(LossConfig::ssl_fm())).unwrap();
        assert_eq!(out.log.validation_rows.len(), 4);
        for r in &out.log.validation_rows {
            assert!(!out.log.trained_rows.contains(r));
        }
        assert_eq!(out.log.trained_rows.len(), 36);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = toy(12, 8);
        let (d, g) = init_models(&net(), 9).unwrap();
        let c = TrainConfig {
            epochs: 0,
            ..cfg(LossConfig::ssl_fm_pt())
        };
        let out = train(d.clone(), g.clone(), &data, &c).unwrap();
        assert_eq!(out.d, d);
        assert_eq!(out.g, g);
        assert!(out.log.steps.is_empty() && out.log.evals.is_empty());
    }

    #[test]
    fn same_seed_same_run() {
        let data = toy(24, 10);
        let run = || {
            let (d, g) = init_models(&net(), 11).unwrap();
            train(d, g, &data, &cfg(LossConfig::ssl_fm_pt_ent())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.d.to_checkpoint().to_bytes(), b.d.to_checkpoint().to_bytes());
        assert_eq!(a.g, b.g);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn empty_labeled_set_is_rejected() {
        let (d, g) = init_models(&net(), 1).unwrap();
        let data = TrainingData {
            labeled: Tensor::zeros(&[1, 4]),
            labels: vec![],
            unlabeled: None,
        };
        assert!(matches!(train(d, g, &data, &cfg(LossConfig::nn_d())), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_loss_aborts_with_numerical_error() {
        let (mut d, g) = init_models(&net(), 1).unwrap();
        d.head.gain.values_mut()[0] = f64::NAN;
        let data = toy(16, 2);
        let err = train(d, g, &data, &cfg(LossConfig::nn_d())).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn supervised_loss_collapses_on_separable_toy() {
        let data = toy(64, 12);
        let (d, g) = init_models(&net(), 13).unwrap();
        let c = TrainConfig {
            epochs: 25,
            batch_size: 8,
            learning_rate: 2e-3,
            validation_fraction: 0.0,
            eval_every: 0,
            ..cfg(LossConfig::nn_d())
        };
        let full_set_loss = |d: &Discriminator| {
            let logits = d.evaluate(&data.labeled).unwrap().logits;
            let mut tape = Tape::new();
            let v = tape.constant(logits);
            let l = crate::losses::loss_supervised(&mut tape, v, &data.labels).unwrap();
            tape.value(l).item()
        };
        let first = full_set_loss(&d);
        let out = train(d, g, &data, &c).unwrap();
        assert_eq!(out.log.steps.len(), 200);
        let last = full_set_loss(&out.d);
        assert!(last < 0.1 * first, "{first} -> {last}");
    }
}
