//! Training objectives for the semi-supervised GAN.
//!
//! The discriminator models three classes (negative, positive, generated)
//! with the generated-class logit fixed at zero, so every class probability is
//! computed from `(l0, l1, 0)` through log-sum-exp:
//!
//! * `log p(y | x, y ≤ 1) = l_y − lse(l0, l1)`
//! * `log p(y ≤ 1 | x)    = lse(l0, l1) − lse(l0, l1, 0)`
//! * `log p(y = 2 | x)    = −lse(l0, l1, 0)`
//!
//! The generator combines feature matching with a two-part pull-away penalty
//! on squared cosine similarities of discriminator features.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::DiscriminatorVars;
use crate::tensor::Tensor;

/// Which terms enter the two objectives, and their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Adversarial game on: generated samples feed the discriminator and the
    /// generator is trained.
    pub use_generator: bool,
    pub use_unlabeled: bool,
    pub use_fm: bool,
    pub use_pt: bool,
    pub use_ent: bool,
    /// May be negative to flip the sign of the entropy term.
    pub ent_weight: f64,
    pub pt_weight: f64,
    pub fm_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::ssl_fm_pt()
    }
}

impl LossConfig {
    /// Supervised cross-entropy only.
    pub fn nn_d() -> Self {
        LossConfig {
            use_generator: false,
            use_unlabeled: false,
            use_fm: false,
            use_pt: false,
            use_ent: false,
            ent_weight: 1.0,
            pt_weight: 1.0,
            fm_weight: 1.0,
        }
    }

    /// Labeled data plus a plain adversarial game, no unlabeled branch.
    pub fn original_gan() -> Self {
        LossConfig {
            use_generator: true,
            ..Self::nn_d()
        }
    }

    pub fn ssl_fm() -> Self {
        LossConfig {
            use_generator: true,
            use_unlabeled: true,
            use_fm: true,
            ..Self::nn_d()
        }
    }

    pub fn ssl_fm_pt() -> Self {
        LossConfig {
            use_pt: true,
            ..Self::ssl_fm()
        }
    }

    pub fn ssl_fm_ent() -> Self {
        LossConfig {
            use_ent: true,
            ..Self::ssl_fm()
        }
    }

    pub fn ssl_fm_pt_ent() -> Self {
        LossConfig {
            use_ent: true,
            ..Self::ssl_fm_pt()
        }
    }

    /// The six ablation settings, in table order.
    pub fn ablation_arms() -> Vec<(&'static str, LossConfig)> {
        vec![
            ("nn_d", Self::nn_d()),
            ("original_gan", Self::original_gan()),
            ("ssl_fm", Self::ssl_fm()),
            ("ssl_fm_pt", Self::ssl_fm_pt()),
            ("ssl_fm_ent", Self::ssl_fm_ent()),
            ("ssl_fm_pt_ent", Self::ssl_fm_pt_ent()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("fm_weight", self.fm_weight), ("pt_weight", self.pt_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {w}")));
            }
        }
        if !self.ent_weight.is_finite() {
            return Err(Error::Config("ent_weight must be finite".into()));
        }
        if (self.use_fm || self.use_pt) && !self.use_generator {
            return Err(Error::Config("feature matching and pull-away need use_generator".into()));
        }
        if (self.use_fm || self.use_ent) && !self.use_unlabeled {
            return Err(Error::Config("feature matching and entropy need use_unlabeled".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Itemized loss values of one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    pub d_total: f64,
    pub g_total: f64,
}

impl LossReport {
    fn push(&mut self, name: &str, weight: f64, value: f64) {
        self.terms.push(LossTerm {
            name: name.to_string(),
            weight,
            value,
        });
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    /// Joins a discriminator report and a generator report.
    pub fn merge(mut self, other: LossReport) -> LossReport {
        self.terms.extend(other.terms);
        self.d_total += other.d_total;
        self.g_total += other.g_total;
        self
    }

    /// Weighted sum of the terms whose name starts with `prefix`.
    pub fn weighted_sum(&self, prefix: &str) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .map(|t| t.weight * t.value)
            .sum()
    }
}

fn with_zero_logit(tape: &mut Tape, logits: Var) -> Result<Var> {
    let rows = tape.value(logits).rows();
    let zero = tape.constant(Tensor::zeros(&[rows, 1]));
    tape.concat_cols(logits, zero)
}

fn check_binary_logits(tape: &Tape, logits: Var) -> Result<usize> {
    let (rows, cols) = tape.value(logits).dims2()?;
    if cols != 2 {
        return Err(Error::Shape {
            op: "binary logits",
            lhs: tape.value(logits).shape().to_vec(),
            rhs: vec![rows, 2],
        });
    }
    Ok(rows)
}

/// `−mean log p(y | x, y ≤ 1)` over a labeled batch.
pub fn loss_supervised(tape: &mut Tape, logits: Var, labels: &[u8]) -> Result<Var> {
    let rows = check_binary_logits(tape, logits)?;
    if labels.len() != rows {
        return Err(Error::contract(format!("{} labels for {rows} logit rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::contract(format!("label {bad} is not in {{0, 1}}")));
    }
    let idx: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let picked = tape.pick(logits, &idx)?;
    let lse = tape.logsumexp_rows(logits)?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

/// `−mean log p(y ≤ 1 | x)`: unlabeled samples belong to a real class.
pub fn loss_unlabeled_real(tape: &mut Tape, logits: Var) -> Result<Var> {
    check_binary_logits(tape, logits)?;
    let lse2 = tape.logsumexp_rows(logits)?;
    let full = with_zero_logit(tape, logits)?;
    let lse3 = tape.logsumexp_rows(full)?;
    let d = tape.sub(lse3, lse2)?;
    tape.mean(d)
}

/// `−mean log p(y = 2 | x) = mean lse(l0, l1, 0)` on generated samples.
pub fn loss_generated_fake(tape: &mut Tape, logits: Var) -> Result<Var> {
    check_binary_logits(tape, logits)?;
    let full = with_zero_logit(tape, logits)?;
    let lse3 = tape.logsumexp_rows(full)?;
    tape.mean(lse3)
}

/// `mean Σ_i p_i log p_i` with `p` the softmax over the two real classes.
pub fn loss_entropy(tape: &mut Tape, logits: Var) -> Result<Var> {
    check_binary_logits(tape, logits)?;
    let p = tape.softmax_rows(logits)?;
    let lse = tape.logsumexp_rows(logits)?;
    let logp = tape.sub(logits, lse)?;
    let plogp = tape.mul(p, logp)?;
    let per_row = tape.sum_cols(plogp)?;
    tape.mean(per_row)
}

/// `‖mean(f_fake) − mean(f_real)‖²`.
pub fn loss_feature_matching(tape: &mut Tape, f_fake: Var, f_real: Var) -> Result<Var> {
    let a = tape.value(f_fake).cols();
    let b = tape.value(f_real).cols();
    if a != b {
        return Err(Error::Shape {
            op: "feature matching",
            lhs: tape.value(f_fake).shape().to_vec(),
            rhs: tape.value(f_real).shape().to_vec(),
        });
    }
    let mf = tape.mean_rows(f_fake)?;
    let mr = tape.mean_rows(f_real)?;
    let diff = tape.sub(mf, mr)?;
    let sq = tape.square(diff)?;
    tape.sum(sq)
}

fn unit_rows(tape: &mut Tape, f: Var) -> Result<Var> {
    let n = tape.row_norm(f)?;
    tape.div(f, n)
}

/// The two pull-away terms: mean squared cosine over ordered pairs of distinct
/// generated rows, and over all (generated, labeled) pairs.
pub fn pull_away_terms(tape: &mut Tape, f_fake: Var, f_labeled: Var) -> Result<(Var, Var)> {
    let (b, d) = tape.value(f_fake).dims2()?;
    let (m, d2) = tape.value(f_labeled).dims2()?;
    if d != d2 {
        return Err(Error::Shape {
            op: "pull-away",
            lhs: vec![b, d],
            rhs: vec![m, d2],
        });
    }
    if b < 2 {
        return Err(Error::contract("pull-away needs at least two generated rows"));
    }
    let uf = unit_rows(tape, f_fake)?;
    let ufl = unit_rows(tape, f_labeled)?;

    let uft = tape.transpose(uf)?;
    let gram = tape.matmul(uf, uft)?;
    let gram = tape.square(gram)?;
    let mut mask = vec![1.0; b * b];
    (0..b).for_each(|i| mask[i * b + i] = 0.0);
    let mask = tape.constant(Tensor::matrix(b, b, mask)?);
    let off = tape.mul(gram, mask)?;
    let off = tape.sum(off)?;
    let term1 = tape.scale(off, 1.0 / (b * (b - 1)) as f64)?;

    let uflt = tape.transpose(ufl)?;
    let cross = tape.matmul(uf, uflt)?;
    let cross = tape.square(cross)?;
    let term2 = tape.mean(cross)?;
    Ok((term1, term2))
}

pub fn loss_pull_away(tape: &mut Tape, f_fake: Var, f_labeled: Var) -> Result<Var> {
    let (t1, t2) = pull_away_terms(tape, f_fake, f_labeled)?;
    tape.add(t1, t2)
}

fn weighted_total(tape: &mut Tape, parts: &[(Var, f64)]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &(v, w) in parts {
        let term = if w == 1.0 { v } else { tape.scale(v, w)? };
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::contract("objective has no active terms"))
}

/// Discriminator objective. `unlabeled` is required when the config uses the
/// unlabeled branch, `fake` when it uses the generator.
pub fn discriminator_loss(
    tape: &mut Tape,
    cfg: &LossConfig,
    labeled: Var,
    unlabeled: Option<Var>,
    fake: Option<Var>,
    labels: &[u8],
) -> Result<(Var, LossReport)> {
    let mut report = LossReport::default();
    let mut parts = Vec::new();

    let sup = loss_supervised(tape, labeled, labels)?;
    parts.push((sup, 1.0));
    report.push("d/supervised", 1.0, tape.value(sup).item());

    if cfg.use_unlabeled || cfg.use_ent {
        let u = unlabeled.ok_or_else(|| Error::contract("config needs unlabeled logits"))?;
        if cfg.use_unlabeled {
            let lu = loss_unlabeled_real(tape, u)?;
            parts.push((lu, 1.0));
            report.push("d/unlabeled", 1.0, tape.value(lu).item());
        }
        if cfg.use_ent {
            let le = loss_entropy(tape, u)?;
            parts.push((le, cfg.ent_weight));
            report.push("d/entropy", cfg.ent_weight, tape.value(le).item());
        }
    }
    if cfg.use_generator {
        let f = fake.ok_or_else(|| Error::contract("config needs generated-sample logits"))?;
        let lg = loss_generated_fake(tape, f)?;
        parts.push((lg, 1.0));
        report.push("d/fake", 1.0, tape.value(lg).item());
    }

    let total = weighted_total(tape, &parts)?;
    report.d_total = tape.value(total).item();
    Ok((total, report))
}

/// Generator objective: feature matching plus pull-away, or the
/// non-saturating `−mean log p(y ≤ 1 | G(z))` when both are disabled.
pub fn generator_loss(
    tape: &mut Tape,
    cfg: &LossConfig,
    fake: &DiscriminatorVars,
    f_unlabeled: Option<Var>,
    f_labeled: Option<Var>,
) -> Result<(Var, LossReport)> {
    let mut report = LossReport::default();
    let mut parts = Vec::new();
    if cfg.use_fm {
        let fu = f_unlabeled.ok_or_else(|| Error::contract("feature matching needs unlabeled features"))?;
        let fm = loss_feature_matching(tape, fake.features, fu)?;
        parts.push((fm, cfg.fm_weight));
        report.push("g/feature_matching", cfg.fm_weight, tape.value(fm).item());
    }
    if cfg.use_pt {
        let fl = f_labeled.ok_or_else(|| Error::contract("pull-away needs labeled features"))?;
        let pt = loss_pull_away(tape, fake.features, fl)?;
        parts.push((pt, cfg.pt_weight));
        report.push("g/pull_away", cfg.pt_weight, tape.value(pt).item());
    }
    if parts.is_empty() {
        let adv = loss_unlabeled_real(tape, fake.logits)?;
        parts.push((adv, 1.0));
        report.push("g/adversarial", 1.0, tape.value(adv).item());
    }
    let total = weighted_total(tape, &parts)?;
    report.g_total = tape.value(total).item();
    Ok((total, report))
}
