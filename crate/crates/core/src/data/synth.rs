//! Synthetic longitudinal claims cohorts.
//!
//! Every symptom has a background event rate (events per year) drawn
//! log-uniformly once per cohort. Each patient belongs to one comorbidity
//! cluster that raises the rates of a handful of symptoms, and carries a
//! log-normal healthcare-utilization factor that scales all of their rates.
//! Positives additionally express each disease-relevant symptom with
//! probability `relevant_expression`, at `relevant_rate_multiplier` times the
//! background rate. Events are Poisson in count and uniform in time over the
//! patient's observation window.
//!
//! Labeled positives carry a diagnosis date at the end of their window, plus
//! `followup_days` of post-diagnosis events that featurization must ignore.
//! Unlabeled and test patients carry no label and no diagnosis date; their
//! truth is returned separately.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::matching::match_negatives;
use super::records::{Day, Event, Label, PatientRecord};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub symptoms: usize,
    pub relevant_symptoms: usize,
    pub labeled_positives: usize,
    /// Negatives matched per labeled positive.
    pub match_ratio: usize,
    /// Candidate negatives the matched ones are drawn from.
    pub negative_pool: usize,
    pub unlabeled: usize,
    pub test: usize,
    /// Positive share of the unlabeled and test cohorts.
    pub prevalence: f64,
    /// 2010-01-01
    pub start_day: Day,
    pub window_days_min: u32,
    pub window_days_max: u32,
    pub followup_days: u32,
    pub background_rate_min: f64,
    pub background_rate_max: f64,
    pub relevant_rate_multiplier: f64,
    pub relevant_expression: f64,
    /// Positives present as one of this many subtypes; the relevant symptoms
    /// are split evenly between subtypes.
    pub disease_subtypes: usize,
    pub clusters: usize,
    pub cluster_symptoms: usize,
    pub cluster_rate_multiplier: f64,
    pub utilization_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            symptoms: 265,
            relevant_symptoms: 20,
            labeled_positives: 500,
            match_ratio: 3,
            negative_pool: 6000,
            unlabeled: 20_000,
            test: 50_000,
            prevalence: 0.013,
            start_day: 14_610,
            window_days_min: 365,
            window_days_max: 1095,
            followup_days: 180,
            background_rate_min: 0.005,
            background_rate_max: 0.3,
            relevant_rate_multiplier: 6.0,
            relevant_expression: 0.6,
            disease_subtypes: 1,
            clusters: 6,
            cluster_symptoms: 12,
            cluster_rate_multiplier: 4.0,
            utilization_sigma: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad("prevalence must lie in (0, 1)");
        }
        if self.relevant_symptoms > self.symptoms || self.cluster_symptoms > self.symptoms {
            return bad("relevant_symptoms and cluster_symptoms must not exceed symptoms");
        }
        if self.window_days_min == 0 || self.window_days_min > self.window_days_max {
            return bad("need 0 < window_days_min <= window_days_max");
        }
        if !(self.background_rate_min > 0.0 && self.background_rate_min <= self.background_rate_max) {
            return bad("need 0 < background_rate_min <= background_rate_max");
        }
        if !(self.relevant_rate_multiplier >= 0.0 && self.cluster_rate_multiplier >= 0.0) {
            return bad("rate multipliers must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.relevant_expression) {
            return bad("relevant_expression must lie in [0, 1]");
        }
        if self.utilization_sigma < 0.0 {
            return bad("utilization_sigma must be >= 0");
        }
        if self.disease_subtypes == 0 || self.disease_subtypes > self.relevant_symptoms.max(1) {
            return bad("disease_subtypes must lie in 1..=relevant_symptoms");
        }
        if self.clusters == 0 {
            return bad("clusters must be >= 1");
        }
        if self.negative_pool < self.match_ratio * self.labeled_positives {
            return bad("negative_pool is smaller than match_ratio * labeled_positives");
        }
        Ok(())
    }

    /// Positives in a cohort of `n` at the configured prevalence.
    pub fn positives_in(&self, n: usize) -> usize {
        (n as f64 * self.prevalence).round() as usize
    }
}

/// Ground truth for patients whose records carry no label.
pub type Truth = Vec<(String, u8)>;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCohort {
    pub labeled: Vec<PatientRecord>,
    pub unlabeled: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub unlabeled_truth: Truth,
    pub test_truth: Truth,
}

/// Cohort-wide parameters shared by every split.
struct World {
    background: Vec<f64>,
    relevant: Vec<usize>,
    cluster_sets: Vec<Vec<usize>>,
}

impl World {
    fn new(cfg: &SynthConfig) -> World {
        let mut rng = substream(cfg.seed, "synth/world");
        let (lo, hi) = (cfg.background_rate_min.ln(), cfg.background_rate_max.ln());
        let background = (0..cfg.symptoms).map(|_| rng.gen_range(lo..=hi).exp()).collect();
        let mut all: Vec<usize> = (0..cfg.symptoms).collect();
        all.shuffle(&mut rng);
        let relevant = all[..cfg.relevant_symptoms].to_vec();
        let cluster_sets = (0..cfg.clusters)
            .map(|_| {
                all.shuffle(&mut rng);
                all[..cfg.cluster_symptoms].to_vec()
            })
            .collect();
        World {
            background,
            relevant,
            cluster_sets,
        }
    }
}

struct Draw {
    positive: bool,
    /// Diagnosed positives get a diagnosis date and follow-up events.
    diagnosed: bool,
}

fn patient(cfg: &SynthConfig, world: &World, id: String, draw: Draw, rng: &mut Rng) -> Result<PatientRecord> {
    let window = rng.gen_range(cfg.window_days_min..=cfg.window_days_max) as i64;
    let start = cfg.start_day + rng.gen_range(0..=365);
    let end = start + window;
    let age = rng.gen_range(18..=85u32);
    let gender = rng.gen_range(0..=1u8);

    let mut rate = world.background.clone();
    let util = if cfg.utilization_sigma > 0.0 {
        LogNormal::new(0.0, cfg.utilization_sigma)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng)
    } else {
        1.0
    };
    let cluster = rng.gen_range(0..cfg.clusters);
    for &j in &world.cluster_sets[cluster] {
        rate[j] *= cfg.cluster_rate_multiplier;
    }
    // drawn for every patient so both classes consume the stream alike
    let subtype = rng.gen_range(0..cfg.disease_subtypes);
    let expressed: Vec<bool> = world
        .relevant
        .iter()
        .map(|_| rng.gen_bool(cfg.relevant_expression))
        .collect();
    if draw.positive {
        for (i, (&j, &on)) in world.relevant.iter().zip(&expressed).enumerate() {
            if on && i * cfg.disease_subtypes / world.relevant.len() == subtype {
                rate[j] *= cfg.relevant_rate_multiplier;
            }
        }
    }

    let mut events = Vec::new();
    let mut emit = |from: Day, days: i64, rate: f64, rng: &mut Rng, symptom: usize| -> Result<()> {
        let mean = rate * util * days as f64 / 365.0;
        if mean <= 0.0 {
            return Ok(());
        }
        let n = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(rng) as usize;
        for _ in 0..n {
            events.push(Event {
                day: from + rng.gen_range(0..days),
                symptom,
            });
        }
        Ok(())
    };
    for (j, &r) in rate.iter().enumerate() {
        emit(start, window, r, rng, j)?;
    }
    let (dx, label) = match (draw.positive, draw.diagnosed) {
        (true, true) => {
            let follow = cfg.followup_days as i64;
            if follow > 0 {
                for (j, &r) in rate.iter().enumerate() {
                    emit(end, follow, r, rng, j)?;
                }
            }
            (Some(end), Label::Positive)
        }
        (false, true) => (None, Label::Negative),
        _ => (None, Label::Unlabeled),
    };
    PatientRecord::new(id, age, gender, events, dx, label)
}

/// An unlabeled cohort of `n` with exactly `positives_in(n)` positives in shuffled positions.
fn unlabeled_cohort(
    cfg: &SynthConfig,
    world: &World,
    n: usize,
    prefix: &str,
    rng: &mut Rng,
) -> Result<(Vec<PatientRecord>, Truth)> {
    let mut classes = vec![false; n];
    for c in classes.iter_mut().take(cfg.positives_in(n)) {
        *c = true;
    }
    classes.shuffle(rng);
    let mut records = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (i, &positive) in classes.iter().enumerate() {
        let id = format!("{prefix}{i:06}");
        truth.push((id.clone(), positive as u8));
        records.push(patient(cfg, world, id, Draw { positive, diagnosed: false }, rng)?);
    }
    Ok((records, truth))
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let world = World::new(cfg);

    let mut rng = substream(cfg.seed, "synth/labeled");
    let positives = (0..cfg.labeled_positives)
        .map(|i| {
            let d = Draw { positive: true, diagnosed: true };
            patient(cfg, &world, format!("LP{i:06}"), d, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = (0..cfg.negative_pool)
        .map(|i| {
            let d = Draw { positive: false, diagnosed: true };
            patient(cfg, &world, format!("LN{i:06}"), d, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut match_rng = substream(cfg.seed, "synth/match");
    let mut labeled = match_negatives(&positives, &pool, cfg.match_ratio, &mut match_rng)?;
    labeled.shuffle(&mut match_rng);

    let (unlabeled, unlabeled_truth) =
        unlabeled_cohort(cfg, &world, cfg.unlabeled, "U", &mut substream(cfg.seed, "synth/unlabeled"))?;
    let (test, test_truth) = unlabeled_cohort(cfg, &world, cfg.test, "T", &mut substream(cfg.seed, "synth/test"))?;

    Ok(SynthCohort {
        labeled,
        unlabeled,
        test,
        unlabeled_truth,
        test_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            symptoms: 30,
            relevant_symptoms: 5,
            labeled_positives: 20,
            negative_pool: 100,
            unlabeled: 300,
            test: 1000,
            prevalence: 0.05,
            cluster_symptoms: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sizes_and_labels() {
        let c = synth_generate(&small()).unwrap();
        assert_eq!(c.labeled.len(), 80);
        assert_eq!(c.labeled.iter().filter(|r| r.label == Label::Positive).count(), 20);
        assert_eq!(c.unlabeled.len(), 300);
        assert_eq!(c.test.len(), 1000);
        assert_eq!(c.test_truth.iter().filter(|t| t.1 == 1).count(), 50);
        assert!(c.test.iter().chain(&c.unlabeled).all(|r| r.label == Label::Unlabeled && r.diagnosis_date.is_none()));
        for (r, t) in c.test.iter().zip(&c.test_truth) {
            assert_eq!(r.id, t.0);
        }
    }

    #[test]
    fn labeled_positives_have_post_diagnosis_events() {
        let c = synth_generate(&small()).unwrap();
        let after: usize = c
            .labeled
            .iter()
            .filter(|r| r.label == Label::Positive)
            .map(|r| r.events.len() - r.usable_events().len())
            .sum();
        assert!(after > 0);
    }

    #[test]
    fn same_seed_same_cohort() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(synth_generate(&small()).unwrap().test, synth_generate(&other).unwrap().test);
    }

    #[test]
    fn symptoms_within_range() {
        let c = synth_generate(&small()).unwrap();
        assert!(c.test.iter().flat_map(|r| &r.events).all(|e| e.symptom < 30));
    }

    #[test]
    fn invalid_configs() {
        assert!(synth_generate(&SynthConfig { prevalence: 0.0, ..small() }).is_err());
        assert!(synth_generate(&SynthConfig { negative_pool: 10, ..small() }).is_err());
    }
}
