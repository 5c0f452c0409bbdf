//! Synthetic streams and Monte-Carlo estimates of run length and delay.
//!
//! Replication `i` of a run seeded with `seed` draws from a ChaCha8 generator
//! seeded by `seed` on stream `i`, so results do not depend on the number of
//! worker threads or the order in which replications finish.

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{AdaptiveCalibration, MixtureCalibration};
use crate::detectors::{first_passage, AdaptiveDetector, Detector, MixtureDetector, Outcome, StopRule};
use crate::error::{Error, Result};
use crate::increments::{IncrementKind, IncrementSpec};
use crate::numeric::mean_and_stderr;

/// One-sided 95% normal quantile.
const Z_95: f64 = 1.645;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Generator {
    Bernoulli {
        p: f64,
    },
    /// Mass on {0, 1} with the given mean.
    TwoPoint {
        mean: f64,
    },
    Discrete {
        support: Vec<f64>,
        probs: Vec<f64>,
    },
    Constant {
        value: f64,
    },
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::Bernoulli { p } | Generator::TwoPoint { mean: p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Config(format!(
                        "generator probability must lie in [0,1], got {p}"
                    )));
                }
            }
            Generator::Discrete { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    return Err(Error::Config(
                        "discrete generator needs equal-length, non-empty support and probs".into(),
                    ));
                }
                if support.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("discrete support must be finite".into()));
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Config("discrete probabilities must be nonnegative".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "discrete probabilities sum to {total}, expected 1"
                    )));
                }
            }
            Generator::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("constant generator value must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Generator::Bernoulli { p } | Generator::TwoPoint { mean: p } => *p,
            Generator::Discrete { support, probs } => support.iter().zip(probs).map(|(x, p)| x * p).sum(),
            Generator::Constant { value } => *value,
        }
    }

    fn support_bounds(&self) -> (f64, f64) {
        match self {
            Generator::Bernoulli { .. } | Generator::TwoPoint { .. } => (0.0, 1.0),
            Generator::Discrete { support, probs } => support
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
                    (lo.min(*x), hi.max(*x))
                }),
            Generator::Constant { value } => (*value, *value),
        }
    }

    fn is_binary(&self) -> bool {
        match self {
            Generator::Bernoulli { .. } | Generator::TwoPoint { .. } => true,
            Generator::Discrete { support, probs } => support
                .iter()
                .zip(probs)
                .all(|(x, p)| *p == 0.0 || *x == 0.0 || *x == 1.0),
            Generator::Constant { value } => *value == 0.0 || *value == 1.0,
        }
    }

    /// Checks that draws lie in the range of `kind` and, for a pre-change
    /// generator, that the mean respects the class boundary.
    pub fn check_against(&self, kind: IncrementKind, pre_change: bool) -> Result<()> {
        self.validate()?;
        let (lo, hi) = self.support_bounds();
        let (bound, in_range) = match kind {
            IncrementKind::ExpBernoulli { p0 } => (p0, self.is_binary()),
            IncrementKind::ExpBounded { mean_bound } | IncrementKind::ExactBounded { mean_bound } => {
                (mean_bound, lo >= 0.0 && hi <= 1.0)
            }
            IncrementKind::Unit => return Ok(()),
        };
        if !in_range {
            return Err(Error::Config(format!(
                "generator {self:?} draws outside the range of {kind:?}"
            )));
        }
        if pre_change && self.mean() > bound + 1e-12 {
            return Err(Error::Config(format!(
                "pre-change mean {} exceeds the class boundary {bound}",
                self.mean()
            )));
        }
        Ok(())
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match self {
            Generator::Bernoulli { p } | Generator::TwoPoint { mean: p } => {
                Sampler::Binary(Bernoulli::new(*p).map_err(|e| Error::Config(e.to_string()))?)
            }
            Generator::Discrete { support, probs } => Sampler::Discrete(
                support.clone(),
                WeightedIndex::new(probs).map_err(|e| Error::Config(e.to_string()))?,
            ),
            Generator::Constant { value } => Sampler::Constant(*value),
        })
    }
}

enum Sampler {
    Binary(Bernoulli),
    Discrete(Vec<f64>, WeightedIndex<f64>),
    Constant(f64),
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Binary(b) => {
                if b.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Discrete(support, w) => support[w.sample(rng)],
            Sampler::Constant(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub pre_change: Generator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_change: Option<Generator>,
    /// Number of pre-change draws; `None` means no change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changepoint: Option<usize>,
    pub seed: u64,
}

impl StreamSpec {
    pub fn no_change(pre_change: Generator, seed: u64) -> Self {
        Self {
            pre_change,
            post_change: None,
            changepoint: None,
            seed,
        }
    }

    pub fn immediate_change(post_change: Generator, seed: u64) -> Self {
        Self {
            pre_change: post_change.clone(),
            post_change: Some(post_change),
            changepoint: Some(0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pre_change.validate()?;
        match (&self.post_change, self.changepoint) {
            (Some(g), _) => g.validate(),
            (None, None) => Ok(()),
            (None, Some(_)) => Err(Error::Config("a changepoint needs a post-change generator".into())),
        }
    }

    /// The infinite stream of replication `replication`.
    pub fn stream(&self, replication: u64) -> Result<StreamIter> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        let post = match (&self.post_change, self.changepoint) {
            (Some(g), Some(_)) => Some(g.sampler()?),
            _ => None,
        };
        Ok(StreamIter {
            rng,
            pre: self.pre_change.sampler()?,
            post,
            changepoint: self.changepoint.unwrap_or(usize::MAX),
            emitted: 0,
        })
    }
}

pub struct StreamIter {
    rng: ChaCha8Rng,
    pre: Sampler,
    post: Option<Sampler>,
    changepoint: usize,
    emitted: usize,
}

impl Iterator for StreamIter {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let sampler = match &self.post {
            Some(post) if self.emitted >= self.changepoint => post,
            _ => &self.pre,
        };
        let x = sampler.draw(&mut self.rng);
        self.emitted += 1;
        Some(x)
    }
}

/// The first `n` observations of replication 0.
pub fn generate_stream(spec: &StreamSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("stream length must be at least 1".into()));
    }
    Ok(spec.stream(0)?.take(n).collect())
}

/// Everything needed to build a fresh detector for each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorConfig {
    Trivial,
    Mixture {
        calibration: MixtureCalibration,
        increment: IncrementKind,
    },
    Adaptive {
        calibration: AdaptiveCalibration,
        increment: IncrementKind,
    },
    /// The finite mixture driven through the adaptive machinery with a
    /// constant schedule.
    ConstantAdaptive {
        calibration: MixtureCalibration,
        increment: IncrementKind,
    },
}

impl DetectorConfig {
    pub fn increment(&self) -> IncrementKind {
        match self {
            DetectorConfig::Trivial => IncrementKind::Unit,
            DetectorConfig::Mixture { increment, .. }
            | DetectorConfig::Adaptive { increment, .. }
            | DetectorConfig::ConstantAdaptive { increment, .. } => *increment,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Detector + Send>> {
        Ok(match self {
            DetectorConfig::Trivial => Box::new(MixtureDetector::trivial()),
            DetectorConfig::Mixture { calibration, increment } => {
                Box::new(MixtureDetector::from_calibration(calibration, *increment)?)
            }
            DetectorConfig::Adaptive { calibration, increment } => {
                Box::new(AdaptiveDetector::from_calibration(calibration, *increment)?)
            }
            DetectorConfig::ConstantAdaptive { calibration, increment } => {
                let mixture = MixtureDetector::from_calibration(calibration, *increment)?;
                let comps: Vec<(IncrementSpec, f64)> = mixture
                    .specs()
                    .iter()
                    .copied()
                    .zip(calibration.omegas.iter().copied())
                    .collect();
                Box::new(AdaptiveDetector::constant(comps)?)
            }
        })
    }

    /// Significance level of the calibration; `None` for the trivial detector.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            DetectorConfig::Trivial => None,
            DetectorConfig::Mixture { calibration, .. } | DetectorConfig::ConstantAdaptive { calibration, .. } => {
                Some(calibration.alpha)
            }
            DetectorConfig::Adaptive { calibration, .. } => Some(calibration.alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.increment().validate()?;
        match self {
            DetectorConfig::Mixture { calibration, .. } | DetectorConfig::ConstantAdaptive { calibration, .. } => {
                calibration.validate()
            }
            DetectorConfig::Adaptive { calibration, .. } => calibration.validate(),
            DetectorConfig::Trivial => Ok(()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(format!("cannot serialize: {e}")))
    }

    /// Parses and validates a persisted configuration.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DetectorConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid calibration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub replications: usize,
    /// Worker threads; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl MonteCarloConfig {
    pub fn new(replications: usize) -> Self {
        Self {
            replications,
            workers: None,
        }
    }
}

/// Default truncation horizon `10/α`.
pub fn default_horizon(alpha: f64) -> usize {
    (10.0 / alpha).ceil() as usize
}

/// Summary of per-replication stop times; truncated runs count as the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub mean_stat: f64,
    pub stderr: f64,
    /// `mean − 1.645·stderr`
    pub lower_confidence_95: f64,
    pub truncation_count: usize,
    pub truncation_horizon: usize,
    #[serde(skip)]
    pub samples: Vec<usize>,
}

impl MonteCarloReport {
    fn from_outcomes(outcomes: &[Outcome], horizon: usize) -> Self {
        let mut truncation_count = 0;
        let samples: Vec<usize> = outcomes
            .iter()
            .map(|o| match *o {
                Outcome::Stopped { step } => step,
                Outcome::Truncated { horizon } => {
                    truncation_count += 1;
                    horizon
                }
                Outcome::StreamEnded { steps } => steps,
            })
            .collect();
        let xs: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
        let (mean_stat, stderr) = mean_and_stderr(&xs);
        Self {
            replications: samples.len(),
            mean_stat,
            stderr,
            lower_confidence_95: mean_stat - Z_95 * stderr,
            truncation_count,
            truncation_horizon: horizon,
            samples,
        }
    }
}

/// Reports for the statistics tracked by the stop rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr: Option<MonteCarloReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cusum: Option<MonteCarloReport>,
}

/// Runs `mc.replications` independent detectors on replications of `stream`.
/// SR and CUSUM outcomes of one replication.
type OutcomePair = (Option<Outcome>, Option<Outcome>);

pub fn run_replications(
    detector: &DetectorConfig,
    stream: &StreamSpec,
    rule: &StopRule,
    mc: &MonteCarloConfig,
) -> Result<SimulationReport> {
    if mc.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    stream.validate()?;
    let kind = detector.increment();
    stream.pre_change.check_against(kind, stream.changepoint.is_none())?;
    if let Some(post) = &stream.post_change {
        post.check_against(kind, false)?;
    }
    detector.build()?;

    let one = |rep: usize| -> Result<OutcomePair> {
        let mut det = detector.build()?;
        let r = first_passage(det.as_mut(), stream.stream(rep as u64)?, rule)?;
        Ok((r.sr, r.cusum))
    };
    let job = || {
        (0..mc.replications)
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = match mc.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(job)?,
        None => job()?,
    };
    let collect = |pick: fn(&OutcomePair) -> Option<Outcome>| {
        let xs: Option<Vec<Outcome>> = outcomes.iter().map(pick).collect();
        xs.map(|xs| MonteCarloReport::from_outcomes(&xs, rule.truncation))
    };
    Ok(SimulationReport {
        sr: collect(|o| o.0),
        cusum: collect(|o| o.1),
    })
}

/// Average run length with no change, from `pre_change` draws only.
pub fn estimate_arl(
    detector: &DetectorConfig,
    pre_change: &Generator,
    rule: &StopRule,
    mc: &MonteCarloConfig,
    seed: u64,
) -> Result<SimulationReport> {
    run_replications(detector, &StreamSpec::no_change(pre_change.clone(), seed), rule, mc)
}

/// Detection delay for a change at time zero.
pub fn estimate_delay(
    detector: &DetectorConfig,
    post_change: &Generator,
    rule: &StopRule,
    mc: &MonteCarloConfig,
    seed: u64,
) -> Result<SimulationReport> {
    run_replications(
        detector,
        &StreamSpec::immediate_change(post_change.clone(), seed),
        rule,
        mc,
    )
}
