//! SR and CUSUM e-detectors over mixtures of baseline increments.
//!
//! Every detector tracks both statistics side by side in log space. Per
//! component `k` and re-weighting factor `γ`:
//!
//! ```text
//! SR:     M(k) ← L(k) · (M(k) + γ)
//! CUSUM:  M(k) ← L(k) · max(M(k), γ)
//! ```
//!
//! and the reported statistic is `Σ_k ω_k M(k)`. Finite mixtures use `γ = 1`.

use serde::{Deserialize, Serialize};

use crate::calibration::{AdaptiveCalibration, MixtureCalibration};
use crate::error::{Error, Result};
use crate::increments::{IncrementKind, IncrementSpec};
use crate::numeric::log_add_exp;

/// Log of the "value zero" state of a component.
pub const EMPTY: f64 = f64::NEG_INFINITY;

/// Relative slack allowed when comparing a statistic to its threshold, so that
/// values equal to the threshold up to rounding count as crossings.
pub const CROSSING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepValues {
    pub n: usize,
    pub log_m_sr: f64,
    pub log_m_cs: f64,
}

/// Recursion state shared by finite and adaptive mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    log_weights: Vec<f64>,
    log_sr: Vec<f64>,
    log_cs: Vec<f64>,
    log_gamma: f64,
    n: usize,
    agg_sr: f64,
    agg_cs: f64,
}

fn log_weight(w: f64) -> Result<f64> {
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::Config(format!(
            "mixture weight must be finite and nonnegative, got {w}"
        )));
    }
    Ok(w.ln())
}

impl DetectorState {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("a detector needs at least one component".into()));
        }
        let log_weights = weights.iter().map(|&w| log_weight(w)).collect::<Result<Vec<_>>>()?;
        let k = log_weights.len();
        Ok(Self {
            log_weights,
            log_sr: vec![EMPTY; k],
            log_cs: vec![EMPTY; k],
            log_gamma: 0.0,
            n: 0,
            agg_sr: EMPTY,
            agg_cs: EMPTY,
        })
    }

    pub fn num_components(&self) -> usize {
        self.log_weights.len()
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn log_m_sr(&self) -> f64 {
        self.agg_sr
    }

    pub fn log_m_cs(&self) -> f64 {
        self.agg_cs
    }

    pub fn log_gamma(&self) -> f64 {
        self.log_gamma
    }

    pub fn component_log_sr(&self) -> &[f64] {
        &self.log_sr
    }

    pub fn component_log_cs(&self) -> &[f64] {
        &self.log_cs
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Adds a component whose statistics are zero until the next step.
    pub fn push_component(&mut self, weight: f64) -> Result<()> {
        self.log_weights.push(log_weight(weight)?);
        self.log_sr.push(EMPTY);
        self.log_cs.push(EMPTY);
        Ok(())
    }

    pub fn set_log_gamma(&mut self, log_gamma: f64) {
        self.log_gamma = log_gamma;
    }

    /// Advances every component by one log-increment and re-aggregates.
    pub fn step(&mut self, log_increments: &[f64]) -> Result<StepValues> {
        if log_increments.len() != self.num_components() {
            return Err(Error::State(format!(
                "got {} log-increments for {} components",
                log_increments.len(),
                self.num_components()
            )));
        }
        let lg = self.log_gamma;
        let mut agg_sr = EMPTY;
        let mut agg_cs = EMPTY;
        for (k, &ll) in log_increments.iter().enumerate() {
            let sr = ll + log_add_exp(self.log_sr[k], lg);
            let cs = ll + self.log_cs[k].max(lg);
            self.log_sr[k] = sr;
            self.log_cs[k] = cs;
            let lw = self.log_weights[k];
            if lw != EMPTY {
                agg_sr = log_add_exp(agg_sr, lw + sr);
                agg_cs = log_add_exp(agg_cs, lw + cs);
            }
        }
        self.n += 1;
        self.agg_sr = agg_sr;
        self.agg_cs = agg_cs;
        Ok(StepValues {
            n: self.n,
            log_m_sr: agg_sr,
            log_m_cs: agg_cs,
        })
    }
}

/// A detector consuming raw observations.
pub trait Detector {
    fn observe(&mut self, x: f64) -> Result<StepValues>;
    fn state(&self) -> &DetectorState;
}

/// Finite mixture of baseline increments with fixed weights.
#[derive(Debug, Clone)]
pub struct MixtureDetector {
    state: DetectorState,
    specs: Vec<IncrementSpec>,
    scratch: Vec<f64>,
}

impl MixtureDetector {
    pub fn new(components: Vec<(IncrementSpec, f64)>) -> Result<Self> {
        let weights: Vec<f64> = components.iter().map(|c| c.1).collect();
        let state = DetectorState::new(&weights)?;
        let specs: Vec<IncrementSpec> = components.into_iter().map(|c| c.0).collect();
        let scratch = vec![0.0; specs.len()];
        Ok(Self { state, specs, scratch })
    }

    /// A single component with `L ≡ 1`.
    pub fn trivial() -> Self {
        Self::new(vec![(IncrementSpec::unit(), 1.0)]).expect("unit detector")
    }

    pub fn from_calibration(cal: &MixtureCalibration, kind: IncrementKind) -> Result<Self> {
        check_kind(kind, cal)?;
        let components = cal
            .lambdas
            .iter()
            .zip(&cal.omegas)
            .map(|(&l, &w)| Ok((IncrementSpec::new(kind, l)?, w)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn specs(&self) -> &[IncrementSpec] {
        &self.specs
    }
}

fn check_kind(kind: IncrementKind, cal: &MixtureCalibration) -> Result<()> {
    match kind.psi_family() {
        Some(f) if f == cal.family => Ok(()),
        _ => Err(Error::Config(format!(
            "increment kind {kind:?} does not match calibration family {:?}",
            cal.family
        ))),
    }
}

fn fill_log_increments(specs: &[IncrementSpec], x: f64, out: &mut Vec<f64>) -> Result<()> {
    out.clear();
    for s in specs {
        out.push(s.log_increment(x)?);
    }
    Ok(())
}

impl Detector for MixtureDetector {
    fn observe(&mut self, x: f64) -> Result<StepValues> {
        let idx = self.state.n + 1;
        fill_log_increments(&self.specs, x, &mut self.scratch).map_err(|e| e.at_index(idx))?;
        self.state.step(&self.scratch)
    }

    fn state(&self) -> &DetectorState {
        &self.state
    }
}

/// Highest active component index as a function of the step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum Schedule {
    Constant {
        max_index: usize,
    },
    /// `K_n = base_index + ⌈density · log_η n⌉`.
    Logarithmic {
        base_index: usize,
        density: f64,
        eta: f64,
    },
}

impl Schedule {
    pub fn max_index(&self, n: usize) -> usize {
        match *self {
            Schedule::Constant { max_index } => max_index,
            Schedule::Logarithmic {
                base_index,
                density,
                eta,
            } => {
                let extra = (density * (n.max(1) as f64).ln() / eta.ln()).ceil();
                base_index + extra.max(0.0) as usize
            }
        }
    }

    pub fn base_index(&self) -> usize {
        match *self {
            Schedule::Constant { max_index } => max_index,
            Schedule::Logarithmic { base_index, .. } => base_index,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Schedule::Logarithmic { density, eta, .. } = *self {
            if !(density >= 1.0) || !density.is_finite() {
                return Err(Error::Config(format!("schedule density must be ≥ 1, got {density}")));
            }
            if !(eta > 1.0) || !eta.is_finite() {
                return Err(Error::Config(format!("schedule spacing η must exceed 1, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Produces the increment and weight of a newly scheduled component.
pub trait ComponentSource: Send + Sync {
    fn mint(&self, k: usize) -> Result<(IncrementSpec, f64)>;
}

struct CalibratedSource {
    cal: AdaptiveCalibration,
    kind: IncrementKind,
}

impl ComponentSource for CalibratedSource {
    fn mint(&self, k: usize) -> Result<(IncrementSpec, f64)> {
        let (_, lambda, omega) = self.cal.mint_component(k)?;
        Ok((IncrementSpec::new(self.kind, lambda)?, omega))
    }
}

/// Mixture whose component set grows with `n` following a [`Schedule`];
/// starts at step `j` are re-weighted by `γ_j = 1 / Σ_{active} ω`.
pub struct AdaptiveDetector {
    state: DetectorState,
    specs: Vec<IncrementSpec>,
    schedule: Schedule,
    source: Box<dyn ComponentSource>,
    weight_mass: f64,
    scratch: Vec<f64>,
}

impl std::fmt::Debug for AdaptiveDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptiveDetector")
            .field("state", &self.state)
            .field("schedule", &self.schedule)
            .field("weight_mass", &self.weight_mass)
            .finish_non_exhaustive()
    }
}

impl AdaptiveDetector {
    /// `initial` holds components `0..=schedule.base_index()`.
    pub fn new(
        initial: Vec<(IncrementSpec, f64)>,
        schedule: Schedule,
        source: Box<dyn ComponentSource>,
    ) -> Result<Self> {
        schedule.validate()?;
        if initial.len() != schedule.base_index() + 1 {
            return Err(Error::State(format!(
                "schedule starts at index {} but {} initial components were given",
                schedule.base_index(),
                initial.len()
            )));
        }
        let weights: Vec<f64> = initial.iter().map(|c| c.1).collect();
        let mut state = DetectorState::new(&weights)?;
        let weight_mass: f64 = weights.iter().sum();
        if !(weight_mass > 0.0) {
            return Err(Error::Config("initial weights must have positive mass".into()));
        }
        state.set_log_gamma(-weight_mass.ln());
        let specs: Vec<IncrementSpec> = initial.into_iter().map(|c| c.0).collect();
        let out = Self {
            state,
            specs,
            schedule,
            source,
            weight_mass,
            scratch: Vec::new(),
        };
        out.check_gamma()?;
        Ok(out)
    }

    pub fn from_calibration(cal: &AdaptiveCalibration, kind: IncrementKind) -> Result<Self> {
        check_kind(kind, &cal.core)?;
        let initial = cal
            .core
            .lambdas
            .iter()
            .zip(&cal.core_weights)
            .map(|(&l, &w)| Ok((IncrementSpec::new(kind, l)?, w)))
            .collect::<Result<Vec<_>>>()?;
        let schedule = Schedule::Logarithmic {
            base_index: cal.base_count(),
            density: cal.schedule_density,
            eta: cal.eta(),
        };
        let source = CalibratedSource { cal: cal.clone(), kind };
        Self::new(initial, schedule, Box::new(source))
    }

    /// A constant schedule over `components`; with weights summing to one
    /// this reproduces [`MixtureDetector`].
    pub fn constant(components: Vec<(IncrementSpec, f64)>) -> Result<Self> {
        struct NoSource;
        impl ComponentSource for NoSource {
            fn mint(&self, k: usize) -> Result<(IncrementSpec, f64)> {
                Err(Error::State(format!("constant schedule cannot mint component {k}")))
            }
        }
        let schedule = Schedule::Constant {
            max_index: components.len().saturating_sub(1),
        };
        Self::new(components, schedule, Box::new(NoSource))
    }

    pub fn gamma(&self) -> f64 {
        self.state.log_gamma().exp()
    }

    /// Largest active component index `K_n`.
    pub fn max_index(&self) -> usize {
        self.specs.len() - 1
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn specs(&self) -> &[IncrementSpec] {
        &self.specs
    }

    fn check_gamma(&self) -> Result<()> {
        // γ ≥ 1 ⇔ active mass ≤ 1, up to rounding in the weight sum
        if self.weight_mass > 1.0 + 1e-9 {
            return Err(Error::State(format!(
                "active weight mass {} exceeds one",
                self.weight_mass
            )));
        }
        Ok(())
    }

    fn extend_to(&mut self, n: usize) -> Result<()> {
        let target = self.schedule.max_index(n);
        let mut added = false;
        for k in self.specs.len()..=target {
            let (spec, w) = self.source.mint(k)?;
            self.state.push_component(w)?;
            self.specs.push(spec);
            self.weight_mass += w;
            added = true;
        }
        if added {
            self.state.set_log_gamma(-self.weight_mass.ln());
            self.check_gamma()?;
        }
        Ok(())
    }
}

impl Detector for AdaptiveDetector {
    fn observe(&mut self, x: f64) -> Result<StepValues> {
        let n = self.state.n + 1;
        // validate before minting so a bad observation leaves the state untouched
        if let Some(s) = self.specs.first() {
            s.kind.check_observation(x).map_err(|e| e.at_index(n))?;
        }
        self.extend_to(n)?;
        fill_log_increments(&self.specs, x, &mut self.scratch).map_err(|e| e.at_index(n))?;
        self.state.step(&self.scratch)
    }

    fn state(&self) -> &DetectorState {
        &self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    Sr,
    Cusum,
    Both,
}

impl StopMode {
    pub fn tracks_sr(self) -> bool {
        matches!(self, StopMode::Sr | StopMode::Both)
    }

    pub fn tracks_cusum(self) -> bool {
        matches!(self, StopMode::Cusum | StopMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub mode: StopMode,
    pub log_threshold_sr: f64,
    pub log_threshold_cusum: f64,
    pub truncation: usize,
}

impl StopRule {
    /// Thresholds `log(1/α)` for SR and `log c_α = log(1/α)` for CUSUM.
    pub fn from_alpha(alpha: f64, mode: StopMode, truncation: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("α must lie in (0,1), got {alpha}")));
        }
        let t = -alpha.ln();
        Self::new(mode, t, t, truncation)
    }

    pub fn new(mode: StopMode, log_threshold_sr: f64, log_threshold_cusum: f64, truncation: usize) -> Result<Self> {
        if !(log_threshold_sr > 0.0) || !(log_threshold_cusum > 0.0) {
            return Err(Error::Config("stopping thresholds must exceed 1".into()));
        }
        if truncation == 0 {
            return Err(Error::Config("truncation must be at least 1".into()));
        }
        Ok(Self {
            mode,
            log_threshold_sr,
            log_threshold_cusum,
            truncation,
        })
    }

    /// Replaces the CUSUM threshold by `log c` for a user-supplied `c > 1`.
    pub fn with_cusum_threshold(mut self, c: f64) -> Result<Self> {
        if !(c > 1.0) || !c.is_finite() {
            return Err(Error::Config(format!("CUSUM threshold must exceed 1, got {c}")));
        }
        self.log_threshold_cusum = c.ln();
        Ok(self)
    }
}

/// Inclusive crossing test `log_m ≥ log_threshold`, up to [`CROSSING_SLACK`].
#[inline]
pub fn crosses(log_m: f64, log_threshold: f64) -> bool {
    log_m >= log_threshold - CROSSING_SLACK * log_threshold.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Stopped { step: usize },
    Truncated { horizon: usize },
    StreamEnded { steps: usize },
}

impl Outcome {
    pub fn stop_step(&self) -> Option<usize> {
        match *self {
            Outcome::Stopped { step } => Some(step),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRow {
    pub step: usize,
    pub log_m_sr: f64,
    pub log_m_cs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rule: StopRule,
    pub sr: Option<Outcome>,
    pub cusum: Option<Outcome>,
    pub path: Vec<PathRow>,
}

impl RunResult {
    pub fn primary(&self) -> Outcome {
        self.sr.or(self.cusum).expect("at least one statistic tracked")
    }
}

/// Feeds `stream` until every tracked statistic has crossed its threshold, the
/// truncation horizon is reached, or the stream ends.
pub fn run_until_stop<D, I>(detector: &mut D, stream: I, rule: &StopRule) -> Result<RunResult>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = f64>,
{
    run_inner(detector, stream.into_iter().map(Ok), rule, true)
}

/// As [`run_until_stop`] for a fallible stream (e.g. parsed input).
pub fn run_until_stop_fallible<D, I>(detector: &mut D, stream: I, rule: &StopRule) -> Result<RunResult>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = Result<f64>>,
{
    run_inner(detector, stream.into_iter(), rule, true)
}

/// Stop outcomes only, without recording the path.
pub fn first_passage<D, I>(detector: &mut D, stream: I, rule: &StopRule) -> Result<RunResult>
where
    D: Detector + ?Sized,
    I: IntoIterator<Item = f64>,
{
    run_inner(detector, stream.into_iter().map(Ok), rule, false)
}

fn run_inner<D, I>(detector: &mut D, stream: I, rule: &StopRule, record: bool) -> Result<RunResult>
where
    D: Detector + ?Sized,
    I: Iterator<Item = Result<f64>>,
{
    let mut sr = if rule.mode.tracks_sr() { None } else { Some(None) };
    let mut cs = if rule.mode.tracks_cusum() { None } else { Some(None) };
    let mut path = Vec::new();
    let mut steps = 0;
    for x in stream {
        if steps >= rule.truncation {
            break;
        }
        let x = x.map_err(|e| e.at_index(steps + 1))?;
        let v = detector.observe(x)?;
        steps = v.n;
        if record {
            path.push(PathRow {
                step: v.n,
                log_m_sr: v.log_m_sr,
                log_m_cs: v.log_m_cs,
            });
        }
        if sr.is_none() && crosses(v.log_m_sr, rule.log_threshold_sr) {
            sr = Some(Some(Outcome::Stopped { step: v.n }));
        }
        if cs.is_none() && crosses(v.log_m_cs, rule.log_threshold_cusum) {
            cs = Some(Some(Outcome::Stopped { step: v.n }));
        }
        if sr.is_some() && cs.is_some() {
            break;
        }
    }
    let unfinished = if steps >= rule.truncation {
        Outcome::Truncated {
            horizon: rule.truncation,
        }
    } else {
        Outcome::StreamEnded { steps }
    };
    let finish = |o: Option<Option<Outcome>>| match o {
        None => Some(unfinished),
        Some(inner) => inner,
    };
    Ok(RunResult {
        rule: *rule,
        sr: finish(sr),
        cusum: finish(cs),
        path,
    })
}
