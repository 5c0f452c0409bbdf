//! Command-line surface: `calibrate`, `run`, `simulate`, `bounds`, `generate`.
//!
//! Every option can be given as a long flag or as a kebab-case key in a TOML
//! file passed with `--config`; flags win. Calibrations are persisted as TOML
//! and paths are written as CSV with 17 significant digits.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    delay_bound_no_separation, delay_bound_well_separated, divergence_and_variance, g_alpha_upper_bound,
    DelayBoundReport, PostChangeLaw, PostChangeSummary,
};
use crate::calibration::{build_adaptive_calibration, compute_baseline_with_eps, DEFAULT_K_MAX, DEFAULT_THRESHOLD_EPS};
use crate::detectors::{run_until_stop, Outcome, RunResult, StopMode, StopRule};
use crate::error::{Error, Result};
use crate::increments::{delta_bounds_bounded, normalize_bounded, IncrementKind};
use crate::psi::PsiFamily;
use crate::simulate::{default_horizon, run_replications, DetectorConfig, Generator, MonteCarloConfig, StreamSpec};

#[derive(Debug, Parser)]
#[command(
    name = "edetect",
    version,
    about = "Nonparametric sequential changepoint detection with e-detectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a mixture calibration and write it as TOML.
    Calibrate(Params),
    /// Run a detector over a CSV column and write the statistic path.
    Run(Params),
    /// Monte-Carlo run length (no change) or delay (change at a given time).
    Simulate(Params),
    /// Delay bounds for a post-change law.
    Bounds(Params),
    /// Write a synthetic stream with an optional mean shift to CSV.
    Generate(Params),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    Bernoulli,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureArg {
    Finite,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementArg {
    Exponential,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Sr,
    Cusum,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Toml,
    Csv,
}

/// Options shared by all subcommands; each uses the subset it needs.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Params {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Pre-change success probability bound (Bernoulli family).
    #[arg(long)]
    pub p0: Option<f64>,
    /// Pre-change mean bound of [0,1]-valued data (bounded family).
    #[arg(long)]
    pub mean_bound: Option<f64>,
    /// Minimal post-change mean gap; derives Δ bounds for bounded data.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub delta_lower: Option<f64>,
    #[arg(long)]
    pub delta_upper: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Bisection tolerance of the threshold search.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum)]
    pub mixture: Option<MixtureArg>,
    /// Importance weight of the core grid in the adaptive mixture.
    #[arg(long)]
    pub r: Option<f64>,
    /// Upper end Δ_0 of the adaptive core grid.
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub schedule_density: Option<f64>,
    /// K_max of the adaptive core grid.
    #[arg(long)]
    pub k0: Option<usize>,
    #[arg(long, value_enum)]
    pub increment: Option<IncrementArg>,

    /// Persisted calibration to use instead of calibrating from options.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// CUSUM threshold c (default 1/α).
    #[arg(long)]
    pub cusum_threshold: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,

    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column index (0-based) or header name.
    #[arg(long)]
    pub column: Option<String>,
    /// Treat the first CSV row as data.
    #[arg(long)]
    pub no_header: bool,
    /// Raw lower bound for normalization to [0,1].
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Pre-change mean of the simulated stream (default: the class boundary).
    #[arg(long)]
    pub pre_mean: Option<f64>,
    #[arg(long)]
    pub post_mean: Option<f64>,
    /// Number of pre-change observations before the change.
    #[arg(long)]
    pub changepoint: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,

    /// Post-change success probability / mean for `bounds`.
    #[arg(long)]
    pub q: Option<f64>,
    /// E(X−m)², E(X−m)³, E(X−m)⁴ of a bounded post-change law.
    #[arg(long)]
    pub post_second: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub post_third: Option<f64>,
    #[arg(long)]
    pub post_fourth: Option<f64>,
}

macro_rules! prefer_flags {
    ($flags:expr, $file:expr, $($f:ident),* $(,)?) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.take(); } )*
    };
}

impl Params {
    /// Fills options not given as flags from the config file, if any.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut file: Params = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        prefer_flags!(
            self,
            file,
            alpha,
            family,
            p0,
            mean_bound,
            delta,
            delta_lower,
            delta_upper,
            k_max,
            eps,
            mixture,
            r,
            delta0,
            schedule_density,
            k0,
            increment,
            calibration,
            mode,
            cusum_threshold,
            horizon,
            input,
            column,
            lo,
            hi,
            output,
            format,
            seed,
            replications,
            workers,
            pre_mean,
            post_mean,
            changepoint,
            length,
            q,
            post_second,
            post_third,
            post_fourth,
        );
        self.no_header |= file.no_header;
        Ok(self)
    }

    fn require<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("missing required option --{name}")))
    }

    fn alpha(&self) -> Result<f64> {
        let a = Self::require(self.alpha, "alpha")?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("--alpha must lie in (0,1), got {a}")));
        }
        Ok(a)
    }

    fn family(&self) -> Result<PsiFamily> {
        match Self::require(self.family, "family")? {
            FamilyArg::Bernoulli => {
                PsiFamily::bernoulli(Self::require(self.p0, "p0")?).map_err(|e| Error::Config(e.to_string()))
            }
            FamilyArg::Bounded => Ok(PsiFamily::SubExponential),
        }
    }

    fn mean_bound(&self) -> Result<f64> {
        let m = Self::require(self.mean_bound, "mean-bound")?;
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Config(format!("--mean-bound must lie in (0,1), got {m}")));
        }
        Ok(m)
    }

    fn increment_kind(&self) -> Result<IncrementKind> {
        let kind = match Self::require(self.family, "family")? {
            FamilyArg::Bernoulli => IncrementKind::ExpBernoulli {
                p0: Self::require(self.p0, "p0")?,
            },
            FamilyArg::Bounded => {
                let mean_bound = self.mean_bound()?;
                match self.increment.unwrap_or(IncrementArg::Exponential) {
                    IncrementArg::Exponential => IncrementKind::ExpBounded { mean_bound },
                    IncrementArg::Exact => IncrementKind::ExactBounded { mean_bound },
                }
            }
        };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }

    /// `(Δ_L, Δ_U)`, explicit or derived from `--delta` for bounded data.
    fn delta_range(&self) -> Result<(f64, f64)> {
        if let (Some(l), Some(u)) = (self.delta_lower, self.delta_upper) {
            return Ok((l, u));
        }
        match (self.family, self.delta) {
            (Some(FamilyArg::Bounded), Some(gap)) => {
                let (l, u) = delta_bounds_bounded(self.mean_bound()?, gap)?;
                Ok((self.delta_lower.unwrap_or(l), self.delta_upper.unwrap_or(u)))
            }
            _ => Err(Error::Config(
                "give --delta-lower and --delta-upper (or --delta with the bounded family)".into(),
            )),
        }
    }

    fn validate_calibration_options(&self) -> Result<()> {
        if let Some(k) = self.k_max {
            if k == 0 {
                return Err(Error::Config("--k-max must be at least 1".into()));
            }
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                return Err(Error::Config(format!("--eps must be positive, got {e}")));
            }
        }
        Ok(())
    }

    pub fn detector_config(&self) -> Result<DetectorConfig> {
        if let Some(path) = &self.calibration {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            return DetectorConfig::from_toml(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            });
        }
        self.validate_calibration_options()?;
        let alpha = self.alpha()?;
        let family = self.family()?;
        let increment = self.increment_kind()?;
        let k_max = self.k_max.unwrap_or(DEFAULT_K_MAX);
        match self.mixture.unwrap_or(MixtureArg::Finite) {
            MixtureArg::Finite => {
                let (dl, du) = self.delta_range()?;
                let eps = self.eps.unwrap_or(DEFAULT_THRESHOLD_EPS);
                let calibration = compute_baseline_with_eps(alpha, dl, du, k_max, family, eps)?;
                Ok(DetectorConfig::Mixture { calibration, increment })
            }
            MixtureArg::Adaptive => {
                let dl = match self.delta_lower {
                    Some(l) => l,
                    None => self.delta_range()?.0,
                };
                let d0 = Self::require(self.delta0, "delta0")?;
                let r = self.r.unwrap_or(0.5);
                let density = self.schedule_density.unwrap_or(1.0);
                let k0 = self.k0.unwrap_or(k_max);
                let calibration = build_adaptive_calibration(alpha, dl, d0, r, density, k0, family)?;
                Ok(DetectorConfig::Adaptive { calibration, increment })
            }
        }
    }

    fn calibrated_alpha(cfg: &DetectorConfig, fallback: Option<f64>) -> Result<f64> {
        match cfg.alpha() {
            Some(a) => Ok(a),
            None => {
                Self::require(fallback, "alpha").map_err(|_| Error::Config("trivial detector needs --alpha".into()))
            }
        }
    }

    fn stop_rule(&self, alpha: f64, default_mode: StopMode) -> Result<StopRule> {
        let mode = match self.mode {
            Some(ModeArg::Sr) => StopMode::Sr,
            Some(ModeArg::Cusum) => StopMode::Cusum,
            Some(ModeArg::Both) => StopMode::Both,
            None => default_mode,
        };
        let horizon = self.horizon.unwrap_or_else(|| default_horizon(alpha));
        let rule = StopRule::from_alpha(alpha, mode, horizon)?;
        match self.cusum_threshold {
            Some(c) => rule.with_cusum_threshold(c),
            None => Ok(rule),
        }
    }

    fn normalization(&self) -> Result<Option<(f64, f64)>> {
        match (self.lo, self.hi) {
            (Some(lo), Some(hi)) => Ok(Some((lo, hi))),
            (None, None) => Ok(None),
            _ => Err(Error::Config("--lo and --hi must be given together".into())),
        }
    }

    fn column(&self) -> ColumnSpec {
        match &self.column {
            None => ColumnSpec::Index(0),
            Some(c) => match c.parse::<usize>() {
                Ok(i) => ColumnSpec::Index(i),
                Err(_) => ColumnSpec::Name(c.clone()),
            },
        }
    }
}

/// Selects the CSV column holding observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSpec {
    Index(usize),
    Name(String),
}

/// Reads one numeric column. Rows are numbered from 1, excluding the header.
pub fn ingest_csv(
    path: &Path,
    column: &ColumnSpec,
    has_header: bool,
    normalization: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_csv_reader(file, column, has_header, normalization)
}

pub fn ingest_csv_reader<R: Read>(
    reader: R,
    column: &ColumnSpec,
    has_header: bool,
    normalization: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    if let Some((lo, hi)) = normalization {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "normalization bounds need lo < hi, got ({lo}, {hi})"
            )));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let col = match column {
        ColumnSpec::Index(i) => *i,
        ColumnSpec::Name(name) => {
            if !has_header {
                return Err(Error::Config(format!("column name {name:?} needs a header row")));
            }
            let headers = rdr
                .headers()
                .map_err(|e| Error::data(format!("cannot read header: {e}")))?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("no column named {name:?}")))?
        }
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::data(format!("row {row}: {e}")).at_index(row))?;
        let field = rec
            .get(col)
            .ok_or_else(|| Error::data(format!("row {row} has no column {col}")).at_index(row))?;
        let x: f64 = field.parse().map_err(|_| {
            Error::data(format!("row {row}, column {col}: cannot parse {field:?} as a number")).at_index(row)
        })?;
        let x = match normalization {
            Some((lo, hi)) => normalize_bounded(x, lo, hi).map_err(|e| e.at_index(row))?,
            None => x,
        };
        out.push(x);
    }
    if out.is_empty() {
        return Err(Error::data("input contains no observations"));
    }
    Ok(out)
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the statistic path of `result` as CSV.
///
/// Columns: `step, log_m_sr[, log_m_cs], threshold, stopped[, threshold_cs, stopped_cs]`.
/// In CUSUM-only mode `threshold`/`stopped` refer to the CUSUM statistic.
pub fn write_path<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mode = result.rule.mode;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["step", "log_m_sr"];
    if mode.tracks_cusum() {
        header.push("log_m_cs");
    }
    header.extend(["threshold", "stopped"]);
    if mode == StopMode::Both {
        header.extend(["threshold_cs", "stopped_cs"]);
    }
    w.write_record(&header).map_err(io)?;
    let stop_of = |o: Option<Outcome>| o.and_then(|o| o.stop_step()).unwrap_or(usize::MAX);
    let (sr_stop, cs_stop) = (stop_of(result.sr), stop_of(result.cusum));
    let flag = |step: usize, stop: usize| if step >= stop { "1" } else { "0" }.to_string();
    for row in &result.path {
        let mut rec = vec![row.step.to_string(), fmt_real(row.log_m_sr)];
        if mode.tracks_cusum() {
            rec.push(fmt_real(row.log_m_cs));
        }
        match mode {
            StopMode::Sr | StopMode::Both => {
                rec.push(fmt_real(result.rule.log_threshold_sr));
                rec.push(flag(row.step, sr_stop));
            }
            StopMode::Cusum => {
                rec.push(fmt_real(result.rule.log_threshold_cusum));
                rec.push(flag(row.step, cs_stop));
            }
        }
        if mode == StopMode::Both {
            rec.push(fmt_real(result.rule.log_threshold_cusum));
            rec.push(flag(row.step, cs_stop));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_path(result: &RunResult, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_path(result, std::io::BufWriter::new(file))
}

/// One row of a path file as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub step: usize,
    pub log_m_sr: f64,
    pub log_m_cs: Option<f64>,
    pub threshold: f64,
    pub stopped: bool,
    pub threshold_cs: Option<f64>,
    pub stopped_cs: Option<bool>,
}

pub fn read_path<R: Read>(reader: R) -> Result<Vec<PathRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::data(e.to_string()))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| pos(name).ok_or_else(|| Error::data(format!("path file lacks column {name}")));
    let (i_step, i_sr, i_thr, i_stop) = (need("step")?, need("log_m_sr")?, need("threshold")?, need("stopped")?);
    let (i_cs, i_thr_cs, i_stop_cs) = (pos("log_m_cs"), pos("threshold_cs"), pos("stopped_cs"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::data(e.to_string()).at_index(row))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(format!("row {row}, column {j}: bad number")).at_index(row))
        };
        let flag = |j: usize| -> Result<bool> {
            match rec.get(j) {
                Some("1") => Ok(true),
                Some("0") => Ok(false),
                _ => Err(Error::data(format!("row {row}, column {j}: bad flag")).at_index(row)),
            }
        };
        out.push(PathRecord {
            step: num(i_step)? as usize,
            log_m_sr: num(i_sr)?,
            log_m_cs: i_cs.map(num).transpose()?,
            threshold: num(i_thr)?,
            stopped: flag(i_stop)?,
            threshold_cs: i_thr_cs.map(num).transpose()?,
            stopped_cs: i_stop_cs.map(flag).transpose()?,
        });
    }
    Ok(out)
}

/// Stop report printed by `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub observations: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cusum: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub post_change: PostChangeSummary,
    pub delay: DelayBoundReport,
    /// Upper bound on the calibrated threshold (finite mixtures only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_alpha_upper_bound: Option<f64>,
    /// Delay bound with the threshold replaced by its upper bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_with_upper_bound: Option<DelayBoundReport>,
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Io(format!("cannot serialize: {e}")))
}

fn write_text(output: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(Error::from),
    }
}

fn cmd_calibrate(p: &Params, stdout: &mut dyn Write) -> Result<()> {
    let cfg = p.detector_config()?;
    match &cfg {
        DetectorConfig::Mixture { calibration: c, .. } => log::info!(
            "g_alpha={} K_alpha={} eta={} W={}",
            c.g_alpha,
            c.k_alpha,
            c.eta_alpha,
            c.weight_mass
        ),
        DetectorConfig::Adaptive { calibration: c, .. } => log::info!(
            "g_core={} K_L={} eta={} s={} mass={}",
            c.g_core(),
            c.base_count(),
            c.eta(),
            c.zeta_exponent,
            c.total_weight_mass()
        ),
        _ => {}
    }
    write_text(p.output.as_deref(), &to_toml(&cfg)?, stdout)
}

fn cmd_run(p: &Params, stdout: &mut dyn Write) -> Result<()> {
    let cfg = p.detector_config()?;
    let alpha = Params::calibrated_alpha(&cfg, p.alpha)?;
    let rule = p.stop_rule(alpha, StopMode::Both)?;
    let input = Params::require(p.input.as_ref(), "input")?;
    let xs = ingest_csv(input, &p.column(), !p.no_header, p.normalization()?)?;
    let mut det = cfg.build()?;
    let result = run_until_stop(det.as_mut(), xs.iter().copied(), &rule)?;
    match &p.output {
        Some(path) => emit_path(&result, path)?,
        None => write_path(&result, &mut *stdout)?,
    }
    let report = RunReport {
        observations: xs.len(),
        steps: result.path.len(),
        sr: result.sr,
        cusum: result.cusum,
    };
    let text = to_toml(&report)?;
    if p.output.is_some() {
        stdout.write_all(text.as_bytes())?;
    } else {
        eprint!("{text}");
    }
    Ok(())
}

fn class_boundary(kind: IncrementKind) -> Option<f64> {
    match kind {
        IncrementKind::ExpBernoulli { p0 } => Some(p0),
        IncrementKind::ExpBounded { mean_bound } | IncrementKind::ExactBounded { mean_bound } => Some(mean_bound),
        IncrementKind::Unit => None,
    }
}

fn binary_generator(mean: f64, kind: IncrementKind) -> Generator {
    match kind {
        IncrementKind::ExpBernoulli { .. } => Generator::Bernoulli { p: mean },
        _ => Generator::TwoPoint { mean },
    }
}

fn cmd_simulate(p: &Params, stdout: &mut dyn Write) -> Result<()> {
    let cfg = p.detector_config()?;
    let alpha = Params::calibrated_alpha(&cfg, p.alpha)?;
    let rule = p.stop_rule(alpha, StopMode::Sr)?;
    let kind = cfg.increment();
    let boundary = class_boundary(kind);
    let pre_mean = p
        .pre_mean
        .or(boundary)
        .ok_or_else(|| Error::Config("missing required option --pre-mean".into()))?;
    let pre = binary_generator(pre_mean, kind);
    let seed = p.seed.unwrap_or(0);
    let stream = match (p.post_mean, p.changepoint) {
        (Some(post), cp) => StreamSpec {
            pre_change: pre,
            post_change: Some(binary_generator(post, kind)),
            changepoint: Some(cp.unwrap_or(0)),
            seed,
        },
        (None, None) => StreamSpec::no_change(pre, seed),
        (None, Some(_)) => return Err(Error::Config("--changepoint needs --post-mean".into())),
    };
    let mc = MonteCarloConfig {
        replications: p.replications.unwrap_or(1000),
        workers: p.workers,
    };
    let report = run_replications(&cfg, &stream, &rule, &mc)?;
    let text = match p.format.unwrap_or(FormatArg::Toml) {
        FormatArg::Toml => to_toml(&report)?,
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::Io(e.to_string());
            w.write_record([
                "statistic",
                "replications",
                "mean_stat",
                "stderr",
                "lower_confidence_95",
                "truncation_count",
                "truncation_horizon",
            ])
            .map_err(io)?;
            for (name, r) in [("sr", &report.sr), ("cusum", &report.cusum)] {
                if let Some(r) = r {
                    w.write_record([
                        name.to_string(),
                        r.replications.to_string(),
                        fmt_real(r.mean_stat),
                        fmt_real(r.stderr),
                        fmt_real(r.lower_confidence_95),
                        r.truncation_count.to_string(),
                        r.truncation_horizon.to_string(),
                    ])
                    .map_err(io)?;
                }
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
                .map_err(|e| Error::Io(e.to_string()))?
        }
    };
    write_text(p.output.as_deref(), &text, stdout)
}

fn post_change_law(p: &Params, kind: IncrementKind) -> Result<PostChangeLaw> {
    let q = Params::require(p.q, "q")?;
    match kind {
        IncrementKind::ExpBernoulli { .. } => Ok(PostChangeLaw::Bernoulli { q }),
        IncrementKind::ExpBounded { mean_bound } | IncrementKind::ExactBounded { mean_bound } => {
            Ok(PostChangeLaw::Bounded {
                mean_bound,
                mean: q,
                second: Params::require(p.post_second, "post-second")?,
                third: p.post_third,
                fourth: p.post_fourth,
            })
        }
        IncrementKind::Unit => Err(Error::Config("bounds need a calibrated detector".into())),
    }
}

fn cmd_bounds(p: &Params, stdout: &mut dyn Write) -> Result<()> {
    let cfg = p.detector_config()?;
    let law = post_change_law(p, cfg.increment())?;
    let missing_v = || Error::Config("variance term needs --post-third and --post-fourth".into());
    let report = match &cfg {
        DetectorConfig::Mixture { calibration: c, .. } | DetectorConfig::ConstantAdaptive { calibration: c, .. } => {
            let s = divergence_and_variance(c.family, &law)?;
            let v = s.variance.ok_or_else(missing_v)?;
            let delay = delay_bound_well_separated(c, s.divergence, v)?;
            let (ub, with_ub) = if c.single_baseline {
                (None, None)
            } else {
                let ub = g_alpha_upper_bound(c.alpha, c.d_lower, c.d_upper)?;
                let mut shifted = c.clone();
                shifted.g_alpha = ub;
                (Some(ub), Some(delay_bound_well_separated(&shifted, s.divergence, v)?))
            };
            BoundsReport {
                post_change: s,
                delay,
                g_alpha_upper_bound: ub,
                delay_with_upper_bound: with_ub,
            }
        }
        DetectorConfig::Adaptive { calibration: c, .. } => BoundsReport {
            post_change: divergence_and_variance(c.family(), &law)?,
            delay: delay_bound_no_separation(c, &law)?,
            g_alpha_upper_bound: None,
            delay_with_upper_bound: None,
        },
        DetectorConfig::Trivial => return Err(Error::Config("bounds need a calibrated detector".into())),
    };
    write_text(p.output.as_deref(), &to_toml(&report)?, stdout)
}

fn cmd_generate(p: &Params, stdout: &mut dyn Write) -> Result<()> {
    let length = Params::require(p.length, "length")?;
    let family = Params::require(p.family, "family")?;
    let pre_mean = Params::require(p.pre_mean, "pre-mean")?;
    let make = |mean: f64| match family {
        FamilyArg::Bernoulli => Generator::Bernoulli { p: mean },
        FamilyArg::Bounded => Generator::TwoPoint { mean },
    };
    let stream = StreamSpec {
        pre_change: make(pre_mean),
        post_change: p.post_mean.map(make),
        changepoint: p.post_mean.map(|_| p.changepoint.unwrap_or(length / 2)),
        seed: p.seed.unwrap_or(0),
    };
    let xs = crate::simulate::generate_stream(&stream, length)?;
    let scale = p.normalization()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x"]).map_err(io)?;
    for x in xs {
        let raw = match scale {
            Some((lo, hi)) => lo + x * (hi - lo),
            None => x,
        };
        w.write_record([fmt_real(raw)]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_text(p.output.as_deref(), &String::from_utf8_lossy(&bytes), stdout)
}

pub fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Calibrate(p) => cmd_calibrate(&p.resolve()?, stdout),
        Command::Run(p) => cmd_run(&p.resolve()?, stdout),
        Command::Simulate(p) => cmd_simulate(&p.resolve()?, stdout),
        Command::Bounds(p) => cmd_bounds(&p.resolve()?, stdout),
        Command::Generate(p) => cmd_generate(&p.resolve()?, stdout),
    }
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::max_level()
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().as_str().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if log::set_logger(&LOGGER).is_ok() {
        let level = match std::env::var("EDETECT_LOG").as_deref() {
            Ok("debug") => log::LevelFilter::Debug,
            Ok("info") => log::LevelFilter::Info,
            Ok("off") => log::LevelFilter::Off,
            _ => log::LevelFilter::Warn,
        };
        log::set_max_level(level);
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                crate::error::ErrorClass::Config.exit_code()
            } else {
                0
            };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli.command, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("edetect: {e}");
            e.class().exit_code()
        }
    }
}
