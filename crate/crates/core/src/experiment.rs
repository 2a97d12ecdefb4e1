//! Ensembles of simulation runs under several weighting arms, and boxplot
//! summaries of the per-run matched proportions.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clearing::Mode;
use crate::error::{Error, Result};
use crate::graph::{BloodClass, Profile};
use crate::sim::{run_simulation, RunMetrics, SimulationConfig};
use crate::weights::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ProfileProportions,
    BloodClassBreakdown,
    WeightTransform,
}

impl ExperimentKind {
    /// Groups reported in the summary.
    pub fn groups(self) -> &'static [Group] {
        match self {
            ExperimentKind::BloodClassBreakdown => &[Group::All, Group::Underdemanded, Group::NonUnderdemanded],
            _ => &[Group::All],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub mode: Mode,
    pub weights: WeightVector,
}

impl Arm {
    pub fn standard() -> Self {
        Arm {
            label: "STANDARD".into(),
            mode: Mode::Standard,
            weights: WeightVector::standard(),
        }
    }

    pub fn prioritized(weights: WeightVector) -> Self {
        Arm {
            label: weights.label().to_string(),
            mode: Mode::Prioritized,
            weights,
        }
    }
}

fn default_runs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub base_config: SimulationConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub arms: Vec<Arm>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::param("an experiment needs at least one run"));
        }
        if self.arms.is_empty() {
            return Err(Error::param("an experiment needs at least one arm"));
        }
        let mut labels = BTreeSet::new();
        for arm in &self.arms {
            if !labels.insert(arm.label.as_str()) {
                return Err(Error::param(format!("duplicate arm label {:?}", arm.label)));
            }
        }
        self.base_config.validate()
    }

    /// Configuration of one run: the base with the arm's mode and weights,
    /// and seed `base_config.seed + run` shared by all arms.
    pub fn run_config(&self, arm: &Arm, run: usize) -> SimulationConfig {
        SimulationConfig {
            seed: self.base_config.seed.wrapping_add(run as u64),
            mode: arm.mode,
            weights: arm.weights.clone(),
            ..self.base_config.clone()
        }
    }
}

/// Blood-class grouping used when summarising.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    All,
    Underdemanded,
    /// Overdemanded, self-demanded and reciprocal pairs together.
    NonUnderdemanded,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Underdemanded => "underdemanded",
            Group::NonUnderdemanded => "non_underdemanded",
        }
    }

    pub fn contains(self, class: BloodClass) -> bool {
        match self {
            Group::All => true,
            Group::Underdemanded => class == BloodClass::Underdemanded,
            Group::NonUnderdemanded => class != BloodClass::Underdemanded,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Group::All),
            "underdemanded" => Ok(Group::Underdemanded),
            "non_underdemanded" => Ok(Group::NonUnderdemanded),
            other => Err(Error::param(format!("unknown group {other:?}"))),
        }
    }
}

/// Counts for one (arm, run, profile, blood class) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub arm: String,
    pub run: usize,
    pub profile: Profile,
    pub blood_class: BloodClass,
    pub entered: u64,
    pub matched: u64,
}

impl RawRow {
    pub fn proportion(&self) -> Option<f64> {
        (self.entered > 0).then(|| self.matched as f64 / self.entered as f64)
    }
}

/// Box statistics. Whiskers reach the furthest values within 1.5 IQR of the
/// median; anything beyond is an outlier.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics at position
/// `(n - 1) * p` of the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let median = quantile(&sorted, 0.5);
        let q3 = quantile(&sorted, 0.75);
        let reach = 1.5 * (q3 - q1);
        let (lo_fence, hi_fence) = (median - reach, median + reach);
        let inside = |x: &&f64| **x >= lo_fence && **x <= hi_fence;
        let lo_whisker = *sorted.iter().find(inside).unwrap_or(&median);
        let hi_whisker = *sorted.iter().rev().find(inside).unwrap_or(&median);
        let outliers = sorted.iter().copied().filter(|x| !inside(&x)).collect();
        Some(BoxStats {
            n: sorted.len(),
            q1,
            median,
            q3,
            lo_whisker,
            hi_whisker,
            outliers,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: String,
    pub profile: Profile,
    pub group: Group,
    pub stats: BoxStats,
}

/// Arm labels in first-appearance order.
fn arm_labels(raw: &[RawRow]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for row in raw {
        if !labels.contains(&row.arm) {
            labels.push(row.arm.clone());
        }
    }
    labels
}

/// Per-run matched proportion of `profile` pairs in `group` under `arm`,
/// ordered by run; runs where no such pair entered are skipped.
pub fn group_proportions(raw: &[RawRow], arm: &str, profile: Profile, group: Group) -> Vec<f64> {
    let mut runs: Vec<(usize, u64, u64)> = Vec::new();
    for row in raw
        .iter()
        .filter(|r| r.arm == arm && r.profile == profile && group.contains(r.blood_class))
    {
        match runs.iter_mut().find(|(run, _, _)| *run == row.run) {
            Some(slot) => {
                slot.1 += row.entered;
                slot.2 += row.matched;
            }
            None => runs.push((row.run, row.entered, row.matched)),
        }
    }
    runs.sort_by_key(|r| r.0);
    runs.into_iter()
        .filter(|&(_, entered, _)| entered > 0)
        .map(|(_, entered, matched)| matched as f64 / entered as f64)
        .collect()
}

/// Mean over runs of the per-run proportions, `None` if no run has data.
pub fn ensemble_mean(raw: &[RawRow], arm: &str, profile: Profile, group: Group) -> Option<f64> {
    let values = group_proportions(raw, arm, profile, group);
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Boxplot summaries per (arm, profile, group); cells without data are
/// left out.
pub fn summarize(raw: &[RawRow], groups: &[Group]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for arm in arm_labels(raw) {
        for profile in Profile::ALL {
            for &group in groups {
                if let Some(stats) = BoxStats::from_values(&group_proportions(raw, &arm, profile, group)) {
                    rows.push(SummaryRow {
                        arm: arm.clone(),
                        profile,
                        group,
                        stats,
                    });
                }
            }
        }
    }
    rows
}

fn raw_rows(label: &str, run: usize, metrics: &RunMetrics) -> Vec<RawRow> {
    let mut rows = Vec::with_capacity(32);
    for profile in Profile::ALL {
        for class in BloodClass::ALL {
            let cell = metrics.cell(profile, class);
            rows.push(RawRow {
                arm: label.to_string(),
                run,
                profile,
                blood_class: class,
                entered: cell.entered,
                matched: cell.matched,
            });
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub raw: Vec<RawRow>,
    pub summary: Vec<SummaryRow>,
    /// Per-day records, indexed `[arm][run]`.
    pub traces: Vec<Vec<RunMetrics>>,
}

impl ExperimentResult {
    pub fn ensemble_mean(&self, arm: &str, profile: Profile, group: Group) -> Option<f64> {
        ensemble_mean(&self.raw, arm, profile, group)
    }
}

/// Runs every arm over the shared seeds. Runs execute in parallel; results
/// are assembled in (arm, run) order so output does not depend on
/// scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = (0..spec.arms.len())
        .flat_map(|a| (0..spec.runs).map(move |r| (a, r)))
        .collect();
    let outcomes: Vec<Result<RunMetrics>> = tasks
        .par_iter()
        .map(|&(a, run)| {
            let arm = &spec.arms[a];
            let context = |e: Error| e.context(format!("arm {} run {run}", arm.label));
            let metrics = run_simulation(&spec.run_config(arm, run)).map_err(context)?;
            metrics.check_cardinality_floor().map_err(context)?;
            Ok(metrics)
        })
        .collect();

    let mut raw = Vec::with_capacity(tasks.len() * 32);
    let mut traces: Vec<Vec<RunMetrics>> = vec![Vec::with_capacity(spec.runs); spec.arms.len()];
    for (&(a, run), outcome) in tasks.iter().zip(outcomes) {
        let metrics = outcome?;
        raw.extend(raw_rows(&spec.arms[a].label, run, &metrics));
        traces[a].push(metrics);
    }
    let summary = summarize(&raw, spec.experiment.groups());
    Ok(ExperimentResult {
        spec: spec.clone(),
        raw,
        summary,
        traces,
    })
}
