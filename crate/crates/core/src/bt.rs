//! Bradley-Terry estimation from pairwise comparisons.
//!
//! Under the model item `i` beats item `j` with probability `p_i / (p_i + p_j)`.
//! Scores are fitted either directly, one free score per item, by the
//! minorization-maximization fixed point, or through a fixed-effects
//! attribute model `log p_i = β · x_i` fitted by Newton-Raphson.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Profile;
use crate::weights::ProfileWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresentationOrder {
    Original,
    Reversed,
}

impl FromStr for PresentationOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(PresentationOrder::Original),
            "reversed" => Ok(PresentationOrder::Reversed),
            other => Err(Error::param(format!("unknown presentation order {other:?}"))),
        }
    }
}

impl fmt::Display for PresentationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresentationOrder::Original => "original",
            PresentationOrder::Reversed => "reversed",
        })
    }
}

/// One respondent's choice between two profiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRecord {
    pub respondent_id: String,
    pub profile_a: Profile,
    pub profile_b: Profile,
    pub chosen: Profile,
    pub order: PresentationOrder,
}

impl ComparisonRecord {
    pub fn new(
        respondent_id: impl Into<String>,
        profile_a: Profile,
        profile_b: Profile,
        chosen: Profile,
        order: PresentationOrder,
    ) -> Result<Self> {
        if profile_a == profile_b {
            return Err(Error::param(format!("profile {} compared with itself", profile_a.id())));
        }
        if chosen != profile_a && chosen != profile_b {
            return Err(Error::param(format!(
                "chosen profile {} is neither {} nor {}",
                chosen.id(),
                profile_a.id(),
                profile_b.id()
            )));
        }
        Ok(ComparisonRecord {
            respondent_id: respondent_id.into(),
            profile_a,
            profile_b,
            chosen,
            order,
        })
    }

    pub fn loser(&self) -> Profile {
        if self.chosen == self.profile_a {
            self.profile_b
        } else {
            self.profile_a
        }
    }
}

/// Square matrix of win counts: `get(i, j)` is how often `i` beat `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    n: usize,
    counts: Vec<f64>,
}

impl WinMatrix {
    pub fn zeros(n: usize) -> Self {
        WinMatrix {
            n,
            counts: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = WinMatrix::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param("win matrix must be square"));
            }
            for (j, &w) in row.iter().enumerate() {
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::param(format!("invalid win count {w} at ({i},{j})")));
                }
                if i == j && w != 0.0 {
                    return Err(Error::param("win matrix diagonal must be zero"));
                }
                m.counts[i * n + j] = w;
            }
        }
        Ok(m)
    }

    /// 8x8 profile matrix from comparison records.
    pub fn from_records(records: &[ComparisonRecord]) -> Self {
        let mut m = WinMatrix::zeros(Profile::COUNT);
        for r in records {
            m.counts[r.chosen.index() * Profile::COUNT + r.loser().index()] += 1.0;
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, winner: usize, loser: usize) -> f64 {
        self.counts[winner * self.n + loser]
    }

    pub fn add(&mut self, winner: usize, loser: usize, count: f64) {
        assert_ne!(winner, loser, "no self-comparisons");
        self.counts[winner * self.n + loser] += count;
    }

    /// Comparisons between `i` and `j` in either direction.
    pub fn games(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) + self.get(j, i)
    }

    pub fn wins(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.get(i, j)).sum()
    }

    fn with_pseudo_count(&self, pseudo: f64) -> Self {
        let mut m = self.clone();
        if pseudo > 0.0 {
            for i in 0..self.n {
                for j in 0..self.n {
                    if i != j {
                        m.counts[i * self.n + j] += pseudo;
                    }
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MaxIsOne,
}

/// Fitted scores, normalised so the largest is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BTScores {
    pub scores: Vec<f64>,
    pub normalization: Normalization,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every sweep, starting with the initial point.
    pub history: Vec<f64>,
}

impl BTScores {
    /// Per-profile view; requires exactly eight items.
    pub fn profile_scores(&self) -> Result<ProfileWeights> {
        let values: [f64; 8] = self
            .scores
            .as_slice()
            .try_into()
            .map_err(|_| Error::param(format!("expected 8 profile scores, have {}", self.scores.len())))?;
        Ok(ProfileWeights::new(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pseudo_count: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
            pseudo_count: 0.5,
        }
    }
}

/// Log-likelihood of `scores` under the win counts.
pub fn log_likelihood(matrix: &WinMatrix, scores: &[f64]) -> f64 {
    let n = matrix.size();
    let mut ll = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = matrix.get(i, j);
            if i != j && w > 0.0 {
                ll += w * (scores[i].ln() - (scores[i] + scores[j]).ln());
            }
        }
    }
    ll
}

fn normalize_max(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 && max.is_finite() {
        for s in scores.iter_mut() {
            *s /= max;
        }
    }
}

/// Maximum-likelihood scores by the MM iteration
/// `p_i <- W_i / Σ_j n_ij / (p_i + p_j)`, rescaled to max 1 after each sweep.
///
/// A non-converged fit is returned with `converged = false` and the last iterate.
pub fn fit_direct(matrix: &WinMatrix, options: &FitOptions) -> Result<BTScores> {
    if !(options.pseudo_count >= 0.0) {
        return Err(Error::param("pseudo_count must be non-negative"));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let n = matrix.size();
    let data = matrix.with_pseudo_count(options.pseudo_count);
    for i in 0..n {
        if (0..n).all(|j| data.games(i, j) == 0.0) {
            return Err(Error::Estimation(format!("item {i} never appears in a comparison")));
        }
        if data.wins(i) == 0.0 {
            return Err(Error::Estimation(format!(
                "item {i} never wins, so its maximum-likelihood score is zero; use a positive pseudo-count"
            )));
        }
    }

    let mut scores = vec![1.0; n];
    let mut history = vec![log_likelihood(&data, &scores)];
    let mut converged = n <= 1;
    let mut iterations = 0;
    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| data.games(i, j) / (scores[i] + scores[j]))
                .sum();
            next[i] = data.wins(i) / denom;
        }
        normalize_max(&mut next);
        let change = scores
            .iter()
            .zip(&next)
            .map(|(old, new)| ((new - old) / old).abs())
            .fold(0.0, f64::max);
        scores = next;
        history.push(log_likelihood(&data, &scores));
        converged = change < options.tolerance;
    }
    normalize_max(&mut scores);
    Ok(BTScores {
        log_likelihood: log_likelihood(&data, &scores),
        scores,
        normalization: Normalization::MaxIsOne,
        iterations,
        converged,
        history,
    })
}

/// `P(i beats j) = p_i / (p_i + p_j)`.
pub fn predict(scores: &BTScores, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::param("cannot predict an item against itself"));
    }
    let (pi, pj) = match (scores.scores.get(i), scores.scores.get(j)) {
        (Some(&pi), Some(&pj)) => (pi, pj),
        _ => return Err(Error::param(format!("item index out of range ({i}, {j})"))),
    };
    Ok(pi / (pi + pj))
}

/// Coefficients are clamped to this magnitude under separation.
pub const BETA_CAP: f64 = 20.0;

/// Fixed-effects attribute model: `log p_i = Σ_r β_r x_ir` over the
/// age / drinking / health indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeModel {
    /// Coefficients for (age, drinking, health).
    pub betas: [f64; 3],
    pub derived_scores: BTScores,
    /// Set when some coefficient ran off to the cap (perfect separation).
    pub separated: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn attribute_log_likelihood(matrix: &WinMatrix, beta: &Vector3<f64>) -> f64 {
    let mut ll = 0.0;
    for i in Profile::ALL {
        for j in Profile::ALL {
            let w = matrix.get(i.index(), j.index());
            if i != j && w > 0.0 {
                let z = beta.dot(&difference(i, j));
                // ln σ(z) = -ln(1 + e^{-z}), written stably.
                ll -= w * (if z >= 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() });
            }
        }
    }
    ll
}

fn difference(i: Profile, j: Profile) -> Vector3<f64> {
    Vector3::from(i.indicators()) - Vector3::from(j.indicators())
}

/// Newton-Raphson fit of the attribute model on an 8x8 profile matrix.
pub fn fit_attribute(matrix: &WinMatrix, tolerance: f64, max_iterations: usize) -> Result<AttributeModel> {
    if matrix.size() != Profile::COUNT {
        return Err(Error::param("attribute model needs an 8x8 profile matrix"));
    }
    let total: f64 = (0..8).map(|i| matrix.wins(i)).sum();
    if total == 0.0 {
        return Err(Error::Estimation("no comparisons to fit".into()));
    }
    let mut beta = Vector3::zeros();
    let mut ll = attribute_log_likelihood(matrix, &beta);
    let mut history = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut separated = false;
    while iterations < max_iterations {
        iterations += 1;
        let mut grad = Vector3::zeros();
        let mut info = Matrix3::zeros();
        for i in Profile::ALL {
            for j in Profile::ALL {
                let w = matrix.get(i.index(), j.index());
                if i == j || w == 0.0 {
                    continue;
                }
                let d = difference(i, j);
                let s = sigmoid(beta.dot(&d));
                grad += d * (w * (1.0 - s));
                info += d * d.transpose() * (w * s * (1.0 - s));
            }
        }
        let Some(step) = info.cholesky().map(|c| c.solve(&grad)) else {
            // Vanishing curvature: the likelihood keeps rising towards infinity.
            separated = true;
            beta = beta.map(|b: f64| if b.abs() > 1e-12 { b.signum() * BETA_CAP } else { b });
            break;
        };
        let mut scale = 1.0;
        let mut candidate = beta + step;
        let mut cand_ll = attribute_log_likelihood(matrix, &candidate);
        while cand_ll < ll - 1e-12 * ll.abs() && scale > 1e-8 {
            scale *= 0.5;
            candidate = beta + step * scale;
            cand_ll = attribute_log_likelihood(matrix, &candidate);
        }
        beta = candidate;
        ll = cand_ll;
        history.push(ll);
        if beta.iter().any(|b| b.abs() > BETA_CAP) {
            separated = true;
            beta = beta.map(|b| b.clamp(-BETA_CAP, BETA_CAP));
            break;
        }
        if (step * scale).amax() < tolerance {
            converged = true;
            break;
        }
    }
    let mut scores: Vec<f64> = Profile::ALL
        .iter()
        .map(|p| beta.dot(&Vector3::from(p.indicators())).exp())
        .collect();
    normalize_max(&mut scores);
    let betas = [beta[0], beta[1], beta[2]];
    let ll = attribute_log_likelihood(matrix, &beta);
    Ok(AttributeModel {
        betas,
        derived_scores: BTScores {
            scores,
            normalization: Normalization::MaxIsOne,
            log_likelihood: ll,
            iterations,
            converged: converged && !separated,
            history,
        },
        separated,
    })
}

/// Percentage of appearances in which each profile was chosen. Profiles that
/// never appear are absent from the map.
pub fn preference_rates(records: &[ComparisonRecord]) -> BTreeMap<Profile, f64> {
    let mut chosen = [0usize; 8];
    let mut seen = [0usize; 8];
    for r in records {
        seen[r.profile_a.index()] += 1;
        seen[r.profile_b.index()] += 1;
        chosen[r.chosen.index()] += 1;
    }
    Profile::ALL
        .into_iter()
        .filter(|p| seen[p.index()] > 0)
        .map(|p| (p, 100.0 * chosen[p.index()] as f64 / seen[p.index()] as f64))
        .collect()
}

/// Win counts of the three-patient illustration: a beat b 63/100 times,
/// a beat c 72/100, b beat c 58/100.
pub fn worked_example_matrix() -> WinMatrix {
    WinMatrix::from_rows(&[
        vec![0.0, 63.0, 72.0],
        vec![37.0, 0.0, 58.0],
        vec![28.0, 42.0, 0.0],
    ])
    .expect("static matrix is valid")
}
