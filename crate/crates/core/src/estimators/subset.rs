//! Conspicuous-subset search.
//!
//! For a subset Ω of examples,
//!
//! ```text
//! β₀(Ω) = (1/p(Ω) − 1) / (Σ_y p(y|Ω)²/p(y) − 1)
//! ```
//!
//! is an upper bound on β₀, and the search looks for the Ω minimizing it. For
//! each pivot class `j` the examples are sorted by `p(y=j|x)` descending and
//! only contiguous blocks of that order are considered: prefixes `{1..r}` or,
//! with [`CandidateFamily::Range`], arbitrary blocks `{l..r}`.
//!
//! Block statistics come from prefix sums, so a single candidate costs `O(C)`
//! and the exhaustive prefix scan is `O(N·C)` per pivot after sorting.

use serde::{Deserialize, Serialize};

use crate::dist::{ConditionalMatrix, Marginal};
use crate::error::{Error, Result};
use crate::estimators::{chi_square, BetaEstimate, Method, SubsetResult};

/// Below this, `p(y|Ω)` is treated as equal to `p(y)`.
const UNINFORMATIVE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateFamily {
    /// `Ω = {1..r}` in pivot-sorted order.
    #[default]
    Prefix,
    /// `Ω = {l..r}` in pivot-sorted order.
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Evaluate every candidate of the family.
    #[default]
    Exhaustive,
    /// Shrink the bracket `[a, b]` of the right endpoint to
    /// `[0.8a + 0.2b, 0.2a + 0.8b]` one side at a time while either side
    /// improves by more than the tolerance.
    Narrowing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetSearch {
    pub family: CandidateFamily,
    pub strategy: SearchStrategy,
    /// Relative improvement below which narrowing stops.
    pub tolerance: f64,
}

impl Default for SubsetSearch {
    fn default() -> Self {
        Self {
            family: CandidateFamily::Prefix,
            strategy: SearchStrategy::Exhaustive,
            tolerance: 1e-6,
        }
    }
}

impl SubsetSearch {
    pub fn narrowing() -> Self {
        Self {
            strategy: SearchStrategy::Narrowing,
            ..Self::default()
        }
    }
}

/// β₀(Ω) for an explicit set of example indices.
pub fn get_beta(cond: &ConditionalMatrix, omega: &[usize]) -> Result<f64> {
    let n = cond.n_examples();
    let mut member = vec![false; n];
    for &i in omega {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "example index {i} out of range for {n} examples"
            )));
        }
        member[i] = true;
    }
    let size = member.iter().filter(|&&m| m).count();
    if size == 0 || size == n {
        return Err(Error::UninformativeSubset);
    }

    let rows = cond.rows();
    let weights = cond.weights();
    let (mut inside, mut outside) = (0.0, 0.0);
    let mut q = vec![0.0; cond.n_classes()];
    for i in 0..n {
        if member[i] {
            inside += weights[i];
            for (j, qj) in q.iter_mut().enumerate() {
                *qj += weights[i] * rows[(i, j)];
            }
        } else {
            outside += weights[i];
        }
    }
    q.iter_mut().for_each(|qj| *qj /= inside);
    beta_score(inside, outside, &q, &cond.class_marginal()).ok_or(Error::UninformativeSubset)
}

fn beta_score(p_omega: f64, complement: f64, q: &[f64], p_y: &[f64]) -> Option<f64> {
    let chi2 = chi_square(q, p_y);
    (chi2 > UNINFORMATIVE && p_omega > 0.0).then(|| complement / p_omega / chi2)
}

fn info_density_score(p_omega: f64, complement: f64, q: &[f64], p_y: &[f64]) -> Option<f64> {
    let kl: f64 = q
        .iter()
        .zip(p_y)
        .filter(|(&qj, &pj)| qj > 0.0 && pj > 0.0)
        .map(|(&qj, &pj)| qj * (qj / pj).ln())
        .sum();
    let self_information = -(-complement).ln_1p();
    (kl > UNINFORMATIVE && p_omega > 0.0).then(|| self_information / kl)
}

type Score = fn(f64, f64, &[f64], &[f64]) -> Option<f64>;

/// Examples sorted by one pivot column, with prefix sums of weights and of
/// weighted rows.
struct PivotOrder {
    order: Vec<usize>,
    n_classes: usize,
    cum_weight: Vec<f64>,
    /// Suffix sums of weights, so complements of large blocks stay accurate.
    tail_weight: Vec<f64>,
    cum_rows: Vec<f64>,
}

impl PivotOrder {
    fn new(cond: &ConditionalMatrix, pivot: usize) -> Self {
        let n = cond.n_examples();
        let c = cond.n_classes();
        let rows = cond.rows();
        let weights = cond.weights();
        let mut order: Vec<usize> = (0..n).collect();
        // Stable: ties keep original index order.
        order.sort_by(|&a, &b| rows[(b, pivot)].total_cmp(&rows[(a, pivot)]));

        let mut cum_weight = vec![0.0; n + 1];
        let mut cum_rows = vec![0.0; (n + 1) * c];
        for (k, &i) in order.iter().enumerate() {
            cum_weight[k + 1] = cum_weight[k] + weights[i];
            for j in 0..c {
                cum_rows[(k + 1) * c + j] = cum_rows[k * c + j] + weights[i] * rows[(i, j)];
            }
        }
        let mut tail_weight = vec![0.0; n + 1];
        for k in (0..n).rev() {
            tail_weight[k] = tail_weight[k + 1] + weights[order[k]];
        }
        Self {
            order,
            n_classes: c,
            cum_weight,
            tail_weight,
            cum_rows,
        }
    }

    fn len(&self) -> usize {
        self.order.len()
    }

    /// Score of the block `order[l..r]`; `None` for empty, full or
    /// uninformative blocks.
    fn score(&self, l: usize, r: usize, p_y: &[f64], score: Score) -> Option<f64> {
        if l >= r || r - l >= self.len() {
            return None;
        }
        let inside = self.cum_weight[r] - self.cum_weight[l];
        let outside = self.cum_weight[l] + self.tail_weight[r];
        let c = self.n_classes;
        let q: Vec<f64> = (0..c)
            .map(|j| (self.cum_rows[r * c + j] - self.cum_rows[l * c + j]) / inside)
            .collect();
        score(inside, outside, &q, p_y)
    }

    fn block_stats(&self, l: usize, r: usize) -> (f64, Vec<f64>) {
        let inside = self.cum_weight[r] - self.cum_weight[l];
        let c = self.n_classes;
        let q = (0..c)
            .map(|j| (self.cum_rows[r * c + j] - self.cum_rows[l * c + j]) / inside)
            .collect();
        (inside, q)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    l: usize,
    r: usize,
}

fn keep_better(best: &mut Option<Candidate>, value: Option<f64>, l: usize, r: usize) {
    if let Some(value) = value {
        if best.is_none_or(|b| value < b.value) {
            *best = Some(Candidate { value, l, r });
        }
    }
}

fn improves(new: Option<f64>, old: Option<f64>, tol: f64) -> bool {
    match (new, old) {
        (Some(_), None) => true,
        (Some(n), Some(o)) => n < o - tol * o.abs(),
        _ => false,
    }
}

/// Bracket narrowing over `k ∈ [lo, hi]`; every evaluated point is offered
/// to `best`.
fn narrow(
    lo: usize,
    hi: usize,
    tol: f64,
    mut f: impl FnMut(usize) -> Option<f64>,
    mut record: impl FnMut(usize, Option<f64>),
) {
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let mut fb = f(b);
    record(a, fa);
    record(b, fb);
    while b > a + 1 {
        let step = ((b - a) as f64 * 0.2).round().max(1.0) as usize;
        let (a2, b2) = (a + step, b - step);
        let fa2 = f(a2);
        let fb2 = f(b2);
        record(a2, fa2);
        record(b2, fb2);
        let move_a = improves(fa2, fa, tol);
        let move_b = improves(fb2, fb, tol);
        if move_a {
            a = a2;
            fa = fa2;
        }
        if move_b {
            b = b2;
            fb = fb2;
        }
        if !(move_a || move_b) || a >= b {
            break;
        }
    }
}

fn search_pivot(order: &PivotOrder, p_y: &[f64], config: &SubsetSearch, score: Score) -> Option<Candidate> {
    let n = order.len();
    let mut best = None;
    match (config.family, config.strategy) {
        (CandidateFamily::Prefix, SearchStrategy::Exhaustive) => {
            for r in 1..n {
                keep_better(&mut best, order.score(0, r, p_y, score), 0, r);
            }
        }
        (CandidateFamily::Range, SearchStrategy::Exhaustive) => {
            for l in 0..n {
                for r in l + 1..=n {
                    keep_better(&mut best, order.score(l, r, p_y, score), l, r);
                }
            }
        }
        (CandidateFamily::Prefix, SearchStrategy::Narrowing) => {
            narrow(
                1,
                n,
                config.tolerance,
                |r| order.score(0, r, p_y, score),
                |r, v| keep_better(&mut best, v, 0, r),
            );
        }
        (CandidateFamily::Range, SearchStrategy::Narrowing) => {
            // Coordinate-wise: narrow the right end with the left end fixed,
            // then the left end with the right end fixed, until neither helps.
            let (mut l, mut r) = (0, n);
            let mut current: Option<f64> = None;
            for _ in 0..64 {
                let mut round_best: Option<Candidate> = None;
                narrow(
                    l + 1,
                    n,
                    config.tolerance,
                    |rr| order.score(l, rr, p_y, score),
                    |rr, v| keep_better(&mut round_best, v, l, rr),
                );
                if let Some(c) = round_best {
                    r = c.r;
                }
                narrow(
                    0,
                    r - 1,
                    config.tolerance,
                    |ll| order.score(ll, r, p_y, score),
                    |ll, v| keep_better(&mut round_best, v, ll, r),
                );
                let Some(c) = round_best else { break };
                l = c.l;
                r = c.r;
                keep_better(&mut best, Some(c.value), c.l, c.r);
                if !improves(Some(c.value), current, config.tolerance) {
                    break;
                }
                current = Some(c.value);
            }
        }
    }
    best
}

/// A single example or a single class leaves X independent of Y.
fn check_search_input(cond: &ConditionalMatrix) -> Result<()> {
    if cond.n_examples() < 2 || cond.n_classes() < 2 {
        return Err(Error::Independent);
    }
    Ok(())
}

fn best_over_pivots(
    cond: &ConditionalMatrix,
    config: &SubsetSearch,
    score: Score,
) -> Result<(Candidate, PivotOrder, usize)> {
    check_search_input(cond)?;
    let p_y = cond.class_marginal();
    let mut best: Option<(Candidate, PivotOrder, usize)> = None;
    for pivot in 0..cond.n_classes() {
        let order = PivotOrder::new(cond, pivot);
        if let Some(c) = search_pivot(&order, &p_y, config, score) {
            if best.as_ref().is_none_or(|(b, _, _)| c.value < b.value) {
                best = Some((c, order, pivot));
            }
        }
    }
    best.ok_or(Error::Independent)
}

fn subset_result(order: &PivotOrder, c: Candidate, pivot: usize, beta0: f64) -> Result<SubsetResult> {
    let (p_omega, q) = order.block_stats(c.l, c.r);
    let mut member_indices = order.order[c.l..c.r].to_vec();
    member_indices.sort_unstable();
    Ok(SubsetResult {
        beta0,
        pivot_class: pivot,
        member_indices,
        p_omega,
        p_y_given_omega: Marginal::new(q)?,
    })
}

/// Upper bound on β₀ and the conspicuous subset attaining it.
pub fn subset_search(cond: &ConditionalMatrix, config: &SubsetSearch) -> Result<SubsetResult> {
    let (c, order, pivot) = best_over_pivots(cond, config, beta_score)?;
    subset_result(&order, c, pivot, c.value)
}

/// [`subset_search`] wrapped as a [`BetaEstimate`].
pub fn subset_estimate(cond: &ConditionalMatrix, config: &SubsetSearch) -> Result<BetaEstimate> {
    let subset = subset_search(cond, config)?;
    let mut est = BetaEstimate::new(Method::SubsetSearch, subset.beta0)
        .with_diagnostic("pivot_class", subset.pivot_class)
        .with_diagnostic("subset_size", subset.member_indices.len())
        .with_diagnostic("p_omega", subset.p_omega)
        .with_diagnostic("family", serde_json::to_value(config.family)?)
        .with_diagnostic("strategy", serde_json::to_value(config.strategy)?);
    est.subset = Some(subset);
    Ok(est)
}

/// Minimizes `−ln p(Ω) / KL(p(y|Ω) ‖ p(y))` over the same candidates as
/// [`subset_search`]. Replacing both sides of β₀(Ω) by smaller quantities
/// means the result is not a bound on β₀; it is flagged `diagnostic_only`.
pub fn info_density_estimate(cond: &ConditionalMatrix, config: &SubsetSearch) -> Result<BetaEstimate> {
    let (c, order, pivot) = best_over_pivots(cond, config, info_density_score)?;
    let p_y = cond.class_marginal();
    let subset_beta = order
        .score(c.l, c.r, &p_y, beta_score)
        .ok_or(Error::UninformativeSubset)?;
    let subset = subset_result(&order, c, pivot, subset_beta)?;
    let mut est = BetaEstimate::new(Method::InfoDensity, c.value)
        .with_diagnostic("diagnostic_only", true)
        .with_diagnostic("pivot_class", pivot)
        .with_diagnostic("subset_beta0", subset_beta);
    est.subset = Some(subset);
    Ok(est)
}
