//! Berk-Nash machinery: KL-minimizing beliefs, best responses, break
//! points, certificate verification and a grid-scan equilibrium finder.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::model::{agent_utility, check_generic, expected_kl, Contract, ContractInstance, GENERIC_EQ_TOL};

/// Relative tolerance for "jointly minimal" expected KL values.
pub const MIN_KL_TOL: f64 = 1e-9;
/// Relative tolerance for agent indifference.
pub const INDIFFERENCE_TOL: f64 = 1e-9;
/// Absolute slack allowed on the consistency condition.
pub const CONSISTENCY_TOL: f64 = 1e-7;
/// Rounding allowance on the optimality residual, relative to utility size.
const OPTIMALITY_NOISE: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-12;

fn simplex_vector(probs: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::Empty(what));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::InvalidValue(format!("{what} entry {i} is {p}")));
        }
        if p < 0.0 {
            return Err(Error::NegativeProbability {
                location: format!("{what} entry {i}"),
                value: p,
            });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::SumDeviation {
            location: what.to_string(),
            sum,
        });
    }
    Ok(probs)
}

fn support_of(probs: &[f64]) -> Vec<usize> {
    probs.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(i, _)| i).collect()
}

/// Distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        simplex_vector(probs, "action distribution").map(Self)
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut p = vec![0.0; n];
        p[action] = 1.0;
        Self(p)
    }

    /// Two-action distribution `(a1, 1 - a1)`.
    pub fn two(a1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a1) {
            return Err(Error::InvalidValue(format!("alpha(a1) = {a1} outside [0, 1]")));
        }
        Ok(Self(vec![a1, 1.0 - a1]))
    }

    /// Empirical frequencies.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("action counts"));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.0)
    }
}

/// Posterior over the belief set.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        simplex_vector(probs, "posterior").map(Self)
    }

    pub fn point_mass(n: usize, belief: usize) -> Self {
        let mut p = vec![0.0; n];
        p[belief] = 1.0;
        Self(p)
    }

    /// Weight `w` on `first` and `1 - w` on `second`.
    pub fn pair(n: usize, first: usize, second: usize, w: f64) -> Self {
        let mut p = vec![0.0; n];
        p[first] = w;
        p[second] += 1.0 - w;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub optimality: f64,
    #[serde(serialize_with = "crate::serde_ext::extended")]
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerkNashCertificate {
    pub alpha: ActionDistribution,
    pub mu: Posterior,
    pub residuals: Residuals,
    pub epsilon: f64,
    pub valid: bool,
}

impl BerkNashCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

fn require_two_actions(inst: &ContractInstance, what: &str) -> Result<()> {
    if inst.n_actions() != 2 {
        return Err(Error::Unsupported(format!(
            "{what} needs exactly two actions, instance has {}",
            inst.n_actions()
        )));
    }
    Ok(())
}

/// Indices within `tol` (relative) of the minimum of `values`.
pub(crate) fn min_set(values: &[f64], tol: f64) -> Result<Vec<usize>> {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return Err(Error::AllBeliefsInfinite);
    }
    let cut = m + tol * (1.0 + m.abs());
    Ok(values.iter().enumerate().filter(|(_, v)| **v <= cut).map(|(i, _)| i).collect())
}

/// Expected KL of every belief under `alpha`.
pub fn expected_kl_row(inst: &ContractInstance, alpha: &[f64]) -> Vec<f64> {
    (0..inst.n_beliefs()).map(|b| expected_kl(inst, alpha, b)).collect()
}

/// Beliefs whose expected KL under `alpha` is within `tol` of the minimum.
pub fn min_kl_beliefs(inst: &ContractInstance, alpha: &[f64], tol: f64) -> Result<Vec<usize>> {
    inst.check_alpha(alpha)?;
    min_set(&expected_kl_row(inst, alpha), tol)
}

/// The `alpha(a1)` at which beliefs `b` and `c` have equal expected KL, if
/// it lies in `[0, 1]`.
///
/// Returns `None` when the equation is degenerate, and also when the
/// equality falls exactly on an endpoint because the two beliefs share a
/// KL value at one action (a genericity violation that `check_generic`
/// reports).
pub fn mixing_point(inst: &ContractInstance, b: usize, c: usize) -> Result<Option<f64>> {
    require_two_actions(inst, "mixing point")?;
    inst.check_belief(b)?;
    inst.check_belief(c)?;
    if b == c {
        return Err(Error::InvalidValue("mixing point needs two distinct beliefs".into()));
    }
    for x in [b, c] {
        if !(inst.kl(x, 0).is_finite() && inst.kl(x, 1).is_finite()) {
            return Err(Error::InfiniteProfile(x));
        }
    }
    let d1 = inst.kl(b, 0) - inst.kl(c, 0);
    let d2 = inst.kl(b, 1) - inst.kl(c, 1);
    // alpha d1 + (1 - alpha) d2 = 0.
    if d1.abs() <= GENERIC_EQ_TOL || d2.abs() <= GENERIC_EQ_TOL {
        return Ok(None);
    }
    if d1.signum() == d2.signum() {
        return Ok(None);
    }
    let alpha = d2 / (d2 - d1);
    Ok((0.0..=1.0).contains(&alpha).then_some(alpha))
}

/// Mixing points that are genuine break points: both beliefs are jointly
/// minimal there. Sorted, with 0 and 1 included. Independent of the contract.
pub(crate) fn break_point_values(inst: &ContractInstance) -> Vec<f64> {
    let finite: Vec<usize> = (0..inst.n_beliefs())
        .filter(|&b| inst.kl(b, 0).is_finite() && inst.kl(b, 1).is_finite())
        .collect();
    let mut bp = vec![0.0, 1.0];
    for (i, &b) in finite.iter().enumerate() {
        for &c in &finite[i + 1..] {
            let Ok(Some(a)) = mixing_point(inst, b, c) else { continue };
            if a <= 0.0 || a >= 1.0 {
                continue;
            }
            if let Ok(mins) = min_kl_beliefs(inst, &[a, 1.0 - a], MIN_KL_TOL) {
                if mins.contains(&b) && mins.contains(&c) {
                    bp.push(a);
                }
            }
        }
    }
    bp.sort_by(f64::total_cmp);
    bp.dedup_by(|x, y| (*x - *y).abs() <= 1e-15);
    bp
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakPointDiagram {
    /// Strictly increasing values of `alpha(a1)`, starting at 0 and ending at 1.
    pub break_points: Vec<f64>,
    /// Best response on each open interval (lowest index on ties).
    pub region_actions: Vec<usize>,
    /// False when the instance fails the genericity check.
    pub reliable: bool,
    pub warnings: Vec<String>,
}

/// Break points of the best-response correspondence under `contract`.
pub fn break_points(inst: &ContractInstance, contract: &Contract) -> Result<BreakPointDiagram> {
    require_two_actions(inst, "break points")?;
    inst.check_contract(contract)?;
    let report = check_generic(inst)?;
    let warnings: Vec<String> = report.violations.iter().map(|v| format!("{v:?}")).collect();
    let break_points = break_point_values(inst);
    let mut region_actions = Vec::with_capacity(break_points.len() - 1);
    for w in break_points.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let br = best_response_set(inst, &[mid, 1.0 - mid], contract)?;
        region_actions.push(br[0]);
    }
    Ok(BreakPointDiagram {
        break_points,
        region_actions,
        reliable: report.pass,
        warnings,
    })
}

/// `V(a1, B, P) - V(a2, B, P)` for every belief.
pub(crate) fn utility_gaps(inst: &ContractInstance, contract: &Contract) -> Vec<f64> {
    (0..inst.n_beliefs())
        .map(|b| agent_utility(inst, 0, b, contract) - agent_utility(inst, 1, b, contract))
        .collect()
}

fn utility_scale(inst: &ContractInstance, contract: &Contract) -> f64 {
    let mut m: f64 = 0.0;
    for b in 0..inst.n_beliefs() {
        for a in 0..inst.n_actions() {
            m = m.max(agent_utility(inst, a, b, contract).abs());
        }
    }
    1.0 + m
}

/// Actions that best respond to some posterior over the KL-minimizing
/// beliefs at `alpha`.
pub fn best_response_set(inst: &ContractInstance, alpha: &[f64], contract: &Contract) -> Result<Vec<usize>> {
    inst.check_contract(contract)?;
    let mins = min_kl_beliefs(inst, alpha, MIN_KL_TOL)?;
    let tol = INDIFFERENCE_TOL * utility_scale(inst, contract);
    if inst.n_actions() == 2 {
        let gaps = utility_gaps(inst, contract);
        let lo = mins.iter().map(|&b| gaps[b]).fold(f64::INFINITY, f64::min);
        let hi = mins.iter().map(|&b| gaps[b]).fold(f64::NEG_INFINITY, f64::max);
        let mut out = Vec::new();
        if hi >= -tol {
            out.push(0);
        }
        if lo <= tol {
            out.push(1);
        }
        return Ok(out);
    }
    // General case: a* is a best response iff some mu over the minimizers
    // makes it weakly better than every other action.
    let n = inst.n_actions();
    let v = |a: usize, b: usize| agent_utility(inst, a, b, contract);
    let mut out = Vec::new();
    for star in 0..n {
        let mut lp = LinearProgram::new(vec![0.0; mins.len()], Sense::Maximize);
        lp.constrain(vec![1.0; mins.len()], Relation::Eq, 1.0);
        for a in (0..n).filter(|&a| a != star) {
            let row = mins.iter().map(|&b| v(star, b) - v(a, b)).collect();
            lp.constrain(row, Relation::Ge, -tol);
        }
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Optimal => out.push(star),
            LpStatus::Infeasible => {}
            s => return Err(Error::Lp(format!("best-response feasibility returned {s:?}"))),
        }
    }
    Ok(out)
}

/// Checks the (ε-)Berk-Nash conditions for `(alpha, mu)` under `contract`.
///
/// With `epsilon > 0` the optimality residual is the ε-form shortfall of the
/// average action; with `epsilon == 0` it is the worst shortfall over
/// supported actions.
pub fn verify_berk_nash(
    inst: &ContractInstance,
    contract: &Contract,
    alpha: &ActionDistribution,
    mu: &Posterior,
    epsilon: f64,
) -> Result<BerkNashCertificate> {
    inst.check_contract(contract)?;
    inst.check_alpha(alpha.probs())?;
    if mu.probs().len() != inst.n_beliefs() {
        return Err(Error::DimensionMismatch(format!(
            "posterior has {} entries for {} beliefs",
            mu.probs().len(),
            inst.n_beliefs()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidValue(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let mu_p = mu.probs();
    let ev: Vec<f64> = (0..inst.n_actions())
        .map(|a| {
            mu_p.iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(b, w)| w * agent_utility(inst, a, b, contract))
                .sum()
        })
        .collect();
    let best = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let optimality = if epsilon > 0.0 {
        best - alpha.probs().iter().zip(&ev).map(|(w, v)| w * v).sum::<f64>()
    } else {
        alpha.support().iter().map(|&a| best - ev[a]).fold(0.0, f64::max)
    }
    .max(0.0);

    let ekl = expected_kl_row(inst, alpha.probs());
    let min = ekl.iter().copied().fold(f64::INFINITY, f64::min);
    let consistency = if min.is_infinite() {
        f64::INFINITY
    } else {
        mu.support().iter().map(|&b| ekl[b] - min).fold(0.0, f64::max)
    };

    let noise = OPTIMALITY_NOISE * (1.0 + ev.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let valid = optimality <= epsilon + noise && consistency <= CONSISTENCY_TOL;
    Ok(BerkNashCertificate {
        alpha: alpha.clone(),
        mu: mu.clone(),
        residuals: Residuals {
            optimality,
            consistency,
        },
        epsilon,
        valid,
    })
}

/// Candidate posteriors over a minimizing set: each point mass, plus the
/// indifference mixture of every pair whose preferences straddle zero.
pub(crate) fn posterior_candidates(n_beliefs: usize, mins: &[usize], gaps: &[f64], tol: f64) -> Vec<Posterior> {
    let mut out: Vec<Posterior> = mins.iter().map(|&b| Posterior::point_mass(n_beliefs, b)).collect();
    for (i, &b) in mins.iter().enumerate() {
        for &c in &mins[i + 1..] {
            let (gb, gc) = (gaps[b], gaps[c]);
            if gb.abs() <= tol && gc.abs() <= tol {
                out.push(Posterior::pair(n_beliefs, b, c, 0.5));
            } else if gb * gc < 0.0 {
                // w gb + (1 - w) gc = 0
                out.push(Posterior::pair(n_beliefs, b, c, gc / (gc - gb)));
            }
        }
    }
    out
}

/// Best certificate for `alpha` over posteriors supported on its
/// KL-minimizing set: valid ones first, then the smallest optimality
/// residual. Used to judge empirical action frequencies.
pub fn kl_minimizing_certificate(
    inst: &ContractInstance,
    contract: &Contract,
    alpha: &ActionDistribution,
    epsilon: f64,
) -> Result<BerkNashCertificate> {
    inst.check_contract(contract)?;
    let mins = min_kl_beliefs(inst, alpha.probs(), MIN_KL_TOL)?;
    let nb = inst.n_beliefs();
    let candidates = if inst.n_actions() == 2 {
        let tol = INDIFFERENCE_TOL * utility_scale(inst, contract);
        posterior_candidates(nb, &mins, &utility_gaps(inst, contract), tol)
    } else {
        mins.iter().map(|&b| Posterior::point_mass(nb, b)).collect()
    };
    let mut best: Option<BerkNashCertificate> = None;
    for mu in candidates {
        let cert = verify_berk_nash(inst, contract, alpha, &mu, epsilon)?;
        let better = match &best {
            None => true,
            Some(b) => (cert.valid, -cert.residuals.optimality) > (b.valid, -b.residuals.optimality),
        };
        if better {
            best = Some(cert);
        }
    }
    Ok(best.expect("minimizing set is nonempty"))
}

/// Grid of `alpha(a1)` values with their KL-minimizing sets. Does not
/// depend on the contract, so one table serves many contracts.
#[derive(Debug, Clone)]
pub struct AlphaTable {
    pub points: Vec<f64>,
    /// `None` where every belief has infinite expected KL.
    pub mins: Vec<Option<Vec<usize>>>,
}

impl AlphaTable {
    /// `grid_n + 1` uniform points plus all break points.
    pub fn new(inst: &ContractInstance, grid_n: usize) -> Result<Self> {
        require_two_actions(inst, "equilibrium grid")?;
        if grid_n == 0 {
            return Err(Error::InvalidValue("grid size must be positive".into()));
        }
        let mut points: Vec<f64> = (0..=grid_n).map(|i| i as f64 / grid_n as f64).collect();
        points.extend(break_point_values(inst));
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mins = points
            .iter()
            .map(|&a| min_kl_beliefs(inst, &[a, 1.0 - a], MIN_KL_TOL).ok())
            .collect();
        Ok(Self { points, mins })
    }

    /// Maximal runs `[start, end)` of consecutive points sharing one
    /// minimizing set.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.points.len() {
            if i == self.points.len() || self.mins[i] != self.mins[start] {
                if self.mins[start].is_some() {
                    out.push((start, i));
                }
                start = i;
            }
        }
        out
    }
}

/// All ε-Berk-Nash certificates found by scanning `alpha(a1)` over a grid
/// of `grid_n + 1` points together with the break points. Ascending in
/// `alpha(a1)`.
pub fn find_equilibria_grid(
    inst: &ContractInstance,
    contract: &Contract,
    grid_n: usize,
    epsilon: f64,
) -> Result<Vec<BerkNashCertificate>> {
    inst.check_contract(contract)?;
    let table = AlphaTable::new(inst, grid_n)?;
    let gaps = utility_gaps(inst, contract);
    let tol = INDIFFERENCE_TOL * utility_scale(inst, contract);
    let per_point: Vec<Result<Vec<BerkNashCertificate>>> = table
        .points
        .par_iter()
        .zip(table.mins.par_iter())
        .map(|(&a, mins)| {
            let Some(mins) = mins else { return Ok(Vec::new()) };
            let alpha = ActionDistribution::two(a)?;
            let mut found = Vec::new();
            for mu in posterior_candidates(inst.n_beliefs(), mins, &gaps, tol) {
                let cert = verify_berk_nash(inst, contract, &alpha, &mu, epsilon)?;
                if cert.valid {
                    found.push(cert);
                }
            }
            Ok(found)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_point {
        out.extend(r?);
    }
    Ok(out)
}
