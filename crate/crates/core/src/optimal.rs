//! Revenue-optimal contracts for two actions.
//!
//! Each candidate equilibrium support (action support, belief support of
//! size at most two) splits the problem in two: consistency only constrains
//! `alpha` (an interval found by LP) and optimality only constrains the
//! contract (a union of at most two polyhedra). Revenue is linear in
//! `alpha` for a fixed contract, so only interval endpoints matter.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{
    posterior_candidates, utility_gaps, verify_berk_nash, ActionDistribution, AlphaTable, BerkNashCertificate,
    Posterior, INDIFFERENCE_TOL,
};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::model::{agent_utility, principal_revenue, Contract, ContractInstance};

/// Tolerance when matching interval endpoints against 0 and 1.
const ENDPOINT_TOL: f64 = 1e-9;
/// Admissible overshoot of a reconstructed posterior weight outside [0, 1].
const POSTERIOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupportCandidate {
    pub action_support: Vec<usize>,
    pub belief_support: Vec<usize>,
}

impl SupportCandidate {
    pub fn new(action_support: Vec<usize>, belief_support: Vec<usize>) -> Result<Self> {
        if action_support.is_empty() || action_support.len() > 2 || action_support.iter().any(|&a| a > 1) {
            return Err(Error::InvalidValue(format!("bad action support {action_support:?}")));
        }
        if belief_support.is_empty() || belief_support.len() > 2 {
            return Err(Error::InvalidValue(format!(
                "belief support must have one or two entries, got {}",
                belief_support.len()
            )));
        }
        if belief_support.len() == 2 && belief_support[0] == belief_support[1] {
            return Err(Error::InvalidValue("belief support entries must differ".into()));
        }
        Ok(Self {
            action_support,
            belief_support,
        })
    }

    /// All candidates in enumeration order: action supports {a1}, {a2},
    /// {a1,a2}; belief supports lexicographic.
    pub fn enumerate(n_beliefs: usize) -> Vec<Self> {
        let mut beliefs = Vec::new();
        for b in 0..n_beliefs {
            beliefs.push(vec![b]);
            for c in b + 1..n_beliefs {
                beliefs.push(vec![b, c]);
            }
        }
        let mut out = Vec::new();
        for actions in [vec![0], vec![1], vec![0, 1]] {
            for bs in &beliefs {
                out.push(Self {
                    action_support: actions.clone(),
                    belief_support: bs.clone(),
                });
            }
        }
        out
    }
}

/// Values of `alpha(a1)` consistent with a belief support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionRange {
    Interval {
        a1_min: f64,
        a1_max: f64,
        /// False when a belief that is infinitely wrong elsewhere rules out
        /// the endpoint itself.
        min_included: bool,
        max_included: bool,
    },
    Infeasible,
}

impl ActionRange {
    pub fn contains(&self, a1: f64, tol: f64) -> bool {
        match *self {
            ActionRange::Infeasible => false,
            ActionRange::Interval {
                a1_min,
                a1_max,
                min_included,
                max_included,
            } => {
                let inside = a1 >= a1_min - tol && a1 <= a1_max + tol;
                let at_min = (a1 - a1_min).abs() <= tol;
                let at_max = (a1 - a1_max).abs() <= tol;
                inside && (min_included || !at_min) && (max_included || !at_max)
            }
        }
    }

    fn endpoints(&self) -> Vec<f64> {
        match *self {
            ActionRange::Infeasible => Vec::new(),
            ActionRange::Interval {
                a1_min,
                a1_max,
                min_included,
                max_included,
            } => {
                let mut v = Vec::new();
                if min_included {
                    v.push(a1_min);
                }
                if max_included && (a1_max != a1_min || !min_included) {
                    v.push(a1_max);
                }
                v
            }
        }
    }
}

fn require_two_actions(inst: &ContractInstance) -> Result<()> {
    if inst.n_actions() != 2 {
        return Err(Error::Unsupported(format!(
            "the optimal-contract solver handles two actions, instance has {}",
            inst.n_actions()
        )));
    }
    Ok(())
}

/// Interval of `alpha(a1)` under which every belief in `belief_support`
/// minimizes expected KL divergence.
pub fn action_range(inst: &ContractInstance, belief_support: &[usize]) -> Result<ActionRange> {
    require_two_actions(inst)?;
    if belief_support.is_empty() {
        return Err(Error::Empty("belief support"));
    }
    for &b in belief_support {
        inst.check_belief(b)?;
    }
    let kl = |b: usize, a: usize| inst.kl(b, a);

    // Variables (alpha1, alpha2) on the simplex.
    let mut lp = LinearProgram::new(vec![1.0, 0.0], Sense::Minimize);
    lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0);
    // A supported belief that is infinitely wrong at an action forces that
    // action out of the support of alpha.
    for &s in belief_support {
        for a in 0..2 {
            if !kl(s, a).is_finite() {
                lp.set_bounds(a, 0.0, 0.0);
            }
        }
    }
    let mut deferred: Vec<(usize, usize, usize)> = Vec::new();
    for &s in belief_support {
        for b in 0..inst.n_beliefs() {
            if b == s {
                continue;
            }
            match (kl(b, 0).is_finite(), kl(b, 1).is_finite()) {
                (true, true) => {
                    let row: Vec<f64> = (0..2)
                        .map(|a| if kl(s, a).is_finite() { kl(s, a) - kl(b, a) } else { 0.0 })
                        .collect();
                    lp.constrain(row, Relation::Le, 0.0);
                }
                // Infinite for an action: binds only where that action has weight 0.
                (false, true) => deferred.push((s, b, 1)),
                (true, false) => deferred.push((s, b, 0)),
                (false, false) => {}
            }
        }
    }
    let lo = solve_lp(&lp)?;
    match lo.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Ok(ActionRange::Infeasible),
        s => return Err(Error::Lp(format!("action-range minimization returned {s:?}"))),
    }
    lp.sense = Sense::Maximize;
    let hi = solve_lp(&lp)?;
    if hi.status != LpStatus::Optimal {
        return Err(Error::Lp(format!("action-range maximization returned {:?}", hi.status)));
    }
    let a1_min = lo.point[0].clamp(0.0, 1.0);
    let a1_max = hi.point[0].clamp(a1_min, 1.0);
    let (mut min_included, mut max_included) = (true, true);
    for (s, b, only) in deferred {
        // `only` is the action that carries all weight at the binding point.
        let point = if only == 1 { 0.0 } else { 1.0 };
        let tol = 1e-9 * (1.0 + kl(b, only).abs());
        if kl(s, only) > kl(b, only) + tol {
            if (a1_min - point).abs() <= ENDPOINT_TOL {
                min_included = false;
            }
            if (a1_max - point).abs() <= ENDPOINT_TOL {
                max_included = false;
            }
        }
    }
    if a1_min == a1_max && !(min_included && max_included) {
        return Ok(ActionRange::Infeasible);
    }
    Ok(ActionRange::Interval {
        a1_min,
        a1_max,
        min_included,
        max_included,
    })
}

/// `coeffs . P + constant`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineFunctional {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineFunctional {
    pub fn eval(&self, payments: &[f64]) -> f64 {
        self.coeffs.iter().zip(payments).map(|(c, p)| c * p).sum::<f64>() + self.constant
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
            constant: self.constant - other.constant,
        }
    }
}

/// How the witnessing posterior is recovered from a contract in a piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorRule {
    Point { belief: usize },
    /// Weight `E(P) / D(P)` on `first`, the rest on `second`.
    Indifference { first: usize, second: usize },
}

/// Convex piece: every `f(P) relation 0` holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionPiece {
    pub constraints: Vec<(AffineFunctional, RelationTag)>,
    pub posterior: PosteriorRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationTag {
    Le,
    Eq,
    Ge,
}

impl From<RelationTag> for Relation {
    fn from(r: RelationTag) -> Self {
        match r {
            RelationTag::Le => Relation::Le,
            RelationTag::Eq => Relation::Eq,
            RelationTag::Ge => Relation::Ge,
        }
    }
}

impl RegionPiece {
    pub fn contains(&self, payments: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|(f, rel)| {
            let v = f.eval(payments);
            match rel {
                RelationTag::Le => v <= tol,
                RelationTag::Ge => v >= -tol,
                RelationTag::Eq => v.abs() <= tol,
            }
        })
    }
}

/// Contracts under which the action support is optimal for some posterior
/// on the belief support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractRegion {
    pub pieces: Vec<RegionPiece>,
    /// `E(P)`: utility advantage of a2 over a1 under the last belief.
    pub e: AffineFunctional,
    /// `D(P)`; present for two-belief supports.
    pub d: Option<AffineFunctional>,
}

impl ContractRegion {
    pub fn contains(&self, contract: &Contract, tol: f64) -> bool {
        self.pieces.iter().any(|p| p.contains(contract.payments(), tol))
    }
}

/// `V(a2, B, P) - V(a1, B, P)` as an affine functional of `P`.
fn advantage_a2(inst: &ContractInstance, b: usize) -> AffineFunctional {
    let row = |a: usize| inst.belief(b).dists[a].probs();
    AffineFunctional {
        coeffs: row(1).iter().zip(row(0)).map(|(x, y)| x - y).collect(),
        constant: inst.cost(0) - inst.cost(1),
    }
}

pub fn contract_region(inst: &ContractInstance, action_support: &[usize], belief_support: &[usize]) -> Result<ContractRegion> {
    require_two_actions(inst)?;
    let cand = SupportCandidate::new(action_support.to_vec(), belief_support.to_vec())?;
    for &b in &cand.belief_support {
        inst.check_belief(b)?;
    }
    let piece = |constraints: Vec<(AffineFunctional, RelationTag)>, posterior| RegionPiece {
        constraints,
        posterior,
    };
    use RelationTag::*;
    let mixed = cand.action_support.len() == 2;
    let prefers_a1 = !mixed && cand.action_support[0] == 0;

    if let [b] = cand.belief_support[..] {
        let e = advantage_a2(inst, b);
        let rel = if mixed {
            Eq
        } else if prefers_a1 {
            Le
        } else {
            Ge
        };
        return Ok(ContractRegion {
            pieces: vec![piece(vec![(e.clone(), rel)], PosteriorRule::Point { belief: b })],
            e,
            d: None,
        });
    }

    let (b1, b2) = (cand.belief_support[0], cand.belief_support[1]);
    // Gap a1 - a2 under mu (weight m on b1) is m D(P) - E(P).
    let e = advantage_a2(inst, b2);
    let d = e.minus(&advantage_a2(inst, b1));
    let d_minus_e = d.minus(&e);
    let pieces = if mixed {
        let rule = PosteriorRule::Indifference { first: b1, second: b2 };
        vec![
            piece(vec![(d_minus_e.clone(), Ge), (e.clone(), Ge)], rule),
            piece(vec![(e.clone(), Le), (d_minus_e, Le)], rule),
        ]
    } else if prefers_a1 {
        vec![
            piece(vec![(d_minus_e, Ge), (e.clone(), Ge)], PosteriorRule::Point { belief: b1 }),
            piece(vec![(e.clone(), Le)], PosteriorRule::Point { belief: b2 }),
        ]
    } else {
        vec![
            piece(vec![(d_minus_e, Le), (e.clone(), Le)], PosteriorRule::Point { belief: b1 }),
            piece(vec![(e.clone(), Ge)], PosteriorRule::Point { belief: b2 }),
        ]
    };
    Ok(ContractRegion { pieces, e, d: Some(d) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpBranch {
    pub piece: usize,
    pub alpha_a1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub contract: Contract,
    pub certificate: BerkNashCertificate,
    pub revenue: f64,
    pub support: SupportCandidate,
    pub lp_branch: Option<LpBranch>,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "contract": self.contract,
            "alpha": self.certificate.alpha,
            "mu": self.certificate.mu,
            "revenue": self.revenue,
            "support": self.support,
            "branch": self.lp_branch,
            "certificate": self.certificate,
        });
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Slack used when re-verifying solver output.
pub fn solver_epsilon(inst: &ContractInstance) -> f64 {
    1e-6 * inst.scale()
}

fn revenue_weights(inst: &ContractInstance, a1: f64) -> (Vec<f64>, f64) {
    // Revenue = constant - weights . P.
    let alpha = [a1, 1.0 - a1];
    let r = inst.rewards().values();
    let mut w = vec![0.0; inst.n_rewards()];
    let mut constant = 0.0;
    for (a, &wa) in alpha.iter().enumerate() {
        for (j, &f) in inst.true_dist(a).probs().iter().enumerate() {
            w[j] += wa * f;
            constant += wa * f * r[j];
        }
    }
    (w, constant)
}

fn reconstruct(region: &ContractRegion, rule: PosteriorRule, n_beliefs: usize, p: &[f64], scale: f64) -> Option<Posterior> {
    match rule {
        PosteriorRule::Point { belief } => Some(Posterior::point_mass(n_beliefs, belief)),
        PosteriorRule::Indifference { first, second } => {
            let e = region.e.eval(p);
            let d = region.d.as_ref().expect("two-belief region").eval(p);
            let tiny = 1e-12 * scale;
            let w = if d.abs() <= tiny {
                if e.abs() <= tiny {
                    0.5
                } else {
                    return None;
                }
            } else {
                e / d
            };
            if !(-POSTERIOR_TOL..=1.0 + POSTERIOR_TOL).contains(&w) {
                return None;
            }
            Some(Posterior::pair(n_beliefs, first, second, w.clamp(0.0, 1.0)))
        }
    }
}

/// Best contract and equilibrium with the given support, if any.
pub fn solve_support(inst: &ContractInstance, support: &SupportCandidate) -> Result<Option<SolveReport>> {
    require_two_actions(inst)?;
    let range = action_range(inst, &support.belief_support)?;
    let endpoints: Vec<f64> = match support.action_support[..] {
        [0] => range.contains(1.0, ENDPOINT_TOL).then_some(vec![1.0]).unwrap_or_default(),
        [1] => range.contains(0.0, ENDPOINT_TOL).then_some(vec![0.0]).unwrap_or_default(),
        _ => match range {
            ActionRange::Interval { a1_min, a1_max, .. } if a1_max > 0.0 && a1_min < 1.0 => range.endpoints(),
            _ => Vec::new(),
        },
    };
    if endpoints.is_empty() {
        return Ok(None);
    }
    let region = contract_region(inst, &support.action_support, &support.belief_support)?;
    let eps = solver_epsilon(inst);
    let scale = inst.scale();
    let mut best: Option<SolveReport> = None;
    for &a1 in &endpoints {
        let alpha = ActionDistribution::two(a1)?;
        let (w, _) = revenue_weights(inst, a1);
        for (k, piece) in region.pieces.iter().enumerate() {
            let mut lp = LinearProgram::new(w.iter().map(|x| -x).collect(), Sense::Maximize);
            for (f, rel) in &piece.constraints {
                lp.constrain(f.coeffs.clone(), (*rel).into(), -f.constant);
            }
            let sol = solve_lp(&lp)?;
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => continue,
                s => return Err(Error::Lp(format!("contract program returned {s:?}"))),
            }
            let contract = Contract::from_lp_point(sol.point)?;
            let Some(mu) = reconstruct(&region, piece.posterior, inst.n_beliefs(), contract.payments(), scale)
            else {
                continue;
            };
            let certificate = verify_berk_nash(inst, &contract, &alpha, &mu, eps)?;
            if !certificate.valid {
                continue;
            }
            let revenue = principal_revenue(inst, alpha.probs(), &contract);
            if best.as_ref().is_none_or(|b| revenue > b.revenue) {
                best = Some(SolveReport {
                    contract,
                    certificate,
                    revenue,
                    support: support.clone(),
                    lp_branch: Some(LpBranch { piece: k, alpha_a1: a1 }),
                });
            }
        }
    }
    Ok(best)
}

/// Revenue-optimal contract over all supports.
pub fn optimal_contract(inst: &ContractInstance) -> Result<SolveReport> {
    require_two_actions(inst)?;
    let candidates = SupportCandidate::enumerate(inst.n_beliefs());
    let results: Vec<Result<Option<SolveReport>>> = candidates.par_iter().map(|c| solve_support(inst, c)).collect();
    let tie = 1e-12 * inst.scale();
    let mut best: Option<SolveReport> = None;
    for r in results {
        if let Some(rep) = r? {
            if best.as_ref().is_none_or(|b| rep.revenue > b.revenue + tie) {
                best = Some(rep);
            }
        }
    }
    best.ok_or(Error::NoEquilibrium)
}

/// Default payment ceiling for the brute-force oracle.
pub fn default_pay_max(inst: &ContractInstance) -> f64 {
    let r = inst.rewards().values().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let c = inst.actions().costs().iter().fold(0.0f64, |m, c| m.max(*c));
    10.0 * (r + c)
}

#[derive(Debug, Clone, Copy)]
struct Best {
    revenue: f64,
    contract: usize,
    point: usize,
    group: usize,
    candidate: usize,
}

impl Best {
    /// Higher revenue wins; otherwise the earliest contract, point and candidate.
    fn better(self, other: Self) -> Self {
        let key = |b: &Self| (b.contract, b.point, b.group, b.candidate);
        if other.revenue > self.revenue || (other.revenue == self.revenue && key(&other) < key(&self)) {
            other
        } else {
            self
        }
    }
}

fn decode(mut index: usize, base: usize, step: f64, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    for x in p.iter_mut() {
        *x = (index % base) as f64 * step;
        index /= base;
    }
    p
}

/// Grid-search oracle: every contract on a `pay_grid_n + 1` point grid per
/// reward, with equilibria located on a `eq_grid_n` grid of `alpha(a1)`
/// (plus break points) exactly as [`crate::equilibrium::find_equilibria_grid`]
/// would, at slack [`solver_epsilon`].
///
/// Within a run of grid points sharing a KL-minimizing set, both the
/// optimality gap and the revenue are linear in `alpha(a1)`, so the valid
/// points form a contiguous run whose best revenue sits at one of its ends.
pub fn brute_force_optimal_contract(
    inst: &ContractInstance,
    pay_grid_n: usize,
    pay_max: f64,
    eq_grid_n: usize,
) -> Result<SolveReport> {
    require_two_actions(inst)?;
    if !(pay_max >= 0.0 && pay_max.is_finite()) {
        return Err(Error::InvalidValue(format!("pay_max must be finite and nonnegative, got {pay_max}")));
    }
    let table = AlphaTable::new(inst, eq_grid_n)?;
    let groups = table.groups();
    let nr = inst.n_rewards();
    let (base, step) = if pay_max == 0.0 || pay_grid_n == 0 {
        (1, 0.0)
    } else {
        (pay_grid_n + 1, pay_max / pay_grid_n as f64)
    };
    let total = base
        .checked_pow(nr as u32)
        .ok_or_else(|| Error::InvalidValue("payment grid too large".into()))?;
    let eps = solver_epsilon(inst);
    let nb = inst.n_beliefs();
    let r = inst.rewards().values();

    let evaluate = |ci: usize| -> Option<Best> {
        let contract = Contract::new(decode(ci, base, step, nr)).expect("grid payments are nonnegative");
        let gaps = utility_gaps(inst, &contract);
        let v: Vec<[f64; 2]> = (0..nb)
            .map(|b| [agent_utility(inst, 0, b, &contract), agent_utility(inst, 1, b, &contract)])
            .collect();
        let scale = 1.0 + v.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = INDIFFERENCE_TOL * scale;
        let noise = 1e-12 * scale;
        let u: Vec<f64> = (0..2)
            .map(|a| {
                inst.true_dist(a)
                    .probs()
                    .iter()
                    .zip(r.iter().zip(contract.payments()))
                    .map(|(f, (r, p))| f * (r - p))
                    .sum()
            })
            .collect();
        let mut best: Option<Best> = None;
        for (gi, &(s, e)) in groups.iter().enumerate() {
            let mins = table.mins[s].as_ref().expect("groups skip empty sets");
            for (k, mu) in posterior_candidates(nb, mins, &gaps, tol).iter().enumerate() {
                let mut ev = [0.0; 2];
                for (b, &w) in mu.probs().iter().enumerate() {
                    if w > 0.0 {
                        ev[0] += w * v[b][0];
                        ev[1] += w * v[b][1];
                    }
                }
                let top = ev[0].max(ev[1]);
                let ok = |i: usize| {
                    let a = table.points[i];
                    (top - (a * ev[0] + (1.0 - a) * ev[1])).max(0.0) <= eps + noise
                };
                let (first_ok, last_ok) = (ok(s), ok(e - 1));
                let ends: Vec<usize> = match (first_ok, last_ok) {
                    (true, true) => vec![s, e - 1],
                    (false, false) => continue,
                    (true, false) => {
                        // Last valid point: binary search on [s, e-1).
                        let (mut lo, mut hi) = (s, e - 1);
                        while hi - lo > 1 {
                            let mid = (lo + hi) / 2;
                            if ok(mid) {
                                lo = mid
                            } else {
                                hi = mid
                            }
                        }
                        vec![s, lo]
                    }
                    (false, true) => {
                        let (mut lo, mut hi) = (s, e - 1);
                        while hi - lo > 1 {
                            let mid = (lo + hi) / 2;
                            if ok(mid) {
                                hi = mid
                            } else {
                                lo = mid
                            }
                        }
                        vec![hi, e - 1]
                    }
                };
                for i in ends {
                    let a = table.points[i];
                    let cand = Best {
                        revenue: a * u[0] + (1.0 - a) * u[1],
                        contract: ci,
                        point: i,
                        group: gi,
                        candidate: k,
                    };
                    best = Some(best.map_or(cand, |b| b.better(cand)));
                }
            }
        }
        best
    };

    let best = (0..total)
        .into_par_iter()
        .filter_map(evaluate)
        .reduce_with(|a, b| a.better(b))
        .ok_or(Error::NoEquilibrium)?;

    let contract = Contract::new(decode(best.contract, base, step, nr))?;
    let gaps = utility_gaps(inst, &contract);
    let (s, _) = groups[best.group];
    let mins = table.mins[s].as_ref().expect("groups skip empty sets");
    let scale = 1.0
        + (0..nb)
            .flat_map(|b| (0..2).map(move |a| (a, b)))
            .fold(0.0f64, |m, (a, b)| m.max(agent_utility(inst, a, b, &contract).abs()));
    let mu = posterior_candidates(nb, mins, &gaps, INDIFFERENCE_TOL * scale).swap_remove(best.candidate);
    let alpha = ActionDistribution::two(table.points[best.point])?;
    let certificate = verify_berk_nash(inst, &contract, &alpha, &mu, eps)?;
    let revenue = principal_revenue(inst, alpha.probs(), &contract);
    Ok(SolveReport {
        contract,
        support: SupportCandidate {
            action_support: alpha.support(),
            belief_support: mu.support(),
        },
        certificate,
        revenue,
        lp_branch: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{expected_kl_row, find_equilibria_grid};
    use crate::model::test_support::{two_action, with_profiles};
    use crate::sample::{random_contract, random_generic_two_action, random_two_action};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval(r: ActionRange) -> (f64, f64) {
        match r {
            ActionRange::Interval { a1_min, a1_max, .. } => (a1_min, a1_max),
            ActionRange::Infeasible => panic!("expected an interval"),
        }
    }

    #[test]
    fn enumeration_order() {
        let c = SupportCandidate::enumerate(3);
        assert_eq!(c.len(), 18);
        let bs: Vec<_> = c[..6].iter().map(|c| c.belief_support.clone()).collect();
        assert_eq!(bs, vec![vec![0], vec![0, 1], vec![0, 2], vec![1], vec![1, 2], vec![2]]);
        assert_eq!(c[6].action_support, vec![1]);
        assert_eq!(c[12].action_support, vec![0, 1]);
    }

    #[test]
    fn action_range_examples() {
        let single = with_profiles(&[(0.3, 0.2)], [0.0, 0.0]);
        assert_eq!(interval(action_range(&single, &[0]).unwrap()), (0.0, 1.0));

        let inst = with_profiles(&[(1.0, 0.0), (0.0, 1.0), (2.0, 2.0)], [0.0, 0.0]);
        let (lo, hi) = interval(action_range(&inst, &[0, 1]).unwrap());
        assert!((lo - 0.5).abs() < 1e-9 && (hi - 0.5).abs() < 1e-9);
        assert_eq!(interval(action_range(&inst, &[0]).unwrap()), (0.0, 0.5));
        assert_eq!(action_range(&inst, &[2]).unwrap(), ActionRange::Infeasible);
    }

    #[test]
    fn action_range_with_infinite_profiles() {
        // Belief 1 is infinitely wrong at a1, so it can only be consistent at
        // alpha = (0, 1), where it beats belief 0.
        let inst = two_action(
            [0.0, 0.0],
            vec![0.0, 1.0],
            [vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![[vec![0.5, 0.5], vec![0.9, 0.1]], [vec![1.0, 0.0], vec![0.5, 0.5]]],
        );
        assert_eq!(interval(action_range(&inst, &[1]).unwrap()), (0.0, 0.0));
        // Belief 0 is minimal everywhere except at alpha = (0, 1).
        let r = action_range(&inst, &[0]).unwrap();
        assert!(!r.contains(0.0, 1e-12));
        assert!(r.contains(0.3, 1e-12) && r.contains(1.0, 1e-12));
    }

    #[test]
    fn region_single_belief_matches_formula() {
        let inst = two_action(
            [0.1, 0.4],
            vec![0.0, 1.0, 2.0],
            [vec![0.3, 0.3, 0.4], vec![0.2, 0.2, 0.6]],
            vec![[vec![0.5, 0.25, 0.25], vec![0.1, 0.3, 0.6]]],
        );
        let reg = contract_region(&inst, &[0], &[0]).unwrap();
        let p = [0.7, 1.1, 0.2];
        let b1 = [0.5, 0.25, 0.25];
        let b2 = [0.1, 0.3, 0.6];
        let direct: f64 = (0..3).map(|r| (p[r] - 0.4) * b2[r] - (p[r] - 0.1) * b1[r]).sum();
        assert!((reg.e.eval(&p) - direct).abs() < 1e-12);
        assert_eq!(reg.pieces[0].constraints[0].1, RelationTag::Le);
    }

    #[test]
    fn region_degenerate_indifference() {
        let row = vec![0.4, 0.6];
        let inst = two_action([0.2, 0.2], vec![0.0, 1.0], [row.clone(), row.clone()], vec![[row.clone(), row]]);
        let reg = contract_region(&inst, &[0, 1], &[0]).unwrap();
        assert!(reg.e.coeffs.iter().all(|&c| c == 0.0) && reg.e.constant == 0.0);
        assert!(reg.contains(&Contract::new(vec![3.0, 0.1]).unwrap(), 0.0));
    }

    #[test]
    fn region_rejects_large_support() {
        let inst = with_profiles(&[(1.0, 0.0), (0.0, 1.0), (2.0, 2.0)], [0.0, 0.0]);
        assert!(contract_region(&inst, &[0], &[0, 1, 2]).is_err());
    }

    #[test]
    fn single_belief_identical_rows_pays_nothing() {
        let row = vec![0.4, 0.6];
        let inst = two_action(
            [0.2, 0.2],
            vec![0.0, 1.0],
            [vec![0.3, 0.7], vec![0.8, 0.2]],
            vec![[row.clone(), row]],
        );
        let rep = optimal_contract(&inst).unwrap();
        assert!(rep.contract.payments().iter().all(|&p| p == 0.0));
        assert!((rep.revenue - 0.7).abs() < 1e-12);
        assert!(rep.certificate.valid);
    }

    #[test]
    fn infeasible_support_gives_none() {
        let inst = with_profiles(&[(1.0, 0.0), (0.0, 1.0), (2.0, 2.0)], [0.0, 0.0]);
        let s = SupportCandidate::new(vec![0], vec![2]).unwrap();
        assert_eq!(solve_support(&inst, &s).unwrap(), None);
    }

    #[test]
    fn pay_max_zero_is_best_zero_contract_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_generic_two_action(&mut rng, 2, 2);
        let rep = brute_force_optimal_contract(&inst, 10, 0.0, 200).unwrap();
        let zero = Contract::zero(2);
        let best = find_equilibria_grid(&inst, &zero, 200, solver_epsilon(&inst))
            .unwrap()
            .iter()
            .map(|c| principal_revenue(&inst, c.alpha.probs(), &zero))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((rep.revenue - best).abs() < 1e-12);
    }

    #[test]
    fn brute_force_matches_literal_grid_scan() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_generic_two_action(&mut rng, 2, 1 + (seed % 3) as usize);
            let (n, max, eq) = (6, 4.0, 40);
            let fast = brute_force_optimal_contract(&inst, n, max, eq).unwrap();
            let mut literal = f64::NEG_INFINITY;
            for i in 0..=n {
                for j in 0..=n {
                    let p = Contract::new(vec![i as f64 * max / n as f64, j as f64 * max / n as f64]).unwrap();
                    for c in find_equilibria_grid(&inst, &p, eq, solver_epsilon(&inst)).unwrap() {
                        literal = literal.max(principal_revenue(&inst, c.alpha.probs(), &p));
                    }
                }
            }
            assert!((fast.revenue - literal).abs() < 1e-12, "seed {seed}: {} vs {literal}", fast.revenue);
            assert!(fast.certificate.valid);
        }
    }

    #[test]
    fn report_json_has_fields() {
        let inst = with_profiles(&[(1.0, 0.0), (0.0, 1.0)], [0.1, 0.0]);
        let rep = optimal_contract(&inst).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for key in ["contract", "alpha", "mu", "revenue", "support", "branch"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    fn instance(seed: u64) -> ContractInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nr = 2 + (seed % 2) as usize;
        let nb = 1 + (seed % 3) as usize;
        random_generic_two_action(&mut rng, nr, nb)
    }

    /// Direct check of the consistency inequalities at `alpha(a1)`.
    fn consistent(inst: &ContractInstance, bs: &[usize], a1: f64, tol: f64) -> bool {
        let ekl = expected_kl_row(inst, &[a1, 1.0 - a1]);
        bs.iter().all(|&s| ekl.iter().all(|&k| ekl[s] <= k + tol))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn action_range_matches_direct_check(seed in 0u64..10_000) {
            let inst = instance(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            for cand in SupportCandidate::enumerate(inst.n_beliefs()).iter().take(inst.n_beliefs() * (inst.n_beliefs() + 1) / 2) {
                let range = action_range(&inst, &cand.belief_support).unwrap();
                for _ in 0..200 {
                    let a1: f64 = rng.random();
                    prop_assert_eq!(range.contains(a1, 1e-8), consistent(&inst, &cand.belief_support, a1, 1e-8));
                }
            }
        }

        #[test]
        fn region_matches_posterior_scan(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_two_action(&mut rng, 3, 2);
            let tol = 1e-8;
            for _ in 0..50 {
                let p = random_contract(&mut rng, 3, 3.0);
                let g = utility_gaps(&inst, &p);
                let gap = |m: f64| m * g[0] + (1.0 - m) * g[1];
                let grid: Vec<f64> = (0..=1000).map(|i| gap(i as f64 / 1000.0)).collect();
                let some_ge = grid.iter().any(|&x| x >= -tol);
                let some_le = grid.iter().any(|&x| x <= tol);
                for (actions, expected) in [(vec![0], some_ge), (vec![1], some_le), (vec![0, 1], some_ge && some_le)] {
                    let reg = contract_region(&inst, &actions, &[0, 1]).unwrap();
                    prop_assert_eq!(reg.contains(&p, tol), expected, "actions {:?}", actions);
                }
            }
        }

        #[test]
        fn revenue_is_affine_in_alpha(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_two_action(&mut rng, 3, 2);
            let p = random_contract(&mut rng, 3, 3.0);
            let (lo, hi) = (principal_revenue(&inst, &[0.0, 1.0], &p), principal_revenue(&inst, &[1.0, 0.0], &p));
            for i in 1..10 {
                let a = i as f64 / 10.0;
                let mid = principal_revenue(&inst, &[a, 1.0 - a], &p);
                prop_assert!((mid - (a * hi + (1.0 - a) * lo)).abs() < 1e-12);
                prop_assert!(mid <= lo.max(hi) + 1e-12);
            }
        }

        #[test]
        fn optimal_report_verifies(seed in 0u64..10_000) {
            let inst = instance(seed);
            let rep = optimal_contract(&inst).unwrap();
            let again = verify_berk_nash(&inst, &rep.contract, &rep.certificate.alpha, &rep.certificate.mu, solver_epsilon(&inst)).unwrap();
            prop_assert!(again.valid);
            prop_assert!((rep.revenue - principal_revenue(&inst, rep.certificate.alpha.probs(), &rep.contract)).abs() < 1e-9);
        }

        #[test]
        fn optimal_beats_coarse_brute_force(seed in 0u64..10_000) {
            let inst = instance(seed);
            let rep = optimal_contract(&inst).unwrap();
            let bf = brute_force_optimal_contract(&inst, 30, default_pay_max(&inst), 300).unwrap();
            prop_assert!(rep.revenue >= bf.revenue - 1e-4, "{} < {}", rep.revenue, bf.revenue);
        }
    }
}
