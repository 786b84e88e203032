//! Domain types for principal-agent instances with subjective beliefs, plus
//! the KL-divergence and utility machinery every other module shares.
//!
//! All KL values are in nats. An infinite divergence is represented by
//! `f64::INFINITY` and never by a large finite stand-in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deviation below which a probability row is silently renormalized.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// Threshold used by [`check_generic`] for equal KL values.
pub const GENERIC_EQ_TOL: f64 = 1e-9;
/// Threshold used by [`check_generic`] for collinear profile triples.
pub const GENERIC_DET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpace {
    rewards: Vec<f64>,
}

impl RewardSpace {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Empty("reward space"));
        }
        for (i, r) in rewards.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::InvalidValue(format!("reward {i} is not finite")));
            }
            if rewards[..i].contains(r) {
                return Err(Error::InvalidValue(format!("reward {r} appears twice")));
            }
        }
        Ok(Self { rewards })
    }

    pub fn values(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    names: Vec<String>,
    costs: Vec<f64>,
}

impl ActionSpace {
    pub fn new(names: Vec<String>, costs: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("action space"));
        }
        if names.len() != costs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} action names but {} costs",
                names.len(),
                costs.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidValue(format!("action name {n:?} appears twice")));
            }
        }
        for (n, c) in names.iter().zip(&costs) {
            if !c.is_finite() || *c < 0.0 {
                return Err(Error::InvalidValue(format!("cost of {n} must be finite and >= 0, got {c}")));
            }
        }
        Ok(Self { names, costs })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A probability vector over the reward space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct OutcomeDistribution {
    probs: Vec<f64>,
}

impl OutcomeDistribution {
    /// Validates a row. Rows off by at most [`PROB_TOLERANCE`] are renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::validated(probs, "distribution")
    }

    fn validated(mut probs: Vec<f64>, location: &str) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability row"));
        }
        if let Some(&value) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::NegativeProbability {
                location: location.to_string(),
                value,
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::SumDeviation {
                location: location.to_string(),
                sum,
            });
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Self { probs })
    }

    /// Point mass on `index` over `len` outcomes.
    pub fn point_mass(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub name: String,
    pub dists: Vec<OutcomeDistribution>,
}

/// Nonnegative payment per reward (limited liability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Contract {
    payments: Vec<f64>,
}

impl Contract {
    pub fn new(payments: Vec<f64>) -> Result<Self> {
        if let Some((i, p)) = payments
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidValue(format!(
                "payment {i} is {p}; payments must be finite and >= 0"
            )));
        }
        Ok(Self { payments })
    }

    /// Builds a contract from LP output, clipping tiny negative noise to zero.
    pub(crate) fn from_lp_point(mut payments: Vec<f64>) -> Result<Self> {
        for p in payments.iter_mut() {
            if *p < 0.0 && *p > -1e-9 {
                *p = 0.0;
            }
        }
        Self::new(payments)
    }

    pub fn zero(len: usize) -> Self {
        Self {
            payments: vec![0.0; len],
        }
    }

    pub fn payments(&self) -> &[f64] {
        &self.payments
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Contract {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Contract> for Vec<f64> {
    fn from(c: Contract) -> Self {
        c.payments
    }
}

/// KL divergence of every action's true distribution from one belief.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlProfile {
    pub belief_name: String,
    #[serde(serialize_with = "crate::serde_ext::extended_vec")]
    pub kl_by_action: Vec<f64>,
}

impl KlProfile {
    pub fn is_finite(&self) -> bool {
        self.kl_by_action.iter().all(|k| k.is_finite())
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub name: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSpec {
    pub name: String,
    pub dists: Vec<Vec<f64>>,
}

/// Parsed but unvalidated instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub actions: Vec<ActionSpec>,
    pub rewards: Vec<f64>,
    pub true_dists: Vec<Vec<f64>>,
    pub beliefs: Vec<BeliefSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

/// A validated contract design instance. Immutable; KL values for every
/// (belief, action) pair are computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractInstance {
    actions: ActionSpace,
    rewards: RewardSpace,
    true_dists: Vec<OutcomeDistribution>,
    beliefs: Vec<Belief>,
    prior: Vec<f64>,
    kl: Vec<Vec<f64>>,
}

/// Validates a parsed instance description.
pub fn validate_instance(raw: &InstanceSpec) -> Result<ContractInstance> {
    let actions = ActionSpace::new(
        raw.actions.iter().map(|a| a.name.clone()).collect(),
        raw.actions.iter().map(|a| a.cost).collect(),
    )?;
    let rewards = RewardSpace::new(raw.rewards.clone())?;
    let n_a = actions.len();
    let n_r = rewards.len();

    if raw.true_dists.len() != n_a {
        return Err(Error::DimensionMismatch(format!(
            "{} true distributions for {} actions",
            raw.true_dists.len(),
            n_a
        )));
    }
    let true_dists = raw
        .true_dists
        .iter()
        .enumerate()
        .map(|(a, row)| {
            check_len(row, n_r, || format!("true_dists[{a}]"))?;
            OutcomeDistribution::validated(row.clone(), &format!("true_dists[{a}]"))
        })
        .collect::<Result<Vec<_>>>()?;

    if raw.beliefs.is_empty() {
        return Err(Error::Empty("belief set"));
    }
    let beliefs = raw
        .beliefs
        .iter()
        .enumerate()
        .map(|(b, spec)| {
            if raw.beliefs[..b].iter().any(|o| o.name == spec.name) {
                return Err(Error::InvalidValue(format!("belief name {:?} appears twice", spec.name)));
            }
            if spec.dists.len() != n_a {
                return Err(Error::DimensionMismatch(format!(
                    "belief {} has {} rows for {} actions",
                    spec.name,
                    spec.dists.len(),
                    n_a
                )));
            }
            let dists = spec
                .dists
                .iter()
                .enumerate()
                .map(|(a, row)| {
                    let loc = format!("belief {} row {a}", spec.name);
                    check_len(row, n_r, || loc.clone())?;
                    OutcomeDistribution::validated(row.clone(), &loc)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Belief {
                name: spec.name.clone(),
                dists,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let prior = match &raw.prior {
        None => vec![1.0 / beliefs.len() as f64; beliefs.len()],
        Some(p) => {
            if p.len() != beliefs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "prior has {} entries for {} beliefs",
                    p.len(),
                    beliefs.len()
                )));
            }
            if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                if value < 0.0 {
                    return Err(Error::NegativeProbability {
                        location: "prior".into(),
                        value,
                    });
                }
                return Err(Error::PriorSupport { index, value });
            }
            OutcomeDistribution::validated(p.clone(), "prior")?.probs
        }
    };

    let kl = beliefs
        .iter()
        .map(|b| {
            true_dists
                .iter()
                .zip(&b.dists)
                .map(|(f, q)| kl_nats(f.probs(), q.probs()))
                .collect()
        })
        .collect();

    Ok(ContractInstance {
        actions,
        rewards,
        true_dists,
        beliefs,
        prior,
        kl,
    })
}

fn check_len(row: &[f64], n: usize, loc: impl FnOnce() -> String) -> Result<()> {
    if row.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} entries, expected {n}",
            loc(),
            row.len()
        )));
    }
    Ok(())
}

impl ContractInstance {
    pub fn from_spec(raw: &InstanceSpec) -> Result<Self> {
        validate_instance(raw)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: InstanceSpec = serde_json::from_str(text)
            .map_err(|e| Error::InvalidValue(format!("instance JSON: {e}")))?;
        validate_instance(&raw)
    }

    pub fn to_spec(&self) -> InstanceSpec {
        InstanceSpec {
            actions: self
                .actions
                .names()
                .iter()
                .zip(self.actions.costs())
                .map(|(name, &cost)| ActionSpec {
                    name: name.clone(),
                    cost,
                })
                .collect(),
            rewards: self.rewards.values().to_vec(),
            true_dists: self.true_dists.iter().map(|d| d.probs.clone()).collect(),
            beliefs: self
                .beliefs
                .iter()
                .map(|b| BeliefSpec {
                    name: b.name.clone(),
                    dists: b.dists.iter().map(|d| d.probs.clone()).collect(),
                })
                .collect(),
            prior: Some(self.prior.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("instance spec serializes")
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn rewards(&self) -> &RewardSpace {
        &self.rewards
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_rewards(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_beliefs(&self) -> usize {
        self.beliefs.len()
    }

    pub fn cost(&self, action: usize) -> f64 {
        self.actions.costs()[action]
    }

    pub fn true_dist(&self, action: usize) -> &OutcomeDistribution {
        &self.true_dists[action]
    }

    pub fn beliefs(&self) -> &[Belief] {
        &self.beliefs
    }

    pub fn belief(&self, index: usize) -> &Belief {
        &self.beliefs[index]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Cached `KL(F_a || B_a)` in nats.
    pub fn kl(&self, belief: usize, action: usize) -> f64 {
        self.kl[belief][action]
    }

    /// Scale used for solver slack: `1 + max|r| + max C`.
    pub fn scale(&self) -> f64 {
        let r = self.rewards.values().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let c = self.actions.costs().iter().fold(0.0f64, |m, c| m.max(*c));
        1.0 + r + c
    }

    pub(crate) fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.n_actions() {
            return Err(Error::IndexOutOfRange {
                what: "actions",
                index: action,
                len: self.n_actions(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_belief(&self, belief: usize) -> Result<()> {
        if belief >= self.n_beliefs() {
            return Err(Error::IndexOutOfRange {
                what: "beliefs",
                index: belief,
                len: self.n_beliefs(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_contract(&self, contract: &Contract) -> Result<()> {
        if contract.len() != self.n_rewards() {
            return Err(Error::DimensionMismatch(format!(
                "contract has {} payments for {} rewards",
                contract.len(),
                self.n_rewards()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.n_actions() {
            return Err(Error::DimensionMismatch(format!(
                "action distribution has {} entries for {} actions",
                alpha.len(),
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// Returns a copy with the belief set replaced (prior renormalized over
    /// the kept beliefs). Used by prior restriction.
    pub(crate) fn with_beliefs(&self, keep: &[usize]) -> Result<Self> {
        let mut spec = self.to_spec();
        let prior = &self.prior;
        let mass: f64 = keep.iter().map(|&b| prior[b]).sum();
        spec.beliefs = keep.iter().map(|&b| spec.beliefs[b].clone()).collect();
        spec.prior = Some(keep.iter().map(|&b| prior[b] / mass).collect());
        validate_instance(&spec)
    }
}

/// `sum_r p(r) ln(p(r)/q(r))` over the support of `p`.
pub(crate) fn kl_nats(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total
}

/// KL divergence in nats; `+inf` iff `p` puts mass where `q` has none.
pub fn kl_divergence(p: &OutcomeDistribution, q: &OutcomeDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(kl_nats(p.probs(), q.probs()))
}

pub fn kl_profile(inst: &ContractInstance, belief: usize) -> Result<KlProfile> {
    inst.check_belief(belief)?;
    Ok(KlProfile {
        belief_name: inst.belief(belief).name.clone(),
        kl_by_action: inst.kl[belief].clone(),
    })
}

/// `V(a, B, P) = E_{r ~ B_a}[P(r)] - C(a)`.
pub fn agent_utility(inst: &ContractInstance, action: usize, belief: usize, contract: &Contract) -> f64 {
    inst.belief(belief).dists[action].expectation(contract.payments()) - inst.cost(action)
}

/// True expected utility `E_{r ~ F_a}[P(r)] - C(a)`.
pub fn true_agent_utility(inst: &ContractInstance, action: usize, contract: &Contract) -> f64 {
    inst.true_dist(action).expectation(contract.payments()) - inst.cost(action)
}

/// `sum_a alpha(a) E_{r ~ F_a}[r - P(r)]`.
pub fn principal_revenue(inst: &ContractInstance, alpha: &[f64], contract: &Contract) -> f64 {
    let r = inst.rewards().values();
    let p = contract.payments();
    alpha
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(a, w)| {
            w * inst
                .true_dist(a)
                .probs()
                .iter()
                .zip(r.iter().zip(p))
                .map(|(f, (r, p))| f * (r - p))
                .sum::<f64>()
        })
        .sum()
}

/// `sum_a alpha(a) KL(F_a || B_a)`; actions with zero weight never
/// contribute, so an infinite entry off the support of `alpha` is harmless.
pub fn expected_kl(inst: &ContractInstance, alpha: &[f64], belief: usize) -> f64 {
    alpha
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(a, w)| {
            let k = inst.kl(belief, a);
            if k.is_infinite() {
                f64::INFINITY
            } else {
                w * k
            }
        })
        .sum()
}

/// `min_B max_a KL(F_a || B_a)`.
pub fn misspecification_level(inst: &ContractInstance) -> f64 {
    (0..inst.n_beliefs())
        .map(|b| (0..inst.n_actions()).map(|a| inst.kl(b, a)).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GenericViolation {
    /// Two beliefs share a KL value at one action.
    EqualKl { action: usize, beliefs: (usize, usize) },
    /// Three KL profile points are collinear.
    Collinear { beliefs: (usize, usize, usize), det: f64 },
    /// A profile entry is infinite, so the geometric test does not apply.
    InfiniteProfile { belief: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenericityReport {
    pub pass: bool,
    pub violations: Vec<GenericViolation>,
}

/// Checks the genericity conditions for two-action instances.
pub fn check_generic(inst: &ContractInstance) -> Result<GenericityReport> {
    if inst.n_actions() != 2 {
        return Err(Error::Unsupported(format!(
            "genericity check needs exactly two actions, instance has {}",
            inst.n_actions()
        )));
    }
    let n = inst.n_beliefs();
    let mut violations = Vec::new();
    for b in 0..n {
        if !(inst.kl(b, 0).is_finite() && inst.kl(b, 1).is_finite()) {
            violations.push(GenericViolation::InfiniteProfile { belief: b });
        }
    }
    for b in 0..n {
        for c in b + 1..n {
            for a in 0..2 {
                let (x, y) = (inst.kl(b, a), inst.kl(c, a));
                if x == y || (x - y).abs() <= GENERIC_EQ_TOL {
                    violations.push(GenericViolation::EqualKl {
                        action: a,
                        beliefs: (b, c),
                    });
                }
            }
        }
    }
    let pt = |b: usize| (inst.kl(b, 0), inst.kl(b, 1));
    for b in 0..n {
        for c in b + 1..n {
            for d in c + 1..n {
                let (p0, p1, p2) = (pt(b), pt(c), pt(d));
                let det = (p0.0 - p1.0) * (p0.1 - p2.1) - (p0.1 - p1.1) * (p0.0 - p2.0);
                if !det.is_finite() {
                    continue;
                }
                if det.abs() < GENERIC_DET_TOL {
                    violations.push(GenericViolation::Collinear {
                        beliefs: (b, c, d),
                        det,
                    });
                }
            }
        }
    }
    Ok(GenericityReport {
        pass: violations.is_empty(),
        violations,
    })
}
