//! Named instances: the revenue-loss instance, the three-action divergence
//! instance, and the bimatrix-game reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{cycle_stats, Trajectory};
use crate::model::{
    agent_utility, validate_instance, ActionSpec, BeliefSpec, Contract, ContractInstance, InstanceSpec,
};

// --- revenue loss ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnhappyParams {
    pub p: f64,
    pub c: f64,
    pub delta: f64,
}

impl UnhappyParams {
    pub fn new(p: f64, c: f64, delta: f64) -> Result<Self> {
        let params = Self { p, c, delta };
        params.validate()?;
        Ok(params)
    }

    /// `p` in [3/4, 1], `c` in [0, 2p - 1], `delta` in (0, 1 - p).
    ///
    /// The cost ceiling `2p - 1` (rather than 1/2) is what the revenue bound
    /// needs, and it admits the headline choice `c = 0.6` at `p = 0.86`.
    pub fn validate(&self) -> Result<()> {
        let Self { p, c, delta } = *self;
        if !(0.75..=1.0).contains(&p) {
            return Err(Error::ParameterRange(format!("p = {p} outside [3/4, 1]")));
        }
        if !(0.0..=2.0 * p - 1.0).contains(&c) {
            return Err(Error::ParameterRange(format!("c = {c} outside [0, 2p - 1]")));
        }
        if !(delta > 0.0 && delta < 1.0 - p) {
            return Err(Error::ParameterRange(format!("delta = {delta} outside (0, 1 - p)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Specification {
    Correct,
    Misspecified,
}

/// Rewards {0, 1, 2}; actions a_g (cost c) and a_b (free).
pub fn make_unhappy_principal(params: &UnhappyParams, spec: Specification) -> Result<ContractInstance> {
    params.validate()?;
    let UnhappyParams { p, c, delta } = *params;
    let f_g = vec![1.0 - p - delta, p, delta];
    let f_b = vec![p, 1.0 - p, 0.0];
    let belief = match spec {
        Specification::Correct => BeliefSpec {
            name: "F".into(),
            dists: vec![f_g.clone(), f_b.clone()],
        },
        Specification::Misspecified => BeliefSpec {
            name: "B'".into(),
            dists: vec![f_g.clone(), vec![p - delta, 1.0 - p, delta]],
        },
    };
    validate_instance(&InstanceSpec {
        actions: vec![
            ActionSpec { name: "a_g".into(), cost: c },
            ActionSpec { name: "a_b".into(), cost: 0.0 },
        ],
        rewards: vec![0.0, 1.0, 2.0],
        true_dists: vec![f_g, f_b],
        beliefs: vec![belief],
        prior: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnhappyBounds {
    pub correct_revenue: f64,
    pub misspecified_revenue: f64,
    pub gap_ratio: f64,
}

/// Closed-form optimal revenues. No range check, so limits such as
/// `delta = 0` can be evaluated.
pub fn unhappy_bounds(params: &UnhappyParams) -> UnhappyBounds {
    let UnhappyParams { p, c, delta } = *params;
    let correct = p + 2.0 * delta - c;
    let mis = (1.0 - p).max(p + 2.0 * delta - c * p / (2.0 * p - 1.0));
    UnhappyBounds {
        correct_revenue: correct,
        misspecified_revenue: mis,
        gap_ratio: correct / mis,
    }
}

// --- ergodic divergence ---------------------------------------------------

/// Three free actions, rewards (r0, r1, r2, rf) with `rf` never realized,
/// and a contract paying 1 on r0, r1, r2.
///
/// Under this contract `V(a_i) = 1 - 0.75 mu(B_{i-1})`, so the agent picks the
/// action whose predecessor belief is least likely. Paying r0 as well keeps
/// the three actions symmetric under rotation, which the cycling relies on.
pub fn make_divergence_instance() -> (ContractInstance, Contract) {
    let row = |entries: &[(usize, f64)]| {
        let mut r = vec![0.0; 4];
        for &(i, p) in entries {
            r[i] = p;
        }
        r
    };
    const RF: usize = 3;
    let beliefs = (0..3)
        .map(|b| BeliefSpec {
            name: format!("B{b}"),
            dists: (0..3)
                .map(|i| {
                    if b == i {
                        row(&[(i, 1.0)])
                    } else if b == (i + 1) % 3 {
                        row(&[(i, 0.125), ((i + 1) % 3, 0.875)])
                    } else {
                        row(&[(i, 0.25), (RF, 0.75)])
                    }
                })
                .collect(),
        })
        .collect();
    let spec = InstanceSpec {
        actions: (0..3).map(|i| ActionSpec { name: format!("a{i}"), cost: 0.0 }).collect(),
        rewards: vec![0.0, 1.0, 2.0, 3.0],
        true_dists: (0..3).map(|i| row(&[(i, 1.0)])).collect(),
        beliefs,
        prior: None,
    };
    let inst = validate_instance(&spec).expect("divergence instance is well formed");
    (inst, Contract::new(vec![1.0, 1.0, 1.0, 0.0]).expect("nonnegative"))
}

/// Block-start condition after which block lengths grow geometrically: `log2(mu(B_{w+1}) / mu(B_{w-1}))`.
pub const DIVERGENCE_THRESHOLD_LOG2: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    /// Every switch goes from `a_w` to `a_{w-1 mod 3}`.
    pub directions_ok: bool,
    pub n_switches: usize,
    /// First block start meeting the log-ratio threshold.
    pub threshold_time: Option<usize>,
    /// Smallest growth ratio among blocks from the threshold on.
    pub min_growth_after_threshold: Option<f64>,
    /// Max minus min of the running a0 frequency over the second half.
    pub a0_oscillation: f64,
    /// Number of completed blocks per action.
    pub blocks_per_action: Vec<usize>,
}

pub fn divergence_report(traj: &Trajectory) -> Result<DivergenceReport> {
    let stats = cycle_stats(traj)?;
    let starts: Vec<usize> = std::iter::once(1).chain(traj.switch_times.iter().copied()).collect();
    let action_at = |t: usize| traj.actions[t - 1];
    let directions_ok = traj
        .switch_times
        .iter()
        .all(|&t| action_at(t) == (action_at(t - 1) + 2) % 3);

    let threshold_block = starts.iter().enumerate().position(|(k, &t)| {
        let w = action_at(t);
        traj.block_start_posteriors[k].log2_ratio((w + 1) % 3, (w + 2) % 3) >= DIVERGENCE_THRESHOLD_LOG2
    });
    // stats[k] is the block starting at starts[k]; its ratio compares it with block k - 1.
    let min_growth_after_threshold = threshold_block.and_then(|k0| {
        stats
            .iter()
            .enumerate()
            .filter(|(k, _)| *k > k0)
            .filter_map(|(_, s)| s.growth_ratio)
            .reduce(f64::min)
    });

    let half = traj.len() / 2;
    let series = traj.freq[half..].iter().map(|f| f[0]);
    let hi = series.clone().fold(f64::NEG_INFINITY, f64::max);
    let lo = series.fold(f64::INFINITY, f64::min);

    let mut blocks_per_action = vec![0; 3];
    for s in &stats {
        blocks_per_action[action_at(s.switch_time)] += 1;
    }
    Ok(DivergenceReport {
        directions_ok,
        n_switches: traj.switch_times.len(),
        threshold_time: threshold_block.map(|k| starts[k]),
        min_growth_after_threshold,
        a0_oscillation: hi - lo,
        blocks_per_action,
    })
}

// --- game reduction -------------------------------------------------------

/// Pair of square payoff matrices, row player `y`, column player `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameMatrices {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl GameMatrices {
    pub fn new(y: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Empty("game matrix"));
        }
        if z.len() != n || y.iter().chain(&z).any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("game matrices must be square and of equal size".into()));
        }
        if y.iter().chain(&z).flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidValue("game entries must be finite and nonnegative".into()));
        }
        Ok(Self { y, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// `floor(entry / (eps_star / kappa)) + 1` on both matrices.
pub fn round_game(g: &GameMatrices, eps_star: f64, kappa: f64) -> Result<GameMatrices> {
    if !(eps_star > 0.0 && eps_star.is_finite()) || !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::ParameterRange(format!("eps_star = {eps_star}, kappa = {kappa} must be positive")));
    }
    let step = eps_star / kappa;
    let round = |m: &Vec<Vec<f64>>| m.iter().map(|row| row.iter().map(|v| (v / step).floor() + 1.0).collect()).collect();
    Ok(GameMatrices {
        y: round(&g.y),
        z: round(&g.z),
    })
}

pub const DEFAULT_KAPPA: f64 = 7.0;
const MAX_K: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOutput {
    pub instance: ContractInstance,
    pub contract: Contract,
    pub k: u32,
    pub e_tilde: f64,
    /// Game row `i` maps to action `action_map[i]`.
    pub action_map: Vec<usize>,
    /// Game column `j` maps to belief `belief_map[j]`.
    pub belief_map: Vec<usize>,
    /// `reward_layout[i][j]` is the reward index of `r_j` in block `i`.
    pub reward_layout: Vec<Vec<usize>>,
}

impl ReductionOutput {
    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "instance": self.instance.to_spec(),
            "contract": self.contract,
            "k": self.k,
            "e_tilde": self.e_tilde,
            "action_map": self.action_map,
            "belief_map": self.belief_map,
            "reward_layout": self.reward_layout,
        });
        serde_json::to_string_pretty(&v).expect("reduction serializes")
    }
}

fn build_reduction(tilde: &GameMatrices, k: u32) -> Result<ReductionOutput> {
    let n = tilde.n();
    let scale = 2f64.powi(k as i32);
    let e_tilde = (std::f64::consts::E * scale).ceil() / scale;
    let small = e_tilde.powi(-(k as i32));
    let base = 1.0 - n as f64 * small;
    if base <= 0.0 {
        return Err(Error::Reduction(format!("k = {k} leaves negative mass on r0")));
    }
    let width = n + 1;
    let layout: Vec<Vec<usize>> = (0..n).map(|i| (0..width).map(|j| i * width + j).collect()).collect();
    let n_rewards = n * width;

    let mut true_dists = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![0.0; n_rewards];
        row[layout[i][0]] = base;
        for j in 1..=n {
            row[layout[i][j]] = small;
        }
        true_dists.push(row);
    }

    // Mass a belief puts on its own reward r_j in block i.
    let own = |i: usize, j: usize| 1.0 - (n as f64 - 1.0) * small - e_tilde.powf(-tilde.z[i][j]);
    let mut beliefs = Vec::with_capacity(n);
    for j in 0..n {
        let mut dists = Vec::with_capacity(n);
        for i in 0..n {
            let m = own(i, j);
            if m <= 0.0 {
                return Err(Error::Reduction(format!("k = {k} leaves negative belief mass at ({i}, {j})")));
            }
            let mut row = vec![0.0; n_rewards];
            row[layout[i][0]] = e_tilde.powf(-tilde.z[i][j]);
            for l in 1..=n {
                row[layout[i][l]] = if l == j + 1 { m } else { small };
            }
            dists.push(row);
        }
        beliefs.push(BeliefSpec {
            name: format!("B{}", j + 1),
            dists,
        });
    }

    let mut payments = vec![0.0; n_rewards];
    for i in 0..n {
        for j in 0..n {
            payments[layout[i][j + 1]] = tilde.y[i][j] / own(i, j);
        }
    }

    let spec = InstanceSpec {
        actions: (0..n).map(|i| ActionSpec { name: format!("a{}", i + 1), cost: 0.0 }).collect(),
        rewards: (0..n_rewards).map(|r| r as f64).collect(),
        true_dists,
        beliefs,
        prior: None,
    };
    Ok(ReductionOutput {
        instance: validate_instance(&spec)?,
        contract: Contract::new(payments)?,
        k,
        e_tilde,
        action_map: (0..n).collect(),
        belief_map: (0..n).collect(),
        reward_layout: layout,
    })
}

/// Contract instance whose utilities and KL divergences reproduce the
/// rounded game within `eps_prime`. `k` starts at `max(4, ceil(log2(4n)))`
/// and doubles until the bounds verify.
pub fn game_to_contract(tilde: &GameMatrices, eps_prime: f64) -> Result<ReductionOutput> {
    if !(eps_prime > 0.0) {
        return Err(Error::ParameterRange(format!("eps_prime = {eps_prime} must be positive")));
    }
    let n = tilde.n();
    GameMatrices::new(tilde.y.clone(), tilde.z.clone())?;
    if tilde.z.iter().flatten().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return Err(Error::InvalidValue("Z entries must be integers of at least 1".into()));
    }
    let mut k = 4u32.max((4.0 * n as f64).log2().ceil() as u32);
    loop {
        if let Ok(out) = build_reduction(tilde, k) {
            if verify_reduction(&out, tilde, eps_prime)?.pass {
                return Ok(out);
            }
        }
        if k >= MAX_K {
            return Err(Error::Reduction(format!("bounds not met at eps_prime = {eps_prime} by k = {MAX_K}")));
        }
        k = (2 * k).min(MAX_K);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionReport {
    pub max_utility_deviation: f64,
    pub max_kl_deviation: f64,
    pub pass: bool,
}

/// Checks `|V(a_i, B_j, P) - Y_ij| <= eps'` and `|KL(F_ai || B_j) - Z_ij| <= eps'`.
pub fn verify_reduction(out: &ReductionOutput, tilde: &GameMatrices, eps_prime: f64) -> Result<ReductionReport> {
    let n = tilde.n();
    if out.action_map.len() != n || out.belief_map.len() != n {
        return Err(Error::DimensionMismatch("reduction and game sizes differ".into()));
    }
    let (mut dv, mut dk) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (out.action_map[i], out.belief_map[j]);
            dv = dv.max((agent_utility(&out.instance, a, b, &out.contract) - tilde.y[i][j]).abs());
            dk = dk.max((out.instance.kl(b, a) - tilde.z[i][j]).abs());
        }
    }
    Ok(ReductionReport {
        max_utility_deviation: dv,
        max_kl_deviation: dk,
        pass: dv <= eps_prime && dk <= eps_prime,
    })
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Best-deviation gains `(row, column)` at the mixed profile `(x, y)`.
pub fn regrets(g: &GameMatrices, x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = g.n();
    let ry = mat_vec(&g.y, y);
    let row_value: f64 = x.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let row = ry.iter().copied().fold(f64::NEG_INFINITY, f64::max) - row_value;
    let cz: Vec<f64> = (0..n).map(|j| (0..n).map(|i| x[i] * g.z[i][j]).sum()).collect();
    let col_value: f64 = cz.iter().zip(y).map(|(a, b)| a * b).sum();
    let col = cz.iter().copied().fold(f64::NEG_INFINITY, f64::max) - col_value;
    (row, col)
}

/// Transfer of approximate equilibria from the rounded game back to the
/// original: regret there is at most `(regret_rounded + 1) * eps_star / kappa`.
pub fn nash_transfer_holds(original: &GameMatrices, eps_star: f64, kappa: f64, x: &[f64], y: &[f64]) -> Result<bool> {
    let tilde = round_game(original, eps_star, kappa)?;
    let (r0, c0) = regrets(original, x, y);
    let (rt, ct) = regrets(&tilde, x, y);
    let step = eps_star / kappa;
    let slack = 1e-9 * (1.0 + step);
    Ok(r0 <= (rt + 1.0) * step + slack && c0 <= (ct + 1.0) * step + slack)
}
