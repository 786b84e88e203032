//! Seeded random instances for experiments and randomized tests.

use rand::Rng;

use crate::model::{
    check_generic, validate_instance, ActionSpec, BeliefSpec, Contract, ContractInstance, InstanceSpec,
};

/// Full-support probability row; every entry at least `floor / n` before
/// normalization.
pub fn random_row(rng: &mut impl Rng, n: usize, floor: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Two-action instance with random rewards in `[0, 3]`, costs in `[0, 0.5]`
/// and full-support rows. Not necessarily generic.
pub fn random_two_action(rng: &mut impl Rng, n_rewards: usize, n_beliefs: usize) -> ContractInstance {
    random_instance(rng, 2, n_rewards, n_beliefs)
}

pub fn random_instance(rng: &mut impl Rng, n_actions: usize, n_rewards: usize, n_beliefs: usize) -> ContractInstance {
    loop {
        let mut rewards: Vec<f64> = (0..n_rewards).map(|_| 3.0 * rng.random::<f64>()).collect();
        rewards.sort_by(f64::total_cmp);
        let spec = InstanceSpec {
            actions: (0..n_actions)
                .map(|a| ActionSpec {
                    name: format!("a{}", a + 1),
                    cost: 0.5 * rng.random::<f64>(),
                })
                .collect(),
            rewards,
            true_dists: (0..n_actions).map(|_| random_row(rng, n_rewards, 0.05)).collect(),
            beliefs: (0..n_beliefs)
                .map(|b| BeliefSpec {
                    name: format!("B{}", b + 1),
                    dists: (0..n_actions).map(|_| random_row(rng, n_rewards, 0.05)).collect(),
                })
                .collect(),
            prior: None,
        };
        // Only fails on coinciding reward draws.
        if let Ok(inst) = validate_instance(&spec) {
            return inst;
        }
    }
}

/// Resamples until the instance passes the genericity check.
pub fn random_generic_two_action(rng: &mut impl Rng, n_rewards: usize, n_beliefs: usize) -> ContractInstance {
    loop {
        let inst = random_two_action(rng, n_rewards, n_beliefs);
        if check_generic(&inst).map(|r| r.pass).unwrap_or(false) {
            return inst;
        }
    }
}

/// Payments drawn uniformly from `[0, max]`.
pub fn random_contract(rng: &mut impl Rng, n_rewards: usize, max: f64) -> Contract {
    Contract::new((0..n_rewards).map(|_| max * rng.random::<f64>()).collect()).expect("nonnegative payments")
}
