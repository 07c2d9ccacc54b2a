//! Exact dynamic programming on finite MDPs: the Bellman optimality backup,
//! its restriction to actions the behavior policy supports, and the
//! suboptimality gap between the two fixed points together with its bound
//! `‖T Q* − T_ε Q*‖∞ / (1 − γ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Sup-norm distance to the true fixed point at which iteration stops.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `[s][a]`, flattened.
    rewards: Vec<f64>,
    /// Behavior policy densities `[s][a]`, flattened.
    behavior: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        behavior: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let (s, a) = (num_states, num_actions);
        if s == 0 || a == 0 {
            return Err(Error::Config("MDP needs at least one state and action".into()));
        }
        if transitions.len() != s * a * s || rewards.len() != s * a || behavior.len() != s * a {
            return Err(Error::Dimension(format!(
                "MDP tables for {s} states and {a} actions have lengths {}, {}, {}",
                transitions.len(),
                rewards.len(),
                behavior.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("discount {gamma} outside (0, 1)")));
        }
        let check_rows = |table: &[f64], width: usize, what: &str| -> Result<()> {
            for (i, row) in table.chunks(width).enumerate() {
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Config(format!("{what} row {i} is not a distribution")));
                }
            }
            Ok(())
        };
        check_rows(&transitions, s, "transition")?;
        check_rows(&behavior, a, "behavior policy")?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("MDP rewards".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            transitions,
            rewards,
            behavior,
            gamma,
        })
    }

    /// Transition rows and behavior rows drawn from Dirichlet(1), rewards
    /// uniform on `[0, 1]`.
    pub fn random(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut simplex = |n: usize| {
            let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = draws.iter().sum();
            let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
            // Push the rounding residue into the largest entry so rows sum to 1.
            let residue = 1.0 - row.iter().sum::<f64>();
            let largest = (0..n).fold(0, |best, i| if row[i] > row[best] { i } else { best });
            row[largest] += residue;
            row
        };
        let transitions = (0..num_states * num_actions)
            .flat_map(|_| simplex(num_states))
            .collect();
        let behavior = (0..num_states).flat_map(|_| simplex(num_actions)).collect();
        let rewards = (0..num_states * num_actions)
            .map(|_| rng.random::<f64>())
            .collect();
        Self::new(num_states, num_actions, transitions, rewards, behavior, gamma)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn behavior(&self, s: usize, a: usize) -> f64 {
        self.behavior[s * self.num_actions + a]
    }

    /// `support[s][a]` is true when `π_β(a|s) > eps` (strictly).
    pub fn support(&self, eps: f64) -> Result<Vec<Vec<bool>>> {
        (0..self.num_states)
            .map(|s| {
                let row: Vec<bool> = (0..self.num_actions)
                    .map(|a| self.behavior(s, a) > eps)
                    .collect();
                if row.iter().any(|&ok| ok) {
                    Ok(row)
                } else {
                    Err(Error::EmptySupport { state: s })
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::from_values(num_states, num_actions, vec![0.0; num_states * num_actions])
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), num_states * num_actions, "Q table size");
        Self {
            num_states,
            num_actions,
            values,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn max_over(&self, s: usize, allowed: Option<&[bool]>) -> f64 {
        (0..self.num_actions)
            .filter(|&a| allowed.is_none_or(|mask| mask[a]))
            .map(|a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn backup(q: &QTable, mdp: &TabularMdp, support: Option<&[Vec<bool>]>) -> QTable {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let next_values: Vec<f64> = (0..ns)
        .map(|s| q.max_over(s, support.map(|m| m[s].as_slice())))
        .collect();
    let values = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| {
            let expected: f64 = (0..ns).map(|n| mdp.transition(s, a, n) * next_values[n]).sum();
            mdp.reward(s, a) + mdp.gamma * expected
        })
        .collect();
    QTable::from_values(ns, na, values)
}

/// `(T Q)(s,a) = r(s,a) + γ Σ_s' p(s'|s,a) max_a' Q(s',a')`.
pub fn bellman_backup(q: &QTable, mdp: &TabularMdp) -> QTable {
    backup(q, mdp, None)
}

/// Bellman backup whose inner max only ranges over `{a' : π_β(a'|s') > eps}`.
pub fn supported_backup(q: &QTable, mdp: &TabularMdp, eps: f64) -> Result<QTable> {
    let support = mdp.support(eps)?;
    Ok(backup(q, mdp, Some(&support)))
}

fn fixed_point(mdp: &TabularMdp, support: Option<&[Vec<bool>]>) -> QTable {
    // Successive iterates within δ guarantee a distance of γδ/(1−γ) to the
    // fixed point, so stop once that quantity drops below the tolerance.
    let stop = FIXED_POINT_TOLERANCE * (1.0 - mdp.gamma) / mdp.gamma;
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    loop {
        let next = backup(&q, mdp, support);
        let delta = next.sup_distance(&q);
        q = next;
        if delta <= stop {
            return q;
        }
    }
}

/// Fixed point `Q*` of the unrestricted backup.
pub fn optimal_q(mdp: &TabularMdp) -> QTable {
    fixed_point(mdp, None)
}

/// Fixed point `Q*_ε` of the supported backup.
pub fn supported_optimal_q(mdp: &TabularMdp, eps: f64) -> Result<QTable> {
    let support = mdp.support(eps)?;
    Ok(fixed_point(mdp, Some(&support)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapReport {
    /// `‖Q* − Q*_ε‖∞`.
    pub gap: f64,
    /// `‖T Q* − T_ε Q*‖∞`.
    pub operator_gap: f64,
    /// `operator_gap / (1 − γ)`.
    pub bound: f64,
}

pub fn suboptimality_gap(mdp: &TabularMdp, eps: f64) -> Result<GapReport> {
    let support = mdp.support(eps)?;
    let q_star = fixed_point(mdp, None);
    let q_eps = fixed_point(mdp, Some(&support));
    let operator_gap = backup(&q_star, mdp, None).sup_distance(&backup(&q_star, mdp, Some(&support)));
    Ok(GapReport {
        gap: q_star.sup_distance(&q_eps),
        operator_gap,
        bound: operator_gap / (1.0 - mdp.gamma),
    })
}

/// Greedy supported action per state on `Q*_ε`; ties go to the lowest index.
pub fn supported_optimal_policy(mdp: &TabularMdp, eps: f64) -> Result<Vec<usize>> {
    let support = mdp.support(eps)?;
    let q = fixed_point(mdp, Some(&support));
    Ok((0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .filter(|&a| support[s][a])
                .fold(None::<usize>, |best, a| match best {
                    Some(b) if q.get(s, b) >= q.get(s, a) => Some(b),
                    _ => Some(a),
                })
                .expect("support is nonempty")
        })
        .collect())
}
