use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{evaluate_policy, EnvKind};
use crate::error::{Error, Result};

const MANIFEST: &str = include_str!("../../assets/reference_returns.txt");

/// Mean undiscounted returns of a uniform-random policy and of the scripted
/// expert, used as the 0 and 100 anchors of the normalized score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceReturns {
    pub random: f64,
    pub expert: f64,
}

impl ReferenceReturns {
    pub fn normalize(&self, raw_return: f64) -> Result<f64> {
        if self.expert == self.random {
            return Err(Error::Config(
                "expert and random reference returns coincide".into(),
            ));
        }
        Ok(100.0 * (raw_return - self.random) / (self.expert - self.random))
    }
}

/// Reference returns from the bundled manifest.
pub fn reference_returns(kind: EnvKind) -> Result<ReferenceReturns> {
    for line in MANIFEST.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, random, expert] = fields[..] else {
            return Err(Error::Format(format!("bad reference line '{line}'")));
        };
        if name == kind.name() {
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad reference value '{s}'")))
            };
            return Ok(ReferenceReturns {
                random: parse(random)?,
                expert: parse(expert)?,
            });
        }
    }
    Err(Error::Config(format!("no reference returns for {kind}")))
}

pub fn normalized_score(raw_return: f64, kind: EnvKind) -> Result<f64> {
    reference_returns(kind)?.normalize(raw_return)
}

/// Recomputes the reference returns: `episodes` rollouts of uniform-random
/// actions and of the noise-free scripted controller.
pub fn calibrate_reference_returns(
    kind: EnvKind,
    episodes: usize,
    seed: u64,
) -> Result<ReferenceReturns> {
    let spec = kind.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let random = evaluate_policy(kind, episodes, &mut rng, |obs| {
        Ok(obs
            .iter()
            .map(|_| {
                spec.action_low
                    .iter()
                    .zip(&spec.action_high)
                    .map(|(&lo, &hi)| action_rng.random_range(lo..=hi))
                    .collect()
            })
            .collect())
    })?;
    let expert = evaluate_policy(kind, episodes, &mut rng, |obs| {
        Ok(obs.iter().map(|o| kind.scripted_action(o)).collect())
    })?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ReferenceReturns {
        random: mean(&random),
        expert: mean(&expert),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_map_to_zero_and_hundred() {
        for kind in EnvKind::ALL {
            let refs = reference_returns(kind).unwrap();
            assert_eq!(normalized_score(refs.random, kind).unwrap(), 0.0);
            assert_eq!(normalized_score(refs.expert, kind).unwrap(), 100.0);
        }
    }

    #[test]
    fn degenerate_references_are_a_config_error() {
        let refs = ReferenceReturns {
            random: 1.0,
            expert: 1.0,
        };
        assert!(matches!(refs.normalize(1.0), Err(Error::Config(_))));
    }

    #[test]
    fn bundled_references_match_recalibration() {
        for kind in EnvKind::ALL {
            let stored = reference_returns(kind).unwrap();
            let fresh = calibrate_reference_returns(kind, 100, 0).unwrap();
            assert!((stored.random - fresh.random).abs() < 1e-6, "{kind}: {fresh:?}");
            assert!((stored.expert - fresh.expert).abs() < 1e-6, "{kind}: {fresh:?}");
            // The scripted expert scores 100 by construction.
            let score = normalized_score(fresh.expert, kind).unwrap();
            assert!((score - 100.0).abs() < 1e-4);
        }
    }
}
