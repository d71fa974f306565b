//! Seeded benchmark instance generators. All rows are renormalized
//! exactly before emitting, so generated documents always validate.

use super::HarnessError;
use crate::generative::{derive_stream_seed, SeedStream, DOMAIN_GENERATE};
use crate::mdp::{is_weakly_communicating, Mdp};

const GARNET_RETRY_CAP: u32 = 64;

/// Rewrites the last nonzero entry of a probability row as one minus the
/// float sum of the others, which makes the index-order row sum exactly
/// `1.0`.
pub fn renormalize_row_exact(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    assert!(total > 0.0, "row has no mass");
    for p in row.iter_mut() {
        *p /= total;
    }
    let last = row
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("row has positive mass");
    let prefix: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != last)
        .map(|(_, &p)| p)
        .sum();
    row[last] = (1.0 - prefix).max(0.0);
}

/// Birth-death chain with LEFT (0) and RIGHT (1) actions over states
/// `0..num_states`.
///
/// RIGHT moves up with probability `1 − p_slip` and slips down otherwise;
/// LEFT mirrors it. Moves saturate at the ends. Reward 1 at the right
/// end, 0.05 at the left end, 0 elsewhere, for both actions. Weakly
/// communicating by construction. The construction is deterministic; the
/// seed parameter only exists so every generator has the same signature.
pub fn generate_chain(num_states: usize, p_slip: f64, _seed: u64) -> Result<Mdp, HarnessError> {
    if num_states < 2 {
        return Err(HarnessError::BadParameter(format!(
            "chain needs at least 2 states, got {num_states}"
        )));
    }
    if !(0.0..=0.5).contains(&p_slip) {
        return Err(HarnessError::BadParameter(format!(
            "p_slip must lie in [0, 0.5], got {p_slip}"
        )));
    }
    let n = num_states;
    let mut transitions = vec![vec![vec![0.0f64; n]; 2]; n];
    let mut rewards = vec![vec![0.0f64; 2]; n];
    for s in 0..n {
        let down = s.saturating_sub(1);
        let up = (s + 1).min(n - 1);
        // LEFT
        transitions[s][0][down] += 1.0 - p_slip;
        transitions[s][0][up] += p_slip;
        // RIGHT
        transitions[s][1][up] += 1.0 - p_slip;
        transitions[s][1][down] += p_slip;
        for a in 0..2 {
            renormalize_row_exact(&mut transitions[s][a]);
        }
        if s == 0 {
            rewards[s] = vec![0.05, 0.05];
        } else if s == n - 1 {
            rewards[s] = vec![1.0, 1.0];
        }
    }
    Ok(Mdp::new(n, 2, transitions, rewards)?)
}

/// Random MDP: each `(s, a)` row is supported on `branching` states chosen
/// uniformly without replacement, weighted by normalized exponentials
/// (a flat Dirichlet on the support); rewards are Uniform(0,1).
/// Regenerates (bounded retries) until the instance is weakly
/// communicating. Deterministic given the seed.
pub fn generate_garnet(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    seed: u64,
) -> Result<Mdp, HarnessError> {
    if num_states == 0 || num_actions == 0 {
        return Err(HarnessError::BadParameter(
            "need at least one state and one action".into(),
        ));
    }
    if branching == 0 || branching > num_states {
        return Err(HarnessError::BadParameter(format!(
            "branching must lie in [1, {num_states}], got {branching}"
        )));
    }
    for attempt in 0..GARNET_RETRY_CAP {
        let mut stream = SeedStream::new(derive_stream_seed(
            seed,
            &[DOMAIN_GENERATE, attempt as u64],
        ));
        let mut transitions = vec![vec![vec![0.0f64; num_states]; num_actions]; num_states];
        let mut rewards = vec![vec![0.0f64; num_actions]; num_states];
        for s in 0..num_states {
            for a in 0..num_actions {
                let support = sample_without_replacement(&mut stream, num_states, branching);
                for &next in &support {
                    // Exponential weight; floored so the support never
                    // collapses below `branching` states.
                    let u = 1.0 - stream.next_f64();
                    transitions[s][a][next] = (-u.ln()).max(1e-300);
                }
                renormalize_row_exact(&mut transitions[s][a]);
                rewards[s][a] = stream.next_f64();
            }
        }
        let m = Mdp::new(num_states, num_actions, transitions, rewards)?;
        if is_weakly_communicating(&m) {
            return Ok(m);
        }
    }
    Err(HarnessError::GenerationFailed {
        attempts: GARNET_RETRY_CAP,
    })
}

/// First `k` entries of a seeded partial Fisher-Yates shuffle of `0..n`.
fn sample_without_replacement(stream: &mut SeedStream, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + stream.next_index(n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::diameter;

    #[test]
    fn deterministic_two_state_chain() {
        let m = generate_chain(2, 0.0, 0).unwrap();
        assert!(is_weakly_communicating(&m));
        assert_eq!(m.transition(0, 1, 1), 1.0);
        assert_eq!(m.transition(1, 0, 0), 1.0);
        assert_eq!(m.reward(0, 0), 0.05);
        assert_eq!(m.reward(1, 1), 1.0);
    }

    #[test]
    fn chain_is_reproducible() {
        assert_eq!(generate_chain(5, 0.1, 7).unwrap(), generate_chain(5, 0.1, 7).unwrap());
    }

    #[test]
    fn chain_diameter_finite_and_dominates_span() {
        let m = generate_chain(5, 0.1, 0).unwrap();
        let d = diameter(&m, 1_000_000).unwrap();
        assert!(d.is_finite());
        let (gb, _, _) = crate::solve::solve_average_optimal(&m, 1e-9).unwrap();
        assert!(gb.span_h <= d + 1e-9);
    }

    #[test]
    fn chain_rejects_bad_parameters() {
        assert!(generate_chain(1, 0.1, 0).is_err());
        assert!(generate_chain(3, 0.6, 0).is_err());
    }

    #[test]
    fn garnet_full_support_is_weakly_communicating() {
        let m = generate_garnet(4, 2, 4, 3).unwrap();
        assert!(is_weakly_communicating(&m));
        for s in 0..4 {
            for a in 0..2 {
                assert!(m.row(s, a).iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn garnet_is_reproducible() {
        let a = generate_garnet(5, 3, 2, 42).unwrap();
        let b = generate_garnet(5, 3, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_garnet(5, 3, 2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn garnet_rows_sum_exactly_to_one() {
        let m = generate_garnet(6, 2, 3, 9).unwrap();
        for s in 0..6 {
            for a in 0..2 {
                let sum: f64 = m.row(s, a).iter().sum();
                assert_eq!(sum, 1.0, "row ({s},{a}) sums to {sum:.17}");
            }
        }
    }

    #[test]
    fn garnet_rejects_bad_branching() {
        assert!(generate_garnet(3, 2, 0, 1).is_err());
        assert!(generate_garnet(3, 2, 4, 1).is_err());
    }
}
