//! Diameter: worst-case over ordered state pairs of the best-policy
//! expected hitting time.

use super::SolveError;
use crate::mdp::Mdp;

const HITTING_RESIDUAL_TOL: f64 = 1e-9;

/// `D = max_{s1 ≠ s2} min_π E[hitting time of s2 from s1]`.
///
/// Computed per target by stochastic-shortest-path value iteration
/// `h(s) = 1 + min_a Σ_{s'≠target} P(s'|s,a) h(s')` swept to a residual of
/// `1e-9`. Returns `f64::INFINITY` as soon as some target is unreachable
/// from some source in the support graph.
pub fn diameter(m: &Mdp, horizon_cap: u64) -> Result<f64, SolveError> {
    let n = m.num_states();
    if n == 1 {
        return Ok(0.0);
    }
    let reach = reachability(m);
    for target in 0..n {
        for source in 0..n {
            if source != target && !reach[source][target] {
                return Ok(f64::INFINITY);
            }
        }
    }

    let mut worst = 0.0f64;
    for target in 0..n {
        let mut h = vec![0.0f64; n];
        let mut sweeps = 0u64;
        loop {
            let mut delta = 0.0f64;
            let mut h_new = vec![0.0f64; n];
            for s in 0..n {
                if s == target {
                    continue;
                }
                let mut best = f64::INFINITY;
                for a in 0..m.num_actions() {
                    let expected: f64 = m
                        .row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|&(next, _)| next != target)
                        .map(|(next, &p)| p * h[next])
                        .sum();
                    best = best.min(1.0 + expected);
                }
                h_new[s] = best;
                delta = delta.max((h_new[s] - h[s]).abs());
            }
            h = h_new;
            sweeps += 1;
            if delta <= HITTING_RESIDUAL_TOL {
                break;
            }
            if sweeps >= horizon_cap {
                return Err(SolveError::NonConvergence {
                    max_iters: horizon_cap,
                });
            }
        }
        for (s, &value) in h.iter().enumerate() {
            if s != target {
                worst = worst.max(value);
            }
        }
    }
    Ok(worst)
}

/// `reach[s][t]`: t is reachable from s in the union support graph
/// (any action, any number of steps, s reaches itself trivially).
fn reachability(m: &Mdp) -> Vec<Vec<bool>> {
    let n = m.num_states();
    let mut adj = vec![Vec::new(); n];
    for s in 0..n {
        for a in 0..m.num_actions() {
            for (next, &p) in m.row(s, a).iter().enumerate() {
                if p > 0.0 {
                    adj[s].push(next);
                }
            }
        }
    }
    (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut frontier = vec![start];
            while let Some(s) = frontier.pop() {
                for &next in &adj[s] {
                    if !seen[next] {
                        seen[next] = true;
                        frontier.push(next);
                    }
                }
            }
            seen
        })
        .collect()
}
