//! Maximal end components and the weak-communication test.
//!
//! An end component is a set of states together with a nonempty subset of
//! allowed actions per state such that the set is closed under the allowed
//! actions (every successor with positive probability stays inside) and is
//! strongly connected through them. The support graph uses strict
//! positivity `P(s'|s,a) > 0`; empirical kernels contain exact multiples
//! of `1/n`, so the edge relation is well defined.
//!
//! States outside every maximal end component are transient under every
//! stationary policy, so an MDP is weakly communicating exactly when the
//! decomposition yields a single component.

use super::Mdp;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

/// One maximal end component: its states (sorted) and, parallel to them,
/// the allowed actions of each state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MecComponent {
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MecDecomposition {
    pub components: Vec<MecComponent>,
    /// States in no component, transient under every stationary policy.
    pub transient_states: Vec<usize>,
}

/// Computes the maximal end components of `m` by iterated SCC refinement:
/// actions whose support leaves the SCC of their state are pruned, states
/// left with no actions are dropped, until a fixpoint is reached.
pub fn mec_decomposition(m: &Mdp) -> MecDecomposition {
    let s_count = m.num_states();
    let a_count = m.num_actions();
    let mut alive = vec![true; s_count];
    let mut allowed = vec![vec![true; a_count]; s_count];

    loop {
        let mut graph = DiGraph::<(), ()>::new();
        for _ in 0..s_count {
            graph.add_node(());
        }
        for s in 0..s_count {
            if !alive[s] {
                continue;
            }
            for a in 0..a_count {
                if !allowed[s][a] {
                    continue;
                }
                for (next, &p) in m.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        graph.add_edge((s as u32).into(), (next as u32).into(), ());
                    }
                }
            }
        }

        let mut scc_of = vec![usize::MAX; s_count];
        for (id, scc) in tarjan_scc(&graph).iter().enumerate() {
            for node in scc {
                scc_of[node.index()] = id;
            }
        }

        let mut changed = false;
        let mut dead_queue: Vec<usize> = Vec::new();
        for s in 0..s_count {
            if !alive[s] {
                continue;
            }
            for a in 0..a_count {
                if !allowed[s][a] {
                    continue;
                }
                let leaves = m
                    .row(s, a)
                    .iter()
                    .enumerate()
                    .any(|(next, &p)| p > 0.0 && (!alive[next] || scc_of[next] != scc_of[s]));
                if leaves {
                    allowed[s][a] = false;
                    changed = true;
                }
            }
            if allowed[s].iter().all(|&ok| !ok) {
                dead_queue.push(s);
            }
        }

        while let Some(s) = dead_queue.pop() {
            if !alive[s] {
                continue;
            }
            alive[s] = false;
            changed = true;
            // Any action that can reach a dead state is no longer usable.
            for t in 0..s_count {
                if !alive[t] {
                    continue;
                }
                for a in 0..a_count {
                    if allowed[t][a] && m.transition(t, a, s) > 0.0 {
                        allowed[t][a] = false;
                    }
                }
                if allowed[t].iter().all(|&ok| !ok) {
                    dead_queue.push(t);
                }
            }
        }

        if !changed {
            // Fixpoint: group the surviving states by SCC id.
            let mut by_scc: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for s in 0..s_count {
                if alive[s] {
                    by_scc.entry(scc_of[s]).or_default().push(s);
                }
            }
            let mut components: Vec<MecComponent> = by_scc
                .into_values()
                .map(|mut states| {
                    states.sort_unstable();
                    let actions = states
                        .iter()
                        .map(|&s| {
                            (0..a_count).filter(|&a| allowed[s][a]).collect::<Vec<_>>()
                        })
                        .collect();
                    MecComponent { states, actions }
                })
                .collect();
            components.sort_by_key(|c| c.states[0]);
            let transient_states = (0..s_count).filter(|&s| !alive[s]).collect();
            return MecDecomposition {
                components,
                transient_states,
            };
        }
    }
}

/// True when the decomposition yields exactly one maximal end component:
/// one closed communicating set plus states transient under every policy.
pub fn is_weakly_communicating(m: &Mdp) -> bool {
    mec_decomposition(m).components.len() == 1
}
