//! Markov chain structure shared by the solvers: recurrent classes,
//! stationary distributions, absorption probabilities, the Cesaro-limit
//! matrix P*, and class periods.

use super::SolveError;
use crate::mdp::{Mdp, Policy};
use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

/// The transition matrix `P_π` induced by a deterministic policy.
pub fn policy_transition_matrix(m: &Mdp, pi: &Policy) -> DMatrix<f64> {
    let n = m.num_states();
    DMatrix::from_fn(n, n, |s, next| m.transition(s, pi.action(s), next))
}

/// The reward vector `r_π`.
pub fn policy_rewards(m: &Mdp, pi: &Policy) -> DVector<f64> {
    DVector::from_fn(m.num_states(), |s, _| m.reward(s, pi.action(s)))
}

/// Recurrent classes (closed SCCs of the support graph, each sorted) and
/// the remaining transient states.
pub struct ChainClasses {
    pub recurrent: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
}

pub fn recurrent_classes(p: &DMatrix<f64>) -> ChainClasses {
    let n = p.nrows();
    let mut graph = DiGraph::<(), ()>::new();
    for _ in 0..n {
        graph.add_node(());
    }
    for s in 0..n {
        for next in 0..n {
            if p[(s, next)] > 0.0 {
                graph.add_edge((s as u32).into(), (next as u32).into(), ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut scc_of = vec![0usize; n];
    for (id, scc) in sccs.iter().enumerate() {
        for node in scc {
            scc_of[node.index()] = id;
        }
    }
    let mut recurrent = Vec::new();
    let mut transient = Vec::new();
    for scc in &sccs {
        let states: Vec<usize> = scc.iter().map(|x| x.index()).collect();
        let closed = states.iter().all(|&s| {
            (0..n).all(|next| p[(s, next)] == 0.0 || scc_of[next] == scc_of[s])
        });
        if closed {
            let mut states = states;
            states.sort_unstable();
            recurrent.push(states);
        } else {
            transient.extend(states);
        }
    }
    recurrent.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    ChainClasses {
        recurrent,
        transient,
    }
}

/// Stationary distribution of `p` restricted to one recurrent class,
/// solved from `ν^T P = ν^T`, `Σν = 1`. Returned in class order.
pub fn stationary_distribution(p: &DMatrix<f64>, class: &[usize]) -> Result<Vec<f64>, SolveError> {
    let k = class.len();
    if k == 1 {
        return Ok(vec![1.0]);
    }
    // (P_C^T − I) ν = 0 with the last equation replaced by Σν = 1.
    let mut m = DMatrix::zeros(k, k);
    for (j, &sj) in class.iter().enumerate() {
        for (i, &si) in class.iter().enumerate() {
            m[(i, j)] = p[(sj, si)];
        }
        m[(j, j)] -= 1.0;
    }
    for j in 0..k {
        m[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let nu = m
        .lu()
        .solve(&b)
        .ok_or(SolveError::SingularSystem { residual: f64::NAN })?;
    // Residual of the defining equations.
    let mut residual: f64 = (nu.sum() - 1.0).abs();
    for (i, &si) in class.iter().enumerate() {
        let mut acc = 0.0;
        for (j, &sj) in class.iter().enumerate() {
            acc += nu[j] * p[(sj, si)];
        }
        residual = residual.max((acc - nu[i]).abs());
    }
    if residual > 1e-10 {
        return Err(SolveError::SingularSystem { residual });
    }
    Ok(nu.iter().copied().collect())
}

/// The Cesaro-limit matrix `P* = Clim_T (1/T) Σ_{t<T} P^t`, built from the
/// recurrent-class decomposition: recurrent rows repeat their class's
/// stationary distribution; transient rows mix the class distributions by
/// absorption probability.
pub fn cesaro_limit_matrix(p: &DMatrix<f64>) -> Result<DMatrix<f64>, SolveError> {
    let n = p.nrows();
    let classes = recurrent_classes(p);
    let mut star = DMatrix::zeros(n, n);

    let mut stationary = Vec::with_capacity(classes.recurrent.len());
    for class in &classes.recurrent {
        let nu = stationary_distribution(p, class)?;
        for &s in class {
            for (j, &sj) in class.iter().enumerate() {
                star[(s, sj)] = nu[j];
            }
        }
        stationary.push(nu);
    }

    let t_states = &classes.transient;
    if !t_states.is_empty() {
        let k = t_states.len();
        let mut i_minus_q = DMatrix::zeros(k, k);
        for (i, &si) in t_states.iter().enumerate() {
            for (j, &sj) in t_states.iter().enumerate() {
                i_minus_q[(i, j)] = -p[(si, sj)];
            }
            i_minus_q[(i, i)] += 1.0;
        }
        let lu = i_minus_q.lu();
        for (c, class) in classes.recurrent.iter().enumerate() {
            // b(i) = probability of stepping from transient state i
            // directly into class c.
            let b = DVector::from_fn(k, |i, _| {
                class.iter().map(|&sj| p[(t_states[i], sj)]).sum::<f64>()
            });
            let absorb = lu
                .solve(&b)
                .ok_or(SolveError::SingularSystem { residual: f64::NAN })?;
            for (i, &si) in t_states.iter().enumerate() {
                for (j, &sj) in class.iter().enumerate() {
                    star[(si, sj)] += absorb[i] * stationary[c][j];
                }
            }
        }
    }
    Ok(star)
}

/// Period of one recurrent class: the gcd of `level(u) + 1 − level(v)`
/// over all support edges inside the class, with levels from a BFS.
pub fn class_period(p: &DMatrix<f64>, class: &[usize]) -> u64 {
    if class.len() == 1 {
        // A closed singleton self-loops with probability one.
        return 1;
    }
    let in_class: std::collections::HashSet<usize> = class.iter().copied().collect();
    let mut level = std::collections::HashMap::new();
    let root = class[0];
    level.insert(root, 0i64);
    let mut queue = std::collections::VecDeque::from([root]);
    let mut g: i64 = 0;
    while let Some(u) = queue.pop_front() {
        let lu = level[&u];
        for &v in class {
            if p[(u, v)] <= 0.0 {
                continue;
            }
            debug_assert!(in_class.contains(&v));
            match level.get(&v) {
                None => {
                    level.insert(v, lu + 1);
                    queue.push_back(v);
                }
                Some(&lv) => {
                    g = gcd(g, (lu + 1 - lv).abs());
                }
            }
        }
    }
    if g == 0 {
        1
    } else {
        g as u64
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}
