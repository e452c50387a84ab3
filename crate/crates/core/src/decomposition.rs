//! Canonical upper block form of the limit matrix.

use std::collections::BTreeSet;

use crate::chain_model::{Family, Matrix, Schedule};
use crate::error::{Error, Result};
use crate::numerics::ExtReal;
use crate::routing_costs::fit_log_rate;

/// Entries at or below this are treated as absent edges.
pub const EDGE_EPS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockClass {
    DegenerateTransient,
    NondegenerateTransient,
    Stochastic,
}

impl BlockClass {
    pub fn name(self) -> &'static str {
        match self {
            BlockClass::DegenerateTransient => "degenerate-transient",
            BlockClass::NondegenerateTransient => "nondegenerate-transient",
            BlockClass::Stochastic => "stochastic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Sorted state indices.
    pub states: Vec<usize>,
    pub class: BlockClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalDecomposition {
    pub blocks: Vec<Block>,
    /// Block indices of degenerate transient classes.
    pub d_set: Vec<usize>,
    /// Block indices of nondegenerate transient classes.
    pub n_set: Vec<usize>,
    /// Block indices of stochastic classes.
    pub m_set: Vec<usize>,
    /// `n_set ∪ m_set`, increasing.
    pub g_set: Vec<usize>,
    pub state_order: Vec<usize>,
    pub p_min: f64,
    /// `block_of[x]` is the block containing state `x`.
    pub block_of: Vec<usize>,
}

impl CanonicalDecomposition {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `N = |D|`.
    pub fn n_count(&self) -> usize {
        self.d_set.len()
    }

    /// `M = |G|`.
    pub fn m_count(&self) -> usize {
        self.g_set.len()
    }
}

fn has_edge(p: &Matrix, x: usize, y: usize) -> bool {
    p.get(x, y) > EDGE_EPS
}

/// Tarjan's algorithm, iterative. Components come out in reverse
/// topological order of the condensation.
fn tarjan(p: &Matrix) -> Vec<Vec<usize>> {
    let r = p.size();
    let mut index = vec![usize::MAX; r];
    let mut low = vec![0; r];
    let mut on_stack = vec![false; r];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;
    for root in 0..r {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut child)) = work.last_mut() {
            if *child < r {
                let w = *child;
                *child += 1;
                if !has_edge(p, v, w) {
                    continue;
                }
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(u, _)) = work.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Communicating classes of `P`, classified and ordered so that `P` is
/// block upper-triangular: transient classes in topological order (ties by
/// smallest state index), then stochastic classes by smallest state index.
pub fn decompose(p: &Matrix) -> Result<CanonicalDecomposition> {
    p.check_stochastic()?;
    let r = p.size();
    let comps = tarjan(p);
    let mut comp_of = vec![0; r];
    for (c, states) in comps.iter().enumerate() {
        for &x in states {
            comp_of[x] = c;
        }
    }
    let k = comps.len();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for x in 0..r {
        for y in 0..r {
            if has_edge(p, x, y) && comp_of[x] != comp_of[y] {
                succ[comp_of[x]].insert(comp_of[y]);
            }
        }
    }
    let class: Vec<BlockClass> = (0..k)
        .map(|c| {
            let s = &comps[c];
            if succ[c].is_empty() {
                BlockClass::Stochastic
            } else if s.len() == 1 && !has_edge(p, s[0], s[0]) {
                BlockClass::DegenerateTransient
            } else {
                BlockClass::NondegenerateTransient
            }
        })
        .collect();

    // Kahn's algorithm over transient classes, min-state-index priority.
    let mut indeg = vec![0usize; k];
    for c in 0..k {
        if class[c] != BlockClass::Stochastic {
            for &d in &succ[c] {
                if class[d] != BlockClass::Stochastic {
                    indeg[d] += 1;
                }
            }
        }
    }
    let mut ready: BTreeSet<(usize, usize)> = (0..k)
        .filter(|&c| class[c] != BlockClass::Stochastic && indeg[c] == 0)
        .map(|c| (comps[c][0], c))
        .collect();
    let mut order = Vec::with_capacity(k);
    while let Some(&(key, c)) = ready.iter().next() {
        ready.remove(&(key, c));
        order.push(c);
        for &d in &succ[c] {
            if class[d] != BlockClass::Stochastic {
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.insert((comps[d][0], d));
                }
            }
        }
    }
    let mut closed: Vec<usize> = (0..k).filter(|&c| class[c] == BlockClass::Stochastic).collect();
    closed.sort_by_key(|&c| comps[c][0]);
    order.extend(closed);

    let blocks: Vec<Block> = order.iter().map(|&c| Block { states: comps[c].clone(), class: class[c] }).collect();
    let pick = |cl: BlockClass| -> Vec<usize> { (0..blocks.len()).filter(|&i| blocks[i].class == cl).collect() };
    let d_set = pick(BlockClass::DegenerateTransient);
    let n_set = pick(BlockClass::NondegenerateTransient);
    let m_set = pick(BlockClass::Stochastic);
    let g_set: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i].class != BlockClass::DegenerateTransient).collect();
    let mut block_of = vec![0; r];
    for (i, b) in blocks.iter().enumerate() {
        for &x in &b.states {
            block_of[x] = i;
        }
    }
    let mut p_min = f64::INFINITY;
    for &i in &g_set {
        for &x in &blocks[i].states {
            for &y in &blocks[i].states {
                if has_edge(p, x, y) {
                    p_min = p_min.min(p.get(x, y));
                }
            }
        }
    }
    Ok(CanonicalDecomposition {
        state_order: blocks.iter().flat_map(|b| b.states.iter().copied()).collect(),
        blocks,
        d_set,
        n_set,
        m_set,
        g_set,
        p_min,
        block_of,
    })
}

/// BFS levels from `block[0]` inside the block; `None` if the block is not
/// strongly connected.
fn levels(p: &Matrix, block: &[usize]) -> Option<Vec<usize>> {
    let k = block.len();
    if k == 0 {
        return None;
    }
    let reach = |forward: bool| {
        let mut level = vec![usize::MAX; k];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for b in 0..k {
                let e = if forward { has_edge(p, block[a], block[b]) } else { has_edge(p, block[b], block[a]) };
                if e && level[b] == usize::MAX {
                    level[b] = level[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        level
    };
    let fwd = reach(true);
    if fwd.contains(&usize::MAX) || reach(false).contains(&usize::MAX) {
        return None;
    }
    // a 1×1 block without self-loop is not irreducible in the matrix sense
    if k == 1 && !has_edge(p, block[0], block[0]) {
        return None;
    }
    Some(fwd)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible block: gcd over edges `(a,b)` of
/// `level(a) + 1 − level(b)`.
pub fn period(p: &Matrix, block: &[usize]) -> Result<usize> {
    let level = levels(p, block).ok_or_else(|| Error::NotIrreducible { states: block.to_vec() })?;
    let mut g = 0;
    for a in 0..block.len() {
        for b in 0..block.len() {
            if has_edge(p, block[a], block[b]) {
                g = gcd(g, (level[a] + 1).abs_diff(level[b]));
            }
        }
    }
    Ok(g.max(1))
}

/// Irreducible and aperiodic.
pub fn is_primitive(p: &Matrix, block: &[usize]) -> bool {
    matches!(period(p, block), Ok(1))
}

/// Boolean-power test: a nonnegative `m×m` matrix is primitive iff its
/// `((m−1)² + 1)`-th power is positive.
pub fn is_primitive_by_power(p: &Matrix, block: &[usize]) -> bool {
    let m = block.len();
    let a: Vec<Vec<bool>> =
        block.iter().map(|&x| block.iter().map(|&y| has_edge(p, x, y)).collect()).collect();
    let mul = |x: &Vec<Vec<bool>>, y: &Vec<Vec<bool>>| -> Vec<Vec<bool>> {
        (0..m).map(|i| (0..m).map(|j| (0..m).any(|k| x[i][k] && y[k][j])).collect()).collect()
    };
    let mut e = (m - 1) * (m - 1) + 1;
    let mut result: Option<Vec<Vec<bool>>> = None;
    let mut base = a;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => mul(&r, &base),
            });
        }
        e >>= 1;
        if e > 0 {
            base = mul(&base, &base);
        }
    }
    result.is_some_and(|r| r.iter().flatten().all(|&b| b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarMatrix {
    pub block: usize,
    /// Local matrix on the block's states (in block order).
    pub matrix: Matrix,
    pub primitive: bool,
}

/// Default window for estimated quantities.
pub const DEFAULT_WINDOW: u64 = 10_000;

/// `P*(i)` for every `i ∈ G`: limit entries where positive, otherwise 1
/// if `(1/n) log pₙ(s,t)` has rate 0, otherwise 0.
pub fn star_matrices(s: &Schedule, dec: &CanonicalDecomposition, window: u64) -> Result<Vec<StarMatrix>> {
    let p = s.limit();
    // Entries vanishing in the limit, per G-block.
    let mut pending: Vec<(usize, usize, usize)> = Vec::new();
    for &i in &dec.g_set {
        for &x in &dec.blocks[i].states {
            for &y in &dec.blocks[i].states {
                if !has_edge(p, x, y) {
                    pending.push((i, x, y));
                }
            }
        }
    }
    let rate_zero: Vec<bool> = match &s.family {
        Family::Constant => vec![false; pending.len()],
        Family::Metropolis(m) => pending
            .iter()
            .map(|&(_, x, y)| {
                if x == y || m.g.get(x, y) <= 0.0 {
                    // a diagonal that vanishes in the limit has no uphill
                    // proposals, so it is zero for every n
                    false
                } else {
                    let lr = m.beta.linear_rate();
                    let gap = (m.h[y] - m.h[x]).max(0.0);
                    crate::numerics::ext_mul(lr, ExtReal::Finite(gap)) == ExtReal::ZERO
                }
            })
            .collect(),
        _ => {
            let w = window.max(10);
            let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(w as usize); pending.len()];
            for n in 1..=w {
                let lm = s.log_matrix(n)?;
                for (k, &(_, x, y)) in pending.iter().enumerate() {
                    series[k].push(lm.get(x, y));
                }
            }
            series.iter().map(|ser| fit_log_rate(ser).slope > -10.0 / w as f64).collect()
        }
    };
    let mut out = Vec::new();
    for &i in &dec.g_set {
        let states = &dec.blocks[i].states;
        let mut m = p.submatrix(states);
        for (k, &(bi, x, y)) in pending.iter().enumerate() {
            if bi == i && rate_zero[k] {
                let a = states.binary_search(&x).expect("state in block");
                let b = states.binary_search(&y).expect("state in block");
                m.set(a, b, 1.0);
            }
        }
        let local: Vec<usize> = (0..states.len()).collect();
        let primitive = is_primitive(&m, &local);
        out.push(StarMatrix { block: i, matrix: m, primitive });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sie1Report {
    pub holds: bool,
    /// G-blocks with `π(C_i) = 0`.
    pub starved_blocks: Vec<usize>,
    /// Within-block limit edges `(x, y, n)` with `pₙ(x,y) = 0` for some sampled `n`.
    pub missing_edges: Vec<(usize, usize, u64)>,
}

/// Condition SIE-1 with `n₀ = 1`: `π(C_i) > 0` for each `i ∈ G` and every
/// positive within-block limit entry is positive in `Pₙ` for `n = 1..=window`.
pub fn check_sie1(s: &Schedule, pi: &[f64], dec: &CanonicalDecomposition, window: u64) -> Result<Sie1Report> {
    let p = s.limit();
    let starved_blocks: Vec<usize> =
        dec.g_set.iter().copied().filter(|&i| dec.blocks[i].states.iter().map(|&x| pi[x]).sum::<f64>() <= 0.0).collect();
    let mut edges = Vec::new();
    for &i in &dec.g_set {
        for &x in &dec.blocks[i].states {
            for &y in &dec.blocks[i].states {
                if has_edge(p, x, y) {
                    edges.push((x, y));
                }
            }
        }
    }
    let mut missing_edges = Vec::new();
    for n in 1..=window.max(1) {
        let lm = s.log_matrix(n)?;
        for &(x, y) in &edges {
            if lm.get(x, y) == f64::NEG_INFINITY && !missing_edges.iter().any(|&(a, b, _)| (a, b) == (x, y)) {
                missing_edges.push((x, y, n));
            }
        }
    }
    Ok(Sie1Report { holds: starved_blocks.is_empty() && missing_edges.is_empty(), starved_blocks, missing_edges })
}
