//! LearnSPN-b structure learning: recursive splitting with G-test variable
//! grouping (product nodes), 2-way EM row clustering (sum nodes) and an
//! early-stopping instance count `m` below which the scope is factorized
//! into univariate smoothed leaves.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::logspace::logaddexp;
use crate::spn::{Spn, SpnNode};

#[derive(Debug, Clone)]
pub struct LearnSpnParams {
    /// Early stopping parameter m: row subsets smaller than this are
    /// factorized into univariate leaves.
    pub m_min_instances: usize,
    /// G-test threshold rho; pairs with G above it are treated as dependent.
    pub rho: f64,
    /// Laplace smoothing for leaf estimates (and cluster parameters).
    pub alpha: f64,
    pub cluster_max_iters: usize,
    pub cluster_restarts: usize,
    pub seed: u64,
}

impl Default for LearnSpnParams {
    fn default() -> Self {
        LearnSpnParams {
            m_min_instances: 500,
            rho: 20.0,
            alpha: 0.1,
            cluster_max_iters: 100,
            cluster_restarts: 3,
            seed: 0,
        }
    }
}

impl LearnSpnParams {
    pub fn validate(&self) -> Result<()> {
        if self.m_min_instances == 0 {
            return Err(Error::InvalidArgument("m_min_instances must be >= 1".into()));
        }
        if !matches!(self.rho.partial_cmp(&0.0), Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidArgument("rho must be > 0".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        if self.cluster_max_iters == 0 || self.cluster_restarts == 0 {
            return Err(Error::InvalidArgument(
                "cluster iterations and restarts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// G statistic for independence of binary variables i and j over the given
/// row subset: G = 2 * sum_ab c(a,b) ln(c(a,b) N / (c_i(a) c_j(b))), with
/// 0 ln(.) = 0. Nonnegative by construction of the maximum-likelihood ratio.
pub fn g_test(ds: &BinaryDataset, rows: &[usize], i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidArgument("g_test requires i != j".into()));
    }
    let n = ds.num_vars();
    if i >= n || j >= n {
        return Err(Error::ScopeOutOfRange {
            index: i.max(j),
            n_vars: n,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("g_test requires at least one row".into()));
    }
    let mut c = [[0.0f64; 2]; 2];
    for &r in rows {
        c[ds.value(r, i) as usize][ds.value(r, j) as usize] += 1.0;
    }
    let total = rows.len() as f64;
    let ci = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    let cj = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
    let mut g = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            if c[a][b] > 0.0 {
                g += c[a][b] * (c[a][b] * total / (ci[a] * cj[b])).ln();
            }
        }
    }
    Ok((2.0 * g).max(0.0))
}

/// Connected components of the dependency graph on `scope`, with an edge
/// (i, j) iff g_test(i, j) > rho. Components are sorted internally and
/// ordered by smallest member.
pub fn dependency_components(
    ds: &BinaryDataset,
    rows: &[usize],
    scope: &[usize],
    rho: f64,
) -> Result<Vec<Vec<usize>>> {
    if scope.len() < 2 {
        return Err(Error::InvalidArgument(
            "dependency_components requires |scope| >= 2".into(),
        ));
    }
    let k = scope.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for a in 0..k {
        for b in (a + 1)..k {
            if g_test(ds, rows, scope[a], scope[b])? > rho {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut root_to_comp: Vec<Option<usize>> = vec![None; k];
    for (a, &var) in scope.iter().enumerate().take(k) {
        let r = find(&mut parent, a);
        match root_to_comp[r] {
            Some(ci) => comps[ci].push(var),
            None => {
                root_to_comp[r] = Some(comps.len());
                comps.push(vec![var]);
            }
        }
    }
    for c in &mut comps {
        c.sort_unstable();
    }
    comps.sort_by_key(|c| c[0]);
    Ok(comps)
}

/// Hard 2-way row split from EM over a two-component product-of-Bernoulli
/// mixture, best of `cluster_restarts` by training log-likelihood.
/// Returns per-row assignments (apositional with `rows`) and the two
/// cluster proportions. An empty cluster is the degenerate-split signal.
pub fn cluster_rows(
    ds: &BinaryDataset,
    rows: &[usize],
    scope: &[usize],
    params: &LearnSpnParams,
    seed: u64,
) -> Result<(Vec<u8>, [f64; 2])> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("cluster_rows requires >= 2 rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
    for _ in 0..params.cluster_restarts {
        let (ll, resp) = em_bernoulli_2(ds, rows, scope, params, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, resp));
        }
    }
    let (_, resp) = best.unwrap();
    let mut assignments = vec![0u8; rows.len()];
    let mut sizes = [0usize; 2];
    for (idx, r) in resp.iter().enumerate() {
        let a = if r[1] > r[0] { 1u8 } else { 0u8 };
        assignments[idx] = a;
        sizes[a as usize] += 1;
    }
    if sizes[0] == 0 || sizes[1] == 0 {
        return Err(Error::DegenerateSplit);
    }
    let total = rows.len() as f64;
    Ok((
        assignments,
        [sizes[0] as f64 / total, sizes[1] as f64 / total],
    ))
}

/// One EM run; returns (train LL, per-row responsibilities).
fn em_bernoulli_2(
    ds: &BinaryDataset,
    rows: &[usize],
    scope: &[usize],
    params: &LearnSpnParams,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<[f64; 2]>) {
    let m = rows.len();
    let alpha = params.alpha.max(1e-6); // guard against log(0) in theta
    let mut resp: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            let r: f64 = rng.gen();
            [r, 1.0 - r]
        })
        .collect();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    for _ in 0..params.cluster_max_iters {
        // M-step
        let mass: [f64; 2] = resp.iter().fold([0.0; 2], |acc, r| {
            [acc[0] + r[0], acc[1] + r[1]]
        });
        let log_pi = [
            (mass[0] / m as f64).max(1e-12).ln(),
            (mass[1] / m as f64).max(1e-12).ln(),
        ];
        // theta[c][v] = P(X_scope[v] = 1 | c)
        let mut theta = vec![[0.0f64; 2]; scope.len()];
        for (idx, &r) in rows.iter().enumerate() {
            for (vi, &v) in scope.iter().enumerate() {
                if ds.value(r, v) == 1 {
                    theta[vi][0] += resp[idx][0];
                    theta[vi][1] += resp[idx][1];
                }
            }
        }
        let mut log_theta = vec![[[0.0f64; 2]; 2]; scope.len()]; // [v][c][state]
        for vi in 0..scope.len() {
            for c in 0..2 {
                let p1 = (theta[vi][c] + alpha) / (mass[c] + 2.0 * alpha);
                log_theta[vi][c] = [(1.0 - p1).ln(), p1.ln()];
            }
        }
        // E-step
        ll = 0.0;
        for (idx, &r) in rows.iter().enumerate() {
            let mut lj = [log_pi[0], log_pi[1]];
            for (vi, &v) in scope.iter().enumerate() {
                let s = ds.value(r, v) as usize;
                lj[0] += log_theta[vi][0][s];
                lj[1] += log_theta[vi][1][s];
            }
            let z = logaddexp(lj[0], lj[1]);
            ll += z;
            resp[idx] = [(lj[0] - z).exp(), (lj[1] - z).exp()];
        }
        if prev_ll.is_finite() && (ll - prev_ll).abs() < 1e-4 * prev_ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    (ll, resp)
}

// Stable in-process hash (FNV-1a) used to derive per-split RNG seeds, so a
// split node reached with the same rows and scope takes the same decisions
// regardless of what happens elsewhere in the recursion.
fn derive_seed(seed: u64, rows: &[usize], scope: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |x: u64| {
        for byte in x.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    mix(seed);
    mix(rows.len() as u64);
    for &r in rows {
        mix(r as u64);
    }
    mix(u64::MAX);
    for &v in scope {
        mix(v as u64);
    }
    h
}

/// Learn an SPN with LearnSPN-b.
pub fn learn_spn_b(ds: &BinaryDataset, params: &LearnSpnParams) -> Result<Spn> {
    learn_spn_b_logged(ds, params, &mut std::io::sink())
}

/// As [`learn_spn_b`], writing one line per split decision to `log`.
pub fn learn_spn_b_logged(
    ds: &BinaryDataset,
    params: &LearnSpnParams,
    log: &mut dyn Write,
) -> Result<Spn> {
    params.validate()?;
    if ds.num_samples() == 0 || ds.num_vars() == 0 {
        return Err(Error::EmptyDataset("learn_spn_b needs data".into()));
    }
    let rows: Vec<usize> = (0..ds.num_samples()).collect();
    let scope: Vec<usize> = (0..ds.num_vars()).collect();
    let mut nodes: Vec<SpnNode> = Vec::new();
    build(ds, params, &rows, &scope, &mut nodes, log)?;
    Spn::new(nodes)
}

fn smoothed_leaf(ds: &BinaryDataset, rows: &[usize], var: usize, alpha: f64) -> SpnNode {
    let c1: f64 = rows.iter().map(|&r| ds.value(r, var) as usize).sum::<usize>() as f64;
    let p1 = (c1 + alpha) / (rows.len() as f64 + 2.0 * alpha);
    SpnNode::leaf(var, p1)
}

fn push_factorization(
    ds: &BinaryDataset,
    params: &LearnSpnParams,
    rows: &[usize],
    scope: &[usize],
    nodes: &mut Vec<SpnNode>,
    log: &mut dyn Write,
) -> Result<usize> {
    writeln!(log, "FACTORIZE rows={} scope={}", rows.len(), scope.len())
        .map_err(|e| Error::io("<log>", e))?;
    let children: Vec<usize> = scope
        .iter()
        .map(|&v| {
            nodes.push(smoothed_leaf(ds, rows, v, params.alpha));
            nodes.len() - 1
        })
        .collect();
    nodes.push(SpnNode::Product { children });
    Ok(nodes.len() - 1)
}

fn build(
    ds: &BinaryDataset,
    params: &LearnSpnParams,
    rows: &[usize],
    scope: &[usize],
    nodes: &mut Vec<SpnNode>,
    log: &mut dyn Write,
) -> Result<usize> {
    if scope.len() == 1 {
        writeln!(log, "LEAF rows={} var={}", rows.len(), scope[0])
            .map_err(|e| Error::io("<log>", e))?;
        nodes.push(smoothed_leaf(ds, rows, scope[0], params.alpha));
        return Ok(nodes.len() - 1);
    }
    if rows.len() < params.m_min_instances {
        return push_factorization(ds, params, rows, scope, nodes, log);
    }
    let comps = dependency_components(ds, rows, scope, params.rho)?;
    if comps.len() > 1 {
        writeln!(
            log,
            "PRODUCT rows={} scope={} components={}",
            rows.len(),
            scope.len(),
            comps.len()
        )
        .map_err(|e| Error::io("<log>", e))?;
        let children: Vec<usize> = comps
            .iter()
            .map(|c| build(ds, params, rows, c, nodes, log))
            .collect::<Result<_>>()?;
        nodes.push(SpnNode::Product { children });
        return Ok(nodes.len() - 1);
    }
    let seed = derive_seed(params.seed, rows, scope);
    match cluster_rows(ds, rows, scope, params, seed) {
        Ok((assignments, weights)) => {
            writeln!(
                log,
                "SUM rows={} scope={} weights={:.4}/{:.4}",
                rows.len(),
                scope.len(),
                weights[0],
                weights[1]
            )
            .map_err(|e| Error::io("<log>", e))?;
            let mut parts: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (idx, &r) in rows.iter().enumerate() {
                parts[assignments[idx] as usize].push(r);
            }
            let children: Vec<usize> = parts
                .iter()
                .map(|part| build(ds, params, part, scope, nodes, log))
                .collect::<Result<_>>()?;
            nodes.push(SpnNode::Sum {
                children,
                log_weights: vec![weights[0].ln(), weights[1].ln()],
            });
            Ok(nodes.len() - 1)
        }
        Err(Error::DegenerateSplit) => push_factorization(ds, params, rows, scope, nodes, log),
        Err(e) => Err(e),
    }
}
