//! Chow-Liu trees and EM-fitted mixtures of trees.
//!
//! A Chow-Liu tree is the maximum-weight spanning tree of the pairwise
//! mutual information matrix, rooted at variable 0, with conditional
//! probability tables estimated from the same weighted smoothed
//! frequencies. A mixture of trees is a convex combination of such trees
//! fitted by EM on per-row responsibilities.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BinaryDataset, PartialEvidence};
use crate::error::{Error, Result};
use crate::logspace::{logaddexp, logsumexp};

pub const NO_PARENT: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct ChowLiuTree {
    /// parent[v], with parent[root] == NO_PARENT; root is variable 0.
    parent: Vec<usize>,
    /// Topological order from the root.
    order: Vec<usize>,
    /// log_cpt[v][b][a] = log P(X_v = a | X_parent(v) = b); for the root
    /// both b rows hold the marginal.
    log_cpt: Vec<[[f64; 2]; 2]>,
}

impl ChowLiuTree {
    pub fn new(parent: Vec<usize>, log_cpt: Vec<[[f64; 2]; 2]>) -> Result<ChowLiuTree> {
        let n = parent.len();
        if n == 0 || log_cpt.len() != n {
            return Err(Error::Structure("tree arity mismatch".into()));
        }
        let roots = parent.iter().filter(|&&p| p == NO_PARENT).count();
        if roots != 1 {
            return Err(Error::Structure(format!("{roots} roots, expected 1")));
        }
        // children adjacency and BFS order; a cycle leaves nodes unreached
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut root = 0;
        for (v, &p) in parent.iter().enumerate() {
            if p == NO_PARENT {
                root = v;
            } else if p >= n {
                return Err(Error::Structure(format!("parent {p} out of range")));
            } else {
                children[p].push(v);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(Error::Structure(
                "parent array does not span all variables (cycle)".into(),
            ));
        }
        for (v, cpt) in log_cpt.iter().enumerate() {
            for (b, col) in cpt.iter().enumerate() {
                let z = logaddexp(col[0], col[1]);
                if z.abs() > 1e-9 {
                    return Err(Error::Structure(format!(
                        "CPT column ({v}|pa={b}) log-mass {z}, expected 0"
                    )));
                }
            }
        }
        Ok(ChowLiuTree {
            parent,
            order,
            log_cpt,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.parent.len()
    }

    pub fn parent_of(&self, v: usize) -> Option<usize> {
        let p = self.parent[v];
        (p != NO_PARENT).then_some(p)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != NO_PARENT)
            .map(|(v, &p)| if p < v { (p, v) } else { (v, p) })
    }

    /// Joint log-likelihood by the directed factorization.
    pub fn log_joint(&self, sample: &[u8]) -> Result<f64> {
        if sample.len() != self.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} variables, tree has {}",
                sample.len(),
                self.num_vars()
            )));
        }
        let mut ll = 0.0;
        for v in 0..self.num_vars() {
            let b = match self.parent[v] {
                NO_PARENT => 0,
                p => sample[p] as usize,
            };
            ll += self.log_cpt[v][b][sample[v] as usize];
        }
        Ok(ll)
    }

    /// Exact log p(X_Q = q) by one leaf-to-root elimination pass: each node
    /// sends its parent a message over the parent's two states, with
    /// observed nodes clamped to their value.
    pub fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64> {
        let n = self.num_vars();
        if let Some(mx) = ev.max_index() {
            if mx >= n {
                return Err(Error::ScopeOutOfRange {
                    index: mx,
                    n_vars: n,
                });
            }
        }
        // up[v][b]: log sum over v's allowed states of cpt[v][.|b] plus the
        // children's messages, for each parent state b.
        let mut up = vec![[0.0f64; 2]; n];
        let mut child_sum = vec![[0.0f64; 2]; n]; // accumulated child messages per own state
        for &v in self.order.iter().rev() {
            let allowed: &[usize] = match ev.value_of(v) {
                Some(0) => &[0],
                Some(_) => &[1],
                None => &[0, 1],
            };
            for (b, dest) in up[v].iter_mut().enumerate() {
                let mut terms = [f64::NEG_INFINITY; 2];
                for (slot, &a) in allowed.iter().enumerate() {
                    terms[slot] = self.log_cpt[v][b][a] + child_sum[v][a];
                }
                *dest = if allowed.len() == 2 {
                    logaddexp(terms[0], terms[1])
                } else {
                    terms[0]
                };
            }
            match self.parent[v] {
                NO_PARENT => {}
                p => {
                    // parent-state-dependent message folds into the parent's
                    // per-state accumulator
                    child_sum[p][0] += up[v][0];
                    child_sum[p][1] += up[v][1];
                }
            }
        }
        let root = self.order[0];
        Ok(up[root][0])
    }
}

/// Weighted, Laplace-smoothed pairwise mutual information matrix. Joint
/// cells get `alpha`, marginal cells `2 * alpha`, keeping marginals
/// consistent with the smoothed joints. Diagonal fixed at 0.
pub fn weighted_mutual_information(
    ds: &BinaryDataset,
    weights: &[f64],
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = ds.num_vars();
    let m = ds.num_samples();
    if weights.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} samples",
            weights.len(),
            m
        )));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !matches!(total.partial_cmp(&0.0), Some(std::cmp::Ordering::Greater)) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    // c1[v] = weighted count of X_v = 1; c11[i][j] likewise for the pair
    let mut c1 = vec![0.0f64; n];
    let mut c11 = vec![vec![0.0f64; n]; n];
    for (r, &w) in weights.iter().enumerate().take(m) {
        if w == 0.0 {
            continue;
        }
        let row = ds.row(r);
        for i in 0..n {
            if row[i] == 1 {
                c1[i] += w;
                for j in (i + 1)..n {
                    if row[j] == 1 {
                        c11[i][j] += w;
                    }
                }
            }
        }
    }
    let z = total + 4.0 * alpha;
    let mut mi = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let j11 = c11[i][j] + alpha;
            let j10 = c1[i] - c11[i][j] + alpha;
            let j01 = c1[j] - c11[i][j] + alpha;
            let j00 = total - c1[i] - c1[j] + c11[i][j] + alpha;
            let joint = [[j00 / z, j01 / z], [j10 / z, j11 / z]];
            let pi = [(total - c1[i] + 2.0 * alpha) / z, (c1[i] + 2.0 * alpha) / z];
            let pj = [(total - c1[j] + 2.0 * alpha) / z, (c1[j] + 2.0 * alpha) / z];
            let mut v = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    if joint[a][b] > 0.0 {
                        v += joint[a][b] * (joint[a][b] / (pi[a] * pj[b])).ln();
                    }
                }
            }
            let v = v.max(0.0);
            mi[i][j] = v;
            mi[j][i] = v;
        }
    }
    Ok(mi)
}

/// Maximum-weight spanning tree over the MI matrix (greedy edge insertion
/// sorted by (-MI, i, j), i.e. deterministic tie-breaking), rooted at
/// variable 0, with CPTs from the same weighted smoothed frequencies.
pub fn learn_chow_liu(ds: &BinaryDataset, weights: &[f64], alpha: f64) -> Result<ChowLiuTree> {
    let n = ds.num_vars();
    if n == 0 {
        return Err(Error::EmptyDataset("no variables".into()));
    }
    let mi = weighted_mutual_information(ds, weights, alpha)?;
    let total: f64 = weights.iter().sum();
    let z = total + 4.0 * alpha;

    // Kruskal with union-find; edges sorted by (-MI, i, j)
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j));
        }
    }
    edges.sort_by(|&(ai, aj), &(bi, bj)| {
        mi[bi][bj]
            .partial_cmp(&mi[ai][aj])
            .unwrap()
            .then(ai.cmp(&bi))
            .then(aj.cmp(&bj))
    });
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while uf[r] != r {
            r = uf[r];
        }
        let mut c = x;
        while uf[c] != r {
            let nx = uf[c];
            uf[c] = r;
            c = nx;
        }
        r
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut taken = 0;
    for (i, j) in edges {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            adj[i].push(j);
            adj[j].push(i);
            taken += 1;
            if taken == n - 1 {
                break;
            }
        }
    }

    // orient away from root 0
    let mut parent = vec![NO_PARENT; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &c in &adj[v] {
            if !seen[c] {
                seen[c] = true;
                parent[c] = v;
                queue.push_back(c);
            }
        }
    }

    // weighted pair counts for tree edges only
    let pair_counts = |i: usize, j: usize| -> [[f64; 2]; 2] {
        let mut c = [[0.0f64; 2]; 2];
        for r in 0..ds.num_samples() {
            c[ds.value(r, i) as usize][ds.value(r, j) as usize] += weights[r];
        }
        c
    };
    let mut c1 = vec![0.0f64; n];
    for (r, &wr) in weights.iter().enumerate() {
        for (v, cv) in c1.iter_mut().enumerate() {
            if ds.value(r, v) == 1 {
                *cv += wr;
            }
        }
    }
    let mut log_cpt = vec![[[0.0f64; 2]; 2]; n];
    for v in 0..n {
        match parent[v] {
            NO_PARENT => {
                let p1 = (c1[v] + 2.0 * alpha) / z;
                let row = [(1.0 - p1).ln(), p1.ln()];
                log_cpt[v] = [row, row];
            }
            p => {
                // c[a][b] with a = value of v, b = value of parent
                let c = pair_counts(v, p);
                for b in 0..2 {
                    let col_mass = c[0][b] + c[1][b] + 2.0 * alpha;
                    for a in 0..2 {
                        log_cpt[v][b][a] = ((c[a][b] + alpha) / col_mass).ln();
                    }
                }
            }
        }
    }
    ChowLiuTree::new(parent, log_cpt)
}

#[derive(Debug, Clone)]
pub struct MixtureOfTrees {
    components: Vec<ChowLiuTree>,
    log_lambda: Vec<f64>,
}

impl MixtureOfTrees {
    pub fn new(components: Vec<ChowLiuTree>, log_lambda: Vec<f64>) -> Result<MixtureOfTrees> {
        if components.is_empty() || components.len() != log_lambda.len() {
            return Err(Error::Structure(
                "mixture needs matching non-empty components and weights".into(),
            ));
        }
        let z = logsumexp(&log_lambda);
        if z.abs() > 1e-9 {
            return Err(Error::Structure(format!(
                "mixture weight log-mass {z}, expected 0"
            )));
        }
        let n = components[0].num_vars();
        if components.iter().any(|c| c.num_vars() != n) {
            return Err(Error::Structure("components disagree on variable count".into()));
        }
        Ok(MixtureOfTrees {
            components,
            log_lambda,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_vars(&self) -> usize {
        self.components[0].num_vars()
    }

    pub fn components(&self) -> &[ChowLiuTree] {
        &self.components
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64> {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_lambda)
            .map(|(t, &lw)| t.log_marginal(ev).map(|v| lw + v))
            .collect::<Result<_>>()?;
        Ok(logsumexp(&terms))
    }

    /// Average train log-likelihood per sample.
    pub fn mean_log_likelihood(&self, ds: &BinaryDataset) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..ds.num_samples() {
            let terms: Vec<f64> = self
                .components
                .iter()
                .zip(&self.log_lambda)
                .map(|(t, &lw)| t.log_joint(ds.row(i)).map(|v| lw + v))
                .collect::<Result<_>>()?;
            total += logsumexp(&terms);
        }
        Ok(total / ds.num_samples() as f64)
    }

    /// Text model format: `MT <C>`, then per component `LAMBDA <w>` followed
    /// by n lines `NODE <v> <parent|-1> <p1|pa=0> <p1|pa=1>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "MT {}", self.components.len()).unwrap();
        for (tree, &lw) in self.components.iter().zip(&self.log_lambda) {
            writeln!(out, "LAMBDA {}", lw.exp()).unwrap();
            for v in 0..tree.num_vars() {
                let p = match tree.parent[v] {
                    NO_PARENT => -1i64,
                    p => p as i64,
                };
                writeln!(
                    out,
                    "NODE {} {} {} {}",
                    v,
                    p,
                    tree.log_cpt[v][0][1].exp(),
                    tree.log_cpt[v][1][1].exp()
                )
                .unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MixtureOfTrees> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |lineno: usize, msg: &str| Error::Structure(format!("line {}: {msg}", lineno + 1));
        let (ln0, header) = lines
            .next()
            .ok_or_else(|| Error::Structure("empty model file".into()))?;
        let c: usize = header
            .trim()
            .strip_prefix("MT ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(ln0, "expected 'MT <components>' header"))?;
        let mut components = Vec::with_capacity(c);
        let mut log_lambda = Vec::with_capacity(c);
        let mut pending: Vec<(usize, String)> = lines.map(|(i, l)| (i, l.to_string())).collect();
        pending.reverse(); // pop from the front cheaply
        for _ in 0..c {
            let (ln, lambda_line) = pending
                .pop()
                .ok_or_else(|| Error::Structure("truncated model file".into()))?;
            let w: f64 = lambda_line
                .trim()
                .strip_prefix("LAMBDA ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(ln, "expected 'LAMBDA <weight>'"))?;
            log_lambda.push(w.ln());
            let mut parent = Vec::new();
            let mut log_cpt: Vec<[[f64; 2]; 2]> = Vec::new();
            while let Some((ln, line)) = pending.last().cloned() {
                if !line.trim().starts_with("NODE ") {
                    break;
                }
                pending.pop();
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 5 {
                    return Err(bad(ln, "expected 'NODE <v> <parent> <p1|0> <p1|1>'"));
                }
                let v: usize = fields[1].parse().map_err(|_| bad(ln, "bad node id"))?;
                if v != parent.len() {
                    return Err(bad(ln, "node ids must be sequential from 0"));
                }
                let p: i64 = fields[2].parse().map_err(|_| bad(ln, "bad parent"))?;
                parent.push(if p < 0 { NO_PARENT } else { p as usize });
                let p1_0: f64 = fields[3].parse().map_err(|_| bad(ln, "bad probability"))?;
                let p1_1: f64 = fields[4].parse().map_err(|_| bad(ln, "bad probability"))?;
                log_cpt.push([
                    [(1.0 - p1_0).ln(), p1_0.ln()],
                    [(1.0 - p1_1).ln(), p1_1.ln()],
                ]);
            }
            components.push(ChowLiuTree::new(parent, log_cpt)?);
        }
        MixtureOfTrees::new(components, log_lambda)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MixtureOfTrees> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MixtureOfTrees::from_text(&text)
    }
}

/// EM fit of a C-component mixture of Chow-Liu trees. Returns the model and
/// the per-iteration train log-likelihoods (total nats, non-decreasing
/// within numerical tolerance).
pub fn fit_mixture_em(
    ds: &BinaryDataset,
    n_components: usize,
    max_iters: usize,
    tol: f64,
    alpha: f64,
    seed: u64,
) -> Result<(MixtureOfTrees, Vec<f64>)> {
    let m = ds.num_samples();
    if n_components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if m < n_components {
        return Err(Error::InvalidArgument(format!(
            "{n_components} components but only {m} samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // seeded random soft assignment, rows normalized
    let mut resp: Vec<f64> = vec![0.0; m * n_components];
    for i in 0..m {
        let mut z = 0.0;
        for c in 0..n_components {
            let r: f64 = rng.gen_range(0.05..1.0);
            resp[i * n_components + c] = r;
            z += r;
        }
        for c in 0..n_components {
            resp[i * n_components + c] /= z;
        }
    }

    let mut lls: Vec<f64> = Vec::new();
    let mut model: Option<MixtureOfTrees> = None;
    for _iter in 0..max_iters {
        // M-step
        let mut mass = vec![0.0f64; n_components];
        for i in 0..m {
            for c in 0..n_components {
                mass[c] += resp[i * n_components + c];
            }
        }
        for c in 0..n_components {
            if mass[c] < 1e-12 {
                // re-seed the dead component from a random data row's soft
                // neighborhood
                let pivot = rng.gen_range(0..m);
                let pivot_row = ds.row(pivot).to_vec();
                eprintln!(
                    "fit_mixture_em: component {c} collapsed; re-seeding from row {pivot}"
                );
                for i in 0..m {
                    let dist = ds
                        .row(i)
                        .iter()
                        .zip(&pivot_row)
                        .filter(|(a, b)| a != b)
                        .count();
                    resp[i * n_components + c] = 0.5 * 0.5f64.powi(dist as i32);
                    let z: f64 = (0..n_components).map(|k| resp[i * n_components + k]).sum();
                    for k in 0..n_components {
                        resp[i * n_components + k] /= z;
                    }
                }
                mass = vec![0.0; n_components];
                for i in 0..m {
                    for k in 0..n_components {
                        mass[k] += resp[i * n_components + k];
                    }
                }
                break;
            }
        }
        let log_lambda: Vec<f64> = mass.iter().map(|&w| (w / m as f64).ln()).collect();
        let weights_of = |c: usize| -> Vec<f64> {
            (0..m).map(|i| resp[i * n_components + c]).collect()
        };
        let components: Vec<ChowLiuTree> = (0..n_components)
            .map(|c| learn_chow_liu(ds, &weights_of(c), alpha))
            .collect::<Result<_>>()?;
        let mt = MixtureOfTrees::new(components, log_lambda)?;

        // E-step + train LL under the new parameters
        let mut ll = 0.0;
        for i in 0..m {
            let mut lj = Vec::with_capacity(n_components);
            for c in 0..n_components {
                lj.push(mt.log_lambda[c] + mt.components[c].log_joint(ds.row(i))?);
            }
            let z = logsumexp(&lj);
            ll += z;
            for c in 0..n_components {
                resp[i * n_components + c] = (lj[c] - z).exp();
            }
        }
        let converged = lls
            .last()
            .is_some_and(|&prev| (ll - prev).abs() < tol * prev.abs().max(1.0));
        lls.push(ll);
        model = Some(mt);
        if converged {
            break;
        }
    }
    Ok((model.unwrap(), lls))
}
