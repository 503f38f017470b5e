//! Brute-force reference oracles used by the test suites. These are
//! deliberately independent of the evaluation paths they check: marginals
//! are computed by enumerating all completions of the evidence, spanning
//! trees by exhaustive Prüfer-sequence decoding.

use crate::cltree::{ChowLiuTree, MixtureOfTrees};
use crate::data::PartialEvidence;
use crate::spn::{Spn, SpnNode};

/// Joint probability of a full assignment by the recursive SPN definition
/// in linear space.
pub fn spn_brute_joint(spn: &Spn, x: &[u8]) -> f64 {
    fn rec(spn: &Spn, id: usize, x: &[u8]) -> f64 {
        match &spn.nodes()[id] {
            SpnNode::Leaf { var, log_p } => log_p[x[*var] as usize].exp(),
            SpnNode::Product { children } => children.iter().map(|&c| rec(spn, c, x)).product(),
            SpnNode::Sum {
                children,
                log_weights,
            } => children
                .iter()
                .zip(log_weights)
                .map(|(&c, &w)| w.exp() * rec(spn, c, x))
                .sum(),
        }
    }
    rec(spn, spn.root(), x)
}

fn completions(n: usize, ev: &PartialEvidence) -> Vec<Vec<u8>> {
    let free: Vec<usize> = (0..n).filter(|v| ev.value_of(*v).is_none()).collect();
    let mut out = Vec::with_capacity(1 << free.len());
    for mask in 0..(1usize << free.len()) {
        let mut x = vec![0u8; n];
        for (v, b) in ev.iter() {
            x[v] = b;
        }
        for (bit, &v) in free.iter().enumerate() {
            x[v] = ((mask >> bit) & 1) as u8;
        }
        out.push(x);
    }
    out
}

/// Log marginal of an SPN by summing the brute-force joint over all
/// completions of the evidence.
pub fn spn_brute_marginal(spn: &Spn, ev: &PartialEvidence) -> f64 {
    completions(spn.num_vars(), ev)
        .iter()
        .map(|x| spn_brute_joint(spn, x))
        .sum::<f64>()
        .ln()
}

/// Log marginal of a Chow-Liu tree by enumerating completions of the
/// directed factorization.
pub fn tree_brute_marginal(tree: &ChowLiuTree, ev: &PartialEvidence) -> f64 {
    completions(tree.num_vars(), ev)
        .iter()
        .map(|x| tree.log_joint(x).unwrap().exp())
        .sum::<f64>()
        .ln()
}

/// Log marginal of a mixture of trees by component-wise enumeration.
pub fn mt_brute_marginal(mt: &MixtureOfTrees, ev: &PartialEvidence) -> f64 {
    mt.components()
        .iter()
        .zip(mt.log_lambda())
        .map(|(t, &lw)| lw.exp() * tree_brute_marginal(t, ev).exp())
        .sum::<f64>()
        .ln()
}

/// Edge set of the spanning tree encoded by a Prüfer sequence over n nodes.
fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut used = vec![false; n];
    for &s in seq {
        for leaf in 0..n {
            if degree[leaf] == 1 && !used[leaf] {
                edges.push((leaf.min(s), leaf.max(s)));
                used[leaf] = true;
                degree[s] -= 1;
                if degree[s] == 1 {
                    // s may become a leaf for later rounds
                }
                break;
            }
        }
    }
    let rest: Vec<usize> = (0..n).filter(|&v| !used[v] && degree[v] == 1).collect();
    debug_assert_eq!(rest.len(), 2);
    edges.push((rest[0].min(rest[1]), rest[0].max(rest[1])));
    edges
}

/// Enumerate every spanning tree of the complete graph on n = mi.len()
/// vertices (n^(n-2) trees via Prüfer sequences) and return the maximum
/// total MI over tree edges.
pub fn max_spanning_tree_score(mi: &[Vec<f64>]) -> f64 {
    let n = mi.len();
    assert!((2..=8).contains(&n), "exhaustive enumeration only for small n");
    if n == 2 {
        return mi[0][1];
    }
    let seq_len = n - 2;
    let mut best = f64::NEG_INFINITY;
    let count = n.pow(seq_len as u32);
    for code in 0..count {
        let mut seq = vec![0usize; seq_len];
        let mut c = code;
        for s in seq.iter_mut() {
            *s = c % n;
            c /= n;
        }
        let score: f64 = prufer_decode(&seq, n)
            .iter()
            .map(|&(i, j)| mi[i][j])
            .sum();
        if score > best {
            best = score;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prufer_enumerates_all_trees_at_n4() {
        // 4^2 = 16 labeled trees on 4 vertices
        let mut seen = std::collections::HashSet::new();
        for code in 0..16usize {
            let seq = vec![code % 4, code / 4];
            let mut edges = prufer_decode(&seq, 4);
            edges.sort();
            assert_eq!(edges.len(), 3);
            seen.insert(edges);
        }
        assert_eq!(seen.len(), 16);
    }
}
