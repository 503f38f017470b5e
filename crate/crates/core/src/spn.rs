//! Sum-Product Networks over binary variables.
//!
//! An SPN is stored as a node list in topological order (children precede
//! parents, root last). Complete and decomposable SPNs answer any marginal
//! query in a single bottom-up pass: observed leaves emit their log
//! probability, unobserved leaves emit 0 (= log 1), product nodes add child
//! values and sum nodes apply logsumexp with their log weights.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{BinaryDataset, PartialEvidence};
use crate::error::{Error, Result};
use crate::logspace::logsumexp;

pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum SpnNode {
    Sum {
        children: Vec<usize>,
        log_weights: Vec<f64>,
    },
    Product {
        children: Vec<usize>,
    },
    Leaf {
        var: usize,
        /// (log P(X=0), log P(X=1))
        log_p: [f64; 2],
    },
}

impl SpnNode {
    /// Bernoulli leaf from P(X = 1).
    pub fn leaf(var: usize, p1: f64) -> SpnNode {
        SpnNode::Leaf {
            var,
            log_p: [(1.0 - p1).ln(), p1.ln()],
        }
    }

    fn children(&self) -> &[usize] {
        match self {
            SpnNode::Sum { children, .. } | SpnNode::Product { children } => children,
            SpnNode::Leaf { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyChildren,
    ChildOutOfOrder,
    WeightArityMismatch,
    UnnormalizedWeights,
    UnnormalizedLeaf,
    IncompleteSum,
    NonDecomposableProduct,
    RootScopeGap,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub node: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Spn {
    nodes: Vec<SpnNode>,
    scopes: Vec<Vec<usize>>,
    n_vars: usize,
    report: ValidationReport,
}

fn sorted_union(parts: &[&Vec<usize>]) -> Vec<usize> {
    let mut out: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl Spn {
    /// Assemble an SPN. Children must appear before their parents (node ids
    /// are list positions, root is the last node); violating that or an
    /// empty node list is a structure fault. Semantic properties
    /// (completeness, decomposability, normalization) are checked and
    /// recorded in the validation report instead, see [`Spn::validate`].
    pub fn new(nodes: Vec<SpnNode>) -> Result<Spn> {
        if nodes.is_empty() {
            return Err(Error::Structure("SPN has no nodes".into()));
        }
        for (id, node) in nodes.iter().enumerate() {
            for &c in node.children() {
                if c >= id {
                    return Err(Error::Structure(format!(
                        "node {} references child {} that does not precede it",
                        id, c
                    )));
                }
            }
        }
        let mut scopes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for node in &nodes {
            let scope = match node {
                SpnNode::Leaf { var, .. } => vec![*var],
                SpnNode::Sum { children, .. } | SpnNode::Product { children } => {
                    let parts: Vec<&Vec<usize>> = children.iter().map(|&c| &scopes[c]).collect();
                    sorted_union(&parts)
                }
            };
            scopes.push(scope);
        }
        let n_vars = scopes
            .last()
            .and_then(|s| s.last())
            .map_or(0, |&v| v + 1);
        let mut spn = Spn {
            nodes,
            scopes,
            n_vars,
            report: ValidationReport::default(),
        };
        spn.report = spn.compute_report();
        Ok(spn)
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn nodes(&self) -> &[SpnNode] {
        &self.nodes
    }

    pub fn scope_of(&self, id: usize) -> &[usize] {
        &self.scopes[id]
    }

    pub fn validate(&self) -> &ValidationReport {
        &self.report
    }

    pub fn is_valid(&self) -> bool {
        self.report.is_ok()
    }

    fn compute_report(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                SpnNode::Leaf { log_p, .. } => {
                    let z = logsumexp(log_p);
                    if z.abs() > NORMALIZATION_TOL {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::UnnormalizedLeaf,
                            detail: format!("leaf mass deviates from 1 by exp({z}) in log space"),
                        });
                    }
                }
                SpnNode::Sum {
                    children,
                    log_weights,
                } => {
                    if children.is_empty() {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::EmptyChildren,
                            detail: "sum node has no children".into(),
                        });
                        continue;
                    }
                    if children.len() != log_weights.len() {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::WeightArityMismatch,
                            detail: format!(
                                "{} children but {} weights",
                                children.len(),
                                log_weights.len()
                            ),
                        });
                        continue;
                    }
                    let z = logsumexp(log_weights);
                    if z.abs() > NORMALIZATION_TOL {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::UnnormalizedWeights,
                            detail: format!("weight log-mass {z} (expected 0)"),
                        });
                    }
                    let scope = &self.scopes[id];
                    for &c in children {
                        if &self.scopes[c] != scope {
                            violations.push(Violation {
                                node: id,
                                kind: ViolationKind::IncompleteSum,
                                detail: format!(
                                    "child {} scope differs from sum scope (completeness)",
                                    c
                                ),
                            });
                            break;
                        }
                    }
                }
                SpnNode::Product { children } => {
                    if children.is_empty() {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::EmptyChildren,
                            detail: "product node has no children".into(),
                        });
                        continue;
                    }
                    let total: usize = children.iter().map(|&c| self.scopes[c].len()).sum();
                    if total != self.scopes[id].len() {
                        violations.push(Violation {
                            node: id,
                            kind: ViolationKind::NonDecomposableProduct,
                            detail: "child scopes overlap (decomposability)".into(),
                        });
                    }
                }
            }
        }
        let root_scope = &self.scopes[self.root()];
        if root_scope.len() != self.n_vars {
            violations.push(Violation {
                node: self.root(),
                kind: ViolationKind::RootScopeGap,
                detail: format!(
                    "root scope covers {} of {} variables",
                    root_scope.len(),
                    self.n_vars
                ),
            });
        }
        ValidationReport { violations }
    }

    /// Exact log p(X_Q = q) in one bottom-up pass. Full-scope evidence
    /// yields the joint log-likelihood; empty evidence yields 0 for a
    /// normalized SPN. Impossible evidence returns -inf.
    pub fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64> {
        self.log_marginal_counted(ev).map(|(v, _)| v)
    }

    /// As [`Spn::log_marginal`] but also reports the number of node visits
    /// (always exactly one per node).
    pub fn log_marginal_counted(&self, ev: &PartialEvidence) -> Result<(f64, usize)> {
        if !self.is_valid() {
            return Err(Error::Structure(format!(
                "SPN fails validation with {} violation(s)",
                self.report.violations.len()
            )));
        }
        if let Some(mx) = ev.max_index() {
            if mx >= self.n_vars {
                return Err(Error::ScopeOutOfRange {
                    index: mx,
                    n_vars: self.n_vars,
                });
            }
        }
        let mut vals = vec![0.0f64; self.nodes.len()];
        let mut visits = 0usize;
        let mut weighted: Vec<f64> = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            visits += 1;
            vals[id] = match node {
                SpnNode::Leaf { var, log_p } => match ev.value_of(*var) {
                    Some(v) => log_p[v as usize],
                    None => 0.0,
                },
                SpnNode::Product { children } => children.iter().map(|&c| vals[c]).sum(),
                SpnNode::Sum {
                    children,
                    log_weights,
                } => {
                    weighted.clear();
                    weighted.extend(
                        children
                            .iter()
                            .zip(log_weights)
                            .map(|(&c, &w)| w + vals[c]),
                    );
                    logsumexp(&weighted)
                }
            };
        }
        Ok((vals[self.root()], visits))
    }

    /// Per-sample marginal over a fixed scope, element i over sample i.
    pub fn log_eval_batch(&self, ds: &BinaryDataset, scope: &[usize]) -> Result<Vec<f64>> {
        (0..ds.num_samples())
            .map(|i| {
                let ev = PartialEvidence::restrict(ds.row(i), scope)?;
                self.log_marginal(&ev)
            })
            .collect()
    }

    /// Serialize to the line-oriented text model format:
    /// `LEAF <id> <var> <p1>`, `PRD <id> <child...>`,
    /// `SUM <id> <child>:<weight>...`, root on the last line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                SpnNode::Leaf { var, log_p } => {
                    writeln!(out, "LEAF {} {} {}", id, var, log_p[1].exp()).unwrap();
                }
                SpnNode::Product { children } => {
                    write!(out, "PRD {}", id).unwrap();
                    for c in children {
                        write!(out, " {}", c).unwrap();
                    }
                    out.push('\n');
                }
                SpnNode::Sum {
                    children,
                    log_weights,
                } => {
                    write!(out, "SUM {}", id).unwrap();
                    for (c, w) in children.iter().zip(log_weights) {
                        write!(out, " {}:{}", c, w.exp()).unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Parse the text model format. The loader rejects structures that fail
    /// validation.
    pub fn from_text(text: &str) -> Result<Spn> {
        let mut nodes: Vec<SpnNode> = Vec::new();
        for (lineno0, line) in text.lines().enumerate() {
            let lineno = lineno0 + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap();
            let id: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Structure(format!("line {lineno}: missing node id")))?;
            if id != nodes.len() {
                return Err(Error::Structure(format!(
                    "line {lineno}: node id {id} out of sequence (expected {})",
                    nodes.len()
                )));
            }
            let node = match kind {
                "LEAF" => {
                    let var: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Structure(format!("line {lineno}: bad leaf var")))?;
                    let p1: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Structure(format!("line {lineno}: bad leaf p1")))?;
                    SpnNode::leaf(var, p1)
                }
                "PRD" => {
                    let children: Vec<usize> = parts
                        .map(|s| {
                            s.parse().map_err(|_| {
                                Error::Structure(format!("line {lineno}: bad child id '{s}'"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    SpnNode::Product { children }
                }
                "SUM" => {
                    let mut children = Vec::new();
                    let mut log_weights = Vec::new();
                    for tok in parts {
                        let (c, w) = tok.split_once(':').ok_or_else(|| {
                            Error::Structure(format!("line {lineno}: expected child:weight"))
                        })?;
                        children.push(c.parse().map_err(|_| {
                            Error::Structure(format!("line {lineno}: bad child id '{c}'"))
                        })?);
                        let w: f64 = w.parse().map_err(|_| {
                            Error::Structure(format!("line {lineno}: bad weight '{w}'"))
                        })?;
                        log_weights.push(w.ln());
                    }
                    SpnNode::Sum {
                        children,
                        log_weights,
                    }
                }
                other => {
                    return Err(Error::Structure(format!(
                        "line {lineno}: unknown node kind '{other}'"
                    )))
                }
            };
            nodes.push(node);
        }
        let spn = Spn::new(nodes)?;
        if !spn.is_valid() {
            return Err(Error::Structure(format!(
                "model file fails validation: {}",
                spn.report
                    .violations
                    .iter()
                    .map(|v| format!("node {}: {}", v.node, v.detail))
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
        Ok(spn)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Spn> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Spn::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PartialEvidence;

    fn ev(pairs: &[(usize, u8)]) -> PartialEvidence {
        let scope: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let values: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        PartialEvidence::new(scope, values).unwrap()
    }

    fn two_var_mixture() -> Spn {
        // Sum(0.3 * L(x0; .8) L(x1; .1), 0.7 * L(x0; .4) L(x1; .6))
        Spn::new(vec![
            SpnNode::leaf(0, 0.8),
            SpnNode::leaf(1, 0.1),
            SpnNode::leaf(0, 0.4),
            SpnNode::leaf(1, 0.6),
            SpnNode::Product {
                children: vec![0, 1],
            },
            SpnNode::Product {
                children: vec![2, 3],
            },
            SpnNode::Sum {
                children: vec![4, 5],
                log_weights: vec![0.3f64.ln(), 0.7f64.ln()],
            },
        ])
        .unwrap()
    }

    // Independent evaluator for tests: recursive linear-space marginal by
    // summing the joint over all completions of the unobserved variables.
    fn brute_marginal(spn: &Spn, ev: &PartialEvidence) -> f64 {
        let n = spn.num_vars();
        let free: Vec<usize> = (0..n).filter(|v| ev.value_of(*v).is_none()).collect();
        let mut total = 0.0f64;
        for mask in 0..(1usize << free.len()) {
            let mut x = vec![0u8; n];
            for (v, b) in ev.iter() {
                x[v] = b;
            }
            for (bit, &v) in free.iter().enumerate() {
                x[v] = ((mask >> bit) & 1) as u8;
            }
            // joint by direct recursive definition in linear space
            fn joint(spn: &Spn, id: usize, x: &[u8]) -> f64 {
                match &spn.nodes()[id] {
                    SpnNode::Leaf { var, log_p } => log_p[x[*var] as usize].exp(),
                    SpnNode::Product { children } => {
                        children.iter().map(|&c| joint(spn, c, x)).product()
                    }
                    SpnNode::Sum {
                        children,
                        log_weights,
                    } => children
                        .iter()
                        .zip(log_weights)
                        .map(|(&c, &w)| w.exp() * joint(spn, c, x))
                        .sum(),
                }
            }
            total += joint(spn, spn.root(), &x);
        }
        total.ln()
    }

    #[test]
    fn single_leaf_is_valid_and_reads_out() {
        let spn = Spn::new(vec![SpnNode::leaf(0, 0.5)]).unwrap();
        assert!(spn.is_valid());
        let lp = spn.log_marginal(&ev(&[(0, 1)])).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn detects_decomposability_violation() {
        let spn = Spn::new(vec![
            SpnNode::leaf(0, 0.5),
            SpnNode::leaf(0, 0.5),
            SpnNode::Product {
                children: vec![0, 1],
            },
        ])
        .unwrap();
        let report = spn.validate();
        assert!(!report.is_ok());
        assert!(report
            .violations
            .iter()
            .any(|v| v.node == 2 && v.kind == ViolationKind::NonDecomposableProduct));
        assert!(matches!(
            spn.log_marginal(&PartialEvidence::empty()),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn detects_completeness_violation() {
        let spn = Spn::new(vec![
            SpnNode::leaf(0, 0.5),
            SpnNode::leaf(1, 0.5),
            SpnNode::Sum {
                children: vec![0, 1],
                log_weights: vec![0.5f64.ln(), 0.5f64.ln()],
            },
        ])
        .unwrap();
        assert!(spn
            .validate()
            .violations
            .iter()
            .any(|v| v.node == 2 && v.kind == ViolationKind::IncompleteSum));
    }

    #[test]
    fn empty_evidence_is_zero() {
        let spn = two_var_mixture();
        let lp = spn.log_marginal(&PartialEvidence::empty()).unwrap();
        assert!(lp.abs() < 1e-12, "empty-evidence marginal drifted: {lp}");
    }

    #[test]
    fn marginal_matches_enumeration_of_completions() {
        let spn = two_var_mixture();
        // p(X0=1) = 0.3*0.8 + 0.7*0.4 = 0.52
        let got = spn.log_marginal(&ev(&[(0, 1)])).unwrap();
        assert!((got - 0.52f64.ln()).abs() < 1e-12);
        assert!((got - brute_marginal(&spn, &ev(&[(0, 1)]))).abs() < 1e-9);
        for pairs in [
            vec![(1usize, 0u8)],
            vec![(0, 0), (1, 1)],
            vec![(0, 1), (1, 1)],
        ] {
            let e = ev(&pairs);
            assert!((spn.log_marginal(&e).unwrap() - brute_marginal(&spn, &e)).abs() < 1e-9);
        }
    }

    #[test]
    fn full_scope_normalizes_to_one() {
        let spn = two_var_mixture();
        let mut total = 0.0;
        for a in 0..2u8 {
            for b in 0..2u8 {
                total += spn.log_marginal(&ev(&[(0, a), (1, b)])).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_under_evidence_extension() {
        let spn = two_var_mixture();
        let base = spn.log_marginal(&ev(&[(0, 1)])).unwrap();
        let ext = spn.log_marginal(&ev(&[(0, 1), (1, 0)])).unwrap();
        assert!(ext <= base + 1e-12);
    }

    #[test]
    fn impossible_evidence_is_neg_infinity() {
        let spn = Spn::new(vec![SpnNode::leaf(0, 1.0)]).unwrap();
        assert_eq!(
            spn.log_marginal(&ev(&[(0, 0)])).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn batch_matches_per_sample() {
        let spn = two_var_mixture();
        let ds = crate::data::BinaryDataset::from_rows(
            &[vec![1, 0], vec![0, 1], vec![1, 1]],
            None,
            "t",
        )
        .unwrap();
        let batch = spn.log_eval_batch(&ds, &[0, 1]).unwrap();
        assert_eq!(batch.len(), 3);
        for (i, &b) in batch.iter().enumerate() {
            let e = PartialEvidence::restrict(ds.row(i), &[0, 1]).unwrap();
            assert_eq!(b, spn.log_marginal(&e).unwrap());
        }
        let empty = crate::data::BinaryDataset::new(vec![], 0, 2, None, "e").unwrap();
        assert!(spn.log_eval_batch(&empty, &[0]).unwrap().is_empty());
    }

    #[test]
    fn one_visit_per_node() {
        let spn = two_var_mixture();
        let (_, visits) = spn.log_marginal_counted(&ev(&[(0, 1)])).unwrap();
        assert_eq!(visits, spn.num_nodes());
    }

    #[test]
    fn out_of_range_scope_is_an_error() {
        let spn = two_var_mixture();
        assert!(matches!(
            spn.log_marginal(&ev(&[(7, 1)])),
            Err(Error::ScopeOutOfRange { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let spn = two_var_mixture();
        let text = spn.to_text();
        let back = Spn::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let e = ev(&[(0, 1)]);
        assert!(
            (back.log_marginal(&e).unwrap() - spn.log_marginal(&e).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn loader_rejects_invalid_structures() {
        // sum over leaves with different scopes
        let text = "LEAF 0 0 0.5\nLEAF 1 1 0.5\nSUM 2 0:0.5 1:0.5\n";
        assert!(Spn::from_text(text).is_err());
    }
}
