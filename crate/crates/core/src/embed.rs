//! Embedding generators: random rectangular marginal queries evaluated on a
//! density model, and random-patch models evaluated through a sliding
//! window. Both work against any model exposing marginal evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cltree::MixtureOfTrees;
use crate::data::{BinaryDataset, PartialEvidence};
use crate::error::{Error, Result};
use crate::spn::Spn;

/// Capability interface for black-box density models: exact marginal
/// evaluation over partial evidence. Empty evidence must yield 0 and
/// extending evidence can only lower the value.
pub trait MarginalEvaluator: Sync {
    fn num_vars(&self) -> usize;
    fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64>;
}

impl MarginalEvaluator for Spn {
    fn num_vars(&self) -> usize {
        Spn::num_vars(self)
    }
    fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64> {
        Spn::log_marginal(self, ev)
    }
}

impl MarginalEvaluator for MixtureOfTrees {
    fn num_vars(&self) -> usize {
        MixtureOfTrees::num_vars(self)
    }
    fn log_marginal(&self, ev: &PartialEvidence) -> Result<f64> {
        MixtureOfTrees::log_marginal(self, ev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RectGenParams {
    pub min_side: usize,
    pub max_side: usize,
    pub seed: u64,
}

/// An ordered list of variable-index scopes generated as random image
/// rectangles.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    scopes: Vec<Vec<usize>>,
    geometry: (usize, usize),
    gen_params: RectGenParams,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.scopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scopes.is_empty()
    }

    pub fn scopes(&self) -> &[Vec<usize>] {
        &self.scopes
    }

    pub fn geometry(&self) -> (usize, usize) {
        self.geometry
    }

    pub fn gen_params(&self) -> RectGenParams {
        self.gen_params
    }

    /// One line per query: space-separated variable indices.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for scope in &self.scopes {
            for (i, v) in scope.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, geometry: (usize, usize), gen_params: RectGenParams) -> Result<QuerySet> {
        let mut scopes = Vec::new();
        for (lineno0, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let scope: Vec<usize> = line
                .split_whitespace()
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "query file line {}: bad index '{}'",
                            lineno0 + 1,
                            s
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if scope.is_empty() || !scope.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "query file line {}: scope must be non-empty and strictly increasing",
                    lineno0 + 1
                )));
            }
            scopes.push(scope);
        }
        Ok(QuerySet {
            scopes,
            geometry,
            gen_params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Draw k random rectangles inside a (width, height) image: both sides
/// uniform in [min_side, max_side], top-left uniform over positions that
/// keep the rectangle inside the image. Each scope lists the covered pixels
/// in row-major order.
pub fn gen_rect_queries(
    geometry: (usize, usize),
    k: usize,
    min_side: usize,
    max_side: usize,
    seed: u64,
) -> Result<QuerySet> {
    let (w, h) = geometry;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("degenerate image geometry".into()));
    }
    if min_side < 1 || min_side > max_side {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= min_side <= max_side, got {min_side}..{max_side}"
        )));
    }
    if max_side > w.min(h) {
        return Err(Error::InvalidArgument(format!(
            "max_side {max_side} exceeds image dimension {}x{}",
            w, h
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scopes = Vec::with_capacity(k);
    for _ in 0..k {
        let rw = rng.gen_range(min_side..=max_side);
        let rh = rng.gen_range(min_side..=max_side);
        let x0 = rng.gen_range(0..=(w - rw));
        let y0 = rng.gen_range(0..=(h - rh));
        let mut scope = Vec::with_capacity(rw * rh);
        for dy in 0..rh {
            for dx in 0..rw {
                scope.push((y0 + dy) * w + (x0 + dx));
            }
        }
        scope.sort_unstable();
        scopes.push(scope);
    }
    Ok(QuerySet {
        scopes,
        geometry,
        gen_params: RectGenParams {
            min_side,
            max_side,
            seed,
        },
    })
}

/// Provenance of an embedding matrix: enough metadata to reproduce it.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub source_id: String,
    pub seed: u64,
}

/// m x k matrix of per-sample query evaluations.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    values: Vec<f64>, // row-major m * k
    m: usize,
    k: usize,
    scale: Scale,
    provenance: Provenance,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.k
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// One sample per row, comma separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.m {
            for j in 0..self.k {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{}", self.get(i, j)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>, scale: Scale, provenance: Provenance) -> Result<EmbeddingMatrix> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        let mut k = None;
        let mut m = 0;
        for (lineno0, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno0 + 1,
                        msg: format!("bad float '{s}'"),
                    })
                })
                .collect::<Result<_>>()?;
            match k {
                None => k = Some(row.len()),
                Some(expected) if expected != row.len() => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno0 + 1,
                        msg: "ragged embedding row".into(),
                    })
                }
                _ => {}
            }
            values.extend(row);
            m += 1;
        }
        Ok(EmbeddingMatrix {
            values,
            m,
            k: k.unwrap_or(0),
            scale,
            provenance,
        })
    }

    fn finish(values: Vec<f64>, m: usize, k: usize, scale: Scale, provenance: Provenance) -> EmbeddingMatrix {
        let values = match scale {
            Scale::Log => values,
            Scale::Linear => values.into_iter().map(f64::exp).collect(),
        };
        EmbeddingMatrix {
            values,
            m,
            k,
            scale,
            provenance,
        }
    }
}

fn bit_key(sample: &[u8], scope: &[usize]) -> Vec<u8> {
    scope.iter().map(|&v| sample[v]).collect()
}

/// Entry (i, j) = log p(sample i restricted to query scope j), exponentiated
/// when `scale` is linear. Repeated observed configurations of one scope are
/// memoized; parallel assembly is per-column, so worker count cannot change
/// the result.
pub fn rand_query_embedding(
    model: &dyn MarginalEvaluator,
    ds: &BinaryDataset,
    qs: &QuerySet,
    scale: Scale,
    provenance: Provenance,
) -> Result<EmbeddingMatrix> {
    let n = ds.num_vars();
    for scope in qs.scopes() {
        if let Some(&mx) = scope.last() {
            if mx >= n || mx >= model.num_vars() {
                return Err(Error::ScopeOutOfRange {
                    index: mx,
                    n_vars: n.min(model.num_vars()),
                });
            }
        }
    }
    let m = ds.num_samples();
    let k = qs.len();
    let columns: Vec<Vec<f64>> = qs
        .scopes()
        .par_iter()
        .map(|scope| -> Result<Vec<f64>> {
            let mut memo: HashMap<Vec<u8>, f64> = HashMap::new();
            let mut col = Vec::with_capacity(m);
            for i in 0..m {
                let key = bit_key(ds.row(i), scope);
                let value = match memo.get(&key) {
                    Some(&v) => v,
                    None => {
                        let ev = PartialEvidence::new(scope.clone(), key.clone())?;
                        let v = model.log_marginal(&ev)?;
                        memo.insert(key, v);
                        v
                    }
                };
                col.push(value);
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0f64; m * k];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * k + j] = v;
        }
    }
    Ok(EmbeddingMatrix::finish(values, m, k, scale, provenance))
}

/// Unmemoized evaluation path, used to check memoization transparency.
#[doc(hidden)]
pub fn rand_query_embedding_unmemoized(
    model: &dyn MarginalEvaluator,
    ds: &BinaryDataset,
    qs: &QuerySet,
    scale: Scale,
    provenance: Provenance,
) -> Result<EmbeddingMatrix> {
    let m = ds.num_samples();
    let k = qs.len();
    let mut values = vec![0.0f64; m * k];
    for i in 0..m {
        for (j, scope) in qs.scopes().iter().enumerate() {
            let ev = PartialEvidence::restrict(ds.row(i), scope)?;
            values[i * k + j] = model.log_marginal(&ev)?;
        }
    }
    Ok(EmbeddingMatrix::finish(values, m, k, scale, provenance))
}

/// Draw s random length-d contiguous patches from randomly chosen samples
/// of the flattened dataset. The result has no labels and no geometry.
pub fn extract_random_patches(
    ds: &BinaryDataset,
    s: usize,
    d: usize,
    seed: u64,
) -> Result<BinaryDataset> {
    let n = ds.num_vars();
    if d == 0 || d > n {
        return Err(Error::InvalidArgument(format!(
            "patch length {d} out of range for {n} variables"
        )));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("need at least one patch".into()));
    }
    if ds.num_samples() == 0 {
        return Err(Error::EmptyDataset("cannot sample patches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(s * d);
    for _ in 0..s {
        let i = rng.gen_range(0..ds.num_samples());
        let start = rng.gen_range(0..=(n - d));
        flat.extend_from_slice(&ds.row(i)[start..start + d]);
    }
    BinaryDataset::new(flat, s, d, None, format!("{}-patches", ds.name()))
}

/// Slide a length-d window over each flattened sample with the given
/// stride; feature h is the patch model's joint log-likelihood of the
/// window contents (full evidence on the d-variable model).
pub fn rand_patch_embedding(
    patch_model: &dyn MarginalEvaluator,
    ds: &BinaryDataset,
    d: usize,
    stride: usize,
    scale: Scale,
    provenance: Provenance,
) -> Result<EmbeddingMatrix> {
    let n = ds.num_vars();
    if patch_model.num_vars() != d {
        return Err(Error::DimensionMismatch(format!(
            "patch model covers {} variables, expected {d}",
            patch_model.num_vars()
        )));
    }
    if d == 0 || d > n {
        return Err(Error::DimensionMismatch(format!(
            "window length {d} out of range for {n} variables"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let windows = (n - d) / stride + 1;
    let m = ds.num_samples();
    let full_scope: Vec<usize> = (0..d).collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut memo: HashMap<Vec<u8>, f64> = HashMap::new();
            let sample = ds.row(i);
            let mut row = Vec::with_capacity(windows);
            for h in 0..windows {
                let start = h * stride;
                let window = sample[start..start + d].to_vec();
                let value = match memo.get(&window) {
                    Some(&v) => v,
                    None => {
                        let ev = PartialEvidence::new(full_scope.clone(), window.clone())?;
                        let v = patch_model.log_marginal(&ev)?;
                        memo.insert(window, v);
                        v
                    }
                };
                row.push(value);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(EmbeddingMatrix::finish(values, m, windows, scale, provenance))
}
