//! Downstream scoring of embeddings: one-vs-rest L2-regularized logistic
//! regression with validation-accuracy model selection and incremental
//! feature-count accuracy curves.
//!
//! The per-class objective is 0.5 ||w||^2 + C sum_i log(1 + exp(-t_i (w x + b)))
//! with C on the loss term (larger C = weaker regularization) and the bias
//! excluded from the penalty. Features are standardized to zero mean / unit
//! variance using training-split statistics; -inf log features are clamped
//! to (per-column min finite value - 10) first.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Borrowed view over the first `cols` columns of a row-major matrix whose
/// physical row width is `width`.
#[derive(Clone, Copy)]
pub struct FeatureView<'a> {
    data: &'a [f64],
    rows: usize,
    width: usize,
    cols: usize,
}

impl<'a> FeatureView<'a> {
    pub fn new(data: &'a [f64], rows: usize, width: usize) -> FeatureView<'a> {
        assert_eq!(data.len(), rows * width);
        FeatureView {
            data,
            rows,
            width,
            cols: width,
        }
    }

    /// Restrict to the first `cols` columns (query generation order).
    pub fn prefix(mut self, cols: usize) -> FeatureView<'a> {
        assert!(cols <= self.width);
        self.cols = cols;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
}

/// Per-feature clamping and affine standardization learned on the training
/// split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub clamp: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: FeatureView<'_>) -> Standardizer {
        let (m, k) = (x.rows(), x.cols());
        let mut clamp = vec![0.0f64; k];
        for (j, cj) in clamp.iter_mut().enumerate() {
            let mut min_finite = f64::INFINITY;
            for i in 0..m {
                let v = x.get(i, j);
                if v.is_finite() && v < min_finite {
                    min_finite = v;
                }
            }
            *cj = if min_finite.is_finite() {
                min_finite - 10.0
            } else {
                // a column that is entirely -inf carries no information;
                // any finite constant works
                0.0
            };
        }
        let clamped = |i: usize, j: usize| x.get(i, j).max(clamp[j]);
        let mut mean = vec![0.0f64; k];
        for (j, mj) in mean.iter_mut().enumerate() {
            for i in 0..m {
                *mj += clamped(i, j);
            }
            *mj /= m as f64;
        }
        let mut std = vec![0.0f64; k];
        for j in 0..k {
            for i in 0..m {
                let d = clamped(i, j) - mean[j];
                std[j] += d * d;
            }
            std[j] = (std[j] / m as f64).sqrt();
            if std[j] <= 0.0 {
                std[j] = 1.0; // constant feature
            }
        }
        Standardizer { clamp, mean, std }
    }

    pub fn apply(&self, x: FeatureView<'_>) -> Vec<f64> {
        let (m, k) = (x.rows(), x.cols());
        assert_eq!(k, self.mean.len());
        let mut out = vec![0.0f64; m * k];
        for i in 0..m {
            for j in 0..k {
                let v = x.get(i, j).max(self.clamp[j]);
                out[i * k + j] = (v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptSettings {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for OptSettings {
    fn default() -> Self {
        OptSettings {
            max_iters: 1000,
            grad_tol: 1e-5,
        }
    }
}

/// One-vs-rest logistic model: per-class weights and bias over standardized
/// features.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<Vec<f64>>, // [class][feature]
    pub biases: Vec<f64>,
    pub num_classes: usize,
    pub c: f64,
    pub standardizer: Standardizer,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(z: f64) -> f64 {
    // log(1 + exp(z)) without overflow
    if z > 35.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Binary L2 logistic objective and gradient over standardized features.
/// theta = [w_0..w_{k-1}, b]; the bias is not penalized.
#[doc(hidden)]
pub fn objective(xs: &[f64], m: usize, k: usize, t: &[f64], c: f64, theta: &[f64]) -> f64 {
    let (w, b) = (&theta[..k], theta[k]);
    let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let mut loss = 0.0;
    for i in 0..m {
        let z: f64 = xs[i * k..(i + 1) * k]
            .iter()
            .zip(w)
            .map(|(x, w)| x * w)
            .sum::<f64>()
            + b;
        loss += log1p_exp(-t[i] * z);
    }
    reg + c * loss
}

#[doc(hidden)]
pub fn gradient(
    xs: &[f64],
    m: usize,
    k: usize,
    t: &[f64],
    c: f64,
    theta: &[f64],
) -> Vec<f64> {
    let (w, b) = (&theta[..k], theta[k]);
    let mut g = vec![0.0f64; k + 1];
    g[..k].copy_from_slice(w);
    for i in 0..m {
        let row = &xs[i * k..(i + 1) * k];
        let z: f64 = row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b;
        let coef = -c * t[i] * sigmoid(-t[i] * z);
        for j in 0..k {
            g[j] += coef * row[j];
        }
        g[k] += coef;
    }
    g
}

/// Hessian-vector product for the same objective.
fn hess_vec(xs: &[f64], m: usize, k: usize, t: &[f64], c: f64, theta: &[f64], v: &[f64]) -> Vec<f64> {
    let (w, b) = (&theta[..k], theta[k]);
    let mut out = vec![0.0f64; k + 1];
    out[..k].copy_from_slice(&v[..k]);
    for i in 0..m {
        let row = &xs[i * k..(i + 1) * k];
        let z: f64 = row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b;
        let s = sigmoid(t[i] * z);
        let d = s * (1.0 - s);
        let xv: f64 = row.iter().zip(&v[..k]).map(|(x, v)| x * v).sum::<f64>() + v[k];
        let coef = c * d * xv;
        for j in 0..k {
            out[j] += coef * row[j];
        }
        out[k] += coef;
    }
    out
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Truncated-Newton minimizer: conjugate-gradient Newton steps with an
/// Armijo backtracking line search. Deterministic; returns (theta,
/// converged flag).
#[doc(hidden)]
pub fn minimize(
    xs: &[f64],
    m: usize,
    k: usize,
    t: &[f64],
    c: f64,
    opt: OptSettings,
    init: &[f64],
) -> (Vec<f64>, bool) {
    let mut theta = init.to_vec();
    let mut f = objective(xs, m, k, t, c, &theta);
    for _ in 0..opt.max_iters {
        let g = gradient(xs, m, k, t, c, &theta);
        let gnorm = inf_norm(&g);
        if gnorm < opt.grad_tol {
            return (theta, true);
        }
        // CG solve H p = -g, truncated at a forcing tolerance
        let dim = k + 1;
        let mut p = vec![0.0f64; dim];
        let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut d = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        let cg_tol = (rs.sqrt() * gnorm.sqrt().min(0.5)).max(1e-14);
        for _ in 0..dim.min(250) {
            if rs.sqrt() <= cg_tol {
                break;
            }
            let hd = hess_vec(xs, m, k, t, c, &theta, &d);
            let dhd: f64 = d.iter().zip(&hd).map(|(a, b)| a * b).sum();
            if dhd <= 1e-16 {
                break;
            }
            let alpha = rs / dhd;
            for j in 0..dim {
                p[j] += alpha * d[j];
                r[j] -= alpha * hd[j];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rs_new / rs;
            for j in 0..dim {
                d[j] = r[j] + beta * d[j];
            }
            rs = rs_new;
        }
        if inf_norm(&p) == 0.0 {
            p = g.iter().map(|v| -v).collect();
        }
        let gp: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        let (mut dir, mut gdir) = (p, gp);
        if gdir >= 0.0 {
            // fall back to steepest descent if CG returned a non-descent
            // direction
            dir = g.iter().map(|v| -v).collect();
            gdir = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&dir)
                .map(|(t0, d)| t0 + step * d)
                .collect();
            let ft = objective(xs, m, k, t, c, &trial);
            if ft <= f + 1e-4 * step * gdir {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no progress possible at machine precision
            let done = inf_norm(&gradient(xs, m, k, t, c, &theta)) < opt.grad_tol;
            return (theta, done);
        }
    }
    let g = gradient(xs, m, k, t, c, &theta);
    (theta, inf_norm(&g) < opt.grad_tol)
}

/// Train a one-vs-rest L2 logistic regression; standardization statistics
/// are computed from `x` (the training split).
pub fn train_logreg_ovr(
    x: FeatureView<'_>,
    y: &[u32],
    c: f64,
    opt: OptSettings,
) -> Result<LogisticModel> {
    let (m, k) = (x.rows(), x.cols());
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            y.len(),
            m
        )));
    }
    if !matches!(c.partial_cmp(&0.0), Some(std::cmp::Ordering::Greater)) {
        return Err(Error::InvalidArgument("C must be positive".into()));
    }
    let num_classes = y.iter().copied().max().map_or(0, |mx| mx as usize + 1);
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "training labels cover a single class".into(),
        ));
    }
    for i in 0..m {
        for j in 0..k {
            if x.get(i, j).is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "NaN feature at ({i}, {j})"
                )));
            }
        }
    }
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let mut weights = Vec::with_capacity(num_classes);
    let mut biases = Vec::with_capacity(num_classes);
    let mut converged = true;
    let init = vec![0.0f64; k + 1];
    for class in 0..num_classes {
        let t: Vec<f64> = y
            .iter()
            .map(|&l| if l as usize == class { 1.0 } else { -1.0 })
            .collect();
        let (theta, ok) = minimize(&xs, m, k, &t, c, opt, &init);
        converged &= ok;
        weights.push(theta[..k].to_vec());
        biases.push(theta[k]);
    }
    Ok(LogisticModel {
        weights,
        biases,
        num_classes,
        c,
        standardizer,
        converged,
    })
}

impl LogisticModel {
    /// Argmax class score per sample; exact ties go to the smallest class id.
    pub fn predict(&self, x: FeatureView<'_>) -> Result<Vec<u32>> {
        if x.cols() != self.standardizer.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} features, model expects {}",
                x.cols(),
                self.standardizer.mean.len()
            )));
        }
        let xs = self.standardizer.apply(x);
        let (m, k) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = &xs[i * k..(i + 1) * k];
            let mut best = 0u32;
            let mut best_score = f64::NEG_INFINITY;
            for cl in 0..self.num_classes {
                let score: f64 = row
                    .iter()
                    .zip(&self.weights[cl])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.biases[cl];
                if score > best_score {
                    best_score = score;
                    best = cl as u32;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(model: &LogisticModel, x: FeatureView<'_>, y: &[u32]) -> Result<f64> {
    let pred = model.predict(x)?;
    if pred.len() != y.len() {
        return Err(Error::DimensionMismatch("label count mismatch".into()));
    }
    let hits = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

/// Train one model per grid value, return the one with the best validation
/// accuracy; exact ties go to the smaller C.
pub fn select_c(
    train: (FeatureView<'_>, &[u32]),
    valid: (FeatureView<'_>, &[u32]),
    grid: &[f64],
    opt: OptSettings,
) -> Result<(f64, LogisticModel, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty C grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best: Option<(f64, LogisticModel, f64)> = None;
    for &c in &sorted {
        let model = train_logreg_ovr(train.0, train.1, c, opt)?;
        let acc = accuracy(&model, valid.0, valid.1)?;
        if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
            best = Some((c, model, acc));
        }
    }
    Ok(best.unwrap())
}

/// Default regularization grid for C selection.
pub const DEFAULT_C_GRID: [f64; 5] = [0.0001, 0.001, 0.01, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub feature_count: usize,
    pub c_selected: f64,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
}

/// Accuracy as a function of embedding width, plus the raw-input baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub points: Vec<CurvePoint>,
    pub baseline: CurvePoint,
}

impl CurveResult {
    /// `features,C,valid_acc,test_acc` rows plus a `baseline` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("features,C,valid_acc,test_acc\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.feature_count, p.c_selected, p.valid_accuracy, p.test_accuracy
            )
            .unwrap();
        }
        writeln!(
            out,
            "baseline,{},{},{}",
            self.baseline.c_selected, self.baseline.valid_accuracy, self.baseline.test_accuracy
        )
        .unwrap();
        out
    }
}

pub struct LabeledSplit<'a> {
    pub features: FeatureView<'a>,
    pub labels: &'a [u32],
}

/// For widths step, 2*step, ..., k, select C on the leading columns and
/// record validation and test accuracy; append the raw-input baseline
/// computed by the same selection procedure.
#[allow(clippy::too_many_arguments)]
pub fn feature_curve(
    train: LabeledSplit<'_>,
    valid: LabeledSplit<'_>,
    test: LabeledSplit<'_>,
    raw_train: LabeledSplit<'_>,
    raw_valid: LabeledSplit<'_>,
    raw_test: LabeledSplit<'_>,
    step: usize,
    grid: &[f64],
    opt: OptSettings,
) -> Result<CurveResult> {
    if step == 0 {
        return Err(Error::InvalidArgument("step must be >= 1".into()));
    }
    let k = train.features.cols();
    if valid.features.cols() != k || test.features.cols() != k {
        return Err(Error::DimensionMismatch(
            "embedding splits disagree on width".into(),
        ));
    }
    let mut points = Vec::new();
    let mut j = step.min(k);
    loop {
        let (c, model, vacc) = select_c(
            (train.features.prefix(j), train.labels),
            (valid.features.prefix(j), valid.labels),
            grid,
            opt,
        )?;
        let tacc = accuracy(&model, test.features.prefix(j), test.labels)?;
        points.push(CurvePoint {
            feature_count: j,
            c_selected: c,
            valid_accuracy: vacc,
            test_accuracy: tacc,
        });
        if j >= k {
            break;
        }
        j = (j + step).min(k);
    }
    let (bc, bmodel, bvacc) = select_c(
        (raw_train.features, raw_train.labels),
        (raw_valid.features, raw_valid.labels),
        grid,
        opt,
    )?;
    let btacc = accuracy(&bmodel, raw_test.features, raw_test.labels)?;
    Ok(CurveResult {
        points,
        baseline: CurvePoint {
            feature_count: raw_train.features.cols(),
            c_selected: bc,
            valid_accuracy: bvacc,
            test_accuracy: btacc,
        },
    })
}

/// 0/1 samples as a dense feature matrix for the raw-input baseline.
pub fn dataset_features(ds: &crate::data::BinaryDataset) -> Vec<f64> {
    let (m, n) = (ds.num_samples(), ds.num_vars());
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for (j, &v) in ds.row(i).iter().enumerate() {
            out[i * n + j] = v as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn view(data: &[f64], rows: usize, cols: usize) -> FeatureView<'_> {
        FeatureView::new(data, rows, cols)
    }

    #[test]
    fn separable_clusters_reach_perfect_training_accuracy() {
        let mut data = Vec::new();
        let mut y = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            data.extend([rng.gen::<f64>() + 3.0, rng.gen::<f64>() + 3.0]);
            y.push(0u32);
            data.extend([rng.gen::<f64>() - 3.0, rng.gen::<f64>() - 3.0]);
            y.push(1u32);
        }
        let x = view(&data, 80, 2);
        let model = train_logreg_ovr(x, &y, 1.0, OptSettings::default()).unwrap();
        assert_eq!(accuracy(&model, x, &y).unwrap(), 1.0);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, k) = (30, 4);
        let xs: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let t: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let c = 0.7;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..k + 1).map(|_| rng.gen::<f64>() - 0.5).collect();
            let g = gradient(&xs, m, k, &t, c, &theta);
            let h = 1e-6;
            for j in 0..k + 1 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd =
                    (objective(&xs, m, k, &t, c, &tp) - objective(&xs, m, k, &t, c, &tm)) / (2.0 * h);
                let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "component {j}: analytic {} vs fd {fd}", g[j]);
            }
        }
    }

    #[test]
    fn objective_decreases_from_zero_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, k) = (60, 3);
        let xs: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let t: Vec<f64> = (0..m)
            .map(|i| if xs[i * k] > 0.1 { 1.0 } else { -1.0 })
            .collect();
        let zero = vec![0.0; k + 1];
        let f0 = objective(&xs, m, k, &t, 1.0, &zero);
        let (theta, _) = minimize(&xs, m, k, &t, 1.0, OptSettings::default(), &zero);
        assert!(objective(&xs, m, k, &t, 1.0, &theta) <= f0);
    }

    #[test]
    fn two_initializations_reach_the_same_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, k) = (100, 5);
        let xs: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let t: Vec<f64> = (0..m)
            .map(|i| if xs[i * k] + xs[i * k + 1] > 0.0 { 1.0 } else { -1.0 })
            .collect();
        let opt = OptSettings::default();
        let zero = vec![0.0; k + 1];
        let other: Vec<f64> = (0..k + 1).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (ta, _) = minimize(&xs, m, k, &t, 0.5, opt, &zero);
        let (tb, _) = minimize(&xs, m, k, &t, 0.5, opt, &other);
        let fa = objective(&xs, m, k, &t, 0.5, &ta);
        let fb = objective(&xs, m, k, &t, 0.5, &tb);
        assert!((fa - fb).abs() / fa.abs().max(1.0) < 1e-6, "{fa} vs {fb}");
    }

    #[test]
    fn single_class_labels_are_an_error() {
        let data = vec![0.0, 1.0, 2.0, 3.0];
        assert!(train_logreg_ovr(view(&data, 2, 2), &[0, 0], 1.0, OptSettings::default()).is_err());
    }

    #[test]
    fn accuracy_trivial_cases() {
        let data = vec![1.0, -1.0, 1.0, -1.0];
        let x = view(&data, 4, 1);
        let y = [0u32, 1, 0, 1];
        let model = train_logreg_ovr(x, &y, 1.0, OptSettings::default()).unwrap();
        assert_eq!(accuracy(&model, x, &y).unwrap(), 1.0);
        let flipped = [1u32, 0, 1, 0];
        assert_eq!(accuracy(&model, x, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn constant_predictor_on_random_three_class_labels() {
        // constant features -> the model predicts a fixed class; accuracy
        // over 10k uniform 3-class labels concentrates near 1/3
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 10000;
        let train_data: Vec<f64> = (0..60).map(|_| rng.gen()).collect();
        let train_y: Vec<u32> = (0..30).map(|i| (i % 3) as u32).collect();
        let model = train_logreg_ovr(view(&train_data, 30, 2), &train_y, 0.0001, OptSettings::default())
            .unwrap();
        let const_data: Vec<f64> = vec![0.0; m * 2];
        let y: Vec<u32> = (0..m).map(|_| rng.gen_range(0..3u32)).collect();
        let acc = accuracy(&model, view(&const_data, m, 2), &y).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 0.02, "acc {acc}");
    }

    #[test]
    fn select_c_singleton_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..30 {
            data.extend([rng.gen::<f64>() + 2.0]);
            y.push(0u32);
            data.extend([rng.gen::<f64>() - 2.0]);
            y.push(1u32);
        }
        let x = view(&data, 60, 1);
        let opt = OptSettings::default();
        let (c, _, _) = select_c((x, &y), (x, &y), &[1.0], opt).unwrap();
        assert_eq!(c, 1.0);
        // separable data: every grid value reaches the same validation
        // accuracy, so the smallest C must win
        let (c, _, _) = select_c((x, &y), (x, &y), &DEFAULT_C_GRID, opt).unwrap();
        assert_eq!(c, 0.0001);
    }

    #[test]
    fn clamping_handles_neg_infinity() {
        let data = vec![0.0, f64::NEG_INFINITY, -1.0, -3.0, -2.0, -4.0];
        let x = view(&data, 3, 2);
        let s = Standardizer::fit(x);
        assert_eq!(s.clamp[1], -14.0); // min finite -4 minus 10
        let xs = s.apply(x);
        assert!(xs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn curve_points_and_full_matrix_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, k) = (90, 6);
        let gen_split = |rng: &mut ChaCha8Rng| {
            let mut data = Vec::new();
            let mut y = Vec::new();
            for _ in 0..m {
                let cls = rng.gen_range(0..2u32);
                let shift = if cls == 0 { 1.0 } else { -1.0 };
                for j in 0..k {
                    let informative = if j < 2 { shift } else { 0.0 };
                    data.push(informative + rng.gen::<f64>());
                }
                y.push(cls);
            }
            (data, y)
        };
        let (tr_x, tr_y) = gen_split(&mut rng);
        let (va_x, va_y) = gen_split(&mut rng);
        let (te_x, te_y) = gen_split(&mut rng);
        let opt = OptSettings::default();
        let grid = [0.01, 1.0];
        fn mk<'a>(d: &'a [f64], y: &'a [u32], m: usize, k: usize) -> LabeledSplit<'a> {
            LabeledSplit {
                features: FeatureView::new(d, m, k),
                labels: y,
            }
        }
        let curve = feature_curve(
            mk(&tr_x, &tr_y, m, k),
            mk(&va_x, &va_y, m, k),
            mk(&te_x, &te_y, m, k),
            mk(&tr_x, &tr_y, m, k),
            mk(&va_x, &va_y, m, k),
            mk(&te_x, &te_y, m, k),
            2,
            &grid,
            opt,
        )
        .unwrap();
        assert_eq!(curve.points.len(), 3); // k=6, step=2
        assert!(curve
            .points
            .windows(2)
            .all(|w| w[0].feature_count < w[1].feature_count));
        // the last point equals select_c on the full matrix
        let (c, model, vacc) = select_c(
            (FeatureView::new(&tr_x, m, k), &tr_y),
            (FeatureView::new(&va_x, m, k), &va_y),
            &grid,
            opt,
        )
        .unwrap();
        let tacc = accuracy(&model, FeatureView::new(&te_x, m, k), &te_y).unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!(last.feature_count, k);
        assert_eq!(last.c_selected, c);
        assert_eq!(last.valid_accuracy, vacc);
        assert_eq!(last.test_accuracy, tacc);
        // step = k gives a single point with the same numbers
        let single = feature_curve(
            mk(&tr_x, &tr_y, m, k),
            mk(&va_x, &va_y, m, k),
            mk(&te_x, &te_y, m, k),
            mk(&tr_x, &tr_y, m, k),
            mk(&va_x, &va_y, m, k),
            mk(&te_x, &te_y, m, k),
            k,
            &grid,
            opt,
        )
        .unwrap();
        assert_eq!(single.points.len(), 1);
        assert_eq!(single.points[0], *last);
        // CSV shape
        let csv = curve.to_csv();
        assert!(csv.starts_with("features,C,valid_acc,test_acc\n"));
        assert!(csv.trim_end().lines().last().unwrap().starts_with("baseline,"));
    }
}
