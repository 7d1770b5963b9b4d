//! Ridge regression on standardized features with an unpenalized intercept.
//!
//! Fitting works from sufficient statistics (row count, column sums, the
//! scatter matrix and cross products) accumulated per CV fold around a shared
//! shift, so training on any union of folds is a sum of fold statistics and
//! each grid point costs one `d × d` factorization rather than a pass over
//! the rows. Features are z-scored with population statistics of the training
//! rows; columns without variance are dropped from the solve and get weight 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::r_squared;

/// 13 log-spaced values from 1e-3 to 1e3.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

/// Two R² values within this distance count as a tie when tuning.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        self.intercept
            + x.iter()
                .zip(&self.weights)
                .zip(self.feature_means.iter().zip(&self.feature_scales))
                .map(|((xj, w), (m, s))| w * (xj - m) / s)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        // fold standardization into raw-space coefficients for one gemv
        let beta = DVector::from_iterator(
            self.dim(),
            self.weights.iter().zip(&self.feature_scales).map(|(w, s)| w / s),
        );
        let offset = self.intercept
            - beta
                .iter()
                .zip(&self.feature_means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (x * beta).iter().map(|v| v + offset).collect()
    }

    /// Raw-feature coefficients `β` and intercept `b` with `ŷ = b + β·x`.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let beta: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.feature_scales)
            .map(|(w, s)| w / s)
            .collect();
        let b = self.intercept - beta.iter().zip(&self.feature_means).map(|(b, m)| b * m).sum::<f64>();
        (beta, b)
    }
}

/// Sufficient statistics of a set of rows, shifted by a common centre.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    sx: DVector<f64>,
    sxx: DMatrix<f64>,
    sy: f64,
    sxy: DVector<f64>,
}

impl Moments {
    fn zeros(d: usize) -> Self {
        Moments {
            n: 0,
            sx: DVector::zeros(d),
            sxx: DMatrix::zeros(d, d),
            sy: 0.0,
            sxy: DVector::zeros(d),
        }
    }

    /// `x` and `y` already shifted.
    fn of(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        // an explicit transpose routes the product through the blocked gemm;
        // `tr_mul` is dot-product based and ~20x slower at this size
        let xt = x.transpose();
        Moments {
            n: x.nrows(),
            sx: x.row_sum().transpose(),
            sxx: &xt * x,
            sy: y.sum(),
            sxy: &xt * y,
        }
    }

    fn add(&mut self, other: &Moments) {
        self.n += other.n;
        self.sx += &other.sx;
        self.sxx += &other.sxx;
        self.sy += other.sy;
        self.sxy += &other.sxy;
    }

    fn solve(&self, shift_x: &DVector<f64>, shift_y: f64, lambda: f64) -> Result<RidgeModel> {
        let d = self.sx.len();
        if self.n < 2 {
            return Err(Error::DegenerateData(format!("{} training rows", self.n)));
        }
        let n = self.n as f64;
        let mean = &self.sx / n;
        let ybar = self.sy / n;
        // centred scatter and cross products
        let scatter = &self.sxx - (&mean * mean.transpose()) * n;
        let cross = &self.sxy - &mean * (ybar * n);

        let mut scales = vec![1.0; d];
        let mut active = Vec::with_capacity(d);
        for j in 0..d {
            let var = scatter[(j, j)] / n;
            let m = mean[j] + shift_x[j];
            if var > 1e-12 * (1.0 + m * m) {
                scales[j] = var.sqrt();
                active.push(j);
            }
        }
        let k = active.len();
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (p, &i) in active.iter().enumerate() {
            b[p] = cross[i] / scales[i];
            for (q, &j) in active.iter().enumerate().take(p + 1) {
                let v = scatter[(i, j)] / (scales[i] * scales[j]);
                a[(p, q)] = v;
                a[(q, p)] = v;
            }
            a[(p, p)] += lambda;
        }
        let w_active = solve_spd(a, &b, lambda)?;
        let mut weights = vec![0.0; d];
        for (p, &j) in active.iter().enumerate() {
            weights[j] = w_active[p];
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite ridge weights".into()));
        }
        Ok(RidgeModel {
            weights,
            intercept: ybar + shift_y,
            lambda,
            feature_means: (0..d).map(|j| mean[j] + shift_x[j]).collect(),
            feature_scales: scales,
        })
    }
}

/// Solves `a w = b` for symmetric positive (semi)definite `a`. Cholesky is
/// used when `lambda > 0`; otherwise, or if the factorization fails, a
/// pseudo-inverse from the eigendecomposition gives the minimum-norm solution.
fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if lambda > 0.0 {
        if let Some(chol) = a.clone().cholesky() {
            return Ok(chol.solve(b));
        }
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * 1e-12 * eig.eigenvalues.len() as f64;
    let qtb = eig.eigenvectors.tr_mul(b);
    let scaled = DVector::from_iterator(
        qtb.len(),
        qtb.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| if *l > tol { c / l } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * scaled)
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    if x.ncols() == 0 {
        return Err(Error::DegenerateData("no feature columns".into()));
    }
    if x.nrows() < 2 {
        return Err(Error::DegenerateData(format!("{} rows", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("features"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("targets"));
    }
    Ok(())
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

/// Fits ridge regression with penalty `lambda` on standardized features.
pub fn ridge_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    check_inputs(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::BadParameter(format!("lambda {lambda}")));
    }
    let shift_x = column_means(x);
    let shift_y = y.iter().sum::<f64>() / y.len() as f64;
    let (xs, ys) = shifted(x, y, &shift_x, shift_y);
    Moments::of(&xs, &ys).solve(&shift_x, shift_y, lambda)
}

fn shifted(
    x: &DMatrix<f64>,
    y: &[f64],
    shift_x: &DVector<f64>,
    shift_y: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut xs = x.clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col.add_scalar_mut(-shift_x[j]);
    }
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| v - shift_y));
    (xs, ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub lambda: f64,
    pub model: RidgeModel,
    /// Mean validation R² per grid point; `None` when every fold was
    /// degenerate for that point.
    pub cv_r2: Vec<Option<f64>>,
}

struct Fold {
    moments: Moments,
    x: DMatrix<f64>,
    y: Vec<f64>,
}

/// Per-fold statistics for repeated fitting and tuning over fold unions.
pub struct RidgeCv {
    folds: Vec<Fold>,
    shift_x: DVector<f64>,
    shift_y: f64,
}

impl RidgeCv {
    /// `fold_ids[i]` is the fold of row `i`; ids must be `0..k` (gaps allowed).
    pub fn new(x: &DMatrix<f64>, y: &[f64], fold_ids: &[u32]) -> Result<Self> {
        check_inputs(x, y)?;
        if fold_ids.len() != y.len() {
            return Err(Error::LengthMismatch(fold_ids.len(), y.len()));
        }
        let k = fold_ids.iter().copied().max().map_or(0, |m| m as usize + 1);
        let shift_x = column_means(x);
        let shift_y = y.iter().sum::<f64>() / y.len() as f64;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &f) in fold_ids.iter().enumerate() {
            rows[f as usize].push(i);
        }
        let folds = rows
            .into_iter()
            .map(|rows| {
                let xf = x.select_rows(rows.iter());
                let yf: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                let moments = if rows.is_empty() {
                    Moments::zeros(x.ncols())
                } else {
                    let (xs, ys) = shifted(&xf, &yf, &shift_x, shift_y);
                    Moments::of(&xs, &ys)
                };
                Fold { moments, x: xf, y: yf }
            })
            .collect();
        Ok(RidgeCv {
            folds,
            shift_x,
            shift_y,
        })
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    fn moments(&self, folds: &[usize]) -> Moments {
        let mut m = Moments::zeros(self.shift_x.len());
        for &f in folds {
            m.add(&self.folds[f].moments);
        }
        m
    }

    /// Fits on the union of `folds`.
    pub fn fit(&self, folds: &[usize], lambda: f64) -> Result<RidgeModel> {
        self.moments(folds).solve(&self.shift_x, self.shift_y, lambda)
    }

    /// Rows and targets of one fold.
    pub fn fold_data(&self, fold: usize) -> (&DMatrix<f64>, &[f64]) {
        (&self.folds[fold].x, &self.folds[fold].y)
    }

    /// Leave-one-fold-out mean validation R² over `folds` for each grid
    /// point. Folds whose targets have no variance are skipped.
    pub fn scores(&self, folds: &[usize], grid: &[f64]) -> Result<Vec<Option<f64>>> {
        let total = self.moments(folds);
        let mut sums = vec![0.0; grid.len()];
        let mut counts = vec![0usize; grid.len()];
        for &held in folds {
            let fold = &self.folds[held];
            if fold.y.len() < 2 {
                continue;
            }
            let mut train = total.clone();
            train.n -= fold.moments.n;
            train.sx -= &fold.moments.sx;
            train.sxx -= &fold.moments.sxx;
            train.sy -= fold.moments.sy;
            train.sxy -= &fold.moments.sxy;
            if train.n < 2 {
                continue;
            }
            for (g, &lambda) in grid.iter().enumerate() {
                let model = train.solve(&self.shift_x, self.shift_y, lambda)?;
                match r_squared(&fold.y, &model.predict(&fold.x)) {
                    Ok(r2) => {
                        sums[g] += r2;
                        counts[g] += 1;
                    }
                    Err(Error::ZeroVariance) => break,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect())
    }

    /// Picks the grid point with the best mean validation R² over `folds`
    /// (ties go to the smaller lambda) and refits on all of them.
    pub fn tune(&self, folds: &[usize], grid: &[f64]) -> Result<TuneResult> {
        if grid.is_empty() {
            return Err(Error::BadParameter("empty lambda grid".into()));
        }
        if folds.len() < 2 {
            return Err(Error::BadParameter("tuning needs at least 2 folds".into()));
        }
        let cv_r2 = self.scores(folds, grid)?;
        let lambda = select_lambda(grid, &cv_r2).ok_or(Error::AllFoldsDegenerate)?;
        let model = self.fit(folds, lambda)?;
        Ok(TuneResult {
            lambda,
            model,
            cv_r2,
        })
    }
}

fn select_lambda(grid: &[f64], scores: &[Option<f64>]) -> Option<f64> {
    let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    grid.iter()
        .zip(scores)
        .filter(|(_, s)| matches!(s, Some(v) if *v >= best - TIE_TOLERANCE))
        .map(|(l, _)| *l)
        .min_by(f64::total_cmp)
}

/// Cross-validated lambda selection over `grid`, then a refit on all rows.
pub fn ridge_tune(x: &DMatrix<f64>, y: &[f64], fold_ids: &[u32], grid: &[f64]) -> Result<TuneResult> {
    let cv = RidgeCv::new(x, y, fold_ids)?;
    let folds: Vec<usize> = (0..cv.n_folds())
        .filter(|&f| !cv.folds[f].y.is_empty())
        .collect();
    cv.tune(&folds, grid)
}
