//! Ridge regression with an intercept, solved through the normal equations,
//! and α selection over a grid by k-fold cross-validation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cv::RowFolds;
use crate::error::{Error, Result};
use crate::metrics;

pub const MODEL_MAGIC: &[u8; 4] = b"RDG1";

/// Strictly increasing list of positive penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaGrid(Vec<f64>);

impl AlphaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("alpha grid must not be empty".into()));
        }
        if values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::Usage("alpha values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage("alpha grid must be strictly increasing".into()));
        }
        Ok(AlphaGrid(values))
    }

    /// `min, min*step, ...` up to and including `max` (with a relative
    /// slack of 1e-9 so `10..1e6 ×10` yields six values).
    pub fn geometric(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min > 0.0 && max >= min && step > 1.0) {
            return Err(Error::Usage(format!(
                "invalid alpha range: min={min} max={max} step={step}"
            )));
        }
        let mut values = Vec::new();
        let mut k = 0i32;
        loop {
            let a = min * step.powi(k);
            if a > max * (1.0 + 1e-9) {
                break;
            }
            values.push(a);
            k += 1;
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// 10, 100, ..., 10^6.
impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid(vec![1e1, 1e2, 1e3, 1e4, 1e5, 1e6])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// Weights on the centered (and, if `feature_scales` is set, scaled)
    /// features.
    pub weights: Vec<f64>,
    /// Intercept for raw features: `y_mean - Σ means_j / scales_j * w_j`.
    pub intercept: f64,
    pub alpha: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Option<Vec<f64>>,
    pub y_mean: f64,
}

struct Centered {
    xc: DMatrix<f64>,
    yc: DVector<f64>,
    means: Vec<f64>,
    scales: Option<Vec<f64>>,
    y_mean: f64,
}

fn check_finite(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        let (r, c) = (i % x.nrows(), i / x.nrows());
        return Err(Error::Numeric(format!("non-finite feature at row {r}, column {c}")));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite target at row {i}")));
    }
    Ok(())
}

fn center(x: &DMatrix<f64>, y: &[f64], standardize: bool) -> Result<Centered> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::Usage(format!("X has {n} rows but y has {} entries", y.len())));
    }
    if n < 2 {
        return Err(Error::Data(format!("ridge needs at least 2 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::Usage("ridge needs at least one feature".into()));
    }
    check_finite(x, y)?;
    let nf = n as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / nf).collect();
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let scales = if standardize {
        let s: Vec<f64> = xc
            .column_iter()
            .map(|c| {
                let sd = (c.norm_squared() / nf).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col /= s[j];
        }
        Some(s)
    } else {
        None
    };
    let y_mean = y.iter().sum::<f64>() / nf;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    Ok(Centered {
        xc,
        yc,
        means,
        scales,
        y_mean,
    })
}

/// Solve `(gram + alpha I) w = rhs`; Cholesky first, SVD if that fails.
fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += alpha;
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(rhs));
    }
    a.svd(true, true)
        .solve(rhs, 1e-12)
        .map_err(|e| Error::Numeric(format!("ridge solve failed at alpha={alpha}: {e}")))
}

impl Centered {
    fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.xc.tr_mul(&self.xc), self.xc.tr_mul(&self.yc))
    }

    fn solve(&self, gram: &DMatrix<f64>, xty: &DVector<f64>, alpha: f64) -> Result<RidgeModel> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Usage(format!("alpha must be positive, got {alpha}")));
        }
        let w = solve_spd(gram, xty, alpha)?;
        Ok(self.model(w.as_slice().to_vec(), alpha))
    }

    fn models(&self, alphas: &[f64]) -> Result<Vec<RidgeModel>> {
        let (gram, xty) = self.normal_equations();
        alphas.iter().map(|&a| self.solve(&gram, &xty, a)).collect()
    }

    fn model(&self, weights: Vec<f64>, alpha: f64) -> RidgeModel {
        let shift: f64 = weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let s = self.scales.as_ref().map_or(1.0, |s| s[j]);
                self.means[j] / s * w
            })
            .sum();
        RidgeModel {
            weights,
            intercept: self.y_mean - shift,
            alpha,
            feature_means: self.means.clone(),
            feature_scales: self.scales.clone(),
            y_mean: self.y_mean,
        }
    }
}

/// Fit ridge on `(x, y)`.
///
/// Columns are centered on their training means (and divided by their
/// population standard deviation when `standardize`; constant columns keep
/// scale 1). `y` is centered, so the intercept is not penalised.
pub fn fit(x: &DMatrix<f64>, y: &[f64], alpha: f64, standardize: bool) -> Result<RidgeModel> {
    let mut models = fit_path(x, y, &[alpha], standardize)?;
    Ok(models.remove(0))
}

/// Fit one model per alpha, sharing the centering and the Gram matrix.
pub fn fit_path(x: &DMatrix<f64>, y: &[f64], alphas: &[f64], standardize: bool) -> Result<Vec<RidgeModel>> {
    center(x, y, standardize)?.models(alphas)
}

impl RidgeModel {
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    /// `((x - means) / scales) · w + y_mean` for every row.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.width() {
            return Err(Error::Usage(format!(
                "feature width mismatch: model expects {}, got {}",
                self.width(),
                x.ncols()
            )));
        }
        let mut coef = self.weights.clone();
        if let Some(s) = &self.feature_scales {
            for (c, s) in coef.iter_mut().zip(s) {
                *c /= s;
            }
        }
        Ok(x.row_iter()
            .map(|row| {
                let dot: f64 = row
                    .iter()
                    .zip(&self.feature_means)
                    .zip(&coef)
                    .map(|((v, m), c)| (v - m) * c)
                    .sum();
                dot + self.y_mean
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        BufReader::new(f)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// `RDG1 | u32 p | f64 alpha | f64 y_mean | u8 flags | means | [scales] | weights`,
    /// little-endian. Flag bit 0 marks the presence of scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.width();
        let mut out = Vec::with_capacity(25 + 24 * p);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(p as u32).to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.y_mean.to_le_bytes());
        out.push(self.feature_scales.is_some() as u8);
        let arrays = std::iter::once(&self.feature_means)
            .chain(self.feature_scales.as_ref())
            .chain(std::iter::once(&self.weights));
        for a in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if buf.len() < pos + n {
                return Err(Error::format(pos as u64, format!("truncated {what}")));
            }
            let s = &buf[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4, "magic")? != MODEL_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"RDG1\""));
        }
        let p = u32::from_le_bytes(take(4, "width")?.try_into().unwrap()) as usize;
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let alpha = f64_at(take(8, "alpha")?);
        let y_mean = f64_at(take(8, "y_mean")?);
        let flags = take(1, "flags")?[0];
        if flags > 1 {
            return Err(Error::format(24, format!("unknown flags {flags:#04x}")));
        }
        let mut array =
            |what: &str| -> Result<Vec<f64>> { Ok(take(8 * p, what)?.chunks_exact(8).map(f64_at).collect()) };
        let feature_means = array("means")?;
        let feature_scales = if flags & 1 == 1 { Some(array("scales")?) } else { None };
        let weights = array("weights")?;
        let centered = Centered {
            xc: DMatrix::zeros(0, 0),
            yc: DVector::zeros(0),
            means: feature_means,
            scales: feature_scales,
            y_mean,
        };
        Ok(centered.model(weights, alpha))
    }
}

/// Called with `(fold, train rows, eval rows)` before each fold is fit.
pub type FoldHook<'a> = dyn Fn(usize, &[usize], &[usize]) + Sync + 'a;

/// Outcome of a cross-validated α search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub alphas: Vec<f64>,
    /// Index of the winning α in `alphas`.
    pub best: usize,
    /// `[alpha][fold]` out-of-fold MSE.
    pub fold_mse: Vec<Vec<f64>>,
    /// Mean over folds, per α, reduced in fold order.
    pub mean_mse: Vec<f64>,
    /// `[alpha][row]` out-of-fold predictions.
    pub oof: Vec<Vec<f64>>,
}

impl GridSearch {
    pub fn alpha_star(&self) -> f64 {
        self.alphas[self.best]
    }
}

/// k-fold α selection. The winner minimises the mean fold MSE; ties go to
/// the smaller α.
pub fn grid_search(
    folds: &RowFolds,
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &AlphaGrid,
    standardize: bool,
) -> Result<GridSearch> {
    grid_search_observed(folds, x, y, grid, standardize, &|_, _, _| {})
}

/// [`grid_search`] reporting, per fold, the exact training and evaluation
/// row indices before the fold's models are fitted.
pub fn grid_search_observed(
    folds: &RowFolds,
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &AlphaGrid,
    standardize: bool,
    on_fold: &FoldHook,
) -> Result<GridSearch> {
    let n = x.nrows();
    if folds.len() != n || y.len() != n {
        return Err(Error::Usage(format!(
            "fold assignment covers {} rows, X has {n}, y has {}",
            folds.len(),
            y.len()
        )));
    }
    let alphas = grid.values();
    let mut fold_mse = vec![vec![0.0; folds.k()]; alphas.len()];
    let mut oof = vec![vec![f64::NAN; n]; alphas.len()];
    #[allow(clippy::needless_range_loop)]
    for fold in 0..folds.k() {
        let (train, eval) = folds.split(fold);
        on_fold(fold, &train, &eval);
        let x_train = x.select_rows(train.iter());
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_eval = x.select_rows(eval.iter());
        let y_eval: Vec<f64> = eval.iter().map(|&i| y[i]).collect();
        let fold_err = |alpha: f64, e: Error| Error::Fold {
            fold,
            alpha,
            source: Box::new(e),
        };
        let centered = center(&x_train, &y_train, standardize).map_err(|e| fold_err(alphas[0], e))?;
        let (gram, xty) = centered.normal_equations();
        for (a, &alpha) in alphas.iter().enumerate() {
            let model = centered.solve(&gram, &xty, alpha).map_err(|e| fold_err(alpha, e))?;
            let pred = model.predict(&x_eval)?;
            fold_mse[a][fold] = metrics::mse(&y_eval, &pred)?;
            for (&row, p) in eval.iter().zip(pred) {
                oof[a][row] = p;
            }
        }
    }
    let mean_mse: Vec<f64> = fold_mse
        .iter()
        .map(|f| f.iter().sum::<f64>() / f.len() as f64)
        .collect();
    let mut best = 0;
    for (a, m) in mean_mse.iter().enumerate() {
        if *m < mean_mse[best] {
            best = a;
        }
    }
    Ok(GridSearch {
        alphas: alphas.to_vec(),
        best,
        fold_mse,
        mean_mse,
        oof,
    })
}
