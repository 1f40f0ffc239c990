//! Deterministic k-fold assignment and cross-validated scoring of one
//! layer combination.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{build_design, DesignMatrix, LayerSet};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics;
use crate::ridge::{self, AlphaGrid};

pub const DEFAULT_K: usize = 10;

/// user_id → fold index in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

/// Sort ids, shuffle them with a ChaCha8 stream seeded by `seed`, and deal
/// them round-robin into `k` folds. Fold sizes differ by at most one and
/// the lower-numbered folds get the extra users.
pub fn make_folds(user_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Usage(format!("k must be at least 2, got {k}")));
    }
    if user_ids.len() < k {
        return Err(Error::Usage(format!(
            "k={k} folds requested for only {} users",
            user_ids.len()
        )));
    }
    let mut sorted: Vec<&String> = user_ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate user_id {} in fold input", w[0])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let assignment = sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % k))
        .collect();
    Ok(FoldAssignment { k, seed, assignment })
}

impl FoldAssignment {
    pub fn fold_of(&self, user_id: &str) -> Option<usize> {
        self.assignment.get(user_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Fold index of each row, for rows labelled by `user_ids`.
    pub fn rows(&self, user_ids: &[String]) -> Result<RowFolds> {
        let folds = user_ids
            .iter()
            .map(|u| {
                self.fold_of(u)
                    .ok_or_else(|| Error::Data(format!("user {u} has no fold assignment")))
            })
            .collect::<Result<Vec<_>>>()?;
        RowFolds::new(self.k, folds)
    }
}

/// Fold index per design-matrix row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowFolds {
    k: usize,
    fold_of_row: Vec<usize>,
}

impl RowFolds {
    /// Every fold in `[0, k)` must own at least one row.
    pub fn new(k: usize, fold_of_row: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::Usage(format!("k must be at least 2, got {k}")));
        }
        let mut sizes = vec![0usize; k];
        for &f in &fold_of_row {
            if f >= k {
                return Err(Error::Usage(format!("fold index {f} outside [0, {k})")));
            }
            sizes[f] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Usage(format!("fold {empty} has no rows")));
        }
        Ok(RowFolds { k, fold_of_row })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of_row.is_empty()
    }

    /// `(training rows, evaluation rows)` for `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.fold_of_row[i] != fold)
    }
}

/// Receives the exact user sets of every fold fit.
pub trait FitObserver: Sync {
    fn on_fit(&self, layer_set: &LayerSet, fold: usize, train_users: &[&str], eval_users: &[&str]);
}

pub struct NoObserver;

impl FitObserver for NoObserver {
    fn on_fit(&self, _: &LayerSet, _: usize, _: &[&str], _: &[&str]) {}
}

/// Cross-validated score of one representation at its best α.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub layer_set: LayerSet,
    pub alpha_star: f64,
    pub alphas: Vec<f64>,
    /// `[alpha][fold]`.
    pub alpha_fold_mse: Vec<Vec<f64>>,
    pub alpha_mean_mse: Vec<f64>,
    /// Fold MSEs at `alpha_star`.
    pub fold_mses: Vec<f64>,
    /// Unweighted mean of `fold_mses`.
    pub mean_mse: f64,
    pub std_err: f64,
    pub user_ids: Vec<String>,
    pub y: Vec<f64>,
    /// Out-of-fold predictions at `alpha_star`, aligned with `user_ids`.
    pub oof_predictions: Vec<f64>,
}

impl CvReport {
    /// Per-user squared out-of-fold errors, aligned with `user_ids`.
    pub fn squared_errors(&self) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.oof_predictions)
            .map(|(a, b)| (a - b) * (a - b))
            .collect()
    }

    /// MSE over all users at once (differs from `mean_mse` when folds are
    /// unequal).
    pub fn pooled_mse(&self) -> f64 {
        metrics::mean(&self.squared_errors())
    }

    pub fn oof_map(&self) -> BTreeMap<&str, f64> {
        self.user_ids
            .iter()
            .map(String::as_str)
            .zip(self.oof_predictions.iter().copied())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(s, "layer_set={}", self.layer_set).unwrap();
        writeln!(s, "folds={}", self.fold_mses.len()).unwrap();
        writeln!(s, "n={}", self.user_ids.len()).unwrap();
        writeln!(s, "alpha_star={}", self.alpha_star).unwrap();
        writeln!(s, "mean_mse={}", self.mean_mse).unwrap();
        writeln!(s, "std_err={}", self.std_err).unwrap();
        writeln!(s, "pooled_mse={}", self.pooled_mse()).unwrap();
        writeln!(s, "fold_mse={}", join(&self.fold_mses)).unwrap();
        for (a, m) in self.alphas.iter().zip(&self.alpha_mean_mse) {
            writeln!(s, "alpha_mean_mse[{a}]={m}").unwrap();
        }
        writeln!(s, "headline=unweighted mean of per-fold MSE at alpha_star").unwrap();
        s
    }

    /// `layer_set,alpha,fold,mse`, one row per (α, fold) cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_set,alpha,fold,mse\n");
        for (a, folds) in self.alphas.iter().zip(&self.alpha_fold_mse) {
            for (f, m) in folds.iter().enumerate() {
                writeln!(s, "{},{a},{f},{m}", self.layer_set).unwrap();
            }
        }
        s
    }
}

pub fn cross_validate(
    c: &Corpus,
    ls: &LayerSet,
    folds: &FoldAssignment,
    grid: &AlphaGrid,
    standardize: bool,
) -> Result<CvReport> {
    cross_validate_observed(c, ls, folds, grid, standardize, &NoObserver)
}

pub fn cross_validate_observed(
    c: &Corpus,
    ls: &LayerSet,
    folds: &FoldAssignment,
    grid: &AlphaGrid,
    standardize: bool,
    observer: &dyn FitObserver,
) -> Result<CvReport> {
    let design = build_design(c, ls)?;
    cross_validate_design(&design, folds, grid, standardize, observer)
}

/// Cross-validate a prebuilt design matrix.
pub fn cross_validate_design(
    design: &DesignMatrix,
    folds: &FoldAssignment,
    grid: &AlphaGrid,
    standardize: bool,
    observer: &dyn FitObserver,
) -> Result<CvReport> {
    let covered: HashSet<&str> = design.user_ids.iter().map(String::as_str).collect();
    if let Some(extra) = folds.assignment.keys().find(|u| !covered.contains(u.as_str())) {
        return Err(Error::Data(format!(
            "fold assignment contains user {extra} absent from the corpus"
        )));
    }
    let rows = folds.rows(&design.user_ids)?;
    let y = design.y.as_slice();
    let on_fold = |fold: usize, train: &[usize], eval: &[usize]| {
        let t: Vec<&str> = train.iter().map(|&i| design.user_ids[i].as_str()).collect();
        let e: Vec<&str> = eval.iter().map(|&i| design.user_ids[i].as_str()).collect();
        observer.on_fit(&design.layer_set, fold, &t, &e);
    };
    let g = ridge::grid_search_observed(&rows, &design.x, y, grid, standardize, &on_fold)?;
    let fold_mses = g.fold_mse[g.best].clone();
    let std_err = metrics::fold_standard_error(&fold_mses)?;
    Ok(CvReport {
        layer_set: design.layer_set.clone(),
        alpha_star: g.alpha_star(),
        alphas: g.alphas.clone(),
        mean_mse: g.mean_mse[g.best],
        alpha_mean_mse: g.mean_mse,
        fold_mses,
        std_err,
        user_ids: design.user_ids.clone(),
        y: y.to_vec(),
        oof_predictions: g.oof[g.best].clone(),
        alpha_fold_mse: g.fold_mse,
    })
}
