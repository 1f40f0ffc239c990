//! Greedy forward layer selection.
//!
//! Stage 1 scores every single layer by cross-validated ridge MSE. Each
//! later stage appends every remaining layer to the previous winner and
//! keeps the best. The search stops at the first stage whose best mean MSE
//! is not lower than the previous stage's best by more than `epsilon`; the
//! recommendation is the winner of the last improving stage.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::aggregate::{build_design, LayerSet};
use crate::corpus::Corpus;
use crate::cv::{self, make_folds, CvReport, FitObserver, FoldAssignment, NoObserver};
use crate::error::{Error, Result};
use crate::metrics::{self, format_p, format_short, EvalResult, TTestResult};
use crate::report::{kv_block, RankedRow, RankedTable, DEFAULT_SIGNIFICANCE};
use crate::ridge::{self, AlphaGrid};

pub const PAIRING_NOTE: &str = "significance: two-sided paired t-test on per-user squared out-of-fold errors vs rank 1";

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub max_layers: usize,
    /// Minimum decrease in best mean MSE for a stage to count as an
    /// improvement.
    pub epsilon: f64,
    pub top_k_report: usize,
    pub k: usize,
    pub seed: u64,
    pub grid: AlphaGrid,
    pub standardize: bool,
    pub significance: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_layers: 8,
            epsilon: 0.0,
            top_k_report: 10,
            k: cv::DEFAULT_K,
            seed: 0,
            grid: AlphaGrid::default(),
            standardize: false,
            significance: DEFAULT_SIGNIFICANCE,
        }
    }
}

impl SelectionConfig {
    fn validate(&self, num_layers: usize) -> Result<()> {
        if self.max_layers == 0 {
            return Err(Error::Usage("max_layers must be at least 1".into()));
        }
        if num_layers == 0 {
            return Err(Error::Data("corpus has no layers".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Usage(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Usage(format!(
                "significance must be in (0, 1), got {}",
                self.significance
            )));
        }
        Ok(())
    }

    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let grid: Vec<String> = self.grid.values().iter().map(|a| a.to_string()).collect();
        vec![
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
            ("alpha_grid", grid.join(";")),
            ("standardize", self.standardize.to_string()),
            ("max_layers", self.max_layers.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("top_k_report", self.top_k_report.to_string()),
            ("significance", self.significance.to_string()),
        ]
    }
}

/// One evaluated candidate of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// The layer added to the stage prefix.
    pub layer: usize,
    pub layer_set: LayerSet,
    pub alpha_star: f64,
    pub mean_mse: f64,
    pub std_err: f64,
    /// `None` for rank 1.
    pub p_vs_rank1: Option<f64>,
    /// Significantly worse than rank 1.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// 1-based.
    pub number: usize,
    pub prefix: Vec<usize>,
    /// Ranked ascending by mean MSE, ties toward the lower layer index.
    pub candidates: Vec<Candidate>,
    /// Layers tied with rank 1 on mean MSE (rank 1 included), if any.
    pub tied_with_best: Vec<usize>,
    pub improved: bool,
}

impl Stage {
    pub fn best(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn prefix_label(&self) -> String {
        let p: Vec<String> = self.prefix.iter().map(|l| l.to_string()).collect();
        p.join(";")
    }

    pub fn table(&self, threshold: f64) -> RankedTable {
        let rows = self
            .candidates
            .iter()
            .map(|c| RankedRow {
                label: c.layer.to_string(),
                mean_mse: c.mean_mse,
                p_vs_best: c.p_vs_rank1,
            })
            .collect();
        let prefix = if self.prefix.is_empty() {
            "--".to_string()
        } else {
            self.prefix_label()
        };
        RankedTable::new(
            format!(
                "stage {} ({} layer{}), layers included: {prefix}",
                self.number,
                self.number,
                if self.number == 1 { "" } else { "s" }
            ),
            rows,
            threshold,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Stage `stage` did not beat the previous stage.
    NoImprovement {
        stage: usize,
    },
    MaxLayers,
    LayersExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::NoImprovement { stage } => write!(f, "stage {stage} did not improve"),
            StopReason::MaxLayers => f.write_str("reached max_layers"),
            StopReason::LayersExhausted => f.write_str("no layers left"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub config: SelectionConfig,
    pub num_layers: usize,
    pub n_users: usize,
    pub stages: Vec<Stage>,
    pub stop: StopReason,
    pub recommended: LayerSet,
    pub recommended_alpha: f64,
    pub recommended_mean_mse: f64,
    pub recommended_std_err: f64,
    /// Smallest selected prefix whose best mean MSE is within one standard
    /// error of the recommendation, when smaller than the recommendation.
    pub one_se_alternative: Option<(LayerSet, f64)>,
}

impl SelectionTrace {
    pub fn cross_validate_calls(&self) -> usize {
        self.stages.iter().map(|s| s.candidates.len()).sum()
    }

    /// `stage,candidate_layer,prefix,mean_mse,std_err,p_vs_rank1`, in rank
    /// order within each stage.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,candidate_layer,prefix,mean_mse,std_err,p_vs_rank1\n");
        for st in &self.stages {
            let prefix = st.prefix_label();
            for c in &st.candidates {
                let p = c.p_vs_rank1.map(|p| p.to_string()).unwrap_or_default();
                writeln!(s, "{},{},{prefix},{},{},{p}", st.number, c.layer, c.mean_mse, c.std_err).unwrap();
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            let table = st.table(self.config.significance);
            s.push_str(&table.to_text(self.config.top_k_report));
            if st.tied_with_best.len() > 1 {
                let t: Vec<String> = st.tied_with_best.iter().map(|l| l.to_string()).collect();
                writeln!(
                    s,
                    "tie on best mean MSE among layers {}; lowest index kept",
                    t.join(",")
                )
                .unwrap();
            }
            writeln!(
                s,
                "stage {} best: {} (mean_mse {:.4}, std_err {:.4}, alpha {}){}\n",
                st.number,
                st.best().layer_set,
                st.best().mean_mse,
                st.best().std_err,
                st.best().alpha_star,
                if st.improved { "" } else { " -- no improvement" }
            )
            .unwrap();
        }
        writeln!(s, "stopped: {}", self.stop).unwrap();
        writeln!(
            s,
            "recommended: {} (mean_mse {:.4}, alpha {})",
            self.recommended, self.recommended_mean_mse, self.recommended_alpha
        )
        .unwrap();
        if let Some((ls, m)) = &self.one_se_alternative {
            writeln!(s, "within-one-standard-error alternative: {ls} (mean_mse {m:.4})").unwrap();
        }
        writeln!(s, "{PAIRING_NOTE}").unwrap();
        s
    }

    pub fn recommendation_text(&self) -> String {
        let mut pairs = vec![
            ("layers", self.recommended.to_string()),
            ("alpha", self.recommended_alpha.to_string()),
            ("mean_mse", self.recommended_mean_mse.to_string()),
            ("std_err", self.recommended_std_err.to_string()),
        ];
        if let Some((ls, m)) = &self.one_se_alternative {
            pairs.push(("one_se_layers", ls.to_string()));
            pairs.push(("one_se_mean_mse", m.to_string()));
        }
        kv_block(&pairs)
    }

    /// Config echo plus outcome, key=value.
    pub fn summary_text(&self) -> String {
        let mut pairs = self.config.echo();
        pairs.push(("num_layers", self.num_layers.to_string()));
        pairs.push(("n_users", self.n_users.to_string()));
        pairs.push(("stages", self.stages.len().to_string()));
        pairs.push(("cross_validate_calls", self.cross_validate_calls().to_string()));
        pairs.push(("stop", self.stop.to_string()));
        pairs.push(("recommended", self.recommended.to_string()));
        pairs.push(("recommended_mean_mse", self.recommended_mean_mse.to_string()));
        pairs.push(("pairing", PAIRING_NOTE.to_string()));
        kv_block(&pairs)
    }
}

/// One cross-validation per layer, in index order.
pub fn sweep_layers(c: &Corpus, folds: &FoldAssignment, grid: &AlphaGrid, standardize: bool) -> Result<Vec<CvReport>> {
    if c.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    (1..=c.num_layers())
        .into_par_iter()
        .map(|l| cv::cross_validate(c, &LayerSet::single(l)?, folds, grid, standardize))
        .collect()
}

/// `layer,mean_mse,std_err` rows for plotting the per-layer curve.
pub fn sweep_csv(reports: &[CvReport]) -> String {
    let mut s = String::from("layer,mean_mse,std_err\n");
    for r in reports {
        writeln!(s, "{},{},{}", r.layer_set, r.mean_mse, r.std_err).unwrap();
    }
    s
}

pub fn greedy_select(c: &Corpus, cfg: &SelectionConfig) -> Result<SelectionTrace> {
    greedy_select_observed(c, cfg, &NoObserver)
}

pub fn greedy_select_observed(c: &Corpus, cfg: &SelectionConfig, observer: &dyn FitObserver) -> Result<SelectionTrace> {
    if c.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let num_layers = c.num_layers();
    cfg.validate(num_layers)?;
    let folds = make_folds(&c.user_ids(), cfg.k, cfg.seed)?;

    let mut prefix: Vec<usize> = Vec::new();
    let mut stages: Vec<Stage> = Vec::new();
    let stop = loop {
        let remaining: Vec<usize> = (1..=num_layers).filter(|l| !prefix.contains(l)).collect();
        if remaining.is_empty() {
            break StopReason::LayersExhausted;
        }
        let reports: Vec<(usize, CvReport)> = remaining
            .par_iter()
            .map(|&l| {
                let mut ls = prefix.clone();
                ls.push(l);
                let ls = LayerSet::new(ls)?;
                let r = cv::cross_validate_observed(c, &ls, &folds, &cfg.grid, cfg.standardize, observer)?;
                Ok((l, r))
            })
            .collect::<Result<_>>()?;
        let mut stage = rank_stage(stages.len() + 1, &prefix, reports, cfg.significance)?;
        stage.improved = match stages.last() {
            None => true,
            Some(prev) => stage.best().mean_mse < prev.best().mean_mse - cfg.epsilon,
        };
        let improved = stage.improved;
        let chosen = stage.best().layer;
        stages.push(stage);
        if !improved {
            break StopReason::NoImprovement { stage: stages.len() };
        }
        prefix.push(chosen);
        if prefix.len() >= cfg.max_layers {
            break StopReason::MaxLayers;
        }
    };

    let last_improving = stages
        .iter()
        .rev()
        .find(|s| s.improved)
        .expect("stage 1 always improves");
    let best = last_improving.best().clone();
    let threshold = best.mean_mse + best.std_err;
    let one_se_alternative = stages
        .iter()
        .filter(|s| s.improved && s.number < last_improving.number)
        .find(|s| s.best().mean_mse <= threshold)
        .map(|s| (s.best().layer_set.clone(), s.best().mean_mse));

    Ok(SelectionTrace {
        config: cfg.clone(),
        num_layers,
        n_users: c.len(),
        stop,
        recommended: best.layer_set,
        recommended_alpha: best.alpha_star,
        recommended_mean_mse: best.mean_mse,
        recommended_std_err: best.std_err,
        one_se_alternative,
        stages,
    })
}

fn rank_stage(number: usize, prefix: &[usize], mut reports: Vec<(usize, CvReport)>, threshold: f64) -> Result<Stage> {
    reports.sort_by(|a, b| a.1.mean_mse.total_cmp(&b.1.mean_mse).then(a.0.cmp(&b.0)));
    let best_mse = reports[0].1.mean_mse;
    let best_errors = reports[0].1.squared_errors();
    let tied_with_best: Vec<usize> = reports
        .iter()
        .filter(|(_, r)| r.mean_mse == best_mse)
        .map(|(l, _)| *l)
        .collect();
    let candidates = reports
        .iter()
        .enumerate()
        .map(|(i, (layer, r))| {
            let p = if i == 0 {
                None
            } else {
                Some(metrics::paired_t_test(&r.squared_errors(), &best_errors)?.p_two_sided)
            };
            Ok(Candidate {
                layer: *layer,
                layer_set: r.layer_set.clone(),
                alpha_star: r.alpha_star,
                mean_mse: r.mean_mse,
                std_err: r.std_err,
                p_vs_rank1: p,
                significant: matches!(p, Some(p) if p < threshold) && r.mean_mse > best_mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage {
        number,
        prefix: prefix.to_vec(),
        candidates,
        tied_with_best: if tied_with_best.len() > 1 {
            tied_with_best
        } else {
            Vec::new()
        },
        improved: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalConfig {
    pub k: usize,
    pub seed: u64,
    pub grid: AlphaGrid,
    pub standardize: bool,
    pub rel_x: f64,
    pub rel_y: f64,
}

impl Default for FinalConfig {
    fn default() -> Self {
        FinalConfig {
            k: cv::DEFAULT_K,
            seed: 0,
            grid: AlphaGrid::default(),
            standardize: false,
            rel_x: 1.0,
            rel_y: 1.0,
        }
    }
}

/// Held-out evaluation of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalReport {
    pub layer_set: LayerSet,
    pub alpha_star: f64,
    pub cv_mean_mse: f64,
    pub n_train: usize,
    pub eval: EvalResult,
    pub user_ids: Vec<String>,
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
    pub baseline_mse: Option<f64>,
    /// Ours minus baseline, on per-user squared errors.
    pub ttest: Option<TTestResult>,
}

impl FinalReport {
    pub fn to_text(&self, cfg: &FinalConfig) -> String {
        let mut pairs = vec![
            ("layers", self.layer_set.to_string()),
            ("label", self.layer_set.plus_label()),
            ("n_train", self.n_train.to_string()),
            ("n", self.eval.n.to_string()),
            ("alpha_star", self.alpha_star.to_string()),
            ("cv_mean_mse", self.cv_mean_mse.to_string()),
            ("mse", self.eval.mse.to_string()),
            ("pearson_r", self.eval.pearson_r.to_string()),
            ("r_dis", self.eval.r_dis.to_string()),
            ("reliability_x", cfg.rel_x.to_string()),
            ("reliability_y", cfg.rel_y.to_string()),
        ];
        for w in &self.eval.warnings {
            pairs.push(("warning", w.clone()));
        }
        if let (Some(b), Some(t)) = (self.baseline_mse, &self.ttest) {
            pairs.push(("baseline_mse", b.to_string()));
            pairs.push(("t", t.t.to_string()));
            pairs.push(("df", t.df.to_string()));
            pairs.push(("p", format_p(t.p_two_sided)));
            if t.degenerate {
                pairs.push(("ttest_degenerate", "true".into()));
            }
        }
        let mut s = kv_block(&pairs);
        writeln!(s, "summary={}", self.summary()).unwrap();
        s
    }

    /// `L16+18+19 → r_dis .554, MSE .7206`.
    pub fn summary(&self) -> String {
        format!(
            "{} → r_dis {}, MSE {}",
            self.layer_set.plus_label(),
            format_short(self.eval.r_dis, 3),
            format_short(self.eval.mse, 4)
        )
    }

    /// `user_id,y,yhat`.
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("user_id,y,yhat\n");
        for ((u, y), p) in self.user_ids.iter().zip(&self.y).zip(&self.yhat) {
            writeln!(s, "{u},{y},{p}").unwrap();
        }
        s
    }
}

/// Choose α by cross-validation on `train`, fit on all of `train`, and
/// score `test`. With `baseline` (user_id → prediction), a paired t-test
/// on per-user squared errors is added.
pub fn evaluate_final(
    train: &Corpus,
    test: &Corpus,
    ls: &LayerSet,
    cfg: &FinalConfig,
    baseline: Option<&BTreeMap<String, f64>>,
) -> Result<FinalReport> {
    let mismatch = train.manifest.incompatibilities(&test.manifest);
    if !mismatch.is_empty() {
        return Err(Error::ManifestMismatch(mismatch));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("empty train or test corpus".into()));
    }
    let folds = make_folds(&train.user_ids(), cfg.k, cfg.seed)?;
    let cv_report = cv::cross_validate(train, ls, &folds, &cfg.grid, cfg.standardize)?;
    let train_design = build_design(train, ls)?;
    let model = ridge::fit(
        &train_design.x,
        train_design.y.as_slice(),
        cv_report.alpha_star,
        cfg.standardize,
    )?;
    let test_design = build_design(test, ls)?;
    let yhat = model.predict(&test_design.x)?;
    let y = test_design.y.as_slice().to_vec();
    let eval = metrics::evaluate(&y, &yhat, cfg.rel_x, cfg.rel_y)?;

    let (baseline_mse, ttest) = match baseline {
        None => (None, None),
        Some(b) => {
            let base: Vec<f64> = test_design
                .user_ids
                .iter()
                .map(|u| {
                    b.get(u)
                        .copied()
                        .ok_or_else(|| Error::Data(format!("baseline predictions missing user {u}")))
                })
                .collect::<Result<_>>()?;
            let ours = metrics::squared_errors(&y, &yhat)?;
            let theirs = metrics::squared_errors(&y, &base)?;
            (
                Some(metrics::mse(&y, &base)?),
                Some(metrics::paired_t_test(&ours, &theirs)?),
            )
        }
    };
    Ok(FinalReport {
        layer_set: ls.clone(),
        alpha_star: cv_report.alpha_star,
        cv_mean_mse: cv_report.mean_mse,
        n_train: train.len(),
        eval,
        user_ids: test_design.user_ids,
        y,
        yhat,
        baseline_mse,
        ttest,
    })
}

/// Parse a `user_id,...,yhat` CSV (e.g. an earlier `predictions.csv`).
pub fn read_predictions(path: impl AsRef<std::path::Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::format(0, e.to_string()))?.clone();
    let id_col = headers.iter().position(|h| h == "user_id");
    let pred_col = headers.iter().position(|h| h == "yhat");
    let (Some(id_col), Some(pred_col)) = (id_col, pred_col) else {
        return Err(Error::format(0, "predictions CSV needs `user_id` and `yhat` columns"));
    };
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let v: f64 = rec
            .get(pred_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::format(offset, "unparseable yhat"))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        if out.insert(id.clone(), v).is_some() {
            return Err(Error::Data(format!("duplicate prediction for user {id}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthSpec};

    fn report(layer: usize, mean_mse: f64, errors: &[f64]) -> (usize, CvReport) {
        let n = errors.len();
        (
            layer,
            CvReport {
                layer_set: LayerSet::single(layer).unwrap(),
                alpha_star: 10.0,
                alphas: vec![10.0],
                alpha_fold_mse: vec![vec![mean_mse; 2]],
                alpha_mean_mse: vec![mean_mse],
                fold_mses: vec![mean_mse; 2],
                mean_mse,
                std_err: 0.0,
                user_ids: (0..n).map(|i| format!("u{i}")).collect(),
                y: vec![0.0; n],
                oof_predictions: errors.iter().map(|e| e.sqrt()).collect(),
            },
        )
    }

    #[test]
    fn ties_rank_the_lower_layer_first() {
        let e = [1.0, 4.0, 9.0, 16.0];
        let stage = rank_stage(
            1,
            &[],
            vec![report(9, 0.5, &e), report(4, 0.5, &e), report(2, 0.7, &e)],
            0.05,
        )
        .unwrap();
        let order: Vec<usize> = stage.candidates.iter().map(|c| c.layer).collect();
        assert_eq!(order, vec![4, 9, 2]);
        assert_eq!(stage.tied_with_best, vec![4, 9]);
        assert_eq!(stage.best().p_vs_rank1, None);
        assert_eq!(stage.candidates[1].p_vs_rank1, Some(1.0));
    }

    #[test]
    fn significance_needs_a_worse_mean() {
        let best = [0.1, 0.2, 0.1, 0.2, 0.1, 0.2];
        let worse = [1.1, 1.3, 1.0, 1.2, 1.1, 1.4];
        let stage = rank_stage(2, &[5], vec![report(3, 1.18, &worse), report(8, 0.15, &best)], 0.05).unwrap();
        assert_eq!(stage.best().layer, 8);
        assert!(stage.candidates[1].significant);
        assert_eq!(stage.prefix_label(), "5");
        assert!(stage.table(0.05).to_text(10).contains("layers included: 5"));
    }

    fn planted(n: usize, seed: u64) -> Corpus {
        let spec = SynthSpec::new(n, 5, 16)
            .with_signal(2, 0.6)
            .with_signal(4, 0.4)
            .with_noise(0.3)
            .with_seed(seed);
        synth::generate(&spec).unwrap().corpus
    }

    #[test]
    fn greedy_finds_both_planted_layers_and_stops() {
        let c = planted(300, 1);
        let t = greedy_select(&c, &SelectionConfig::default()).unwrap();
        assert_eq!(t.recommended.layers(), &[2, 4]);
        assert_eq!(t.stop, StopReason::NoImprovement { stage: 3 });
        assert!(!t.stages[2].improved);
        assert_eq!(t.cross_validate_calls(), 5 + 4 + 3);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + 12);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,2,,"));
        assert!(t.to_text().contains("stopped: stage 3 did not improve"));
        assert!(t.recommendation_text().starts_with("layers=2;4\n"));
        assert!(t.summary_text().contains("cross_validate_calls=12\n"));
    }

    #[test]
    fn max_layers_and_exhaustion_stop_the_search() {
        let c = planted(150, 2);
        let one = SelectionConfig {
            max_layers: 1,
            ..Default::default()
        };
        let t = greedy_select(&c, &one).unwrap();
        assert_eq!((t.stop, t.stages.len()), (StopReason::MaxLayers, 1));

        let eager = SelectionConfig {
            epsilon: -1.0,
            ..Default::default()
        };
        assert!(greedy_select(&c, &eager).is_err());
        let zero = SelectionConfig {
            max_layers: 0,
            ..Default::default()
        };
        assert!(greedy_select(&c, &zero).is_err());
    }

    #[test]
    fn sweep_covers_every_layer_in_order() {
        let c = planted(120, 3);
        let folds = make_folds(&c.user_ids(), 5, 0).unwrap();
        let r = sweep_layers(&c, &folds, &AlphaGrid::default(), false).unwrap();
        let layers: Vec<String> = r.iter().map(|r| r.layer_set.to_string()).collect();
        assert_eq!(layers, ["1", "2", "3", "4", "5"]);
        let best = r.iter().min_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse)).unwrap();
        assert_eq!(best.layer_set.layers(), &[2]);
        assert!(sweep_csv(&r).starts_with("layer,mean_mse,std_err\n1,"));
    }

    #[test]
    fn final_rejects_mismatched_models_and_missing_baseline_users() {
        let train = planted(100, 4);
        let mut test = planted(50, 5);
        let ls = LayerSet::new(vec![2, 4]).unwrap();
        let cfg = FinalConfig::default();
        let r = evaluate_final(&train, &test, &ls, &cfg, None).unwrap();
        assert_eq!(r.eval.n, 50);
        assert!(r.eval.mse < 0.2);
        assert!(r.predictions_csv().starts_with("user_id,y,yhat\n"));
        assert!(r.summary().starts_with("L2+4 → r_dis ."), "{}", r.summary());

        let partial: BTreeMap<String, f64> = [("u00000".to_string(), 0.0)].into();
        assert!(matches!(
            evaluate_final(&train, &test, &ls, &cfg, Some(&partial)),
            Err(Error::Data(_))
        ));

        test.manifest.model_name = "other".into();
        assert!(matches!(
            evaluate_final(&train, &test, &ls, &cfg, None),
            Err(Error::ManifestMismatch(_))
        ));
    }
}
