//! Adam, the mini-batch training loop, α grid search, identity-label
//! propagation and cross-validated experiments.
//!
//! Everything here is sequential and seeded: the same configuration, seed and
//! corpus reproduce every logged number bit for bit. Gradients of a batch are
//! accumulated in example order.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_folds, AuxTask, Comment, LabelSchema, POSITIVE_THRESHOLD};
use crate::embed::EmbeddingTable;
use crate::loss::{loss_grad_heads, multitask_loss, LossConfig, LossExample};
use crate::metrics::{bias_report, BiasReport, ScoredExample, Score, DEFAULT_POWER};
use crate::nn::{backward_into, embed_sequence, forward, init_params, predict, spatial_dropout_mask, Hyper, ModelParams, ParamGrads, Pooling, Prediction};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: Some(5.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One Adam update with bias correction. The gradient is first clipped to
/// `clip_norm` by global norm. Returns the norm of the gradient actually applied.
pub fn adam_step(params: &mut ModelParams, grads: &ParamGrads, state: &mut AdamState, cfg: &AdamConfig) -> Result<f64> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&state.m)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite { layer: "gradient", timestep: None });
    }
    let norm = grads.global_norm();
    let scale = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..p.len() {
            let gi = g[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(norm * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub aux_task: AuxTask,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
    pub alpha_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            aux_task: AuxTask::Identities,
            patience: Some(5),
            alpha_grid: alloc::vec![0.2, 0.4, 0.5, 0.6, 0.8],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, hyper: &Hyper) -> Result<()> {
        hyper.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::InvalidArgument("invalid Adam hyperparameters".into()));
        }
        if self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("alpha grid values must lie in [0, 1]".into()));
        }
        if self.loss.heads != hyper.heads {
            return Err(Error::ShapeMismatch { what: "loss head count", expected: hyper.heads, found: self.loss.heads });
        }
        if self.aux_task == AuxTask::None && hyper.heads != 0 {
            return Err(Error::InvalidArgument("aux_task = none requires zero auxiliary heads".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Outcome of training on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub alpha: f64,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub report: Option<BiasReport>,
}

fn loss_examples<'a>(batch: &[&'a Comment], preds: &'a [Prediction], task: AuxTask) -> Vec<LossExample<'a>> {
    batch
        .iter()
        .zip(preds)
        .map(|(c, p)| LossExample { y_hat: p.toxicity, aux_hat: &p.auxiliary, y: c.y, aux: c.aux_targets(task), beta: c.beta })
        .collect()
}

/// Loss of `params` on `comments` without dropout.
pub fn dataset_loss(params: &ModelParams, table: &EmbeddingTable, comments: &[Comment], cfg: &TrainConfig) -> Result<f64> {
    let preds = predict(params, table, comments)?;
    let refs: Vec<&Comment> = comments.iter().collect();
    Ok(multitask_loss(&loss_examples(&refs, &preds, cfg.aux_task), &cfg.loss)?.total)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::TrainingDiverged { epoch, detail: e.to_string() },
        other => other,
    }
}

/// Trains one model and keeps the parameters with the lowest validation loss.
pub fn train_fold(
    train: &[Comment],
    val: &[Comment],
    table: &EmbeddingTable,
    hyper: &Hyper,
    cfg: &TrainConfig,
) -> Result<(ModelParams, FoldRecord)> {
    cfg.validate(hyper)?;
    if train.is_empty() {
        return Err(Error::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if table.dim() != hyper.embed_dim {
        return Err(Error::ShapeMismatch { what: "embedding width", expected: hyper.embed_dim, found: table.dim() });
    }
    let mut params = init_params(hyper, cfg.seed)?;
    let mut record = FoldRecord {
        fold: 0,
        alpha: cfg.loss.alpha,
        epochs: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        report: None,
    };
    if cfg.epochs == 0 {
        return Ok((params, record));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let d = hyper.embed_dim;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Comment> = chunk.iter().map(|&i| &train[i]).collect();
            let mut traces = Vec::with_capacity(batch.len());
            for c in &batch {
                let (embedded, len) = embed_sequence(table, &c.token_ids, c.true_length)?;
                let mask = (hyper.dropout_rate > 0.0).then(|| spatial_dropout_mask(d, hyper.dropout_rate, rng.next_u64()));
                traces.push(forward(&params, &embedded, len, mask.as_deref()).map_err(|e| diverged(epoch, e))?);
            }
            let preds: Vec<Prediction> = traces
                .iter()
                .map(|t| Prediction { toxicity: t.toxicity, auxiliary: t.auxiliary.clone() })
                .collect();
            let examples = loss_examples(&batch, &preds, cfg.aux_task);
            let breakdown = multitask_loss(&examples, &cfg.loss)?;
            loss_sum += breakdown.per_example.iter().sum::<f64>();
            let head_grads = loss_grad_heads(&examples, &cfg.loss)?;
            grads.fill(0.0);
            for (trace, hg) in traces.iter().zip(&head_grads) {
                backward_into(&params, trace, hg, &mut grads)?;
            }
            adam_step(&mut params, &grads, &mut adam, &cfg.adam).map_err(|e| diverged(epoch, e))?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = dataset_loss(&params, table, val, cfg).map_err(|e| diverged(epoch, e))?;
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(Error::TrainingDiverged { epoch, detail: "non-finite validation loss".into() });
        }
        record.epochs.push(EpochLog { epoch, train_loss, val_loss });
        if val_loss < best_loss {
            best_loss = val_loss;
            best.clone_from(&params);
            record.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    record.best_val_loss = Some(best_loss);
    Ok((best, record))
}

/// Pairs model scores with gold labels and identity memberships (label ≥ 0.5).
pub fn scored_examples(comments: &[Comment], preds: &[Prediction], schema: &LabelSchema) -> Vec<ScoredExample> {
    comments
        .iter()
        .zip(preds)
        .map(|(c, p)| ScoredExample::new(p.toxicity, c.y_bin, c.memberships(schema, POSITIVE_THRESHOLD)))
        .collect()
}

/// Bias report of `params` on `comments`, one subgroup per schema identity.
pub fn evaluate(params: &ModelParams, table: &EmbeddingTable, comments: &[Comment], schema: &LabelSchema, p: f64) -> Result<BiasReport> {
    let preds = predict(params, table, comments)?;
    Ok(bias_report(&scored_examples(comments, &preds, schema), &schema.identities, p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    /// Generalized mean of Subgroup AUCs on the validation split.
    pub score: Score,
    pub overall_auc: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub chosen_alpha: f64,
    pub points: Vec<GridPoint>,
}

/// Picks the grid point with the highest score; ties go to the larger α.
/// When no point has a defined generalized mean, overall AUC decides.
fn choose_alpha(points: &[GridPoint]) -> f64 {
    let key = |p: &GridPoint| -> Option<f64> {
        if points.iter().any(|q| q.score.is_defined()) {
            p.score.value()
        } else {
            p.overall_auc.value()
        }
    };
    let mut best: Option<(f64, f64)> = None;
    for p in points {
        let k = key(p).unwrap_or(f64::NEG_INFINITY);
        best = match best {
            Some((bk, ba)) if k < bk || (k == bk && p.alpha <= ba) => Some((bk, ba)),
            _ => Some((k, p.alpha)),
        };
    }
    best.map_or(f64::NAN, |(_, a)| a)
}

/// Trains one model per α on the given split and selects α by validation
/// generalized mean bias AUC.
pub fn grid_search_alpha(
    train: &[Comment],
    val: &[Comment],
    table: &EmbeddingTable,
    hyper: &Hyper,
    schema: &LabelSchema,
    grid: &[f64],
    cfg: &TrainConfig,
    p: f64,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let mut c = cfg.clone();
        c.loss.alpha = alpha;
        let (params, _) = train_fold(train, val, table, hyper, &c)?;
        let report = evaluate(&params, table, val, schema, p)?;
        points.push(GridPoint { alpha, score: report.generalized_mean_bias_auc, overall_auc: report.overall_auc });
    }
    Ok(GridSearch { chosen_alpha: choose_alpha(&points), points })
}

/// Architecture and schedule of the identity propagation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub hyper: Hyper,
    pub train: TrainConfig,
}

/// Trains an identity predictor on `annotated` (mean pooling, identity heads
/// only, unit weights) and writes its scores into every comment of
/// `unannotated`, marking them propagated and re-deriving `β` with `c`.
/// Returns how many comments were filled.
pub fn propagate_identities(
    annotated: &[Comment],
    unannotated: &mut [Comment],
    table: &EmbeddingTable,
    pcfg: &PropagationConfig,
    c: f64,
) -> Result<usize> {
    if unannotated.is_empty() {
        return Ok(0);
    }
    if annotated.is_empty() {
        return Err(Error::EmptySplit("annotated"));
    }
    let k = annotated[0].identity_labels.len();
    let hyper = Hyper { pooling: Pooling::Mean, heads: k, ..pcfg.hyper.clone() };
    let mut cfg = pcfg.train.clone();
    cfg.aux_task = AuxTask::Identities;
    cfg.loss.alpha = 0.0;
    cfg.loss.heads = k;

    let unit: Vec<Comment> = annotated.iter().map(|c| Comment { beta: 1.0, ..c.clone() }).collect();
    let (train, val): (Vec<Comment>, Vec<Comment>) = if unit.len() >= 5 {
        let plan = make_folds(unit.len(), 5, cfg.seed)?;
        let val_idx = plan.validation(0);
        (
            plan.train(0).into_iter().map(|i| unit[i].clone()).collect(),
            val_idx.iter().map(|&i| unit[i].clone()).collect(),
        )
    } else {
        (unit.clone(), unit)
    };
    let (params, _) = train_fold(&train, &val, table, &hyper, &cfg)?;
    let preds = predict(&params, table, unannotated)?;
    for (comment, pred) in unannotated.iter_mut().zip(preds) {
        comment.identity_labels = pred.auxiliary;
        comment.needs_propagation = false;
        comment.propagated = true;
        comment.reweight(c);
    }
    Ok(unannotated.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hyper: Hyper,
    pub train: TrainConfig,
    pub folds: usize,
    /// Run the α grid search on fold 0 and train every fold with the winner.
    pub grid_search: bool,
    pub propagation: Option<PropagationConfig>,
    pub p: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hyper: Hyper::default(),
            train: TrainConfig::default(),
            folds: 5,
            grid_search: false,
            propagation: None,
            p: DEFAULT_POWER,
        }
    }
}

/// Headline numbers of one fold, kept for cross-run significance tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub auc: Score,
    pub generalized_mean_bias_auc: Score,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl FoldMetrics {
    pub fn from_report(r: &BiasReport) -> Self {
        FoldMetrics {
            auc: r.overall_auc,
            generalized_mean_bias_auc: r.generalized_mean_bias_auc,
            precision: r.prf1.precision,
            recall: r.prf1.recall,
            f1: r.prf1.f1,
        }
    }

    /// Looks a metric up by name: `auc`, `gmb`, `precision`, `recall`, `f1`.
    pub fn get(&self, metric: &str) -> Option<Score> {
        match metric {
            "auc" => Some(self.auc),
            "gmb" | "generalized_mean_bias_auc" => Some(self.generalized_mean_bias_auc),
            "precision" => Some(Score::Defined(self.precision)),
            "recall" => Some(Score::Defined(self.recall)),
            "f1" => Some(Score::Defined(self.f1)),
            _ => None,
        }
    }
}

/// Means over folds (undefined fold values are skipped), plus the per-fold values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean: FoldMetrics,
    pub per_fold: Vec<FoldMetrics>,
}

fn mean_defined(xs: impl Iterator<Item = Score>) -> Score {
    let vals: Vec<f64> = xs.filter_map(Score::value).collect();
    if vals.is_empty() {
        Score::Undefined
    } else {
        Score::Defined(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn aggregate(per_fold: Vec<FoldMetrics>) -> AggregateReport {
    let n = per_fold.len().max(1) as f64;
    let mean = FoldMetrics {
        auc: mean_defined(per_fold.iter().map(|f| f.auc)),
        generalized_mean_bias_auc: mean_defined(per_fold.iter().map(|f| f.generalized_mean_bias_auc)),
        precision: per_fold.iter().map(|f| f.precision).sum::<f64>() / n,
        recall: per_fold.iter().map(|f| f.recall).sum::<f64>() / n,
        f1: per_fold.iter().map(|f| f.f1).sum::<f64>() / n,
    };
    AggregateReport { mean, per_fold }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub alpha: f64,
    pub config: ExperimentConfig,
    pub propagated: usize,
    pub grid: Option<GridSearch>,
    pub folds: Vec<FoldRecord>,
    pub aggregate: AggregateReport,
    /// Filled in by callers that have a clock; excluded from determinism checks.
    pub wall_clock_secs: Option<f64>,
}

pub struct ExperimentOutput {
    pub record: RunRecord,
    /// Best parameters of each fold, in fold order.
    pub models: Vec<ModelParams>,
}

/// Propagate → split → (grid search) → train → evaluate, over every fold.
pub fn run_experiment(
    mut comments: Vec<Comment>,
    table: &EmbeddingTable,
    schema: &LabelSchema,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput> {
    cfg.train.validate(&cfg.hyper)?;
    comments.iter_mut().for_each(|c| c.reweight(cfg.train.loss.c));
    let unannotated = comments.iter().filter(|c| c.needs_propagation).count();
    let mut propagated = 0;
    if unannotated > 0 {
        let pcfg = cfg.propagation.as_ref().ok_or(Error::PropagationRequired { unannotated })?;
        let (mut todo, done): (Vec<Comment>, Vec<Comment>) = comments.into_iter().partition(|c| c.needs_propagation);
        propagated = propagate_identities(&done, &mut todo, table, pcfg, cfg.train.loss.c)?;
        comments = done;
        comments.extend(todo);
        comments.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let plan = make_folds(comments.len(), cfg.folds, cfg.train.seed)?;
    let split = |fold: usize| -> (Vec<Comment>, Vec<Comment>) {
        (
            plan.train(fold).into_iter().map(|i| comments[i].clone()).collect(),
            plan.validation(fold).iter().map(|&i| comments[i].clone()).collect(),
        )
    };

    let mut train_cfg = cfg.train.clone();
    let grid = if cfg.grid_search {
        let (tr, va) = split(0);
        let g = grid_search_alpha(&tr, &va, table, &cfg.hyper, schema, &cfg.train.alpha_grid, &cfg.train, cfg.p)?;
        train_cfg.loss.alpha = g.chosen_alpha;
        Some(g)
    } else {
        None
    };

    let mut folds = Vec::with_capacity(cfg.folds);
    let mut models = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (tr, va) = split(fold);
        let (params, mut rec) = train_fold(&tr, &va, table, &cfg.hyper, &train_cfg).map_err(|e| match e {
            Error::TrainingDiverged { epoch, detail } => {
                Error::TrainingDiverged { epoch, detail: format!("fold {fold}: {detail}") }
            }
            other => other,
        })?;
        rec.fold = fold;
        rec.report = Some(evaluate(&params, table, &va, schema, cfg.p)?);
        folds.push(rec);
        models.push(params);
    }
    let aggregate = aggregate(folds.iter().filter_map(|f| f.report.as_ref()).map(FoldMetrics::from_report).collect());
    Ok(ExperimentOutput {
        record: RunRecord {
            seed: cfg.train.seed,
            alpha: train_cfg.loss.alpha,
            config: cfg.clone(),
            propagated,
            grid,
            folds,
            aggregate,
            wall_clock_secs: None,
        },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Pooling;
    use alloc::vec;

    fn one_param_hyper() -> Hyper {
        Hyper { embed_dim: 1, hidden: 1, dense1: 1, dense2: 1, heads: 0, dropout_rate: 0.0, pooling: Pooling::Attention }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = init_params(&one_param_hyper(), 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // At t = 1, m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps).
        let mut p = init_params(&one_param_hyper(), 1).unwrap();
        let before = p.attention.w[0];
        let mut g = p.zeros_like();
        g.attention.w[0] = 1.0;
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { learning_rate: 0.1, clip_norm: None, ..AdamConfig::default() };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((p.attention.w[0] - before + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_clips_global_norm() {
        let mut p = init_params(&one_param_hyper(), 1).unwrap();
        let mut g = p.zeros_like();
        g.attention.w[0] = 30.0;
        g.dense1.b[0] = 40.0;
        let mut st = AdamState::new(&p);
        let applied = adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert!((applied - 5.0).abs() < 1e-12);
        // m after one step is (1 − β1) · clipped grad
        let m_norm = st.m.global_norm() / (1.0 - 0.9);
        assert!((m_norm - 5.0).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = init_params(&one_param_hyper(), 1).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.dense2.b[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn alpha_choice_prefers_larger_on_ties() {
        let pt = |alpha, s: Option<f64>| GridPoint { alpha, score: s.into(), overall_auc: Score::Defined(0.5) };
        assert_eq!(choose_alpha(&[pt(0.2, Some(0.8)), pt(0.6, Some(0.8)), pt(0.4, Some(0.7))]), 0.6);
        assert_eq!(choose_alpha(&[pt(0.2, Some(0.9)), pt(0.6, None)]), 0.2);
        assert_eq!(choose_alpha(&[pt(0.3, None)]), 0.3);
    }

    #[test]
    fn aggregate_means() {
        let f = |auc: f64, f1: f64| FoldMetrics {
            auc: Score::Defined(auc),
            generalized_mean_bias_auc: Score::Undefined,
            precision: 1.0,
            recall: 0.5,
            f1,
        };
        let agg = aggregate(vec![f(0.8, 0.5), f(0.6, 0.7)]);
        assert!((agg.mean.auc.value().unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(agg.mean.generalized_mean_bias_auc, Score::Undefined);
        assert!((agg.mean.f1 - 0.6).abs() < 1e-15);
        assert_eq!(agg.per_fold.len(), 2);
    }
}
