//! Losses, the training loop, top-k evaluation, checkpoint manifests, the
//! ablation runner, and the coordinate-only nearest-POI baseline.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, forward, EvalContext, TensorMap};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{CheckInLog, CoordBounds, DatasetSplit, History, PoiRegistry, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, stream};
use crate::social::{neighbor_contexts, NeighborGraph};
use crate::tensor::Tensor;

/// Guards `ln` against a probability that rounded to zero.
const PROB_FLOOR: f64 = 1e-12;

/// The accuracy cutoffs every report carries.
pub const TOP_KS: [usize; 4] = [1, 5, 10, 20];

/// Cross-entropy against the target POI: `-ln probs[target]`.
pub fn loss_poi(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(PROB_FLOOR).ln()
}

/// Squared coordinate error, summed over the two axes.
pub fn loss_traj(pred: (f64, f64), target: (f64, f64)) -> f64 {
    let dx = pred.0 - target.0;
    let dy = pred.1 - target.1;
    dx * dx + dy * dy
}

/// Highest-probability POI; ties break toward the lowest id.
pub fn argmax_poi(probs: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as u32
}

/// Squared distance between the argmax POI's registry coordinate (a
/// constant w.r.t. differentiation) and the predicted coordinate.
pub fn loss_consistency(probs: &[f64], pred: (f64, f64), registry: &PoiRegistry) -> f64 {
    let inferred = registry.coord(argmax_poi(probs));
    loss_traj(inferred, pred)
}

/// Batch-averaged loss terms and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub batch: usize,
}

/// Combines batch-mean loss terms under the weights; terms with zero
/// weight contribute exactly zero.
pub fn total_loss(theta: (f64, f64, f64), l1: f64, l2: f64, l3: f64, batch: usize) -> LossBreakdown {
    let (t1, t2, t3) = theta;
    let keep = |t: f64, l: f64| if t > 0.0 { l } else { 0.0 };
    let (l1, l2, l3) = (keep(t1, l1), keep(t2, l2), keep(t3, l3));
    LossBreakdown { l1, l2, l3, total: t1 * l1 + t2 * l2 + t3 * l3, batch }
}

/// 1-based rank of the target under descending probability, ties broken
/// by lowest POI id: `#{p_j > p_t} + #{j < t : p_j == p_t} + 1`.
pub fn target_rank(probs: &[f64], target: usize) -> usize {
    let pt = probs[target];
    let mut rank = 1;
    for (j, &p) in probs.iter().enumerate() {
        if p > pt || (p == pt && j < target) {
            rank += 1;
        }
    }
    rank
}

/// The POI whose coordinate is nearest to the predicted point (ties to
/// the lowest id) — the prediction rule of the coordinate-only baseline.
pub fn aux_only_predict(pred: (f64, f64), registry: &PoiRegistry) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for p in 0..registry.poi_count() as u32 {
        let d = loss_traj(registry.coord(p), pred);
        if d < best_d {
            best_d = d;
            best = p;
        }
    }
    best
}

/// All POIs sorted by distance to the predicted point (ties by id) — the
/// full ranking the baseline is scored with.
pub fn aux_only_ranking(pred: (f64, f64), registry: &PoiRegistry) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..registry.poi_count() as u32).collect();
    ids.sort_by(|&a, &b| {
        let da = loss_traj(registry.coord(a), pred);
        let db = loss_traj(registry.coord(b), pred);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    ids
}

/// Rank of the target under the distance ordering, computed by counting.
fn aux_only_rank(pred: (f64, f64), registry: &PoiRegistry, target: u32) -> usize {
    let dt = loss_traj(registry.coord(target), pred);
    let mut rank = 1;
    for p in 0..registry.poi_count() as u32 {
        let d = loss_traj(registry.coord(p), pred);
        if d < dt || (d == dt && p < target) {
            rank += 1;
        }
    }
    rank
}

/// One evaluation/epoch event in the metrics log. Serialized as one JSON
/// object per line; optional distances are `null` for variants without
/// the corresponding head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub acc20: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub mean_aux_dist: Option<f64>,
    pub mean_consistency_dist: Option<f64>,
    pub seed: u64,
    pub variant: String,
}

pub fn records_to_jsonl(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Accuracy and loss summary of one split under fixed parameters.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Accuracy at the cutoffs in [`TOP_KS`] order.
    pub acc: [f64; 4],
    pub losses: LossBreakdown,
    pub mean_aux_dist: Option<f64>,
    pub mean_consistency_dist: Option<f64>,
    pub seed: u64,
    pub variant: Variant,
}

impl EvalReport {
    pub fn is_monotone(&self) -> bool {
        self.acc[0] <= self.acc[1] && self.acc[1] <= self.acc[2] && self.acc[2] <= self.acc[3]
    }

    pub fn record(&self, epoch: usize, split: &str) -> MetricsRecord {
        MetricsRecord {
            epoch,
            split: split.to_string(),
            acc1: self.acc[0],
            acc5: self.acc[1],
            acc10: self.acc[2],
            acc20: self.acc[3],
            l1: self.losses.l1,
            l2: self.losses.l2,
            l3: self.losses.l3,
            total: self.losses.total,
            mean_aux_dist: self.mean_aux_dist,
            mean_consistency_dist: self.mean_consistency_dist,
            seed: self.seed,
            variant: self.variant.to_string(),
        }
    }
}

/// Where instances come from: the log for neighbor trajectories, the
/// registry for coordinates, and optionally the social graph.
#[derive(Clone, Copy)]
pub struct InstanceProvider<'a> {
    pub log: &'a CheckInLog,
    pub registry: &'a PoiRegistry,
    pub social: Option<&'a NeighborGraph>,
}

impl<'a> InstanceProvider<'a> {
    /// Neighbor windows for one prediction instance, future-masked at the
    /// instance's last observed timestamp.
    pub fn neighbors_for(&self, model: &Model, window: &TrajectoryWindow) -> Vec<History> {
        let cfg = model.config();
        if !cfg.use_social {
            return Vec::new();
        }
        let Some(graph) = self.social else {
            return Vec::new();
        };
        neighbor_contexts(
            self.log,
            self.registry,
            graph,
            window.user,
            window.history.last_ts,
            cfg.n,
            cfg.k_max,
        )
        .into_iter()
        .map(|(_, h)| h)
        .collect()
    }

    pub fn coord_table(&self) -> Result<Tensor> {
        Tensor::new(vec![self.registry.poi_count(), 2], self.registry.coord_table())
    }
}

/// A split with its neighbor windows resolved once up front.
pub struct PreparedSplit {
    pub windows: Vec<TrajectoryWindow>,
    pub neighbors: Vec<Vec<History>>,
}

pub fn prepare(
    provider: &InstanceProvider<'_>,
    model: &Model,
    windows: &[TrajectoryWindow],
) -> PreparedSplit {
    let neighbors = windows.iter().map(|w| provider.neighbors_for(model, w)).collect();
    PreparedSplit { windows: windows.to_vec(), neighbors }
}

/// Evaluates fixed parameters over a prepared split (no dropout).
pub fn evaluate(
    model: &Model,
    params: &TensorMap,
    provider: &InstanceProvider<'_>,
    prepared: &PreparedSplit,
    seed: u64,
    variant: Variant,
) -> Result<EvalReport> {
    let cfg = model.config();
    let theta = cfg.theta;
    let mut bind = model.shared_bindings(&provider.coord_table()?)?;
    let ctx = EvalContext::default();

    let count = prepared.windows.len();
    let mut hits = [0usize; 4];
    let mut sums = (0.0f64, 0.0f64, 0.0f64);
    let mut aux_dist_sum = 0.0f64;
    let mut aux_dist_n = 0usize;
    let mut cons_dist_sum = 0.0f64;
    let mut cons_dist_n = 0usize;

    for (window, nbs) in prepared.windows.iter().zip(&prepared.neighbors) {
        let m = model.bind_window(&mut bind, window, nbs)?;
        let graph = model.graph(m);
        let eval = forward(graph, params, &bind, &ctx)?;
        let out = model.outputs(graph, &eval)?;

        let rank = match &out.probs {
            Some(probs) => target_rank(probs, window.target_poi as usize),
            None => {
                let pred = out.pred_coord.expect("a head must exist");
                aux_only_rank(pred, provider.registry, window.target_poi)
            }
        };
        for (slot, k) in TOP_KS.iter().enumerate() {
            if rank <= *k {
                hits[slot] += 1;
            }
        }

        sums.0 += out.l1.unwrap_or(0.0);
        sums.1 += out.l2.unwrap_or(0.0);
        sums.2 += out.l3.unwrap_or(0.0);
        if let Some(pred) = out.pred_coord {
            aux_dist_sum += loss_traj(pred, window.target_coord).sqrt();
            aux_dist_n += 1;
            if let Some(inferred) = out.inferred_coord {
                cons_dist_sum += loss_traj(inferred, pred).sqrt();
                cons_dist_n += 1;
            }
        }
    }

    let denom = count.max(1) as f64;
    let mut acc = [0.0f64; 4];
    for (a, h) in acc.iter_mut().zip(hits) {
        *a = h as f64 / denom;
    }
    Ok(EvalReport {
        acc,
        losses: total_loss(theta, sums.0 / denom, sums.1 / denom, sums.2 / denom, count),
        mean_aux_dist: (aux_dist_n > 0).then(|| aux_dist_sum / aux_dist_n as f64),
        mean_consistency_dist: (cons_dist_n > 0).then(|| cons_dist_sum / cons_dist_n as f64),
        seed,
        variant,
    })
}

/// Optimization schedule and bookkeeping knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Observation length; must agree with the model configuration.
    pub n: usize,
    /// Optional shortcut: stop once train top-1 reaches this level (used
    /// by fixtures that only need to demonstrate fitting capacity).
    pub stop_at_train_acc1: Option<f64>,
}

impl TrainConfig {
    pub fn new(variant: Variant, n: usize) -> Self {
        Self {
            lr: 1e-3,
            batch_size: 512,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            variant,
            n,
            stop_at_train_acc1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Output of a training run: the best-validation parameters and the
/// per-epoch metrics trail.
#[derive(Debug)]
pub struct TrainResult {
    pub params: TensorMap,
    pub records: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub best_acc1: f64,
    pub epochs_run: usize,
}

/// Mini-batch training with Adam: per epoch a seeded shuffle, batched
/// gradient averaging, an update, then train/validation evaluation.
/// Keeps the parameters from the best validation top-1 epoch (train top-1
/// when the validation split is empty) and stops after `patience` epochs
/// without improvement. A non-finite loss aborts with the epoch/batch
/// named. When `stop_at_train_acc1` triggers, the current parameters are
/// the result.
pub fn train(
    model: &Model,
    provider: &InstanceProvider<'_>,
    split: &DatasetSplit,
    tcfg: &TrainConfig,
) -> Result<TrainResult> {
    tcfg.validate()?;
    let cfg = model.config();
    if cfg.n != tcfg.n {
        return Err(Error::Config(format!(
            "train config n = {} but the model observes {}",
            tcfg.n, cfg.n
        )));
    }
    let rewired = cfg.clone().with_variant(tcfg.variant);
    if &rewired != cfg {
        return Err(Error::Config(format!(
            "model wiring does not match variant {}",
            tcfg.variant
        )));
    }
    if split.train.is_empty() {
        return Err(Error::Train("no training windows".into()));
    }

    let train_set = prepare(provider, model, &split.train);
    let val_set = prepare(provider, model, &split.val);

    let mut params = model.init_params(tcfg.seed)?;
    let param_names: Vec<String> = params.keys().cloned().collect();
    let mut adam = AdamState::default();
    let acfg = AdamConfig::with_lr(tcfg.lr);
    let mut bind = model.shared_bindings(&provider.coord_table()?)?;

    let mut best_params = params.clone();
    let mut best_acc1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stall = 0usize;
    let mut records = Vec::new();
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_set.windows.len()).collect();
    for epoch in 1..=tcfg.max_epochs {
        epochs_run = epoch;
        let mut shuffle_rng = stream(tcfg.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        for (batch_no, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let mut grad_acc: TensorMap = param_names
                .iter()
                .map(|n| (n.clone(), Tensor::zeros(params[n].shape())))
                .collect();
            for (slot, &idx) in batch.iter().enumerate() {
                let window = &train_set.windows[idx];
                let m = model.bind_window(&mut bind, window, &train_set.neighbors[idx])?;
                let graph = model.graph(m);
                let ctx = EvalContext::train(derive_seed(
                    tcfg.seed,
                    "dropout",
                    &[epoch as u64, batch_no as u64, slot as u64],
                ));
                let diverged = |detail: String| {
                    Error::Train(format!(
                        "loss diverged at epoch {epoch}, batch {batch_no}: {detail}"
                    ))
                };
                let eval = forward(graph, &params, &bind, &ctx).map_err(|e| match e {
                    Error::NonFinite { .. } => diverged(e.to_string()),
                    other => other,
                })?;
                let loss = eval.output(graph, "loss")?.item();
                if !loss.is_finite() {
                    return Err(diverged("non-finite loss".into()));
                }
                let grads = backward(graph, &eval, "loss", None)?;
                for (name, g) in grads {
                    let acc = grad_acc.get_mut(&name).expect("accumulator covers all params");
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grad_acc.values_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            adam.step(&acfg, &mut params, &grad_acc)?;
        }

        let train_rep = evaluate(model, &params, provider, &train_set, tcfg.seed, tcfg.variant)?;
        records.push(train_rep.record(epoch, "train"));
        let watched_acc1 = if val_set.windows.is_empty() {
            train_rep.acc[0]
        } else {
            let val_rep = evaluate(model, &params, provider, &val_set, tcfg.seed, tcfg.variant)?;
            records.push(val_rep.record(epoch, "val"));
            val_rep.acc[0]
        };

        if watched_acc1 > best_acc1 {
            best_acc1 = watched_acc1;
            best_epoch = epoch;
            best_params = params.clone();
            stall = 0;
        } else {
            stall += 1;
        }

        if let Some(threshold) = tcfg.stop_at_train_acc1 {
            if train_rep.acc[0] >= threshold {
                best_params = params.clone();
                best_epoch = epoch;
                best_acc1 = watched_acc1;
                break;
            }
        }
        if stall >= tcfg.patience {
            break;
        }
    }

    Ok(TrainResult { params: best_params, records, best_epoch, best_acc1, epochs_run })
}

/// Shape-and-normalization identity of a dataset; checked when a
/// checkpoint is reloaded so parameters are never applied to ids they
/// were not trained over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n_pois: usize,
    pub n_cats: usize,
    pub n_users: usize,
    pub checkins: usize,
    pub bounds: CoordBounds,
}

impl DatasetFingerprint {
    pub fn of(log: &CheckInLog, registry: &PoiRegistry) -> Self {
        Self {
            n_pois: registry.poi_count(),
            n_cats: registry.category_names.len(),
            n_users: log.user_count(),
            checkins: log.checkin_count(),
            bounds: registry.bounds.clone(),
        }
    }
}

/// Everything needed to reload a trained model consistently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub fingerprint: DatasetFingerprint,
}

pub fn save_model(path: &Path, params: &TensorMap, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    save_checkpoint(path, params, &[("manifest".to_string(), text)])
}

pub fn load_model(path: &Path) -> Result<(TensorMap, Manifest)> {
    let ckpt = load_checkpoint(path)?;
    let text = ckpt
        .texts
        .iter()
        .find(|(name, _)| name == "manifest")
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Checkpoint("checkpoint has no manifest entry".into()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    Ok((ckpt.params, manifest))
}

/// A dataset with everything training needs.
pub struct DatasetBundle {
    pub log: CheckInLog,
    pub registry: PoiRegistry,
    pub split: DatasetSplit,
    pub social: Option<NeighborGraph>,
}

impl DatasetBundle {
    pub fn provider(&self) -> InstanceProvider<'_> {
        InstanceProvider {
            log: &self.log,
            registry: &self.registry,
            social: self.social.as_ref(),
        }
    }

    pub fn fingerprint(&self) -> DatasetFingerprint {
        DatasetFingerprint::of(&self.log, &self.registry)
    }
}

/// Trains one variant on one dataset and scores the test split with the
/// best parameters.
pub fn fit(
    bundle: &DatasetBundle,
    base: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(TrainResult, EvalReport)> {
    let cfg = base.clone().with_variant(tcfg.variant);
    let model = Model::new(cfg)?;
    let provider = bundle.provider();
    let result = train(&model, &provider, &bundle.split, tcfg)?;
    let test_set = prepare(&provider, &model, &bundle.split.test);
    let report = evaluate(&model, &result.params, &provider, &test_set, tcfg.seed, tcfg.variant)?;
    Ok((result, report))
}

/// One (variant, seed) cell of an ablation sweep.
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: Result<EvalReport>,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// CSV with one row per successful cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,acc1,acc5,acc10,acc20\n");
        for row in &self.rows {
            if let Ok(rep) = &row.outcome {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.variant, row.seed, rep.acc[0], rep.acc[1], rep.acc[2], rep.acc[3]
                ));
            }
        }
        out
    }

    pub fn failures(&self) -> Vec<(Variant, u64, String)> {
        self.rows
            .iter()
            .filter_map(|r| match &r.outcome {
                Err(e) => Some((r.variant, r.seed, e.to_string())),
                Ok(_) => None,
            })
            .collect()
    }

    /// Median test top-1 across this variant's successful seeds.
    pub fn median_acc1(&self, variant: Variant) -> Option<f64> {
        let accs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().ok().map(|rep| rep.acc[0]))
            .collect();
        median(accs)
    }

    /// Median mean consistency distance across this variant's seeds.
    pub fn median_consistency_dist(&self, variant: Variant) -> Option<f64> {
        let ds: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().ok().and_then(|rep| rep.mean_consistency_dist))
            .collect();
        median(ds)
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[mid] } else { (xs[mid - 1] + xs[mid]) / 2.0 })
}

/// Trains and scores every variant against every (seed, dataset) pair.
/// Failures stay in their cells; the sweep never aborts wholesale.
pub fn run_ablation(
    variants: &[Variant],
    datasets: &[(u64, &DatasetBundle)],
    base: &ModelConfig,
    tcfg_base: &TrainConfig,
) -> AblationTable {
    let mut rows = Vec::new();
    for &(seed, bundle) in datasets {
        for &variant in variants {
            let tcfg = TrainConfig { seed, variant, ..tcfg_base.clone() };
            let outcome = fit(bundle, base, &tcfg).map(|(_, report)| report);
            rows.push(AblationRow { variant, seed, outcome });
        }
    }
    AblationTable { rows }
}
