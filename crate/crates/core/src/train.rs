//! Training loop, evaluation and checkpoint persistence for the fill-in
//! model.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fitb_tensor::{clip_grad_norm, load_checkpoint, save_checkpoint, Adam, Graph, ParameterStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, FeatureDims};
use crate::error::{FitbError, Result};
use crate::metrics::{evaluate_ids, gender_accuracy, AccuracyReport, Aggregation};
use crate::model::{init_params, predict_set, prepare_set, set_loss, FillInConfig, PreparedSet, SetPrediction};
use crate::seed::{rng_for, rng_for_item, Purpose};
use crate::text::{build_vocab, gender_pretrain_step, Vocabulary};

#[derive(Clone, Debug)]
pub struct FillInModel {
    pub cfg: FillInConfig,
    pub vocab: Vocabulary,
    pub dims: FeatureDims,
    pub store: ParameterStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointExtra {
    config: FillInConfig,
    vocab: Vocabulary,
    dims: FeatureDims,
    #[serde(default)]
    info: serde_json::Value,
}

impl FillInModel {
    /// Fresh parameters drawn from the config's init stream.
    pub fn new(cfg: FillInConfig, vocab: Vocabulary, dims: FeatureDims) -> Result<Self> {
        let mut store = ParameterStore::new(cfg.seed);
        init_params(&mut store, &cfg, &dims, vocab.len(), &mut rng_for(cfg.seed, Purpose::Init))?;
        Ok(Self { cfg, vocab, dims, store })
    }

    pub fn prepare(&self, ds: &Dataset) -> Result<Vec<PreparedSet>> {
        if ds.dims.face != self.dims.face || ds.dims.video != self.dims.video {
            return Err(FitbError::Data(format!(
                "dataset feature dims {}/{} do not match the model's {}/{}",
                ds.dims.face, ds.dims.video, self.dims.face, self.dims.video
            )));
        }
        ds.sets.iter().map(|s| prepare_set(s, &self.vocab, &self.cfg.cluster)).collect()
    }

    pub fn predict(&self, sets: &[PreparedSet]) -> Result<Vec<SetPrediction>> {
        sets.iter().map(|s| predict_set(&self.store, &self.cfg, &self.dims, s)).collect()
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<SetPrediction>> {
        self.predict(&self.prepare(ds)?)
    }

    pub fn save(&self, path: &Path, info: serde_json::Value) -> Result<()> {
        let extra = CheckpointExtra { config: self.cfg.clone(), vocab: self.vocab.clone(), dims: self.dims, info };
        save_checkpoint(path, &self.store, serde_json::to_value(extra)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, extra) = load_checkpoint(path)?;
        let extra: CheckpointExtra = serde_json::from_value(extra)?;
        extra.config.validate()?;
        Ok(Self { cfg: extra.config, vocab: extra.vocab, dims: extra.dims, store })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub class_acc: f64,
    pub same_acc: f64,
    pub diff_acc: f64,
    pub inst_acc: f64,
    pub gender_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub char_loss: f64,
    pub gender_loss: f64,
    pub val: Option<ValMetrics>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where the best-validation checkpoint is written.
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines log, one object per epoch.
    pub log: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub model: FillInModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_sets: usize,
}

/// Training windows: every stride-1 window per movie unless augmentation is
/// ablated, in which case the dataset's own sets are used.
pub fn training_sets(train: &Dataset, augment: bool) -> Dataset {
    if !augment {
        return train.clone();
    }
    let n = train.sets.iter().map(|s| s.clips.len()).max().unwrap_or(1);
    let mut ds = Dataset::from_movies(train.split, &train.movies(), n, true, train.dims);
    ds.provenance = train.provenance.clone();
    ds
}

/// Scores predictions against a dataset's ground truth.
pub fn score_predictions(ds: &Dataset, preds: &[SetPrediction], mode: Aggregation) -> Result<AccuracyReport> {
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    let mut gt_g = Vec::new();
    let mut pred_g = Vec::new();
    if ds.sets.len() != preds.len() {
        return Err(FitbError::Data(format!("{} sets vs {} predictions", ds.sets.len(), preds.len())));
    }
    for (set, p) in ds.sets.iter().zip(preds) {
        let ids = set.gt_local_ids.clone().ok_or_else(|| FitbError::Data(format!("set {} has no ground-truth ids", set.movie_id)))?;
        gt.push(ids);
        pred.push(p.ids.clone());
        for (b, g) in set.blanks.iter().zip(&p.genders) {
            if let Some(t) = b.gt_gender {
                gt_g.push(t);
                pred_g.push(*g);
            }
        }
    }
    let mut report = evaluate_ids(&gt, &pred, mode)?;
    if !gt_g.is_empty() && pred_g.len() == gt_g.len() {
        report.gender_acc = Some(gender_accuracy(&gt_g, &pred_g)?);
    }
    Ok(report)
}

pub fn evaluate_model(model: &FillInModel, ds: &Dataset, mode: Aggregation) -> Result<(AccuracyReport, Vec<SetPrediction>)> {
    let preds = model.predict_dataset(ds)?;
    Ok((score_predictions(ds, &preds, mode)?, preds))
}

fn val_metrics(r: &AccuracyReport) -> ValMetrics {
    ValMetrics { class_acc: r.class_acc, same_acc: r.same_acc, diff_acc: r.diff_acc, inst_acc: r.inst_acc, gender_acc: r.gender_acc }
}

fn diagnostics(store: &ParameterStore<f32>) -> String {
    let mut norms = store.norms();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    norms.iter().take(5).map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>().join(", ")
}

struct LogSink(Option<std::fs::File>);

impl LogSink {
    fn write(&mut self, entry: &EpochLog) -> Result<()> {
        if let Some(f) = &mut self.0 {
            writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| FitbError::io("training log", e))?;
        }
        Ok(())
    }
}

pub fn train(train: &Dataset, val: &Dataset, cfg: &FillInConfig) -> Result<TrainOutcome> {
    train_with(train, val, cfg, &TrainOptions::default())
}

/// Gender pretraining of the text encoder, then joint training on the full
/// loss with teacher forcing. The parameters with the best validation
/// Class-Acc are kept (ties keep the earlier epoch).
pub fn train_with(train: &Dataset, val: &Dataset, cfg: &FillInConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut sink = LogSink(match &opts.log {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| FitbError::io(p, e))?),
        None => None,
    });
    let windows = training_sets(train, !cfg.ablation.no_aug);
    let vocab = build_vocab(train.sets.iter().flat_map(|s| s.clips.iter().map(|c| c.sentence.as_slice())));
    let mut model = FillInModel::new(cfg.clone(), vocab, train.dims)?;
    let train_sets: Vec<PreparedSet> = model.prepare(&windows)?.into_iter().filter(|s| s.num_blanks() > 0 && s.gt_ids.is_some()).collect();
    if train_sets.is_empty() {
        return Err(FitbError::Empty("no training set has labelled blanks"));
    }
    let val_sets = model.prepare(val)?;
    let mut log = Vec::new();

    model.store.zero_grad();
    model.store.set_trainable("fill.", false);
    let mut opt = Adam::new(cfg.pretrain_lr);
    for epoch in 1..=cfg.pretrain_epochs {
        let order = shuffled(train_sets.len(), cfg.seed, 1_000_000 + epoch as u64);
        let (mut total, mut steps) = (0.0, 0);
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| (&train_sets[i].text, train_sets[i].gt_genders.as_slice())).collect();
            let loss = gender_pretrain_step(&mut model.store, &cfg.text, &batch)?;
            if !loss.is_finite() {
                return Err(FitbError::NonFinite { epoch, batch: bi, diagnostics: diagnostics(&model.store) });
            }
            step(&mut opt, &mut model.store, cfg.grad_clip)?;
            total += loss;
            steps += 1;
        }
        let entry = EpochLog {
            phase: "pretrain".into(),
            epoch,
            steps,
            loss: total / steps.max(1) as f64,
            char_loss: 0.0,
            gender_loss: total / steps.max(1) as f64,
            val: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!("pretrain epoch {epoch}: gender loss {:.4}", entry.loss);
        sink.write(&entry)?;
        log.push(entry);
    }

    // the text gender head is not part of the fill-in loss
    model.store.set_trainable("fill.", true);
    model.store.set_trainable("text.gender", false);
    model.store.reset_moments();
    model.store.zero_grad();
    let mut opt = Adam::new(cfg.lr);
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(train_sets.len(), cfg.seed, epoch as u64);
        let (mut total, mut ch, mut gen, mut steps) = (0.0, 0.0, 0.0, 0);
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let w = 1.0 / chunk.len() as f64;
            let (mut l, mut c, mut ge) = (0.0, 0.0, 0.0);
            for &i in chunk {
                let mut g = Graph::new();
                let Some(parts) = set_loss(&mut g, &model.store, cfg, &model.dims, &train_sets[i])? else { continue };
                let value = g.value(parts.total).item() as f64;
                if !value.is_finite() {
                    return Err(FitbError::NonFinite { epoch, batch: bi, diagnostics: diagnostics(&model.store) });
                }
                let scaled = g.scale(parts.total, w)?;
                g.backward(scaled, &mut model.store)?;
                l += value * w;
                c += parts.character * w;
                ge += parts.gender * w;
            }
            step(&mut opt, &mut model.store, cfg.grad_clip)?;
            total += l;
            ch += c;
            gen += ge;
            steps += 1;
        }
        let val_report = if val_sets.iter().any(|s| s.num_blanks() >= 2) {
            let preds = model.predict(&val_sets)?;
            Some(score_predictions(val, &preds, Aggregation::Macro)?)
        } else {
            None
        };
        let score = val_report.as_ref().map_or(-(total / steps as f64), |r| r.class_acc);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.store.clone()));
        }
        let n = steps.max(1) as f64;
        let entry = EpochLog {
            phase: "train".into(),
            epoch,
            steps,
            loss: total / n,
            char_loss: ch / n,
            gender_loss: gen / n,
            val: val_report.as_ref().map(val_metrics),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.4} val class-acc {:?}", entry.loss, entry.val.as_ref().map(|v| v.class_acc));
        sink.write(&entry)?;
        log.push(entry);
    }

    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => 0,
    };
    model.store.set_trainable("text.gender", true);
    if let Some(p) = &opts.checkpoint {
        model.save(p, serde_json::json!({ "best_epoch": best_epoch, "seed": cfg.seed }))?;
    }
    Ok(TrainOutcome { model, log, best_epoch, train_sets: train_sets.len() })
}

fn shuffled(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for_item(seed, Purpose::Shuffle, epoch));
    order
}

fn step(opt: &mut Adam, store: &mut ParameterStore<f32>, clip: f64) -> Result<()> {
    if clip > 0.0 {
        clip_grad_norm(store, clip);
    }
    opt.step(store)?;
    Ok(())
}
