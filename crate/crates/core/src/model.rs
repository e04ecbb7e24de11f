//! The fill-in model: per-blank attention over the face clusters of the
//! blank's clip, fusion with the text encoding, and a causally masked
//! transformer that labels blanks left to right conditioned on earlier
//! labels.

use fitb_tensor::{Graph, ParameterStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{clip_clusters, ClusterParams};
use crate::corpus::{ClipSet, FeatureDims, Gender};
use crate::error::{FitbError, Result};
use crate::nn;
use crate::text::{self, TextConfig, TextInput, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    Beam { width: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Replace the attended face vector with zeros (text-only model).
    pub no_face: bool,
    /// Drop the segment feature from the attention input.
    pub no_video: bool,
    /// Train on non-overlapping windows only.
    pub no_aug: bool,
    /// Force the visual gender weight to zero.
    pub no_gender_loss: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 4] = ["no_face", "no_video", "no_aug", "no_gender_loss"];

    /// Parses flag names. `full` stands for no ablation and cannot be
    /// combined with other flags.
    pub fn from_flags<S: AsRef<str>>(flags: &[S]) -> Result<Self> {
        let mut a = Ablation::default();
        let mut full = false;
        for f in flags {
            match f.as_ref() {
                "full" => full = true,
                "no_face" | "text_only" => a.no_face = true,
                "no_video" => a.no_video = true,
                "no_aug" => a.no_aug = true,
                "no_gender_loss" => a.no_gender_loss = true,
                other => return Err(FitbError::Config(format!("unknown ablation flag `{other}`"))),
            }
        }
        if full && a != Ablation::default() {
            return Err(FitbError::Config("`full` contradicts the other ablation flags".into()));
        }
        Ok(a)
    }

    pub fn is_full(&self) -> bool {
        *self == Ablation::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillInConfig {
    /// Largest local ID the model can emit.
    pub k: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    /// Hidden width of the cluster-attention scorer.
    pub att_hidden: usize,
    pub max_blanks: usize,
    pub lambda_gen: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Sets per optimizer step.
    pub batch: usize,
    pub decode: DecodeMode,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub text: TextConfig,
    pub cluster: ClusterParams,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for FillInConfig {
    fn default() -> Self {
        Self {
            k: 11,
            layers: 2,
            d_model: 64,
            heads: 4,
            ff: 128,
            att_hidden: 64,
            max_blanks: 64,
            lambda_gen: 0.2,
            lr: 5e-5,
            epochs: 40,
            batch: 16,
            decode: DecodeMode::Greedy,
            pretrain_epochs: 3,
            pretrain_lr: 1e-3,
            grad_clip: 5.0,
            text: TextConfig::default(),
            cluster: ClusterParams::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl FillInConfig {
    /// Settings sized for a few minutes of single-core training.
    pub fn desk() -> Self {
        Self { lr: 1e-3, epochs: 10, pretrain_epochs: 1, ..Self::default() }
    }

    /// Six layers with a 2048-wide feed-forward.
    pub fn large() -> Self {
        Self { layers: 6, ff: 2048, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        if [self.k, self.layers, self.d_model, self.heads, self.ff, self.att_hidden, self.max_blanks, self.batch].contains(&0) {
            return Err(FitbError::Config("fill-in sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(FitbError::Config(format!("width {} not divisible by {} heads", self.d_model, self.heads)));
        }
        if !(self.lambda_gen >= 0.0) || !(self.lr > 0.0) || !(self.pretrain_lr > 0.0) || !(self.grad_clip >= 0.0) {
            return Err(FitbError::Config("lambda_gen, grad_clip must be >= 0 and learning rates > 0".into()));
        }
        if let DecodeMode::Beam { width: 0 } = self.decode {
            return Err(FitbError::Config("beam width must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.no_gender_loss || self.ablation.no_face {
            0.0
        } else {
            self.lambda_gen
        }
    }
}

/// One face cluster as the model sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeature {
    pub center: Vec<f32>,
    pub visual: Vec<f32>,
    pub member_frames: Vec<u32>,
}

/// Everything the model needs from one set, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub movie_id: String,
    pub text: TextInput,
    pub blank_clip: Vec<usize>,
    pub clusters: Vec<Vec<ClusterFeature>>,
    pub gt_ids: Option<Vec<u32>>,
    pub gt_genders: Vec<Option<Gender>>,
}

impl PreparedSet {
    pub fn num_blanks(&self) -> usize {
        self.blank_clip.len()
    }
}

fn scaled(v: Vec<f32>) -> Vec<f32> {
    let k = (v.len() as f32).sqrt();
    v.into_iter().map(|x| x * k).collect()
}

/// Clusters every clip and tokenizes the set. Cluster centers and segment
/// features are multiplied by `√D`, so unit-norm inputs reach the model with
/// unit RMS per coordinate, on par with the layer-normed text states.
pub fn prepare_set(set: &ClipSet, vocab: &Vocabulary, params: &ClusterParams) -> Result<PreparedSet> {
    let clusters = set
        .clips
        .iter()
        .map(|clip| {
            Ok(clip_clusters(clip, params)?
                .clusters
                .into_iter()
                .map(|c| ClusterFeature { center: scaled(c.center), visual: scaled(c.visual_context), member_frames: c.member_frames })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSet {
        movie_id: set.movie_id.clone(),
        text: text::set_text_input(set, vocab)?,
        blank_clip: set.blanks.iter().map(|b| b.sentence_index).collect(),
        clusters,
        gt_ids: set.gt_local_ids.clone(),
        gt_genders: set.blanks.iter().map(|b| b.gt_gender).collect(),
    })
}

pub fn init_params<T: Real, R: Rng>(store: &mut ParameterStore<T>, cfg: &FillInConfig, dims: &FeatureDims, vocab_len: usize, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    text::init_text_params(store, &cfg.text, vocab_len, rng)?;
    let tb = cfg.text.blank_dim();
    store.insert_glorot("fill.att.w1", dims.face + dims.video + tb, cfg.att_hidden, rng)?;
    store.insert_glorot("fill.att.w2", cfg.att_hidden, 1, rng)?;
    store.insert_normal("fill.noface", 1, dims.face, 0.1, rng)?;
    nn::init_linear(store, "fill.in", dims.face + tb, cfg.d_model, rng)?;
    store.insert_glorot("fill.prev", dims.face + tb, cfg.d_model, rng)?;
    // row 0 is BEGIN, row k is local ID k
    store.insert_normal("fill.label", cfg.k + 1, cfg.d_model, 0.5, rng)?;
    for l in 0..cfg.layers {
        nn::init_block(store, &format!("fill.l{l}"), cfg.d_model, cfg.ff, rng)?;
    }
    nn::init_layer_norm(store, "fill.ln_f", cfg.d_model)?;
    nn::init_linear(store, "fill.out", cfg.d_model, cfg.k, rng)?;
    nn::init_linear(store, "fill.gender", dims.face, 2, rng)?;
    Ok(())
}

/// Attention of one blank over its clip's clusters: returns `(α, ĉ)` with α
/// as a `1×F` row and ĉ = α·C as a `1×D_face` row.
///
/// `cv_proj` holds `[C | V]·W₁` restricted to the clip (F×H) and `t_proj`
/// the blank's `t·W₁` row, so the score is `w₂ᵀ tanh(W₁[c; v; t])`.
pub fn attend_faces<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, centers: Var, cv_proj: Var, t_proj: Var) -> Result<(Var, Var)> {
    let w2 = g.param(store, "fill.att.w2")?;
    let h = g.add(cv_proj, t_proj)?;
    let h = g.tanh(h)?;
    let e = g.matmul(h, w2)?;
    let e = g.transpose(e)?;
    let alpha = g.softmax_rows(e)?;
    let c_hat = g.matmul(alpha, centers)?;
    Ok((alpha, c_hat))
}

/// Per-blank fused inputs for one set.
pub struct BlankContexts {
    /// `B × 2·D_txt`
    pub t: Var,
    /// `B × D_face`
    pub c_hat: Var,
    /// `B × (D_face + 2·D_txt)`, equal to `[ĉ | t]`.
    pub s: Var,
    /// Attention weights per blank (empty when the clip has no faces).
    pub alphas: Vec<Vec<f64>>,
    pub alpha_vars: Vec<Option<Var>>,
    pub has_face: Vec<bool>,
}

fn rows_of<T: Real>(rows: &[&[f32]], width: usize) -> Tensor<T> {
    let data = rows.iter().flat_map(|r| r.iter().map(|&x| T::of(x as f64))).collect();
    Tensor::matrix(rows.len(), width, data).expect("consistent widths")
}

pub fn blank_contexts<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &FillInConfig, dims: &FeatureDims, set: &PreparedSet) -> Result<Option<BlankContexts>> {
    let Some(t) = text::encode_set(g, store, &cfg.text, &set.text)? else { return Ok(None) };
    let b = set.num_blanks();
    let mut c_rows = Vec::with_capacity(b);
    let mut alphas = vec![Vec::new(); b];
    let mut alpha_vars = vec![None; b];
    let mut has_face = vec![false; b];
    if cfg.ablation.no_face {
        let zeros = g.constant(Tensor::zeros(b, dims.face));
        c_rows.push(zeros);
    } else {
        let w1 = g.param(store, "fill.att.w1")?;
        let w1_face = g.slice_rows(w1, 0, dims.face)?;
        let w1_vid = g.slice_rows(w1, dims.face, dims.face + dims.video)?;
        let w1_txt = g.slice_rows(w1, dims.face + dims.video, dims.face + dims.video + cfg.text.blank_dim())?;
        let t_proj = g.matmul(t, w1_txt)?;
        let noface = g.param(store, "fill.noface")?;
        let mut per_clip: Vec<Option<(Var, Var)>> = vec![None; set.clusters.len()];
        for (bi, &ci) in set.blank_clip.iter().enumerate() {
            let clusters = set.clusters.get(ci).ok_or_else(|| FitbError::Data(format!("{}: blank {bi} names missing clip {ci}", set.movie_id)))?;
            if clusters.is_empty() {
                c_rows.push(noface);
                continue;
            }
            let (centers, cv_proj) = match per_clip[ci] {
                Some(p) => p,
                None => {
                    let cs: Vec<&[f32]> = clusters.iter().map(|c| c.center.as_slice()).collect();
                    let centers = g.constant(rows_of(&cs, dims.face));
                    let mut proj = g.matmul(centers, w1_face)?;
                    if !cfg.ablation.no_video {
                        let vs: Vec<&[f32]> = clusters.iter().map(|c| c.visual.as_slice()).collect();
                        let v = g.constant(rows_of(&vs, dims.video));
                        let vp = g.matmul(v, w1_vid)?;
                        proj = g.add(proj, vp)?;
                    }
                    per_clip[ci] = Some((centers, proj));
                    (centers, proj)
                }
            };
            let tb = g.slice_rows(t_proj, bi, bi + 1)?;
            let (alpha, c_hat) = attend_faces(g, store, centers, cv_proj, tb)?;
            alphas[bi] = g.value(alpha).data().iter().map(|x| x.as_f64()).collect();
            alpha_vars[bi] = Some(alpha);
            has_face[bi] = true;
            c_rows.push(c_hat);
        }
    }
    let c_hat = g.concat_rows(&c_rows)?;
    let s = g.concat_cols(&[c_hat, t])?;
    Ok(Some(BlankContexts { t, c_hat, s, alphas, alpha_vars, has_face }))
}

/// Causal transformer over fused blank inputs. `prev[b]` is the label fed at
/// position `b` (0 = BEGIN, otherwise the previous blank's ID). Position `b`
/// also sees the previous blank's fused features, so a previous label sits
/// next to the face it belongs to and one attention layer can match a face
/// to an earlier one and read off its label. Returns `B × K` logits.
pub fn transformer_logits<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &FillInConfig, s: Var, prev: &[usize]) -> Result<Var> {
    let b = g.shape(s).0;
    if b > cfg.max_blanks {
        return Err(FitbError::Length { what: "blank sequence", len: b, max: cfg.max_blanks });
    }
    if prev.len() != b {
        return Err(FitbError::Data(format!("{} previous labels for {b} blanks", prev.len())));
    }
    if let Some(&l) = prev.iter().find(|&&l| l > cfg.k) {
        return Err(FitbError::Range(format!("label {l} (K = {})", cfg.k)));
    }
    let x = nn::linear(g, store, s, "fill.in")?;
    let table = g.param(store, "fill.label")?;
    let lab = g.embedding(table, prev)?;
    let x = g.add(x, lab)?;
    let width = g.shape(s).1;
    let zero = g.constant(Tensor::zeros(1, width));
    let shifted = if b > 1 {
        let head = g.slice_rows(s, 0, b - 1)?;
        g.concat_rows(&[zero, head])?
    } else {
        zero
    };
    let w_prev = g.param(store, "fill.prev")?;
    let from_prev = g.matmul(shifted, w_prev)?;
    let x = g.add(x, from_prev)?;
    let pe = g.constant(nn::sinusoid(b, cfg.d_model));
    let mut x = g.add(x, pe)?;
    let mask = nn::causal_mask(b);
    for l in 0..cfg.layers {
        x = nn::block(g, store, x, &format!("fill.l{l}"), cfg.heads, Some(&mask))?;
    }
    let h = nn::layer_norm(g, store, x, "fill.ln_f")?;
    nn::linear(g, store, h, "fill.out")
}

/// Labels shifted right behind BEGIN.
pub fn teacher_inputs(labels: &[u32]) -> Vec<usize> {
    std::iter::once(0).chain(labels.iter().take(labels.len().saturating_sub(1)).map(|&l| l as usize)).collect()
}

pub struct ForwardOut {
    pub ctx: BlankContexts,
    pub logits: Var,
    pub gender_vis: Var,
}

/// Teacher-forced forward pass with `labels` as the ID sequence.
pub fn forward_set<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &FillInConfig, dims: &FeatureDims, set: &PreparedSet, labels: &[u32]) -> Result<Option<ForwardOut>> {
    let Some(ctx) = blank_contexts(g, store, cfg, dims, set)? else { return Ok(None) };
    let logits = transformer_logits(g, store, cfg, ctx.s, &teacher_inputs(labels))?;
    let gender_vis = nn::linear(g, store, ctx.c_hat, "fill.gender")?;
    Ok(Some(ForwardOut { ctx, logits, gender_vis }))
}

pub struct LossParts {
    pub total: Var,
    pub character: f64,
    pub gender: f64,
}

/// `CE(IDs) + λ·CE(gender)`; gender rows without a label or without a face
/// are left out of the gender mean.
pub fn total_loss<T: Real>(g: &mut Graph<T>, logits: Var, gender_vis: Var, gt_ids: &[u32], gender_targets: &[Option<Gender>], lambda: f64) -> Result<LossParts> {
    let k = g.shape(logits).1;
    if let Some(&id) = gt_ids.iter().find(|&&id| id == 0 || id as usize > k) {
        return Err(FitbError::Range(format!("local id {id} (K = {k})")));
    }
    let targets: Vec<usize> = gt_ids.iter().map(|&id| id as usize - 1).collect();
    let ce = g.cross_entropy(logits, &targets, None)?;
    let character = g.value(ce).item().as_f64();
    if lambda == 0.0 {
        return Ok(LossParts { total: ce, character, gender: 0.0 });
    }
    let gt: Vec<usize> = gender_targets.iter().map(|x| x.map_or(0, Gender::index)).collect();
    let mask: Vec<bool> = gender_targets.iter().map(Option::is_some).collect();
    let gl = g.cross_entropy(gender_vis, &gt, Some(&mask))?;
    let gender = g.value(gl).item().as_f64();
    let gl = g.scale(gl, lambda)?;
    Ok(LossParts { total: g.add(ce, gl)?, character, gender })
}

/// Loss of one set under teacher forcing. Sets without blanks or without
/// ground truth contribute nothing.
pub fn set_loss<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, cfg: &FillInConfig, dims: &FeatureDims, set: &PreparedSet) -> Result<Option<LossParts>> {
    let Some(gt) = set.gt_ids.as_deref() else { return Ok(None) };
    let Some(out) = forward_set(g, store, cfg, dims, set, gt)? else { return Ok(None) };
    let genders: Vec<Option<Gender>> = set.gt_genders.iter().zip(&out.ctx.has_face).map(|(g, &f)| if f { *g } else { None }).collect();
    Ok(Some(total_loss(g, out.logits, out.gender_vis, gt, &genders, cfg.effective_lambda())?))
}

/// Decoded output for one set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetPrediction {
    pub movie_id: String,
    pub ids: Vec<u32>,
    pub genders: Vec<Gender>,
    /// Attention over the blank's clip clusters (empty without faces).
    pub attention: Vec<Vec<f64>>,
    /// Member frames of the most attended cluster, per blank.
    pub attended_frames: Vec<Vec<u32>>,
}

fn valid_labels(prefix: &[u32], k: usize) -> std::ops::RangeInclusive<u32> {
    1..=(prefix.iter().copied().max().unwrap_or(0) + 1).min(k as u32)
}

fn step_logits<T: Real>(store: &ParameterStore<T>, cfg: &FillInConfig, s: &Tensor<T>, prefix: &[u32]) -> Result<Vec<f64>> {
    let b = prefix.len() + 1;
    let mut g = Graph::new();
    let rows = s.data()[..b * s.cols()].to_vec();
    let s = g.constant(Tensor::matrix(b, s.cols(), rows)?);
    let mut prev = vec![0usize];
    prev.extend(prefix.iter().map(|&l| l as usize));
    let logits = transformer_logits(&mut g, store, cfg, s, &prev)?;
    Ok(g.value(logits).row_slice(b - 1).iter().map(|x| x.as_f64()).collect())
}

/// Left-to-right decoding under the first-occurrence constraint.
pub fn decode_ids<T: Real>(store: &ParameterStore<T>, cfg: &FillInConfig, s: &Tensor<T>, mode: DecodeMode) -> Result<Vec<u32>> {
    let b = s.rows();
    if b > cfg.max_blanks {
        return Err(FitbError::Length { what: "blank sequence", len: b, max: cfg.max_blanks });
    }
    let width = match mode {
        DecodeMode::Greedy => {
            let mut out = Vec::with_capacity(b);
            for _ in 0..b {
                let logits = step_logits(store, cfg, s, &out)?;
                let mut best = 1u32;
                for l in valid_labels(&out, cfg.k) {
                    if logits[l as usize - 1] > logits[best as usize - 1] {
                        best = l;
                    }
                }
                out.push(best);
            }
            return Ok(out);
        }
        DecodeMode::Beam { width } => width.max(1),
    };
    // (labels, summed log-probability, last raw logit)
    let mut beams: Vec<(Vec<u32>, f64, f64)> = vec![(Vec::new(), 0.0, 0.0)];
    for _ in 0..b {
        let mut cand = Vec::new();
        for (prefix, score, _) in &beams {
            let logits = step_logits(store, cfg, s, prefix)?;
            let valid: Vec<u32> = valid_labels(prefix, cfg.k).collect();
            let m = valid.iter().map(|&l| logits[l as usize - 1]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + valid.iter().map(|&l| (logits[l as usize - 1] - m).exp()).sum::<f64>().ln();
            for l in valid {
                let mut p = prefix.clone();
                p.push(l);
                cand.push((p, score + logits[l as usize - 1] - lse, logits[l as usize - 1]));
            }
        }
        // higher score first; rounding ties fall back to the raw logit, then to the lexicographically smaller sequence
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then_with(|| a.0.cmp(&b.0)));
        cand.truncate(width);
        beams = cand;
    }
    Ok(beams.swap_remove(0).0)
}

/// Decodes one prepared set: IDs, genders and attention diagnostics.
pub fn predict_set<T: Real>(store: &ParameterStore<T>, cfg: &FillInConfig, dims: &FeatureDims, set: &PreparedSet) -> Result<SetPrediction> {
    let mut g = Graph::new();
    let empty = SetPrediction { movie_id: set.movie_id.clone(), ids: vec![], genders: vec![], attention: vec![], attended_frames: vec![] };
    let Some(ctx) = blank_contexts(&mut g, store, cfg, dims, set)? else { return Ok(empty) };
    let s = g.value(ctx.s).clone();
    let ids = decode_ids(store, cfg, &s, cfg.decode)?;
    let vis = nn::linear(&mut g, store, ctx.c_hat, "fill.gender")?;
    let txt = text::text_gender_logits(&mut g, store, ctx.t)?;
    let (vis, txt) = (text::argmax_genders(g.value(vis)), text::argmax_genders(g.value(txt)));
    let genders = (0..ids.len()).map(|b| if ctx.has_face[b] && !cfg.ablation.no_face { vis[b] } else { txt[b] }).collect();
    let attended_frames = ctx
        .alphas
        .iter()
        .zip(&set.blank_clip)
        .map(|(a, &ci)| {
            let best = a.iter().enumerate().fold(None, |acc: Option<(usize, f64)>, (i, &w)| match acc {
                Some((_, bw)) if bw >= w => acc,
                _ => Some((i, w)),
            });
            best.map_or_else(Vec::new, |(i, _)| set.clusters[ci][i].member_frames.clone())
        })
        .collect();
    Ok(SetPrediction { movie_id: set.movie_id.clone(), ids, genders, attention: ctx.alphas, attended_frames })
}
