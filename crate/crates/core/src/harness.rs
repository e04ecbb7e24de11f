//! Command-line surface. Every command resolves its configuration as
//! defaults < config file < flags and embeds the result in what it writes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{run_baseline, BaselineKind, BaselinePolicy};
use crate::cluster::{build_set_clusters, clip_clusters, ClusterParams};
use crate::corpus::{load_dataset, save_dataset, write_atomic, Dataset, Split};
use crate::error::{FitbError, Result};
use crate::metrics::{histogram_table, id_histogram, permutation_max_score, report_table, tokenize_caption, AccuracyReport, Aggregation};
use crate::model::{Ablation, FillInConfig, SetPrediction};
use crate::synthgen::{generate_dataset, WorldConfig};
use crate::train::{score_predictions, train_with, FillInModel, TrainOptions};

#[derive(Parser, Debug)]
#[command(name = "fitb", about = "Fill in person identities across consecutive movie clips", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the fill-in model.
    Train(TrainArgs),
    /// Score a model, a baseline or a predictions file.
    Eval(EvalArgs),
    /// Predict IDs, genders and attention for a dataset.
    Fill(FillArgs),
    /// Permutation-max BLEU@4 of captions with person IDs.
    ScoreCaptions(ScoreArgs),
    /// Dump clusters or ID histograms.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON world configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_movies: Option<usize>,
    #[arg(long)]
    pub clips_per_movie: Option<usize>,
    #[arg(long)]
    pub gender_cue_prob: Option<f64>,
    #[arg(long)]
    pub face_noise_sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// Full-length defaults (lr 5e-5, 40 epochs).
    Default,
    /// Higher learning rate and few epochs for single-core runs.
    Desk,
    /// Six layers with a 2048-wide feed-forward.
    Large,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint manifest path (the blob goes next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// JSON fill-in configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Ablation flags: no_face, no_video, no_aug, no_gender_loss (or full).
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<String>,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(false).args(["model", "baseline", "predictions"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Seed for random_face_cluster.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "macro")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    /// Where to write the JSON report (stdout gets the table either way).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AggregationArg {
    Macro,
    Micro,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Macro => Aggregation::Macro,
            AggregationArg::Micro => Aggregation::Micro,
        }
    }
}

#[derive(Args, Debug)]
pub struct FillArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// JSON list of sets, each a list of caption strings.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dump the clusters of this set instead of the summary.
    #[arg(long)]
    pub set: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
}

/// Recursively overlays `patch` onto `base`; `null` leaves the base value.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p,
    }
}

/// `defaults < file < flags`, then deserialized strictly.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, flags: Value) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(p) = file {
        let text = std::fs::read(p).map_err(|e| FitbError::io(p, e))?;
        let file_value: Value = serde_json::from_slice(&text).map_err(|e| FitbError::Format { location: p.display().to_string(), detail: e.to_string() })?;
        merge(&mut v, file_value);
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| FitbError::Config(e.to_string()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

pub fn gen_data(args: &GenDataArgs) -> Result<Dataset> {
    let flags = json!({
        "seed": args.seed,
        "n_movies": args.n_movies,
        "clips_per_movie": args.clips_per_movie,
        "gender_cue_prob": args.gender_cue_prob,
        "face_noise_sigma": args.face_noise_sigma,
        "split": args.split.map(Split::from),
    });
    let world: WorldConfig = resolve(&WorldConfig::default(), args.config.as_deref(), flags)?;
    log::info!("gen-data seed {} world_seed {}", world.seed, world.world_seed);
    let ds = generate_dataset(&world)?;
    save_dataset(&ds, &args.out)?;
    Ok(ds)
}

pub fn train_config(args: &TrainArgs) -> Result<FillInConfig> {
    let base = match args.preset {
        Preset::Default => FillInConfig::default(),
        Preset::Desk => FillInConfig::desk(),
        Preset::Large => FillInConfig::large(),
    };
    let ablation = (!args.ablation.is_empty()).then(|| Ablation::from_flags(&args.ablation)).transpose()?;
    let flags = json!({
        "seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch": args.batch,
        "ablation": ablation,
        "decode": args.beam.map(|width| crate::model::DecodeMode::Beam { width }),
    });
    let cfg: FillInConfig = resolve(&base, args.config.as_deref(), flags)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_cmd(args: &TrainArgs) -> Result<FillInModel> {
    let cfg = train_config(args)?;
    let train = load_dataset(&args.train)?;
    let val = load_dataset(&args.val)?;
    let out = train_with(&train, &val, &cfg, &TrainOptions { checkpoint: Some(args.out.clone()), log: args.log.clone() })?;
    Ok(out.model)
}

/// Contents of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub source: Value,
    pub sets: Vec<SetPrediction>,
}

fn cluster_params(eps: Option<f64>, min_pts: Option<usize>) -> Result<ClusterParams> {
    resolve(&ClusterParams::default(), None, json!({ "eps": eps, "min_pts": min_pts }))
}

fn load_model(path: &Path, beam: Option<usize>) -> Result<FillInModel> {
    let mut model = FillInModel::load(path)?;
    if let Some(width) = beam {
        model.cfg.decode = crate::model::DecodeMode::Beam { width };
        model.cfg.validate()?;
    }
    Ok(model)
}

pub fn fill(args: &FillArgs) -> Result<PredictionsFile> {
    let model = load_model(&args.model, args.beam)?;
    let ds = load_dataset(&args.data)?;
    let sets = model.predict_dataset(&ds)?;
    let file = PredictionsFile {
        source: json!({ "model": args.model.display().to_string(), "config": model.cfg, "seed": model.cfg.seed }),
        sets,
    };
    write_json(&args.out, &file)?;
    Ok(file)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub data: String,
    pub source: Value,
    pub report: AccuracyReport,
}

pub fn eval(args: &EvalArgs) -> Result<EvalArtifact> {
    let ds = load_dataset(&args.data)?;
    let mode = Aggregation::from(args.aggregation);
    let (source, preds) = if let Some(path) = &args.model {
        let model = load_model(path, None)?;
        let preds = model.predict_dataset(&ds)?;
        (json!({ "model": path.display().to_string(), "config": model.cfg, "seed": model.cfg.seed }), preds)
    } else if let Some(name) = &args.baseline {
        let kind = BaselineKind::parse(name)?;
        let seed = match kind {
            BaselineKind::RandomFaceCluster => Some(args.seed.unwrap_or(0)),
            _ => None,
        };
        let policy = BaselinePolicy::new(kind, seed)?;
        let params = cluster_params(args.eps, args.min_pts)?;
        let preds = ds
            .sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(SetPrediction {
                    movie_id: s.movie_id.clone(),
                    ids: run_baseline(&policy, s, i, &params)?,
                    genders: vec![],
                    attention: vec![],
                    attended_frames: vec![],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        (json!({ "baseline": policy, "cluster": params }), preds)
    } else if let Some(path) = &args.predictions {
        let text = std::fs::read(path).map_err(|e| FitbError::io(path, e))?;
        let file: PredictionsFile = serde_json::from_slice(&text)?;
        (json!({ "predictions": path.display().to_string(), "from": file.source }), file.sets)
    } else {
        return Err(FitbError::Config("eval needs --model, --baseline or --predictions".into()));
    };
    let report = score_predictions(&ds, &preds, mode)?;
    let artifact = EvalArtifact { data: args.data.display().to_string(), source, report };
    if let Some(out) = &args.out {
        write_json(out, &artifact)?;
    }
    Ok(artifact)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaptionScore {
    pub mean_score: f64,
    pub sets: Vec<crate::metrics::PermutationScore>,
}

pub fn score_captions(args: &ScoreArgs) -> Result<CaptionScore> {
    let read = |p: &Path| -> Result<Vec<Vec<String>>> {
        let text = std::fs::read(p).map_err(|e| FitbError::io(p, e))?;
        Ok(serde_json::from_slice(&text)?)
    };
    let (pred, refs) = (read(&args.predictions)?, read(&args.references)?);
    if pred.len() != refs.len() {
        return Err(FitbError::Data(format!("{} predicted sets vs {} reference sets", pred.len(), refs.len())));
    }
    let mut sets = Vec::with_capacity(pred.len());
    for (i, (p, r)) in pred.iter().zip(&refs).enumerate() {
        if p.len() != r.len() {
            return Err(FitbError::Data(format!("set {i}: {} predicted vs {} reference sentences", p.len(), r.len())));
        }
        let tok = |s: &Vec<String>| s.iter().map(|x| tokenize_caption(x)).collect::<Vec<_>>();
        sets.push(permutation_max_score(&tok(p), &tok(r)));
    }
    if sets.is_empty() {
        return Err(FitbError::Empty("no caption sets"));
    }
    let mean_score = sets.iter().map(|s| s.score).sum::<f64>() / sets.len() as f64;
    let out = CaptionScore { mean_score, sets };
    if let Some(p) = &args.out {
        write_json(p, &out)?;
    }
    Ok(out)
}

pub fn inspect(args: &InspectArgs) -> Result<Value> {
    let ds = load_dataset(&args.data)?;
    let params = cluster_params(args.eps, args.min_pts)?;
    if let Some(i) = args.set {
        let set = ds.sets.get(i).ok_or_else(|| FitbError::Range(format!("set {i} of {}", ds.sets.len())))?;
        let per_clip = set.clips.iter().map(|c| clip_clusters(c, &params)).collect::<Result<Vec<_>>>()?;
        return Ok(json!({ "movie_id": set.movie_id, "gt_local_ids": set.gt_local_ids, "clips": per_clip }));
    }
    let mut clip_clusters_total = 0usize;
    let mut clips = 0usize;
    let mut set_clusters_total = 0usize;
    for set in &ds.sets {
        for c in &set.clips {
            clip_clusters_total += clip_clusters(c, &params)?.len();
            clips += 1;
        }
        set_clusters_total += build_set_clusters(set, &params).len();
    }
    let gt: Vec<Vec<u32>> = ds.sets.iter().filter_map(|s| s.gt_local_ids.clone()).collect();
    let hist = id_histogram(&gt);
    Ok(json!({
        "sets": ds.sets.len(),
        "blanks": ds.num_blanks(),
        "clusters_per_clip": clip_clusters_total as f64 / clips.max(1) as f64,
        "clusters_per_set": set_clusters_total as f64 / ds.sets.len().max(1) as f64,
        "id_histogram": hist,
        "id_histogram_table": histogram_table(&hist),
        "provenance": ds.provenance,
    }))
}

/// Parses `argv` (program name first) and runs the command, printing its
/// human-readable output to stdout.
pub fn dispatch<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            FitbError::Usage(String::new())
        }
        _ => FitbError::Usage(e.to_string().lines().next().unwrap_or_default().to_string()),
    })?;
    match cli.command {
        Command::GenData(a) => {
            let ds = gen_data(&a)?;
            let seed = ds.provenance.as_ref().and_then(|p| p.pointer("/world/seed")).cloned().unwrap_or(Value::Null);
            println!("wrote {} sets ({} blanks) to {} with seed {seed}", ds.sets.len(), ds.num_blanks(), a.out.display());
        }
        Command::Train(a) => {
            train_cmd(&a)?;
            println!("wrote checkpoint {}", a.out.display());
        }
        Command::Eval(a) => {
            let art = eval(&a)?;
            let name = art.source.get("baseline").and_then(|b| b.get("kind")).and_then(Value::as_str).unwrap_or("model").to_string();
            print!("{}", report_table(&[(name, &art.report)]));
        }
        Command::Fill(a) => {
            let f = fill(&a)?;
            println!("wrote predictions for {} sets to {}", f.sets.len(), a.out.display());
        }
        Command::ScoreCaptions(a) => {
            let s = score_captions(&a)?;
            println!("permutation-max BLEU@4 {:.4} over {} sets", s.mean_score, s.sets.len());
        }
        Command::Inspect(a) => println!("{}", serde_json::to_string_pretty(&inspect(&a)?)?),
    }
    Ok(())
}
