mod config;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mmrec::dataset::{
    kcore_filter, load_interactions, DatasetProfile, InputFormat, InteractionDataset, LoadOptions,
    Split, SplitRatios,
};
use mmrec::eval::{
    evaluate_topk, paired_significance, Metric, RankingRequest, TestKind, DEFAULT_K,
};
use mmrec::experiment::ablation::{run_noise_ablation, AblationConfig};
use mmrec::experiment::attribute::{run_attribute_study, AttributeStudyConfig, BASELINES};
use mmrec::experiment::benchmark::{run_extractor_benchmark, BenchmarkConfig, BenchmarkDataset};
use mmrec::experiment::borda::{borda_count, RecallTable};
use mmrec::experiment::grid::{run_grid, ExperimentGrid, GridPoint, PointConfig};
use mmrec::experiment::provenance::RunProvenance;
use mmrec::experiment::{
    fit_baseline, scorer_from_checkpoint, ModelFamily, ModelOptions, SideInputs, TrainedModel,
};
use mmrec::features::{
    align_to_dataset, concat_features, fit_moments, gaussian_noise_for, load_features,
    multivariate_noise_for, save_features, FeatureTable, MissingPolicy, DEFAULT_SHRINKAGE,
};
use mmrec::keywords::{encode_answers, load_answers, load_synonyms, AttributeMatrix, PromptSchema};
use mmrec::knn::{
    KnnScorer, NeighborSource, NeighborhoodModel, SimilarityConfig, SimilarityKind, Weighting,
};
use mmrec::model::Checkpoint;
use mmrec::training::TrainConfig;

#[derive(Parser)]
#[command(
    name = "mmrec",
    version,
    about = "Multimodal recommendation benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// K-core filter a raw interaction log and write the per-user split.
    Prepare(PrepareArgs),
    /// Build feature tables: noise baselines, fusion, keyword attributes.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train one configuration and evaluate it on validation and test.
    Train(ModelArgs),
    /// Score a saved model on a split.
    Evaluate(EvaluateArgs),
    /// Search the hyperparameter grid, select on validation, report test.
    Grid(ModelArgs),
    /// Gaussian vs. multivariate noise vs. real features for one model.
    AblateNoise(AblateArgs),
    /// Every model on every extractor, with markers and Borda scores.
    BenchmarkExtractors(BenchmarkArgs),
    /// Attribute Item-kNN per answer file against classical baselines.
    AttributeStudy(AttributeArgs),
    /// Borda aggregation of a long-format Recall table.
    Borda(BordaArgs),
    /// Paired test between two per-user sample files.
    Significance(SignificanceArgs),
}

#[derive(Subcommand)]
enum FeaturesCommand {
    Noise(NoiseArgs),
    Concat(ConcatArgs),
    EncodeAttributes(EncodeArgs),
}

fn default_seed() -> u64 {
    0
}

#[derive(Args, Serialize, Deserialize, Default)]
struct PrepareArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// tsv or csv
    #[arg(long)]
    format: Option<String>,
    /// baby, pets or clothing; sets the k-core threshold.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    kcore: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strict: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct NoiseArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// gaussian or multivariate
    #[arg(long)]
    kind: Option<String>,
    /// Table whose ids, dimensionality and (for multivariate) moments are matched.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Take item ids from a split file instead of the reference.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    shrinkage: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct ConcatArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long = "input", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    l2_normalize: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct EncodeArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Built-in schema name (baby, pets, clothing) or a JSON schema file.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
struct ModelArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "features", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    features: Vec<PathBuf>,
    /// error, zero_fill or drop_items
    #[arg(long)]
    missing: Option<String>,
    #[arg(long)]
    attributes: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    weighting: Option<String>,
    /// Grid-only: comma-free repeated axes override the defaults.
    #[arg(long = "grid-lr", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    grid_lr: Vec<f64>,
    #[arg(long = "grid-reg", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    grid_reg: Vec<f64>,
    #[arg(long = "grid-dim", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    grid_dim: Vec<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Architecture options as JSON (`lightgcn`, `lattice`, `freedom`, `bm3`).
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<ModelOptions>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    graph_k: Option<usize>,
    #[arg(long)]
    prune_ratio: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// MMCK checkpoint of a learned model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Neighbor TSV of a kNN model.
    #[arg(long)]
    neighbors: Option<PathBuf>,
    /// mostpop or random when no saved model is given.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// valid or test
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long = "seeds", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    seeds: Vec<u64>,
    #[arg(long)]
    shrinkage: Option<f64>,
    /// paired_t or wilcoxon
    #[arg(long)]
    test: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct BenchmarkDatasetSpec {
    name: String,
    split: PathBuf,
    /// extractor name → feature files (several files are fused)
    extractors: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct BenchmarkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long = "models", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    models: Vec<String>,
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    datasets: Vec<BenchmarkDatasetSpec>,
    #[arg(long)]
    test: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct AttributeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// `name=path` answer files, one per LVLM.
    #[arg(long = "answers", num_args = 1..)]
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    answers: Vec<String>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    test: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct BordaArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// TSV with header `model dataset extractor recall`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
struct SignificanceArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    /// recall, ndcg or hr
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    test: Option<String>,
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing required option --{flag}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(p: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = p.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn parse<T: std::str::FromStr<Err = mmrec::Error>>(s: &str) -> Result<T> {
    Ok(s.parse::<T>()?)
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let input = need(a.input, "input")?;
    let format = match &a.format {
        Some(f) => parse::<InputFormat>(f)?,
        None if input.extension().is_some_and(|e| e == "csv") => InputFormat::Csv,
        None => InputFormat::Tsv,
    };
    let opts = LoadOptions {
        format,
        strict: a.strict.unwrap_or(false),
        ..LoadOptions::default()
    };
    let loaded = load_interactions(&input, &opts)?;
    if loaded.malformed_count() > 0 {
        log::warn!("{} malformed rows skipped", loaded.malformed_count());
    }
    let k = match (a.kcore, &a.profile) {
        (Some(k), _) => k,
        (None, Some(p)) => parse::<DatasetProfile>(p)?.kcore(),
        (None, None) => 5,
    };
    let core = kcore_filter(&loaded.rows, k, k)?;
    if core.emptied {
        bail!("{k}-core filtering removed every interaction");
    }
    let ds = InteractionDataset::from_raw(&core.interactions)
        .split_holdout(SplitRatios::default(), a.seed.unwrap_or_else(default_seed))?;
    let out = need(a.out, "out")?;
    ds.write_split_tsv(&out)?;
    let stats = ds.stats()?;
    let summary = serde_json::json!({
        "stats": stats,
        "sparsity": stats.sparsity_display(),
        "kcore": k,
        "kcore_rounds": core.rounds,
        "malformed_rows": loaded.malformed_count(),
        "train": ds.count_in(Split::Train),
        "valid": ds.count_in(Split::Valid),
        "test": ds.count_in(Split::Test),
    });
    let text = serde_json::to_string_pretty(&summary)?;
    match a.stats {
        Some(p) => write(&p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_noise(a: NoiseArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let kind = a.kind.as_deref().unwrap_or("gaussian");
    let seed = a.seed.unwrap_or_else(default_seed);
    let reference = a.reference.as_ref().map(load_features).transpose()?;
    let ids: Vec<String> = match (&a.split, &reference) {
        (Some(s), _) => InteractionDataset::read_split_tsv(s)?.item_ids().to_vec(),
        (None, Some(r)) => r.item_ids().to_vec(),
        (None, None) => bail!("noise needs --reference or --split for item ids"),
    };
    let table = match kind {
        "gaussian" => {
            let dim = match (a.dim, &reference) {
                (Some(d), _) => d,
                (None, Some(r)) => r.dim(),
                (None, None) => bail!("gaussian noise needs --dim or --reference"),
            };
            gaussian_noise_for(ids, dim, seed)?
        }
        "multivariate" => {
            let r = reference.ok_or_else(|| anyhow!("multivariate noise needs --reference"))?;
            let moments = fit_moments(&r, a.shrinkage.unwrap_or(DEFAULT_SHRINKAGE))?;
            multivariate_noise_for(&moments, ids, seed)?
        }
        other => bail!("unknown noise kind '{other}'"),
    };
    save_features(&table, need(a.out, "out")?)?;
    Ok(())
}

fn cmd_concat(a: ConcatArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    if a.inputs.len() < 2 {
        bail!("concat needs at least two --input tables");
    }
    let tables = a
        .inputs
        .iter()
        .map(load_features)
        .collect::<mmrec::Result<Vec<_>>>()?;
    let fused = concat_features(&tables, a.l2_normalize.unwrap_or(false))?;
    save_features(&fused, need(a.out, "out")?)?;
    Ok(())
}

fn load_schema(name: Option<&str>) -> Result<PromptSchema> {
    let name = need(name, "schema")?;
    match PromptSchema::builtin(name) {
        Some(s) => Ok(s),
        None => Ok(PromptSchema::load_json(name)?),
    }
}

fn encode_file(
    answers: &Path,
    schema: &PromptSchema,
    synonyms: Option<&Path>,
    top_k: usize,
) -> Result<(AttributeMatrix, mmrec::keywords::EncodingReport)> {
    let answers = load_answers(answers)?;
    let syn = synonyms.map(load_synonyms).transpose()?;
    let (m, _, report) = encode_answers(&answers, schema, syn.as_ref(), top_k)?;
    Ok((m, report))
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let schema = load_schema(a.schema.as_deref())?;
    let (m, report) = encode_file(
        &need(a.answers, "answers")?,
        &schema,
        a.synonyms.as_deref(),
        a.top_k.unwrap_or(50),
    )?;
    m.write_tsv(need(a.out, "out")?)?;
    let text = serde_json::to_string_pretty(&report)?;
    match a.report {
        Some(p) => write(&p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Loads the split and aligns feature tables; `drop_items` shrinks the dataset.
fn load_inputs(
    a: &ModelArgs,
) -> Result<(
    InteractionDataset,
    Vec<FeatureTable>,
    Option<AttributeMatrix>,
)> {
    let mut ds = InteractionDataset::read_split_tsv(need(a.split.as_ref(), "split")?)?;
    let policy = match &a.missing {
        Some(p) => parse::<MissingPolicy>(p)?,
        None => MissingPolicy::Error,
    };
    let raw = a
        .features
        .iter()
        .map(load_features)
        .collect::<mmrec::Result<Vec<_>>>()?;
    if policy == MissingPolicy::DropItems {
        let mut drop = HashSet::new();
        for t in &raw {
            drop.extend(align_to_dataset(t, &ds, policy)?.missing);
        }
        if !drop.is_empty() {
            log::warn!("dropping {} items without features", drop.len());
            ds = ds.without_items(&drop);
        }
    }
    let tables = raw
        .iter()
        .map(|t| align_to_dataset(t, &ds, policy).map(|a| a.table))
        .collect::<mmrec::Result<Vec<_>>>()?;
    let attrs = a
        .attributes
        .as_ref()
        .map(AttributeMatrix::read_tsv)
        .transpose()?;
    Ok((ds, tables, attrs))
}

fn train_config(a: &ModelArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        l2_reg: a.reg.unwrap_or(d.l2_reg),
        latent_dim: a.dim.unwrap_or(d.latent_dim),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
        early_stop_patience: a.patience.unwrap_or(d.early_stop_patience),
        eval_every: a.eval_every.unwrap_or(d.eval_every),
    }
}

fn model_options(a: &ModelArgs) -> ModelOptions {
    let mut o = a.options.clone().unwrap_or_default();
    if let Some(l) = a.layers {
        o.lightgcn.layers = l;
        o.freedom.layers = l;
        o.bm3.layers = l;
    }
    if let Some(k) = a.graph_k {
        o.lattice.graph_k = k;
        o.freedom.graph_k = k;
    }
    if let Some(r) = a.prune_ratio {
        o.freedom.prune_ratio = r;
    }
    if let Some(p) = a.dropout {
        o.bm3.dropout_p = p;
    }
    o
}

fn similarity_config(a: &ModelArgs) -> Result<SimilarityConfig> {
    let kind = match &a.similarity {
        Some(s) => parse::<SimilarityKind>(s)?,
        None => SimilarityKind::Cosine,
    };
    let mut cfg = SimilarityConfig::new(kind, a.neighbors.unwrap_or(20));
    if let Some(w) = &a.weighting {
        cfg = cfg.with_weighting(parse::<Weighting>(w)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Grid built from the flags: single point for `train`, full axes for `grid`.
fn build_grid(a: &ModelArgs, single: bool) -> Result<ExperimentGrid> {
    let family = parse::<ModelFamily>(need(a.model.as_deref(), "model")?)?;
    let base = train_config(a);
    let mut g = if single {
        ExperimentGrid::single_learned(family, base)
    } else {
        ExperimentGrid {
            base,
            ..ExperimentGrid::for_family(family)
        }
    };
    if single && family.is_knn() {
        let sim = similarity_config(a)?;
        g.similarities = vec![sim.kind];
        g.neighbors = vec![sim.neighbors];
        g.weightings = vec![sim.weighting];
    }
    if !single {
        if !a.grid_lr.is_empty() {
            g.learning_rates = a.grid_lr.clone();
        }
        if !a.grid_reg.is_empty() {
            g.l2_regs = a.grid_reg.clone();
        }
        if !a.grid_dim.is_empty() {
            g.latent_dims = a.grid_dim.clone();
        }
        if let Some(s) = &a.similarity {
            g.similarities = vec![parse::<SimilarityKind>(s)?];
        }
        if let Some(k) = a.neighbors {
            g.neighbors = vec![k];
        }
        if let Some(w) = &a.weighting {
            g.weightings = vec![parse::<Weighting>(w)?];
        }
    }
    g.options = model_options(a);
    g.workers = a.workers.unwrap_or(0);
    Ok(g)
}

fn save_model_artifacts(
    dir: &Path,
    ds: &InteractionDataset,
    best: &GridPoint,
    model: &TrainedModel,
    checkpoint: Option<&Checkpoint>,
) -> Result<()> {
    if let Some(ck) = checkpoint {
        ck.save(dir.join("model.mmck"))?;
    }
    if let (TrainedModel::Knn(k), PointConfig::Knn(_)) = (model, &best.config) {
        k.model
            .write_tsv(dir.join("neighbors.tsv"), ds.item_ids())?;
    }
    Ok(())
}

fn cmd_grid(a: ModelArgs, single: bool) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let (ds, tables, attrs) = load_inputs(&a)?;
    let grid = build_grid(&a, single)?;
    let side = SideInputs {
        features: &tables,
        attributes: attrs.as_ref(),
    };
    let run = run_grid(&grid, &ds, side)?;
    let dir = out_dir(&a.out_dir)?;
    save_model_artifacts(
        &dir,
        &ds,
        &run.result.best,
        &run.model,
        run.checkpoint.as_ref(),
    )?;
    run.result
        .test
        .write_samples_tsv(dir.join("test_samples.tsv"), ds.user_ids())?;
    let provenance = RunProvenance::new(&a, vec![grid.base.seed], grid.family.is_simplified())?;
    let report = serde_json::json!({
        "result": run.result,
        "provenance": provenance,
    });
    write(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    run.result.write_trace_json(dir.join("trace.json"))?;
    println!(
        "{} best {} valid Recall@20 {:.4} test Recall@20 {:.4} nDCG@20 {:.4} ({} failed points)",
        grid.family,
        run.result.best.label,
        run.result.best_valid.recall,
        run.result.test.mean.recall,
        run.result.test.mean.ndcg,
        run.result.n_failed()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let ds = InteractionDataset::read_split_tsv(need(a.split.as_ref(), "split")?)?;
    let model = if let Some(p) = &a.checkpoint {
        scorer_from_checkpoint(&Checkpoint::load(p)?)?
    } else if let Some(p) = &a.neighbors {
        let nb = NeighborhoodModel::read_tsv(p, ds.item_ids(), NeighborSource::Interactions)?;
        TrainedModel::Knn(KnnScorer {
            model: nb,
            history: ds.user_items(&[Split::Train]),
        })
    } else {
        let family = parse::<ModelFamily>(a.model.as_deref().unwrap_or("mostpop"))?;
        fit_baseline(family, &ds, a.seed.unwrap_or_else(default_seed))?
    };
    let target = match &a.target {
        Some(t) => parse::<Split>(t)?,
        None => Split::Test,
    };
    let req = RankingRequest::for_target(target).with_k(a.k.unwrap_or(DEFAULT_K));
    let report = evaluate_topk(&model, &ds, &req, target)?;
    if let Some(p) = &a.samples {
        report.write_samples_tsv(p, ds.user_ids())?;
    }
    let text = report.to_json()?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => println!(
            "Recall@{k} {:.4} nDCG@{k} {:.4} HR@{k} {:.4} over {} users",
            report.mean.recall,
            report.mean.ndcg,
            report.mean.hr,
            report.n_evaluated_users,
            k = req.k
        ),
    }
    Ok(())
}

fn test_kind(s: Option<&str>) -> Result<TestKind> {
    match s {
        Some(t) => parse::<TestKind>(t),
        None => Ok(TestKind::PairedT),
    }
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let a = config::merge(&a, a.model.config.as_deref())?;
    let (ds, tables, _) = load_inputs(&a.model)?;
    if tables.is_empty() {
        bail!("ablate-noise needs at least one --features reference table");
    }
    let grid = build_grid(&a.model, a.model.grid_lr.is_empty() && a.model.lr.is_some())?;
    let seeds = if a.seeds.is_empty() {
        vec![0, 1, 2, 3, 4]
    } else {
        a.seeds.clone()
    };
    let cfg = AblationConfig {
        shrinkage: a.shrinkage.unwrap_or(DEFAULT_SHRINKAGE),
        test: test_kind(a.test.as_deref())?,
        ..AblationConfig::default()
    };
    let report = run_noise_ablation(&grid, &ds, &tables, &seeds, &cfg)?;
    let dir = out_dir(&a.model.out_dir)?;
    write(&dir.join("ablation.json"), &report.to_json()?)?;
    report.write_plot_tsv(dir.join("plot.tsv"))?;
    print!("{}", report.plot_tsv());
    for c in &report.comparisons {
        println!(
            "semantic vs {} {}: delta {:+.4} p {:.3e}",
            c.against, c.metric, c.delta, c.significance.p_value
        );
    }
    Ok(())
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<()> {
    let a = config::merge(&a, a.model.config.as_deref())?;
    if a.datasets.is_empty() {
        bail!("benchmark-extractors needs a --config listing datasets and extractor files");
    }
    let models = if a.models.is_empty() {
        vec![
            ModelFamily::Vbpr,
            ModelFamily::Lattice,
            ModelFamily::Bm3,
            ModelFamily::Freedom,
        ]
    } else {
        a.models
            .iter()
            .map(|m| parse::<ModelFamily>(m))
            .collect::<Result<_>>()?
    };
    let policy = match &a.model.missing {
        Some(p) => parse::<MissingPolicy>(p)?,
        None => MissingPolicy::Error,
    };
    let mut datasets = Vec::new();
    for spec in &a.datasets {
        let ds = InteractionDataset::read_split_tsv(&spec.split)?;
        let mut extractors = Vec::new();
        for (name, files) in &spec.extractors {
            let tables = files
                .iter()
                .map(|f| {
                    load_features(f)
                        .and_then(|t| align_to_dataset(&t, &ds, policy))
                        .map(|a| a.table)
                })
                .collect::<mmrec::Result<Vec<_>>>()?;
            extractors.push((name.clone(), tables));
        }
        datasets.push(BenchmarkDataset {
            name: spec.name.clone(),
            dataset: ds,
            extractors,
        });
    }
    let mut model_args = a.model.clone();
    model_args.model = Some(models[0].to_string());
    let single = a.model.grid_lr.is_empty() && a.model.lr.is_some();
    let cfg = BenchmarkConfig {
        models,
        grid: build_grid(&model_args, single)?,
        test: test_kind(a.test.as_deref())?,
    };
    let report = run_extractor_benchmark(&datasets, &cfg)?;
    let dir = out_dir(&a.model.out_dir)?;
    write(&dir.join("benchmark.json"), &report.to_json()?)?;
    write(&dir.join("table.tsv"), &report.to_tsv())?;
    write(&dir.join("borda.tsv"), &report.borda.to_tsv())?;
    print!("{}", report.borda.to_tsv());
    Ok(())
}

fn cmd_attribute(a: AttributeArgs) -> Result<()> {
    let a = config::merge(&a, a.model.config.as_deref())?;
    let (ds, _, _) = load_inputs(&a.model)?;
    let schema = load_schema(a.schema.as_deref())?;
    let mut sources = Vec::new();
    for spec in &a.answers {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--answers expects name=path, got '{spec}'"))?;
        let (m, report) = encode_file(
            Path::new(path),
            &schema,
            a.synonyms.as_deref(),
            a.top_k.unwrap_or(50),
        )?;
        log::info!(
            "{name}: {} records, {} parse failures",
            report.n_records,
            report.parse_failures
        );
        sources.push((name.to_string(), m));
    }
    if sources.is_empty() {
        bail!("attribute-study needs at least one --answers name=path");
    }
    let mut learned_args = a.model.clone();
    learned_args.model = Some("bprmf".into());
    let mut knn_args = a.model.clone();
    knn_args.model = Some("itemknn".into());
    let single = a.model.grid_lr.is_empty() && a.model.lr.is_some();
    let cfg = AttributeStudyConfig {
        baselines: BASELINES.to_vec(),
        learned_grid: build_grid(&learned_args, single)?,
        knn_grid: build_grid(&knn_args, false)?,
        test: test_kind(a.test.as_deref())?,
    };
    let report = run_attribute_study(&ds, &sources, &cfg)?;
    let dir = out_dir(&a.model.out_dir)?;
    write(&dir.join("attribute_study.json"), &report.to_json()?)?;
    write(&dir.join("table.tsv"), &report.to_tsv())?;
    print!("{}", report.to_tsv());
    for s in report.sanity.iter().filter(|s| s.uninformative) {
        log::warn!("{}: every item has the same attributes", s.source);
    }
    Ok(())
}

fn cmd_borda(a: BordaArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let table = RecallTable::read_tsv(need(a.input, "input")?)?;
    let b = borda_count(&table, table.extractors.len())?;
    match &a.out {
        Some(p) => write(p, &b.to_tsv())?,
        None => print!("{}", b.to_tsv()),
    }
    if let Some(p) = &a.json {
        write(p, &serde_json::to_string_pretty(&b)?)?;
    }
    Ok(())
}

/// `user_id → (recall, ndcg, hr)` from a samples TSV.
fn read_samples(path: &Path) -> Result<HashMap<String, [f64; 3]>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 4 {
            bail!("{}: expected 4 columns", path.display());
        }
        let v = [rec[1].parse()?, rec[2].parse()?, rec[3].parse()?];
        out.insert(rec[0].to_string(), v);
    }
    Ok(out)
}

fn cmd_significance(a: SignificanceArgs) -> Result<()> {
    let a = config::merge(&a, a.config.as_deref())?;
    let xa = read_samples(&need(a.a, "a")?)?;
    let xb = read_samples(&need(a.b, "b")?)?;
    let metric = match a.metric.as_deref().unwrap_or("recall") {
        "recall" => Metric::Recall,
        "ndcg" => Metric::Ndcg,
        "hr" => Metric::Hr,
        other => bail!("unknown metric '{other}'"),
    };
    let col = Metric::ALL.iter().position(|m| *m == metric).unwrap();
    let mut users: Vec<&String> = xa.keys().filter(|u| xb.contains_key(*u)).collect();
    users.sort();
    if users.len() < xa.len().max(xb.len()) {
        log::warn!(
            "{} users are not in both files and are skipped",
            xa.len().max(xb.len()) - users.len()
        );
    }
    let va: Vec<f64> = users.iter().map(|u| xa[*u][col]).collect();
    let vb: Vec<f64> = users.iter().map(|u| xb[*u][col]).collect();
    let sig = paired_significance(&va, &vb, test_kind(a.test.as_deref())?)?;
    println!("{}", serde_json::to_string_pretty(&sig)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Features(FeaturesCommand::Noise(a)) => cmd_noise(a),
        Command::Features(FeaturesCommand::Concat(a)) => cmd_concat(a),
        Command::Features(FeaturesCommand::EncodeAttributes(a)) => cmd_encode(a),
        Command::Train(a) => cmd_grid(a, true),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Grid(a) => cmd_grid(a, false),
        Command::AblateNoise(a) => cmd_ablate(a),
        Command::BenchmarkExtractors(a) => cmd_benchmark(a),
        Command::AttributeStudy(a) => cmd_attribute(a),
        Command::Borda(a) => cmd_borda(a),
        Command::Significance(a) => cmd_significance(a),
    }
}
