//! Command-line pipeline: ingestion, neighbor discovery, synthesis,
//! training, evaluation, ablation sweeps, and context analysis. All
//! diagnostics go to stderr, data goes to files under the output
//! directory, and every value can be set by flag, config file, or default
//! (in that precedence order).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use poicast::analysis::{
    clip_distance_stats, coordinate_clips, dtw_friend_vs_stranger, histogram_csv,
    hourly_category_histogram, CLIP_GAP_SECS, INTER_PAIR_CAP,
};
use poicast::data::{
    build_poi_registry, parse_checkins, split, CategoryScheme, CheckInLog, DatasetSplit,
    PoiRegistry, SourceFormat,
};
use poicast::model::{Model, ModelConfig, Variant};
use poicast::social::{discover_neighbors, NeighborGraph};
use poicast::synth::{generate_tsv, parse_groups, SynthConfig};
use poicast::train::{
    evaluate, fit, load_model, prepare, records_to_jsonl, save_model, DatasetBundle,
    DatasetFingerprint, Manifest, TrainConfig, TrainResult,
};

// ── Configuration ────────────────────────────────────────────────────────

/// Every knob of every command, with a documented default. The config file
/// is a single flat JSON object with these keys; flags override file
/// values, file values override defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct RunConfig {
    /// Path to the raw check-in TSV (ingest).
    checkins: Option<String>,
    /// Source format: "foursquare" or "gowalla".
    format: String,
    /// Path to a category-scheme TSV; the bundled scheme when absent.
    scheme: Option<String>,
    /// Optional friendship edges file (neighbors): neighbors are loaded
    /// from it instead of being discovered by similarity.
    edges: Option<String>,
    /// Optional ground-truth groups file (analyze).
    groups: Option<String>,
    /// Leading fraction of each user's check-ins that is training data.
    train_frac: f64,
    /// Trailing fraction of each user's training targets used as
    /// validation.
    val_frac_of_train: f64,
    /// Model variant: V0..V5, full, or aux-only.
    variant: String,
    /// Observation window length.
    n: usize,
    /// Coordinate-branch input length (defaults to n).
    aux_input_len: Option<usize>,
    /// Maximum neighbors attended per instance.
    k_max: usize,
    /// Similarity threshold for neighbor discovery.
    tau: f64,
    d_poi: usize,
    d_cat: usize,
    d_time: usize,
    d_user: usize,
    layers: usize,
    heads: usize,
    d_ffn: usize,
    dropout: f64,
    lr: f64,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    /// Stop as soon as train top-1 reaches this level.
    stop_at_train_acc1: Option<f64>,
    synth_users: usize,
    synth_pois: usize,
    synth_categories: usize,
    synth_groups: usize,
    semantic_strength: f64,
    social_strength: f64,
    geo_radius: f64,
    geo_strength: f64,
    checkins_per_user: usize,
    /// Root seed for every derived random stream.
    seed: u64,
    /// Output directory for all artifacts.
    out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            checkins: None,
            format: "foursquare".into(),
            scheme: None,
            edges: None,
            groups: None,
            train_frac: 0.8,
            val_frac_of_train: 0.1,
            variant: "full".into(),
            n: 20,
            aux_input_len: None,
            k_max: 8,
            tau: 0.5,
            d_poi: 80,
            d_cat: 24,
            d_time: 24,
            d_user: 40,
            layers: 2,
            heads: 8,
            d_ffn: 256,
            dropout: 0.1,
            lr: 1e-3,
            batch_size: 512,
            max_epochs: 200,
            patience: 10,
            stop_at_train_acc1: None,
            synth_users: synth.n_users,
            synth_pois: synth.n_pois,
            synth_categories: synth.n_categories,
            synth_groups: synth.n_groups,
            semantic_strength: synth.semantic_strength,
            social_strength: synth.social_strength,
            geo_radius: synth.geo_radius,
            geo_strength: synth.geo_strength,
            checkins_per_user: synth.checkins_per_user,
            seed: 0,
            out: "out".into(),
        }
    }
}

impl RunConfig {
    fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    fn variant(&self) -> Result<Variant> {
        Ok(self.variant.parse()?)
    }

    fn scheme(&self) -> Result<CategoryScheme> {
        match &self.scheme {
            None => Ok(CategoryScheme::foursquare()),
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading category scheme {path}"))?;
                Ok(CategoryScheme::parse(&text)?)
            }
        }
    }

    fn model_config(&self, registry: &PoiRegistry, log: &CheckInLog) -> Result<ModelConfig> {
        let mut cfg =
            ModelConfig::new(registry.poi_count(), registry.category_count(), log.user_count());
        cfg.d_poi = self.d_poi;
        cfg.d_cat = self.d_cat;
        cfg.d_time = self.d_time;
        cfg.d_user = self.d_user;
        cfg.layers = self.layers;
        cfg.heads = self.heads;
        cfg.d_ffn = self.d_ffn;
        cfg.dropout = self.dropout;
        cfg.k_max = self.k_max;
        let mut cfg = cfg.with_n(self.n);
        if let Some(len) = self.aux_input_len {
            cfg.aux_input_len = len;
        }
        Ok(cfg.with_variant(self.variant()?))
    }

    fn train_config(&self, variant: Variant) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            variant,
            n: self.n,
            stop_at_train_acc1: self.stop_at_train_acc1,
        }
    }

    fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_users: self.synth_users,
            n_pois: self.synth_pois,
            n_categories: self.synth_categories,
            n_groups: self.synth_groups,
            semantic_strength: self.semantic_strength,
            social_strength: self.social_strength,
            geo_radius: self.geo_radius,
            geo_strength: self.geo_strength,
            checkins_per_user: self.checkins_per_user,
            seed: self.seed,
        }
    }
}

/// Flag-level overrides; `None` means "not set on the command line".
#[derive(Debug, Clone, Default, Args)]
struct Overrides {
    /// Raw check-in TSV to ingest.
    #[arg(long)]
    checkins: Option<String>,
    /// Source format: foursquare or gowalla.
    #[arg(long)]
    format: Option<String>,
    /// Category-scheme TSV (bundled scheme when omitted).
    #[arg(long)]
    scheme: Option<String>,
    /// Friendship edges file; skips similarity discovery.
    #[arg(long)]
    edges: Option<String>,
    /// Ground-truth groups file for social analysis.
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac_of_train: Option<f64>,
    /// Model variant: V0..V5, full, or aux-only.
    #[arg(long)]
    variant: Option<String>,
    /// Observation window length.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    aux_input_len: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Neighbor similarity threshold.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    d_poi: Option<usize>,
    #[arg(long)]
    d_cat: Option<usize>,
    #[arg(long)]
    d_time: Option<usize>,
    #[arg(long)]
    d_user: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    stop_at_train_acc1: Option<f64>,
    #[arg(long)]
    synth_users: Option<usize>,
    #[arg(long)]
    synth_pois: Option<usize>,
    #[arg(long)]
    synth_categories: Option<usize>,
    #[arg(long)]
    synth_groups: Option<usize>,
    #[arg(long)]
    semantic_strength: Option<f64>,
    #[arg(long)]
    social_strength: Option<f64>,
    #[arg(long)]
    geo_radius: Option<f64>,
    #[arg(long)]
    geo_strength: Option<f64>,
    #[arg(long)]
    checkins_per_user: Option<usize>,
}

macro_rules! apply_fields {
    ($cfg:expr, $ov:expr, opt: [$($opt:ident),*], val: [$($val:ident),*]) => {
        $( if $ov.$opt.is_some() { $cfg.$opt = $ov.$opt.clone(); } )*
        $( if let Some(v) = &$ov.$val { $cfg.$val = v.clone(); } )*
    };
}

impl RunConfig {
    fn apply(&mut self, ov: &Overrides) {
        apply_fields!(self, ov,
            opt: [checkins, scheme, edges, groups, aux_input_len, stop_at_train_acc1],
            val: [format, train_frac, val_frac_of_train, variant, n, k_max, tau,
                  d_poi, d_cat, d_time, d_user, layers, heads, d_ffn, dropout,
                  lr, batch_size, max_epochs, patience,
                  synth_users, synth_pois, synth_categories, synth_groups,
                  semantic_strength, social_strength, geo_radius, geo_strength,
                  checkins_per_user]);
    }
}

// ── Command line ─────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "poicast",
    about = "Next point-of-interest prediction pipeline",
    version
)]
struct Cli {
    /// Flat JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for all derived randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a raw check-in file, build the POI registry, and split
    /// trajectory windows chronologically.
    Ingest(CommonArgs),
    /// Discover (or load) the neighbor graph and export it.
    Neighbors(CommonArgs),
    /// Generate a synthetic check-in corpus plus ground-truth groups.
    Synth(CommonArgs),
    /// Train a variant on the ingested dataset; writes the best
    /// checkpoint and per-epoch metrics.
    Train(CommonArgs),
    /// Evaluate a checkpoint (or a random initialization) on one split.
    Eval(EvalArgs),
    /// Train and test several variants across several seeds; writes the
    /// accuracy table as CSV.
    Ablate(AblateArgs),
    /// Hour-of-day histograms, trajectory-clip distance statistics, and
    /// friend-versus-stranger trajectory distances.
    Analyze(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    ov: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ov: Overrides,
    /// Checkpoint path (default: <out>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate freshly initialized parameters instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
    /// Split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    ov: Overrides,
    /// Comma-separated variant list.
    #[arg(long, default_value = "V0,V1,V2,V3,V4,V5,full")]
    variants: String,
    /// Comma-separated seed list.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
}

fn load_config(cli: &Cli, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file_cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg = file_cfg;
    }
    cfg.apply(ov);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    Ok(cfg)
}

// ── Artifacts ────────────────────────────────────────────────────────────

/// The ingested dataset: dense-id log plus the POI registry with its
/// normalization bounds.
#[derive(Serialize, Deserialize)]
struct DatasetArtifact {
    log: CheckInLog,
    registry: PoiRegistry,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("dataset.json")
}

fn split_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("split.json")
}

fn neighbors_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("neighbors.tsv")
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("model.ckpt")
}

fn load_dataset(cfg: &RunConfig) -> Result<DatasetArtifact> {
    let path = dataset_path(cfg);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("reading {} (run `ingest` first)", path.display())
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let path = split_path(cfg);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("reading {} (run `ingest` first)", path.display())
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn load_neighbors(cfg: &RunConfig, log: &CheckInLog) -> Result<NeighborGraph> {
    let path = neighbors_path(cfg);
    let text = fs::read_to_string(&path).with_context(|| {
        format!("reading {} (run `neighbors` first)", path.display())
    })?;
    let (graph, skipped) = NeighborGraph::load(&text, log, cfg.tau)?;
    if skipped > 0 {
        eprintln!("neighbors: skipped {skipped} edges naming unknown users");
    }
    Ok(graph)
}

fn load_bundle(cfg: &RunConfig, need_social: bool) -> Result<DatasetBundle> {
    let data = load_dataset(cfg)?;
    let split = load_split(cfg)?;
    let social = if need_social { Some(load_neighbors(cfg, &data.log)?) } else { None };
    Ok(DatasetBundle { log: data.log, registry: data.registry, split, social })
}

// ── Commands ─────────────────────────────────────────────────────────────

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .checkins
        .as_ref()
        .ok_or_else(|| anyhow!("ingest requires --checkins (or a `checkins` config key)"))?;
    let format: SourceFormat = cfg.format.parse()?;
    let (log, report) = parse_checkins(Path::new(path), format)?;
    if report.malformed > 0 {
        eprintln!("ingest: skipped {} malformed lines", report.malformed);
    }
    if log.checkin_count() == 0 {
        bail!("no check-ins parsed");
    }
    let registry = build_poi_registry(&log, &cfg.scheme()?, cfg.train_frac)?;
    let windows = split(&log, &registry, cfg.n, cfg.train_frac, cfg.val_frac_of_train)?;

    write_text(&dataset_path(cfg), &serde_json::to_string(&DatasetArtifact { log: log.clone(), registry })?)?;
    write_text(&split_path(cfg), &serde_json::to_string(&windows)?)?;

    println!(
        "{} users / {} POIs / {} check-ins",
        log.user_count(),
        log.poi_count(),
        log.checkin_count()
    );
    println!("{}", windows.summary());
    Ok(())
}

fn cmd_neighbors(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let graph = match &cfg.edges {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading edges file {path}"))?;
            let (graph, skipped) = NeighborGraph::load(&text, &data.log, cfg.tau)?;
            if skipped > 0 {
                eprintln!("neighbors: skipped {skipped} edges naming unknown users");
            }
            graph
        }
        None => discover_neighbors(&data.log, cfg.train_frac, cfg.tau),
    };
    write_text(&neighbors_path(cfg), &graph.export(&data.log))?;
    println!("{} users, {} edges (tau = {})", graph.user_count(), graph.edge_count(), cfg.tau);
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let scfg = cfg.synth_config();
    let out = generate_tsv(&scfg)?;
    write_text(&cfg.out_dir().join("synthetic_checkins.tsv"), &out.checkins_tsv)?;
    write_text(&cfg.out_dir().join("synthetic_groups.tsv"), &out.groups_tsv)?;
    println!(
        "{} users x {} check-ins over {} POIs ({} groups)",
        scfg.n_users, scfg.checkins_per_user, scfg.n_pois, scfg.n_groups
    );
    Ok(())
}

fn train_summary(result: &TrainResult) -> String {
    format!(
        "best epoch {} (watched top-1 {:.4}) after {} epochs",
        result.best_epoch, result.best_acc1, result.epochs_run
    )
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.variant()?;
    let model_cfg_probe = {
        let data = load_dataset(cfg)?;
        cfg.model_config(&data.registry, &data.log)?
    };
    let bundle = load_bundle(cfg, model_cfg_probe.use_social)?;
    let tcfg = cfg.train_config(variant);
    let base = cfg.model_config(&bundle.registry, &bundle.log)?;
    let (result, test_report) = fit(&bundle, &base, &tcfg)?;

    let manifest = Manifest {
        config: base.with_variant(variant),
        train: tcfg,
        fingerprint: bundle.fingerprint(),
    };
    save_model(&checkpoint_path(cfg), &result.params, &manifest)?;
    write_text(&cfg.out_dir().join("metrics.jsonl"), &records_to_jsonl(&result.records)?)?;

    println!("{}", train_summary(&result));
    println!(
        "test top-1 {:.4} / top-5 {:.4} / top-10 {:.4} / top-20 {:.4}",
        test_report.acc[0], test_report.acc[1], test_report.acc[2], test_report.acc[3]
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    let current = DatasetFingerprint::of(&data.log, &data.registry);

    let (params, model_cfg, variant, seed) = if args.random_init {
        let variant = cfg.variant()?;
        let model_cfg = cfg.model_config(&data.registry, &data.log)?;
        let model = Model::new(model_cfg.clone())?;
        (model.init_params(cfg.seed)?, model_cfg, variant, cfg.seed)
    } else {
        let path = args.checkpoint.clone().unwrap_or_else(|| checkpoint_path(cfg));
        let (params, manifest) = load_model(&path)?;
        if manifest.fingerprint != current {
            eprintln!("checkpoint fingerprint: {}", serde_json::to_string(&manifest.fingerprint)?);
            eprintln!("dataset fingerprint:    {}", serde_json::to_string(&current)?);
            bail!("checkpoint and dataset fingerprints do not match");
        }
        (params, manifest.config, manifest.train.variant, manifest.train.seed)
    };

    let split = load_split(cfg)?;
    let social = if model_cfg.use_social { Some(load_neighbors(cfg, &data.log)?) } else { None };
    let bundle = DatasetBundle { log: data.log, registry: data.registry, split, social };
    let model = Model::new(model_cfg)?;
    let provider = bundle.provider();
    let windows = match args.split.as_str() {
        "train" => &bundle.split.train,
        "val" => &bundle.split.val,
        "test" => &bundle.split.test,
        other => bail!("unknown split `{other}` (expected train, val, or test)"),
    };
    let prepared = prepare(&provider, &model, windows);
    let report = evaluate(&model, &params, &provider, &prepared, seed, variant)?;

    let record = report.record(0, &args.split);
    write_text(&cfg.out_dir().join("eval.json"), &serde_json::to_string(&record)?)?;
    println!(
        "{} split: top-1 {:.4} / top-5 {:.4} / top-10 {:.4} / top-20 {:.4} ({} windows)",
        args.split,
        report.acc[0],
        report.acc[1],
        report.acc[2],
        report.acc[3],
        windows.len()
    );
    println!(
        "losses: poi {:.4}, coord {:.4}, consistency {:.4}, total {:.4}",
        report.losses.l1, report.losses.l2, report.losses.l3, report.losses.total
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, args: &AblateArgs) -> Result<()> {
    let variants: Vec<Variant> = args
        .variants
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Variant>().map_err(Into::into))
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect::<Result<_>>()?;
    if variants.is_empty() || seeds.is_empty() {
        bail!("ablate needs at least one variant and one seed");
    }

    let need_social = variants.iter().any(|v| {
        ModelConfig::new(1, 1, 1).with_variant(*v).use_social
    });
    let bundle = load_bundle(cfg, need_social)?;
    let base = cfg.model_config(&bundle.registry, &bundle.log)?;
    let tcfg = cfg.train_config(variants[0]);

    let datasets: Vec<(u64, &DatasetBundle)> = seeds.iter().map(|&s| (s, &bundle)).collect();
    let table = poicast::train::run_ablation(&variants, &datasets, &base, &tcfg);
    for (variant, seed, err) in table.failures() {
        eprintln!("ablate: {variant} seed {seed} failed: {err}");
    }
    write_text(&cfg.out_dir().join("ablation.csv"), &table.to_csv())?;
    for v in &variants {
        if let Some(m) = table.median_acc1(*v) {
            println!("{v}: median top-1 {m:.4} over {} seeds", seeds.len());
        }
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let hist = hourly_category_histogram(&data.log, &data.registry);
    write_text(&cfg.out_dir().join("hourly_histogram.csv"), &histogram_csv(&hist, &data.registry))?;

    let clips = coordinate_clips(&data.log, &data.registry, CLIP_GAP_SECS);
    let (intra, inter) = clip_distance_stats(&clips, INTER_PAIR_CAP, cfg.seed);
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut csv = String::from("statistic,value\n");
    csv.push_str(&format!("clips,{}\n", clips.len()));
    csv.push_str(&format!("intra_clip_mean_distance,{}\n", fmt_opt(intra)));
    csv.push_str(&format!("inter_clip_mean_distance,{}\n", fmt_opt(inter)));
    write_text(&cfg.out_dir().join("clip_distances.csv"), &csv)?;

    if let Some(path) = &cfg.groups {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading groups file {path}"))?;
        let groups = parse_groups(&text, &data.log)?;
        let (friend, stranger) =
            dtw_friend_vs_stranger(&data.log, &data.registry, &groups, cfg.seed)?;
        let mut csv = String::from("statistic,value\n");
        csv.push_str(&format!("friend_mean_dtw,{}\n", fmt_opt(friend)));
        csv.push_str(&format!("stranger_mean_dtw,{}\n", fmt_opt(stranger)));
        write_text(&cfg.out_dir().join("dtw_social.csv"), &csv)?;
    }
    println!(
        "analyzed {} check-ins into {} clips",
        data.log.checkin_count(),
        clips.len()
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Ingest(a) => cmd_ingest(&load_config(&cli, &a.ov)?),
        Cmd::Neighbors(a) => cmd_neighbors(&load_config(&cli, &a.ov)?),
        Cmd::Synth(a) => cmd_synth(&load_config(&cli, &a.ov)?),
        Cmd::Train(a) => cmd_train(&load_config(&cli, &a.ov)?),
        Cmd::Eval(a) => cmd_eval(&load_config(&cli, &a.ov)?, a),
        Cmd::Ablate(a) => cmd_ablate(&load_config(&cli, &a.ov)?, a),
        Cmd::Analyze(a) => cmd_analyze(&load_config(&cli, &a.ov)?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
