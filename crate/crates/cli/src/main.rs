//! Command-line front end for training, evaluating, and inspecting
//! tensor-based word models.
//!
//! Exit codes: 0 on success, 2 for usage and data problems, 3 for
//! numerical failures. Errors print as a single machine-parseable line
//! `error[<category>]: <message>` on stderr. Every run writes a
//! `runspec.txt` echoing its resolved configuration — identical arguments
//! and seeds produce byte-identical artifacts at any thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexfun::{
    ablate_tuples, ablate_words, build_graph, config_digest, fit, glf_predict, glf_train,
    load_embeddings, load_eval_dataset, load_model, load_phi_matrix, load_tuples, max_abs_table,
    nearest_neighbors, ps_mixture_store, save_glf, save_model, spearman_t_approx, ArchiveKind,
    BatchMode, DatasetShape, EmbeddingTable, Error, EvalItem, GlfConfig, NeighborGraph,
    ObjectiveConfig, Params, ParamsStore, Pos, Preset, Representation, Result, ScoreMode,
    ScoredDataset, SimilaritySource, TrainConfig, TrainingTuple, WordId, DEFAULT_PERMUTATIONS,
    GLF_MAX_ITERATIONS, GLF_MIN_TUPLES, MAX_ITERATIONS, P_MIN, Q_MIN, TUPLE_CAP,
};

#[derive(Parser)]
#[command(
    name = "lexfun",
    version,
    about = "Train and evaluate tensor-valued word functions",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-word tensors to phrase tuples
    Train(TrainArgs),
    /// Score a rated dataset with a trained model or a baseline
    Eval(EvalArgs),
    /// Retrain on thinned data across a grid of percentages
    Ablate(AblateArgs),
    /// List the words most similar to one word's learned tensor
    Neighbors(NeighborsArgs),
    /// Learn a tensor that predicts adjective matrices from embeddings
    Glf(GlfArgs),
    /// Re-express a model archive as text
    Export(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WordType {
    Adjective,
    Verb,
}

impl WordType {
    fn pos(self) -> Pos {
        match self {
            WordType::Adjective => Pos::Adjective,
            WordType::Verb => Pos::Verb,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rep {
    Full,
    Lowrank,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Fix1,
    Fix2,
    Fix3,
    Var,
}

impl PresetArg {
    fn to_preset(self) -> Preset {
        match self {
            PresetArg::Fix1 => Preset::Fix1,
            PresetArg::Fix2 => Preset::Fix2,
            PresetArg::Fix3 => Preset::Fix3,
            PresetArg::Var => Preset::Var,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Compose,
    Unfurl,
    Additive,
}

// the shared -Pair suffix is the point: these mirror the dataset-file
// shapes word-pair / an-pair / svo-pair on the command line
#[allow(clippy::enum_variant_names)]
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Shape {
    WordPair,
    AnPair,
    SvoPair,
}

impl Shape {
    fn to_shape(self) -> DatasetShape {
        match self {
            Shape::WordPair => DatasetShape::WordPair,
            Shape::AnPair => DatasetShape::AnPair,
            Shape::SvoPair => DatasetShape::SvoPair,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateAxis {
    Words,
    Tuples,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Unfurled,
    Manifest,
}

/// Input corpus files shared by training-style commands.
#[derive(Args, Clone)]
struct CorpusArgs {
    /// Training tuples (tab-separated)
    #[arg(long)]
    tuples: PathBuf,
    /// Argument-noun corpus counts (`noun<TAB>count`)
    #[arg(long)]
    counts: PathBuf,
    /// Word vectors for arguments and for similarity building
    #[arg(long)]
    embeddings: PathBuf,
    /// Holistic phrase vectors keyed by the tuples' phrase keys
    #[arg(long)]
    holistic: PathBuf,
    /// Precomputed similarity scores (`w1<TAB>w2<TAB>score`); defaults to
    /// cosine over the embeddings
    #[arg(long)]
    phi: Option<PathBuf>,
    /// Minimum phrase occurrence count
    #[arg(long, default_value_t = P_MIN)]
    min_count: u64,
    /// Minimum argument-noun corpus count
    #[arg(long, default_value_t = Q_MIN)]
    min_noun_count: u64,
    /// Most tuples kept per word
    #[arg(long, default_value_t = TUPLE_CAP)]
    cap: usize,
}

/// Model and optimization settings shared by training-style commands.
#[derive(Args, Clone)]
struct ModelArgs {
    /// Word category to train
    #[arg(long = "type", value_enum)]
    word_type: WordType,
    /// Parameter representation
    #[arg(long, value_enum, default_value_t = Rep::Full)]
    rep: Rep,
    /// Rank of the low-rank representation (required with --rep lowrank)
    #[arg(long)]
    rank: Option<usize>,
    /// Neighbour-blending weight in [0, 1]
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Neighbour-pull penalty weight
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Neighbour count
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Epoch budget
    #[arg(long, default_value_t = MAX_ITERATIONS)]
    iters: usize,
    /// Own-tensor decay weight (defaults: 0.1 dense, 0 low-rank)
    #[arg(long)]
    l2: Option<f64>,
    /// Named configuration overriding alpha/beta
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Minibatch size, or `full` for whole-batch steps
    #[arg(long, default_value = "20")]
    batch: String,
    /// Clamp negative similarities to zero when building the graph
    #[arg(long)]
    clamp_phi: bool,
    /// Random seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads; any count yields byte-identical results
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model archive (not needed for --mode additive)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Rated dataset file
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset shape
    #[arg(long, value_enum)]
    shape: Shape,
    /// Scoring mode
    #[arg(long, value_enum)]
    mode: EvalMode,
    /// Word vectors (arguments for compose; sides for additive)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Blend each word's tensor with its neighbours before scoring
    #[arg(long)]
    ps_mixture: bool,
    /// Blending weight for --ps-mixture
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Neighbour count for --ps-mixture
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Precomputed similarity scores for --ps-mixture
    #[arg(long)]
    phi: Option<PathBuf>,
    /// Clamp negative similarities when building the mixture graph
    #[arg(long)]
    clamp_phi: bool,
    /// Permutations for the significance test
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    perms: usize,
    /// Random seed for the permutation test
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Append the t-approximation p-value as an extra column
    #[arg(long)]
    t_approx: bool,
    /// Also write one CSV row per surviving item
    #[arg(long)]
    per_item: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// What to thin: whole words or individual tuples
    #[arg(long, value_enum)]
    axis: AblateAxis,
    /// Comma-separated keep percentages, e.g. 1,5,30,70,100
    #[arg(long)]
    percents: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NeighborsArgs {
    /// Trained model archive
    #[arg(long)]
    model: PathBuf,
    /// Word to look up
    #[arg(long)]
    word: String,
    /// How many neighbours to list
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GlfArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Adjectives need at least this many tuples to join pretraining
    #[arg(long, default_value_t = GLF_MIN_TUPLES)]
    min_tuples: usize,
    /// Epoch budget for the prediction tensor
    #[arg(long, default_value_t = GLF_MAX_ITERATIONS)]
    iters: usize,
    /// Epoch budget for the pretraining stage
    #[arg(long, default_value_t = MAX_ITERATIONS)]
    pretrain_iters: usize,
    /// Random seed for pretraining initialization
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Worker threads for pretraining
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Model archive to export
    #[arg(long)]
    model: PathBuf,
    /// Text form to produce
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {message}", e.category());
            if e.category() == "numerical" {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Neighbors(args) => cmd_neighbors(args),
        Command::Glf(args) => cmd_glf(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Settings that affect how a run executes but not which bytes it produces.
/// They are echoed in `runspec.txt` but kept out of the config digest, so
/// e.g. the same training run at different thread counts stamps the same
/// digest into its archive.
const EXECUTION_ONLY_KEYS: &[&str] = &["threads"];

/// The digest input: command name plus every resolved setting that shapes
/// the output, sorted by key.
fn canonical_config_text(command: &str, resolved: &BTreeMap<String, String>) -> String {
    let mut text = format!("command\t{command}\n");
    for (key, value) in resolved {
        if !EXECUTION_ONLY_KEYS.contains(&key.as_str()) {
            text.push_str(&format!("{key}\t{value}\n"));
        }
    }
    text
}

/// Write a deterministic configuration echo: the raw arguments, every
/// resolved setting sorted by key, and the config digest. No timestamps,
/// no environment. Returns the digest.
fn write_runspec(out: &Path, command: &str, resolved: &BTreeMap<String, String>) -> Result<String> {
    let digest = config_digest(&canonical_config_text(command, resolved));
    let mut text = format!("command\t{command}\n");
    for arg in std::env::args().skip(1) {
        text.push_str(&format!("arg\t{arg}\n"));
    }
    for (key, value) in resolved {
        text.push_str(&format!("resolved\t{key}\t{value}\n"));
    }
    text.push_str(&format!("digest\t{digest}\n"));
    fs::write(out.join("runspec.txt"), &text)?;
    Ok(digest)
}

fn parse_batch(batch: &str) -> Result<BatchMode> {
    if batch == "full" {
        return Ok(BatchMode::FullBatch);
    }
    let size: usize = batch.parse().map_err(|_| {
        Error::RejectedInput(format!(
            "batch must be a positive size or 'full', got '{batch}'"
        ))
    })?;
    if size == 0 {
        return Err(Error::RejectedInput("minibatch size must be positive".into()));
    }
    Ok(BatchMode::Minibatch(size))
}

struct ResolvedModel {
    representation: Representation,
    train_config: TrainConfig,
    alpha: f64,
    beta: f64,
}

fn resolve_model(args: &ModelArgs) -> Result<ResolvedModel> {
    let representation = match args.rep {
        Rep::Full => {
            if args.rank.is_some() {
                return Err(Error::RejectedInput(
                    "--rank only applies to --rep lowrank".into(),
                ));
            }
            Representation::Full
        }
        Rep::Lowrank => {
            let rank = args.rank.ok_or_else(|| {
                Error::RejectedInput("--rep lowrank requires --rank".into())
            })?;
            Representation::LowRank { rank }
        }
    };

    let (alpha, beta, schedule) = match args.preset {
        Some(preset) => {
            let preset = preset.to_preset();
            let schedule = preset.alpha_schedule();
            let alpha = match schedule {
                lexfun::AlphaSchedule::Fixed(a) => a,
                lexfun::AlphaSchedule::Var { alpha_max, .. } => alpha_max,
            };
            (alpha, preset.beta(), schedule)
        }
        None => (args.alpha, args.beta, lexfun::AlphaSchedule::Fixed(args.alpha)),
    };

    let mut objective = ObjectiveConfig::new(alpha, beta, args.k, representation)?;
    if let Some(l2) = args.l2 {
        objective.l2_lambda = l2;
    }
    objective.validate()?;

    let mut train_config = TrainConfig::new(objective, args.seed);
    train_config.alpha_schedule = schedule;
    train_config.max_iterations = args.iters;
    train_config.batch_mode = parse_batch(&args.batch)?;
    train_config.threads = args.threads;
    train_config.validate()?;

    Ok(ResolvedModel {
        representation,
        train_config,
        alpha,
        beta,
    })
}

struct LoadedCorpus {
    tuples: BTreeMap<WordId, Vec<TrainingTuple>>,
    vocab: Vec<WordId>,
    graph: NeighborGraph,
    embeddings: EmbeddingTable,
    holistic: EmbeddingTable,
}

fn load_corpus(corpus: &CorpusArgs, pos: Pos, k: usize, clamp_phi: bool) -> Result<LoadedCorpus> {
    let embeddings = load_embeddings(&corpus.embeddings)?;
    let holistic = load_embeddings(&corpus.holistic)?;
    let tuples = load_tuples(
        &corpus.tuples,
        &corpus.counts,
        &holistic,
        pos,
        corpus.min_count,
        corpus.min_noun_count,
        corpus.cap,
    )?;
    let vocab: Vec<WordId> = tuples.keys().cloned().collect();
    let source = match &corpus.phi {
        Some(path) => SimilaritySource::Precomputed(load_phi_matrix(path)?),
        None => SimilaritySource::EmbeddingCosine(embeddings.clone()),
    };
    let graph = build_graph(&source, &vocab, k, clamp_phi)?;
    Ok(LoadedCorpus {
        tuples,
        vocab,
        graph,
        embeddings,
        holistic,
    })
}

fn model_resolved_entries(
    resolved: &mut BTreeMap<String, String>,
    model: &ModelArgs,
    rm: &ResolvedModel,
) {
    resolved.insert("type".into(), model.word_type.pos().as_str().into());
    resolved.insert(
        "rep".into(),
        match rm.representation {
            Representation::Full => "full".into(),
            Representation::LowRank { rank } => format!("lowrank:{rank}"),
        },
    );
    resolved.insert("alpha".into(), format!("{}", rm.alpha));
    resolved.insert("beta".into(), format!("{}", rm.beta));
    resolved.insert(
        "alpha_schedule".into(),
        match rm.train_config.alpha_schedule {
            lexfun::AlphaSchedule::Fixed(a) => format!("fixed:{a}"),
            lexfun::AlphaSchedule::Var { alpha_max, m_full } => {
                format!("var:{alpha_max}:{m_full}")
            }
        },
    );
    resolved.insert("k".into(), model.k.to_string());
    resolved.insert("iters".into(), rm.train_config.max_iterations.to_string());
    resolved.insert(
        "l2".into(),
        format!("{}", rm.train_config.objective.l2_lambda),
    );
    resolved.insert(
        "batch".into(),
        match rm.train_config.batch_mode {
            BatchMode::FullBatch => "full".into(),
            BatchMode::Minibatch(m) => m.to_string(),
        },
    );
    resolved.insert("clamp_phi".into(), model.clamp_phi.to_string());
    resolved.insert("seed".into(), model.seed.to_string());
    resolved.insert("threads".into(), model.threads.to_string());
    if let Some(preset) = model.preset {
        resolved.insert("preset".into(), preset.to_preset().name().into());
    }
}

fn corpus_resolved_entries(resolved: &mut BTreeMap<String, String>, corpus: &CorpusArgs) {
    resolved.insert("min_count".into(), corpus.min_count.to_string());
    resolved.insert("min_noun_count".into(), corpus.min_noun_count.to_string());
    resolved.insert("cap".into(), corpus.cap.to_string());
    resolved.insert(
        "phi_source".into(),
        if corpus.phi.is_some() {
            "precomputed".into()
        } else {
            "embedding-cosine".into()
        },
    );
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let rm = resolve_model(&args.model)?;
    let pos = args.model.word_type.pos();
    let corpus = load_corpus(&args.corpus, pos, args.model.k, args.model.clamp_phi)?;

    let mut resolved = BTreeMap::new();
    model_resolved_entries(&mut resolved, &args.model, &rm);
    corpus_resolved_entries(&mut resolved, &args.corpus);
    resolved.insert("words".into(), corpus.vocab.len().to_string());
    let digest = write_runspec(&args.out, "train", &resolved)?;

    let (store, report) = fit(
        &corpus.vocab,
        &corpus.tuples,
        &corpus.graph,
        &corpus.embeddings,
        &corpus.holistic,
        &rm.train_config,
    )?;

    save_model(&store, &args.out.join("model.arc"), &digest)?;
    fs::write(args.out.join("train_report.tsv"), report.to_tsv())?;
    fs::write(args.out.join("graph.tsv"), corpus.graph.to_tsv())?;
    println!(
        "trained {} words -> {}",
        store.len(),
        args.out.join("model.arc").display()
    );
    Ok(())
}

fn load_eval_embeddings(path: &Option<PathBuf>, why: &str) -> Result<EmbeddingTable> {
    let path = path.as_ref().ok_or_else(|| {
        Error::RejectedInput(format!("--embeddings is required {why}"))
    })?;
    load_embeddings(path)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let shape = args.shape.to_shape();
    let items = load_eval_dataset(&args.dataset, shape)?;
    let dataset_name = args
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());

    let (scored, mode_name): (ScoredDataset, &str) = match args.mode {
        EvalMode::Additive => {
            let words = load_eval_embeddings(&args.embeddings, "for additive scoring")?;
            let scored = score_additive(&words, &items, args.perms, args.seed)?;
            (scored, "additive")
        }
        EvalMode::Compose | EvalMode::Unfurl => {
            let model_path = args.model.as_ref().ok_or_else(|| {
                Error::RejectedInput("--model is required for model-based scoring".into())
            })?;
            let (store, _meta) = load_model(model_path)?;
            let store = if args.ps_mixture {
                mixture_of(&store, &args)?
            } else {
                store
            };
            let mode = match args.mode {
                EvalMode::Compose => ScoreMode::Compose,
                EvalMode::Unfurl => ScoreMode::Unfurl,
                EvalMode::Additive => unreachable!(),
            };
            let arg_vectors = match mode {
                ScoreMode::Compose => {
                    Some(load_eval_embeddings(&args.embeddings, "for compose scoring")?)
                }
                ScoreMode::Unfurl => None,
            };
            let max_abs = max_abs_table(&store)
                .values()
                .cloned()
                .fold(0.0f64, f64::max);
            log::info!("largest |parameter entry| in the store: {max_abs:.6e}");
            let scored = score_model(&store, arg_vectors.as_ref(), &items, mode, args.perms, args.seed)?;
            (
                scored,
                match mode {
                    ScoreMode::Compose => "compose",
                    ScoreMode::Unfurl => "unfurl",
                },
            )
        }
    };

    let mut line = scored.report_line(&dataset_name, mode_name);
    if args.t_approx {
        let p_t = spearman_t_approx(scored.rho, scored.n())?;
        line.push_str(&format!("\t{p_t:.9e}"));
    }

    let mut resolved = BTreeMap::new();
    resolved.insert("dataset".into(), dataset_name.clone());
    resolved.insert("shape".into(), shape.as_str().into());
    resolved.insert("mode".into(), mode_name.into());
    resolved.insert("perms".into(), args.perms.to_string());
    resolved.insert("seed".into(), args.seed.to_string());
    resolved.insert("ps_mixture".into(), args.ps_mixture.to_string());
    if args.ps_mixture {
        resolved.insert("alpha".into(), format!("{}", args.alpha));
        resolved.insert("k".into(), args.k.to_string());
    }
    resolved.insert("t_approx".into(), args.t_approx.to_string());
    write_runspec(&args.out, "eval", &resolved)?;

    fs::write(args.out.join("eval.tsv"), format!("{line}\n"))?;
    if args.per_item {
        fs::write(args.out.join("per_item.csv"), scored.per_item_csv())?;
    }
    println!("{line}");
    Ok(())
}

fn score_model(
    store: &ParamsStore,
    arg_vectors: Option<&EmbeddingTable>,
    items: &[EvalItem],
    mode: ScoreMode,
    perms: usize,
    seed: u64,
) -> Result<ScoredDataset> {
    lexfun::score_dataset(store, arg_vectors, items, mode, perms, seed)
}

fn score_additive(
    words: &EmbeddingTable,
    items: &[EvalItem],
    perms: usize,
    seed: u64,
) -> Result<ScoredDataset> {
    lexfun::score_dataset_additive(words, items, perms, seed)
}

fn mixture_of(store: &ParamsStore, args: &EvalArgs) -> Result<ParamsStore> {
    let vocab: Vec<WordId> = store.keys().cloned().collect();
    let source = match &args.phi {
        Some(path) => SimilaritySource::Precomputed(load_phi_matrix(path)?),
        None => {
            let words = load_eval_embeddings(
                &args.embeddings,
                "to build the mixture graph (or pass --phi)",
            )?;
            SimilaritySource::EmbeddingCosine(words)
        }
    };
    let graph = build_graph(&source, &vocab, args.k, args.clamp_phi)?;
    let representation = match store.values().next() {
        Some(Params::Matrix(_)) | Some(Params::Tensor3(_)) | None => Representation::Full,
        Some(Params::LowRankMatrix(m)) => Representation::LowRank { rank: m.rank() },
        Some(Params::LowRankTensor3(t)) => Representation::LowRank { rank: t.rank() },
    };
    let config = ObjectiveConfig::new(args.alpha, 0.0, args.k, representation)?;
    ps_mixture_store(store, &graph, args.alpha, &config)
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let rm = resolve_model(&args.model)?;
    let pos = args.model.word_type.pos();
    let corpus = load_corpus(&args.corpus, pos, args.model.k, args.model.clamp_phi)?;

    let percents: Vec<f64> = args
        .percents
        .split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                Error::RejectedInput(format!("'{tok}' is not a percentage"))
            })
        })
        .collect::<Result<_>>()?;
    if percents.is_empty() {
        return Err(Error::RejectedInput("--percents must name at least one value".into()));
    }

    let mut resolved = BTreeMap::new();
    model_resolved_entries(&mut resolved, &args.model, &rm);
    corpus_resolved_entries(&mut resolved, &args.corpus);
    resolved.insert(
        "axis".into(),
        match args.axis {
            AblateAxis::Words => "words".into(),
            AblateAxis::Tuples => "tuples".into(),
        },
    );
    resolved.insert("percents".into(), args.percents.clone());
    let digest = write_runspec(&args.out, "ablate", &resolved)?;

    let mut summary = String::from("percent\twords_with_data\ttuples\tmean_train_loss\n");
    for &percent in &percents {
        let thinned = match args.axis {
            AblateAxis::Words => ablate_words(&corpus.tuples, percent, args.model.seed)?,
            AblateAxis::Tuples => ablate_tuples(&corpus.tuples, percent, args.model.seed)?,
        };
        let (store, report) = fit(
            &corpus.vocab,
            &thinned,
            &corpus.graph,
            &corpus.embeddings,
            &corpus.holistic,
            &rm.train_config,
        )?;
        let tag = format!("{percent}").replace('.', "_");
        save_model(&store, &args.out.join(format!("model_{tag}.arc")), &digest)?;
        fs::write(
            args.out.join(format!("train_report_{tag}.tsv")),
            report.to_tsv(),
        )?;

        let words_with_data = thinned.values().filter(|rows| !rows.is_empty()).count();
        let tuple_count: usize = thinned.values().map(Vec::len).sum();
        let losses: Vec<f64> = report
            .records
            .values()
            .filter_map(|r| r.final_train_loss)
            .collect();
        let mean_loss = if losses.is_empty() {
            "-".to_string()
        } else {
            format!("{:.9e}", losses.iter().sum::<f64>() / losses.len() as f64)
        };
        summary.push_str(&format!(
            "{percent}\t{words_with_data}\t{tuple_count}\t{mean_loss}\n"
        ));
    }
    fs::write(args.out.join("ablation.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let (store, meta) = load_model(&args.model)?;
    let pos = match meta.kind {
        ArchiveKind::AdjectiveFull { .. } | ArchiveKind::AdjectiveLowRank { .. } => Pos::Adjective,
        ArchiveKind::VerbFull { .. } | ArchiveKind::VerbLowRank { .. } => Pos::Verb,
        ArchiveKind::Glf { .. } => {
            return Err(Error::RejectedInput(
                "a prediction-tensor archive has no per-word neighbours".into(),
            ))
        }
    };
    let word = WordId::new(&args.word, pos)?;
    let neighbours = nearest_neighbors(&store, &word, args.top)?;
    let max_abs = max_abs_table(&store);

    let mut resolved = BTreeMap::new();
    resolved.insert("word".into(), word.surface().to_string());
    resolved.insert("top".into(), args.top.to_string());
    write_runspec(&args.out, "neighbors", &resolved)?;

    let mut out = String::from("rank\tword\tcosine\tmax_abs\n");
    for (i, (neighbour, cos)) in neighbours.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{}\t{:.9e}\t{:.9e}\n",
            i + 1,
            neighbour.surface(),
            cos,
            max_abs[neighbour]
        ));
    }
    fs::write(args.out.join("neighbors.tsv"), &out)?;
    print!("{out}");
    Ok(())
}

fn cmd_glf(args: GlfArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let corpus = load_corpus(&args.corpus, Pos::Adjective, 1, false)?;

    // pretraining covers only well-attested adjectives
    let rich_vocab: Vec<WordId> = corpus
        .tuples
        .iter()
        .filter(|(_, rows)| rows.len() >= args.min_tuples)
        .map(|(w, _)| w.clone())
        .collect();
    if rich_vocab.len() < 2 {
        return Err(Error::RejectedInput(format!(
            "matrix prediction needs at least 2 adjectives with {} or more tuples, found {}",
            args.min_tuples,
            rich_vocab.len()
        )));
    }
    let rich_tuples: BTreeMap<WordId, Vec<TrainingTuple>> = rich_vocab
        .iter()
        .map(|w| (w.clone(), corpus.tuples[w].clone()))
        .collect();
    let rich_graph = build_graph(
        &SimilaritySource::EmbeddingCosine(corpus.embeddings.clone()),
        &rich_vocab,
        1,
        false,
    )?;

    let objective = ObjectiveConfig::new(0.0, 0.0, 1, Representation::Full)?;
    let mut train_config = TrainConfig::new(objective, args.seed);
    train_config.batch_mode = BatchMode::Minibatch(20);
    train_config.max_iterations = args.pretrain_iters;
    train_config.threads = args.threads;

    let mut resolved = BTreeMap::new();
    resolved.insert("min_tuples".into(), args.min_tuples.to_string());
    resolved.insert("iters".into(), args.iters.to_string());
    resolved.insert("pretrain_iters".into(), args.pretrain_iters.to_string());
    resolved.insert("seed".into(), args.seed.to_string());
    resolved.insert("threads".into(), args.threads.to_string());
    resolved.insert("pretrained_words".into(), rich_vocab.len().to_string());
    corpus_resolved_entries(&mut resolved, &args.corpus);
    let digest = write_runspec(&args.out, "glf", &resolved)?;

    let (pretrained_store, pretrain_report) = fit(
        &rich_vocab,
        &rich_tuples,
        &rich_graph,
        &corpus.embeddings,
        &corpus.holistic,
        &train_config,
    )?;
    fs::write(
        args.out.join("pretrain_report.tsv"),
        pretrain_report.to_tsv(),
    )?;

    let mut pretrained = BTreeMap::new();
    for (word, params) in &pretrained_store {
        match params {
            Params::Matrix(m) => {
                pretrained.insert(word.clone(), m.clone());
            }
            other => {
                return Err(Error::RejectedInput(format!(
                    "pretraining produced {} parameters; matrix prediction needs dense matrices",
                    other.kind_name()
                )))
            }
        }
    }

    let glf_config = GlfConfig {
        max_iterations: args.iters,
        ..GlfConfig::default()
    };
    let (g, glf_report) = glf_train(&pretrained, &corpus.embeddings, &glf_config)?;
    save_glf(&g, &args.out.join("glf.arc"), &digest)?;
    fs::write(
        args.out.join("glf_report.tsv"),
        format!(
            "final_loss\t{:.9e}\niterations\t{}\nstop_reason\t{}\n",
            glf_report.final_loss,
            glf_report.iterations,
            glf_report.stop_reason.as_str(),
        ),
    )?;

    // predicted matrices for every adjective in the corpus with a vector,
    // including the sparse ones pretraining skipped
    let mut predicted = ParamsStore::new();
    let mut skipped = 0usize;
    for word in corpus.tuples.keys() {
        match corpus.embeddings.get(word.surface()) {
            Some(vector) => {
                predicted.insert(word.clone(), Params::Matrix(glf_predict(&g, vector)?));
            }
            None => {
                log::warn!("no vector for '{word}'; skipping its predicted matrix");
                skipped += 1;
            }
        }
    }
    if predicted.is_empty() {
        return Err(Error::EmptyEvaluation(
            "no adjective had a word vector to predict from".into(),
        ));
    }
    save_model(&predicted, &args.out.join("predicted.arc"), &digest)?;
    println!(
        "pretrained {} adjectives; predicted matrices for {} ({} skipped) -> {}",
        pretrained.len(),
        predicted.len(),
        skipped,
        args.out.join("predicted.arc").display()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let (store, meta) = load_model(&args.model)?;

    let mut resolved = BTreeMap::new();
    resolved.insert("model".into(), args.model.display().to_string());
    resolved.insert("kind".into(), meta.kind.kind_str().into());
    resolved.insert(
        "format".into(),
        match args.format {
            ExportFormat::Unfurled => "unfurled".into(),
            ExportFormat::Manifest => "manifest".into(),
        },
    );
    write_runspec(&args.out, "export", &resolved)?;

    match args.format {
        ExportFormat::Unfurled => {
            let mut text = String::new();
            for (word, params) in &store {
                text.push_str(word.surface());
                for v in params.unfurl().values() {
                    text.push_str(&format!(" {v:.17e}"));
                }
                text.push('\n');
            }
            let path = args.out.join("unfurled.txt");
            fs::write(&path, &text)?;
            println!("wrote {} unfurled rows -> {}", store.len(), path.display());
        }
        ExportFormat::Manifest => {
            let mut text = format!("kind\t{}\n", meta.kind.kind_str());
            let config = if meta.config_digest.is_empty() {
                "-".to_string()
            } else {
                meta.config_digest.clone()
            };
            text.push_str(&format!("config\t{config}\n"));
            text.push_str(&format!("words\t{}\n", store.len()));
            let max_abs = max_abs_table(&store);
            for (word, value) in &max_abs {
                text.push_str(&format!("word\t{}\t{:.9e}\n", word.surface(), value));
            }
            let path = args.out.join("manifest.tsv");
            fs::write(&path, &text)?;
            print!("{text}");
        }
    }
    Ok(())
}
