use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use cascade_core::evaluation::{evaluate_corpus, ApeBins, EvaluationConfig};
use cascade_core::io::{
    load_corpus, load_shares, load_users, resolve_data_path, save_corpus, save_shares, save_users, set_final_sizes,
    users_from_corpus, Config, HistoryStore,
};
use cascade_core::simulate::{default_mixture, MixtureComponent};
use cascade_core::{
    ape_pair, predict_series, recommend_degree, simulate_corpus, whatif, Cascade, ModelTag, Outcome, Pattern, SimSpec,
};
use cascade_service::{parse_list, AppState};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<cascade_core::Error> for CliError {
    fn from(e: cascade_core::Error) -> Self {
        use cascade_core::Error::*;
        match e {
            InvalidArgument(_) | OutOfWindow { .. } | Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cascade", version, about = "Cascade size prediction toolkit")]
struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Simulate(SimulateArgs),
    /// Build a corpus from share and user tables.
    Ingest(IngestArgs),
    /// Print the prediction series of one article.
    Predict(PredictArgs),
    /// Delete/add analysis of the records in one frame.
    Whatif(WhatifArgs),
    /// Score models over a corpus.
    Evaluate(EvaluateArgs),
    /// Pick the initial mean degree with the lowest mean APE.
    Recommend(RecommendArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Seismic,
    Weseer,
    SpeedOnly,
}

impl From<ModelArg> for ModelTag {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Seismic => ModelTag::Seismic,
            ModelArg::Weseer => ModelTag::Weseer,
            ModelArg::SpeedOnly => ModelTag::SpeedAdjusted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PatternArg {
    ImmediateOutbreak,
    RiseAndRecession,
    WaveLike,
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::ImmediateOutbreak => Pattern::ImmediateOutbreak,
            PatternArg::RiseAndRecession => Pattern::RiseAndRecession,
            PatternArg::WaveLike => Pattern::WaveLike,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON file with one simulation spec or a weighted list of them.
    #[arg(long, conflicts_with = "pattern")]
    spec: Option<PathBuf>,
    /// Single built-in pattern instead of the default three-pattern mixture.
    #[arg(long, value_enum)]
    pattern: Option<PatternArg>,
    #[arg(long, default_value_t = 140.0, requires = "pattern")]
    mean_degree: f64,
    #[arg(long, default_value_t = 100)]
    articles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus output file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the raw share table here.
    #[arg(long, requires = "users")]
    shares: Option<PathBuf>,
    /// Also write the user table here.
    #[arg(long, requires = "shares")]
    users: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    shares: PathBuf,
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ArticleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    article: String,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    target: ArticleArgs,
    /// Repeatable; all models when absent.
    #[arg(long, value_enum)]
    model: Vec<ModelArg>,
    #[arg(long)]
    n_init: Option<f64>,
    /// Comma-separated minutes; the schedule boundaries when absent.
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WhatifArgs {
    #[command(flatten)]
    target: ArticleArgs,
    #[arg(long)]
    frame: usize,
    /// Evaluation time in minutes; the end of the schedule when absent.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    n_init: Option<f64>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    model: Vec<ModelArg>,
    #[arg(long)]
    top_m: Option<usize>,
    #[arg(long)]
    n_init: Option<f64>,
    #[arg(long)]
    times: Option<String>,
    /// Directory for report.json, summary.tsv and histograms.tsv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[command(flatten)]
    target: ArticleArgs,
    /// Comma-separated candidate mean degrees.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// User table for demographic portraits.
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Session history directory; kept in memory when absent.
    #[arg(long)]
    history_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Mixture(Vec<MixtureComponent>),
    Single(Box<SimSpec>),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => Config::load(&resolve_data_path(p))?,
        None => Config::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Ingest(a) => ingest_cmd(a, &config),
        Command::Predict(a) => predict_cmd(a, &config),
        Command::Whatif(a) => whatif_cmd(a, &config),
        Command::Evaluate(a) => evaluate_cmd(a, &config),
        Command::Recommend(a) => recommend_cmd(a, &config),
        Command::Serve(a) => serve_cmd(a, config),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_file(&resolve_data_path(p), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Data(e.to_string()))
}

fn positive(name: &str, v: Option<f64>, default: f64) -> CliResult<f64> {
    match v {
        None => Ok(default),
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(CliError::Usage(format!("--{name} must be positive, got {x}"))),
    }
}

fn models(args: &[ModelArg]) -> Vec<ModelTag> {
    if args.is_empty() {
        return ModelTag::ALL.to_vec();
    }
    let mut tags: Vec<ModelTag> = args.iter().map(|m| ModelTag::from(*m)).collect();
    tags.sort();
    tags.dedup();
    tags
}

/// Evaluation times in seconds from comma-separated minutes.
fn times(raw: Option<&str>, config: &Config) -> CliResult<Vec<f64>> {
    let Some(raw) = raw else {
        return Ok(config.schedule.boundaries_s());
    };
    let horizon = config.schedule.horizon_s();
    let mut ts: Vec<f64> = parse_list(raw)
        .map_err(|e| CliError::Usage(format!("--times: {e}")))?
        .into_iter()
        .map(|m| m * 60.0)
        .collect();
    if ts.is_empty() {
        return Err(CliError::Usage("--times is empty".into()));
    }
    if let Some(bad) = ts.iter().find(|t| !(0.0..=horizon).contains(*t)) {
        return Err(CliError::Usage(format!(
            "--times: {} min is outside [0, {}] min",
            bad / 60.0,
            horizon / 60.0
        )));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    Ok(ts)
}

fn load(path: &Path) -> CliResult<Vec<Cascade>> {
    Ok(load_corpus(&resolve_data_path(path))?)
}

fn find_article(target: &ArticleArgs) -> CliResult<Cascade> {
    load(&target.corpus)?
        .into_iter()
        .find(|c| c.article_id == target.article)
        .ok_or_else(|| CliError::Data(format!("unknown article {:?}", target.article)))
}

fn simulate_cmd(a: SimulateArgs) -> CliResult {
    let mixture = match (&a.spec, a.pattern) {
        (Some(path), _) => {
            let path = resolve_data_path(path);
            let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<SpecFile>(&text) {
                Ok(SpecFile::Mixture(m)) => m,
                Ok(SpecFile::Single(spec)) => vec![MixtureComponent { weight: 1.0, spec: *spec }],
                Err(e) => return Err(CliError::Data(format!("{}: {e}", path.display()))),
            }
        }
        (None, Some(p)) => {
            if !(a.mean_degree > 0.0) {
                return Err(CliError::Usage("--mean-degree must be positive".into()));
            }
            vec![MixtureComponent {
                weight: 1.0,
                spec: Pattern::from(p).spec(a.mean_degree),
            }]
        }
        (None, None) => default_mixture(),
    };
    for m in &mixture {
        m.spec.validate()?;
    }
    let corpus = simulate_corpus(a.articles, &mixture, a.seed)?;
    save_corpus(&corpus, &resolve_data_path(&a.out))?;
    if let (Some(shares), Some(users)) = (&a.shares, &a.users) {
        save_shares(&corpus, &resolve_data_path(shares))?;
        save_users(&users_from_corpus(&corpus), &resolve_data_path(users))?;
    }
    let events: usize = corpus.iter().map(|c| c.events.len()).sum();
    log::info!("simulated {} articles, {events} events", corpus.len());
    Ok(())
}

fn ingest_cmd(a: IngestArgs, config: &Config) -> CliResult {
    let users = load_users(&resolve_data_path(&a.users))?;
    let loaded = load_shares(&resolve_data_path(&a.shares), &users)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let mut corpus = loaded.cascades;
    set_final_sizes(&mut corpus, config.truth_horizon_s);
    save_corpus(&corpus, &resolve_data_path(&a.out))?;
    Ok(())
}

fn outcome_cells(o: &Outcome) -> (&'static str, String) {
    match o {
        Outcome::Predicted { value } => ("predicted", format!("{value:.3}")),
        Outcome::Supercritical => ("supercritical", "NA".into()),
        Outcome::InsufficientData => ("insufficient_data", "NA".into()),
    }
}

fn predict_cmd(a: PredictArgs, config: &Config) -> CliResult {
    let c = find_article(&a.target)?;
    let n_init = positive("n-init", a.n_init, config.n_init)?;
    let ts = times(a.times.as_deref(), config)?;
    let params = config.model_params();
    let one_day = c.reshare_count(config.schedule.horizon_s()) as f64;
    let final_size = c.final_size.map(|f| f as f64).filter(|f| *f > 0.0);

    let mut out = String::from("model\ttime_min\tr_t\tp\tn_star\toutcome\tprediction\tape1\tape2\n");
    for model in models(&a.model) {
        for pt in predict_series(&c, &ts, &params, model, n_init)? {
            let (kind, value) = outcome_cells(&pt.outcome);
            let apes = match final_size {
                Some(f) if one_day > 0.0 => {
                    let pair = ape_pair(&pt.outcome, one_day, f)?;
                    (format!("{:.6}", pair.ape1), format!("{:.6}", pair.ape2))
                }
                _ => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6e}\t{}\t{kind}\t{value}\t{}\t{}",
                model.as_str(),
                pt.time_s / 60.0,
                pt.r_t,
                pt.p,
                pt.n_star_used,
                apes.0,
                apes.1
            );
        }
    }
    emit(a.out.as_deref(), &out)
}

fn whatif_cmd(a: WhatifArgs, config: &Config) -> CliResult {
    let c = find_article(&a.target)?;
    let n_init = positive("n-init", a.n_init, config.n_init)?;
    let horizon = config.schedule.horizon_s();
    let t_s = match a.t {
        None => horizon,
        Some(m) if (0.0..=horizon / 60.0).contains(&m) => m * 60.0,
        Some(m) => return Err(CliError::Usage(format!("--t {m} min is outside the observation window"))),
    };
    let report = whatif(&c, a.frame, t_s, &config.model_params(), n_init, config.big_node_threshold)?;

    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"));
    let mut text = format!(
        "# article {} frame {} t {} min: p' {} n* {}\n",
        report.article_id,
        report.frame,
        report.t_eval_s / 60.0,
        opt(report.baseline_p_adj),
        report.baseline_n_star
    );
    text.push_str("event_id\tuser_id\tdegree\ttime_min\tbig_node\tdelete_sign\tdelete_p_adj\tadd_sign\tadd_p_adj\n");
    for e in &report.entries {
        let sign = |s: Option<cascade_core::weseer::Sign>| s.map_or("NA", |s| s.as_str());
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.event_id,
            e.user_id,
            e.degree,
            e.time_s / 60.0,
            e.big_node,
            sign(e.delete.sign()),
            opt(e.delete.p_adj()),
            sign(e.add.sign()),
            opt(e.add.p_adj())
        );
    }
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(&resolve_data_path(out), &to_json(&report)?)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs, config: &Config) -> CliResult {
    let corpus = load(&a.corpus)?;
    let cfg = EvaluationConfig {
        models: models(&a.model),
        times_s: times(a.times.as_deref(), config)?,
        top_m: a.top_m.unwrap_or(config.top_m),
        n_init: positive("n-init", a.n_init, config.n_init)?,
        bins: ApeBins::new(config.ape_edges.clone())?,
    };
    let report = evaluate_corpus(&corpus, &cfg, &config.model_params())?;
    let summary = report.summary_tsv();
    print!("{summary}");
    if let Some(dir) = &a.out {
        let dir = resolve_data_path(dir);
        fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        write_file(&dir.join("report.json"), &to_json(&report)?)?;
        write_file(&dir.join("summary.tsv"), &summary)?;
        let hist: String = report.models.iter().map(|m| m.histogram.to_tsv()).collect();
        write_file(&dir.join("histograms.tsv"), &hist)?;
    }
    Ok(())
}

fn recommend_cmd(a: RecommendArgs, config: &Config) -> CliResult {
    let c = find_article(&a.target)?;
    let grid = match &a.grid {
        Some(raw) => parse_list(raw).map_err(|e| CliError::Usage(format!("--grid: {e}")))?,
        None => config.grid.clone(),
    };
    let ts = times(a.times.as_deref(), config)?;
    let reference = match c.final_size.filter(|f| *f > 0) {
        Some(f) => f,
        None => c.reshare_count(config.schedule.horizon_s()),
    };
    if reference == 0 {
        return Err(CliError::Data(format!("article {:?} has no reshares to compare against", c.article_id)));
    }
    let rec = recommend_degree(&c, &grid, reference as f64, &ts, &config.model_params())?;
    let mut text = String::from("n_init\tmean_ape\tpredicted\n");
    for cand in &rec.candidates {
        let predicted = cand.points.iter().filter(|p| p.outcome.is_predicted()).count();
        let mean = cand.mean_ape.map_or_else(|| "NA".to_string(), |m| format!("{m:.6}"));
        let _ = writeln!(text, "{}\t{mean}\t{predicted}", cand.n_init);
    }
    let _ = writeln!(text, "# best {} (reference size {reference})", rec.best);
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(&resolve_data_path(out), &to_json(&rec)?)?;
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs, config: Config) -> CliResult {
    let corpus = load(&a.corpus)?;
    let users: BTreeMap<_, _> = match &a.users {
        Some(p) => load_users(&resolve_data_path(p))?,
        None => users_from_corpus(&corpus).into_iter().map(|u| (u.user_id.clone(), u)).collect(),
    };
    let history = match &a.history_dir {
        Some(d) => HistoryStore::open(&resolve_data_path(d))?,
        None => HistoryStore::in_memory(),
    };
    let state = Arc::new(AppState::new(corpus, users, config, history));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(cascade_service::serve(a.addr, state))
        .map_err(|e| CliError::Data(format!("{}: {e}", a.addr)))
}
