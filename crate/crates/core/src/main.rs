use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use fairrank::case_study::{self, CaseStudyConfig};
use fairrank::checkpoint::{self, Checkpoint};
use fairrank::datagen::{self, Dataset, GenConfig, Split};
use fairrank::metrics::{self, EvalConfig, EvalReport, GainTransform, RankingPolicy};
use fairrank::trainer::{self, Method, TrainConfig, VarianceBaseline};
use fairrank::{FairRankError, FairnessMode, MlpParams, PolicyMode};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "fairrank", version, about = "Diverse site ranking with Plackett-Luce policy gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a planted ground truth.
    Generate(GenerateArgs),
    /// Train a scorer and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train and evaluate several methods on one dataset.
    Compare(CompareArgs),
    /// Run the built-in five-site selection example.
    CaseStudy(CaseStudyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    n_trials: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 6)]
    l: usize,
    #[arg(long, default_value_t = 64)]
    p: usize,
    #[arg(long, default_value_t = 26)]
    q: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    feature_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    enrollment_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    homogeneous_fraction: f64,
    /// Dirichlet concentration shared by all groups.
    #[arg(long, default_value_t = 2.0)]
    concentration: f64,
    /// Train,val,test counts; defaults to 75/10/15 percent of --n-trials.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FairnessArg {
    Entropy,
    Exposure,
    None,
}

impl From<FairnessArg> for FairnessMode {
    fn from(f: FairnessArg) -> Self {
        match f {
            FairnessArg::Entropy => FairnessMode::Entropy,
            FairnessArg::Exposure => FairnessMode::OneSidedExposure,
            FairnessArg::None => FairnessMode::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pg,
    Bc,
    Regress,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pg => Method::PolicyGradient,
            MethodArg::Bc => Method::BinaryClassification,
            MethodArg::Regress => Method::Regression,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyModeArg {
    Auto,
    Exact,
    Proxy,
}

/// Training knobs shared by `train` and `compare`.
#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    mc_samples: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Top-K cutoff; defaults to the dataset's K, else 10.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyModeArg::Auto)]
    policy_mode: PolicyModeArg,
    /// Use the raw REINFORCE estimator without the mean-reward baseline.
    #[arg(long)]
    no_baseline: bool,
    #[arg(long, default_value_t = 10.0)]
    clip_norm: f64,
    #[arg(long)]
    no_clip: bool,
    #[arg(long, default_value_t = 64)]
    h1: usize,
    #[arg(long, default_value_t = 32)]
    h2: usize,
    /// Samples per validation trial.
    #[arg(long, default_value_t = 20)]
    eval_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn config(&self, method: Method, fairness: FairnessMode, ds: &Dataset) -> TrainConfig {
        TrainConfig {
            method,
            lambda: self.lambda,
            eta: self.eta,
            k: self.k.or(ds.k).unwrap_or(10),
            n_mc: self.mc_samples,
            epochs: self.epochs,
            batch_size: self.batch_size,
            policy_mode: match self.policy_mode {
                PolicyModeArg::Auto => None,
                PolicyModeArg::Exact => Some(PolicyMode::ExactPl),
                PolicyModeArg::Proxy => Some(PolicyMode::TopKProxy),
            },
            fairness,
            baseline: if self.no_baseline {
                VarianceBaseline::None
            } else {
                VarianceBaseline::MeanReward
            },
            clip_norm: (!self.no_clip).then_some(self.clip_norm),
            h1: self.h1,
            h2: self.h2,
            n_eval: self.eval_samples,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// History CSV path; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Pg)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = FairnessArg::Entropy)]
    fairness: FairnessArg,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum GainArg {
    Scaled,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Sampled,
    Deterministic,
}

#[derive(Args, Clone)]
struct EvalOpts {
    /// Sampled rankings per trial.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = GainArg::Scaled)]
    gain: GainArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Split to report; without it every non-empty split gets a row.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Trial tag to break results down by, e.g. `phase` or `area`.
    #[arg(long)]
    group_by: Option<String>,
    /// Ranking rule; defaults to sampling for PG checkpoints, sorting otherwise.
    #[arg(long, value_enum)]
    ranking: Option<RankingArg>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = FairnessArg::Entropy)]
    fairness: FairnessArg,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    eval: EvalOpts,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comparison table CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Methods among pg, pg-entropy, pg-os, bc, regress.
    #[arg(long, value_delimiter = ',', default_value = "pg-entropy,pg-os,bc,regress")]
    methods: Vec<String>,
    /// Diversity weight used by pg-entropy and pg-os.
    #[arg(long, default_value_t = 1.0)]
    fair_lambda: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[command(flatten)]
    opts: TrainOpts,
    #[command(flatten)]
    eval: EvalOpts,
}

#[derive(Args)]
struct CaseStudyArgs {
    /// Dataset whose first trial replaces the built-in instance.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 4.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 20)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn split_of(s: SplitArg) -> Option<Split> {
    match s {
        SplitArg::All => None,
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
    }
}

fn write(path: &Path, text: &str) -> fairrank::Result<()> {
    std::fs::write(path, text).map_err(|e| {
        FairRankError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn load_dataset(path: &Path) -> fairrank::Result<Dataset> {
    datagen::load(path).map_err(|e| match e {
        FairRankError::Io(io) => FairRankError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn cmd_generate(a: GenerateArgs) -> fairrank::Result<()> {
    let split = match a.split.as_deref() {
        Some([tr, va, te]) => (*tr, *va, *te),
        Some(_) => return Err(FairRankError::Invalid("--split takes three counts".into())),
        None => {
            let val = a.n_trials / 10;
            let test = a.n_trials * 15 / 100;
            (a.n_trials - val - test, val, test)
        }
    };
    let cfg = GenConfig {
        n_trials: a.n_trials,
        m: a.m,
        l: a.l,
        p: a.p,
        q: a.q,
        k: Some(a.k),
        feature_noise: a.feature_noise,
        enrollment_scale: a.enrollment_scale,
        group_concentration: vec![a.concentration; a.l],
        homogeneous_fraction: a.homogeneous_fraction,
        split,
        seed: a.seed,
        ..GenConfig::default()
    };
    let ds = datagen::generate(&cfg)?;
    write(&a.out, &datagen::write_to(&ds)?)?;
    println!(
        "n_trials={} M={} L={} train={} val={} test={}",
        ds.len(),
        ds.m,
        ds.schema.l,
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test)
    );
    Ok(())
}

fn check_dims(params: &MlpParams, ds: &Dataset) -> fairrank::Result<()> {
    let c = params.config();
    if c.p != ds.schema.p || c.q != ds.schema.q {
        return Err(FairRankError::Dimension(format!(
            "checkpoint expects trial dim p={} and site dim q={}, dataset has p={} q={}",
            c.p, c.q, ds.schema.p, ds.schema.q
        )));
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> fairrank::Result<()> {
    let ds = load_dataset(&a.data)?;
    let cfg = a.opts.config(a.method.into(), a.fairness.into(), &ds);
    let (params, history) = trainer::fit(&ds, &cfg)?;
    checkpoint::save(
        &Checkpoint {
            method: cfg.method.as_str().to_string(),
            params,
        },
        &a.out,
    )?;
    let history_path = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    write(&history_path, &history.to_csv())?;
    println!(
        "epochs={} best_epoch={} checkpoint={} history={}",
        history.epochs.len(),
        history.best_epoch,
        a.out.display(),
        history_path.display()
    );
    Ok(())
}

struct EvalSetup {
    k: Option<usize>,
    policy: RankingPolicy,
    lambda: f64,
    fairness: FairnessMode,
    seed: u64,
}

fn eval_config(opts: &EvalOpts, ds: &Dataset, setup: EvalSetup) -> EvalConfig {
    EvalConfig {
        k: setup.k.or(ds.k).unwrap_or(10),
        n_samples: opts.samples,
        policy: setup.policy,
        gain: match opts.gain {
            GainArg::Scaled => None,
            GainArg::Raw => Some(GainTransform::Raw),
        },
        lambda: setup.lambda,
        fairness: setup.fairness,
        seed: setup.seed,
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> fairrank::Result<()> {
    let ds = load_dataset(&a.data)?;
    let ckpt = checkpoint::load(&a.checkpoint).map_err(|e| match e {
        FairRankError::Io(io) => FairRankError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", a.checkpoint.display()))),
        other => other,
    })?;
    check_dims(&ckpt.params, &ds)?;
    let policy = match a.ranking {
        Some(RankingArg::Sampled) => RankingPolicy::Sampled,
        Some(RankingArg::Deterministic) => RankingPolicy::Deterministic,
        None => Method::parse(&ckpt.method).map_or(RankingPolicy::Sampled, Method::ranking_policy),
    };
    let cfg = eval_config(
        &a.eval,
        &ds,
        EvalSetup {
            k: a.k,
            policy,
            lambda: a.lambda,
            fairness: a.fairness.into(),
            seed: a.seed,
        },
    );
    let splits: Vec<Option<Split>> = match a.split {
        Some(s) => vec![split_of(s)],
        None => [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .filter(|&s| ds.count(s) > 0)
            .map(Some)
            .collect(),
    };
    let mut reports = Vec::new();
    for split in splits {
        match &a.group_by {
            Some(tag) => {
                let label = split.map_or("all", Split::as_str);
                for mut r in metrics::evaluate_grouped(&ckpt.params, &ds, split, &cfg, tag)? {
                    r.label = format!("{label}:{}", r.label);
                    reports.push(r);
                }
            }
            None => reports.push(metrics::evaluate(&ckpt.params, &ds, split, &cfg)?),
        }
    }
    write(&a.out, &metrics::reports_to_csv(&reports))?;
    for r in &reports {
        println!(
            "{}: rel_err={:.4} recall={:.4} ndcg={:.4} entropy={:.4}",
            r.label, r.relative_error, r.recall, r.ndcg, r.entropy
        );
    }
    Ok(())
}

fn method_spec(name: &str, fair_lambda: f64) -> Option<(Method, FairnessMode, f64)> {
    Some(match name {
        "pg" => (Method::PolicyGradient, FairnessMode::None, 0.0),
        "pg-entropy" => (Method::PolicyGradient, FairnessMode::Entropy, fair_lambda),
        "pg-os" => (Method::PolicyGradient, FairnessMode::OneSidedExposure, fair_lambda),
        "bc" => (Method::BinaryClassification, FairnessMode::None, 0.0),
        "regress" => (Method::Regression, FairnessMode::None, 0.0),
        _ => return None,
    })
}

fn cmd_compare(a: CompareArgs) -> fairrank::Result<()> {
    if a.methods.len() < 2 {
        return Err(FairRankError::Invalid("compare needs at least two methods".into()));
    }
    let specs: Vec<_> = a
        .methods
        .iter()
        .map(|name| {
            method_spec(name, a.fair_lambda)
                .map(|s| (name.as_str(), s))
                .ok_or_else(|| FairRankError::Invalid(format!("unknown method {name:?}")))
        })
        .collect::<fairrank::Result<_>>()?;
    let ds = load_dataset(&a.data)?;
    let mut table = String::from("method,rel_err,recall,ndcg,entropy\n");
    for (name, (method, fairness, lambda)) in specs {
        let mut cfg = a.opts.config(method, fairness, &ds);
        cfg.lambda = lambda;
        info!("training {name}");
        let (params, _) = trainer::fit(&ds, &cfg)?;
        let ecfg = eval_config(
            &a.eval,
            &ds,
            EvalSetup {
                k: a.opts.k,
                policy: method.ranking_policy(),
                lambda,
                fairness,
                seed: a.opts.seed,
            },
        );
        let r: EvalReport = metrics::evaluate(&params, &ds, split_of(a.split), &ecfg)?;
        table.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.relative_error, r.recall, r.ndcg, r.entropy
        ));
    }
    match &a.out {
        Some(path) => write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_case_study(a: CaseStudyArgs) -> fairrank::Result<()> {
    let cs = match &a.data {
        Some(path) => load_dataset(path)?
            .sets
            .into_iter()
            .next()
            .ok_or_else(|| FairRankError::Invalid("dataset has no trials".into()))?,
        None => case_study::table1(),
    };
    let cfg = CaseStudyConfig {
        k: a.k,
        lambda: a.lambda,
        eta: a.eta,
        steps: a.steps,
        n_mc: a.mc_samples,
        seed: a.seed,
    };
    print!("{}", case_study::run(&cs, &cfg)?.render());
    Ok(())
}

fn init_threads() {
    let Ok(raw) = std::env::var("FAIRRANK_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("could not size thread pool: {e}");
            }
        }
        _ => warn!("ignoring FAIRRANK_THREADS={raw:?}: expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::CaseStudy(a) => cmd_case_study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                FairRankError::Divergence(_) => EXIT_DIVERGENCE,
                _ => EXIT_DATA,
            })
        }
    }
}
