use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Ix2, Ix3};
use plan_align::align::AlignConfig;
use plan_align::convergence::{bounded_random_stream, verify_convergence, ConvergenceReport, RowProjector, Tolerances};
use plan_align::dataset::{load_dataset, save_dataset, Dataset};
use plan_align::eval::{evaluate_grounding, evaluate_probe, evaluate_retrieval, export_heatmap_pgm, similarity_heatmap};
use plan_align::model::{check_objective_gradients, seeded_instance, LossMode, Objective, SampleView};
use plan_align::rng::{substream, Domain};
use plan_align::synth::{generate_dataset, SynthSpec};
use plan_align::tensor_io::{read_array, DType};
use plan_align::trainer::{load_run, train, Checkpoint, TrainConfig};
use plan_align::Error;
use rand::seq::index::sample as sample_indices;
use serde::Serialize;
use serde_json::{json, Value};

const THREADS_ENV: &str = "PLAN_ALIGN_THREADS";
const RUN_DATA_FILE: &str = "data.json";

#[derive(Parser, Debug)]
#[command(name = "plan-align", version, about = "Progressive local alignment head: training, grounding and numerical checks")]
struct Cli {
    /// Seed override for the subcommand's random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// JSON config for the subcommand (`gen`: synthetic spec, `train`: training config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; also read from PLAN_ALIGN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth.
    Gen(GenArgs),
    /// Train the alignment head and write a run directory.
    Train(TrainArgs),
    /// Score planted-keyword heatmaps against planted regions.
    Ground(GroundArgs),
    /// Image-report retrieval precision at k.
    Retrieve(RetrieveArgs),
    /// Export one sample's word heatmap as PGM.
    Heatmap(HeatmapArgs),
    /// Check the convergence of the progressive update under a fixed projector.
    VerifyTheorem(TheoremArgs),
    /// Compare analytic gradients of the total objective with finite differences.
    Gradcheck(GradcheckArgs),
    /// Linear probe accuracy of global image features, trained vs untrained.
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Synthetic spec JSON; same as --config.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    dtype: DTypeArg,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DTypeArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Heatmap quantile used to binarize before IoU and Dice.
    #[arg(long, default_value_t = 0.8)]
    quantile: f64,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10])]
    k: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    sample: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    words: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StreamMode {
    Constant,
    Random,
    FromFile,
}

#[derive(Args, Debug)]
struct TheoremArgs {
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 64)]
    tmax: usize,
    #[arg(long, value_enum, default_value_t = StreamMode::Constant)]
    mode: StreamMode,
    #[arg(long, default_value_t = 8)]
    rows: usize,
    #[arg(long, default_value_t = 16)]
    cols: usize,
    /// Rows kept by the projector; defaults to a seeded subset of size round(0.7 rows).
    #[arg(long, value_delimiter = ',')]
    kept: Option<Vec<usize>>,
    /// Declared bound M on the projected stream norms.
    #[arg(long, default_value_t = 1.0)]
    bound: f64,
    /// Stream tensor for from-file mode: rank 3 (T x L x HW) or rank 2 (constant).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Initial matrix tensor; defaults to zeros in from-file mode.
    #[arg(long)]
    initial: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Instance size as B,L,HW,D.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 6, 9, 5])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    mode: ModeArg,
    /// Carry gradients through the refinement history.
    #[arg(long)]
    backprop_history: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Global,
    GlobalInitial,
    Joint,
}

impl From<ModeArg> for LossMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Global => LossMode::Global,
            ModeArg::GlobalInitial => LossMode::GlobalInitial,
            ModeArg::Joint => LossMode::Joint,
        }
    }
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Leading fraction of samples used as the training split.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. }
            | Error::NonFiniteLoss(_)
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteObjective { .. }
            | Error::DegenerateNormalization
            | Error::NoSignal => Failure::Runtime(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("i/o error on {}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn emit(value: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::write(path, text + "\n").map_err(|e| io_err(path, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn resolved(command: &str, value: Value) {
    let line = json!({ "command": command, "config": value });
    eprintln!("resolved config: {line}");
}

struct Ctx {
    seed: Option<u64>,
    verbose: bool,
    config: Option<PathBuf>,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn no_config(&self, command: &str) -> CliResult<()> {
        match &self.config {
            Some(_) => Err(invalid(format!("`{command}` takes no --config file"))),
            None => Ok(()),
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                Some(v.trim().parse::<usize>().map_err(|_| invalid(format!("{THREADS_ENV}={v} is not a thread count")))?)
            }
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(invalid("thread count must be positive"));
    }
    Ok(n)
}

fn run_data_path(run: &Path, data: Option<&Path>) -> CliResult<PathBuf> {
    if let Some(d) = data {
        return Ok(d.to_path_buf());
    }
    let path = run.join(RUN_DATA_FILE);
    if !path.exists() {
        return Err(invalid(format!("--data not given and {} is missing", path.display())));
    }
    let v: Value = read_json(&path)?;
    v.get("data")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| invalid(format!("{} has no `data` entry", path.display())))
}

fn load_trained(run: &Path, data: Option<&Path>) -> CliResult<(TrainConfig, Checkpoint, Dataset, PathBuf)> {
    let (config, ck) = load_run(run)?;
    let data_path = run_data_path(run, data)?;
    let dataset = load_dataset(&data_path)?;
    if dataset.dims.embed != ck.dim() {
        return Err(invalid(format!(
            "dataset embedding width {} does not match checkpoint width {}",
            dataset.dims.embed,
            ck.dim()
        )));
    }
    Ok((config, ck, dataset, data_path))
}

fn cmd_gen(ctx: &Ctx, args: &GenArgs) -> CliResult<()> {
    let spec_path = match (&args.spec, &ctx.config) {
        (Some(_), Some(_)) => return Err(invalid("give the synthetic spec through --spec or --config, not both")),
        (Some(p), None) | (None, Some(p)) => Some(p.clone()),
        (None, None) => None,
    };
    let mut spec: SynthSpec = match &spec_path {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    resolved("gen", json!({ "spec": spec, "out": args.out, "dtype": args.dtype }));
    spec.validate()?;
    let start = Instant::now();
    let dataset = generate_dataset(&spec)?;
    let dtype = match args.dtype {
        DTypeArg::F32 => DType::F32,
        DTypeArg::F64 => DType::F64,
    };
    let manifest = save_dataset(&dataset, &args.out, dtype)?;
    ctx.note(format!("wrote {} samples in {:.2?}", manifest.n_samples, start.elapsed()));
    emit(
        &json!({ "out": args.out, "n_samples": manifest.n_samples, "dims": manifest.dims }),
        None,
    )
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> CliResult<()> {
    let mut config: TrainConfig = match &ctx.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    resolved("train", json!({ "train": config, "data": args.data, "out": args.out }));
    config.validate()?;
    let dataset = load_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(invalid("dataset has no samples"));
    }
    let start = Instant::now();
    let output = train(&dataset, &config, Some(&args.out))?;
    let data_abs = fs::canonicalize(&args.data).unwrap_or_else(|_| args.data.clone());
    let data_file = args.out.join(RUN_DATA_FILE);
    fs::write(&data_file, serde_json::to_string_pretty(&json!({ "data": data_abs })).expect("json"))
        .map_err(|e| io_err(&data_file, e))?;
    if ctx.verbose {
        let stride = (output.metrics.len() / 10).max(1);
        for m in output.metrics.iter().step_by(stride) {
            eprintln!("step {:>6} epoch {:>3} lr {:.3e} total {:.6} global {:.6} local {:.6}", m.step, m.epoch, m.lr, m.total, m.global, m.local);
        }
        eprintln!("trained {} steps in {:.2?}", output.checkpoint.step, start.elapsed());
    }
    let last = output.metrics.last();
    emit(
        &json!({
            "run": args.out,
            "steps": output.checkpoint.step,
            "epochs": output.checkpoint.epoch,
            "lr": output.checkpoint.lr,
            "final": last,
        }),
        None,
    )
}

fn cmd_ground(ctx: &Ctx, args: &GroundArgs) -> CliResult<()> {
    ctx.no_config("ground")?;
    let (config, ck, dataset, data_path) = load_trained(&args.run, args.data.as_deref())?;
    resolved("ground", json!({ "run": args.run, "data": data_path, "quantile": args.quantile, "align": config.align }));
    if !(args.quantile > 0.0 && args.quantile < 1.0) {
        return Err(invalid(format!("quantile must lie in (0, 1), got {}", args.quantile)));
    }
    let report = evaluate_grounding(&ck.params, &config.align, &dataset, args.quantile)?;
    ctx.note(format!("mean CNR {:.4} over {} samples ({} without signal)", report.mean_cnr, dataset.len() - report.no_signal, report.no_signal));
    emit(&serde_json::to_value(&report).expect("report serializes"), args.out.as_deref())
}

fn cmd_retrieve(ctx: &Ctx, args: &RetrieveArgs) -> CliResult<()> {
    ctx.no_config("retrieve")?;
    let (_, ck, dataset, data_path) = load_trained(&args.run, args.data.as_deref())?;
    resolved("retrieve", json!({ "run": args.run, "data": data_path, "k": args.k }));
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(invalid("--k needs positive integers"));
    }
    let report = evaluate_retrieval(&ck.params, &dataset, &args.k)?;
    emit(&serde_json::to_value(&report).expect("report serializes"), args.out.as_deref())
}

fn cmd_heatmap(ctx: &Ctx, args: &HeatmapArgs) -> CliResult<()> {
    ctx.no_config("heatmap")?;
    let (config, ck, dataset, data_path) = load_trained(&args.run, args.data.as_deref())?;
    resolved(
        "heatmap",
        json!({ "run": args.run, "data": data_path, "sample": args.sample, "words": args.words, "out": args.out }),
    );
    let hm = similarity_heatmap(&ck.params, &config.align, &dataset, args.sample, &args.words)?;
    export_heatmap_pgm(hm.values.view(), &args.out)?;
    let min = hm.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = hm.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    emit(
        &json!({
            "sample": hm.sample,
            "words": hm.word_indices,
            "height": hm.values.nrows(),
            "width": hm.values.ncols(),
            "min": min,
            "max": max,
            "pgm": args.out,
        }),
        None,
    )
}

fn to_matrix(path: &Path) -> CliResult<Array2<f64>> {
    read_array(path)?
        .into_dimensionality::<Ix2>()
        .map_err(|_| invalid(format!("{} must hold a rank-2 tensor", path.display())))
}

fn print_theorem_table(report: &ConvergenceReport) {
    eprintln!("note: {}", report.note);
    if report.constant_stream {
        eprintln!("{:>4} {:>14} {:>14} {:>14} {:>14}", "t", "error", "predicted", "ratio", "closed_form");
        for r in &report.rows {
            eprintln!(
                "{:>4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.3e}",
                r.t,
                r.error.unwrap_or(f64::NAN),
                r.predicted_error.unwrap_or(f64::NAN),
                r.ratio.unwrap_or(f64::NAN),
                r.closed_form_diff
            );
        }
    } else {
        eprintln!("{:>4} {:>14} {:>14} {:>14}", "t", "stream_norm", "partial_norm", "closed_form");
        for r in &report.rows {
            eprintln!("{:>4} {:>14.6e} {:>14.6e} {:>14.3e}", r.t, r.stream_norm, r.partial_sum_norm, r.closed_form_diff);
        }
    }
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let clause = |name: &str, c: &plan_align::convergence::Clause| {
        eprintln!("{name}: {} (worst {:.3e}, tolerance {:.3e})", verdict(c.passed), c.worst, c.tolerance);
    };
    clause("closed-form", &report.closed_form);
    clause("mixing-weights", &report.weights);
    clause("boundedness", &report.boundedness);
    match report.bound_violation {
        Some(t) => eprintln!("stream-bound: FAIL (first violation at t={t})"),
        None => eprintln!("stream-bound: PASS"),
    }
    if let Some(c) = &report.decay {
        clause("decay", c);
    }
    if let Some(c) = &report.decay_ratio {
        clause("decay-ratio", c);
    }
}

fn cmd_verify_theorem(ctx: &Ctx, args: &TheoremArgs) -> CliResult<bool> {
    ctx.no_config("verify-theorem")?;
    let seed = ctx.seed.unwrap_or(0);
    let mut rng = substream(seed, Domain::Theorem, 0, 0, 0);
    let (history, initial): (Vec<Array2<f64>>, Array2<f64>) = match args.mode {
        StreamMode::Constant | StreamMode::Random => {
            if args.file.is_some() || args.initial.is_some() {
                return Err(invalid("--file and --initial apply to --mode from-file only"));
            }
            if args.rows == 0 || args.cols == 0 {
                return Err(invalid("--rows and --cols must be positive"));
            }
            let initial = bounded_random_stream(&mut rng, args.rows, args.cols, args.bound, 1).remove(0);
            let history = match args.mode {
                StreamMode::Constant => {
                    let s = bounded_random_stream(&mut rng, args.rows, args.cols, args.bound, 1).remove(0);
                    vec![s; args.tmax + 1]
                }
                _ => bounded_random_stream(&mut rng, args.rows, args.cols, args.bound, args.tmax + 1),
            };
            (history, initial)
        }
        StreamMode::FromFile => {
            let file = args.file.as_ref().ok_or_else(|| invalid("--mode from-file needs --file"))?;
            let raw = read_array(file)?;
            let history = match raw.ndim() {
                2 => vec![raw.into_dimensionality::<Ix2>().expect("rank 2"); args.tmax + 1],
                3 => {
                    let cube = raw.into_dimensionality::<Ix3>().expect("rank 3");
                    if cube.shape()[0] < args.tmax + 1 {
                        return Err(invalid(format!("{} holds {} steps, --tmax {} needs {}", file.display(), cube.shape()[0], args.tmax, args.tmax + 1)));
                    }
                    cube.outer_iter().take(args.tmax + 1).map(|m| m.to_owned()).collect()
                }
                r => return Err(invalid(format!("{} has rank {r}; expected 2 or 3", file.display()))),
            };
            let initial = match &args.initial {
                Some(p) => to_matrix(p)?,
                None => Array2::zeros(history[0].dim()),
            };
            (history, initial)
        }
    };
    let rows = initial.nrows();
    let kept = match &args.kept {
        Some(k) => k.clone(),
        None => {
            let n = ((rows as f64) * 0.7).round().clamp(1.0, rows as f64) as usize;
            let mut k = sample_indices(&mut rng, rows, n).into_vec();
            k.sort_unstable();
            k
        }
    };
    let p = RowProjector::new(kept, rows)?;
    resolved(
        "verify-theorem",
        json!({
            "delta": args.delta,
            "tmax": args.tmax,
            "mode": args.mode,
            "seed": seed,
            "rows": rows,
            "cols": initial.ncols(),
            "kept": p.kept,
            "bound": args.bound,
            "file": args.file,
            "initial": args.initial,
            "tolerances": Tolerances::default(),
        }),
    );
    let report = verify_convergence(|t| history[t].clone(), initial.view(), args.delta, &p, args.bound, args.tmax, Tolerances::default())?;
    print_theorem_table(&report);
    emit(&serde_json::to_value(&report).expect("report serializes"), args.out.as_deref())?;
    Ok(report.passed)
}

fn cmd_gradcheck(ctx: &Ctx, args: &GradcheckArgs) -> CliResult<bool> {
    ctx.no_config("gradcheck")?;
    let [b, l, hw, d] = args.dims[..] else {
        return Err(invalid(format!("--dims needs B,L,HW,D, got {:?}", args.dims)));
    };
    if [b, l, hw, d].contains(&0) {
        return Err(invalid("--dims entries must be positive"));
    }
    if args.iterations == 0 {
        return Err(invalid("--iterations must be positive"));
    }
    let seed = ctx.seed.unwrap_or(0);
    let align = AlignConfig { iterations: args.iterations, tau1: 0.5, tau2: 0.5, keep_ratio: 0.7, ..AlignConfig::default() };
    let objective = Objective { align, mode: args.mode.into(), backprop_history: args.backprop_history };
    resolved(
        "gradcheck",
        json!({ "seed": seed, "dims": [b, l, hw, d], "tol": args.tol, "step": args.step, "objective": objective }),
    );
    let (params, data) = seeded_instance(seed, b, l, hw, d);
    let views: Vec<SampleView<'_>> = data.iter().map(|(t, i)| SampleView { text: t.view(), image: i.view() }).collect();
    let start = Instant::now();
    let report = check_objective_gradients(
        &params,
        &views,
        &objective,
        |pos, t| substream(seed, Domain::Gradcheck, 1, pos as u64, t as u64),
        true,
        args.step,
        args.tol,
    )?;
    for g in &report.groups {
        eprintln!(
            "{:<12} {} (coords {:>3}, rel {:.3e}, abs {:.3e})",
            g.name,
            if g.passed { "PASS" } else { "FAIL" },
            g.coordinates,
            g.relative_error,
            g.max_abs_error
        );
    }
    ctx.note(format!("gradient check took {:.2?}", start.elapsed()));
    emit(&serde_json::to_value(&report).expect("report serializes"), args.out.as_deref())?;
    Ok(report.passed)
}

fn cmd_probe(ctx: &Ctx, args: &ProbeArgs) -> CliResult<()> {
    ctx.no_config("probe")?;
    let (config, ck, dataset, data_path) = load_trained(&args.run, args.data.as_deref())?;
    resolved("probe", json!({ "run": args.run, "data": data_path, "train_fraction": args.train_fraction }));
    if !(args.train_fraction > 0.0 && args.train_fraction < 1.0) {
        return Err(invalid("--train-fraction must lie in (0, 1)"));
    }
    let untrained = Checkpoint::init(&config, ck.dim());
    let trained = evaluate_probe(&ck.params, &dataset, args.train_fraction)?;
    let baseline = evaluate_probe(&untrained.params, &dataset, args.train_fraction)?;
    emit(
        &json!({
            "trained": trained,
            "untrained": baseline,
            "improved": trained.accuracy > baseline.accuracy,
        }),
        args.out.as_deref(),
    )
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx { seed: cli.seed, verbose: cli.verbose, config: cli.config };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a).map(|_| true),
        Command::Train(a) => cmd_train(&ctx, a).map(|_| true),
        Command::Ground(a) => cmd_ground(&ctx, a).map(|_| true),
        Command::Retrieve(a) => cmd_retrieve(&ctx, a).map(|_| true),
        Command::Heatmap(a) => cmd_heatmap(&ctx, a).map(|_| true),
        Command::VerifyTheorem(a) => cmd_verify_theorem(&ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&ctx, a),
        Command::Probe(a) => cmd_probe(&ctx, a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: check failed");
            ExitCode::from(2)
        }
        Err(f) => {
            match &f {
                Failure::Validation(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
