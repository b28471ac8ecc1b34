use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use equact::autodiff::{ParamStore, Tape};
use equact::check::{self, CheckConfig, Fault, Precision};
use equact::eptu::Eptu;
use equact::field::FieldHeads;
use equact::layers::{farthest_point_sampling, knn, smaxpool, sup, AttentionBlock, AttentionConfig, EdgeGeometry, FilmKind, IFilm, IFilmConfig};
use equact::policy::tasks::{generate_suite, SceneMode, Task};
use equact::policy::{evaluate, load_dataset, save_dataset, train, Checkpoint, Demonstration, Policy, PolicyConfig, ToyConfig};
use equact::tensor::IrrepsSpec;
use equact::{Error, Real};

#[derive(Parser)]
#[command(name = "equact", version, about = "SE(3)-equivariant keyframe policy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the equivariance property matrix and write a JSON report.
    CheckEquivariance(CheckArgs),
    /// Generate demonstrations for the synthetic task suite.
    SynthesizeData(SynthArgs),
    /// Train a policy on a demonstration file.
    TrainToy(TrainArgs),
    /// Score a checkpoint on freshly generated scenes.
    EvalToy(EvalArgs),
    /// Time individual layers.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 3)]
    lmax: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Defaults to 1e-7 in f64 and 1e-4 in f32.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Inject a symmetry-breaking fault.
    #[arg(long, value_name = "FAULT", num_args = 0..=1, default_missing_value = "raw-positions", value_parser = parse_fault)]
    break_equivariance: Option<Fault>,
    #[arg(long, default_value = "f64", value_parser = parse_precision)]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Se2,
    Se3,
}

impl From<Mode> for SceneMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Se2 => SceneMode::Se2,
            Mode::Se3 => SceneMode::Se3,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated instructions, or `all`.
    #[arg(long, default_value = "all")]
    tasks: String,
    #[arg(long, default_value_t = 50)]
    demos_per_task: usize,
    #[arg(long, value_enum, default_value = "se2")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON with optional `policy` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the training report goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured number of steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test scenes per task.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, value_enum, default_value = "se3")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Layer {
    Smaxpool,
    Sup,
    Ifilm,
    Attention,
    Eptu,
    Heads,
    All,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "all")]
    layer: Layer,
    /// Comma-separated point counts; pooling uses the first two as source and destination.
    #[arg(long, default_value = "512,128", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    lmax: usize,
    #[arg(long, default_value_t = 8)]
    multiplicity: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value = "f64", value_parser = parse_precision)]
    precision: Precision,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure classes mapped to exit codes.
enum Failure {
    Property(String),
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Data(_) | Error::Schema { .. } | Error::Io(_) | Error::Json(_) | Error::Vocabulary(_) => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CheckEquivariance(a) => check_equivariance(a),
        Command::SynthesizeData(a) => synthesize(a),
        Command::TrainToy(a) => train_toy(a),
        Command::EvalToy(a) => eval_toy(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property(m)) => {
            eprintln!("property failure: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn check_equivariance(a: CheckArgs) -> Result<(), Failure> {
    let cfg = CheckConfig {
        lmax: a.lmax,
        trials: a.trials,
        tolerance: a.tolerance.unwrap_or_else(|| a.precision.default_tolerance()),
        precision: a.precision,
        seed: a.seed,
        fault: a.break_equivariance,
    };
    let report = check::run(&cfg)?;
    for r in &report.records {
        println!("{:<4} {:<32} {:>10.3e} <= {:.1e}  {}", if r.pass { "ok" } else { "FAIL" }, r.layer, r.max_deviation, r.threshold, r.identity);
    }
    if let Some(path) = &a.report {
        write_text(path, &(report.to_json() + "\n"))?;
    }
    let failed: Vec<String> = report.failures().map(|r| format!("{} ({})", r.layer, r.identity)).collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.records.len());
        Ok(())
    } else {
        Err(Failure::Property(failed.join(", ")))
    }
}

fn parse_tasks(spec: &str) -> Result<Vec<Task>, Failure> {
    if spec == "all" {
        return Ok(Task::all());
    }
    spec.split(',').map(|t| t.trim().parse::<Task>().map_err(|e| Failure::Usage(e.to_string()))).collect()
}

fn synthesize(a: SynthArgs) -> Result<(), Failure> {
    let tasks = parse_tasks(&a.tasks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let demos: Vec<Demonstration> = generate_suite(&mut rng, &tasks, a.demos_per_task, a.mode.into()).into_iter().map(|s| s.demo).collect();
    save_dataset(&a.out, &demos)?;
    println!("wrote {} demonstrations to {}", demos.len(), a.out.display());
    Ok(())
}

fn train_toy(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ToyConfig>(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
        }
        None => ToyConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    let data = load_dataset(&a.data)?;
    let policy = Policy::new(cfg.policy.clone())?;
    let mut params = ParamStore::new();
    policy.init(&mut params, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let start = Instant::now();
    let report = train(&policy, &mut params, &data, &cfg.train, |step, loss| {
        eprintln!("step {step:>6}  loss {loss:.4}  {:.0}s", start.elapsed().as_secs_f64());
    })?;
    Checkpoint { config: cfg.policy, params }.save(&a.out)?;
    let report_path = a.out.with_extension("report.json");
    write_text(&report_path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    println!("final loss {:.4}; checkpoint {}; report {}", report.final_loss, a.out.display(), report_path.display());
    Ok(())
}

fn eval_toy(a: EvalArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let policy = Policy::new(ck.config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scenes: Vec<Demonstration> = generate_suite(&mut rng, &Task::all(), a.scenes, a.mode.into()).into_iter().map(|s| s.demo).collect();
    let report = evaluate(&policy, &ck.params, &scenes)?;
    for (task, s) in &report.per_task {
        println!("{task:<24} {:>3}/{:<3} {:>6.1}%  pos {:.4} m  rot {:.1} deg", s.successes, s.total, 100.0 * s.rate, s.mean_position_error, s.mean_rotation_error_deg);
    }
    println!("average {:.1}%", 100.0 * report.average);
    if let Some(path) = &a.report {
        write_text(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

/// Peak resident set size in kB, where the platform reports it.
fn peak_memory_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn time<F: FnMut() -> Result<(), Error>>(repeats: usize, mut f: F) -> Result<f64, Error> {
    f()?;
    let start = Instant::now();
    for _ in 0..repeats {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / repeats.max(1) as f64)
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    match a.precision {
        Precision::F64 => bench_in::<f64>(&a),
        Precision::F32 => bench_in::<f32>(&a),
    }
}

fn bench_in<T: Real>(a: &BenchArgs) -> Result<(), Failure> {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(Failure::Usage("--sizes needs positive point counts".into()));
    }
    let n_src = a.sizes[0];
    let n_dst = a.sizes.get(1).copied().unwrap_or(n_src.div_ceil(4)).min(n_src);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = IrrepsSpec::uniform(a.lmax, a.multiplicity);
    let pts: Vec<[f64; 3]> = (0..n_src).map(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]).collect();
    let feats: Vec<T> = (0..n_src * spec.width()).map(|_| T::c(rng.gen_range(-1.0..1.0))).collect();
    let sel = farthest_point_sampling(&pts, n_dst)?;
    let dst: Vec<[f64; 3]> = sel.iter().map(|&i| pts[i]).collect();
    let k: Vec<T> = (0..64).map(|_| T::c(rng.gen_range(-1.0..1.0))).collect();
    let want = |l: Layer| a.layer == l || a.layer == Layer::All;
    let report = |name: &str, secs: f64| println!("{name:<10} {:>10.3} ms/call  peak {} kB", secs * 1e3, peak_memory_kb().map_or("n/a".into(), |v| v.to_string()));

    if want(Layer::Smaxpool) {
        let graph = knn(&dst, &pts, 8)?;
        let secs = time(a.repeats, || {
            let mut tape = Tape::<T>::new();
            let x = tape.constant(n_src, spec.width(), feats.clone())?;
            smaxpool(&mut tape, &spec, x, &graph).map(|_| ())
        })?;
        report(&format!("smaxpool {n_src}->{n_dst}"), secs);
    }
    if want(Layer::Sup) {
        let graph = knn(&pts, &dst, 3)?;
        let small = feats[..n_dst * spec.width()].to_vec();
        let secs = time(a.repeats, || {
            let mut tape = Tape::<T>::new();
            let x = tape.constant(n_dst, spec.width(), small.clone())?;
            sup(&mut tape, &spec, x, &graph).map(|_| ())
        })?;
        report(&format!("sup {n_dst}->{n_src}"), secs);
    }
    let film_cfg = IFilmConfig { spec: spec.clone(), d_k: 64, hidden: 32, kind: FilmKind::Invariant, alpha_per_degree: false };
    if want(Layer::Ifilm) {
        let film = IFilm::new(film_cfg.clone(), "film");
        let mut params = ParamStore::new();
        film.init(&mut params, &mut rng)?;
        let secs = time(a.repeats, || {
            let mut tape = Tape::<T>::new();
            let x = tape.constant(n_src, spec.width(), feats.clone())?;
            let c = tape.constant(1, 64, k.clone())?;
            film.forward(&mut tape, &params, x, c).map(|_| ())
        })?;
        report(&format!("ifilm {n_src}"), secs);
    }
    if want(Layer::Attention) {
        let acfg = AttentionConfig { spec_in: spec.clone(), spec_out: spec.clone(), hidden: 32, n_rbf: 16, use_dst: true, raw_positions: false };
        let block = AttentionBlock::new(acfg, Some(IFilm::new(film_cfg.clone(), "blk.film")), "blk");
        let mut params = ParamStore::new();
        block.init(&mut params, &mut rng)?;
        let graph = knn(&pts, &pts, 8)?;
        let r_cut = graph.median_distance().map_or(1.0, |m| 2.0 * m);
        let geo = EdgeGeometry::<T>::new(&graph, &pts, &pts, a.lmax.max(1), 16, r_cut);
        let secs = time(a.repeats, || {
            let mut tape = Tape::<T>::new();
            let x = tape.constant(n_src, spec.width(), feats.clone())?;
            let c = tape.constant(1, 64, k.clone())?;
            let y = block.forward(&mut tape, &params, x, &geo, Some(c))?;
            let s = tape.sum_all(y);
            tape.backward(s).map(|_| ())
        })?;
        report(&format!("attention {n_src} fwd+bwd"), secs);
    }
    if want(Layer::Eptu) || want(Layer::Heads) {
        let mut pcfg = PolicyConfig::default().with_lmax(a.lmax);
        pcfg.eptu.level_sizes[0] = n_src;
        let net = Eptu::new(pcfg.eptu.clone())?;
        let heads = FieldHeads::new(pcfg.field.clone(), pcfg.eptu.latent_spec())?;
        let mut params = ParamStore::new();
        net.init(&mut params, &mut rng)?;
        heads.init(&mut params, &mut rng)?;
        let obs = equact::scene::Observation {
            points: pts.clone(),
            colors: (0..n_src).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
            gripper: equact::scene::Gripper { pose: equact::so3::RigidTransform::new(equact::so3::Rotation::identity(), [0.0, 0.0, 0.25]), open: true },
            workspace: equact::scene::Workspace::default(),
        };
        let kf: Vec<f64> = k.iter().map(|v| v.as_f64()).collect();
        if want(Layer::Eptu) {
            let secs = time(a.repeats.min(5), || net.encode::<T>(&params, &obs, &kf).map(|_| ()))?;
            report(&format!("eptu {n_src}"), secs);
        }
        if want(Layer::Heads) {
            let latent = net.encode::<T>(&params, &obs, &kf)?;
            let ws = obs.workspace;
            let secs = time(a.repeats.min(5), || {
                let mut tape = Tape::<T>::new();
                let x = tape.constant(latent.features.rows(), latent.features.spec().width(), latent.features.data().to_vec())?;
                heads.decode(&mut tape, &params, x, &latent.positions, &ws).map(|_| ())
            })?;
            report("heads decode", secs);
        }
    }
    Ok(())
}
