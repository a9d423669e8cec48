use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dualspat::decision::{confusion, fuse_labels, metrics};
use dualspat::dimred::reduce_bands;
use dualspat::io::{load_cube, load_labels, write_cube, write_labels};
use dualspat::kclassify::{save_classifier, TrainGrid};
use dualspat::kpca::{save_kpca, KernelWidth};
use dualspat::pipeline::{
    classify_cube, export_map, format_sweep, run_pipeline, stage_erw, stage_guidance, stage_seed,
    sweep, PipelineConfig,
};
use dualspat::prep::normalize_bands;
use dualspat::spfilter::extract_sp;
use dualspat::synth::{generate_synthetic, sample_training, SyntheticSpec};
use dualspat::{HsiCube, ProbStack};

#[derive(Parser)]
#[command(name = "dualspat", version, about = "Dual-spatial hyperspectral classification")]
struct Cli {
    /// Config file of `key = value` lines; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 gives byte-identical outputs across runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average contiguous band groups.
    Reduce(ReduceArgs),
    /// Extract the structural profile.
    Sp(SpArgs),
    /// Train the probabilistic classifier and predict every pixel.
    Classify(ClassifyArgs),
    /// First kernel principal component, rescaled to [0, 1].
    Guidance(GuidanceArgs),
    /// Refine probabilities with the extended random walker.
    Erw(ErwArgs),
    /// Weighted fusion of two probability stacks.
    Fuse(FuseArgs),
    /// OA, AA, Kappa and per-class accuracy.
    Metrics(MetricsArgs),
    /// Run every stage.
    Pipeline(PipelineArgs),
    /// Rerun the pipeline over values of one parameter.
    Sweep(SweepArgs),
    /// Write a synthetic Voronoi scene.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "M")]
    m: Option<usize>,
    /// Map every band to [0, 1] first.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct KpcaArgs {
    /// Maximum number of anchor pixels.
    #[arg(long)]
    kpca_anchors: Option<usize>,
    /// Kernel width, or `auto` for the median heuristic.
    #[arg(long)]
    kpca_sigma: Option<String>,
}

#[derive(Args)]
struct SpArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    kpca: KpcaArgs,
    /// Also write the smoothed cube before compaction.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Also write the fitted KPCA model.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Branch {
    /// Structural-profile features.
    Sp,
    /// Reduced spectra.
    Reduced,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out_prob: PathBuf,
    /// Ignore grid settings from the config file.
    #[arg(long)]
    grid_default: bool,
    /// Pipeline branch whose seed to use.
    #[arg(long, value_enum, default_value = "sp")]
    branch: Branch,
    /// Also write the trained model.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct GuidanceArgs {
    /// Band-normalized original cube.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    kpca: KpcaArgs,
}

#[derive(Args)]
struct ErwArgs {
    #[arg(long)]
    prob: PathBuf,
    #[arg(long)]
    guidance: PathBuf,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    cg_tol: Option<f64>,
    #[arg(long)]
    cg_max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    c1: PathBuf,
    #[arg(long)]
    c2: PathBuf,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also render a PPM image.
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PathOverrides {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Override any config key, e.g. `--set lambda=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    paths: PathOverrides,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    paths: PathOverrides,
    /// Config key to vary.
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    classes: u32,
    #[arg(long, default_value_t = 40)]
    bands: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Voronoi cells; four per class when omitted.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    out_cube: PathBuf,
    /// Full ground-truth label map.
    #[arg(long)]
    out_labels: PathBuf,
    /// Training mask with `--per-class` pixels per class.
    #[arg(long, requires = "out_test")]
    out_train: Option<PathBuf>,
    #[arg(long, requires = "out_train")]
    out_test: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_kpca(cfg: &mut PipelineConfig, args: &KpcaArgs) -> Result<()> {
    if let Some(n) = args.kpca_anchors {
        cfg.kpca.max_anchors = n;
    }
    if let Some(s) = &args.kpca_sigma {
        cfg.kpca.kernel_width = match s.as_str() {
            "auto" => KernelWidth::Auto,
            v => KernelWidth::Value(v.parse().with_context(|| format!("--kpca-sigma {v}"))?),
        };
    }
    Ok(())
}

fn apply_paths(cfg: &mut PipelineConfig, p: &PathOverrides) -> Result<()> {
    for kv in &p.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set {kv}: expected KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(v) = &p.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &p.train {
        cfg.train = Some(v.clone());
    }
    if let Some(v) = &p.test {
        cfg.test = Some(v.clone());
    }
    Ok(())
}

fn read_cube(path: &Path) -> Result<HsiCube> {
    load_cube(path).with_context(|| format!("loading {}", path.display()))
}

fn read_probs(path: &Path) -> Result<ProbStack> {
    Ok(ProbStack::from_cube(&read_cube(path)?)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Reduce(a) => {
            let cube = read_cube(&a.input)?;
            let cube = if a.normalize { normalize_bands(&cube) } else { cube };
            let m = a.m.unwrap_or(cfg.bands);
            let out = reduce_bands(&cube, m).context("reduce")?;
            write_cube(&out, &a.out)?;
        }
        Command::Sp(a) => {
            let s = &mut cfg.smooth;
            s.lambda = a.lambda.unwrap_or(s.lambda);
            s.window_radius = a.window.unwrap_or(s.window_radius);
            s.patch_radius = a.patch.unwrap_or(s.patch_radius);
            s.degree = a.degree.unwrap_or(s.degree);
            s.max_iters = a.max_iters.unwrap_or(s.max_iters);
            s.tol = a.tol.unwrap_or(s.tol);
            s.sigma = a.sigma.unwrap_or(s.sigma);
            apply_kpca(&mut cfg, &a.kpca)?;
            let k = a.k.unwrap_or(cfg.components);
            let cube = read_cube(&a.input)?;
            let sp = extract_sp(
                &cube,
                &cfg.smooth,
                k,
                &cfg.kpca,
                cfg.seed.wrapping_add(stage_seed::SP_KPCA),
            )
            .context("sp")?;
            write_cube(&sp.features, &a.out)?;
            if let Some(p) = &a.initial {
                write_cube(&sp.initial, p)?;
            }
            if let Some(p) = &a.model {
                save_kpca(&sp.model, p)?;
            }
        }
        Command::Classify(a) => {
            let grid = if a.grid_default {
                TrainGrid::default()
            } else {
                cfg.grid.clone()
            };
            let ordinal = match a.branch {
                Branch::Sp => stage_seed::CLASSIFY_SP,
                Branch::Reduced => stage_seed::CLASSIFY_REDUCED,
            };
            let features = read_cube(&a.features)?;
            let train = load_labels(&a.train)?;
            let (model, probs) = classify_cube(&features, &train, &grid, cfg.seed.wrapping_add(ordinal))
                .context("classify")?;
            write_cube(&probs.to_cube(), &a.out_prob)?;
            if let Some(p) = &a.model {
                save_classifier(&model, p)?;
            }
        }
        Command::Guidance(a) => {
            apply_kpca(&mut cfg, &a.kpca)?;
            let cube = read_cube(&a.input)?;
            let g = stage_guidance(&cube, &cfg.kpca, cfg.seed.wrapping_add(stage_seed::GUIDANCE))
                .context("guidance")?;
            write_cube(&g, &a.out)?;
        }
        Command::Erw(a) => {
            let e = &mut cfg.erw;
            e.beta = a.beta.unwrap_or(e.beta);
            e.gamma = a.gamma.unwrap_or(e.gamma);
            e.cg_tol = a.cg_tol.unwrap_or(e.cg_tol);
            e.cg_max_iters = a.cg_max_iters.unwrap_or(e.cg_max_iters);
            let prior = read_probs(&a.prob)?;
            let guidance = read_cube(&a.guidance)?;
            let q = stage_erw(&prior, &guidance, &cfg.erw).context("erw")?;
            write_cube(&q.to_cube(), &a.out)?;
        }
        Command::Fuse(a) => {
            let c1 = read_probs(&a.c1)?;
            let c2 = read_probs(&a.c2)?;
            let labels = fuse_labels(&c1, &c2, a.mu.unwrap_or(cfg.mu)).context("fuse")?;
            write_labels(&labels, &a.out)?;
            if let Some(p) = &a.map {
                export_map(&labels, p)?;
            }
        }
        Command::Metrics(a) => {
            let reference = load_labels(&a.reference)?;
            let pred = load_labels(&a.pred)?;
            let m = metrics(&confusion(&reference, &pred)?).context("metrics")?;
            match &a.report {
                Some(p) => write_text(p, &m.report())?,
                None => print!("{}", m.report()),
            }
        }
        Command::Pipeline(a) => {
            apply_paths(&mut cfg, &a.paths)?;
            if let Some(v) = a.output {
                cfg.output = Some(v);
            }
            if let Some(v) = a.report {
                cfg.report = Some(v);
            }
            if let Some(v) = a.map {
                cfg.map = Some(v);
            }
            if let Some(v) = a.artifacts {
                cfg.artifacts = Some(v);
            }
            if let Some(v) = a.mu {
                cfg.mu = v;
            }
            let run = run_pipeline(&cfg)?;
            if cfg.report.is_none() {
                print!("{}", run.report);
            }
        }
        Command::Sweep(a) => {
            apply_paths(&mut cfg, &a.paths)?;
            let rows = sweep(&cfg, &a.axis, &a.values)?;
            let table = format_sweep(&a.axis, &rows);
            match &a.out {
                Some(p) => write_text(p, &table)?,
                None => print!("{table}"),
            }
        }
        Command::Synth(a) => {
            let mut spec = SyntheticSpec::new(a.height, a.width, a.classes, a.bands, a.noise, cfg.seed);
            if let Some(c) = a.cells {
                spec.cells = c;
            }
            let scene = generate_synthetic::<f64>(&spec).context("synth")?;
            write_cube(&scene.cube, &a.out_cube)?;
            write_labels(&scene.labels, &a.out_labels)?;
            if let (Some(tr), Some(te)) = (&a.out_train, &a.out_test) {
                let (train, test) =
                    sample_training(&scene.labels, a.per_class, cfg.seed).context("synth")?;
                write_labels(&train, tr)?;
                write_labels(&test, te)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
