//! End-to-end classification flow, configuration, sweeps and map export.
//!
//! ```text
//! normalize → reduce ─┬─ structural profile → classify → C1 ─┐
//!                     └─ classify → Ĉ2 → random walker → C2 ─┴─ fuse → metrics
//! ```
//!
//! Every stage output is rounded to `f32` before the next stage consumes it,
//! so persisting artifacts in the raster format and reloading them yields
//! exactly the in-memory result. Each stage draws its own seed as
//! `seed + stage ordinal`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::decision::{confusion, fuse_labels, metrics, FusionParams, Metrics};
use crate::dimred::{reduce_bands, DEFAULT_GROUPS};
use crate::erw::{build_laplacian, erw_optimize, guidance_image, ErwParams};
use crate::error::{Error, Result, StageContext};
use crate::io::{load_cube, load_labels, write_cube, write_file, write_labels};
use crate::kclassify::{predict_proba, save_classifier, train, TrainGrid, TrainedClassifier};
use crate::kpca::{save_kpca, KernelWidth, KpcaParams, DEFAULT_COMPONENTS};
use crate::prep::normalize_bands;
use crate::raster::{HsiCube, LabelMap, ProbStack};
use crate::scalar::Real;
use crate::spfilter::{extract_sp, SmoothParams};

/// Stage ordinals added to the run seed.
pub mod stage_seed {
    pub const SP_KPCA: u64 = 1;
    pub const CLASSIFY_SP: u64 = 2;
    pub const CLASSIFY_REDUCED: u64 = 3;
    pub const GUIDANCE: u64 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Fused label map (text format).
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Colour rendering of the fused map.
    pub map: Option<PathBuf>,
    /// Directory receiving every intermediate artifact.
    pub artifacts: Option<PathBuf>,
    /// Number of band groups `M`.
    pub bands: usize,
    /// Structural-profile components `K`.
    pub components: usize,
    pub smooth: SmoothParams,
    pub kpca: KpcaParams,
    pub grid: TrainGrid,
    pub erw: ErwParams,
    pub mu: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            train: None,
            test: None,
            output: None,
            report: None,
            map: None,
            artifacts: None,
            bands: DEFAULT_GROUPS,
            components: DEFAULT_COMPONENTS,
            smooth: SmoothParams::default(),
            kpca: KpcaParams::default(),
            grid: TrainGrid::default(),
            erw: ErwParams::default(),
            mu: FusionParams::default().mu,
            seed: 0,
        }
    }
}

/// Keys accepted in a config file, in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "input",
    "train",
    "test",
    "output",
    "report",
    "map",
    "artifacts",
    "bands",
    "components",
    "lambda",
    "window_radius",
    "patch_radius",
    "degree",
    "sigma",
    "h0",
    "max_iters",
    "tol",
    "kpca_anchors",
    "kpca_sigma",
    "svm_kernel_widths",
    "svm_penalties",
    "folds",
    "smo_tol",
    "smo_max_passes",
    "beta",
    "gamma",
    "cg_tol",
    "cg_max_iters",
    "mu",
    "seed",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Unsupported {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key {
            "input" => self.input = path(),
            "train" => self.train = path(),
            "test" => self.test = path(),
            "output" => self.output = path(),
            "report" => self.report = path(),
            "map" => self.map = path(),
            "artifacts" => self.artifacts = path(),
            "bands" => self.bands = parse_num(key, value)?,
            "components" => self.components = parse_num(key, value)?,
            "lambda" => self.smooth.lambda = parse_num(key, value)?,
            "window_radius" => self.smooth.window_radius = parse_num(key, value)?,
            "patch_radius" => self.smooth.patch_radius = parse_num(key, value)?,
            "degree" => self.smooth.degree = parse_num(key, value)?,
            "sigma" => self.smooth.sigma = parse_num(key, value)?,
            "h0" => self.smooth.h0 = parse_num(key, value)?,
            "max_iters" => self.smooth.max_iters = parse_num(key, value)?,
            "tol" => self.smooth.tol = parse_num(key, value)?,
            "kpca_anchors" => self.kpca.max_anchors = parse_num(key, value)?,
            "kpca_sigma" => {
                self.kpca.kernel_width = match value {
                    "auto" => KernelWidth::Auto,
                    v => KernelWidth::Value(parse_num(key, v)?),
                }
            }
            "svm_kernel_widths" => self.grid.kernel_widths = parse_list(key, value)?,
            "svm_penalties" => self.grid.penalties = parse_list(key, value)?,
            "folds" => self.grid.folds = parse_num(key, value)?,
            "smo_tol" => self.grid.smo.tol = parse_num(key, value)?,
            "smo_max_passes" => self.grid.smo.max_passes = parse_num(key, value)?,
            "beta" => self.erw.beta = parse_num(key, value)?,
            "gamma" => self.erw.gamma = parse_num(key, value)?,
            "cg_tol" => self.erw.cg_tol = parse_num(key, value)?,
            "cg_max_iters" => self.erw.cg_max_iters = parse_num(key, value)?,
            "mu" => self.mu = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => {
                return Err(Error::Unsupported {
                    key: key.to_string(),
                    value: value.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format("<config>", format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, msg),
            other => other,
        })
    }

    /// Every set key in [`CONFIG_KEYS`] order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let paths = [
            ("input", &self.input),
            ("train", &self.train),
            ("test", &self.test),
            ("output", &self.output),
            ("report", &self.report),
            ("map", &self.map),
            ("artifacts", &self.artifacts),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                line(k, p.display().to_string());
            }
        }
        line("bands", self.bands.to_string());
        line("components", self.components.to_string());
        line("lambda", self.smooth.lambda.to_string());
        line("window_radius", self.smooth.window_radius.to_string());
        line("patch_radius", self.smooth.patch_radius.to_string());
        line("degree", self.smooth.degree.to_string());
        line("sigma", self.smooth.sigma.to_string());
        line("h0", self.smooth.h0.to_string());
        line("max_iters", self.smooth.max_iters.to_string());
        line("tol", self.smooth.tol.to_string());
        line("kpca_anchors", self.kpca.max_anchors.to_string());
        line(
            "kpca_sigma",
            match self.kpca.kernel_width {
                KernelWidth::Auto => "auto".to_string(),
                KernelWidth::Value(v) => v.to_string(),
            },
        );
        line("svm_kernel_widths", join_list(&self.grid.kernel_widths));
        line("svm_penalties", join_list(&self.grid.penalties));
        line("folds", self.grid.folds.to_string());
        line("smo_tol", self.grid.smo.tol.to_string());
        line("smo_max_passes", self.grid.smo.max_passes.to_string());
        line("beta", self.erw.beta.to_string());
        line("gamma", self.erw.gamma.to_string());
        line("cg_tol", self.erw.cg_tol.to_string());
        line("cg_max_iters", self.erw.cg_max_iters.to_string());
        line("mu", self.mu.to_string());
        line("seed", self.seed.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::param("bands", "must be at least 1"));
        }
        if self.components == 0 {
            return Err(Error::param("components", "must be at least 1"));
        }
        if self.kpca.max_anchors == 0 {
            return Err(Error::param("kpca_anchors", "must be at least 1"));
        }
        if let KernelWidth::Value(v) = self.kpca.kernel_width {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param("kpca_sigma", "must be positive"));
            }
        }
        self.smooth.validate()?;
        self.grid.validate()?;
        self.erw.validate()?;
        FusionParams { mu: self.mu }.validate()
    }
}

/// Normalizes every band to `[0, 1]` and rounds to `f32`.
pub fn stage_normalize<T: Real>(cube: &HsiCube<T>) -> HsiCube<T> {
    normalize_bands(cube).quantized_f32()
}

pub fn stage_reduce<T: Real>(normalized: &HsiCube<T>, bands: usize) -> Result<HsiCube<T>> {
    Ok(reduce_bands(normalized, bands)?.quantized_f32())
}

/// Row-major features and labels of the labelled pixels of `train`.
pub fn training_rows<T: Real>(features: &HsiCube<T>, train: &LabelMap) -> (Vec<T>, Vec<u32>) {
    let pixels = features.to_pixel_major();
    let dim = features.bands();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in train.labeled_indices() {
        x.extend_from_slice(&pixels[i * dim..(i + 1) * dim]);
        y.push(train.labels()[i]);
    }
    (x, y)
}

/// Trains on the labelled pixels of `train` and predicts every pixel.
pub fn classify_cube<T: Real>(
    features: &HsiCube<T>,
    train_map: &LabelMap,
    grid: &TrainGrid,
    seed: u64,
) -> Result<(TrainedClassifier<T>, ProbStack<T>)> {
    if !train_map.matches_cube(features) {
        return Err(Error::Dimension(format!(
            "training map is {}x{}, features are {}x{}",
            train_map.height(),
            train_map.width(),
            features.height(),
            features.width()
        )));
    }
    let (x, y) = training_rows(features, train_map);
    let model = train(&x, features.bands(), &y, train_map.num_classes(), grid, seed)?;
    let probs = predict_proba(&model, &features.to_pixel_major())?;
    let stack = ProbStack::new(
        features.height(),
        features.width(),
        model.num_classes(),
        probs,
    )?;
    Ok((model, stack.quantized_f32()))
}

/// Guidance image as a one-band cube, rounded to `f32`.
pub fn stage_guidance<T: Real>(normalized: &HsiCube<T>, kpca: &KpcaParams, seed: u64) -> Result<HsiCube<T>> {
    let g = guidance_image(normalized, kpca, seed)?;
    let cube = HsiCube::new(normalized.height(), normalized.width(), 1, g)?;
    Ok(cube.quantized_f32())
}

pub fn stage_erw<T: Real>(prior: &ProbStack<T>, guidance: &HsiCube<T>, params: &ErwParams) -> Result<ProbStack<T>> {
    if guidance.bands() != 1 {
        return Err(Error::Dimension(format!(
            "guidance must have one band, found {}",
            guidance.bands()
        )));
    }
    let lap = build_laplacian(
        guidance.data(),
        guidance.height(),
        guidance.width(),
        T::lit(params.beta),
    )?;
    Ok(erw_optimize(&lap, prior, params)?.probs.quantized_f32())
}

/// All intermediate results of one run.
#[derive(Debug, Clone)]
pub struct Branches<T> {
    pub normalized: HsiCube<T>,
    pub reduced: HsiCube<T>,
    /// `K`-band structural profile.
    pub sp: HsiCube<T>,
    pub c1: ProbStack<T>,
    /// Classifier output on the reduced cube, before the random walker.
    pub c2_prior: ProbStack<T>,
    pub guidance: HsiCube<T>,
    pub c2: ProbStack<T>,
    pub classifier_sp: TrainedClassifier<T>,
    pub classifier_reduced: TrainedClassifier<T>,
    pub sp_model: crate::kpca::KpcaModel<T>,
}

/// Runs everything up to (not including) fusion.
pub fn compute_branches<T: Real>(
    cube: &HsiCube<T>,
    train_map: &LabelMap,
    cfg: &PipelineConfig,
) -> Result<Branches<T>> {
    cfg.validate().stage("config")?;
    if !train_map.matches_cube(cube) {
        return Err(Error::Dimension(format!(
            "training map is {}x{}, cube is {}x{}",
            train_map.height(),
            train_map.width(),
            cube.height(),
            cube.width()
        )))
        .stage("input");
    }
    let normalized = stage_normalize(cube);
    let reduced = stage_reduce(&normalized, cfg.bands).stage("reduce")?;

    let sp = extract_sp(
        &reduced,
        &cfg.smooth,
        cfg.components,
        &cfg.kpca,
        cfg.seed.wrapping_add(stage_seed::SP_KPCA),
    )
    .stage("sp")?;
    let sp_features = sp.features.quantized_f32();
    let (classifier_sp, c1) = classify_cube(
        &sp_features,
        train_map,
        &cfg.grid,
        cfg.seed.wrapping_add(stage_seed::CLASSIFY_SP),
    )
    .stage("classify-sp")?;

    let (classifier_reduced, c2_prior) = classify_cube(
        &reduced,
        train_map,
        &cfg.grid,
        cfg.seed.wrapping_add(stage_seed::CLASSIFY_REDUCED),
    )
    .stage("classify-reduced")?;
    let guidance = stage_guidance(&normalized, &cfg.kpca, cfg.seed.wrapping_add(stage_seed::GUIDANCE))
        .stage("guidance")?;
    let c2 = stage_erw(&c2_prior, &guidance, &cfg.erw).stage("erw")?;

    Ok(Branches {
        normalized,
        reduced,
        sp: sp_features,
        c1,
        c2_prior,
        guidance,
        c2,
        classifier_sp,
        classifier_reduced,
        sp_model: sp.model,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub fused: Metrics,
    /// Branch A alone (`mu = 1`).
    pub spatial_features: Metrics,
    /// Branch B alone (`mu = 0`).
    pub spatial_optimization: Metrics,
}

#[derive(Debug, Clone)]
pub struct PipelineRun<T> {
    pub labels: LabelMap,
    pub branches: Branches<T>,
    pub evaluation: Option<Evaluation>,
    pub report: String,
}

fn score(test: &LabelMap, pred: &LabelMap) -> Result<Metrics> {
    metrics(&confusion(test, pred)?)
}

/// Fused metrics followed by one summary line per branch.
pub fn format_report(eval: &Evaluation) -> String {
    let mut out = eval.fused.report();
    for (name, m) in [
        ("branch_sp", &eval.spatial_features),
        ("branch_erw", &eval.spatial_optimization),
    ] {
        let _ = writeln!(
            out,
            "{name} OA {:.4} AA {:.4} Kappa {:.4}",
            m.overall, m.average, m.kappa
        );
    }
    out
}

/// Fuses the branches and scores the result against `test`, when given.
pub fn finish<T: Real>(
    branches: Branches<T>,
    test: Option<&LabelMap>,
    mu: f64,
) -> Result<PipelineRun<T>> {
    let labels = fuse_labels(&branches.c1, &branches.c2, mu).stage("fuse")?;
    let evaluation = match test {
        Some(test) => Some(
            (|| -> Result<Evaluation> {
                Ok(Evaluation {
                    fused: score(test, &labels)?,
                    spatial_features: score(test, &branches.c1.argmax_labels())?,
                    spatial_optimization: score(test, &branches.c2.argmax_labels())?,
                })
            })()
            .stage("metrics")?,
        ),
        None => None,
    };
    let report = evaluation.as_ref().map(format_report).unwrap_or_default();
    Ok(PipelineRun {
        labels,
        branches,
        evaluation,
        report,
    })
}

/// In-memory run on a cube with training (and optionally test) masks.
pub fn run_scene<T: Real>(
    cube: &HsiCube<T>,
    train_map: &LabelMap,
    test: Option<&LabelMap>,
    cfg: &PipelineConfig,
) -> Result<PipelineRun<T>> {
    let branches = compute_branches(cube, train_map, cfg)?;
    finish(branches, test, cfg.mu)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &'static str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::param(key, "path is required"))
}

/// File-driven run: loads the configured inputs, writes the configured
/// outputs and, when requested, every intermediate artifact.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun<f64>> {
    let cube: HsiCube<f64> = load_cube(required(&cfg.input, "input").stage("config")?).stage("load")?;
    let train_map = load_labels(required(&cfg.train, "train").stage("config")?).stage("load")?;
    let test = match &cfg.test {
        Some(p) => Some(load_labels(p).stage("load")?),
        None => None,
    };
    let run = run_scene(&cube, &train_map, test.as_ref(), cfg)?;
    if let Some(dir) = &cfg.artifacts {
        save_artifacts(&run, dir).stage("artifacts")?;
    }
    if let Some(p) = &cfg.output {
        write_labels(&run.labels, p).stage("output")?;
    }
    if let Some(p) = &cfg.report {
        write_file(p, run.report.as_bytes()).stage("report")?;
    }
    if let Some(p) = &cfg.map {
        export_map(&run.labels, p).stage("map")?;
    }
    Ok(run)
}

/// File names used inside an artifact directory.
pub mod artifact {
    pub const NORMALIZED: &str = "normalized.hdr";
    pub const REDUCED: &str = "reduced.hdr";
    pub const SP: &str = "sp.hdr";
    pub const SP_KPCA: &str = "sp_kpca.hdr";
    pub const C1: &str = "c1.hdr";
    pub const C2_PRIOR: &str = "c2_prior.hdr";
    pub const GUIDANCE: &str = "guidance.hdr";
    pub const C2: &str = "c2.hdr";
    pub const SVM_SP: &str = "svm_sp.hdr";
    pub const SVM_REDUCED: &str = "svm_reduced.hdr";
    pub const LABELS: &str = "labels.txt";
    pub const REPORT: &str = "report.txt";
}

pub fn save_artifacts<T: Real>(run: &PipelineRun<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = &run.branches;
    write_cube(&b.normalized, dir.join(artifact::NORMALIZED))?;
    write_cube(&b.reduced, dir.join(artifact::REDUCED))?;
    write_cube(&b.sp, dir.join(artifact::SP))?;
    save_kpca(&b.sp_model, dir.join(artifact::SP_KPCA))?;
    write_cube(&b.c1.to_cube(), dir.join(artifact::C1))?;
    write_cube(&b.c2_prior.to_cube(), dir.join(artifact::C2_PRIOR))?;
    write_cube(&b.guidance, dir.join(artifact::GUIDANCE))?;
    write_cube(&b.c2.to_cube(), dir.join(artifact::C2))?;
    save_classifier(&b.classifier_sp, dir.join(artifact::SVM_SP))?;
    save_classifier(&b.classifier_reduced, dir.join(artifact::SVM_REDUCED))?;
    write_labels(&run.labels, dir.join(artifact::LABELS))?;
    write_file(&dir.join(artifact::REPORT), run.report.as_bytes())
}

/// Colours for classes 1..=20; larger labels wrap around.
pub const PALETTE: [[u8; 3]; 20] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
];

pub fn class_color(label: u32) -> [u8; 3] {
    match label {
        0 => [0, 0, 0],
        l => PALETTE[(l as usize - 1) % PALETTE.len()],
    }
}

/// Binary PPM (P6) rendering of a label map.
pub fn render_ppm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    for &l in labels.labels() {
        out.extend_from_slice(&class_color(l));
    }
    out
}

/// Writes the PPM image and, next to it, the text label map (`.txt`).
pub fn export_map(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &render_ppm(labels))?;
    write_labels(labels, path.with_extension("txt"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub overall: f64,
    pub average: f64,
    pub kappa: f64,
}

/// Numeric keys that may be swept.
pub const SWEEP_AXES: &[&str] = &[
    "bands",
    "components",
    "lambda",
    "window_radius",
    "patch_radius",
    "degree",
    "sigma",
    "h0",
    "max_iters",
    "tol",
    "kpca_anchors",
    "kpca_sigma",
    "folds",
    "beta",
    "gamma",
    "cg_tol",
    "cg_max_iters",
    "mu",
    "seed",
];

/// Reruns the scene once per value of `axis`. A sweep over `mu` reuses the
/// branch outputs, since only the fusion depends on it.
pub fn sweep_scene<T: Real>(
    cube: &HsiCube<T>,
    train_map: &LabelMap,
    test: &LabelMap,
    cfg: &PipelineConfig,
    axis: &str,
    values: &[String],
) -> Result<Vec<SweepRow>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::Unsupported {
            key: "axis".into(),
            value: axis.into(),
        });
    }
    let configs: Vec<PipelineConfig> = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(axis, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let shared = if axis == "mu" {
        Some(compute_branches(cube, train_map, cfg)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(values.len());
    for (value, c) in values.iter().zip(&configs) {
        let run = match &shared {
            Some(b) => finish(b.clone(), Some(test), c.mu)?,
            None => run_scene(cube, train_map, Some(test), c)?,
        };
        let m = &run.evaluation.expect("test map given").fused;
        rows.push(SweepRow {
            value: value.clone(),
            overall: m.overall,
            average: m.average,
            kappa: m.kappa,
        });
    }
    Ok(rows)
}

/// CSV with a header line and four decimals per metric.
pub fn format_sweep(axis: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{axis},OA,AA,Kappa\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.4},{:.4},{:.4}", r.value, r.overall, r.average, r.kappa);
    }
    out
}

/// File-driven sweep using the configured inputs; the test map is required.
pub fn sweep(cfg: &PipelineConfig, axis: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    let cube: HsiCube<f64> = load_cube(required(&cfg.input, "input").stage("config")?).stage("load")?;
    let train_map = load_labels(required(&cfg.train, "train").stage("config")?).stage("load")?;
    let test = load_labels(required(&cfg.test, "test").stage("config")?).stage("load")?;
    sweep_scene(&cube, &train_map, &test, cfg, axis, values)
}
