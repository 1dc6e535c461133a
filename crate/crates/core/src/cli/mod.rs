//! The `cardkernel` command-line tool.
//!
//! Pipeline: `synth` → `train` → `gram` → `svm-train` → `predict`, plus
//! `oracle-check` and `bench`. Every command writes a [`RunManifest`] to
//! `--manifest`, else next to its main output as `<out>.manifest.json`, else
//! to stderr. Exit status is 0 on success, 1 on verification or runtime
//! failure and 2 on usage errors.

pub mod artifacts;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use artifacts::{gram_fingerprint, ModelFile, RunManifest, MODEL_FORMAT};
use artifacts::{read_json, write_json};

use crate::data::{self, BagDataset, Standardization, SynthConfig};
use crate::error::{Error, Result};
use crate::inference::BagInference;
use crate::kernel::{self, GramMatrix, InstanceKernel, KernelConfig, LabelKernel};
use crate::metrics::{accuracy, average_precision};
use crate::model::{BagLabel, CardinalitySpec, InstanceModel};
use crate::svm::{self, BagClassifier, SvmModel, DEFAULT_C_GRID, DEFAULT_TOL, SVM_FORMAT};
use crate::training::{self, Norm, TrainConfig};
use crate::verify::{self, GradientConfig, OracleConfig};

#[derive(Debug, Parser)]
#[command(name = "cardkernel", version, about = "Cardinality models and cardinality kernels for multi-instance learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bag dataset.
    Synth(SynthArgs),
    /// Fit a cardinality model on labeled bags.
    Train(TrainArgs),
    /// Compute the normalized cardinality-kernel Gram matrix of a dataset.
    Gram(GramArgs),
    /// Train an SVM on a Gram matrix.
    SvmTrain(SvmTrainArgs),
    /// Score bags with a trained SVM.
    Predict(PredictArgs),
    /// Check inference against enumeration and gradients against finite differences.
    OracleCheck(OracleArgs),
    /// Time inference and kernel evaluation across bag sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub npos: usize,
    #[arg(long, default_value_t = 50)]
    pub nneg: usize,
    #[arg(long, default_value_t = 5)]
    pub m_min: usize,
    #[arg(long, default_value_t = 15)]
    pub m_max: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub witness_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.0)]
    pub clutter_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CardinalityKind {
    Normal,
    Ratio,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, value_enum, default_value_t = CardinalityKind::Ratio)]
    pub cardinality: CardinalityKind,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda: f64,
    /// Comma-separated lambdas chosen by validation accuracy; overrides `--lambda`.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    pub norm: NormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long)]
    pub bias: bool,
    /// Skip per-feature standardization (needed for histogram features).
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKernelArg {
    Linear,
    Rbf,
    Hik,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKernelArg {
    Positive,
    Identity,
}

#[derive(Debug, Args, Serialize)]
pub struct GramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = InstanceKernelArg::Rbf)]
    pub instance_kernel: InstanceKernelArg,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = LabelKernelArg::Positive)]
    pub label_kernel: LabelKernelArg,
    /// Force every marginal to 1 (normalized MI-Kernel baseline).
    #[arg(long)]
    pub mi_kernel_mode: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SvmTrainArgs {
    #[arg(long)]
    pub gram: PathBuf,
    /// Dataset the Gram matrix was built from (labels, ids).
    #[arg(long)]
    pub data: PathBuf,
    /// Cardinality model the Gram matrix was built with.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated C grid searched by validation accuracy.
    #[arg(long = "c-grid", value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    /// Fixed C; skips the search.
    #[arg(long = "c")]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    /// k-fold search instead of a single validation split.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training dataset holding the support bags.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub svm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 12)]
    pub max_m: usize,
    #[arg(long, default_value_t = 8)]
    pub max_d: usize,
    #[arg(long, default_value_t = 100)]
    pub gradient_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [512, 1024, 2048, 4096])]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    /// Kernel pairs timed per bag size; 0 skips kernel timing.
    #[arg(long, default_value_t = 2)]
    pub pairs: usize,
    /// Repetitions per measurement; the minimum is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(&a).map(|_| 0),
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Gram(a) => cmd_gram(&a).map(|_| 0),
        Command::SvmTrain(a) => cmd_svm_train(&a).map(|_| 0),
        Command::Predict(a) => cmd_predict(&a).map(|_| 0),
        Command::OracleCheck(a) => cmd_oracle_check(&a),
        Command::Bench(a) => cmd_bench(&a).map(|_| 0),
    }
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn emit_manifest(manifest: &RunManifest, explicit: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let target = explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match target {
        Some(p) => write_json(&p, manifest),
        None => {
            eprintln!("{}", serde_json::to_string_pretty(manifest)?);
            Ok(())
        }
    }
}

fn path_key(p: &Path) -> String {
    p.display().to_string()
}

fn apply_standardization(ds: &BagDataset, t: Option<&Standardization>) -> Result<BagDataset> {
    match t {
        Some(t) => t.apply(ds),
        None => Ok(ds.clone()),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_pos: a.npos,
        n_neg: a.nneg,
        m_min: a.m_min,
        m_max: a.m_max,
        dim: a.dim,
        witness_rate: a.witness_rate,
        separation: a.separation,
        clutter_rate: a.clutter_rate,
        seed: a.seed,
    };
    let generated = data::generate(&cfg)?;
    data::save(&generated.dataset, &a.out)?;
    let mut manifest = RunManifest::new("synth", snapshot(a), Some(a.seed));
    manifest.outputs.push(path_key(&a.out));
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), Some(&a.out))
}

fn spec_from_args(a: &TrainArgs) -> Result<CardinalitySpec> {
    match a.cardinality {
        CardinalityKind::Normal => CardinalitySpec::normal(a.mu, a.sigma),
        CardinalityKind::Ratio => CardinalitySpec::ratio(a.rho),
        CardinalityKind::Uniform => Ok(CardinalitySpec::Uniform),
    }
}

/// Fits with every lambda on a seeded split and returns `(lambda, accuracy)` pairs.
pub fn search_lambda(
    ds: &BagDataset,
    spec: &CardinalitySpec,
    base: &TrainConfig,
    grid: &[f64],
    val_fraction: f64,
) -> Result<Vec<(f64, f64)>> {
    let (train_idx, val_idx) = svm::validation_split(ds.len(), val_fraction, base.seed)?;
    let train = ds.subset(&train_idx)?;
    let val = ds.subset(&val_idx)?;
    grid.iter()
        .map(|&lambda| {
            let cfg = TrainConfig { lambda, ..base.clone() };
            let (model, _) = training::fit(&train.bags, spec, &cfg)?;
            Ok((lambda, training::posterior_accuracy(&val.bags, &model, spec)?))
        })
        .collect()
}

fn best_by_score(scores: &[(f64, f64)]) -> f64 {
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    best.0
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let spec = spec_from_args(a)?;
    let raw = data::load(&a.train)?;
    raw.require_labels()?;
    let standardization = if a.no_standardize {
        None
    } else {
        Some(Standardization::fit(&raw.bags)?)
    };
    let ds = apply_standardization(&raw, standardization.as_ref())?;
    let mut cfg = TrainConfig {
        lambda: a.lambda,
        norm: match a.norm {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        },
        max_iters: a.max_iters,
        grad_tol: a.grad_tol,
        seed: a.seed,
        restarts: a.restarts,
        include_bias: a.bias,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let mut lambda_scores = Vec::new();
    if let Some(grid) = &a.lambda_grid {
        if grid.is_empty() {
            return Err(Error::invalid("lambda grid is empty"));
        }
        lambda_scores = search_lambda(&ds, &spec, &cfg, grid, a.val_fraction)?;
        cfg.lambda = best_by_score(&lambda_scores);
    }
    let (model, report) = training::fit(&ds.bags, &spec, &cfg)?;
    let train_accuracy = training::posterior_accuracy(&ds.bags, &model, &spec)?;
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        spec,
        model,
        standardization,
        train_config: cfg,
        report,
        lambda_scores,
        data_fingerprint: raw.fingerprint(),
        fingerprint: String::new(),
    }
    .seal()?;
    write_json(&a.out, &file)?;
    if !file.report.converged {
        eprintln!(
            "warning: training did not converge: {}",
            file.report.diagnostic.as_deref().unwrap_or("unknown reason")
        );
    }
    eprintln!(
        "trained: objective {:.6} after {} iterations, train posterior accuracy {:.4}",
        file.report.final_objective, file.report.iterations, train_accuracy
    );
    let mut manifest = RunManifest::new("train", snapshot(a), Some(a.seed));
    manifest.inputs.insert(path_key(&a.train), file.data_fingerprint.clone());
    manifest.outputs.push(path_key(&a.out));
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), Some(&a.out))
}

fn kernel_config(a: &GramArgs) -> Result<KernelConfig> {
    let instance = match a.instance_kernel {
        InstanceKernelArg::Linear => InstanceKernel::Linear,
        InstanceKernelArg::Rbf => InstanceKernel::Rbf { gamma: a.gamma },
        InstanceKernelArg::Hik => InstanceKernel::HistogramIntersection,
    };
    instance.validate()?;
    let label = match a.label_kernel {
        LabelKernelArg::Positive => LabelKernel::PositiveOnly,
        LabelKernelArg::Identity => LabelKernel::Identity,
    };
    Ok(if a.mi_kernel_mode {
        KernelConfig::mi(instance)
    } else {
        KernelConfig::new(instance, label)
    })
}

fn load_gram(path: &Path) -> Result<GramMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    GramMatrix::read_from(BufReader::new(file), &path_key(path))
}

pub fn cmd_gram(a: &GramArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = kernel_config(a)?;
    let model = ModelFile::load(&a.model)?;
    let raw = data::load(&a.data)?;
    let ds = apply_standardization(&raw, model.standardization.as_ref())?;
    let data_fp = raw.fingerprint();
    let fp = gram_fingerprint(&data_fp, &model.fingerprint, &cfg);
    let gram = kernel::gram(&ds.bags, &model.model, &model.spec, &cfg, fp)?;
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = BufWriter::new(file);
    gram.write_to(&mut w).map_err(|e| Error::io(&a.out, e))?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let mut manifest = RunManifest::new("gram", snapshot(a), None);
    manifest.inputs.insert(path_key(&a.data), data_fp);
    manifest.inputs.insert(path_key(&a.model), model.fingerprint.clone());
    manifest.outputs.push(path_key(&a.out));
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), Some(&a.out))
}

pub fn cmd_svm_train(a: &SvmTrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut gram = load_gram(&a.gram)?;
    let raw = data::load(&a.data)?;
    let model = ModelFile::load(&a.model)?;
    let data_fp = raw.fingerprint();
    let expected = gram_fingerprint(&data_fp, &model.fingerprint, &gram.config);
    if gram.fingerprint != expected {
        return Err(Error::Mismatch(format!(
            "gram {} was not built from {} with {}",
            a.gram.display(),
            a.data.display(),
            a.model.display()
        )));
    }
    if gram.size() != raw.len() {
        return Err(Error::Mismatch(format!("gram has {} rows but the dataset has {} bags", gram.size(), raw.len())));
    }
    let labels = raw.require_labels()?;
    gram.bag_ids = raw.bags.iter().map(|b| b.id.clone()).collect();

    let (c, c_scores) = match a.c {
        Some(c) => (c, Vec::new()),
        None => {
            let grid = a.c_grid.clone().unwrap_or_else(|| DEFAULT_C_GRID.to_vec());
            let splits = match a.folds {
                Some(k) => svm::k_folds(raw.len(), k, a.seed)?,
                None => vec![svm::validation_split(raw.len(), a.val_fraction, a.seed)?],
            };
            svm::select_c(&gram.to_rows(), &labels, &grid, &splits, a.tol)?
        }
    };
    let trained = svm::solve_dual(&gram, &labels, c, a.tol)?;
    write_json(&a.out, &trained)?;
    if !trained.converged {
        eprintln!("warning: SMO stopped at the iteration cap, KKT violation {:.3e}", trained.kkt_violation);
    }
    let mut manifest = RunManifest::new("svm-train", snapshot(a), Some(a.seed));
    manifest.config["selected_c"] = serde_json::json!(c);
    manifest.config["c_scores"] = serde_json::json!(c_scores);
    manifest.inputs.insert(path_key(&a.gram), gram.fingerprint.clone());
    manifest.inputs.insert(path_key(&a.data), data_fp);
    manifest.inputs.insert(path_key(&a.model), model.fingerprint.clone());
    manifest.outputs.push(path_key(&a.out));
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), Some(&a.out))
}

/// Score lines `id score predicted_label` sorted by id, then accuracy and AP
/// comments when every bag is labeled.
pub fn format_scores(ids: &[String], scores: &[f64], truth: Option<&[BagLabel]>) -> String {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut out = String::new();
    for &i in &order {
        out.push_str(&format!("{} {:.17e} {}\n", ids[i], scores[i], BagLabel::from_score(scores[i])));
    }
    if let Some(truth) = truth {
        let predicted: Vec<BagLabel> = scores.iter().map(|&s| BagLabel::from_score(s)).collect();
        out.push_str(&format!("# accuracy {:.6}\n", accuracy(&predicted, truth)));
        if let Some(ap) = average_precision(scores, truth) {
            out.push_str(&format!("# average_precision {ap:.6}\n"));
        }
    }
    out
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let start = Instant::now();
    let model = ModelFile::load(&a.model)?;
    let svm_model: SvmModel = read_json(&a.svm)?;
    if svm_model.format != SVM_FORMAT {
        return Err(Error::Mismatch(format!(
            "{}: unsupported svm format `{}` (expected `{SVM_FORMAT}`)",
            a.svm.display(),
            svm_model.format
        )));
    }
    let raw_train = data::load(&a.train)?;
    let train_fp = raw_train.fingerprint();
    if gram_fingerprint(&train_fp, &model.fingerprint, &svm_model.kernel) != svm_model.gram_fingerprint {
        return Err(Error::Mismatch(format!(
            "svm {} was not trained on {} with {}",
            a.svm.display(),
            a.train.display(),
            a.model.display()
        )));
    }
    let raw_test = data::load(&a.data)?;
    if raw_test.dim != raw_train.dim {
        return Err(Error::DimensionMismatch {
            expected: raw_train.dim,
            found: raw_test.dim,
        });
    }
    let train = apply_standardization(&raw_train, model.standardization.as_ref())?;
    let test = apply_standardization(&raw_test, model.standardization.as_ref())?;
    let classifier = BagClassifier::new(&svm_model, &train.bags, &model.model, &model.spec)?;
    let scores = test.bags.iter().map(|b| classifier.decision(b)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = test.bags.iter().map(|b| b.id.clone()).collect();
    let truth = test.labels();
    let text = format_scores(&ids, &scores, truth.as_deref());
    std::fs::write(&a.out, &text).map_err(|e| Error::io(&a.out, e))?;
    for line in text.lines().filter(|l| l.starts_with('#')) {
        eprintln!("{line}");
    }
    let mut manifest = RunManifest::new("predict", snapshot(a), None);
    manifest.inputs.insert(path_key(&a.data), raw_test.fingerprint());
    manifest.inputs.insert(path_key(&a.train), train_fp);
    manifest.inputs.insert(path_key(&a.model), model.fingerprint.clone());
    manifest.outputs.push(path_key(&a.out));
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), Some(&a.out))
}

pub fn cmd_oracle_check(a: &OracleArgs) -> Result<i32> {
    let start = Instant::now();
    let oracle = verify::oracle_suite(&OracleConfig {
        trials: a.trials,
        max_m: a.max_m,
        max_d: a.max_d,
        seed: a.seed,
        inject_fault: a.inject_fault,
    })?;
    let oracle_secs = start.elapsed().as_secs_f64();
    let gradient = verify::gradient_suite(&GradientConfig {
        trials: a.gradient_trials,
        seed: a.seed,
        ..GradientConfig::default()
    })?;
    println!("oracle trials {}", oracle.trials);
    println!("oracle log_partition worst_rel_error {:.3e}", oracle.log_partition);
    println!("oracle posterior worst_rel_error {:.3e}", oracle.posterior);
    println!("oracle conditional_marginals worst_rel_error {:.3e}", oracle.conditional_marginals);
    println!("oracle marginals worst_rel_error {:.3e}", oracle.marginals);
    println!("oracle map_score worst_rel_error {:.3e}", oracle.map_score);
    println!(
        "oracle {} worst_rel_error {:.3e} tolerance {:.0e}",
        if oracle.passed() { "PASS" } else { "FAIL" },
        oracle.worst(),
        verify::ORACLE_TOLERANCE
    );
    println!("gradient trials {} l1_skipped_coordinates {}", gradient.trials, gradient.l1_skipped);
    println!("gradient l2 worst_rel_error {:.3e}", gradient.l2);
    println!("gradient l1 worst_rel_error {:.3e}", gradient.l1);
    println!(
        "gradient {} worst_rel_error {:.3e} tolerance {:.0e}",
        if gradient.passed() { "PASS" } else { "FAIL" },
        gradient.worst(),
        verify::GRADIENT_TOLERANCE
    );
    let mut manifest = RunManifest::new("oracle-check", snapshot(a), Some(a.seed));
    manifest.config["oracle_report"] = serde_json::to_value(&oracle)?;
    manifest.config["gradient_report"] = serde_json::to_value(&gradient)?;
    manifest.timings.insert("oracle".into(), oracle_secs);
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), None)?;
    Ok(if oracle.passed() && gradient.passed() { 0 } else { 1 })
}

/// Minimum wall-clock time over `repeats` runs of `f`.
fn time_min(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Seconds for the tree build plus unconditional marginals of one bag of size `m`.
pub fn time_inference(m: usize, d: usize, repeats: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bag = verify::random_bag(&mut rng, format!("m{m}"), m, d, None)?;
    let model = InstanceModel::new(vec![1.0 / (d as f64).sqrt(); d], false)?;
    let spec = CardinalitySpec::ratio(0.5)?;
    time_min(repeats, || {
        let inf = BagInference::new(&bag, &model)?;
        let marg = inf.instance_marginals(&spec)?;
        if marg.per_instance.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("non-finite marginal at m = {m}")));
        }
        Ok(())
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let start = Instant::now();
    if a.d == 0 || a.m.iter().any(|&m| m == 0) {
        return Err(Error::invalid("bench sizes must be >= 1"));
    }
    let mut csv = String::from("op,m,d,seconds\n");
    let model = InstanceModel::new(vec![1.0 / (a.d as f64).sqrt(); a.d], false)?;
    let spec = CardinalitySpec::ratio(0.5)?;
    let cfg = KernelConfig::new(InstanceKernel::Rbf { gamma: 0.1 }, LabelKernel::PositiveOnly);
    for &m in &a.m {
        let secs = time_inference(m, a.d, a.repeats, a.seed)?;
        csv.push_str(&format!("inference,{m},{},{secs:.9}\n", a.d));
        if a.pairs > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(m as u64));
            let bags = (0..2 * a.pairs)
                .map(|i| verify::random_bag(&mut rng, format!("k{i}"), m, a.d, None))
                .collect::<Result<Vec<_>>>()?;
            let prepared = kernel::prepare_bags(&bags, &model, &spec, &cfg)?;
            let secs = time_min(a.repeats, || {
                for pair in prepared.chunks(2) {
                    kernel::prepared_kernel(&pair[0], &pair[1], &cfg)?;
                }
                Ok(())
            })? / a.pairs as f64;
            csv.push_str(&format!("kernel_pair,{m},{},{secs:.9}\n", a.d));
        }
    }
    match &a.out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None => print!("{csv}"),
    }
    let mut manifest = RunManifest::new("bench", snapshot(a), Some(a.seed));
    if let Some(p) = &a.out {
        manifest.outputs.push(path_key(p));
    }
    manifest.timings.insert("total".into(), start.elapsed().as_secs_f64());
    emit_manifest(&manifest, a.manifest.as_deref(), a.out.as_deref())
}
