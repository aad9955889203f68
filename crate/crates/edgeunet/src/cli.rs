//! The `edgeunet` command line. Every subcommand prints a JSON document on
//! stdout, except `params` which prints a table unless `--json` is given.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use edgeunet_core::bench::{self, FloatExecutor, QuantExecutor, TimingReport};
use edgeunet_core::engine::{fit_head, predict_mask, run_float, run_quant};
use edgeunet_core::metrics::{cdr, classify_cdr, dice, istn_check, rim_profile, CdrClass, Laterality, RimProfile};
use edgeunet_core::planner::{plan, DeployInputs};
use edgeunet_core::quant::{calibrate, quantize_weights};
use edgeunet_core::unet::{preset, PRESETS};
use edgeunet_core::{build_graph, count_params, generate_random_weights, Graph, ModelSpec, Tensor};

use crate::clock::MonotonicClock;
use crate::dataset::{load_images, read_json, write_json, write_synth, SynthConfig};
use crate::uew::{read_weights, write_weights, WeightFile};
use crate::{pnm, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "edgeunet", version, about = "Generalized U-Net inference, int8 quantization and deployment planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fundus-like dataset with exact masks
    Synth(SynthArgs),
    /// Write a random-weight model
    Init(InitArgs),
    /// Calibrate on a directory of images and write an int8 model
    Quantize(QuantizeArgs),
    /// Segment one image
    Infer(InferArgs),
    /// Time whole-dataset prediction
    Bench(BenchArgs),
    /// Tabulate timing reports with speed-ups against a baseline
    Compare(CompareArgs),
    /// Edge-versus-cloud break-even analysis
    Plan(PlanArgs),
    /// Dice, cup-to-disc ratio and rim profile of a cup/disc mask pair
    Metrics(MetricsArgs),
    /// Per-layer trainable parameter counts
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of source samples
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total number of items after augmentation
    #[arg(long)]
    pub augment_to: Option<usize>,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    /// Image side in pixels (multiple of 32)
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Standard deviation of the texture noise
    #[arg(long, default_value_t = 0.03)]
    pub noise: f32,
    /// Dataset name recorded in the manifest
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Model spec such as 6/64/Y/1.1, or a preset name
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub seed: u64,
    /// Output UEW file
    #[arg(long)]
    pub out: PathBuf,
    /// Make the head non-negative and place its threshold on these images
    #[arg(long, value_name = "DIR")]
    pub fit_head: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float UEW file
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory of calibration images
    #[arg(long, value_name = "DIR")]
    pub calib: PathBuf,
    /// Output UEW file
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many calibration images
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// UEW file (float, or int8 with --quant)
    #[arg(long)]
    pub weights: PathBuf,
    /// Input P6 image
    #[arg(long)]
    pub image: PathBuf,
    /// Output P5 mask
    #[arg(long)]
    pub out_mask: PathBuf,
    /// Run the int8 path
    #[arg(long)]
    pub quant: bool,
    /// Probability above which a pixel is foreground
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// UEW file (float, or int8 with --quant)
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory of images
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Timed passes after the warm-up pass
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Run the int8 path
    #[arg(long)]
    pub quant: bool,
    /// Dataset name in the report (default: directory name)
    #[arg(long)]
    pub name: Option<String>,
    /// Also write the report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use at most this many images
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Timing report files
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Baseline label `dataset/backend` (default: first report)
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Network data transmission time for the dataset, ms
    #[arg(long)]
    pub ndtt: f64,
    /// Edge per-image prediction time, ms
    #[arg(long, required_unless_present = "edge_report", conflicts_with = "edge_report")]
    pub etpt: Option<f64>,
    /// Cloud per-image prediction time, ms
    #[arg(long, required_unless_present = "cloud_report", conflicts_with = "cloud_report")]
    pub ctpt: Option<f64>,
    /// Timing report supplying the edge per-image time
    #[arg(long)]
    pub edge_report: Option<PathBuf>,
    /// Timing report supplying the cloud per-image time
    #[arg(long)]
    pub cloud_report: Option<PathBuf>,
    /// Dataset sizes to recommend a target for
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
    pub n: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Cup P5 mask
    #[arg(long)]
    pub cup: PathBuf,
    /// Disc P5 mask
    #[arg(long)]
    pub disc: PathBuf,
    /// Eye: left or right
    #[arg(long)]
    pub laterality: String,
    /// Reference cup mask for Dice
    #[arg(long)]
    pub ref_cup: Option<PathBuf>,
    /// Reference disc mask for Dice
    #[arg(long)]
    pub ref_disc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Model spec such as 6/40/Y/1.1, or a preset name
    #[arg(long)]
    pub spec: String,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

fn parse_spec(s: &str) -> Result<ModelSpec> {
    if PRESETS.contains(&s) {
        return Ok(preset(s)?);
    }
    Ok(s.parse()?)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn graph_for(spec: &ModelSpec, image: &Tensor) -> Result<Graph> {
    Ok(build_graph(&spec.with_input_size(image.height(), image.width(), image.channels())?)?)
}

fn load_kind(path: &Path, quant: bool) -> Result<WeightFile> {
    let wf = read_weights(path)?;
    match (quant, wf.is_quantized()) {
        (true, false) => Err(Error::Data { path: path.into(), msg: "float weights given to --quant".into() }),
        (false, true) => Err(Error::Data { path: path.into(), msg: "int8 weights need --quant".into() }),
        _ => Ok(wf),
    }
}

fn split_batch(batch: &Tensor) -> Result<Vec<Tensor>> {
    (0..batch.batch()).map(|b| Ok(batch.batch_item(b)?)).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Init(a) => init(a),
        Command::Quantize(a) => quantize(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Params(a) => params(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        name: a.name,
        count: a.count,
        seed: a.seed,
        augment_to: a.augment_to,
        train_fraction: a.train_fraction,
        size: a.size,
        noise: a.noise,
    };
    let m = write_synth(&a.out, &cfg)?;
    print_json(&serde_json::json!({
        "name": m.name,
        "source_count": m.source_count,
        "augmented_count": m.augmented_count,
        "train_count": m.train_count,
        "test_count": m.test_count,
        "manifest": a.out.join(crate::dataset::MANIFEST),
    }))
}

fn init(a: InitArgs) -> Result<()> {
    let spec = parse_spec(&a.spec)?;
    let mut graph = build_graph(&spec)?;
    let mut w = generate_random_weights(&graph, a.seed);
    let mut head_shift = None;
    if let Some(dir) = &a.fit_head {
        let (_, images) = load_images(dir, None)?;
        graph = graph_for(&spec, &images)?;
        head_shift = Some(fit_head(&graph, &mut w, &split_batch(&images)?)?);
    }
    write_weights(&a.out, &WeightFile::Float(w.clone()))?;
    print_json(&serde_json::json!({
        "spec": spec.to_string(),
        "seed": a.seed,
        "trainable_params": w.trainable_scalar_count(),
        "stored_scalars": w.scalar_count(),
        "head_bias_shift": head_shift,
        "out": a.out,
    }))
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let WeightFile::Float(w) = load_kind(&a.weights, false)? else { unreachable!() };
    let spec: ModelSpec = w.spec.parse()?;
    let (paths, images) = load_images(&a.calib, a.limit)?;
    let graph = graph_for(&spec, &images)?;
    w.validate(&graph)?;
    let acts = calibrate(&graph, &w, &split_batch(&images)?)?;
    let mut q = quantize_weights(&graph, &w, &acts)?;
    q.validate(&graph)?;
    let mut crc = crc32fast::Hasher::new();
    for p in &paths {
        crc.update(&std::fs::read(p).map_err(|e| Error::io(p, e))?);
    }
    let calib_id = format!("{} images from {} (crc32 {:08x})", paths.len(), a.calib.display(), crc.finalize());
    q.note = format!("{}; int8 calibrated on {calib_id}", q.note);
    write_weights(&a.out, &WeightFile::Quant(q.clone()))?;
    print_json(&serde_json::json!({
        "spec": spec.to_string(),
        "calibration_images": paths.len(),
        "calibration_set": calib_id,
        "layers": q.layers.len(),
        "activations": q.activations.len(),
        "out": a.out,
    }))
}

fn infer(a: InferArgs) -> Result<()> {
    let wf = load_kind(&a.weights, a.quant)?;
    let image = pnm::read_image(&a.image)?;
    let graph = graph_for(&wf.model_spec()?, &image)?;
    let prob = match &wf {
        WeightFile::Float(w) => {
            w.validate(&graph)?;
            run_float(&graph, w, &image)?
        }
        WeightFile::Quant(q) => {
            q.validate(&graph)?;
            run_quant(&graph, q, &image)?
        }
    };
    let mask = predict_mask(&prob, a.threshold)?;
    pnm::write_mask(&a.out_mask, &mask)?;
    print_json(&serde_json::json!({
        "backend": if a.quant { "quant" } else { "float" },
        "image": a.image,
        "threshold": a.threshold,
        "foreground_pixels": mask.count(),
        "out_mask": a.out_mask,
    }))
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let wf = load_kind(&a.weights, a.quant)?;
    let (_, images) = load_images(&a.dataset, a.limit)?;
    let graph = graph_for(&wf.model_spec()?, &images)?;
    let name = a.name.unwrap_or_else(|| {
        let p = a.dataset.canonicalize().unwrap_or(a.dataset.clone());
        p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
    });
    let clock = MonotonicClock::new();
    let report = match &wf {
        WeightFile::Float(w) => {
            w.validate(&graph)?;
            bench::time_dataset(&mut FloatExecutor { graph: &graph, weights: w }, &name, &images, a.reps, &clock)?
        }
        WeightFile::Quant(q) => {
            q.validate(&graph)?;
            bench::time_dataset(&mut QuantExecutor { graph: &graph, weights: q }, &name, &images, a.reps, &clock)?
        }
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn compare(a: CompareArgs) -> Result<()> {
    let reports = a.reports.iter().map(|p| read_json(p)).collect::<Result<Vec<TimingReport>>>()?;
    let rows = bench::compare(&reports, a.baseline.as_deref())?;
    print_json(&serde_json::json!({ "rows": rows, "table": bench::render_table(&rows) }))
}

fn report_time(path: &Path) -> Result<f64> {
    Ok(read_json::<TimingReport>(path)?.per_image_mean)
}

fn plan_cmd(a: PlanArgs) -> Result<()> {
    let etpt = match (&a.edge_report, a.etpt) {
        (Some(p), _) => report_time(p)?,
        (None, Some(v)) => v,
        (None, None) => return Err(Error::Usage("need --etpt or --edge-report".into())),
    };
    let ctpt = match (&a.cloud_report, a.ctpt) {
        (Some(p), _) => report_time(p)?,
        (None, Some(v)) => v,
        (None, None) => return Err(Error::Usage("need --ctpt or --cloud-report".into())),
    };
    let d = DeployInputs::new(a.ndtt, etpt, ctpt)?;
    print_json(&plan(&d, &a.n)?)
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    laterality: Laterality,
    cdr: f64,
    cdr_class: CdrClass,
    rim: RimProfile,
    istn: bool,
    dice_cup: Option<f64>,
    dice_disc: Option<f64>,
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let laterality: Laterality = a.laterality.parse()?;
    let cup = pnm::read_mask(&a.cup)?;
    let disc = pnm::read_mask(&a.disc)?;
    let ratio = cdr(&cup, &disc)?;
    let rim = rim_profile(&cup, &disc, laterality)?;
    let dice_with = |reference: &Option<PathBuf>, m| -> Result<Option<f64>> {
        reference.as_ref().map(|p| Ok(dice(m, &pnm::read_mask(p)?)?)).transpose()
    };
    print_json(&MetricsReport {
        laterality,
        cdr: ratio,
        cdr_class: classify_cdr(ratio),
        rim,
        istn: istn_check(&rim),
        dice_cup: dice_with(&a.ref_cup, &cup)?,
        dice_disc: dice_with(&a.ref_disc, &disc)?,
    })
}

fn params(a: ParamsArgs) -> Result<()> {
    let spec = parse_spec(&a.spec)?;
    let count = count_params(&spec)?;
    if a.json {
        return print_json(&serde_json::json!({ "spec": spec.to_string(), "count": count }));
    }
    let graph = build_graph(&spec)?;
    println!("spec {spec}");
    println!("{:<16} {:>12}", "layer", "params");
    for node in &graph.nodes {
        if let Some(layer) = node.op.layer() {
            println!("{:<16} {:>12}", layer, count.per_layer[layer]);
        }
    }
    println!("{:<16} {:>12}", "total", count.total);
    println!("{:<16} {:>12.2}", "MTP", count.mtp);
    Ok(())
}
