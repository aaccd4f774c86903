//! Command-line front end.
//!
//! Exit status is 0 on success, 1 when input data fails validation and 2 on
//! a usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cloud::PointCloud;
use crate::ensemble::{hierarchical_ensemble_weighted, mc_decision, LevelDistributions};
use crate::error::{Error, Result};
use crate::hierarchy::{ClassRef, HierLabel, LabelHierarchy};
use crate::io::{
    cloud_stats, read_cloud_auto, read_labels, read_predictions, stream_cloud_stats, write_cloud_auto, write_labels,
    write_predictions, CloudFormat, PredictionFile,
};
use crate::loss::{total_loss, LossWeights, DEFAULT_BETA, DEFAULT_GAMMA};
use crate::report::{evaluate, render_table, wcov_per_class, MetricReport};
use crate::sampling::{sample_batch, SampleMethod, SampleSpec, DEFAULT_BLOCK, DEFAULT_SAMPLE_SIZE, DEFAULT_VOXEL_SIZE};
use crate::synth::{gen_ground_truth, gen_predictions, Geometry, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "hiercloud", version, about = "Hierarchical point-cloud labelling toolkit")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "HIERCLOUD_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a hierarchy file and print its shape.
    Validate { hier: PathBuf },
    /// Draw samples from a cloud.
    Sample(SampleArgs),
    /// Generate a synthetic labelled cloud and matching predictions.
    Synth(SynthArgs),
    /// Decode a prediction file into per-level labels.
    Ensemble(EnsembleArgs),
    /// Score predictions or decoded labels against ground truth.
    Eval(EvalArgs),
    /// Evaluate the training losses of a prediction file.
    Loss(LossArgs),
    /// Print cloud statistics.
    Stats {
        cloud: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    He,
    Mc,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::He => "HE",
            Mode::Mc => "MC",
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub cloud: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: SampleMethod,
    #[arg(long, default_value_t = DEFAULT_VOXEL_SIZE)]
    pub voxel_size: f64,
    /// Block length and width in meters.
    #[arg(long, num_args = 2, value_names = ["L", "W"], default_values_t = [DEFAULT_BLOCK, DEFAULT_BLOCK])]
    pub block: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Index listing, one sample per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each sample's points to `<DIR>/sample_<b>.hcpc`.
    #[arg(long, value_name = "DIR")]
    pub subsets: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<SampleMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    Uniform,
    Clustered,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Hierarchy file; the bundled Campus3D tree if omitted.
    #[arg(long)]
    pub hier: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GeometryArg::Uniform)]
    pub geometry: GeometryArg,
    #[arg(long, default_value_t = 3)]
    pub blobs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub inconsistency: f64,
    #[arg(long, default_value_t = 8.0)]
    pub sharpness: f64,
    /// Ground-truth cloud (`.csv` for text, binary otherwise).
    #[arg(long)]
    pub cloud: PathBuf,
    /// Prediction file.
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    pub pred: PathBuf,
    #[arg(long)]
    pub hier: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::He)]
    pub mode: Mode,
    /// Per-level weights for the path decoder, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub hier: Option<PathBuf>,
    #[arg(long, num_args = 1.., default_values_t = [1.0])]
    pub alpha: Vec<f64>,
    /// Decoders to apply to `--pred`, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Mode::He, Mode::Mc])]
    pub mode: Vec<Mode>,
    /// Cloud carrying predicted instance ids; enables per-class WCov.
    #[arg(long)]
    pub wcov: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub wcov_level: usize,
    /// Write the machine-readable report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the machine-readable report instead of the table.
    #[arg(long)]
    pub machine: bool,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub hier: Option<PathBuf>,
    /// One value for every level, or one per level.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_BETA])]
    pub beta: Vec<f64>,
    /// One value for every edge level, or one per edge level.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_GAMMA])]
    pub gamma: Vec<f64>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let mut buffer = Vec::new();
    let result = pool.install(|| dispatch(cli.command, &mut buffer));
    let _ = out.write_all(&buffer);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(command: Command, out: &mut Vec<u8>) -> Result<()> {
    match command {
        Command::Validate { hier } => validate(&hier, out),
        Command::Sample(a) => sample(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Ensemble(a) => ensemble(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Loss(a) => loss(a, out),
        Command::Stats { cloud } => stats(&cloud, out),
    }
}

fn load_hierarchy(path: Option<&Path>) -> Result<LabelHierarchy> {
    match path {
        Some(p) => LabelHierarchy::parse(&fs::read_to_string(p)?),
        None => Ok(LabelHierarchy::campus3d()),
    }
}

fn ground_truth_labels(h: &LabelHierarchy, pc: &PointCloud) -> Result<Vec<HierLabel>> {
    pc.labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("ground-truth cloud carries no labels".into()))?
        .to_hier_labels(h)
}

fn load_distributions(h: &LabelHierarchy, path: &Path) -> Result<LevelDistributions> {
    let p = read_predictions(path)?;
    p.check_against(h)?;
    p.to_distributions()
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<()> {
    let h = load_hierarchy(Some(path))?;
    writeln!(out, "H={}", h.depth())?;
    for level in 1..=h.depth() {
        write!(out, "level {level}: {} classes", h.width(level))?;
        if let Some(c) = h.ignore_class(level) {
            write!(out, " (ignore: {})", h.name(ClassRef::new(level, c)))?;
        }
        writeln!(out)?;
    }
    writeln!(out, "fully consistent paths: {}", h.fc_paths().len())?;
    Ok(())
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SampleSpec {
        method: a.method,
        voxel_size: a.voxel_size,
        block_length: a.block[0],
        block_width: a.block[1],
        points: a.n,
        seed: a.seed,
    };
    spec.validate()?;
    let pc = read_cloud_auto(&a.cloud)?;
    let samples = sample_batch(&pc, &spec, a.count)?;
    let mut listing = String::new();
    for s in &samples {
        let indices: Vec<String> = s.indices.iter().map(usize::to_string).collect();
        listing.push_str(&indices.join(" "));
        listing.push('\n');
    }
    fs::write(&a.out, listing)?;
    if let Some(dir) = &a.subsets {
        fs::create_dir_all(dir)?;
        for (b, s) in samples.iter().enumerate() {
            write_cloud_auto(&dir.join(format!("sample_{b}.hcpc")), &pc.select(&s.indices))?;
        }
    }
    let padded = samples.iter().filter(|s| s.padded).count();
    writeln!(out, "{} sample(s) by {} from {} points", samples.len(), spec.method, pc.len())?;
    if padded > 0 {
        writeln!(out, "{padded} block(s) held fewer than {} points and were padded", spec.points)?;
    }
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let h = load_hierarchy(a.hier.as_deref())?;
    let spec = SynthSpec {
        points: a.points,
        geometry: match a.geometry {
            GeometryArg::Uniform => Geometry::Uniform,
            GeometryArg::Clustered => Geometry::Clustered { blobs_per_class: a.blobs },
        },
        label_noise: a.label_noise,
        inconsistency: a.inconsistency,
        sharpness: a.sharpness,
        seed: a.seed,
    };
    let pc = gen_ground_truth(&h, &spec)?;
    let labels = ground_truth_labels(&h, &pc)?;
    let d = gen_predictions(&h, &spec, &labels)?;
    write_cloud_auto(&a.cloud, &pc)?;
    write_predictions(&a.pred, &PredictionFile::from_distributions(&d))?;
    writeln!(out, "wrote {} points over {} levels", pc.len(), h.depth())?;
    Ok(())
}

fn decode(h: &LabelHierarchy, d: &LevelDistributions, mode: Mode, weights: Option<&[f64]>) -> Result<Vec<HierLabel>> {
    match mode {
        Mode::He => hierarchical_ensemble_weighted(h, d, weights),
        Mode::Mc => mc_decision(h, d),
    }
}

fn ensemble(a: EnsembleArgs, out: &mut dyn Write) -> Result<()> {
    let h = load_hierarchy(a.hier.as_deref())?;
    let d = load_distributions(&h, &a.pred)?;
    let labels = decode(&h, &d, a.mode, a.weights.as_deref())?;
    write_labels(&a.out, &labels, h.depth())?;
    writeln!(out, "decoded {} points ({})", labels.len(), a.mode.label())?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let h = load_hierarchy(a.hier.as_deref())?;
    let gt_cloud = read_cloud_auto(&a.gt)?;
    let gt = ground_truth_labels(&h, &gt_cloud)?;
    let mut runs: Vec<(String, Vec<HierLabel>)> = Vec::new();
    if let Some(path) = &a.pred {
        let d = load_distributions(&h, path)?;
        for &mode in &a.mode {
            runs.push((mode.label().to_string(), decode(&h, &d, mode, None)?));
        }
    } else if let Some(path) = &a.labels {
        runs.push(("labels".to_string(), read_labels(path)?));
    }
    let pred_ids: Option<Vec<i64>> = match &a.wcov {
        Some(path) => {
            let cloud = read_cloud_auto(path)?;
            let ids = cloud
                .instance
                .ok_or_else(|| Error::InvalidArgument(format!("{} carries no instance ids", path.display())))?;
            Some(ids.into_iter().map(i64::from).collect())
        }
        None => None,
    };
    let gt_ids: Option<Vec<i64>> = match (&pred_ids, &gt_cloud.instance) {
        (None, _) => None,
        (Some(_), Some(ids)) => Some(ids.iter().map(|&i| i64::from(i)).collect()),
        (Some(_), None) => {
            return Err(Error::InvalidArgument("WCov needs instance ids in the ground-truth cloud".into()))
        }
    };

    let mut reports: Vec<MetricReport> = Vec::new();
    for (name, labels) in &runs {
        let mut r = evaluate(&h, name, &gt, labels, &a.alpha)?;
        if let (Some(g), Some(p)) = (&gt_ids, &pred_ids) {
            r.wcov = Some(wcov_per_class(&h, a.wcov_level, &gt, g, labels, p)?);
        }
        reports.push(r);
    }
    let machine: String = reports.iter().map(MetricReport::to_machine).collect();
    if let Some(path) = &a.out {
        fs::write(path, &machine)?;
    }
    if a.machine {
        out.write_all(machine.as_bytes())?;
    } else {
        out.write_all(render_table(&reports.iter().collect::<Vec<_>>())?.as_bytes())?;
    }
    Ok(())
}

fn broadcast(values: &[f64], len: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; len]),
        n if n == len => Ok(values.to_vec()),
        n => Err(Error::InvalidArgument(format!("{n} {what} values; expected 1 or {len}"))),
    }
}

fn loss(a: LossArgs, out: &mut dyn Write) -> Result<()> {
    let h = load_hierarchy(a.hier.as_deref())?;
    let d = load_distributions(&h, &a.pred)?;
    let gt = ground_truth_labels(&h, &read_cloud_auto(&a.gt)?)?;
    let weights = LossWeights {
        beta: broadcast(&a.beta, h.depth(), "beta")?,
        gamma: broadcast(&a.gamma, h.depth() - 1, "gamma")?,
    };
    weights.validate(h.depth()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let v = total_loss(&h, &d, &gt, &weights)?;
    writeln!(out, "total\t{:?}", v.total)?;
    writeln!(out, "prediction\t{:?}", v.prediction)?;
    writeln!(out, "consistency\t{:?}", v.consistency)?;
    for (pos, ce) in v.prediction_levels.iter().enumerate() {
        writeln!(out, "ce_level{}\t{ce:?}", pos + 1)?;
    }
    for (pos, c) in v.consistency_levels.iter().enumerate() {
        writeln!(out, "consistency_edge{}\t{c:?}", pos + 1)?;
    }
    Ok(())
}

fn stats(path: &Path, out: &mut dyn Write) -> Result<()> {
    let s = match CloudFormat::from_path(path) {
        CloudFormat::Binary => stream_cloud_stats(path)?,
        CloudFormat::Csv => cloud_stats(&read_cloud_auto(path)?)?,
    };
    writeln!(out, "points\t{}", s.count)?;
    writeln!(out, "min\t{:?}\t{:?}\t{:?}", s.min[0], s.min[1], s.min[2])?;
    writeln!(out, "max\t{:?}\t{:?}\t{:?}", s.max[0], s.max[1], s.max[2])?;
    writeln!(out, "mean_height\t{:?}", s.mean_height)?;
    writeln!(out, "footprint_area_m2\t{:?}", s.footprint_area)?;
    match s.density {
        Some(d) => writeln!(out, "points_per_m2\t{d:?}")?,
        None => writeln!(out, "points_per_m2\tundefined")?,
    }
    Ok(())
}
