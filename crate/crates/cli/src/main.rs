//! `mandala`: statistical distance matrices from CIFAR-10 class pairs.
//!
//! Each stage reads and writes files, so the expensive covariance estimate
//! runs once per class and later stages can be repeated on their own.
//!
//! Exit codes: 0 success, 2 verification failure, 3 input or runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mandala::accumulation;
use mandala::cifar::{self, GrayMode};
use mandala::clustering::{self, SymmetrizeMode};
use mandala::distance::{self, DistanceKind, Variant};
use mandala::estimation::{self, DEFAULT_RIDGE};
use mandala::pipeline::{self, PipelineConfig};
use mandala::verify::{self, Level};
use mandala::{io, Error};

const DATA_ENV: &str = "CIFAR10_DIR";

#[derive(Parser)]
#[command(name = "mandala", version, about = "Statistical distance matrices, accumulation images and complete-linkage label maps")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Gaussian population of one CIFAR-10 class.
    Estimate(EstimateArgs),
    /// Build the distance matrix between two saved populations.
    Distmat(DistmatArgs),
    /// Accumulate a distance matrix into an image.
    Accumulate(AccumulateArgs),
    /// Cluster a distance matrix and write label images.
    Cluster(ClusterArgs),
    /// Render a saved accumulation image as a colour heatmap.
    Render(RenderArgs),
    /// Run every stage for one class pair.
    Pipeline(PipelineArgs),
    /// Run the self-check suite.
    Verify(VerifyArgs),
    /// Print the expected dataset layout and check a data directory.
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long, env = DATA_ENV)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = GrayMode::Luma)]
    gray: GrayMode,
    /// Include the test batch.
    #[arg(long)]
    all_batches: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    class: u8,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    /// Output stem; writes `<out>.json`, `<out>.mean.f64`, `<out>.cov.f64`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistmatArgs {
    /// Population header of the first class.
    #[arg(long)]
    p: PathBuf,
    /// Population header of the second class.
    #[arg(long)]
    q: PathBuf,
    #[arg(long, default_value_t = DistanceKind::Bhattacharyya)]
    kind: DistanceKind,
    #[arg(long, default_value_t = 0.3)]
    s: f64,
    #[arg(long, default_value_t = Variant::Corrected)]
    variant: Variant,
    /// Require equal covariances for Mahalanobis instead of pooling them.
    #[arg(long)]
    no_pool: bool,
    /// Output stem; writes `<out>.json` and `<out>.f64`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AccumulateArgs {
    /// Distance matrix header.
    #[arg(long)]
    distance: PathBuf,
    /// Output stem; writes `<out>.json`, `<out>.f64`, `<out>.pgm`, `<out>.ppm`.
    #[arg(long)]
    out: PathBuf,
    /// Side of the central window for the concentration ratio.
    #[arg(long, default_value_t = 16)]
    window: usize,
}

#[derive(Args)]
struct ClusterArgs {
    /// Distance matrix header.
    #[arg(long)]
    distance: PathBuf,
    /// Accumulation sidecar used to rank the clusters.
    #[arg(long)]
    accumulation: PathBuf,
    /// Cluster counts to cut at.
    #[arg(long = "k", value_delimiter = ',', default_value = "3,10")]
    counts: Vec<usize>,
    /// Also cut at this merge distance.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = SymmetrizeMode::Mean)]
    symmetrize: SymmetrizeMode,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Accumulation sidecar.
    #[arg(long)]
    accumulation: PathBuf,
    /// Output `.ppm`; a `.pgm` is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Pixel replication factor.
    #[arg(long, default_value_t = 8)]
    scale: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = DATA_ENV)]
    data_dir: Option<PathBuf>,
    /// Two class ids, e.g. `3,5`.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    kind: Option<DistanceKind>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    symmetrize: Option<SymmetrizeMode>,
    #[arg(long = "k", value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    gray: Option<GrayMode>,
    #[arg(long)]
    no_pool: bool,
    #[arg(long)]
    all_batches: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "fast")]
    level: Level,
    #[arg(long, default_value_t = 20240601)]
    seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, env = DATA_ENV)]
    data_dir: Option<PathBuf>,
    /// Write a synthetic stand-in dataset in the same format to this directory.
    #[arg(long)]
    write_synthetic: Option<PathBuf>,
    /// Images per class per training batch for the synthetic dataset.
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

enum Failure {
    Verification,
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let outcome = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Distmat(a) => distmat(a),
        Command::Accumulate(a) => accumulate(a),
        Command::Cluster(a) => cluster(a),
        Command::Render(a) => render(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Verify(a) => run_verify(a),
        Command::Dataset(a) => dataset(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(2),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn estimate(a: EstimateArgs) -> Outcome {
    let batches = cifar::load_batches(&a.data.data_dir)?;
    let images = cifar::collect_class(&batches, a.class, !a.data.all_batches, a.data.gray)?;
    let source = format!("cifar10 class={} gray={} trainOnly={}", a.class, a.data.gray, !a.data.all_batches);
    let p = estimation::estimate_population(&images.samples()?, a.ridge)?.with_source(source);
    let header = io::save_population(&a.out, &p)?;
    println!("class {} ({}): N = {}, n = {}", a.class, cifar::CLASS_NAMES[a.class as usize], p.count, p.dim());
    println!("wrote {}", header.display());
    Ok(())
}

fn distmat(a: DistmatArgs) -> Outcome {
    let p = io::load_population(&a.p)?;
    let q = io::load_population(&a.q)?;
    let d = distance::distance_matrix(&p, &q, a.kind, a.s, a.variant, !a.no_pool)?;
    let check = pipeline::trace_check(&d, &p, &q)?;
    let header = io::save_distance_matrix(&a.out, &d)?;
    println!(
        "{} ({}): trace = {:.12e}, scalar = {:.12e}, relative residual = {:.3e}",
        a.kind, a.variant, check.trace, check.scalar, check.relative_residual
    );
    if check.expected_gap != 0.0 {
        println!("expected gap for this variant: {:.12e}", check.expected_gap);
    }
    println!("wrote {}", header.display());
    Ok(())
}

fn accumulate(a: AccumulateArgs) -> Outcome {
    let d = io::load_distance_matrix(&a.distance)?;
    let phi = accumulation::accumulate(&d);
    let side = accumulation::side_of(phi.len())
        .ok_or_else(|| Error::Unsupported(format!("{} elements do not form a square image", phi.len())))?;
    let img = accumulation::devectorize(&phi, side)?.with_source((&d).into());
    let sidecar = accumulation::export(&img, &a.out)?;
    let mut ppm = a.out.clone().into_os_string();
    ppm.push(".ppm");
    let ppm = PathBuf::from(ppm);
    accumulation::render_heatmap(&img, &ppm, 8)?;
    match accumulation::center_concentration(&img, a.window) {
        Ok(r) => println!("center concentration ({0}x{0} vs ring): {r:.6}", a.window),
        Err(e) => println!("center concentration unavailable: {e}"),
    }
    println!("wrote {}", sidecar.display());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Outcome {
    let d = io::load_distance_matrix(&a.distance)?;
    let img = accumulation::import(&a.accumulation)?;
    let delta = clustering::symmetrize(&d.matrix, a.symmetrize)?;
    let dn = clustering::agglomerate(&delta)?;
    if !dn.is_monotone() {
        return Err(Error::Unsupported(String::from("merge distances decreased")).into());
    }
    dn.save(&a.out_dir.join("dendrogram.json"))?;
    let mut cuts: Vec<(String, clustering::ClusterLabeling)> = Vec::new();
    for &k in &a.counts {
        cuts.push((format!("labels_k{k}"), clustering::cut(&dn, k)?));
    }
    if let Some(t) = a.threshold {
        cuts.push((format!("labels_t{t}"), clustering::cut_at_threshold(&dn, t)));
    }
    for (name, labels) in cuts {
        let li = clustering::label_image(&labels, &img)?;
        li.export(&a.out_dir.join(&name))?;
        println!("{name}: {} clusters", labels.k);
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn render(a: RenderArgs) -> Outcome {
    let img = accumulation::import(&a.accumulation)?;
    accumulation::render_heatmap(&img, &a.out, a.scale)?;
    let norm = io::Normalization::of(&img.values);
    let px: Vec<u16> = img.values.iter().map(|&v| norm.to_u16(v)).collect();
    let pgm = a.out.with_extension("pgm");
    io::write_pgm(&pgm, img.side, img.side, u16::MAX, &px)?;
    println!("wrote {} and {}", a.out.display(), pgm.display());
    Ok(())
}

fn pipeline_config(a: PipelineArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = match &a.config {
        Some(path) => io::read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.data_dir {
        cfg.data_dir = v;
    }
    if let Some(v) = a.classes {
        cfg.class_pair = v
            .try_into()
            .map_err(|v: Vec<u8>| Error::InvalidConfig(format!("--classes needs two ids, got {}", v.len())))?;
    }
    if let Some(v) = a.kind {
        cfg.kind = v;
    }
    if let Some(v) = a.s {
        cfg.s = v;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(v) = a.ridge {
        cfg.ridge = v;
    }
    if let Some(v) = a.symmetrize {
        cfg.symmetrize_mode = v;
    }
    if let Some(v) = a.counts {
        cfg.cluster_counts = v;
    }
    if let Some(v) = a.gray {
        cfg.gray_mode = v;
    }
    if let Some(v) = a.out_dir {
        cfg.out_dir = v;
    }
    cfg.pooled &= !a.no_pool;
    cfg.train_only &= !a.all_batches;
    cfg.validate()?;
    Ok(cfg)
}

fn run_pipeline(a: PipelineArgs) -> Outcome {
    let cfg = pipeline_config(a)?;
    let out = pipeline::run_pipeline(&cfg).map_err(|e| {
        if let Error::Stage { stage: "ingest", .. } = e {
            eprintln!("{}", cifar::LAYOUT_HELP);
        }
        e
    })?;
    let m = &out.manifest;
    for c in &m.classes {
        println!("class {} ({}): N = {}{}", c.class_id, c.name, c.count, if c.cached { " (cached)" } else { "" });
    }
    println!(
        "{}: trace = {:.10e}, scalar = {:.10e}, relative residual = {:.3e}",
        cfg.kind, m.trace_check.trace, m.trace_check.scalar, m.trace_check.relative_residual
    );
    let [center, ring] = m.window_means;
    match m.center_concentration {
        Some(r) => println!("center concentration: {r:.6} (center mean {center:.6e}, ring mean {ring:.6e})"),
        None => println!("center concentration: undefined (ring mean is zero)"),
    }
    for l in &m.labelings {
        println!("k = {}: {}", l.k, l.stem);
    }
    println!("total {:.1}s; manifest {}", m.timings_seconds.get("total").copied().unwrap_or(0.0), out.manifest_path.display());
    Ok(())
}

fn run_verify(a: VerifyArgs) -> Outcome {
    let report = verify::run(a.level, a.seed)?;
    for c in &report.checks {
        println!("{c}");
    }
    if let Some(path) = &a.json {
        io::write_json(path, &report)?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", report.checks.len(), failed);
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn dataset(a: DatasetArgs) -> Outcome {
    println!("{}", cifar::LAYOUT_HELP);
    println!("tarball md5: {}", cifar::TARBALL_MD5);
    if let Some(dir) = &a.write_synthetic {
        cifar::write_synthetic_dataset(dir, a.per_class, a.seed)?;
        println!("wrote synthetic batches to {}", dir.display());
    }
    let Some(dir) = a.data_dir.or(a.write_synthetic) else {
        return Ok(());
    };
    let data = pipeline::load_dataset(&dir)?;
    for b in &data.batches {
        let mut counts = [0usize; 10];
        for r in &b.records {
            counts[r.label as usize] += 1;
        }
        println!("{:<18} {:>6} records  per class {:?}", b.name, b.records.len(), counts);
    }
    println!("content digest: {}", data.digest);
    Ok(())
}
