use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use footprint_fix::addition::{build_catalog, CATALOG_SIZE};
use footprint_fix::alignment::{AlignConfig, DisplacementDomain, SiteMode, Unary};
use footprint_fix::evaluation::evaluate;
use footprint_fix::geometry::Footprint;
use footprint_fix::pipeline::{
    self, load_raster, merge, raster_extent, run_pipeline, stage_add, stage_align, stage_remove, AtStage,
    DetectionSource, PipelineConfig, Stage, StageError, StageParams,
};
use footprint_fix::synth::{generate, write_scene, SceneSpec, ShiftModel};
use footprint_fix::{geojson, Error, Source};

type CliResult = std::result::Result<(), StageError>;

#[derive(Parser)]
#[command(name = "footprint-fix", version, about = "Align, prune and complete building-footprint annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with known shifts, drops and misses.
    Synth(SynthArgs),
    /// Align annotations to the raster.
    Align {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        align: AlignArgs,
        #[arg(long, default_value = "aligned.geojson")]
        out: PathBuf,
    },
    /// Remove annotations without raster evidence.
    Remove {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value = "kept.geojson")]
        kept: PathBuf,
        #[arg(long, default_value = "removed.geojson")]
        removed: PathBuf,
    },
    /// Add missing buildings from the shape catalog.
    Add {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        add: AddArgs,
        #[arg(long, default_value = "added.geojson")]
        added: PathBuf,
        #[arg(long = "final", default_value = "final.geojson")]
        merged: PathBuf,
    },
    /// Run align, remove and add; evaluate when ground truth is given.
    Pipeline {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        align: AlignArgs,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[command(flatten)]
        add: AddArgs,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pixel and object scores of predictions against ground truth.
    Eval {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the shape catalog as GeoJSON.
    Shapes {
        #[arg(long, default_value_t = 0.3)]
        resolution: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RasterArgs {
    /// Probability raster: `.pmap` or 8/16-bit grayscale PNG.
    #[arg(long)]
    raster: PathBuf,
    /// Meters per pixel for PNG rasters.
    #[arg(long, default_value_t = 0.3)]
    resolution: f64,
}

impl RasterArgs {
    fn load(&self) -> std::result::Result<footprint_fix::ProbMapF64, StageError> {
        load_raster(&self.raster, self.resolution).at(Stage::Input)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UnaryArg {
    Correlation,
    Absdiff,
    Mi,
}

#[derive(Clone, Copy, ValueEnum)]
enum SitesArg {
    Groups,
    Buildings,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Displacements range over [-domain, domain] on each axis.
    #[arg(long, default_value_t = 30, allow_negative_numbers = true)]
    domain: i32,
    /// Grouping distance in meters.
    #[arg(long, default_value_t = 21.0)]
    link_distance: f64,
    #[arg(long, default_value_t = 5)]
    knn: usize,
    #[arg(long, value_enum, default_value = "correlation")]
    unary: UnaryArg,
    #[arg(long, value_enum, default_value = "groups")]
    sites: SitesArg,
}

impl AlignArgs {
    fn config(&self) -> Result<AlignConfig<f64>, Error> {
        if self.domain < 0 {
            return Err(Error::InvalidParameter(format!("domain {} must be >= 0", self.domain)));
        }
        Ok(AlignConfig {
            beta: self.beta,
            max_iters: self.max_iters,
            domain: DisplacementDomain::symmetric(self.domain),
            unary: match self.unary {
                UnaryArg::Correlation => Unary::Correlation,
                UnaryArg::Absdiff => Unary::AbsDifference,
                UnaryArg::Mi => Unary::MutualInfo,
            },
            site_mode: match self.sites {
                SitesArg::Groups => SiteMode::Groups,
                SitesArg::Buildings => SiteMode::Buildings,
            },
            link_distance_m: self.link_distance,
            knn: self.knn,
        })
    }
}

#[derive(Args)]
struct AddArgs {
    #[arg(long, default_value_t = 0.80)]
    threshold: f64,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Precomputed detection scores (DGRD); the built-in scorer otherwise.
    #[arg(long)]
    detections: Option<PathBuf>,
}

impl AddArgs {
    fn apply(&self, params: &mut StageParams<f64>) {
        params.threshold = self.threshold;
        params.stride = self.stride;
        params.detections = match &self.detections {
            Some(p) => DetectionSource::File(p.clone()),
            None => DetectionSource::Builtin,
        };
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    Shared,
    Independent,
    Linear,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 800)]
    width: usize,
    #[arg(long, default_value_t = 800)]
    height: usize,
    #[arg(long, default_value_t = 0.3)]
    resolution: f64,
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[arg(long, default_value_t = 1)]
    min_buildings: usize,
    #[arg(long, default_value_t = 4)]
    max_buildings: usize,
    #[arg(long, default_value_t = 25, allow_negative_numbers = true)]
    max_shift: i32,
    #[arg(long, value_enum, default_value = "shared")]
    shift_model: ShiftArg,
    /// Per-group jitter (shared) or edge amplitude (linear), in pixels.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    shift_variation: i32,
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, default_value_t = 0.0)]
    miss: f64,
    #[arg(long, default_value_t = 2.0)]
    blur: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 21.0)]
    link_distance: f64,
}

impl SynthArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            width: self.width,
            height: self.height,
            resolution: self.resolution,
            group_count: self.groups,
            buildings_per_group: (self.min_buildings, self.max_buildings),
            shape_weights: [1.0; CATALOG_SIZE],
            max_shift: self.max_shift,
            shift_model: match self.shift_model {
                ShiftArg::Shared => ShiftModel::Shared { jitter: self.shift_variation },
                ShiftArg::Independent => ShiftModel::Independent,
                ShiftArg::Linear => ShiftModel::Linear { amplitude: self.shift_variation },
            },
            drop_fraction: self.drop,
            miss_fraction: self.miss,
            blur_sigma: self.blur,
            noise_sigma: self.noise,
            link_distance_m: self.link_distance,
        }
    }
}

fn read_annotations(path: &Path) -> std::result::Result<Vec<Footprint<f64>>, StageError> {
    pipeline::read_annotations(path).at(Stage::Input)
}

fn write_text(path: Option<&Path>, text: &str, stage: Stage) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(Error::from).at(stage),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn shapes_geojson(resolution: f64) -> Result<String, Error> {
    let catalog = build_catalog(resolution)?;
    let reach = catalog
        .iter()
        .flat_map(|s| s.polygon.vertices())
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    let spacing = (2.0 * reach).ceil() as i64 + 8;
    let footprints: Vec<Footprint<f64>> = catalog
        .iter()
        .map(|s| {
            let (col, row) = ((s.id % 6) as i64, (s.id / 6) as i64);
            let c = spacing / 2;
            let mut fp = Footprint::new(
                format!("shape-{:02}", s.id),
                s.polygon_at(c + col * spacing, c + row * spacing),
                Source::Original,
            );
            fp.properties.insert("shape_id".into(), json!(s.id));
            fp.properties.insert("base".into(), json!(s.base.name()));
            fp.properties.insert("area_factor".into(), json!(s.scale.area_factor()));
            fp.properties.insert("pixels".into(), json!(s.mask.count()));
            fp
        })
        .collect();
    Ok(geojson::to_string(&footprints))
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Synth(args) => {
            let spec = args.spec();
            spec.validate().at(Stage::Input)?;
            let scene = generate::<f64>(&spec).at(Stage::Input)?;
            write_scene(&scene, &args.out_dir).at(Stage::Input)?;
            eprintln!(
                "synth: {} buildings, {} annotations ({} dropped, {} missing)",
                scene.truth.len(),
                scene.perturbed.len(),
                scene.dropped.len(),
                scene.missing.len()
            );
        }
        Command::Align { raster, annotations, align, out } => {
            let params = StageParams { align: align.config().at(Stage::Input)?, ..StageParams::default() };
            params.validate().at(Stage::Input)?;
            let map = raster.load()?;
            let input = read_annotations(&annotations)?;
            let aligned = stage_align(&input, &map, &params).at(Stage::Align)?;
            geojson::write(&out, &aligned).at(Stage::Align)?;
        }
        Command::Remove { raster, annotations, bins, kept, removed } => {
            let params = StageParams::<f64> { bins, ..StageParams::default() };
            params.validate().at(Stage::Input)?;
            let map = raster.load()?;
            let input = read_annotations(&annotations)?;
            let outcome = stage_remove(&input, &map, &params).at(Stage::Remove)?;
            geojson::write(&kept, &outcome.kept).at(Stage::Remove)?;
            geojson::write(&removed, &outcome.removed).at(Stage::Remove)?;
            match outcome.threshold {
                Some(t) => eprintln!("remove: threshold {t}, removed {}", outcome.removed.len()),
                None => eprintln!("remove: unimodal evidence, nothing removed"),
            }
        }
        Command::Add { raster, annotations, add, added, merged } => {
            let mut params = StageParams::default();
            add.apply(&mut params);
            params.validate().at(Stage::Input)?;
            let map = raster.load()?;
            let kept = read_annotations(&annotations)?;
            let new = stage_add(&kept, &map, &params).at(Stage::Add)?;
            geojson::write(&added, &new).at(Stage::Add)?;
            geojson::write(&merged, &merge(&kept, &new)).at(Stage::Add)?;
            eprintln!("add: {} footprints added", new.len());
        }
        Command::Pipeline { raster, annotations, truth, align, bins, add, iou, out_dir } => {
            let mut config = PipelineConfig::new(raster.raster, annotations, out_dir);
            config.png_resolution = raster.resolution;
            config.truth = truth;
            config.params.align = align.config().at(Stage::Input)?;
            config.params.bins = bins;
            config.params.iou_threshold = iou;
            add.apply(&mut config.params);
            let outcome = run_pipeline(&config)?;
            eprintln!(
                "pipeline: {} aligned, {} removed, {} added, {} final",
                outcome.aligned.len(),
                outcome.removal.removed.len(),
                outcome.added.len(),
                outcome.merged.len()
            );
            if let Some(report) = outcome.report {
                print!("{}", report.to_text());
            }
        }
        Command::Eval { raster, pred, truth, iou, out } => {
            if !(0.0..1.0).contains(&iou) {
                return Err(Error::InvalidParameter(format!("IoU threshold {iou} must be in [0, 1)")))
                    .at(Stage::Input);
            }
            let map = raster.load()?;
            let pred = read_annotations(&pred)?;
            let truth = read_annotations(&truth)?;
            let report = evaluate(&pred, &truth, raster_extent(&map), iou).at(Stage::Evaluate)?;
            write_text(out.as_deref(), &report.to_text(), Stage::Evaluate)?;
        }
        Command::Shapes { resolution, out } => {
            let text = shapes_geojson(resolution).at(Stage::Input)?;
            write_text(out.as_deref(), &text, Stage::Input)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
