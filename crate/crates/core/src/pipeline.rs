//! End-to-end orchestration: align, remove, add, and optional evaluation.
//!
//! The stage functions are shared by the `pipeline` command and the
//! single-stage commands, so chaining the stages through files gives the
//! same bytes as one pipeline run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::addition::{build_catalog, builtin_score, load_detection_grid, select_candidates, GridGeometry};
use crate::alignment::{align_footprints, AlignConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, DEFAULT_IOU_THRESHOLD};
use crate::geojson;
use crate::geometry::{Footprint, PixelRect};
use crate::raster::ProbMap;
use crate::removal::{remove_footprints, RemovalOutcome};
use crate::scalar::Scalar;

pub const ALIGNED_FILE: &str = "aligned.geojson";
pub const KEPT_FILE: &str = "kept.geojson";
pub const REMOVED_FILE: &str = "removed.geojson";
pub const ADDED_FILE: &str = "added.geojson";
pub const FINAL_FILE: &str = "final.geojson";
pub const EVAL_FILE: &str = "eval.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Align,
    Remove,
    Add,
    Evaluate,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Align => "align",
            Stage::Remove => "remove",
            Stage::Add => "add",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// A library error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

/// 1 for bad input or parameters, 2 for I/O, 3 for internal invariant violations.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io(_) => 2,
        Error::InconsistentState(_) => 3,
        _ => 1,
    }
}

pub trait AtStage<V> {
    fn at(self, stage: Stage) -> std::result::Result<V, StageError>;
}

impl<V> AtStage<V> for Result<V> {
    fn at(self, stage: Stage) -> std::result::Result<V, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionSource {
    Builtin,
    /// A `DGRD` file with one plane per catalog shape.
    File(PathBuf),
}

/// Stage parameters; paths live in [`PipelineConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    pub align: AlignConfig<T>,
    pub bins: usize,
    pub threshold: T,
    pub stride: usize,
    pub detections: DetectionSource,
    pub iou_threshold: T,
}

impl<T: Scalar> Default for StageParams<T> {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            bins: crate::removal::DEFAULT_BINS,
            threshold: T::lit(crate::addition::DEFAULT_THRESHOLD),
            stride: crate::addition::DEFAULT_STRIDE,
            detections: DetectionSource::Builtin,
            iou_threshold: T::lit(DEFAULT_IOU_THRESHOLD),
        }
    }
}

impl<T: Scalar> StageParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if self.bins < 2 {
            return invalid(format!("bins {} must be >= 2", self.bins));
        }
        if !(self.threshold >= T::zero() && self.threshold <= T::one()) {
            return invalid(format!("threshold {} must be in [0, 1]", self.threshold));
        }
        if self.stride == 0 {
            return invalid("stride must be >= 1".into());
        }
        if !(self.iou_threshold >= T::zero() && self.iou_threshold < T::one()) {
            return invalid(format!("IoU threshold {} must be in [0, 1)", self.iou_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T> {
    pub params: StageParams<T>,
    /// `.pmap`, or a grayscale PNG read at `png_resolution`.
    pub raster: PathBuf,
    pub png_resolution: T,
    pub annotations: PathBuf,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl<T: Scalar> PipelineConfig<T> {
    pub fn new(raster: impl Into<PathBuf>, annotations: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            params: StageParams::default(),
            raster: raster.into(),
            png_resolution: T::lit(0.3),
            annotations: annotations.into(),
            truth: None,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.png_resolution > T::zero() && self.png_resolution.is_finite()) {
            return Err(Error::InvalidParameter("PNG resolution must be positive".into()));
        }
        let mut inputs = vec![&self.raster, &self.annotations];
        inputs.extend(&self.truth);
        if let DetectionSource::File(p) = &self.params.detections {
            inputs.push(p);
        }
        for (i, a) in inputs.iter().enumerate() {
            if inputs[i + 1..].contains(a) || *a == &self.out_dir {
                return Err(Error::InvalidParameter(format!("path {} is used twice", a.display())));
            }
        }
        Ok(())
    }
}

/// Prefixes I/O errors with the offending path.
pub fn with_path<V>(result: Result<V>, path: &Path) -> Result<V> {
    result.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

/// Annotation file with the path attached to I/O errors.
pub fn read_annotations<T: Scalar>(path: &Path) -> Result<Vec<Footprint<T>>> {
    with_path(geojson::read(path), path)
}

/// Reads a `.pmap` raster, or a PNG when the extension says so.
pub fn load_raster<T: Scalar>(path: &Path, png_resolution: T) -> Result<ProbMap<T>> {
    with_path(read_raster(path, png_resolution), path)
}

fn read_raster<T: Scalar>(path: &Path, png_resolution: T) -> Result<ProbMap<T>> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        ProbMap::read_png(path, png_resolution)
    } else {
        ProbMap::read_pmap(path)
    }
}

pub fn raster_extent<T: Scalar>(map: &ProbMap<T>) -> PixelRect {
    PixelRect::new(0, 0, map.width() as i64, map.height() as i64)
}

pub fn stage_align<T: Scalar>(
    footprints: &[Footprint<T>],
    map: &ProbMap<T>,
    params: &StageParams<T>,
) -> Result<Vec<Footprint<T>>> {
    if footprints.is_empty() {
        return Ok(Vec::new());
    }
    Ok(align_footprints(footprints, map, &params.align)?.aligned)
}

pub fn stage_remove<T: Scalar>(
    footprints: &[Footprint<T>],
    map: &ProbMap<T>,
    params: &StageParams<T>,
) -> Result<RemovalOutcome<T>> {
    remove_footprints(footprints, map, params.bins)
}

/// New footprints only; the merged result is `kept` followed by these.
pub fn stage_add<T: Scalar>(
    kept: &[Footprint<T>],
    map: &ProbMap<T>,
    params: &StageParams<T>,
) -> Result<Vec<Footprint<T>>> {
    let catalog = build_catalog(map.resolution())?;
    let grid = match &params.detections {
        DetectionSource::Builtin => builtin_score(map, &catalog, params.stride)?,
        DetectionSource::File(path) => {
            let grid = with_path(load_detection_grid(path, catalog.len()), path)?;
            let g = grid.geometry;
            if g != GridGeometry::covering(map.width(), map.height(), g.stride)? {
                return Err(Error::Format(format!(
                    "detection grid {}x{} at stride {} does not cover a {}x{} raster",
                    g.grid_w,
                    g.grid_h,
                    g.stride,
                    map.width(),
                    map.height()
                )));
            }
            grid
        }
    };
    select_candidates(&grid, map, kept, &catalog, params.threshold)
}

pub fn merge<T: Scalar>(kept: &[Footprint<T>], added: &[Footprint<T>]) -> Vec<Footprint<T>> {
    kept.iter().chain(added).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome<T> {
    pub aligned: Vec<Footprint<T>>,
    pub removal: RemovalOutcome<T>,
    pub added: Vec<Footprint<T>>,
    pub merged: Vec<Footprint<T>>,
    pub report: Option<EvalReport<T>>,
}

/// Runs every stage, writing each stage's files as soon as it finishes.
pub fn run_pipeline<T: Scalar>(config: &PipelineConfig<T>) -> std::result::Result<PipelineOutcome<T>, StageError> {
    config.validate().at(Stage::Input)?;
    let map = load_raster(&config.raster, config.png_resolution).at(Stage::Input)?;
    let input = read_annotations(&config.annotations).at(Stage::Input)?;
    let truth = match &config.truth {
        Some(p) => Some(read_annotations::<T>(p).at(Stage::Input)?),
        None => None,
    };
    fs::create_dir_all(&config.out_dir).map_err(Error::from).at(Stage::Input)?;
    let out = |name: &str| config.out_dir.join(name);
    let params = &config.params;

    let aligned = stage_align(&input, &map, params).at(Stage::Align)?;
    geojson::write(&out(ALIGNED_FILE), &aligned).at(Stage::Align)?;

    let removal = stage_remove(&aligned, &map, params).at(Stage::Remove)?;
    geojson::write(&out(KEPT_FILE), &removal.kept).at(Stage::Remove)?;
    geojson::write(&out(REMOVED_FILE), &removal.removed).at(Stage::Remove)?;

    let added = stage_add(&removal.kept, &map, params).at(Stage::Add)?;
    let merged = merge(&removal.kept, &added);
    geojson::write(&out(ADDED_FILE), &added).at(Stage::Add)?;
    geojson::write(&out(FINAL_FILE), &merged).at(Stage::Add)?;

    let report = match &truth {
        Some(truth) => {
            let report = evaluate(&merged, truth, raster_extent(&map), params.iou_threshold).at(Stage::Evaluate)?;
            fs::write(out(EVAL_FILE), report.to_text()).map_err(Error::from).at(Stage::Evaluate)?;
            Some(report)
        }
        None => None,
    };
    Ok(PipelineOutcome {
        aligned,
        removal,
        added,
        merged,
        report,
    })
}
