//! Addition of missing buildings from a catalog of shape priors.
//!
//! Every catalog shape is scored at every node of a coarse lattice (stride 4
//! by default). A placement survives if both its detection score and the
//! mean probability under it reach the threshold, it does not touch any
//! retained footprint, and no better-scoring survivor overlaps it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{mask_iou, rasterize, Displacement, Footprint, Mask, PixelRect, Point, Polygon, Run, Source};
use crate::raster::ProbMap;
use crate::scalar::Scalar;

pub const DGRD_MAGIC: &[u8; 4] = b"DGRD";
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_THRESHOLD: f64 = 0.80;
pub const CATALOG_SIZE: usize = 18;
/// Width of the background ring used by the built-in scorer, in pixels.
pub const RING_WIDTH: usize = 2;
pub const CIRCLE_VERTICES: usize = 32;

pub const CIRCLE_RADIUS_M: f64 = 3.3;
pub const SQUARE_SIDE_M: f64 = 4.8;
pub const RECT_LONG_M: f64 = 6.0;
pub const RECT_SHORT_M: f64 = 3.6;

pub const POSITIVE_IOU: f64 = 0.75;
pub const NEGATIVE_IOU: f64 = 0.30;

/// Catalog vertices are snapped to multiples of `2^13 * epsilon` (2^-10 for
/// f32, 2^-39 for f64), so translating by integers below 2^13 px is exact.
fn vertex_quantum<T: Scalar>() -> f64 {
    T::epsilon().as_f64() * 8192.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeBase {
    Circle,
    Square,
    Rect0,
    Rect45,
    Rect90,
    Rect135,
}

impl ShapeBase {
    pub const ALL: [ShapeBase; 6] = [
        ShapeBase::Circle,
        ShapeBase::Square,
        ShapeBase::Rect0,
        ShapeBase::Rect45,
        ShapeBase::Rect90,
        ShapeBase::Rect135,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeBase::Circle => "circle",
            ShapeBase::Square => "square",
            ShapeBase::Rect0 => "rect0",
            ShapeBase::Rect45 => "rect45",
            ShapeBase::Rect90 => "rect90",
            ShapeBase::Rect135 => "rect135",
        }
    }
}

/// Linear scale applied to a base shape; area grows by 1, 2 or 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeScale {
    One,
    Sqrt2,
    Two,
}

impl ShapeScale {
    pub const ALL: [ShapeScale; 3] = [ShapeScale::One, ShapeScale::Sqrt2, ShapeScale::Two];

    pub fn linear_factor(&self) -> f64 {
        match self {
            ShapeScale::One => 1.0,
            ShapeScale::Sqrt2 => std::f64::consts::SQRT_2,
            ShapeScale::Two => 2.0,
        }
    }

    pub fn area_factor(&self) -> f64 {
        match self {
            ShapeScale::One => 1.0,
            ShapeScale::Sqrt2 => 2.0,
            ShapeScale::Two => 4.0,
        }
    }
}

/// One shape prior, centered on the origin, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec<T> {
    pub id: usize,
    pub base: ShapeBase,
    pub scale: ShapeScale,
    pub polygon: Polygon<T>,
    /// Rasterized `polygon`; placing the shape at integer `(cx, cy)` translates it.
    pub mask: Mask,
}

impl<T: Scalar> ShapeSpec<T> {
    pub fn polygon_at(&self, cx: i64, cy: i64) -> Polygon<T> {
        self.polygon.translate(T::from_int(cx), T::from_int(cy))
    }

    pub fn mask_at(&self, cx: i64, cy: i64) -> Mask {
        self.mask.translated(Displacement::new(cx as i32, cy as i32))
    }
}

fn rotate_exact(points: &[(f64, f64)], degrees: u32) -> Vec<(f64, f64)> {
    match degrees % 360 {
        0 => points.to_vec(),
        90 => points.iter().map(|&(x, y)| (-y, x)).collect(),
        180 => points.iter().map(|&(x, y)| (-x, -y)).collect(),
        270 => points.iter().map(|&(x, y)| (y, -x)).collect(),
        d => {
            let (s, c) = (d as f64).to_radians().sin_cos();
            points.iter().map(|&(x, y)| (c * x - s * y, s * x + c * y)).collect()
        }
    }
}

fn snap(v: f64, quantum: f64) -> f64 {
    (v / quantum).round() * quantum
}

fn base_outline(base: ShapeBase, resolution: f64) -> Vec<(f64, f64)> {
    let rect = |w: f64, h: f64| {
        let (a, b) = (w / 2.0, h / 2.0);
        vec![(-a, -b), (a, -b), (a, b), (-a, b)]
    };
    let long = RECT_LONG_M / resolution;
    let short = RECT_SHORT_M / resolution;
    match base {
        ShapeBase::Circle => {
            let r = CIRCLE_RADIUS_M / resolution;
            (0..CIRCLE_VERTICES)
                .map(|k| {
                    let t = k as f64 * std::f64::consts::TAU / CIRCLE_VERTICES as f64;
                    (r * t.cos(), r * t.sin())
                })
                .collect()
        }
        ShapeBase::Square => rect(SQUARE_SIDE_M / resolution, SQUARE_SIDE_M / resolution),
        ShapeBase::Rect0 => rect(long, short),
        ShapeBase::Rect45 => rotate_exact(&rect(long, short), 45),
        ShapeBase::Rect90 => rotate_exact(&rect(long, short), 90),
        ShapeBase::Rect135 => rotate_exact(&rect(long, short), 135),
    }
}

/// The 18 shape priors (6 bases x 3 scales) at `resolution` meters per pixel.
/// Ids are `3 * base + scale` in declaration order.
pub fn build_catalog<T: Scalar>(resolution: T) -> Result<Vec<ShapeSpec<T>>> {
    let res = resolution.as_f64();
    if !(res > 0.0 && res.is_finite()) {
        return Err(Error::InvalidParameter(format!("resolution {res} must be positive")));
    }
    let q = vertex_quantum::<T>();
    let mut catalog = Vec::with_capacity(CATALOG_SIZE);
    for base in ShapeBase::ALL {
        let outline = base_outline(base, res);
        for scale in ShapeScale::ALL {
            let k = scale.linear_factor();
            let vertices = outline
                .iter()
                .map(|&(x, y)| Point::new(T::lit(snap(x * k, q)), T::lit(snap(y * k, q))))
                .collect();
            let polygon = Polygon::new(vertices)?;
            let mask = rasterize(&polygon)?;
            catalog.push(ShapeSpec {
                id: catalog.len(),
                base,
                scale,
                polygon,
                mask,
            });
        }
    }
    Ok(catalog)
}

/// Lattice of candidate centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeometry {
    pub grid_w: usize,
    pub grid_h: usize,
    pub stride: usize,
}

impl GridGeometry {
    /// Smallest lattice covering a `width` x `height` raster.
    pub fn covering(width: usize, height: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(Self {
            grid_w: width.div_ceil(stride),
            grid_h: height.div_ceil(stride),
            stride,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.grid_w * self.grid_h
    }

    /// Pixel coordinates of the center of cell `(gx, gy)`.
    pub fn cell_center(&self, gx: usize, gy: usize) -> (i64, i64) {
        let half = (self.stride / 2) as i64;
        (
            (gx * self.stride) as i64 + half,
            (gy * self.stride) as i64 + half,
        )
    }
}

/// One score plane per catalog shape, row-major over the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrid<T> {
    pub geometry: GridGeometry,
    pub planes: Vec<Vec<T>>,
}

impl<T: Scalar> DetectionGrid<T> {
    pub fn new(geometry: GridGeometry, planes: Vec<Vec<T>>) -> Result<Self> {
        for plane in &planes {
            if plane.len() != geometry.cell_count() {
                return Err(Error::Format(format!(
                    "plane has {} cells, lattice has {}",
                    plane.len(),
                    geometry.cell_count()
                )));
            }
            if let Some(v) = plane.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
                return Err(Error::Format(format!("detection score {v} outside [0, 1]")));
            }
        }
        Ok(Self { geometry, planes })
    }

    pub fn shape_count(&self) -> usize {
        self.planes.len()
    }

    pub fn score(&self, shape: usize, gx: usize, gy: usize) -> T {
        self.planes[shape][gy * self.geometry.grid_w + gx]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// `DGRD`, u32 shape count, grid width, grid height, stride, then f32 planes; little-endian.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(DGRD_MAGIC)?;
        for v in [
            self.planes.len(),
            self.geometry.grid_w,
            self.geometry.grid_h,
            self.geometry.stride,
        ] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for plane in &self.planes {
            for v in plane {
                out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; 20];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Format("truncated DGRD header".into()))?;
        if &header[..4] != DGRD_MAGIC {
            return Err(Error::Format("missing DGRD magic".into()));
        }
        let field = |i: usize| {
            u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
        };
        let (shapes, grid_w, grid_h, stride) = (field(0), field(1), field(2), field(3));
        if stride == 0 {
            return Err(Error::Format("DGRD stride is zero".into()));
        }
        let geometry = GridGeometry {
            grid_w,
            grid_h,
            stride,
        };
        let expected = grid_w
            .checked_mul(grid_h)
            .and_then(|n| n.checked_mul(shapes))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("DGRD dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        input.take(expected as u64).read_to_end(&mut bytes)?;
        if bytes.len() != expected {
            return Err(Error::Format("truncated DGRD planes".into()));
        }
        let values: Vec<T> = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let planes = if geometry.cell_count() == 0 {
            vec![Vec::new(); shapes]
        } else {
            values
                .chunks(geometry.cell_count())
                .map(<[T]>::to_vec)
                .collect()
        };
        Self::new(geometry, planes)
    }
}

/// Reads a detection grid and checks it has one plane per catalog shape.
pub fn load_detection_grid<T: Scalar>(path: &Path, catalog_size: usize) -> Result<DetectionGrid<T>> {
    let grid = DetectionGrid::read_from(&mut BufReader::new(File::open(path)?))?;
    if grid.shape_count() != catalog_size {
        return Err(Error::Format(format!(
            "detection grid has {} planes, catalog has {catalog_size} shapes",
            grid.shape_count()
        )));
    }
    Ok(grid)
}

/// Matched-filter detector: `clamp(0.5 * (inside + 1 - ring), 0, 1)` where
/// `inside` is the mean probability under the shape and `ring` the mean over
/// a 2-pixel band around it, max-pooled over every placement whose center
/// pixel falls inside the lattice cell.
pub fn builtin_score<T: Scalar>(
    map: &ProbMap<T>,
    catalog: &[ShapeSpec<T>],
    stride: usize,
) -> Result<DetectionGrid<T>> {
    let geometry = GridGeometry::covering(map.width(), map.height(), stride)?;
    let (dense_w, dense_h) = (geometry.grid_w * stride, geometry.grid_h * stride);
    let shapes: Vec<(Vec<Run>, Vec<Run>, usize, usize)> = catalog
        .iter()
        .map(|shape| {
            let outer = shape.mask.dilate(RING_WIDTH);
            (shape.mask.runs(), outer.runs(), shape.mask.count(), outer.count())
        })
        .collect();
    let margin = shapes
        .iter()
        .flat_map(|s| &s.1)
        .map(|r| r.y.abs().max(r.x0.abs()).max(r.x1.abs()))
        .max()
        .unwrap_or(0) as usize
        + 1;
    let padded = PaddedIntegral::new(map, margin, dense_w, dense_h);
    let half = T::lit(0.5);
    let planes = shapes
        .par_iter()
        .map(|(inner, outer, n_in, n_outer)| {
            let s_in = padded.correlate(inner, dense_w, dense_h);
            let s_outer = padded.correlate(outer, dense_w, dense_h);
            let n_ring = T::from_usize(n_outer - n_in).unwrap();
            let n_in = T::from_usize(*n_in).unwrap();
            let mut plane = Vec::with_capacity(geometry.cell_count());
            for gy in 0..geometry.grid_h {
                for gx in 0..geometry.grid_w {
                    // max-pooled over every placement inside the cell
                    let mut best = T::zero();
                    for y in gy * stride..(gy + 1) * stride {
                        for i in y * dense_w + gx * stride..y * dense_w + (gx + 1) * stride {
                            let ring = s_outer[i] - s_in[i];
                            best = best.max(half * (s_in[i] / n_in + T::one() - ring / n_ring));
                        }
                    }
                    plane.push(best.min(T::one()));
                }
            }
            plane
        })
        .collect();
    DetectionGrid::new(geometry, planes)
}

/// Row prefix sums of a zero-padded raster, wide enough that every run of
/// every placement on the dense grid stays inside it.
struct PaddedIntegral<T> {
    margin: usize,
    width: usize,
    prefix: Vec<T>,
}

impl<T: Scalar> PaddedIntegral<T> {
    fn new(map: &ProbMap<T>, margin: usize, dense_w: usize, dense_h: usize) -> Self {
        let width = dense_w.max(map.width()) + 2 * margin + 1;
        let height = dense_h.max(map.height()) + 2 * margin;
        let mut prefix = vec![T::zero(); width * height];
        for y in 0..height {
            let row = &mut prefix[y * width..(y + 1) * width];
            let src = y.checked_sub(margin).filter(|&v| v < map.height());
            for x in 1..width {
                let v = match (src, (x - 1).checked_sub(margin)) {
                    (Some(sy), Some(sx)) if sx < map.width() => map.values()[sy * map.width() + sx],
                    _ => T::zero(),
                };
                row[x] = row[x - 1] + v;
            }
        }
        Self { margin, width, prefix }
    }

    /// Sum of the run pixels placed at every center of a `w` by `h` grid.
    fn correlate(&self, runs: &[Run], w: usize, h: usize) -> Vec<T> {
        let mut out = vec![T::zero(); w * h];
        let m = self.margin as i64;
        for r in runs {
            let x0 = (r.x0 + m) as usize;
            let x1 = (r.x1 + m) as usize;
            for y in 0..h {
                let base = ((y as i64 + r.y + m) as usize) * self.width;
                let hi = &self.prefix[base + x1..base + x1 + w];
                let lo = &self.prefix[base + x0..base + x0 + w];
                for ((o, a), b) in out[y * w..(y + 1) * w].iter_mut().zip(hi).zip(lo) {
                    *o = *o + (*a - *b);
                }
            }
        }
        out
    }
}

/// A shape placed on a lattice node with its two scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub shape_id: usize,
    pub cell: (usize, usize),
    pub center: (i64, i64),
    pub detection_score: T,
    pub avg_prob: T,
}

impl<T: Scalar> Candidate<T> {
    pub fn center_point(&self) -> Point<T> {
        Point::new(T::from_int(self.center.0), T::from_int(self.center.1))
    }
}

fn check_consistent<T: Scalar>(grid: &DetectionGrid<T>, catalog: &[ShapeSpec<T>]) -> Result<()> {
    if grid.shape_count() != catalog.len() {
        return Err(Error::InvalidParameter(format!(
            "detection grid has {} planes, catalog has {} shapes",
            grid.shape_count(),
            catalog.len()
        )));
    }
    Ok(())
}

/// Placements whose detection score and mean probability are both `>= t`.
pub fn threshold_candidates<T: Scalar>(
    grid: &DetectionGrid<T>,
    map: &ProbMap<T>,
    catalog: &[ShapeSpec<T>],
    t: T,
) -> Result<Vec<Candidate<T>>> {
    check_consistent(grid, catalog)?;
    let integral = map.row_integral();
    let g = grid.geometry;
    let mut out = Vec::new();
    for shape in catalog {
        let runs = shape.mask.runs();
        let n = shape.mask.count();
        for gy in 0..g.grid_h {
            for gx in 0..g.grid_w {
                let detection_score = grid.score(shape.id, gx, gy);
                if detection_score < t {
                    continue;
                }
                let center = g.cell_center(gx, gy);
                let avg_prob =
                    integral.runs_mean(&runs, n, Displacement::new(center.0 as i32, center.1 as i32));
                if avg_prob < t {
                    continue;
                }
                out.push(Candidate {
                    shape_id: shape.id,
                    cell: (gx, gy),
                    center,
                    detection_score,
                    avg_prob,
                });
            }
        }
    }
    Ok(out)
}

/// Pixel occupancy over a fixed frame; pixels outside the frame are never occupied.
struct Occupancy {
    frame: PixelRect,
    bits: Vec<bool>,
}

impl Occupancy {
    fn new(frame: PixelRect) -> Self {
        Self {
            frame,
            bits: vec![false; frame.area() as usize],
        }
    }

    fn index(&self, x: i64, y: i64) -> Option<usize> {
        self.frame.contains(x, y).then(|| {
            (y - self.frame.y0) as usize * self.frame.width() as usize + (x - self.frame.x0) as usize
        })
    }

    fn hits(&self, mask: &Mask) -> bool {
        mask.iter_set()
            .any(|(x, y)| self.index(x, y).is_some_and(|i| self.bits[i]))
    }

    fn mark(&mut self, mask: &Mask) {
        for (x, y) in mask.iter_set() {
            if let Some(i) = self.index(x, y) {
                self.bits[i] = true;
            }
        }
    }
}

/// Turns thresholded candidates into new footprints: candidates touching a
/// retained footprint are dropped, the rest are accepted greedily by
/// descending `avg_prob + detection_score` while disjoint from earlier picks.
pub fn select_candidates<T: Scalar>(
    grid: &DetectionGrid<T>,
    map: &ProbMap<T>,
    existing: &[Footprint<T>],
    catalog: &[ShapeSpec<T>],
    t: T,
) -> Result<Vec<Footprint<T>>> {
    let mut candidates = threshold_candidates(grid, map, catalog, t)?;
    candidates.sort_by(|a, b| {
        (b.avg_prob + b.detection_score)
            .partial_cmp(&(a.avg_prob + a.detection_score))
            .unwrap()
            .then(a.shape_id.cmp(&b.shape_id))
            .then(a.center.cmp(&b.center))
    });

    let reach = catalog
        .iter()
        .map(|s| {
            let r = s.mask.rect();
            [r.x0.abs(), r.y0.abs(), r.x1.abs(), r.y1.abs()]
                .into_iter()
                .max()
                .unwrap()
        })
        .max()
        .unwrap_or(0);
    let mut occupied = Occupancy::new(map.extent().dilate(reach + grid.geometry.stride as i64));
    for fp in existing {
        occupied.mark(&rasterize(&fp.polygon)?);
    }

    let taken: std::collections::HashSet<&str> = existing.iter().map(|f| f.id.as_str()).collect();
    let mut next_id = 1usize;
    let mut added = Vec::new();
    for c in candidates {
        let shape = &catalog[c.shape_id];
        let mask = shape.mask_at(c.center.0, c.center.1);
        if occupied.hits(&mask) {
            continue;
        }
        occupied.mark(&mask);
        let id = loop {
            let id = format!("added-{next_id:05}");
            next_id += 1;
            if !taken.contains(id.as_str()) {
                break id;
            }
        };
        let mut fp = Footprint::new(id, shape.polygon_at(c.center.0, c.center.1), Source::Added);
        fp.properties.insert("shape_id".into(), Value::from(c.shape_id));
        fp.properties
            .insert("detection_score".into(), Value::from(c.detection_score.as_f64()));
        fp.properties.insert("avg_prob".into(), Value::from(c.avg_prob.as_f64()));
        added.push(fp);
    }
    Ok(added)
}

/// Training label of one (cell, shape) sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleLabel {
    Positive,
    Negative,
    /// IoU between the two thresholds; not used for training.
    Ignore,
}

/// Labels every (shape, cell) by its best IoU with a ground-truth building:
/// above 0.75 positive, below 0.30 negative. Indexed `[shape][gy * grid_w + gx]`.
pub fn label_shape_samples<T: Scalar>(
    truth: &[Footprint<T>],
    catalog: &[ShapeSpec<T>],
    geometry: GridGeometry,
) -> Result<Vec<Vec<SampleLabel>>> {
    let truth_masks = truth
        .iter()
        .map(|f| rasterize(&f.polygon))
        .collect::<Result<Vec<_>>>()?;
    let stride = geometry.stride as i64;
    Ok(catalog
        .par_iter()
        .map(|shape| {
            let mut best = vec![0.0f64; geometry.cell_count()];
            let sr = shape.mask.rect();
            for tm in &truth_masks {
                let r = tm.rect();
                // Cells whose shape window can overlap this truth window.
                let half = stride / 2;
                let gx0 = ((r.x0 - sr.x1 - half).div_euclid(stride) + 1).max(0);
                let gx1 = ((r.x1 - sr.x0 - half).div_euclid(stride) + 1).min(geometry.grid_w as i64);
                let gy0 = ((r.y0 - sr.y1 - half).div_euclid(stride) + 1).max(0);
                let gy1 = ((r.y1 - sr.y0 - half).div_euclid(stride) + 1).min(geometry.grid_h as i64);
                for gy in gy0..gy1.max(gy0) {
                    for gx in gx0..gx1.max(gx0) {
                        let (cx, cy) = geometry.cell_center(gx as usize, gy as usize);
                        let v: f64 = mask_iou(&shape.mask_at(cx, cy), tm);
                        let slot = &mut best[gy as usize * geometry.grid_w + gx as usize];
                        *slot = slot.max(v);
                    }
                }
            }
            best.into_iter()
                .map(|v| {
                    if v > POSITIVE_IOU {
                        SampleLabel::Positive
                    } else if v < NEGATIVE_IOU {
                        SampleLabel::Negative
                    } else {
                        SampleLabel::Ignore
                    }
                })
                .collect()
        })
        .collect())
}
