//! Seeded synthetic scenes with known annotation errors.
//!
//! Buildings are catalog shapes packed in small clusters. Each cluster's
//! annotations are displaced by one integer shift; some annotations have no
//! building behind them (dropped) and some buildings have no annotation
//! (missing). The probability map is the raster of the real buildings,
//! blurred and with clamped Gaussian noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::addition::{build_catalog, ShapeSpec, CATALOG_SIZE};
use crate::error::{Error, Result};
use crate::geometry::{Displacement, Footprint, Mask, PixelRect, Source};
use crate::raster::ProbMap;
use crate::scalar::Scalar;

/// Minimum free space between two buildings, in pixels.
const BUILDING_GAP: usize = 3;
const BUILDING_ATTEMPTS: usize = 400;
const GROUP_ATTEMPTS: usize = 10_000;

/// How group shifts are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftModel {
    /// Every group draws its own shift uniformly from `[-max_shift, max_shift]^2`.
    Independent,
    /// One scene shift drawn uniformly from `[-max_shift, max_shift]^2`, plus a
    /// per-group offset uniform in `[-jitter, jitter]^2`, clamped to the range.
    Shared { jitter: i32 },
    /// A scene shift plus a linear trend across the scene: each axis changes
    /// by at most `amplitude` pixels between the scene center and its edges.
    Linear { amplitude: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub group_count: usize,
    /// Inclusive range of buildings per group; a crowded group may end up with fewer, never with none.
    pub buildings_per_group: (usize, usize),
    /// Relative frequency of each catalog shape.
    pub shape_weights: [f64; CATALOG_SIZE],
    /// Group shifts are uniform over `[-max_shift, max_shift]` on each axis.
    pub max_shift: i32,
    pub shift_model: ShiftModel,
    /// Annotations whose building is absent from the raster.
    pub drop_fraction: f64,
    /// Buildings present in the raster without an annotation.
    pub miss_fraction: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    /// Buildings of one group lie within half this distance of its center.
    pub link_distance_m: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 800,
            height: 800,
            resolution: 0.3,
            group_count: 8,
            buildings_per_group: (1, 4),
            shape_weights: [1.0; CATALOG_SIZE],
            max_shift: 25,
            shift_model: ShiftModel::Shared { jitter: 0 },
            drop_fraction: 0.0,
            miss_fraction: 0.0,
            blur_sigma: 2.0,
            noise_sigma: 0.1,
            link_distance_m: 21.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if self.width == 0 || self.height == 0 {
            return invalid("scene extent must be non-empty".into());
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return invalid(format!("resolution {} must be positive", self.resolution));
        }
        let (lo, hi) = self.buildings_per_group;
        if lo == 0 || lo > hi {
            return invalid(format!("buildings per group {lo}..={hi} is not a valid range"));
        }
        if self.shape_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.shape_weights.iter().sum::<f64>() <= 0.0
        {
            return invalid("shape weights must be non-negative with a positive sum".into());
        }
        if self.max_shift < 0 {
            return invalid(format!("max shift {} must be >= 0", self.max_shift));
        }
        match self.shift_model {
            ShiftModel::Shared { jitter: a } | ShiftModel::Linear { amplitude: a } if a < 0 => {
                return invalid(format!("shift variation {a} must be >= 0"));
            }
            _ => {}
        }
        for (name, f) in [("drop", self.drop_fraction), ("miss", self.miss_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return invalid(format!("{name} fraction {f} must be in [0, 1)"));
            }
        }
        if self.drop_fraction + self.miss_fraction > 1.0 {
            return invalid("drop and miss fractions add up to more than 1".into());
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return invalid("blur and noise sigmas must be >= 0".into());
        }
        if !(self.link_distance_m > 0.0) {
            return invalid("link distance must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGroup {
    pub id: usize,
    pub shift: Displacement,
    /// Ids of every building placed in the group, dropped and missing included.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene<T> {
    pub spec: SceneSpec,
    pub map: ProbMap<T>,
    /// Real buildings at their true position (everything except dropped ids).
    pub truth: Vec<Footprint<T>>,
    /// Annotations: everything except missing ids, displaced by the group shift.
    pub perturbed: Vec<Footprint<T>>,
    pub groups: Vec<SyntheticGroup>,
    pub dropped: Vec<String>,
    pub missing: Vec<String>,
}

impl<T: Scalar> SyntheticScene<T> {
    /// Index of the group that placed building `id`.
    pub fn group_of(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.members.iter().any(|m| m == id))
    }
}

struct Placed {
    shape: usize,
    center: (i64, i64),
    group: usize,
}

fn building_id(k: usize) -> String {
    format!("b{:05}", k + 1)
}

fn half_extent<T: Scalar>(catalog: &[ShapeSpec<T>]) -> i64 {
    catalog
        .iter()
        .map(|s| {
            let r = s.mask.rect();
            [-r.x0, -r.y0, r.x1, r.y1].into_iter().max().unwrap()
        })
        .max()
        .unwrap()
}

/// Group centers by rejection sampling with a minimum mutual distance.
fn place_group_centers(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    margin: i64,
    min_distance: f64,
) -> Result<Vec<(i64, i64)>> {
    let (w, h) = (spec.width as i64, spec.height as i64);
    if w - 2 * margin <= 0 || h - 2 * margin <= 0 {
        return Err(Error::Packing(format!(
            "{}x{} scene is too small for a {margin} px margin",
            spec.width, spec.height
        )));
    }
    let mut centers: Vec<(i64, i64)> = Vec::with_capacity(spec.group_count);
    let mut attempts = 0;
    while centers.len() < spec.group_count {
        attempts += 1;
        if attempts > GROUP_ATTEMPTS * spec.group_count.max(1) {
            return Err(Error::Packing(format!(
                "placed only {} of {} groups",
                centers.len(),
                spec.group_count
            )));
        }
        let c = (rng.random_range(margin..w - margin), rng.random_range(margin..h - margin));
        let clear = centers.iter().all(|o| {
            let (dx, dy) = ((o.0 - c.0) as f64, (o.1 - c.1) as f64);
            dx.hypot(dy) >= min_distance
        });
        if clear {
            centers.push(c);
        }
    }
    Ok(centers)
}

/// Whether the mask lies entirely inside `extent`.
fn fits(mask: &Mask, extent: PixelRect) -> bool {
    let r = mask.rect();
    r.x0 >= extent.x0 && r.y0 >= extent.y0 && r.x1 <= extent.x1 && r.y1 <= extent.y1
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur; outside the raster counts as 0.
fn blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let o = i as i64 - r;
                    let (sx, sy) = if horizontal { (x + o, y) } else { (x, y + o) };
                    if sx >= 0 && sy >= 0 && sx < width as i64 && sy < height as i64 {
                        acc += kv * src[sy as usize * width + sx as usize];
                    }
                }
                out[y as usize * width + x as usize] = acc;
            }
        }
        out
    };
    pass(&pass(values, true), false)
}

/// Builds a scene; the same spec always yields the same scene.
pub fn generate<T: Scalar>(spec: &SceneSpec) -> Result<SyntheticScene<T>> {
    spec.validate()?;
    let catalog = build_catalog(T::lit(spec.resolution))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let extent = PixelRect::new(0, 0, spec.width as i64, spec.height as i64);

    let link_px = spec.link_distance_m / spec.resolution;
    // Any two centers of one group stay below the link distance.
    let group_radius = (link_px / 2.0 - 1.0).floor().max(0.0) as i64;
    let reach = half_extent(&catalog);
    let margin = group_radius + reach + BUILDING_GAP as i64;
    // Members of different groups stay beyond the link distance, before and
    // after their annotations are shifted in opposite directions.
    let shift_reach = 2.0 * std::f64::consts::SQRT_2 * spec.max_shift as f64;
    let min_center_distance = link_px + 2.0 * group_radius as f64 + shift_reach + 2.0;
    let centers = place_group_centers(spec, &mut rng, margin, min_center_distance)?;

    let shapes = WeightedIndex::new(spec.shape_weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut placed: Vec<Placed> = Vec::new();
    let mut masks: Vec<Mask> = Vec::new();
    for (g, &(gx, gy)) in centers.iter().enumerate() {
        let count = rng.random_range(spec.buildings_per_group.0..=spec.buildings_per_group.1);
        for _ in 0..count {
            let mut ok = false;
            for _ in 0..BUILDING_ATTEMPTS {
                let shape = shapes.sample(&mut rng);
                let (ox, oy) = (
                    rng.random_range(-group_radius..=group_radius),
                    rng.random_range(-group_radius..=group_radius),
                );
                if ox * ox + oy * oy > group_radius * group_radius {
                    continue;
                }
                let center = (gx + ox, gy + oy);
                let mask = catalog[shape].mask_at(center.0, center.1);
                if !fits(&mask, extent) {
                    continue;
                }
                let grown = mask.dilate(BUILDING_GAP);
                if masks.iter().any(|m| m.rect().overlaps(&grown.rect()) && m.intersects(&grown)) {
                    continue;
                }
                placed.push(Placed { shape, center, group: g });
                masks.push(mask);
                ok = true;
                break;
            }
            if !ok {
                // crowded by large shapes; the group keeps what fitted
                break;
            }
        }
    }

    let m = spec.max_shift;
    let shifts: Vec<Displacement> = match spec.shift_model {
        ShiftModel::Independent => (0..centers.len())
            .map(|_| Displacement::new(rng.random_range(-m..=m), rng.random_range(-m..=m)))
            .collect(),
        ShiftModel::Shared { jitter } => {
            let (bx, by) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            (0..centers.len())
                .map(|_| {
                    let (jx, jy) = (rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter));
                    Displacement::new((bx + jx).clamp(-m, m), (by + jy).clamp(-m, m))
                })
                .collect()
        }
        ShiftModel::Linear { amplitude } => {
            let a = amplitude as f64;
            let base = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            let mut slope = || (rng.random_range(-a..=a), rng.random_range(-a..=a));
            let (sx, sy) = (slope(), slope());
            let (hw, hh) = (spec.width as f64 / 2.0, spec.height as f64 / 2.0);
            centers
                .iter()
                .map(|&(cx, cy)| {
                    let (u, v) = ((cx as f64 - hw) / hw, (cy as f64 - hh) / hh);
                    let dx = base.0 + (sx.0 * u + sx.1 * v).round() as i32;
                    let dy = base.1 + (sy.0 * u + sy.1 * v).round() as i32;
                    Displacement::new(dx.clamp(-m, m), dy.clamp(-m, m))
                })
                .collect()
        }
    };

    let n = placed.len();
    let n_drop = (spec.drop_fraction * n as f64).round() as usize;
    let n_miss = ((spec.miss_fraction * n as f64).round() as usize).min(n - n_drop);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_dropped = vec![false; n];
    let mut is_missing = vec![false; n];
    for &i in &order[..n_drop] {
        is_dropped[i] = true;
    }
    for &i in &order[n_drop..n_drop + n_miss] {
        is_missing[i] = true;
    }

    let mut raster = vec![0.0f64; spec.width * spec.height];
    for (i, m) in masks.iter().enumerate() {
        if !is_dropped[i] {
            for (x, y) in m.iter_set() {
                raster[y as usize * spec.width + x as usize] = 1.0;
            }
        }
    }
    let mut raster = blur(&raster, spec.width, spec.height, spec.blur_sigma);
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in &mut raster {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let map = ProbMap::new(
        spec.width,
        spec.height,
        T::lit(spec.resolution),
        raster.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))).collect(),
    )?;

    let mut truth = Vec::new();
    let mut perturbed = Vec::new();
    let mut groups: Vec<SyntheticGroup> = shifts
        .iter()
        .enumerate()
        .map(|(id, &shift)| SyntheticGroup {
            id,
            shift,
            members: Vec::new(),
        })
        .collect();
    for (i, p) in placed.iter().enumerate() {
        let id = building_id(i);
        let polygon = catalog[p.shape].polygon_at(p.center.0, p.center.1);
        groups[p.group].members.push(id.clone());
        if !is_missing[i] {
            let g = shifts[p.group];
            let shifted = polygon.translate(T::from_int(g.dx as i64), T::from_int(g.dy as i64));
            perturbed.push(Footprint::new(id.clone(), shifted, Source::Original));
        }
        if !is_dropped[i] {
            truth.push(Footprint::new(id, polygon, Source::Original));
        }
    }
    let ids_where = |flags: &[bool]| (0..n).filter(|&i| flags[i]).map(building_id).collect();
    Ok(SyntheticScene {
        spec: spec.clone(),
        map,
        truth,
        perturbed,
        groups,
        dropped: ids_where(&is_dropped),
        missing: ids_where(&is_missing),
    })
}

/// `group dx dy members`, one group per line.
pub fn shift_table<T: Scalar>(scene: &SyntheticScene<T>) -> String {
    let mut out = String::from("# group dx dy members\n");
    for g in &scene.groups {
        writeln!(out, "{} {} {} {}", g.id, g.shift.dx, g.shift.dy, g.members.join(",")).unwrap();
    }
    out
}

/// `dropped <id>` and `missing <id>` lines.
pub fn error_labels<T: Scalar>(scene: &SyntheticScene<T>) -> String {
    let mut out = String::new();
    for id in &scene.dropped {
        writeln!(out, "dropped {id}").unwrap();
    }
    for id in &scene.missing {
        writeln!(out, "missing {id}").unwrap();
    }
    out
}

/// Writes `probmap.pmap`, `truth.geojson`, `perturbed.geojson`, `shifts.txt`
/// and `labels.txt` into `dir`.
pub fn write_scene<T: Scalar>(scene: &SyntheticScene<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    scene.map.write_pmap(&dir.join("probmap.pmap"))?;
    crate::geojson::write(&dir.join("truth.geojson"), &scene.truth)?;
    crate::geojson::write(&dir.join("perturbed.geojson"), &scene.perturbed)?;
    fs::write(dir.join("shifts.txt"), shift_table(scene))?;
    fs::write(dir.join("labels.txt"), error_labels(scene))?;
    Ok(())
}
