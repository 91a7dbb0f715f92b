//! Polygons, pixel masks and the raster measures built on them.
//!
//! All coordinates are raster pixel coordinates: `x` grows to the right
//! (columns), `y` grows downward (rows). Pixel `(px, py)` covers the unit
//! square `[px, px + 1) x [py, py + 1)` and is sampled at its center
//! `(px + 0.5, py + 0.5)`.

use std::collections::HashSet;
use std::fmt;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point<T>) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Integer pixel translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Displacement {
    pub dx: i32,
    pub dy: i32,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0, dy: 0 };

    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    pub fn neg(self) -> Self {
        Self::new(-self.dx, -self.dy)
    }

    pub fn norm_sq(self) -> i64 {
        let (x, y) = (self.dx as i64, self.dy as i64);
        x * x + y * y
    }

    pub fn norm(self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }
}

impl fmt::Display for Displacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dx, self.dy)
    }
}

/// Half-open integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersect(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    pub fn union(&self, other: &PixelRect) -> PixelRect {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn dilate(&self, r: i64) -> PixelRect {
        PixelRect::new(self.x0 - r, self.y0 - r, self.x1 + r, self.y1 + r)
    }

    pub fn overlaps(&self, other: &PixelRect) -> bool {
        !self.intersect(other).is_empty()
    }
}

/// Closed simple polygon; the closing vertex is implied, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T> {
    exterior: Vec<Point<T>>,
}

impl<T: Scalar> Polygon<T> {
    /// Validates and builds a polygon. A repeated closing vertex is dropped.
    pub fn new(mut exterior: Vec<Point<T>>) -> Result<Self> {
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        if exterior.len() < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "polygon needs at least 3 vertices, got {}",
                exterior.len()
            )));
        }
        if !exterior.iter().all(Point::is_finite) {
            return Err(Error::DegenerateGeometry("non-finite vertex".into()));
        }
        let poly = Self { exterior };
        if poly.signed_area() == T::zero() {
            return Err(Error::DegenerateGeometry("zero-area polygon".into()));
        }
        if !poly.is_simple() {
            return Err(Error::DegenerateGeometry("self-intersecting polygon".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle with corners `(x0, y0)` and `(x1, y1)`.
    pub fn rect(x0: T, y0: T, x1: T, y1: T) -> Result<Self> {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.exterior
    }

    fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.exterior.len();
        (0..n).map(move |i| (self.exterior[i], self.exterior[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> T {
        let two = T::lit(2.0);
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<T>() / two
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    /// Area-weighted centroid.
    pub fn centroid(&self) -> Point<T> {
        let six = T::lit(6.0);
        let a = self.signed_area();
        let (mut cx, mut cy) = (T::zero(), T::zero());
        for (p, q) in self.edges() {
            let cross = p.x * q.y - q.x * p.y;
            cx = cx + (p.x + q.x) * cross;
            cy = cy + (p.y + q.y) * cross;
        }
        Point::new(cx / (six * a), cy / (six * a))
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounds(&self) -> (Point<T>, Point<T>) {
        let mut lo = self.exterior[0];
        let mut hi = self.exterior[0];
        for p in &self.exterior[1..] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self {
            exterior: self
                .exterior
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    /// Rotation by `degrees` about the origin (counter-clockwise in a y-up frame).
    pub fn rotate(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (s, c) = (T::lit(s), T::lit(c));
        Self {
            exterior: self
                .exterior
                .iter()
                .map(|p| Point::new(c * p.x - s * p.y, s * p.x + c * p.y))
                .collect(),
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            exterior: self
                .exterior
                .iter()
                .map(|p| Point::new(p.x * factor, p.y * factor))
                .collect(),
        }
    }

    fn is_simple(&self) -> bool {
        let n = self.exterior.len();
        let v = &self.exterior;
        for i in 0..n {
            let (p, q, r) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
            // Consecutive edges folding back onto each other.
            let cross = (q.x - p.x) * (r.y - q.y) - (q.y - p.y) * (r.x - q.x);
            let dot = (q.x - p.x) * (r.x - q.x) + (q.y - p.y) * (r.y - q.y);
            if cross == T::zero() && dot < T::zero() {
                return false;
            }
        }
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                    return false;
                }
            }
        }
        true
    }
}

fn orient<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, d: Point<T>) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    let z = T::zero();
    if ((o1 > z && o2 < z) || (o1 < z && o2 > z)) && ((o3 > z && o4 < z) || (o3 < z && o4 > z)) {
        return true;
    }
    (o1 == z && on_segment(a, b, c))
        || (o2 == z && on_segment(a, b, d))
        || (o3 == z && on_segment(c, d, a))
        || (o4 == z && on_segment(c, d, b))
}

/// Provenance of a footprint within the correction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Source {
    #[default]
    Original,
    Aligned,
    Added,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Original => "original",
            Source::Aligned => "aligned",
            Source::Added => "added",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Source::Original),
            "aligned" => Some(Source::Aligned),
            "added" => Some(Source::Added),
            _ => None,
        }
    }
}

/// One annotated building.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint<T> {
    pub id: String,
    pub polygon: Polygon<T>,
    pub source: Source,
    /// Feature properties other than `id` and `source`, preserved verbatim.
    pub properties: Map<String, Value>,
}

impl<T: Scalar> Footprint<T> {
    pub fn new(id: impl Into<String>, polygon: Polygon<T>, source: Source) -> Self {
        Self {
            id: id.into(),
            polygon,
            source,
            properties: Map::new(),
        }
    }
}

/// Fails with `Format` on the first repeated id.
pub fn ensure_unique_ids<T>(footprints: &[Footprint<T>]) -> Result<()> {
    let mut seen = HashSet::with_capacity(footprints.len());
    for fp in footprints {
        if !seen.insert(fp.id.as_str()) {
            return Err(Error::Format(format!("duplicate footprint id {:?}", fp.id)));
        }
    }
    Ok(())
}

/// Horizontal span of set pixels `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub y: i64,
    pub x0: i64,
    pub x1: i64,
}

/// Binary occupancy grid anchored at an integer pixel origin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    x0: i64,
    y0: i64,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(rect: PixelRect) -> Self {
        let (width, height) = (rect.width() as usize, rect.height() as usize);
        Self {
            x0: rect.x0,
            y0: rect.y0,
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_pixels(pixels: &[(i64, i64)]) -> Self {
        let rect = pixels.iter().fold(PixelRect::new(0, 0, 0, 0), |acc, &(x, y)| {
            acc.union(&PixelRect::new(x, y, x + 1, y + 1))
        });
        let mut mask = Mask::empty(rect);
        for &(x, y) in pixels {
            mask.set(x, y, true);
        }
        mask
    }

    /// Union of several masks on their joint bounding window.
    pub fn union_of<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Mask {
        let masks: Vec<&Mask> = masks.into_iter().collect();
        let rect = masks
            .iter()
            .fold(PixelRect::new(0, 0, 0, 0), |acc, m| acc.union(&m.rect()));
        let mut out = Mask::empty(rect);
        for m in masks {
            for (x, y) in m.iter_set() {
                out.set(x, y, true);
            }
        }
        out
    }

    pub fn origin(&self) -> (i64, i64) {
        (self.x0, self.y0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Window covered by the grid (not the tight bounds of set pixels).
    pub fn rect(&self) -> PixelRect {
        PixelRect::new(
            self.x0,
            self.y0,
            self.x0 + self.width as i64,
            self.y0 + self.height as i64,
        )
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        if !self.rect().contains(x, y) {
            return false;
        }
        self.bits[(y - self.y0) as usize * self.width + (x - self.x0) as usize]
    }

    /// Panics if `(x, y)` is outside the mask window.
    pub fn set(&mut self, x: i64, y: i64, value: bool) {
        assert!(self.rect().contains(x, y), "pixel ({x}, {y}) outside mask window");
        let idx = (y - self.y0) as usize * self.width + (x - self.x0) as usize;
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Global coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| {
                (
                    self.x0 + (i % self.width) as i64,
                    self.y0 + (i / self.width) as i64,
                )
            })
    }

    pub fn runs(&self) -> Vec<Run> {
        let mut runs = Vec::new();
        for row in 0..self.height {
            let line = &self.bits[row * self.width..(row + 1) * self.width];
            let mut col = 0;
            while col < self.width {
                if !line[col] {
                    col += 1;
                    continue;
                }
                let start = col;
                while col < self.width && line[col] {
                    col += 1;
                }
                runs.push(Run {
                    y: self.y0 + row as i64,
                    x0: self.x0 + start as i64,
                    x1: self.x0 + col as i64,
                });
            }
        }
        runs
    }

    pub fn translated(&self, d: Displacement) -> Mask {
        Mask {
            x0: self.x0 + d.dx as i64,
            y0: self.y0 + d.dy as i64,
            ..self.clone()
        }
    }

    /// Chebyshev dilation by `r` pixels (square structuring element).
    pub fn dilate(&self, r: usize) -> Mask {
        let ri = r as i64;
        let mut out = Mask::empty(self.rect().dilate(ri));
        for run in self.runs() {
            for y in run.y - ri..=run.y + ri {
                for x in run.x0 - ri..run.x1 + ri {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Set pixels with at least one unset 4-neighbour.
    pub fn boundary(&self) -> Vec<(i64, i64)> {
        self.iter_set()
            .filter(|&(x, y)| {
                !(self.get(x - 1, y) && self.get(x + 1, y) && self.get(x, y - 1) && self.get(x, y + 1))
            })
            .collect()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        let overlap = self.rect().intersect(&other.rect());
        let mut n = 0;
        for y in overlap.y0..overlap.y1 {
            for x in overlap.x0..overlap.x1 {
                if self.get(x, y) && other.get(x, y) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        let overlap = self.rect().intersect(&other.rect());
        (overlap.y0..overlap.y1)
            .any(|y| (overlap.x0..overlap.x1).any(|x| self.get(x, y) && other.get(x, y)))
    }
}

/// First pixel index whose center `i + 0.5` is `>= v`.
fn first_center_at_or_after<T: Scalar>(v: T) -> i64 {
    (v - T::lit(0.5))
        .ceil()
        .to_i64()
        .expect("coordinate within i64 range")
}

/// Pixels whose centers lie inside `polygon`.
///
/// A center exactly on an edge is inside for left and top edges and outside
/// for right and bottom edges, so abutting polygons never share a pixel.
pub fn rasterize<T: Scalar>(polygon: &Polygon<T>) -> Result<Mask> {
    if polygon.area() < T::one() {
        return Err(Error::DegenerateGeometry(format!(
            "polygon area {} below one pixel",
            polygon.area()
        )));
    }
    let (lo, hi) = polygon.bounds();
    let rect = PixelRect::new(
        first_center_at_or_after(lo.x),
        first_center_at_or_after(lo.y),
        first_center_at_or_after(hi.x),
        first_center_at_or_after(hi.y),
    );
    let mut mask = Mask::empty(rect);
    let mut crossings: Vec<T> = Vec::new();
    for py in rect.y0..rect.y1 {
        let yc = T::from_int(py) + T::lit(0.5);
        crossings.clear();
        for (a, b) in polygon.edges() {
            if (a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y) {
                crossings.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(|p, q| p.partial_cmp(q).expect("finite crossing"));
        for pair in crossings.chunks_exact(2) {
            let start = first_center_at_or_after(pair[0]).max(rect.x0);
            let end = first_center_at_or_after(pair[1]).min(rect.x1);
            for px in start..end {
                mask.set(px, py, true);
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::DegenerateGeometry(
            "polygon covers no pixel center".into(),
        ));
    }
    Ok(mask)
}

pub fn shift<T: Scalar>(polygon: &Polygon<T>, d: Displacement) -> Polygon<T> {
    polygon.translate(T::from_int(d.dx as i64), T::from_int(d.dy as i64))
}

pub fn mask_iou<T: Scalar>(a: &Mask, b: &Mask) -> T {
    let inter = a.intersection_count(b);
    let union = a.count() + b.count() - inter;
    if union == 0 {
        return T::zero();
    }
    T::from_usize(inter).unwrap() / T::from_usize(union).unwrap()
}

/// Pixel intersection-over-union of the two rasterized polygons.
pub fn iou<T: Scalar>(a: &Polygon<T>, b: &Polygon<T>) -> Result<T> {
    Ok(mask_iou(&rasterize(a)?, &rasterize(b)?))
}

/// Average symmetric surface distance between the polygons' boundary pixels.
pub fn assd<T: Scalar>(a: &Polygon<T>, b: &Polygon<T>) -> Result<T> {
    Ok(mask_assd(&rasterize(a)?, &rasterize(b)?))
}

pub fn mask_assd<T: Scalar>(a: &Mask, b: &Mask) -> T {
    let ba = a.boundary();
    let bb = b.boundary();
    let frame = a.rect().union(&b.rect());
    let to_b = DistanceField::to_pixels(frame, &bb);
    let to_a = DistanceField::to_pixels(frame, &ba);
    let total: f64 = ba.iter().map(|&(x, y)| to_b.distance(x, y)).sum::<f64>()
        + bb.iter().map(|&(x, y)| to_a.distance(x, y)).sum::<f64>();
    T::lit(total / (ba.len() + bb.len()) as f64)
}

/// Exact Euclidean distance transform (lower envelope of parabolas, row then column pass).
struct DistanceField {
    frame: PixelRect,
    sq: Vec<f64>,
}

impl DistanceField {
    fn to_pixels(frame: PixelRect, seeds: &[(i64, i64)]) -> Self {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        let mut sq = vec![f64::INFINITY; w * h];
        for &(x, y) in seeds {
            sq[(y - frame.y0) as usize * w + (x - frame.x0) as usize] = 0.0;
        }
        let mut line = Vec::new();
        for col in 0..w {
            line.clear();
            line.extend((0..h).map(|row| sq[row * w + col]));
            let out = envelope_1d(&line);
            for row in 0..h {
                sq[row * w + col] = out[row];
            }
        }
        for row in 0..h {
            let out = envelope_1d(&sq[row * w..(row + 1) * w]);
            sq[row * w..(row + 1) * w].copy_from_slice(&out);
        }
        Self { frame, sq }
    }

    fn distance(&self, x: i64, y: i64) -> f64 {
        let w = self.frame.width() as usize;
        self.sq[(y - self.frame.y0) as usize * w + (x - self.frame.x0) as usize].sqrt()
    }
}

fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![f64::INFINITY; n];
    let sites: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        return out;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(sites.len());
    let mut starts: Vec<f64> = Vec::with_capacity(sites.len());
    let meet = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sites {
        while let Some(&p) = hull.last() {
            let s = meet(p, q);
            if s <= *starts.last().unwrap() {
                hull.pop();
                starts.pop();
            } else {
                hull.push(q);
                starts.push(s);
                break;
            }
        }
        if hull.is_empty() {
            hull.push(q);
            starts.push(f64::NEG_INFINITY);
        }
    }
    let mut k = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let x = i as f64;
        while k + 1 < hull.len() && starts[k + 1] < x {
            k += 1;
        }
        let p = hull[k];
        let dx = x - p as f64;
        *slot = dx * dx + f[p];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64, side: f64) -> Polygon<f64> {
        Polygon::rect(x, y, x + side, y + side).unwrap()
    }

    fn crossing_inside(poly: &Polygon<f64>, px: f64, py: f64) -> bool {
        let v = poly.vertices();
        let mut inside = false;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            if (a.y > py) != (b.y > py) && px < a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y) {
                inside = !inside;
            }
        }
        inside
    }

    #[test]
    fn square_covers_sixteen_pixels() {
        let mask = rasterize(&square(2.0, 3.0, 4.0)).unwrap();
        assert_eq!(mask.count(), 16);
        assert!(mask.get(2, 3) && mask.get(5, 6));
        assert!(!mask.get(6, 6) && !mask.get(5, 7));
    }

    #[test]
    fn zero_area_triangle_is_degenerate() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert!(matches!(Polygon::new(pts), Err(Error::DegenerateGeometry(_))));
        let tiny = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.9, 0.0),
            Point::new(0.0, 0.9),
        ])
        .unwrap();
        assert!(matches!(rasterize(&tiny), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn bowtie_rejected() {
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 4.0),
        ];
        assert!(matches!(Polygon::new(pts), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn closing_vertex_is_dropped() {
        let pts = vec![
            Point::new(0.0, 0.0),
            Point::new(3.0, 0.0),
            Point::new(3.0, 3.0),
            Point::new(0.0, 0.0),
        ];
        assert_eq!(Polygon::new(pts).unwrap().vertices().len(), 3);
    }

    #[test]
    fn circle_matches_brute_force_center_test() {
        let (cx, cy, r) = (20.3, 17.8, 11.0);
        let pts: Vec<Point<f64>> = (0..180)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 180.0;
                Point::new(cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        let poly = Polygon::new(pts).unwrap();
        let mask = rasterize(&poly).unwrap();
        let mut brute = 0;
        for py in 0..40 {
            for px in 0..40 {
                let inside = crossing_inside(&poly, px as f64 + 0.5, py as f64 + 0.5);
                assert_eq!(inside, mask.get(px, py), "pixel ({px}, {py})");
                brute += inside as usize;
            }
        }
        assert_eq!(mask.count(), brute);
    }

    #[test]
    fn top_left_rule_on_shared_edge() {
        let left = rasterize(&square(0.5, 0.5, 2.0)).unwrap();
        let right = rasterize(&square(2.5, 0.5, 2.0)).unwrap();
        assert_eq!(left.count(), 4);
        assert_eq!(right.count(), 4);
        assert!(!left.intersects(&right));
        assert!(left.get(0, 0) && left.get(1, 1) && !left.get(2, 0) && !left.get(0, 2));
    }

    #[test]
    fn shift_examples() {
        let unit = square(0.0, 0.0, 1.0);
        assert_eq!(shift(&unit, Displacement::ZERO), unit);
        let moved = shift(&unit, Displacement::new(5, -3));
        assert_eq!(moved, square(5.0, -3.0, 1.0));
        assert_eq!(shift(&moved, Displacement::new(-5, 3)), unit);
    }

    #[test]
    fn iou_examples() {
        let a = square(0.0, 0.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(20.0, 0.0, 10.0)).unwrap(), 0.0);
        let b = Polygon::rect(0.0, 5.0, 10.0, 15.0).unwrap();
        assert!((iou(&a, &b).unwrap() - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn assd_matches_quadratic_oracle() {
        let a = square(0.0, 0.0, 8.0);
        let b = square(3.0, 0.0, 8.0);
        assert_eq!(assd(&a, &a).unwrap(), 0.0);
        let (ma, mb) = (rasterize(&a).unwrap(), rasterize(&b).unwrap());
        let (ba, bb) = (ma.boundary(), mb.boundary());
        let nearest = |p: &(i64, i64), set: &[(i64, i64)]| {
            set.iter()
                .map(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let oracle = (ba.iter().map(|p| nearest(p, &bb)).sum::<f64>()
            + bb.iter().map(|p| nearest(p, &ba)).sum::<f64>())
            / (ba.len() + bb.len()) as f64;
        let got: f64 = assd(&a, &b).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!(got > 0.0);
    }

    #[test]
    fn mask_runs_and_dilation() {
        let mask = Mask::from_pixels(&[(1, 1), (2, 1), (4, 1), (2, 2)]);
        assert_eq!(
            mask.runs(),
            vec![
                Run { y: 1, x0: 1, x1: 3 },
                Run { y: 1, x0: 4, x1: 5 },
                Run { y: 2, x0: 2, x1: 3 }
            ]
        );
        let single = Mask::from_pixels(&[(0, 0)]);
        assert_eq!(single.dilate(2).count(), 25);
    }

    #[test]
    fn centroid_and_area() {
        let p = Polygon::rect(1.0f32, 2.0, 5.0, 4.0).unwrap();
        assert_eq!(p.area(), 8.0);
        assert_eq!(p.centroid(), Point::new(3.0, 3.0));
    }
}
