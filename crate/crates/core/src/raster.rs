//! Building-probability rasters and the similarity measures evaluated on them.
//!
//! Pixels outside the raster read as probability zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Displacement, Mask, PixelRect, Run};
use crate::scalar::Scalar;

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";

/// Number of uniform bins used to quantize probabilities for mutual information.
pub const MI_BINS: usize = 32;

/// Single-band probability raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    width: usize,
    height: usize,
    resolution: T,
    values: Vec<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn new(width: usize, height: usize, resolution: T, values: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "raster size {width}x{height} must be positive"
            )));
        }
        if !(resolution > T::zero() && resolution.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolution {resolution} must be positive"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(Error::InvalidParameter(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, resolution: T, value: T) -> Result<Self> {
        Self::new(width, height, resolution, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Meters per pixel.
    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn extent(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i64, self.height as i64)
    }

    pub fn get(&self, x: i64, y: i64) -> T {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return T::zero();
        }
        self.values[y as usize * self.width + x as usize]
    }

    pub fn meters_to_pixels(&self, meters: T) -> T {
        meters / self.resolution
    }

    pub fn row_integral(&self) -> RowIntegral<T> {
        RowIntegral::new(self)
    }

    pub fn write_pmap(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_pmap_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// `PMAP`, u32 width, u32 height, f32 resolution, then f32 values; little-endian.
    pub fn write_pmap_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(PMAP_MAGIC)?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        out.write_all(&(self.resolution.as_f64() as f32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_pmap(path: &Path) -> Result<Self> {
        Self::read_pmap_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_pmap_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated PMAP header".into()))?;
        if &magic != PMAP_MAGIC {
            return Err(Error::Format("missing PMAP magic".into()));
        }
        let width = read_u32(input)? as usize;
        let height = read_u32(input)? as usize;
        let resolution = read_f32(input)?;
        let mut bytes = vec![0u8; width * height * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::Format("truncated PMAP body".into()))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Self::new(width, height, T::lit(resolution as f64), values)
            .map_err(|e| Error::Format(format!("invalid PMAP content: {e}")))
    }

    /// Imports an 8- or 16-bit grayscale PNG, mapping the full integer range onto `[0, 1]`.
    pub fn read_png(path: &Path, resolution: T) -> Result<Self> {
        let img = image::ImageReader::open(path)?
            .decode()
            .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let values: Vec<T> = match img {
            image::DynamicImage::ImageLuma8(buf) => buf
                .into_raw()
                .into_iter()
                .map(|v| T::lit(v as f64 / 255.0))
                .collect(),
            image::DynamicImage::ImageLuma16(buf) => buf
                .into_raw()
                .into_iter()
                .map(|v| T::lit(v as f64 / 65535.0))
                .collect(),
            other => {
                return Err(Error::Format(format!(
                    "expected grayscale PNG, got {:?}",
                    other.color()
                )))
            }
        };
        Self::new(width, height, resolution, values)
    }
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(input: &mut impl Read) -> Result<f32> {
    Ok(f32::from_bits(read_u32(input)?))
}

/// Per-row prefix sums for O(1) run sums under any integer shift.
#[derive(Debug, Clone)]
pub struct RowIntegral<T> {
    width: usize,
    height: usize,
    prefix: Vec<T>,
}

impl<T: Scalar> RowIntegral<T> {
    fn new(map: &ProbMap<T>) -> Self {
        let stride = map.width + 1;
        let mut prefix = vec![T::zero(); stride * map.height];
        for y in 0..map.height {
            let row = &map.values[y * map.width..(y + 1) * map.width];
            let out = &mut prefix[y * stride..(y + 1) * stride];
            for (x, &v) in row.iter().enumerate() {
                out[x + 1] = out[x] + v;
            }
        }
        Self {
            width: map.width,
            height: map.height,
            prefix,
        }
    }

    /// Sum of raster values over `[x0, x1)` on row `y`, clipped to the raster.
    pub fn row_sum(&self, y: i64, x0: i64, x1: i64) -> T {
        if y < 0 || y >= self.height as i64 {
            return T::zero();
        }
        let a = x0.clamp(0, self.width as i64) as usize;
        let b = x1.clamp(0, self.width as i64) as usize;
        if b <= a {
            return T::zero();
        }
        let row = &self.prefix[y as usize * (self.width + 1)..];
        row[b] - row[a]
    }

    pub fn runs_sum(&self, runs: &[Run], d: Displacement) -> T {
        let (dx, dy) = (d.dx as i64, d.dy as i64);
        runs.iter()
            .map(|r| self.row_sum(r.y + dy, r.x0 + dx, r.x1 + dx))
            .sum()
    }

    /// Mean over run pixels shifted by `d`; out-of-raster pixels count as zero.
    pub fn runs_mean(&self, runs: &[Run], pixel_count: usize, d: Displacement) -> T {
        self.runs_sum(runs, d) / T::from_usize(pixel_count).unwrap()
    }
}

/// Mean probability under the mask; this is the normalized correlation of an annotation.
pub fn mean_prob<T: Scalar>(mask: &Mask, map: &ProbMap<T>) -> Result<T> {
    let mut n = 0usize;
    let mut sum = T::zero();
    for (x, y) in mask.iter_set() {
        sum = sum + map.get(x, y);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / T::from_usize(n).unwrap())
}

fn quantize<T: Scalar>(v: T) -> usize {
    ((v.as_f64() * MI_BINS as f64).floor() as usize).min(MI_BINS - 1)
}

/// Window-level statistics reused across many mask placements.
#[derive(Debug, Clone)]
pub struct WindowStats<T> {
    window: PixelRect,
    sum: T,
    hist: [usize; MI_BINS],
}

impl<T: Scalar> WindowStats<T> {
    /// `window` is clipped to the raster; fails when nothing remains.
    pub fn new(map: &ProbMap<T>, window: PixelRect) -> Result<Self> {
        let window = window.intersect(&map.extent());
        if window.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let mut sum = T::zero();
        let mut hist = [0usize; MI_BINS];
        for y in window.y0..window.y1 {
            for x in window.x0..window.x1 {
                let v = map.get(x, y);
                sum = sum + v;
                hist[quantize(v)] += 1;
            }
        }
        Ok(Self { window, sum, hist })
    }

    pub fn window(&self) -> PixelRect {
        self.window
    }

    /// Sum of |mask - map| over the window, mask shifted by `d`.
    ///
    /// Uses sum|m - v| = sum(v) + sum over mask pixels of (1 - 2v).
    pub fn abs_difference(
        &self,
        runs: &[Run],
        integral: &RowIntegral<T>,
        d: Displacement,
    ) -> T {
        let (dx, dy) = (d.dx as i64, d.dy as i64);
        let w = self.window;
        let mut acc = self.sum;
        for r in runs {
            let y = r.y + dy;
            if y < w.y0 || y >= w.y1 {
                continue;
            }
            let a = (r.x0 + dx).max(w.x0);
            let b = (r.x1 + dx).min(w.x1);
            if b <= a {
                continue;
            }
            let len = T::from_i64(b - a).unwrap();
            acc = acc + len - T::lit(2.0) * integral.row_sum(y, a, b);
        }
        acc.max(T::zero())
    }

    /// Mutual information (nats) between the shifted mask indicator and the
    /// quantized raster values over the window.
    pub fn mutual_info(&self, map: &ProbMap<T>, runs: &[Run], d: Displacement) -> T {
        let (dx, dy) = (d.dx as i64, d.dy as i64);
        let w = self.window;
        let mut inside = [0usize; MI_BINS];
        for r in runs {
            let y = r.y + dy;
            if y < w.y0 || y >= w.y1 {
                continue;
            }
            for x in (r.x0 + dx).max(w.x0)..(r.x1 + dx).min(w.x1) {
                inside[quantize(map.get(x, y))] += 1;
            }
        }
        mutual_info_from_counts(&inside, &self.hist)
    }
}

fn mutual_info_from_counts<T: Scalar>(inside: &[usize; MI_BINS], total: &[usize; MI_BINS]) -> T {
    let n: usize = total.iter().sum();
    let n_in: usize = inside.iter().sum();
    let n_out = n - n_in;
    if n == 0 || n_in == 0 || n_out == 0 {
        return T::zero();
    }
    let nf = n as f64;
    let mut mi = 0.0f64;
    for b in 0..MI_BINS {
        let nb = total[b] as f64;
        for (joint, marginal) in [(inside[b], n_in), (total[b] - inside[b], n_out)] {
            if joint == 0 {
                continue;
            }
            let j = joint as f64;
            mi += j / nf * (j * nf / (marginal as f64 * nb)).ln();
        }
    }
    T::lit(mi.max(0.0))
}

/// Sum over the window of |binary(mask) - map|.
pub fn abs_difference<T: Scalar>(mask: &Mask, map: &ProbMap<T>, window: PixelRect) -> Result<T> {
    let stats = WindowStats::new(map, window)?;
    Ok(stats.abs_difference(&mask.runs(), &map.row_integral(), Displacement::ZERO))
}

/// Mutual information between the mask indicator and map values quantized into 32 bins.
pub fn mutual_info<T: Scalar>(mask: &Mask, map: &ProbMap<T>, window: PixelRect) -> Result<T> {
    let stats = WindowStats::new(map, window)?;
    Ok(stats.mutual_info(map, &mask.runs(), Displacement::ZERO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(seed: u64, w: usize, h: usize) -> ProbMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..w * h).map(|_| rng.random::<f64>()).collect();
        ProbMap::new(w, h, 0.3, values).unwrap()
    }

    fn random_mask(seed: u64) -> Mask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<(i64, i64)> = (0..60)
            .map(|_| (rng.random_range(-4..36), rng.random_range(-4..36)))
            .collect();
        Mask::from_pixels(&pixels)
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ProbMap::new(2, 1, 0.3, vec![0.5, 1.5]).is_err());
        assert!(ProbMap::new(2, 1, 0.0, vec![0.5, 0.5]).is_err());
        assert!(ProbMap::<f64>::new(0, 1, 0.3, vec![]).is_err());
    }

    #[test]
    fn mean_prob_examples() {
        let ones = ProbMap::filled(4, 4, 0.3, 1.0).unwrap();
        let mask = Mask::from_pixels(&[(0, 0), (1, 1), (2, 3)]);
        assert_eq!(mean_prob(&mask, &ones).unwrap(), 1.0);

        let map = ProbMap::<f64>::new(3, 1, 0.3, vec![0.2, 0.4, 0.6]).unwrap();
        let row = Mask::from_pixels(&[(0, 0), (1, 0), (2, 0)]);
        assert!((mean_prob(&row, &map).unwrap() - 0.4).abs() < 1e-12);

        let empty = Mask::empty(PixelRect::new(0, 0, 2, 2));
        assert!(matches!(mean_prob(&empty, &map), Err(Error::EmptyMask)));
    }

    #[test]
    fn mean_prob_matches_direct_summation_and_row_integral() {
        let map = random_map(7, 32, 32);
        let integral = map.row_integral();
        for seed in 0..20 {
            let mask = random_mask(seed);
            let d = Displacement::new(seed as i32 % 5 - 2, 3 - seed as i32 % 7);
            let shifted = mask.translated(d);
            let mut sum = 0.0;
            let mut n = 0;
            for (x, y) in shifted.iter_set() {
                if x >= 0 && y >= 0 && x < 32 && y < 32 {
                    sum += map.values()[y as usize * 32 + x as usize];
                }
                n += 1;
            }
            let oracle = sum / n as f64;
            assert!((mean_prob(&shifted, &map).unwrap() - oracle).abs() < 1e-12);
            let fast = integral.runs_mean(&mask.runs(), mask.count(), d);
            assert!((fast - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn abs_difference_examples() {
        let values: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let map = ProbMap::new(4, 4, 0.3, values).unwrap();
        let pixels: Vec<(i64, i64)> = (0..16)
            .filter(|i| i % 3 == 0)
            .map(|i| ((i % 4) as i64, (i / 4) as i64))
            .collect();
        let mask = Mask::from_pixels(&pixels);
        assert_eq!(abs_difference(&mask, &map, map.extent()).unwrap(), 0.0);

        let zeros = ProbMap::filled(4, 4, 0.3, 0.0).unwrap();
        let none = Mask::empty(PixelRect::new(0, 0, 4, 4));
        assert_eq!(abs_difference(&none, &zeros, zeros.extent()).unwrap(), 0.0);

        assert!(matches!(
            abs_difference(&mask, &map, PixelRect::new(10, 10, 12, 12)),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn abs_difference_matches_brute_force() {
        let map = random_map(11, 32, 32);
        for seed in 0..10 {
            let mask = random_mask(100 + seed);
            let window = PixelRect::new(-2, 3, 30, 40);
            let clipped = window.intersect(&map.extent());
            let mut oracle = 0.0;
            for y in clipped.y0..clipped.y1 {
                for x in clipped.x0..clipped.x1 {
                    let m = if mask.get(x, y) { 1.0 } else { 0.0 };
                    oracle += (m - map.get(x, y)).abs();
                }
            }
            let got = abs_difference(&mask, &map, window).unwrap();
            assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        }
    }

    fn entropy(counts: &[f64]) -> f64 {
        let n: f64 = counts.iter().sum();
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / n) * (c / n).ln())
            .sum()
    }

    #[test]
    fn mutual_info_constant_map_is_zero() {
        let map = ProbMap::filled(16, 16, 0.3, 0.7).unwrap();
        let mask = Mask::from_pixels(&[(1, 1), (2, 2), (3, 3)]);
        assert_eq!(mutual_info(&mask, &map, map.extent()).unwrap(), 0.0);
    }

    #[test]
    fn mutual_info_of_thresholded_map_equals_mask_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..48 * 48)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(0.75..1.0)
                } else {
                    rng.random_range(0.0..0.25)
                }
            })
            .collect();
        let map = ProbMap::new(48, 48, 0.3, values).unwrap();
        let pixels: Vec<(i64, i64)> = (0..48 * 48)
            .filter(|&i| map.values()[i] > 0.5)
            .map(|i| ((i % 48) as i64, (i / 48) as i64))
            .collect();
        let mask = Mask::from_pixels(&pixels);
        let n_in = pixels.len() as f64;
        let h = entropy(&[n_in, 48.0 * 48.0 - n_in]);
        let mi = mutual_info(&mask, &map, map.extent()).unwrap();
        assert!((mi - h).abs() < 1e-12, "{mi} vs {h}");
    }

    #[test]
    fn mutual_info_of_independent_mask_is_near_zero() {
        let map = random_map(5, 128, 128);
        let pixels: Vec<(i64, i64)> = (0..128i64)
            .flat_map(|y| (0..128i64).map(move |x| (x, y)))
            .filter(|(x, y)| (x + y) % 2 == 0)
            .collect();
        let mask = Mask::from_pixels(&pixels);
        let mi = mutual_info(&mask, &map, map.extent()).unwrap();
        // Plug-in estimator bias is about (bins - 1) / (2n) nats.
        assert!((0.0..0.01).contains(&mi), "{mi}");
    }

    #[test]
    fn pmap_round_trip_is_bit_exact() {
        let map = ProbMap::new(3, 2, 0.3f32, vec![0.0, 0.1, 0.25, 0.5, 0.999, 1.0]).unwrap();
        let mut buf = Vec::new();
        map.write_pmap_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PMAP");
        assert_eq!(buf.len(), 16 + 6 * 4);
        let back = ProbMap::<f32>::read_pmap_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn pmap_rejects_bad_magic_and_truncation() {
        let mut buf = Vec::new();
        ProbMap::filled(2, 2, 0.3f64, 0.5).unwrap().write_pmap_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ProbMap::<f64>::read_pmap_from(&mut bad.as_slice()), Err(Error::Format(_))));
        buf.truncate(buf.len() - 2);
        assert!(matches!(ProbMap::<f64>::read_pmap_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn png_import_scales_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let img = image::GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        img.save(&path).unwrap();
        let map = ProbMap::<f64>::read_png(&path, 0.3).unwrap();
        assert_eq!(map.values(), &[0.0, 1.0]);
    }
}
