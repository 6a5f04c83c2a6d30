//! Prediction heatmap to discrete detections:
//! Otsu threshold, binary median filter, distance-transform watershed, region extraction.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::targets::Label;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        BinaryMask {
            height,
            width,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Region ids per pixel; 0 is background, regions are numbered `1..=count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel coordinates `(y, x)` of region `id`.
    pub fn region_pixels(&self, id: u32) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub label: Label,
    pub area: usize,
    #[serde(rename = "peak")]
    pub peak_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub otsu_bins: usize,
    pub median_window: usize,
    pub min_area: usize,
    /// Minimum distance between watershed markers, in pixels.
    pub min_separation: f64,
    /// Lower bound applied to the Otsu threshold; 0 keeps plain Otsu.
    pub min_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            otsu_bins: 256,
            median_window: 3,
            min_area: 20,
            min_separation: 8.0,
            min_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtsuResult {
    pub threshold: f64,
    pub mask: BinaryMask,
    /// Set when the histogram has a single occupied bin; the mask is then empty.
    pub degenerate: bool,
}

/// Histogram bin for a value in `[0, 1]`: bin `t` covers `(t/bins, (t+1)/bins]`,
/// with 0 falling in bin 0. Out-of-range values are clamped.
pub fn otsu_bin(v: f64, bins: usize) -> usize {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * bins as f64).ceil() as usize)
        .saturating_sub(1)
        .min(bins - 1)
}

/// Otsu's threshold over a fixed `[0, 1]` histogram. The threshold is the upper
/// edge `(t+1)/bins` of the last background bin; `mask = value > threshold`.
pub fn otsu_threshold<T: Real>(
    channel: &[T],
    height: usize,
    width: usize,
    bins: usize,
) -> Result<OtsuResult> {
    if channel.is_empty() || channel.len() != height * width {
        return Err(invalid(
            "otsu_threshold",
            format!(
                "channel has {} values for a {height}x{width} image",
                channel.len()
            ),
        ));
    }
    if bins < 2 {
        return Err(invalid("otsu_threshold", "bins must be >= 2"));
    }
    let mut hist = vec![0u64; bins];
    for &v in channel {
        hist[otsu_bin(v.to_f64_lossy(), bins)] += 1;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        let max = channel
            .iter()
            .map(|v| v.to_f64_lossy())
            .fold(f64::NEG_INFINITY, f64::max);
        return Ok(OtsuResult {
            threshold: max,
            mask: BinaryMask::new(height, width),
            degenerate: true,
        });
    }

    let total = channel.len() as f64;
    let level = |t: usize| (t as f64 + 0.5) / bins as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(t, &c)| c as f64 * level(t))
        .sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best_t, mut best_var) = (0usize, f64::NEG_INFINITY);
    for t in 0..bins {
        w0 += hist[t] as f64;
        sum0 += hist[t] as f64 * level(t);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    let threshold = (best_t + 1) as f64 / bins as f64;
    let bits = channel
        .iter()
        .map(|&v| otsu_bin(v.to_f64_lossy(), bins) > best_t)
        .collect();
    Ok(OtsuResult {
        threshold,
        mask: BinaryMask {
            height,
            width,
            bits,
        },
        degenerate: false,
    })
}

/// Binary median (majority vote) over a `window × window` neighbourhood with
/// replicated borders.
pub fn median_filter(mask: &BinaryMask, window: usize) -> Result<BinaryMask> {
    if window < 3 || window % 2 == 0 {
        return Err(invalid(
            "median_filter",
            format!("window {window} must be odd and >= 3"),
        ));
    }
    let r = (window / 2) as isize;
    let (h, w) = (mask.height as isize, mask.width as isize);
    let majority = window * window / 2;
    let mut out = BinaryMask::new(mask.height, mask.width);
    for y in 0..h {
        for x in 0..w {
            let mut ones = 0;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    if mask.get(yy, xx) {
                        ones += 1;
                    }
                }
            }
            out.set(y as usize, x as usize, ones > majority);
        }
    }
    Ok(out)
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel. Pixels outside the image count as background.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (mask.height + 2, mask.width + 2);
    let inf = ((h * h + w * w) as f64) * 4.0;
    let mut grid = vec![0.0f64; h * w];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                grid[(y + 1) * w + x + 1] = inf;
            }
        }
    }
    let mut buf = vec![0.0; h.max(w)];
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut buf[..h]);
        for y in 0..h {
            grid[y * w + x] = buf[y];
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&row, &mut buf[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&buf[..w]);
    }
    let mut out = vec![0.0; mask.height * mask.width];
    for y in 0..mask.height {
        for x in 0..mask.width {
            out[y * mask.width + x] = grid[(y + 1) * w + x + 1].sqrt();
        }
    }
    out
}

/// Squared-distance lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = meet(q, v[k]);
        // z[0] = -inf stops the walk at k = 0
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *dq = (q as f64 - p as f64).powi(2) + f[p];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Connected-component labelling in raster order of first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbours(p, h, w, connectivity) {
                if mask.bits[q] && labels[q] == 0 {
                    labels[q] = count;
                    queue.push_back(q);
                }
            }
        }
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count,
    }
}

fn neighbours(p: usize, h: usize, w: usize, conn: Connectivity) -> impl Iterator<Item = usize> {
    let (y, x) = ((p / w) as isize, (p % w) as isize);
    const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    const EIGHT: [(isize, isize); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let offsets: &'static [(isize, isize)] = match conn {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    };
    offsets.iter().filter_map(move |&(dy, dx)| {
        let (yy, xx) = (y + dy, x + dx);
        (yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize)
            .then(|| yy as usize * w + xx as usize)
    })
}

/// Local maxima of the distance transform, at least `min_separation` apart,
/// strongest first.
pub fn find_markers(mask: &BinaryMask, dist: &[f64], min_separation: f64) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let r = min_separation.ceil().max(1.0) as isize;
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = dist[y * w + x];
            if d <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'win: for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    if dist[yy as usize * w + xx as usize] > d {
                        is_max = false;
                        break 'win;
                    }
                }
            }
            if is_max {
                candidates.push((y, x));
            }
        }
    }
    // stable: equal distances keep raster order
    candidates.sort_by(|a, b| {
        dist[b.0 * w + b.1]
            .partial_cmp(&dist[a.0 * w + a.1])
            .unwrap_or(Ordering::Equal)
    });
    let min_sq = min_separation * min_separation;
    let mut markers: Vec<(usize, usize)> = Vec::new();
    for (y, x) in candidates {
        let far = markers.iter().all(|&(my, mx)| {
            let (dy, dx) = (my as f64 - y as f64, mx as f64 - x as f64);
            dy * dy + dx * dx >= min_sq
        });
        if far {
            markers.push((y, x));
        }
    }
    markers
}

#[derive(PartialEq)]
struct FloodItem {
    height: f64,
    order: u64,
    pixel: usize,
}

impl Eq for FloodItem {}

impl Ord for FloodItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on distance; earlier insertion wins ties
        self.height
            .partial_cmp(&other.height)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.order.cmp(&self.order))
    }
}

impl PartialOrd for FloodItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marker-controlled watershed on the negated distance transform. Foreground
/// left unreached by any marker gets one label per 4-connected component.
pub fn watershed_split(mask: &BinaryMask, min_separation: f64) -> LabelMap {
    let (h, w) = (mask.height, mask.width);
    let dist = distance_transform(mask);
    let markers = find_markers(mask, &dist, min_separation);
    let mut labels = vec![0u32; h * w];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    for (i, &(y, x)) in markers.iter().enumerate() {
        let p = y * w + x;
        labels[p] = i as u32 + 1;
        heap.push(FloodItem {
            height: dist[p],
            order,
            pixel: p,
        });
        order += 1;
    }
    while let Some(item) = heap.pop() {
        let lab = labels[item.pixel];
        for q in neighbours(item.pixel, h, w, Connectivity::Four) {
            if mask.bits[q] && labels[q] == 0 {
                labels[q] = lab;
                heap.push(FloodItem {
                    height: dist[q],
                    order,
                    pixel: q,
                });
                order += 1;
            }
        }
    }
    let mut count = markers.len() as u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if mask.bits[start] && labels[start] == 0 {
            count += 1;
            labels[start] = count;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbours(p, h, w, Connectivity::Four) {
                    if mask.bits[q] && labels[q] == 0 {
                        labels[q] = count;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count,
    }
}

/// One detection per region of at least `min_area` pixels.
pub fn extract_detections<T: Real>(
    labels: &LabelMap,
    source_channel: &[T],
    label: Label,
    min_area: usize,
) -> Result<Vec<Detection>> {
    if source_channel.len() != labels.labels.len() {
        return Err(invalid(
            "extract_detections",
            format!(
                "channel has {} values, label map has {}",
                source_channel.len(),
                labels.labels.len()
            ),
        ));
    }
    let n = labels.count as usize;
    let mut area = vec![0usize; n + 1];
    let mut sx = vec![0.0f64; n + 1];
    let mut sy = vec![0.0f64; n + 1];
    let mut peak = vec![f64::NEG_INFINITY; n + 1];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let l = l as usize;
        area[l] += 1;
        sy[l] += (i / labels.width) as f64;
        sx[l] += (i % labels.width) as f64;
        peak[l] = peak[l].max(source_channel[i].to_f64_lossy());
    }
    Ok((1..=n)
        .filter(|&l| area[l] > 0 && area[l] >= min_area)
        .map(|l| Detection {
            x: sx[l] / area[l] as f64,
            y: sy[l] / area[l] as f64,
            label,
            area: area[l],
            peak_value: peak[l],
        })
        .collect())
}

/// Full chain for one channel plane: Otsu (floored at `min_threshold`),
/// median filter, watershed, extraction.
pub fn detect_channel<T: Real>(
    channel: &[T],
    height: usize,
    width: usize,
    label: Label,
    config: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    let clamped: Vec<f64> = channel
        .iter()
        .map(|v| {
            let v = v.to_f64_lossy();
            if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, 1.0)
            }
        })
        .collect();
    let otsu = otsu_threshold(&clamped, height, width, config.otsu_bins)?;
    let mask = if otsu.degenerate {
        otsu.mask
    } else if otsu.threshold < config.min_threshold {
        BinaryMask {
            height,
            width,
            bits: clamped.iter().map(|&v| v > config.min_threshold).collect(),
        }
    } else {
        otsu.mask
    };
    let filtered = median_filter(&mask, config.median_window)?;
    let labels = watershed_split(&filtered, config.min_separation);
    extract_detections(&labels, channel, label, config.min_area)
}

/// Runs [`detect_channel`] on both channels of a `(1, 2, H, W)` prediction.
/// Returns `[mitosis, hard_negative]` detections.
pub fn detect<T: Real>(
    prediction: &Tensor<T>,
    config: &PostprocessConfig,
) -> Result<[Vec<Detection>; 2]> {
    let s = prediction.shape();
    if s.batch != 1 || s.channels != 2 {
        return Err(invalid(
            "detect",
            format!("expected a (1, 2, H, W) prediction, got {s}"),
        ));
    }
    let m = detect_channel(
        prediction.plane(0, 0),
        s.height,
        s.width,
        Label::Mitosis,
        config,
    )?;
    let n = detect_channel(
        prediction.plane(0, 1),
        s.height,
        s.width,
        Label::HardNegative,
        config,
    )?;
    Ok([m, n])
}
