//! Macenko stain normalization in optical-density (OD) space.
//!
//! Stains mix linearly in OD, so each tissue pixel is `S · c` for a 3×2 stain
//! matrix `S` and a nonnegative concentration pair `c`. The two stain
//! directions are the robust angular extremes of the OD cloud inside its
//! principal plane.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Added to intensities before the log so that black pixels stay finite.
pub const OD_EPSILON: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(invalid(
                "RgbImage::new",
                format!("{} pixels for a {height}x{width} image", pixels.len()),
            ));
        }
        Ok(RgbImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            height,
            width,
            pixels: vec![rgb; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdImage {
    pub height: usize,
    pub width: usize,
    pub od: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StainParams {
    /// Percentile (0, 50) used for the robust angular extremes.
    pub alpha: f64,
    /// Pixels with any OD component at or below this are treated as background.
    pub beta: f64,
    /// White level.
    pub i0: f64,
}

impl Default for StainParams {
    fn default() -> Self {
        StainParams {
            alpha: 1.0,
            beta: 0.15,
            i0: 255.0,
        }
    }
}

impl StainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 50.0) {
            return Err(invalid(
                "StainParams",
                format!("alpha = {} not in (0, 50)", self.alpha),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid(
                "StainParams",
                format!("beta = {} must be >= 0", self.beta),
            ));
        }
        if !(self.i0 > 0.0) {
            return Err(invalid("StainParams", "i0 must be > 0"));
        }
        Ok(())
    }
}

/// Unit-norm, nonnegative hematoxylin and eosin OD directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StainMatrix {
    pub hematoxylin: [f64; 3],
    pub eosin: [f64; 3],
}

impl StainMatrix {
    /// Widely used H&E reference basis.
    pub const REFERENCE: StainMatrix = StainMatrix {
        hematoxylin: [0.5626, 0.7201, 0.4062],
        eosin: [0.2159, 0.8012, 0.5581],
    };

    /// 99th-percentile concentrations paired with [`StainMatrix::REFERENCE`].
    pub const REFERENCE_MAX_CONCENTRATIONS: [f64; 2] = [1.9705, 1.0308];

    /// Normalizes both columns; rejects negative entries or zero columns.
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<Self> {
        let norm = |v: [f64; 3]| -> Result<[f64; 3]> {
            if v.iter().any(|&c| !(c >= 0.0)) {
                return Err(invalid(
                    "StainMatrix",
                    format!("negative or NaN entry in {v:?}"),
                ));
            }
            let n = dot(v, v).sqrt();
            if n == 0.0 {
                return Err(invalid("StainMatrix", "zero column"));
            }
            Ok([v[0] / n, v[1] / n, v[2] / n])
        };
        Ok(StainMatrix {
            hematoxylin: norm(hematoxylin)?,
            eosin: norm(eosin)?,
        })
    }

    pub fn column(&self, i: usize) -> [f64; 3] {
        if i == 0 {
            self.hematoxylin
        } else {
            self.eosin
        }
    }

    /// Column-major: `[h_r, h_g, h_b, e_r, e_g, e_b]`.
    pub fn to_column_major(&self) -> [f64; 6] {
        let (h, e) = (self.hematoxylin, self.eosin);
        [h[0], h[1], h[2], e[0], e[1], e[2]]
    }

    pub fn from_column_major(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(invalid(
                "StainMatrix::from_column_major",
                format!("expected 6 numbers, got {}", v.len()),
            ));
        }
        StainMatrix::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    /// OD of concentration pair `c`.
    pub fn mix(&self, c: [f64; 2]) -> [f64; 3] {
        let (h, e) = (self.hematoxylin, self.eosin);
        [
            h[0] * c[0] + e[0] * c[1],
            h[1] * c[0] + e[1] * c[1],
            h[2] * c[0] + e[2] * c[1],
        ]
    }
}

impl Serialize for StainMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_column_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StainMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        StainMatrix::from_column_major(&v).map_err(serde::de::Error::custom)
    }
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `−log10((I + ε) / I0)`, floored at 0.
pub fn intensity_to_od(intensity: f64, i0: f64) -> f64 {
    (-((intensity + OD_EPSILON) / i0).log10()).max(0.0)
}

/// Inverse of [`intensity_to_od`], clamped and rounded to `[0, 255]`.
pub fn od_to_intensity(od: f64, i0: f64) -> u8 {
    (i0 * 10f64.powf(-od) - OD_EPSILON)
        .clamp(0.0, 255.0)
        .round() as u8
}

pub fn rgb_to_od(image: &RgbImage, params: &StainParams) -> OdImage {
    let od = image
        .pixels
        .iter()
        .map(|p| p.map(|v| intensity_to_od(v as f64, params.i0)))
        .collect();
    OdImage {
        height: image.height,
        width: image.width,
        od,
    }
}

pub fn od_to_rgb(od: &OdImage, params: &StainParams) -> RgbImage {
    let pixels = od
        .od
        .iter()
        .map(|p| p.map(|v| od_to_intensity(v.max(0.0), params.i0)))
        .collect();
    RgbImage {
        height: od.height,
        width: od.width,
        pixels,
    }
}

/// Linear-interpolation percentile (`p` in [0, 100]) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching unit eigenvectors.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let scale = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2) + off;
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- Jᵀ A J
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = idx.map(|i| a[i][i]);
    let vecs = idx.map(|i| [v[0][i], v[1][i], v[2][i]]);
    (vals, vecs)
}

/// Macenko estimate of the H and E directions.
pub fn estimate_stain_matrix(od: &OdImage, params: &StainParams) -> Result<StainMatrix> {
    params.validate()?;
    let tissue: Vec<[f64; 3]> = od
        .od
        .iter()
        .copied()
        .filter(|p| p.iter().all(|&c| c > params.beta))
        .collect();
    if tissue.len() < 2 {
        return Err(Error::DegenerateStain(format!(
            "{} tissue pixels above OD threshold {} (need at least 2)",
            tissue.len(),
            params.beta
        )));
    }

    let n = tissue.len() as f64;
    let mut mean = [0.0; 3];
    for p in &tissue {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in &tissue {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    let (vals, vecs) = symmetric_eigen3(cov);
    if !(vals[1] - vals[2] > 1e-10 * vals[0].abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateStain(format!(
            "OD scatter has no well-defined principal plane (eigenvalues {:.3e}, {:.3e}, {:.3e})",
            vals[0], vals[1], vals[2]
        )));
    }
    let mut e1 = vecs[0];
    if e1.iter().sum::<f64>() < 0.0 {
        e1 = e1.map(|v| -v);
    }
    let e2 = vecs[1];

    let angles: Vec<f64> = tissue
        .iter()
        .map(|&p| dot(p, e2).atan2(dot(p, e1)))
        .collect();
    let lo = percentile(&angles, params.alpha);
    let hi = percentile(&angles, 100.0 - params.alpha);
    let direction = |phi: f64| -> [f64; 3] {
        let v = [
            e1[0] * phi.cos() + e2[0] * phi.sin(),
            e1[1] * phi.cos() + e2[1] * phi.sin(),
            e1[2] * phi.cos() + e2[2] * phi.sin(),
        ];
        let v = if v.iter().sum::<f64>() < 0.0 {
            v.map(|c| -c)
        } else {
            v
        };
        v.map(|c| c.max(0.0))
    };
    let (a, b) = (direction(lo), direction(hi));
    if dot(a, a) == 0.0 || dot(b, b) == 0.0 {
        return Err(Error::DegenerateStain(
            "extreme stain direction vanished".into(),
        ));
    }
    // Hematoxylin absorbs red light most strongly: larger red OD comes first.
    let (h, e) = if a[0] / dot(a, a).sqrt() >= b[0] / dot(b, b).sqrt() {
        (a, b)
    } else {
        (b, a)
    };
    StainMatrix::new(h, e)
}

/// Per-pixel nonnegative least-squares-clamped concentrations `(c_H, c_E)`.
pub fn compute_concentrations(od: &OdImage, stain: &StainMatrix) -> Result<Vec<[f64; 2]>> {
    let (h, e) = (stain.hematoxylin, stain.eosin);
    let (g00, g01, g11) = (dot(h, h), dot(h, e), dot(e, e));
    let det = g00 * g11 - g01 * g01;
    if !(det > 1e-10 * g00 * g11) {
        return Err(invalid(
            "compute_concentrations",
            "stain matrix columns are (nearly) collinear",
        ));
    }
    Ok(od
        .od
        .iter()
        .map(|&p| {
            let (bh, be) = (dot(h, p), dot(e, p));
            let ch = (g11 * bh - g01 * be) / det;
            let ce = (g00 * be - g01 * bh) / det;
            [ch.max(0.0), ce.max(0.0)]
        })
        .collect())
}

/// Re-expresses `image` in `target_stain` with concentrations rescaled so
/// their 99th percentiles match `target_max_concentrations`.
pub fn normalize_to_target(
    image: &RgbImage,
    target_stain: &StainMatrix,
    target_max_concentrations: [f64; 2],
    params: &StainParams,
) -> Result<RgbImage> {
    let od = rgb_to_od(image, params);
    let source = estimate_stain_matrix(&od, params)?;
    let conc = compute_concentrations(&od, &source)?;
    let mut scale = [0.0; 2];
    for k in 0..2 {
        let ch: Vec<f64> = conc.iter().map(|c| c[k]).collect();
        let src_max = percentile(&ch, 99.0);
        if !(src_max > 1e-12) {
            return Err(Error::DegenerateStain(format!(
                "99th-percentile concentration of stain {k} is zero"
            )));
        }
        scale[k] = target_max_concentrations[k] / src_max;
    }
    let out = OdImage {
        height: od.height,
        width: od.width,
        od: conc
            .iter()
            .map(|c| target_stain.mix([c[0] * scale[0], c[1] * scale[1]]))
            .collect(),
    };
    Ok(od_to_rgb(&out, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn od_of_white_and_analytic_value() {
        assert_eq!(intensity_to_od(255.0, 255.0), 0.0);
        assert!((intensity_to_od(24.5, 255.0) - 1.0).abs() < 1e-12);
        assert!(od_to_intensity(0.0, 255.0) >= 254);
        // 255 * 0.1 - 1 = 24.5
        assert!((24..=25).contains(&od_to_intensity(1.0, 255.0)));
    }

    #[test]
    fn od_roundtrip_within_one_level() {
        let p = StainParams::default();
        for v in 0..=255u8 {
            let back = od_to_intensity(intensity_to_od(v as f64, p.i0), p.i0);
            assert!((back as i32 - v as i32).abs() <= 1, "{v} -> {back}");
        }
    }

    #[test]
    fn od_to_intensity_is_monotone() {
        let mut prev = 255u8;
        for i in 0..400 {
            let v = od_to_intensity(i as f64 * 0.01, 255.0);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]];
        let (vals, vecs) = symmetric_eigen3(m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for k in 0..3 {
            let v = vecs[k];
            let mv = [dot(m[0], v), dot(m[1], v), dot(m[2], v)];
            for i in 0..3 {
                assert!((mv[i] - vals[k] * v[i]).abs() < 1e-12);
            }
            assert!((dot(v, v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn white_image_is_degenerate() {
        let img = RgbImage::filled(8, 8, [255, 255, 255]);
        let od = rgb_to_od(&img, &StainParams::default());
        assert!(matches!(
            estimate_stain_matrix(&od, &StainParams::default()),
            Err(Error::DegenerateStain(_))
        ));
    }

    #[test]
    fn single_stain_is_degenerate() {
        let s = StainMatrix::REFERENCE;
        let od = OdImage {
            height: 1,
            width: 50,
            od: (0..50)
                .map(|i| s.mix([0.5 + i as f64 * 0.02, 0.0]))
                .collect(),
        };
        assert!(estimate_stain_matrix(&od, &StainParams::default()).is_err());
    }

    #[test]
    fn concentration_basics() {
        let s = StainMatrix::REFERENCE;
        let od = OdImage {
            height: 1,
            width: 2,
            od: vec![s.hematoxylin, [0.0; 3]],
        };
        let c = compute_concentrations(&od, &s).unwrap();
        assert!((c[0][0] - 1.0).abs() < 1e-12 && c[0][1].abs() < 1e-12);
        assert_eq!(c[1], [0.0, 0.0]);
        let collinear = StainMatrix::new([1.0, 1.0, 0.0], [2.0, 2.0, 0.0]).unwrap();
        assert!(compute_concentrations(&od, &collinear).is_err());
    }

    #[test]
    fn column_major_json() {
        let json = serde_json::to_string(&StainMatrix::REFERENCE).unwrap();
        assert_eq!(json, "[0.5626,0.7201,0.4062,0.2159,0.8012,0.5581]");
        let back: StainMatrix = serde_json::from_str(&json).unwrap();
        for k in 0..3 {
            assert!((back.hematoxylin[k] - StainMatrix::REFERENCE.hematoxylin[k]).abs() < 1e-3);
        }
        assert!(serde_json::from_str::<StainMatrix>("[1,2,3]").is_err());
    }

    #[test]
    fn params_validation() {
        assert!(StainParams {
            alpha: 50.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StainParams {
            beta: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
