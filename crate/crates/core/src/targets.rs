//! Box annotations and the two-channel Gaussian heatmap targets built from them.
//!
//! Pixel `(row, col)` sits at continuous coordinate `(x = col, y = row)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mitosis,
    HardNegative,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Mitosis, Label::HardNegative];

    /// Heatmap channel: 0 for mitosis, 1 for hard negatives.
    pub fn channel(self) -> usize {
        match self {
            Label::Mitosis => 0,
            Label::HardNegative => 1,
        }
    }

    pub fn from_channel(c: usize) -> Option<Label> {
        match c {
            0 => Some(Label::Mitosis),
            1 => Some(Label::HardNegative),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitosis => "mitosis",
            Label::HardNegative => "hard_negative",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: Label,
}

impl BoxAnnotation {
    /// Checks ordering and, when `bounds = Some((width, height))`, containment.
    pub fn validate(&self, bounds: Option<(usize, usize)>) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidAnnotation(format!(
                "non-finite coordinate in {self:?}"
            )));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidAnnotation(format!(
                "box requires x_min < x_max and y_min < y_max, got ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if let Some((w, h)) = bounds {
            if self.x_min < 0.0
                || self.y_min < 0.0
                || self.x_max > w as f64
                || self.y_max > h as f64
            {
                return Err(Error::InvalidAnnotation(format!(
                    "box ({}, {}, {}, {}) outside {w}x{h} image",
                    self.x_min, self.y_min, self.x_max, self.y_max
                )));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Result<(f64, f64)> {
        box_centroid(self)
    }
}

pub fn box_centroid(b: &BoxAnnotation) -> Result<(f64, f64)> {
    b.validate(None)?;
    Ok(((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0))
}

/// When deserialized, a missing `truncation_radius` defaults to 3σ and a
/// missing `sigma` to 8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "GaussianSpecFields")]
pub struct GaussianSpec {
    pub sigma: f64,
    pub truncation_radius: f64,
}

#[derive(Deserialize)]
struct GaussianSpecFields {
    #[serde(default = "default_sigma")]
    sigma: f64,
    truncation_radius: Option<f64>,
}

fn default_sigma() -> f64 {
    8.0
}

impl From<GaussianSpecFields> for GaussianSpec {
    fn from(f: GaussianSpecFields) -> Self {
        GaussianSpec {
            sigma: f.sigma,
            truncation_radius: f.truncation_radius.unwrap_or(3.0 * f.sigma),
        }
    }
}

impl GaussianSpec {
    /// Kernel truncated at 3σ.
    pub fn new(sigma: f64) -> Result<Self> {
        let spec = GaussianSpec {
            sigma,
            truncation_radius: 3.0 * sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument {
                op: "GaussianSpec",
                reason: format!("sigma = {} must be > 0", self.sigma),
            });
        }
        if !(self.truncation_radius >= 3.0 * self.sigma) {
            return Err(Error::InvalidArgument {
                op: "GaussianSpec",
                reason: format!(
                    "truncation_radius = {} must be >= 3 sigma = {}",
                    self.truncation_radius,
                    3.0 * self.sigma
                ),
            });
        }
        Ok(())
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            sigma: 8.0,
            truncation_radius: 24.0,
        }
    }
}

/// A labelled centroid in continuous pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
    pub label: Label,
}

/// Two-channel heatmap of shape `(1, 2, height, width)`.
pub type HeatmapTarget<T> = Tensor<T>;

/// Renders one truncated Gaussian per centroid into its label's channel,
/// combining overlaps by max. Each centroid's nearest pixel is pinned to 1.
pub fn render_heatmap<T: Real>(
    centroids: &[Centroid],
    spec: &GaussianSpec,
    height: usize,
    width: usize,
) -> Result<HeatmapTarget<T>> {
    spec.validate()?;
    let mut out = Tensor::<T>::zeros(Shape::new(1, 2, height, width));
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    let r = spec.truncation_radius;
    for c in centroids {
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x < width as f64 && c.y < height as f64) {
            return Err(Error::InvalidAnnotation(format!(
                "centroid ({}, {}) outside {width}x{height} image",
                c.x, c.y
            )));
        }
        let ch = c.label.channel();
        let y0 = (c.y - r).floor().max(0.0) as usize;
        let y1 = ((c.y + r).ceil() as usize).min(height - 1);
        let x0 = (c.x - r).floor().max(0.0) as usize;
        let x1 = ((c.x + r).ceil() as usize).min(width - 1);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let d2 = (xx as f64 - c.x).powi(2) + (yy as f64 - c.y).powi(2);
                if d2 > r * r {
                    continue;
                }
                let v = T::lit((-d2 / two_s2).exp());
                if v > out.at(0, ch, yy, xx) {
                    out.set(0, ch, yy, xx, v);
                }
            }
        }
    }
    for c in centroids {
        let (px, py) = nearest_pixel(c.x, c.y, width, height);
        out.set(0, c.label.channel(), py, px, T::one());
    }
    Ok(out)
}

pub(crate) fn nearest_pixel(x: f64, y: f64, width: usize, height: usize) -> (usize, usize) {
    let px = (x.round().max(0.0) as usize).min(width - 1);
    let py = (y.round().max(0.0) as usize).min(height - 1);
    (px, py)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoxAnnotation {
        BoxAnnotation {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
            label: Label::Mitosis,
        }
    }

    #[test]
    fn centroids() {
        assert_eq!(
            box_centroid(&bx(10.0, 10.0, 20.0, 20.0)).unwrap(),
            (15.0, 15.0)
        );
        assert_eq!(box_centroid(&bx(0.0, 0.0, 1.0, 1.0)).unwrap(), (0.5, 0.5));
        assert!(box_centroid(&bx(5.0, 0.0, 5.0, 1.0)).is_err());
        let (dx, dy) = (3.25, -7.5);
        let a = box_centroid(&bx(10.0, 12.0, 17.0, 30.0)).unwrap();
        let b = box_centroid(&bx(10.0 + dx, 12.0 + dy, 17.0 + dx, 30.0 + dy)).unwrap();
        assert_eq!((b.0 - a.0, b.1 - a.1), (dx, dy));
    }

    #[test]
    fn bounds_check() {
        assert!(bx(0.0, 0.0, 64.0, 64.0).validate(Some((64, 64))).is_ok());
        assert!(bx(0.0, 0.0, 65.0, 10.0).validate(Some((64, 64))).is_err());
        assert!(bx(-1.0, 0.0, 5.0, 10.0).validate(Some((64, 64))).is_err());
    }

    #[test]
    fn value_at_one_sigma() {
        let spec = GaussianSpec::new(4.0).unwrap();
        let c = Centroid {
            x: 16.0,
            y: 16.0,
            label: Label::Mitosis,
        };
        let h = render_heatmap::<f64>(&[c], &spec, 32, 32).unwrap();
        assert_eq!(h.at(0, 0, 16, 16), 1.0);
        assert!((h.at(0, 0, 16, 20) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((h.at(0, 0, 12, 16) - 0.60653).abs() < 1e-5);
        assert!(h.plane(0, 1).iter().all(|&v| v == 0.0));
        // beyond 3σ = 12 px
        assert_eq!(h.at(0, 0, 16, 29), 0.0);
    }

    #[test]
    fn empty_and_out_of_bounds() {
        let spec = GaussianSpec::new(2.0).unwrap();
        let h = render_heatmap::<f32>(&[], &spec, 8, 8).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        let c = Centroid {
            x: 8.0,
            y: 1.0,
            label: Label::HardNegative,
        };
        assert!(render_heatmap::<f32>(&[c], &spec, 8, 8).is_err());
    }

    #[test]
    fn close_pair_combines_by_max() {
        let spec = GaussianSpec::new(3.0).unwrap();
        let cs = [
            Centroid {
                x: 10.0,
                y: 10.0,
                label: Label::Mitosis,
            },
            Centroid {
                x: 11.0,
                y: 10.0,
                label: Label::Mitosis,
            },
        ];
        let h = render_heatmap::<f64>(&cs, &spec, 24, 24).unwrap();
        // grid oracle: max over the two kernels at every pixel
        for y in 0..24 {
            for x in 0..24 {
                let want = cs
                    .iter()
                    .map(|c| {
                        let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                        if d2 > 81.0 {
                            0.0
                        } else {
                            (-d2 / 18.0).exp()
                        }
                    })
                    .fold(0.0, f64::max);
                assert!((h.at(0, 0, y, x) - want).abs() < 1e-12);
                assert!(h.at(0, 0, y, x) <= 1.0);
            }
        }
    }

    #[test]
    fn gaussian_spec_validation() {
        assert!(GaussianSpec::new(0.0).is_err());
        assert!(GaussianSpec {
            sigma: 2.0,
            truncation_radius: 5.0
        }
        .validate()
        .is_err());
    }
}
