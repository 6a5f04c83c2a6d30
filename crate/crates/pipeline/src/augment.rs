//! Joint image / heatmap augmentation: flips and isotropic scaling about the
//! patch center, cropped or padded back to the original size.

use rand::Rng;
use serde::{Deserialize, Serialize};
use uvnet_core::{Real, Tensor};

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            scale_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// No flips, unit scale.
    pub fn disabled() -> Self {
        AugmentConfig {
            hflip: false,
            vflip: false,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && 1.0 <= hi && hi.is_finite()) {
            return Err(PipelineError::Config(format!(
                "scale_range ({lo}, {hi}) must satisfy 0 < lo <= 1 <= hi"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform {
        let hflip = self.hflip && rng.gen_bool(0.5);
        let vflip = self.vflip && rng.gen_bool(0.5);
        let (lo, hi) = self.scale_range;
        let scale = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        Transform {
            hflip,
            vflip,
            scale,
        }
    }
}

/// A concrete augmentation. Flips are applied first, then scaling about
/// the center `((W-1)/2, (H-1)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        hflip: false,
        vflip: false,
        scale: 1.0,
    };

    /// Where a point `(x, y)` of the input lands in the output.
    pub fn apply_point(&self, x: f64, y: f64, height: usize, width: usize) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let x = if self.hflip {
            width as f64 - 1.0 - x
        } else {
            x
        };
        let y = if self.vflip {
            height as f64 - 1.0 - y
        } else {
            y
        };
        (cx + self.scale * (x - cx), cy + self.scale * (y - cy))
    }

    /// Input coordinate sampled by output pixel `(x, y)`.
    fn source(&self, x: usize, y: usize, height: usize, width: usize) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let sx = cx + (x as f64 - cx) / self.scale;
        let sy = cy + (y as f64 - cy) / self.scale;
        let sx = if self.hflip {
            width as f64 - 1.0 - sx
        } else {
            sx
        };
        let sy = if self.vflip {
            height as f64 - 1.0 - sy
        } else {
            sy
        };
        (sx, sy)
    }

    /// Bilinear resampling; coordinates outside the patch take the nearest edge value.
    pub fn apply_image<T: Real>(&self, image: &Tensor<T>) -> Tensor<T> {
        let s = image.shape();
        let (h, w) = (s.height, s.width);
        let mut out = Tensor::zeros(s);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, h, w);
                let sx = sx.clamp(0.0, (w - 1) as f64);
                let sy = sy.clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for n in 0..s.batch {
                    for c in 0..s.channels {
                        let v = |yy, xx| image.at(n, c, yy, xx).to_f64_lossy();
                        let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                        let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                        out.set(n, c, y, x, T::lit(top * (1.0 - fy) + bottom * fy));
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbour resampling; coordinates outside the patch become 0.
    pub fn apply_target<T: Real>(&self, target: &Tensor<T>) -> Tensor<T> {
        let s = target.shape();
        let (h, w) = (s.height, s.width);
        let mut out = Tensor::zeros(s);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, h, w);
                let (rx, ry) = (sx.round(), sy.round());
                if rx < 0.0 || ry < 0.0 || rx > (w - 1) as f64 || ry > (h - 1) as f64 {
                    continue;
                }
                for n in 0..s.batch {
                    for c in 0..s.channels {
                        out.set(n, c, y, x, target.at(n, c, ry as usize, rx as usize));
                    }
                }
            }
        }
        out
    }
}
