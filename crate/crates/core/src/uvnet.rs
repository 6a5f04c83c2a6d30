//! UV-Net: a U-Net style encoder/decoder whose 3×3 conv pairs are replaced
//! by V-blocks.
//!
//! A V-block with `f` input channels runs four stages. Each stage maps the
//! running tensor through a 1×1 conv with `f` filters and a 3×3 conv with
//! `k = f/4` filters, then appends those `k` channels to the running tensor,
//! so the channel trace is `f, f+k, f+2k, f+3k, 2f`.
//!
//! Network layout for `depth = D`, with level widths `f_i = base_f · 2^i`:
//!
//! ```text
//! stem      3×3 conv   in_channels -> f_0
//! enc i     V-block    f_i -> 2 f_i   (skip i), then 2×2 maxpool
//! bottleneck V-block   f_D -> 2 f_D
//! dec i     upsample, concat skip i (4 f_i + 2 f_i), 1×1 conv -> f_i, V-block -> 2 f_i
//! head      1×1 conv   2 f_0 -> out_channels (linear)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

pub const VBLOCK_STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VBlockConfig {
    pub f: usize,
    pub k: usize,
    pub stages: usize,
}

impl VBlockConfig {
    /// Block for `f` input channels; `f` must be a positive multiple of 4.
    pub fn new(f: usize) -> Result<Self> {
        if f == 0 || f % 4 != 0 {
            return Err(invalid(
                "VBlockConfig",
                format!("f = {f} must be a positive multiple of 4"),
            ));
        }
        Ok(VBlockConfig {
            f,
            k: f / 4,
            stages: VBLOCK_STAGES,
        })
    }

    /// Running channel count before the first stage and after each stage.
    pub fn channel_trace(&self) -> Vec<usize> {
        (0..=self.stages).map(|i| self.f + i * self.k).collect()
    }

    pub fn out_channels(&self) -> usize {
        self.f + self.stages * self.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UVNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_f: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for UVNetConfig {
    fn default() -> Self {
        UVNetConfig {
            in_channels: 3,
            out_channels: 2,
            base_f: 16,
            depth: 4,
            seed: 0,
        }
    }
}

impl UVNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("UVNetConfig", "channel counts must be positive"));
        }
        if self.base_f == 0 || self.base_f % 4 != 0 {
            return Err(invalid(
                "UVNetConfig",
                format!("base_f = {} must be a positive multiple of 4", self.base_f),
            ));
        }
        if self.depth == 0 {
            return Err(invalid("UVNetConfig", "depth must be >= 1"));
        }
        Ok(())
    }

    /// Input channels of the V-block at `level` (`level == depth` is the bottleneck).
    pub fn level_f(&self, level: usize) -> usize {
        self.base_f << level
    }

    /// Checks that `height × width` halves cleanly `depth` times.
    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let (mut h, mut w) = (height, width);
        for level in 0..self.depth {
            if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                return Err(Error::IndivisibleLevel {
                    level,
                    height: h,
                    width: w,
                });
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl ConvLayer {
    fn create<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Result<Self> {
        // He-uniform on fan-in.
        let fan_in = (in_ch * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let wshape = Shape::new(out_ch, in_ch, kernel, kernel);
        let data = (0..wshape.numel())
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        let weight = store.insert(format!("{name}.weight"), Tensor::from_vec(wshape, data)?)?;
        let bias = store.insert(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(out_ch, 1, 1, 1)),
        )?;
        Ok(ConvLayer {
            weight,
            bias,
            padding: kernel / 2,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, b, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct VBlockStage {
    /// 1×1 conv, running width -> f.
    pub reduce: ConvLayer,
    /// 3×3 conv, f -> k.
    pub grow: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct VBlock {
    pub config: VBlockConfig,
    pub stages: Vec<VBlockStage>,
}

impl VBlock {
    pub fn create<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        config: VBlockConfig,
    ) -> Result<Self> {
        let trace = config.channel_trace();
        let stages = (0..config.stages)
            .map(|s| {
                let reduce = ConvLayer::create(
                    store,
                    rng,
                    &format!("{name}.stage{s}.reduce"),
                    trace[s],
                    config.f,
                    1,
                )?;
                let grow = ConvLayer::create(
                    store,
                    rng,
                    &format!("{name}.stage{s}.grow"),
                    config.f,
                    config.k,
                    3,
                )?;
                Ok(VBlockStage { reduce, grow })
            })
            .collect::<Result<_>>()?;
        Ok(VBlock { config, stages })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
    ) -> Result<Var> {
        let channels = tape.value(input).shape().channels;
        if channels != self.config.f {
            return Err(invalid(
                "vblock_forward",
                format!(
                    "input has {channels} channels, block expects f = {}",
                    self.config.f
                ),
            ));
        }
        let mut running = input;
        for stage in &self.stages {
            let h = stage.reduce.forward(tape, store, running)?;
            let h = tape.relu(h);
            let h = stage.grow.forward(tape, store, h)?;
            let h = tape.relu(h);
            running = tape.concat_channels(running, h)?;
        }
        Ok(running)
    }
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    reduce: ConvLayer,
    block: VBlock,
}

/// Network topology plus its weights.
#[derive(Clone, Debug)]
pub struct UVNet<T> {
    config: UVNetConfig,
    params: ParamStore<T>,
    stem: ConvLayer,
    encoder: Vec<VBlock>,
    bottleneck: VBlock,
    decoder: Vec<DecoderLevel>,
    head: ConvLayer,
}

impl<T: Real> UVNet<T> {
    /// Builds the network with seeded He-uniform weights and zero biases.
    pub fn build(config: UVNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let f0 = config.base_f;
        let stem = ConvLayer::create(&mut params, &mut rng, "stem", config.in_channels, f0, 3)?;
        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let vc = VBlockConfig::new(config.level_f(level))?;
            encoder.push(VBlock::create(
                &mut params,
                &mut rng,
                &format!("enc{level}"),
                vc,
            )?);
        }
        let bottleneck = VBlock::create(
            &mut params,
            &mut rng,
            "bottleneck",
            VBlockConfig::new(config.level_f(config.depth))?,
        )?;
        // Decoder levels are stored deepest first, in execution order.
        let mut decoder = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let f = config.level_f(level);
            let from_below = 2 * config.level_f(level + 1);
            let skip = encoder[level].config.out_channels();
            let reduce = ConvLayer::create(
                &mut params,
                &mut rng,
                &format!("dec{level}.reduce"),
                from_below + skip,
                f,
                1,
            )?;
            let block = VBlock::create(
                &mut params,
                &mut rng,
                &format!("dec{level}"),
                VBlockConfig::new(f)?,
            )?;
            decoder.push(DecoderLevel { reduce, block });
        }
        let head = ConvLayer::create(
            &mut params,
            &mut rng,
            "head",
            2 * f0,
            config.out_channels,
            1,
        )?;
        Ok(UVNet {
            config,
            params,
            stem,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UVNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Every V-block in execution order.
    pub fn vblocks(&self) -> impl Iterator<Item = &VBlock> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.bottleneck))
            .chain(self.decoder.iter().map(|d| &d.block))
    }

    /// Records the forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let shape = tape.value(input).shape();
        if shape.channels != self.config.in_channels {
            return Err(invalid(
                "uvnet_forward",
                format!(
                    "input has {} channels, model expects {}",
                    shape.channels, self.config.in_channels
                ),
            ));
        }
        self.config.check_spatial(shape.height, shape.width)?;
        let p = &self.params;

        let x = self.stem.forward(tape, p, input)?;
        let mut x = tape.relu(x);
        let mut skips = Vec::with_capacity(self.config.depth);
        for block in &self.encoder {
            let s = block.forward(tape, p, x)?;
            skips.push(s);
            x = tape.maxpool2d(s)?;
        }
        x = self.bottleneck.forward(tape, p, x)?;
        for dec in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = tape.upsample2x(x);
            let cat = tape.concat_channels(up, skip)?;
            let r = dec.reduce.forward(tape, p, cat)?;
            let r = tape.relu(r);
            x = dec.block.forward(tape, p, r)?;
        }
        debug_assert!(skips.is_empty());
        self.head.forward(tape, p, x)
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vblock_trace_for_f16() {
        let c = VBlockConfig::new(16).unwrap();
        assert_eq!(c.k, 4);
        assert_eq!(c.channel_trace(), vec![16, 20, 24, 28, 32]);
        assert_eq!(VBlockConfig::new(4).unwrap().out_channels(), 8);
        assert!(VBlockConfig::new(6).is_err());
        assert!(VBlockConfig::new(0).is_err());
    }

    #[test]
    fn spatial_check_names_level() {
        let cfg = UVNetConfig {
            depth: 3,
            base_f: 4,
            ..Default::default()
        };
        match cfg.check_spatial(20, 20) {
            Err(Error::IndivisibleLevel { level, height, .. }) => {
                assert_eq!(level, 2);
                assert_eq!(height, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cfg.check_spatial(24, 16).is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = UVNetConfig {
            base_f: 6,
            ..Default::default()
        };
        assert!(UVNet::<f64>::build(bad).is_err());
        let bad = UVNetConfig {
            depth: 0,
            ..Default::default()
        };
        assert!(UVNet::<f64>::build(bad).is_err());
    }
}
