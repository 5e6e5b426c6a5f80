//! Pose-conditioned image generator: takes the rotation-aligned radar image
//! and the overhead image, and produces a radar-appearance image at the
//! overhead image's pose.
//!
//! Encoder of four stride-2 convolutions, nine residual blocks at the
//! bottleneck, and four transposed convolutions back to the input size, with
//! a saturating sigmoid head.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::conv::{Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
use crate::nn::layers::{
    concat_channels, l1_mean, relu, relu_backward, sigmoid, sigmoid_backward, ResBlock,
    ResBlockCache,
};
use crate::nn::Params;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorHyper {
    pub radar_channels: usize,
    pub sat_channels: usize,
    /// Base channel count of the first convolution.
    pub width: usize,
}

impl GeneratorHyper {
    fn validate(&self) -> Result<()> {
        if self.radar_channels == 0 || self.sat_channels == 0 || self.width == 0 {
            return Err(Error::invalid("generator hyperparameters must be positive"));
        }
        Ok(())
    }
}

const GENERATOR_DOWNS: usize = 4;
const GENERATOR_BLOCKS: usize = 9;

#[derive(Debug, Clone)]
pub struct GeneratorModel<T: Real> {
    hyper: GeneratorHyper,
    downs: Vec<Conv2d<T>>,
    blocks: Vec<ResBlock<T>>,
    ups: Vec<ConvTranspose2d<T>>,
}

pub struct GeneratorCache<T: Real> {
    down_caches: Vec<ConvCache<T>>,
    down_acts: Vec<Array3<T>>,
    block_caches: Vec<ResBlockCache<T>>,
    up_caches: Vec<ConvTransposeCache<T>>,
    up_acts: Vec<Array3<T>>, // relu outputs of ups 0..n-1, sigmoid output last
}

impl<T: Real> GeneratorModel<T> {
    pub fn new<R: Rng>(hyper: GeneratorHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let w = hyper.width;
        let c_in = hyper.radar_channels + hyper.sat_channels;
        let down_plan = [c_in, w, 2 * w, 4 * w, 4 * w];
        let downs = (0..GENERATOR_DOWNS)
            .map(|i| Conv2d::new(down_plan[i], down_plan[i + 1], 4, 2, 1, rng))
            .collect();
        let blocks = (0..GENERATOR_BLOCKS)
            .map(|_| ResBlock::new(4 * w, rng))
            .collect();
        let up_plan = [4 * w, 4 * w, 2 * w, w, hyper.radar_channels];
        let ups = (0..GENERATOR_DOWNS)
            .map(|i| ConvTranspose2d::new(up_plan[i], up_plan[i + 1], 4, 2, 1, rng))
            .collect();
        Ok(Self {
            hyper,
            downs,
            blocks,
            ups,
        })
    }

    pub fn hyper(&self) -> &GeneratorHyper {
        &self.hyper
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            downs: self.downs.iter().map(Conv2d::zeros_like).collect(),
            blocks: self.blocks.iter().map(ResBlock::zeros_like).collect(),
            ups: self.ups.iter().map(ConvTranspose2d::zeros_like).collect(),
        }
    }

    /// Forward pass on the concatenated `(radar, overhead)` tensor.
    pub fn forward(&self, input: &Array3<T>) -> (Array3<T>, GeneratorCache<T>) {
        let mut down_caches = Vec::with_capacity(GENERATOR_DOWNS);
        let mut down_acts = Vec::with_capacity(GENERATOR_DOWNS);
        let mut x = input.clone();
        for conv in &self.downs {
            let (y, c) = conv.forward(&x);
            let a = relu(&y);
            down_caches.push(c);
            down_acts.push(a.clone());
            x = a;
        }
        let mut block_caches = Vec::with_capacity(GENERATOR_BLOCKS);
        for block in &self.blocks {
            let (y, c) = block.forward(&x);
            block_caches.push(c);
            x = y;
        }
        let mut up_caches = Vec::with_capacity(GENERATOR_DOWNS);
        let mut up_acts = Vec::with_capacity(GENERATOR_DOWNS);
        for (i, up) in self.ups.iter().enumerate() {
            let (y, c) = up.forward(&x);
            let a = if i + 1 == GENERATOR_DOWNS {
                sigmoid(&y)
            } else {
                relu(&y)
            };
            up_caches.push(c);
            up_acts.push(a.clone());
            x = a;
        }
        (
            x,
            GeneratorCache {
                down_caches,
                down_acts,
                block_caches,
                up_caches,
                up_acts,
            },
        )
    }

    /// Backward pass; returns the gradient of the concatenated input tensor.
    pub fn backward(
        &self,
        cache: &GeneratorCache<T>,
        d_out: &Array3<T>,
        grad: &mut Self,
    ) -> Array3<T> {
        let mut dx = d_out.clone();
        for i in (0..GENERATOR_DOWNS).rev() {
            let d_pre = if i + 1 == GENERATOR_DOWNS {
                sigmoid_backward(&cache.up_acts[i], &dx)
            } else {
                relu_backward(&cache.up_acts[i], &dx)
            };
            dx = self.ups[i].backward(&cache.up_caches[i], &d_pre, &mut grad.ups[i]);
        }
        for i in (0..GENERATOR_BLOCKS).rev() {
            dx = self.blocks[i].backward(&cache.block_caches[i], &dx, &mut grad.blocks[i]);
        }
        for i in (0..GENERATOR_DOWNS).rev() {
            let d_pre = relu_backward(&cache.down_acts[i], &dx);
            dx = self.downs[i].backward(&cache.down_caches[i], &d_pre, &mut grad.downs[i]);
        }
        dx
    }
}

impl<T: Real> Params<T> for GeneratorModel<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        for c in &self.downs {
            c.visit(out);
        }
        for b in &self.blocks {
            b.visit(out);
        }
        for u in &self.ups {
            u.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for c in &mut self.downs {
            c.visit_mut(out);
        }
        for b in &mut self.blocks {
            b.visit_mut(out);
        }
        for u in &mut self.ups {
            u.visit_mut(out);
        }
    }
}

pub(crate) fn check_generator_inputs<T: Real>(
    model: &GeneratorModel<T>,
    rotated_radar: &ImagePlane<T>,
    sat: &ImagePlane<T>,
) -> Result<()> {
    if rotated_radar.grid() != sat.grid() {
        return Err(Error::shape("generator inputs must share one grid"));
    }
    let h = model.hyper();
    if rotated_radar.channels() != h.radar_channels || sat.channels() != h.sat_channels {
        return Err(Error::shape("channel counts do not match the generator"));
    }
    if rotated_radar.height() % 16 != 0 || rotated_radar.width() % 16 != 0 {
        return Err(Error::invalid(
            "generator input sides must be divisible by 16",
        ));
    }
    Ok(())
}

/// Generate a radar-appearance image at the overhead image's pose. The
/// rotated radar input is expected to be heading-aligned already.
pub fn generate<T: Real>(
    model: &GeneratorModel<T>,
    rotated_radar: &ImagePlane<T>,
    sat: &ImagePlane<T>,
) -> Result<ImagePlane<T>> {
    check_generator_inputs(model, rotated_radar, sat)?;
    let input = concat_channels(&[rotated_radar.data().view(), sat.data().view()]);
    let (out, _) = model.forward(&input);
    Ok(ImagePlane::from_raw_unchecked(out, *sat.grid()))
}

/// Mean absolute pixel difference between the generated image and the
/// shift-aligned target.
pub fn loss_g<T: Real>(generated: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<T> {
    if generated.data().dim() != target.data().dim() {
        return Err(Error::shape("loss_g inputs must have identical shape"));
    }
    Ok(l1_mean(generated.data(), target.data()))
}
