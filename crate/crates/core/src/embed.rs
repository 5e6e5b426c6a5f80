//! Joint embedding networks: two independent U-Nets that project the
//! generated image and the rotation-aligned radar image into a common
//! single-channel space where translation comparison is meaningful.

use ndarray::{s, Array3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::conv::{Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
use crate::nn::layers::{concat_channels, relu, relu_backward, sigmoid, sigmoid_backward};
use crate::nn::Params;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EmbedHyper {
    pub in_channels: usize,
    /// Base channel count of the first encoder convolution.
    pub width: usize,
    /// Raster geometry the pair was built for; six halvings must divide it.
    pub input_height: usize,
    pub input_width: usize,
}

impl EmbedHyper {
    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.width == 0 {
            return Err(Error::invalid("embedding hyperparameters must be positive"));
        }
        if self.input_height % 64 != 0 || self.input_width % 64 != 0 {
            return Err(Error::invalid(
                "embedding input sides must be divisible by 64 (six stride-2 stages)",
            ));
        }
        Ok(())
    }
}

const EMBED_LEVELS: usize = 6;

/// One U-Net: six stride-2 down-convolutions, six transposed convolutions
/// with skip connections between matching stacks, sigmoid head.
#[derive(Debug, Clone)]
pub struct EmbedNet<T: Real> {
    hyper: EmbedHyper,
    enc: Vec<Conv2d<T>>,
    dec: Vec<ConvTranspose2d<T>>,
}

pub struct EmbedCache<T: Real> {
    enc_caches: Vec<ConvCache<T>>,
    enc_acts: Vec<Array3<T>>,
    dec_caches: Vec<ConvTransposeCache<T>>,
    dec_acts: Vec<Array3<T>>,
}

impl<T: Real> EmbedNet<T> {
    pub fn new<R: Rng>(hyper: EmbedHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let w = hyper.width;
        let enc_plan = [hyper.in_channels, w, 2 * w, 4 * w, 4 * w, 4 * w, 4 * w];
        let enc = (0..EMBED_LEVELS)
            .map(|i| Conv2d::new(enc_plan[i], enc_plan[i + 1], 4, 2, 1, rng))
            .collect();
        // decoder inputs carry the skip concatenation from the matching level
        let dec_in = [4 * w, 8 * w, 8 * w, 8 * w, 4 * w, 2 * w];
        let dec_out = [4 * w, 4 * w, 4 * w, 2 * w, w, 1];
        let dec = (0..EMBED_LEVELS)
            .map(|i| ConvTranspose2d::new(dec_in[i], dec_out[i], 4, 2, 1, rng))
            .collect();
        Ok(Self { hyper, enc, dec })
    }

    pub fn hyper(&self) -> &EmbedHyper {
        &self.hyper
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            enc: self.enc.iter().map(Conv2d::zeros_like).collect(),
            dec: self.dec.iter().map(ConvTranspose2d::zeros_like).collect(),
        }
    }

    pub fn forward(&self, input: &Array3<T>) -> (Array3<T>, EmbedCache<T>) {
        let mut enc_caches = Vec::with_capacity(EMBED_LEVELS);
        let mut enc_acts = Vec::with_capacity(EMBED_LEVELS);
        let mut x = input.clone();
        for conv in &self.enc {
            let (y, c) = conv.forward(&x);
            let a = relu(&y);
            enc_caches.push(c);
            enc_acts.push(a.clone());
            x = a;
        }
        let mut dec_caches = Vec::with_capacity(EMBED_LEVELS);
        let mut dec_acts = Vec::with_capacity(EMBED_LEVELS);
        for (i, up) in self.dec.iter().enumerate() {
            let (y, c) = up.forward(&x);
            let a = if i + 1 == EMBED_LEVELS {
                sigmoid(&y)
            } else {
                relu(&y)
            };
            dec_caches.push(c);
            dec_acts.push(a.clone());
            x = if i + 1 == EMBED_LEVELS {
                a
            } else {
                // skip connection: concatenate the matching encoder level
                concat_channels(&[a.view(), enc_acts[EMBED_LEVELS - 2 - i].view()])
            };
        }
        (
            x,
            EmbedCache {
                enc_caches,
                enc_acts,
                dec_caches,
                dec_acts,
            },
        )
    }

    /// Backward pass; returns the gradient of the input tensor.
    pub fn backward(
        &self,
        cache: &EmbedCache<T>,
        d_out: &Array3<T>,
        grad: &mut Self,
    ) -> Array3<T> {
        let mut skip_grads: Vec<Option<Array3<T>>> = vec![None; EMBED_LEVELS];
        let mut dx = d_out.clone();
        for i in (0..EMBED_LEVELS).rev() {
            let d_pre = if i + 1 == EMBED_LEVELS {
                sigmoid_backward(&cache.dec_acts[i], &dx)
            } else {
                relu_backward(&cache.dec_acts[i], &dx)
            };
            let d_in = self.dec[i].backward(&cache.dec_caches[i], &d_pre, &mut grad.dec[i]);
            if i == 0 {
                dx = d_in; // decoder root consumes the bottleneck directly
            } else {
                // split the concatenated gradient into (previous decoder
                // activation, skip from encoder level EMBED_LEVELS - 1 - i)
                let dec_c = self.dec[i - 1].cout;
                let d_dec = d_in.slice(s![..dec_c, .., ..]).to_owned();
                let d_skip = d_in.slice(s![dec_c.., .., ..]).to_owned();
                skip_grads[EMBED_LEVELS - 1 - i] = Some(d_skip);
                dx = d_dec;
            }
        }
        // encoder backward, folding in skip gradients at each level
        for i in (0..EMBED_LEVELS).rev() {
            if let Some(skip) = &skip_grads[i] {
                dx = &dx + skip;
            }
            let d_pre = relu_backward(&cache.enc_acts[i], &dx);
            dx = self.enc[i].backward(&cache.enc_caches[i], &d_pre, &mut grad.enc[i]);
        }
        dx
    }
}

impl<T: Real> Params<T> for EmbedNet<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        for c in &self.enc {
            c.visit(out);
        }
        for d in &self.dec {
            d.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for c in &mut self.enc {
            c.visit_mut(out);
        }
        for d in &mut self.dec {
            d.visit_mut(out);
        }
    }
}

/// Which embedding function to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedId {
    /// Projects the generated image.
    A,
    /// Projects the rotation-aligned radar image.
    B,
}

/// The embedding pair; two structurally identical U-Nets with independent
/// parameters.
#[derive(Debug, Clone)]
pub struct EmbeddingModel<T: Real> {
    pub ea: EmbedNet<T>,
    pub eb: EmbedNet<T>,
}

impl<T: Real> EmbeddingModel<T> {
    pub fn new<R: Rng>(hyper: EmbedHyper, rng: &mut R) -> Result<Self> {
        Ok(Self {
            ea: EmbedNet::new(hyper.clone(), rng)?,
            eb: EmbedNet::new(hyper, rng)?,
        })
    }

    pub fn net(&self, id: EmbedId) -> &EmbedNet<T> {
        match id {
            EmbedId::A => &self.ea,
            EmbedId::B => &self.eb,
        }
    }
}

/// Project an image into the joint embedding space.
pub fn embed<T: Real>(
    model: &EmbeddingModel<T>,
    id: EmbedId,
    img: &ImagePlane<T>,
) -> Result<ImagePlane<T>> {
    let net = model.net(id);
    let h = net.hyper();
    if img.height() != h.input_height || img.width() != h.input_width {
        return Err(Error::shape(format!(
            "embedding expects {}x{} input, got {}x{}",
            h.input_height,
            h.input_width,
            img.height(),
            img.width()
        )));
    }
    if img.channels() != h.in_channels {
        return Err(Error::shape("channel count does not match the embedding"));
    }
    let (out, _) = net.forward(img.data());
    Ok(ImagePlane::from_raw_unchecked(out, *img.grid()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_hyper(side: usize) -> EmbedHyper {
        EmbedHyper {
            in_channels: 1,
            width: 2,
            input_height: side,
            input_width: side,
        }
    }

    fn random_image(side: usize, seed: u64) -> ImagePlane<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(side, side, 1.0).unwrap();
        ImagePlane::new(
            Array3::from_shape_fn((1, side, side), |_| rng.gen::<f64>()),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn embedding_shape_and_range_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = EmbeddingModel::<f64>::new(toy_hyper(64), &mut rng).unwrap();
        let img = random_image(64, 2);
        for id in [EmbedId::A, EmbedId::B] {
            let e = embed(&model, id, &img).unwrap();
            assert_eq!(e.channels(), 1);
            assert_eq!((e.height(), e.width()), (64, 64));
            assert!(e
                .data()
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        }
    }

    #[test]
    fn the_two_nets_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = EmbeddingModel::<f64>::new(toy_hyper(64), &mut rng).unwrap();
        let img = random_image(64, 4);
        let a = embed(&model, EmbedId::A, &img).unwrap();
        let b = embed(&model, EmbedId::B, &img).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = EmbeddingModel::<f64>::new(toy_hyper(64), &mut rng).unwrap();
        let img = random_image(128, 6);
        assert!(embed(&model, EmbedId::A, &img).is_err());
        assert!(EmbedHyper {
            in_channels: 1,
            width: 2,
            input_height: 48,
            input_width: 48,
        }
        .validate_for_test()
        .is_err());
    }

    impl EmbedHyper {
        fn validate_for_test(&self) -> crate::Result<()> {
            self.validate()
        }
    }

    #[test]
    fn embed_gradients_match_finite_differences() {
        use crate::nn::{load_flat, to_flat};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = EmbedNet::<f64>::new(toy_hyper(64), &mut rng).unwrap();
        let img = random_image(64, 8);
        let (out, cache) = net.forward(img.data());
        let probe = Array3::from_shape_fn(out.dim(), |_| rng.gen::<f64>() - 0.5);
        let mut grad = net.zeros_like();
        let d_in = net.backward(&cache, &probe, &mut grad);
        assert_eq!(d_in.dim(), img.data().dim());

        let loss_of = |n: &EmbedNet<f64>| (&n.forward(img.data()).0 * &probe).sum();
        let flat = to_flat(&net);
        let gflat = to_flat(&grad);
        let h = 1e-5;
        let mut idx_rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 10 {
            let idx = idx_rng.gen_range(0..flat.len());
            let mut np = net.clone();
            let mut fp = flat.clone();
            fp[idx] += h;
            load_flat(&mut np, &fp).unwrap();
            let lp = loss_of(&np);
            fp[idx] -= 2.0 * h;
            load_flat(&mut np, &fp).unwrap();
            let lm = loss_of(&np);
            let fd = (lp - lm) / (2.0 * h);
            let an = gflat[idx];
            if fd.abs() < 1e-10 && an.abs() < 1e-10 {
                continue;
            }
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3, "param {idx}: analytic {an}, fd {fd}");
            checked += 1;
        }

        // input gradient check
        let loss_x = |x: &Array3<f64>| (&net.forward(x).0 * &probe).sum();
        for (r, c) in [(5usize, 9usize), (40, 22)] {
            let mut xp = img.data().clone();
            xp[(0, r, c)] += h;
            let mut xm = img.data().clone();
            xm[(0, r, c)] -= h;
            let fd = (loss_x(&xp) - loss_x(&xm)) / (2.0 * h);
            let an = d_in[(0, r, c)];
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3, "input ({r},{c}): analytic {an}, fd {fd}");
        }
    }
}
