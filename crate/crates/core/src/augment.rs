//! Data augmentation: the single augmented view used by supervised losses
//! and the paired views consumed by the consistency regularizer.
//!
//! Policies are pure given a generator, so batch augmentation parallelizes
//! as long as each sample's substream is derived from (seed, epoch, index).

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::next_gaussian;
use crate::tensor::Tensor;

/// Noise shape for [`AugmentPolicy::VectorJitter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterDistribution {
    /// Perturbation drawn uniformly from the ball of the given radius.
    #[default]
    UniformBall,
    /// Isotropic gaussian noise with standard deviation equal to the radius.
    Gaussian,
}

/// How a sample is perturbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentPolicy {
    /// Returns the input bit-exactly.
    Identity,
    /// Zero-pad `pad` pixels on each spatial edge, crop back to the original
    /// size at a uniform random offset, then mirror horizontally with
    /// probability `flip_prob`. Inputs are `[channels, height, width]`.
    ImageStandard { pad: usize, flip_prob: f64 },
    /// Adds a random perturbation to a flat feature vector.
    VectorJitter { radius: f64, distribution: JitterDistribution },
}

impl AugmentPolicy {
    /// Standard image pipeline: pad 4, flip with probability 1/2.
    pub fn image_standard() -> Self {
        AugmentPolicy::ImageStandard { pad: 4, flip_prob: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentPolicy::ImageStandard { flip_prob, .. } => {
                if !(0.0..=1.0).contains(&flip_prob) {
                    return Err(Error::InvalidParameter(format!(
                        "flip probability must lie in [0, 1], got {flip_prob}"
                    )));
                }
            }
            AugmentPolicy::VectorJitter { radius, .. } => {
                if !(radius >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "jitter radius must be nonnegative, got {radius}"
                    )));
                }
            }
            AugmentPolicy::Identity => {}
        }
        Ok(())
    }
}

/// Two independently augmented views of one source sample. Both share the
/// source's observed label.
#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub x_prime: Tensor,
    pub x_double_prime: Tensor,
    pub label: usize,
    pub source_index: usize,
}

/// One augmented view of `x` under `policy`.
pub fn augment_one<R: Rng>(policy: &AugmentPolicy, x: &Tensor, rng: &mut R) -> Result<Tensor> {
    match *policy {
        AugmentPolicy::Identity => Ok(x.clone()),
        AugmentPolicy::ImageStandard { pad, flip_prob } => {
            let shape = x.shape();
            if shape.len() != 3 {
                return Err(Error::Dimension(format!(
                    "image augmentation needs [channels, height, width], got {shape:?}"
                )));
            }
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            // Draw order is fixed: crop offsets, then the flip coin.
            let oy = rng.gen_range(0..=2 * pad);
            let ox = rng.gen_range(0..=2 * pad);
            let flip = rng.gen::<f64>() < flip_prob;
            let mut out = Tensor::zeros(vec![c, h, w]);
            for ch in 0..c {
                for y in 0..h {
                    // Source row in the virtual zero-padded image.
                    let sy = y + oy;
                    if sy < pad || sy >= h + pad {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx + ox;
                        if sx < pad || sx >= w + pad {
                            continue;
                        }
                        let dst_x = if flip { w - 1 - xx } else { xx };
                        out.data_mut()[(ch * h + y) * w + dst_x] =
                            x.data()[(ch * h + (sy - pad)) * w + (sx - pad)];
                    }
                }
            }
            Ok(out)
        }
        AugmentPolicy::VectorJitter { radius, distribution } => {
            let dims = x.len();
            let mut out = x.clone();
            out.clear_grad();
            match distribution {
                JitterDistribution::UniformBall => {
                    let direction: Vec<f64> =
                        (0..dims).map(|_| next_gaussian(rng)).collect();
                    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let u: f64 = rng.gen();
                    let scale = if norm > 0.0 {
                        radius * u.powf(1.0 / dims as f64) / norm
                    } else {
                        0.0
                    };
                    for (o, d) in out.data_mut().iter_mut().zip(direction) {
                        *o += scale * d;
                    }
                }
                JitterDistribution::Gaussian => {
                    for o in out.data_mut().iter_mut() {
                        *o += radius * next_gaussian(rng);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Two independent views of the same source, sharing its label. Under the
/// identity policy both views equal the input.
pub fn augment_pair<R: Rng>(
    policy: &AugmentPolicy,
    x: &Tensor,
    label: usize,
    source_index: usize,
    rng: &mut R,
) -> Result<AugmentedPair> {
    let x_prime = augment_one(policy, x, rng)?;
    let x_double_prime = augment_one(policy, x, rng)?;
    Ok(AugmentedPair { x_prime, x_double_prime, label, source_index })
}
