//! Synthetic image datasets with controllable intra-class variation.
//!
//! Each class gets a smooth prototype field; samples are the prototype plus
//! a scaled smooth noise field, clamped into [0, 1]. Victim, prior and train
//! splits are disjoint by construction.

use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub victims_per_class: usize,
    pub priors_per_class: usize,
    pub train_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Intra-class variation in [0, 1]: 0 makes all samples of a class equal.
    pub sigma_intra: f64,
    /// Inter-class separation in [0, 1]: 0 collapses all class prototypes
    /// onto a shared field, 1 makes them independent.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            victims_per_class: 8,
            priors_per_class: 3,
            train_per_class: 8,
            channels: 1,
            height: 16,
            width: 16,
            sigma_intra: 0.1,
            separation: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Invalid("synthetic spec sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sigma_intra) {
            return Err(Error::Invalid(format!(
                "sigma_intra must lie in [0, 1], got {}",
                self.sigma_intra
            )));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(Error::Invalid(format!(
                "separation must lie in [0, 1], got {}",
                self.separation
            )));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Victim,
    Prior,
    Train,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Victim => "victim",
            Split::Prior => "prior",
            Split::Train => "train",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "victim" => Some(Split::Victim),
            "prior" => Some(Split::Prior),
            "train" => Some(Split::Train),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: u64,
    pub class: usize,
    pub split: Split,
    pub image: Arc<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub shape: [usize; 3],
    pub classes: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Smooth field in [0, 1]: a coarse uniform grid, bilinearly upsampled.
fn smooth_field(seed: u64, channels: usize, height: usize, width: usize) -> Tensor {
    const COARSE: usize = 4;
    let mut r = rng::rng_from(seed);
    let mut out = Tensor::zeros(&[channels, height, width]);
    for c in 0..channels {
        let mut grid = [[0.0f64; COARSE]; COARSE];
        for row in &mut grid {
            for v in row.iter_mut() {
                *v = r.gen::<f64>();
            }
        }
        for i in 0..height {
            for j in 0..width {
                // Map pixel centers onto the coarse grid.
                let fy = if height > 1 { i as f64 / (height - 1) as f64 } else { 0.0 };
                let fx = if width > 1 { j as f64 / (width - 1) as f64 } else { 0.0 };
                let gy = fy * (COARSE - 1) as f64;
                let gx = fx * (COARSE - 1) as f64;
                let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(COARSE - 1), (x0 + 1).min(COARSE - 1));
                let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
                let top = grid[y0][x0] * (1.0 - tx) + grid[y0][x1] * tx;
                let bottom = grid[y1][x0] * (1.0 - tx) + grid[y1][x1] * tx;
                out.data_mut()[(c * height + i) * width + j] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (c, h, w) = (spec.channels, spec.height, spec.width);

    let shared = smooth_field(rng::derive(spec.seed, stream::SYNTH_SHARED), c, h, w);
    let prototypes: Vec<Tensor> = (0..spec.classes)
        .map(|k| {
            let own = smooth_field(
                rng::derive(rng::derive(spec.seed, stream::SYNTH_PROTO), k as u64),
                c,
                h,
                w,
            );
            let mut proto = Tensor::zeros(&[c, h, w]);
            for ((p, s), o) in proto.data_mut().iter_mut().zip(shared.data()).zip(own.data()) {
                *p = (s * (1.0 - spec.separation) + o * spec.separation).clamp(0.0, 1.0);
            }
            proto
        })
        .collect();

    let splits = [
        (Split::Victim, spec.victims_per_class),
        (Split::Prior, spec.priors_per_class),
        (Split::Train, spec.train_per_class),
    ];
    let mut samples = Vec::new();
    let mut id: u64 = 0;
    for (split_ix, (split, count)) in splits.iter().enumerate() {
        for class in 0..spec.classes {
            for n in 0..*count {
                // One independent noise stream per (split, class, sample).
                let tag = ((split_ix as u64) << 48) | ((class as u64) << 24) | n as u64;
                let noise = smooth_field(
                    rng::derive(rng::derive(spec.seed, stream::SYNTH_SAMPLE), tag),
                    c,
                    h,
                    w,
                );
                let mut img = Tensor::zeros(&[c, h, w]);
                for ((v, p), nz) in img
                    .data_mut()
                    .iter_mut()
                    .zip(prototypes[class].data())
                    .zip(noise.data())
                {
                    *v = (p + spec.sigma_intra * 2.0 * (nz - 0.5)).clamp(0.0, 1.0);
                }
                samples.push(Sample {
                    id,
                    class,
                    split: *split,
                    image: Arc::new(img),
                });
                id += 1;
            }
        }
    }
    Ok(Dataset {
        samples,
        shape: [c, h, w],
        classes: spec.classes,
    })
}
