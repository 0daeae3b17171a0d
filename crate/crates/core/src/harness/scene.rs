//! Synthetic scenes of densely packed small objects with center heatmaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_size: usize,
    pub channels: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    /// Downsampling from image to heatmap resolution.
    pub heatmap_stride: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            min_objects: 6,
            max_objects: 14,
            min_object_size: 2,
            max_object_size: 5,
            heatmap_stride: 4,
        }
    }
}

impl SceneSpec {
    pub fn heatmap_size(&self) -> usize {
        self.image_size / self.heatmap_stride
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.channels == 0 || self.heatmap_stride == 0 {
            return config_err("scene: image size, channels and heatmap stride must be positive");
        }
        if self.image_size % self.heatmap_stride != 0 {
            return config_err(format!(
                "scene: image size {} not divisible by heatmap stride {}",
                self.image_size, self.heatmap_stride
            ));
        }
        if self.min_objects > self.max_objects || self.min_object_size > self.max_object_size {
            return config_err("scene: min exceeds max in object count or size range");
        }
        if self.min_object_size == 0 {
            return config_err("scene: object size must be positive");
        }
        if self.max_object_size > self.image_size {
            return config_err(format!(
                "scene: object size {} exceeds image size {}",
                self.max_object_size, self.image_size
            ));
        }
        Ok(())
    }
}

/// One placed object: top-left corner and side length in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneObject {
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct Scene {
    /// `[1, channels, size, size]`, values in [0, 1].
    pub image: Tensor,
    /// `[1, 1, size/stride, size/stride]`, values in {0, 1}.
    pub heatmap: Tensor,
    pub objects: Vec<SceneObject>,
}

/// Square objects of random colour on a faint noise background. The
/// heatmap marks the cell containing each object's center.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.image_size;
    let mut image = Tensor::from_vec(
        [1, spec.channels, s, s],
        (0..spec.channels * s * s).map(|_| rng.gen_range(0.0..0.15)).collect(),
    )?;
    let hs = spec.heatmap_size();
    let mut heatmap = Tensor::zeros([1, 1, hs, hs]);
    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let size = rng.gen_range(spec.min_object_size..=spec.max_object_size);
        let y = rng.gen_range(0..=s - size);
        let x = rng.gen_range(0..=s - size);
        let colour: Vec<f64> = (0..spec.channels).map(|_| rng.gen_range(0.5..1.0)).collect();
        for (c, &v) in colour.iter().enumerate() {
            for yy in y..y + size {
                for xx in x..x + size {
                    image.set([0, c, yy, xx], v);
                }
            }
        }
        // center at (y + size/2); doubled coordinates keep it integral
        let cy = (2 * y + size) / (2 * spec.heatmap_stride);
        let cx = (2 * x + size) / (2 * spec.heatmap_stride);
        heatmap.set([0, 0, cy.min(hs - 1), cx.min(hs - 1)], 1.0);
        objects.push(SceneObject { y, x, size });
    }
    Ok(Scene { image, heatmap, objects })
}

/// Stack per-sample `[1, C, H, W]` tensors along the batch axis.
pub fn stack(samples: &[Tensor]) -> Result<Tensor> {
    let Some(first) = samples.first() else {
        return config_err("stack: empty batch");
    };
    let [_, c, h, w] = first.dims();
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for t in samples {
        first.expect_same_dims(t, "stack")?;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([samples.len(), c, h, w], data)
}

/// `batch` scenes whose seeds are drawn from `rng`.
pub fn gen_batch(spec: &SceneSpec, batch: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    let scenes = (0..batch)
        .map(|_| gen_scene(spec, rng.gen()))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<Tensor> = scenes.iter().map(|s| s.image.clone()).collect();
    let maps: Vec<Tensor> = scenes.into_iter().map(|s| s.heatmap).collect();
    Ok((stack(&images)?, stack(&maps)?))
}
