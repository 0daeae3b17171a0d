//! Shallow position information extraction.
//!
//! The shallowest backbone map is pooled down to each target level's size
//! along two paths: adaptive average pooling carries position, adaptive
//! max pooling carries saliency. Each pooled map is reweighted by a
//! learnable elementwise tensor, the two are summed, and a 1×1 convolution
//! projects the result to the level's channel count.

use crate::error::{config_err, shape_err, Result};
use crate::param::{he_uniform, Param, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which pooling branches contribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SpiemFlags {
    /// Position pooling (average branch).
    pub use_pp: bool,
    /// Saliency pooling (max branch).
    pub use_sp: bool,
}

impl SpiemFlags {
    pub const OFF: SpiemFlags = SpiemFlags { use_pp: false, use_sp: false };
    pub const ON: SpiemFlags = SpiemFlags { use_pp: true, use_sp: true };

    pub fn any(self) -> bool {
        self.use_pp || self.use_sp
    }
}

/// Target of one injection: pyramid level index, channels and spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub level: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct SpiemLevel {
    pub spec: LevelSpec,
    pub in_channels: usize,
    pub wbar: ParamId,
    pub wtilde: ParamId,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
}

impl SpiemLevel {
    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.wbar, self.wtilde, self.proj_weight, self.proj_bias]
    }

    pub fn output_dims(&self, batch: usize) -> [usize; 4] {
        [batch, self.spec.channels, self.spec.height, self.spec.width]
    }
}

/// Scalar parameter count of one level.
pub fn level_param_count(in_channels: usize, spec: &LevelSpec) -> usize {
    2 * in_channels * spec.height * spec.width + spec.channels * in_channels + spec.channels
}

/// Registers one [`SpiemLevel`] per spec. Elementwise weights start at one,
/// projections are He-uniform with zero bias.
pub fn spiem_init(store: &mut ParamStore, in_channels: usize, levels: &[LevelSpec], seed: u64) -> Result<Vec<SpiemLevel>> {
    if levels.is_empty() {
        return config_err("spiem_init: no levels configured");
    }
    if in_channels == 0 {
        return config_err("spiem_init: input channel count must be positive");
    }
    levels
        .iter()
        .map(|spec| {
            let i = spec.level;
            let pooled = [1, in_channels, spec.height, spec.width];
            let wbar = store.insert(Param::new(format!("spiem.{i}.wbar"), pooled.to_vec(), Tensor::ones(pooled))?)?;
            let wtilde = store.insert(Param::new(format!("spiem.{i}.wtilde"), pooled.to_vec(), Tensor::ones(pooled))?)?;
            let wname = format!("spiem.{i}.proj.weight");
            let kdims = [spec.channels, in_channels, 1, 1];
            let proj_weight = store.insert(Param::new(&wname, kdims.to_vec(), he_uniform(kdims, in_channels, seed, &wname))?)?;
            let proj_bias = store.insert(Param::new(
                format!("spiem.{i}.proj.bias"),
                vec![spec.channels],
                Tensor::zeros([spec.channels, 1, 1, 1]),
            )?)?;
            Ok(SpiemLevel { spec: *spec, in_channels, wbar, wtilde, proj_weight, proj_bias })
        })
        .collect()
}

/// Pooled and reweighted sum before projection; `None` when both branches are off.
pub fn spiem_pooled(tape: &mut Tape, store: &ParamStore, f1: Var, level: &SpiemLevel, flags: SpiemFlags) -> Result<Option<Var>> {
    let dims = tape.value(f1).dims();
    if dims[1] != level.in_channels {
        return shape_err(format!(
            "spiem level {}: input has {} channels, projection expects {}",
            level.spec.level, dims[1], level.in_channels
        ));
    }
    let (h, w) = (level.spec.height, level.spec.width);
    let position = if flags.use_pp {
        let pooled = tape.adaptive_avg_pool(f1, h, w)?;
        let weight = tape.param(store, level.wbar);
        Some(tape.hadamard(pooled, weight)?)
    } else {
        None
    };
    let saliency = if flags.use_sp {
        let pooled = tape.adaptive_max_pool(f1, h, w)?;
        let weight = tape.param(store, level.wtilde);
        Some(tape.hadamard(pooled, weight)?)
    } else {
        None
    };
    Ok(match (position, saliency) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    })
}

/// `F*_i`: the injection for one level. With both branches disabled the
/// result is an exact zero tensor (the projection bias is suppressed too).
pub fn spiem_forward(tape: &mut Tape, store: &ParamStore, f1: Var, level: &SpiemLevel, flags: SpiemFlags) -> Result<Var> {
    match spiem_pooled(tape, store, f1, level, flags)? {
        Some(mixed) => {
            let weight = tape.param(store, level.proj_weight);
            let bias = tape.param(store, level.proj_bias);
            tape.conv2d(mixed, weight, Some(bias), 1, 0)
        }
        None => {
            let batch = tape.value(f1).batch();
            Ok(tape.constant(Tensor::zeros(level.output_dims(batch))))
        }
    }
}
