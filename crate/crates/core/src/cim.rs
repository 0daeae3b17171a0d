//! Contextual interaction lateral connection.
//!
//! Three parallel branches operate on the lateral input and are summed:
//! a 3×3 depthwise convolution (local spatial interaction), a dilated 3×3
//! depthwise convolution (non-local spatial interaction) and a channel
//! gate with residual. A 1×1 convolution maps the sum to the pyramid width.
//! With every branch disabled the block reduces to that 1×1 convolution,
//! which is exactly the plain FPN lateral.

use crate::error::{config_err, shape_err, Result};
use crate::param::{he_uniform, Param, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const KERNEL: usize = 3;

/// Branch switches. Spatial interaction gates both depthwise branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CimFlags {
    pub use_si: bool,
    pub use_li: bool,
    pub use_ni: bool,
    pub use_ci: bool,
}

impl CimFlags {
    pub const OFF: CimFlags = CimFlags { use_si: false, use_li: false, use_ni: false, use_ci: false };
    pub const ON: CimFlags = CimFlags { use_si: true, use_li: true, use_ni: true, use_ci: true };

    pub fn local(self) -> bool {
        self.use_si && self.use_li
    }

    pub fn non_local(self) -> bool {
        self.use_si && self.use_ni
    }

    pub fn any(self) -> bool {
        self.local() || self.non_local() || self.use_ci
    }
}

#[derive(Clone, Debug)]
pub struct CimBlock {
    pub level: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub reduction: usize,
    pub hidden: usize,
    pub dilation: usize,
    pub dw: ParamId,
    pub dw_dilated: ParamId,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
}

impl CimBlock {
    pub fn param_ids(&self) -> [ParamId; 8] {
        [
            self.dw,
            self.dw_dilated,
            self.fc1_weight,
            self.fc1_bias,
            self.fc2_weight,
            self.fc2_bias,
            self.proj_weight,
            self.proj_bias,
        ]
    }
}

/// `max(1, floor(channels / reduction))`.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

pub fn block_param_count(channels: usize, out_channels: usize, reduction: usize) -> usize {
    let (c, d, h) = (channels, out_channels, hidden_width(channels, reduction));
    9 * c + 9 * c + h * c + h + c * 2 * h + c + d * c + d
}

/// Builds one block. Every weight is He-uniform and every bias zero.
pub fn cim_init(
    store: &mut ParamStore,
    level: usize,
    in_channels: usize,
    out_channels: usize,
    reduction: usize,
    dilation: usize,
    seed: u64,
) -> Result<CimBlock> {
    if reduction == 0 {
        return config_err("cim_init: reduction ratio must be positive");
    }
    if dilation == 0 {
        return config_err("cim_init: dilation must be positive");
    }
    if in_channels == 0 || out_channels == 0 {
        return config_err("cim_init: channel counts must be positive");
    }
    let c = in_channels;
    let h = hidden_width(c, reduction);
    let p = |name: &str| format!("cim.{level}.{name}");
    let weight = |store: &mut ParamStore, name: String, dims: [usize; 4], shape: Vec<usize>, fan_in: usize| {
        let value = he_uniform(dims, fan_in, seed, &name);
        store.insert(Param::new(name, shape, value)?)
    };
    let dw = weight(store, p("dw"), [c, 1, KERNEL, KERNEL], vec![c, 1, KERNEL, KERNEL], KERNEL * KERNEL)?;
    let dw_dilated = weight(store, p("dwd"), [c, 1, KERNEL, KERNEL], vec![c, 1, KERNEL, KERNEL], KERNEL * KERNEL)?;
    let fc1_weight = weight(store, p("fc1.weight"), [h, c, 1, 1], vec![h, c], c)?;
    let fc2_weight = weight(store, p("fc2.weight"), [c, 2 * h, 1, 1], vec![c, 2 * h], 2 * h)?;
    let proj_weight = weight(
        store,
        p("proj.weight"),
        [out_channels, c, 1, 1],
        vec![out_channels, c, 1, 1],
        c,
    )?;
    let bias = |store: &mut ParamStore, name: String, n: usize| store.insert(Param::new(name, vec![n], Tensor::zeros([n, 1, 1, 1]))?);
    let fc1_bias = bias(store, p("fc1.bias"), h)?;
    let fc2_bias = bias(store, p("fc2.bias"), c)?;
    let proj_bias = bias(store, p("proj.bias"), out_channels)?;
    Ok(CimBlock {
        level,
        in_channels: c,
        out_channels,
        reduction,
        hidden: h,
        dilation,
        dw,
        dw_dilated,
        fc1_weight,
        fc1_bias,
        fc2_weight,
        fc2_bias,
        proj_weight,
        proj_bias,
    })
}

/// Intermediate handles of one channel-interaction pass.
#[derive(Clone, Copy, Debug)]
pub struct ChannelInteraction {
    pub avg_hidden: Var,
    pub max_hidden: Var,
    /// Per-channel weights in (0, 1), dims `[N, C, 1, 1]`.
    pub gate: Var,
    pub output: Var,
}

fn check_channels(tape: &Tape, x: Var, block: &CimBlock) -> Result<()> {
    let c = tape.value(x).channels();
    if c != block.in_channels {
        return shape_err(format!(
            "cim level {}: input has {c} channels, block expects {}",
            block.level, block.in_channels
        ));
    }
    Ok(())
}

/// `gate(x) ⊙ x + x`, with the gate computed from shared-FC projections of
/// global average and global max pooling (concatenated in that order).
pub fn channel_interaction(tape: &mut Tape, store: &ParamStore, x: Var, block: &CimBlock) -> Result<ChannelInteraction> {
    check_channels(tape, x, block)?;
    let fc1_w = tape.param(store, block.fc1_weight);
    let fc1_b = tape.param(store, block.fc1_bias);
    let avg = tape.global_avg_pool(x)?;
    let avg = tape.fully_connected(avg, fc1_w, fc1_b)?;
    let avg_hidden = tape.relu(avg);
    let max = tape.global_max_pool(x)?;
    let max = tape.fully_connected(max, fc1_w, fc1_b)?;
    let max_hidden = tape.relu(max);
    let joined = tape.concat_channels(avg_hidden, max_hidden)?;
    let fc2_w = tape.param(store, block.fc2_weight);
    let fc2_b = tape.param(store, block.fc2_bias);
    let logits = tape.fully_connected(joined, fc2_w, fc2_b)?;
    let gate = tape.sigmoid(logits);
    let weighted = tape.broadcast_scale(x, gate)?;
    let output = tape.add(weighted, x)?;
    Ok(ChannelInteraction { avg_hidden, max_hidden, gate, output })
}

/// Branch sum before the output projection. Identity when no branch is enabled.
pub fn cim_mixed(tape: &mut Tape, store: &ParamStore, x: Var, block: &CimBlock, flags: CimFlags) -> Result<Var> {
    check_channels(tape, x, block)?;
    let mut branches = Vec::with_capacity(3);
    if flags.local() {
        let k = tape.param(store, block.dw);
        branches.push(tape.depthwise_conv2d(x, k, 1, (KERNEL - 1) / 2)?);
    }
    if flags.non_local() {
        let k = tape.param(store, block.dw_dilated);
        let d = block.dilation;
        branches.push(tape.depthwise_conv2d(x, k, d, d * (KERNEL - 1) / 2)?);
    }
    if flags.use_ci {
        branches.push(channel_interaction(tape, store, x, block)?.output);
    }
    let mut it = branches.into_iter();
    let Some(mut acc) = it.next() else { return Ok(x) };
    for b in it {
        acc = tape.add(acc, b)?;
    }
    Ok(acc)
}

/// The full lateral connection `f_i(x)`.
pub fn cim_forward(tape: &mut Tape, store: &ParamStore, x: Var, block: &CimBlock, flags: CimFlags) -> Result<Var> {
    let mixed = cim_mixed(tape, store, x, block, flags)?;
    let w = tape.param(store, block.proj_weight);
    let b = tape.param(store, block.proj_bias);
    tape.conv2d(mixed, w, Some(b), 1, 0)
}
