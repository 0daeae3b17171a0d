//! Full LR-FPN: backbone stub, SPIEM injection, CIM laterals, top-down
//! fusion, extra stride-2 layers and a heatmap head on the finest level.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cim::{cim_forward, cim_init, CimBlock, CimFlags};
use crate::error::{config_err, shape_err, Error, Result};
use crate::harness::scene::{gen_batch, SceneSpec};
use crate::kernels::ConvPath;
use crate::param::{he_uniform, param_rng, sgd_step, Param, ParamId, ParamStore};
use crate::spiem::{spiem_forward, spiem_init, LevelSpec, SpiemFlags, SpiemLevel};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of backbone stages (F₁..F₄).
pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub stage_channels: [usize; STAGES],
    pub pyramid_channels: usize,
    pub reduction: usize,
    pub dilation: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 64,
            stage_channels: [8, 16, 32, 64],
            pyramid_channels: 16,
            reduction: 4,
            dilation: 2,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by the end-to-end gradient check.
    pub fn miniature() -> Self {
        Self {
            input_size: 16,
            stage_channels: [2, 4, 8, 16],
            pyramid_channels: 4,
            ..Self::default()
        }
    }

    /// Spatial side of F₁..F₄ (strides 2, 4, 8, 16).
    pub fn feature_sizes(&self) -> [usize; STAGES] {
        std::array::from_fn(|k| self.input_size >> (k + 1))
    }

    /// Spatial side of P₁..P₅.
    pub fn pyramid_sizes(&self) -> [usize; 5] {
        let f = self.feature_sizes();
        let p3 = f[3];
        let p4 = p3.div_ceil(2);
        [f[1], f[2], p3, p4, p4.div_ceil(2)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.pyramid_channels == 0 || self.stage_channels.contains(&0) {
            return config_err("model: channel counts must be positive");
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return config_err(format!("model: input size {} must be a positive multiple of 16", self.input_size));
        }
        let p3 = self.input_size / 16;
        if p3 > 1 && p3 % 2 == 1 {
            return config_err(format!("model: coarsest backbone side {p3} is odd, extra layers cannot halve it"));
        }
        if self.reduction == 0 || self.dilation == 0 {
            return config_err("model: reduction and dilation must be positive");
        }
        Ok(())
    }
}

/// Ablation switches for both modules. All-off is the plain FPN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AblationFlags {
    pub spiem: SpiemFlags,
    pub cim: CimFlags,
}

pub const FLAG_TOKENS: [&str; 6] = ["sp", "pp", "si", "ci", "li", "ni"];

/// Named rows of the ablation lattice with their token sets.
pub const LATTICE: [(&str, &str); 10] = [
    ("baseline", ""),
    ("+SPIEM", "sp,pp"),
    ("+CIM", "si,ci"),
    ("+CIM+SP", "sp,si,ci"),
    ("+CIM+PP", "pp,si,ci"),
    ("+SPIEM+SI", "sp,pp,si"),
    ("+SPIEM+CI", "sp,pp,ci"),
    ("+SPIEM+CI+NI", "sp,pp,ci,ni"),
    ("+SPIEM+CI+LI", "sp,pp,ci,li"),
    ("full", "sp,pp,si,ci"),
];

impl AblationFlags {
    pub const BASELINE: AblationFlags = AblationFlags { spiem: SpiemFlags::OFF, cim: CimFlags::OFF };
    pub const FULL: AblationFlags = AblationFlags { spiem: SpiemFlags::ON, cim: CimFlags::ON };

    /// Parse a token list separated by `,` or `+`. `si` enables both
    /// depthwise branches; `li`/`ni` enable one. Empty or `none` is the
    /// baseline.
    pub fn from_tokens(s: &str) -> Result<Self> {
        let mut f = AblationFlags::BASELINE;
        for tok in s.split([',', '+']).map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "none" => {}
                "sp" => f.spiem.use_sp = true,
                "pp" => f.spiem.use_pp = true,
                "si" => {
                    f.cim.use_si = true;
                    f.cim.use_li = true;
                    f.cim.use_ni = true;
                }
                "li" => {
                    f.cim.use_si = true;
                    f.cim.use_li = true;
                }
                "ni" => {
                    f.cim.use_si = true;
                    f.cim.use_ni = true;
                }
                "ci" => f.cim.use_ci = true,
                other => {
                    return config_err(format!(
                        "unknown flag token '{other}'; valid tokens are {{{}}}",
                        FLAG_TOKENS.join(", ")
                    ))
                }
            }
        }
        Ok(f)
    }

    /// Accepts a lattice label (`full`, `+SPIEM+CI`, ...) or a token list.
    pub fn parse(s: &str) -> Result<Self> {
        match LATTICE.iter().find(|(label, _)| *label == s) {
            Some((_, tokens)) => Self::from_tokens(tokens),
            None => Self::from_tokens(s),
        }
    }

    /// Flags with branch switches that cannot take effect cleared.
    pub fn normalized(self) -> Self {
        let mut cim = self.cim;
        cim.use_li = cim.local();
        cim.use_ni = cim.non_local();
        cim.use_si = cim.use_li || cim.use_ni;
        AblationFlags { spiem: self.spiem, cim }
    }

    /// Stable ordering key: sp=1, pp=2, li=4, ni=8, ci=16.
    pub fn bits(self) -> u8 {
        let n = self.normalized();
        u8::from(n.spiem.use_sp)
            | u8::from(n.spiem.use_pp) << 1
            | u8::from(n.cim.use_li) << 2
            | u8::from(n.cim.use_ni) << 3
            | u8::from(n.cim.use_ci) << 4
    }

    /// Canonical token string joined with `+`, `none` for the baseline.
    pub fn tokens(self) -> String {
        let n = self.normalized();
        let parts: Vec<&str> = [
            (n.spiem.use_sp, "sp"),
            (n.spiem.use_pp, "pp"),
            (n.cim.use_li, "li"),
            (n.cim.use_ni, "ni"),
            (n.cim.use_ci, "ci"),
        ]
        .into_iter()
        .filter_map(|(on, t)| on.then_some(t))
        .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }

    /// Lattice label when the flags match a named row, else the token string.
    pub fn label(self) -> String {
        LATTICE
            .iter()
            .find(|(_, tokens)| Self::from_tokens(tokens).ok().map(|f| f.bits()) == Some(self.bits()))
            .map(|(label, _)| label.to_string())
            .unwrap_or_else(|| self.tokens())
    }

    pub fn lattice() -> Vec<AblationFlags> {
        LATTICE
            .iter()
            .map(|(_, t)| Self::from_tokens(t).expect("lattice tokens are valid"))
            .collect()
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Convolution weight and bias handles plus geometry.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    /// He-uniform weight, zero bias, registered as `{prefix}.weight` / `{prefix}.bias`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Self> {
        let wname = format!("{prefix}.weight");
        let dims = [cout, cin, kernel, kernel];
        let weight = store.insert(Param::new(&wname, dims.to_vec(), he_uniform(dims, cin * kernel * kernel, seed, &wname))?)?;
        let bias = store.insert(Param::new(format!("{prefix}.bias"), vec![cout], Tensor::zeros([cout, 1, 1, 1]))?)?;
        Ok(Self { weight, bias, stride, padding: kernel / 2 })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

/// Handles produced by one pyramid pass.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid {
    /// Backbone maps F₁..F₄.
    pub features: [Var; STAGES],
    /// Lateral outputs P̄₁, P̄₂ and P₃ (= f₂, f₃, f₄ applied).
    pub laterals: [Var; 3],
    /// P₁..P₅.
    pub levels: [Var; 5],
}

pub struct LrFpnModel {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub store: ParamStore,
    pub backbone: [ConvLayer; STAGES],
    /// Injections for levels 2, 3, 4.
    pub spiem: Vec<SpiemLevel>,
    /// Laterals f₂, f₃, f₄.
    pub cim: Vec<CimBlock>,
    /// P₃→P₄ and P₄→P₅.
    pub extra: [ConvLayer; 2],
    pub head: ConvLayer,
    pub conv_path: ConvPath,
}

impl LrFpnModel {
    pub fn new(config: ModelConfig, flags: AblationFlags, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ch = config.stage_channels;
        let mut cin = config.input_channels;
        let mut backbone = Vec::with_capacity(STAGES);
        for (k, &cout) in ch.iter().enumerate() {
            backbone.push(ConvLayer::init(&mut store, &format!("backbone.{}", k + 1), cin, cout, 3, 2, seed)?);
            cin = cout;
        }
        let sizes = config.feature_sizes();
        let levels: Vec<LevelSpec> = (1..STAGES)
            .map(|k| LevelSpec { level: k + 1, channels: ch[k], height: sizes[k], width: sizes[k] })
            .collect();
        let spiem = spiem_init(&mut store, ch[0], &levels, seed)?;
        let d = config.pyramid_channels;
        let cim = (1..STAGES)
            .map(|k| cim_init(&mut store, k + 1, ch[k], d, config.reduction, config.dilation, seed))
            .collect::<Result<Vec<_>>>()?;
        let extra = [
            ConvLayer::init(&mut store, "extra.4", d, d, 3, 2, seed)?,
            ConvLayer::init(&mut store, "extra.5", d, d, 3, 2, seed)?,
        ];
        let head = ConvLayer::init(&mut store, "head", d, 1, 1, 1, seed)?;
        Ok(Self {
            config,
            flags,
            store,
            backbone: backbone.try_into().expect("four stages"),
            spiem,
            cim,
            extra,
            head,
            conv_path: ConvPath::Optimized,
        })
    }

    pub fn tape(&self) -> Tape {
        Tape::with_conv_path(self.conv_path)
    }

    pub fn expected_input_dims(&self, batch: usize) -> [usize; 4] {
        [batch, self.config.input_channels, self.config.input_size, self.config.input_size]
    }

    /// F₁..F₄: four 3×3 stride-2 convolutions, each followed by relu.
    pub fn features(&self, tape: &mut Tape, images: Var) -> Result<[Var; STAGES]> {
        let dims = tape.value(images).dims();
        if dims != self.expected_input_dims(dims[0]) {
            return shape_err(format!(
                "model input dims {dims:?}, expected {:?}",
                self.expected_input_dims(dims[0])
            ));
        }
        let mut x = images;
        let mut out = Vec::with_capacity(STAGES);
        for layer in &self.backbone {
            let z = layer.forward(tape, &self.store, x)?;
            x = tape.relu(z);
            out.push(x);
        }
        Ok(out.try_into().expect("four stages"))
    }

    /// Lateral input `F_i + F*_i` for backbone stage `k` (0-based, k ≥ 1).
    fn lateral_input(&self, tape: &mut Tape, f: &[Var; STAGES], k: usize) -> Result<Var> {
        if !self.flags.spiem.any() {
            return Ok(f[k]);
        }
        let inj = spiem_forward(tape, &self.store, f[0], &self.spiem[k - 1], self.flags.spiem)?;
        tape.add(f[k], inj)
    }

    pub fn build_pyramid(&self, tape: &mut Tape, f: [Var; STAGES]) -> Result<Pyramid> {
        check_feature_chain(tape, &f)?;
        let cim = self.flags.cim;
        let x4 = self.lateral_input(tape, &f, 3)?;
        let p3 = cim_forward(tape, &self.store, x4, &self.cim[2], cim)?;
        let x3 = self.lateral_input(tape, &f, 2)?;
        let p2_bar = cim_forward(tape, &self.store, x3, &self.cim[1], cim)?;
        let up3 = tape.upsample_nearest2x(p3);
        let p2 = tape.add(p2_bar, up3)?;
        let x2 = self.lateral_input(tape, &f, 1)?;
        let p1_bar = cim_forward(tape, &self.store, x2, &self.cim[0], cim)?;
        let up2 = tape.upsample_nearest2x(p2);
        let p1 = tape.add(p1_bar, up2)?;
        let p4 = self.extra[0].forward(tape, &self.store, p3)?;
        let p5 = self.extra[1].forward(tape, &self.store, p4)?;
        Ok(Pyramid { features: f, laterals: [p1_bar, p2_bar, p3], levels: [p1, p2, p3, p4, p5] })
    }

    pub fn forward(&self, tape: &mut Tape, images: &Tensor) -> Result<Pyramid> {
        let x = tape.constant(images.clone());
        let f = self.features(tape, x)?;
        self.build_pyramid(tape, f)
    }

    /// Per-cell object probability on P₁.
    pub fn head(&self, tape: &mut Tape, p1: Var) -> Result<Var> {
        let logits = self.head.forward(tape, &self.store, p1)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward_loss(&self, tape: &mut Tape, images: &Tensor, targets: &Tensor) -> Result<Var> {
        let pyr = self.forward(tape, images)?;
        let pred = self.head(tape, pyr.levels[0])?;
        check_target(tape.value(pred).dims(), targets)?;
        tape.bce_loss(pred, targets)
    }

    pub fn scene_spec(&self) -> SceneSpec {
        scene_spec_for(&self.config)
    }
}

/// Scene layout matching a model's input and P₁ resolution.
pub fn scene_spec_for(config: &ModelConfig) -> SceneSpec {
    SceneSpec {
        image_size: config.input_size,
        channels: config.input_channels,
        heatmap_stride: 4,
        ..SceneSpec::default()
    }
}

pub(crate) fn check_target(pred: [usize; 4], targets: &Tensor) -> Result<()> {
    if pred != targets.dims() {
        return shape_err(format!("target dims {:?} differ from head output dims {pred:?}", targets.dims()));
    }
    Ok(())
}

/// Every backbone map must be exactly twice the size of the next.
pub(crate) fn check_feature_chain(tape: &Tape, f: &[Var; STAGES]) -> Result<()> {
    for k in 0..STAGES - 1 {
        let [_, _, h, w] = tape.value(f[k]).dims();
        let [_, _, hn, wn] = tape.value(f[k + 1]).dims();
        if h != 2 * hn || w != 2 * wn {
            return shape_err(format!(
                "F{} is {h}x{w} but F{} is {hn}x{wn}; each level must halve the previous",
                k + 1,
                k + 2
            ));
        }
    }
    let [_, _, h4, w4] = tape.value(f[STAGES - 1]).dims();
    if (h4 > 1 && h4 % 2 == 1) || (w4 > 1 && w4 % 2 == 1) {
        return shape_err(format!("F4 is {h4}x{w4}; odd sizes cannot be halved by the extra layers"));
    }
    Ok(())
}

/// A model that can be trained by [`train`].
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn new_tape(&self) -> Tape;
    fn loss(&self, tape: &mut Tape, images: &Tensor, targets: &Tensor) -> Result<Var>;
    fn scene_spec(&self) -> SceneSpec;
}

impl Trainable for LrFpnModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn new_tape(&self) -> Tape {
        self.tape()
    }

    fn loss(&self, tape: &mut Tape, images: &Tensor, targets: &Tensor) -> Result<Var> {
        self.forward_loss(tape, images, targets)
    }

    fn scene_spec(&self) -> SceneSpec {
        LrFpnModel::scene_spec(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Scene layout; `None` derives it from the model's input size.
    pub scene: Option<SceneSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch: 4, lr: 0.01, momentum: 0.9, weight_decay: 1e-4, scene: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return config_err("train: steps must be at least 1");
        }
        if self.batch == 0 {
            return config_err("train: batch must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("train: learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("train: momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config_err("train: weight decay must be non-negative");
        }
        Ok(())
    }
}

/// Per-step losses of one run (step 1 first).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

impl TrainTrace {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().expect("at least one step")
    }

    pub fn bit_eq(&self, other: &TrainTrace) -> bool {
        self.losses.len() == other.losses.len()
            && self.losses.iter().zip(&other.losses).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Momentum SGD over freshly generated scene batches. Scene seeds come
/// from a stream keyed by `seed`, so any two models trained with the same
/// seed see identical data.
pub fn train<M: Trainable>(model: &mut M, cfg: &TrainConfig, seed: u64) -> Result<TrainTrace> {
    cfg.validate()?;
    let spec = cfg.scene.unwrap_or_else(|| model.scene_spec());
    let mut scene_rng = param_rng(seed, "scenes");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (images, targets) = gen_batch(&spec, cfg.batch, &mut scene_rng)?;
        let mut tape = model.new_tape();
        let loss = model.loss(&mut tape, &images, &targets)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(value);
        tape.backward(loss, model.store_mut())?;
        sgd_step(model.store_mut(), cfg.lr, cfg.momentum, cfg.weight_decay);
    }
    Ok(TrainTrace { losses })
}

/// Build a fresh model from `seed` and train it.
pub fn train_toy(model_cfg: &ModelConfig, cfg: &TrainConfig, flags: AblationFlags, seed: u64) -> Result<(TrainTrace, LrFpnModel)> {
    cfg.validate()?;
    let mut model = LrFpnModel::new(model_cfg.clone(), flags, seed)?;
    let trace = train(&mut model, cfg, seed)?;
    Ok((trace, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pyramid_shapes() {
        let model = LrFpnModel::new(ModelConfig::default(), AblationFlags::FULL, 0).unwrap();
        let mut tape = model.tape();
        let images = Tensor::full(model.expected_input_dims(2), 0.3);
        let pyr = model.forward(&mut tape, &images).unwrap();
        let want = [16, 8, 4, 2, 1];
        for (k, v) in pyr.levels.iter().enumerate() {
            assert_eq!(tape.value(*v).dims(), [2, 16, want[k], want[k]], "P{}", k + 1);
        }
        assert_eq!(model.config.pyramid_sizes(), want);
    }

    #[test]
    fn zero_everything_gives_zero_pyramid() {
        let mut model = LrFpnModel::new(ModelConfig::miniature(), AblationFlags::FULL, 1).unwrap();
        for p in model.store.iter_mut() {
            if p.name.ends_with("bias") {
                p.value.fill(0.0);
            }
        }
        let mut tape = model.tape();
        let x = tape.constant(Tensor::zeros(model.expected_input_dims(1)));
        let f = model.features(&mut tape, x).unwrap();
        let pyr = model.build_pyramid(&mut tape, f).unwrap();
        for v in pyr.levels {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn non_halving_chain_names_pair() {
        let model = LrFpnModel::new(ModelConfig::miniature(), AblationFlags::FULL, 1).unwrap();
        let mut tape = model.tape();
        let f = [
            tape.constant(Tensor::zeros([1, 2, 8, 8])),
            tape.constant(Tensor::zeros([1, 4, 4, 4])),
            tape.constant(Tensor::zeros([1, 8, 3, 3])),
            tape.constant(Tensor::zeros([1, 16, 1, 1])),
        ];
        let err = model.build_pyramid(&mut tape, f).unwrap_err().to_string();
        assert!(err.contains("F2") && err.contains("F3"), "{err}");
    }

    #[test]
    fn flag_parsing() {
        assert_eq!(AblationFlags::parse("").unwrap(), AblationFlags::BASELINE);
        assert_eq!(AblationFlags::parse("none").unwrap(), AblationFlags::BASELINE);
        assert_eq!(AblationFlags::parse("sp,pp,si,ci,li,ni").unwrap(), AblationFlags::FULL);
        assert_eq!(AblationFlags::parse("full").unwrap(), AblationFlags::FULL);
        let err = AblationFlags::parse("sp,xx").unwrap_err().to_string();
        assert!(FLAG_TOKENS.iter().all(|t| err.contains(t)), "{err}");
        let labels: Vec<String> = AblationFlags::lattice().iter().map(|f| f.label()).collect();
        let want: Vec<&str> = LATTICE.iter().map(|(l, _)| *l).collect();
        assert_eq!(labels, want);
        assert_eq!(AblationFlags::parse("li,sp").unwrap().label(), "sp+li");
        let mut bits: Vec<u8> = AblationFlags::lattice().iter().map(|f| f.bits()).collect();
        bits.sort_unstable();
        bits.dedup();
        assert_eq!(bits.len(), LATTICE.len());
    }

    #[test]
    fn zero_steps_rejected() {
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        assert!(matches!(
            train_toy(&ModelConfig::miniature(), &cfg, AblationFlags::FULL, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { steps: 3, batch: 2, ..TrainConfig::default() };
        let (a, _) = train_toy(&ModelConfig::miniature(), &cfg, AblationFlags::FULL, 4).unwrap();
        let (b, _) = train_toy(&ModelConfig::miniature(), &cfg, AblationFlags::FULL, 4).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn target_mismatch_is_shape_error() {
        let model = LrFpnModel::new(ModelConfig::miniature(), AblationFlags::FULL, 0).unwrap();
        let mut tape = model.tape();
        let images = Tensor::zeros(model.expected_input_dims(1));
        let err = model.forward_loss(&mut tape, &images, &Tensor::zeros([1, 1, 3, 3]));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn odd_coarse_size_rejected() {
        let cfg = ModelConfig { input_size: 48, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { input_size: 40, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
