//! Plain FPN built directly from primitives, used as an independent oracle
//! for the all-flags-off configuration of [`LrFpnModel`].
//!
//! It shares no assembly code with the pyramid module: it owns its own
//! parameter store (copied by name from an LR-FPN store) and writes out the
//! textbook FPN: 1×1 laterals, nearest top-down merge, stride-2 extra convs.

use crate::error::{shape_err, Result};
use crate::harness::scene::SceneSpec;
use crate::kernels::ConvPath;
use crate::param::{Param, ParamId, ParamStore};
use crate::pyramid::{scene_spec_for, LrFpnModel, ModelConfig, Trainable};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
}

pub struct PlainFpn {
    config: ModelConfig,
    store: ParamStore,
    backbone: Vec<Conv>,
    /// Laterals for F₂, F₃, F₄.
    laterals: Vec<Conv>,
    extra: Vec<Conv>,
    head: Conv,
    conv_path: ConvPath,
}

impl PlainFpn {
    /// Copies the weights the plain FPN shares with `model`: backbone,
    /// CIM output projections (as laterals), extra layers and head.
    pub fn from_lrfpn(model: &LrFpnModel) -> Result<Self> {
        let src = &model.store;
        let mut store = ParamStore::new();
        let mut copy = |from: &str, to: &str, stride: usize, padding: usize| -> Result<Conv> {
            let mut take = |suffix: &str| -> Result<ParamId> {
                let name = format!("{from}.{suffix}");
                let Some(p) = src.by_name(&name) else {
                    return shape_err(format!("plain FPN: source model has no param {name}"));
                };
                store.insert(Param::new(format!("{to}.{suffix}"), p.shape.clone(), p.value.clone())?)
            };
            Ok(Conv { weight: take("weight")?, bias: take("bias")?, stride, padding })
        };
        let backbone = (1..=4)
            .map(|k| copy(&format!("backbone.{k}"), &format!("backbone.{k}"), 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let laterals = (2..=4)
            .map(|i| copy(&format!("cim.{i}.proj"), &format!("lateral.{i}"), 1, 0))
            .collect::<Result<Vec<_>>>()?;
        let extra = (4..=5)
            .map(|k| copy(&format!("extra.{k}"), &format!("extra.{k}"), 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let head = copy("head", "head", 1, 0)?;
        Ok(Self {
            config: model.config.clone(),
            store,
            backbone,
            laterals,
            extra,
            head,
            conv_path: model.conv_path,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn conv(&self, tape: &mut Tape, layer: &Conv, x: Var) -> Result<Var> {
        let w = tape.param(&self.store, layer.weight);
        let b = tape.param(&self.store, layer.bias);
        tape.conv2d(x, w, Some(b), layer.stride, layer.padding)
    }

    /// Returns P₁..P₅.
    pub fn forward(&self, tape: &mut Tape, images: &Tensor) -> Result<[Var; 5]> {
        let mut x = tape.constant(images.clone());
        let mut c = Vec::new();
        for layer in &self.backbone {
            let z = self.conv(tape, layer, x)?;
            x = tape.relu(z);
            c.push(x);
        }
        let p3 = self.conv(tape, &self.laterals[2], c[3])?;
        let lat3 = self.conv(tape, &self.laterals[1], c[2])?;
        let up = tape.upsample_nearest2x(p3);
        let p2 = tape.add(lat3, up)?;
        let lat2 = self.conv(tape, &self.laterals[0], c[1])?;
        let up = tape.upsample_nearest2x(p2);
        let p1 = tape.add(lat2, up)?;
        let p4 = self.conv(tape, &self.extra[0], p3)?;
        let p5 = self.conv(tape, &self.extra[1], p4)?;
        Ok([p1, p2, p3, p4, p5])
    }
}

impl Trainable for PlainFpn {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn new_tape(&self) -> Tape {
        Tape::with_conv_path(self.conv_path)
    }

    fn loss(&self, tape: &mut Tape, images: &Tensor, targets: &Tensor) -> Result<Var> {
        let p = self.forward(tape, images)?;
        let logits = self.conv(tape, &self.head, p[0])?;
        let pred = tape.sigmoid(logits);
        crate::pyramid::check_target(tape.value(pred).dims(), targets)?;
        tape.bce_loss(pred, targets)
    }

    fn scene_spec(&self) -> SceneSpec {
        scene_spec_for(&self.config)
    }
}
