//! Central-difference gradient checks: every differentiable op in isolation,
//! then the full model on sampled parameter coordinates.
//!
//! Relative error is `|a − n| / max(|a|, |n|, floor)`. A probe whose `±h`
//! step changes a relu mask or max-pool argmax straddles a kink, where the
//! finite difference is not a derivative; such coordinates are resampled.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{config_err, Result};
use crate::harness::scene::gen_batch;
use crate::param::{param_rng, Param, ParamId, ParamStore};
use crate::pyramid::{AblationFlags, LrFpnModel, ModelConfig};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Attempts per probe before a kink-straddling coordinate is given up.
const RESAMPLE_LIMIT: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// End-to-end probes, assigned round-robin over the model's params.
    pub probes: usize,
    pub tolerance: f64,
    pub fd_step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Half-width of the uniform jitter added to every model param so the
    /// probe point avoids the exact ties of the default initialization.
    pub jitter: f64,
    pub batch: usize,
    pub seed: u64,
    /// Corrupt the backward rule of one op kind (test fixture).
    pub fault: Option<OpKind>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            probes: 240,
            tolerance: 1e-4,
            fd_step: 1e-5,
            floor: 1e-6,
            jitter: 0.05,
            batch: 2,
            seed: 0,
            fault: None,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return config_err("gradcheck: probe set is empty");
        }
        if !(self.fd_step > 0.0 && self.tolerance > 0.0 && self.floor > 0.0) {
            return config_err("gradcheck: step, tolerance and floor must be positive");
        }
        if self.batch == 0 {
            return config_err("gradcheck: batch must be at least 1");
        }
        Ok(())
    }
}

/// Worst observed error of one op or param group.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst: (f64, f64),
}

impl CheckRow {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), checked: 0, skipped: 0, max_rel_err: 0.0, worst: (0.0, 0.0) }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let err = rel_err(analytic, numeric, floor);
        self.checked += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = err;
            self.worst = (analytic, numeric);
        }
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub fd_step: f64,
    pub floor: f64,
    pub seed: u64,
    pub ops: Vec<CheckRow>,
    /// Model param groups (level indices folded to `*`).
    pub groups: Vec<CheckRow>,
    pub probes: usize,
    pub params_probed: usize,
    pub params_total: usize,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&str> {
        self.ops
            .iter()
            .chain(&self.groups)
            .filter(|r| !r.passed(self.tolerance))
            .map(|r| r.name.as_str())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty() && self.params_probed == self.params_total
    }

    pub fn max_rel_err(&self) -> f64 {
        self.ops.iter().chain(&self.groups).map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "gradcheck tolerance={:e} fd_step={:e} floor={:e} seed={}",
            self.tolerance, self.fd_step, self.floor, self.seed
        );
        let mut table = |title: &str, rows: &[CheckRow]| {
            let _ = writeln!(s, "\n[{title}]");
            let _ = writeln!(s, "{:<22} {:>7} {:>7} {:>12} {:>13} {:>13}  status", "name", "checked", "skipped", "max_rel_err", "analytic", "numeric");
            for r in rows {
                let status = if r.passed(self.tolerance) { "PASS" } else { "FAIL" };
                let _ = writeln!(
                    s,
                    "{:<22} {:>7} {:>7} {:>12.3e} {:>13.6e} {:>13.6e}  {status}",
                    r.name, r.checked, r.skipped, r.max_rel_err, r.worst.0, r.worst.1
                );
            }
        };
        table("ops", &self.ops);
        table("model", &self.groups);
        let _ = writeln!(
            s,
            "\nprobes={} params_probed={}/{} max_rel_err={:.3e}",
            self.probes,
            self.params_probed,
            self.params_total,
            self.max_rel_err()
        );
        let failures = self.failures();
        if self.passed() {
            let _ = writeln!(s, "result: PASS");
        } else if failures.is_empty() {
            let _ = writeln!(s, "result: FAIL (not every param was probed)");
        } else {
            let _ = writeln!(s, "result: FAIL ({})", failures.join(", "));
        }
        s
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `name` with purely numeric path segments replaced by `*`.
pub fn param_group(name: &str) -> String {
    name.split('.')
        .map(|seg| if seg.chars().all(|c| c.is_ascii_digit()) { "*" } else { seg })
        .collect::<Vec<_>>()
        .join(".")
}

/// A scalar function of the params it owns.
trait Objective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn eval(&self, tape: &mut Tape) -> Result<Var>;
}

fn fault_tape(fault: Option<OpKind>) -> Tape {
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    tape
}

/// Objective value and activation signature at the current params.
fn value<O: Objective>(o: &O, fault: Option<OpKind>) -> Result<(f64, u64)> {
    let mut tape = fault_tape(fault);
    let out = o.eval(&mut tape)?;
    Ok((tape.value(out).data()[0], tape.activation_signature()))
}

/// Analytic gradients into the param grads; returns the base signature.
fn gradients<O: Objective>(o: &mut O, fault: Option<OpKind>) -> Result<u64> {
    let mut tape = fault_tape(fault);
    let out = o.eval(&mut tape)?;
    let sig = tape.activation_signature();
    o.store_mut().zero_grad();
    tape.backward(out, o.store_mut())?;
    Ok(sig)
}

/// Central difference at one coordinate, or `None` if either side lies on a
/// different smooth piece than the base point.
fn numeric<O: Objective>(o: &mut O, id: ParamId, idx: usize, h: f64, base_sig: u64, fault: Option<OpKind>) -> Result<Option<f64>> {
    let orig = o.store().get(id).value.data()[idx];
    o.store_mut().get_mut(id).value.data_mut()[idx] = orig + h;
    let plus = value(o, fault);
    o.store_mut().get_mut(id).value.data_mut()[idx] = orig - h;
    let minus = value(o, fault);
    o.store_mut().get_mut(id).value.data_mut()[idx] = orig;
    let ((fp, sp), (fm, sm)) = (plus?, minus?);
    if sp != base_sig || sm != base_sig {
        return Ok(None);
    }
    Ok(Some((fp - fm) / (2.0 * h)))
}

type Build = fn(&mut Tape, &ParamStore, &[ParamId]) -> Result<Var>;

/// One op applied to param leaves, reduced by a fixed random weighting.
struct OpCase {
    store: ParamStore,
    ids: Vec<ParamId>,
    build: Build,
    weights: Tensor,
}

impl Objective for OpCase {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn eval(&self, tape: &mut Tape) -> Result<Var> {
        let out = (self.build)(tape, &self.store, &self.ids)?;
        tape.weighted_sum(out, &self.weights)
    }
}

fn leaf(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dims: [usize; 4], lo: f64, hi: f64) -> Result<ParamId> {
    let value = Tensor::from_fn(dims, |_| rng.gen_range(lo..hi));
    store.insert(Param::new(name, dims.to_vec(), value)?)
}

fn leaves(tape: &mut Tape, store: &ParamStore, ids: &[ParamId]) -> Vec<Var> {
    ids.iter().map(|&id| tape.param(store, id)).collect()
}

/// Leaf shapes, value range and forward expression for each op kind.
fn op_case(kind: OpKind, rng: &mut impl Rng) -> Result<OpCase> {
    let mut store = ParamStore::new();
    let mut add = |name: &str, dims, lo, hi| leaf(&mut store, rng, name, dims, lo, hi);
    let (ids, build): (Vec<ParamId>, Build) = match kind {
        OpKind::Conv2d => (
            vec![add("x", [2, 3, 5, 5], -1.0, 1.0)?, add("w", [4, 3, 3, 3], -1.0, 1.0)?, add("b", [4, 1, 1, 1], -1.0, 1.0)?],
            |t, s, ids| {
                let v = leaves(t, s, ids);
                t.conv2d(v[0], v[1], Some(v[2]), 2, 1)
            },
        ),
        OpKind::DepthwiseConv2d => (
            vec![add("x", [2, 3, 6, 6], -1.0, 1.0)?, add("k", [3, 1, 3, 3], -1.0, 1.0)?],
            |t, s, ids| {
                let v = leaves(t, s, ids);
                t.depthwise_conv2d(v[0], v[1], 2, 2)
            },
        ),
        OpKind::AdaptiveAvgPool => (vec![add("x", [2, 2, 7, 5], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            let a = t.adaptive_avg_pool(v[0], 3, 2)?;
            let g = t.global_avg_pool(v[0])?;
            let gs = t.sum(g);
            let asum = t.sum(a);
            t.add(asum, gs)
        }),
        OpKind::AdaptiveMaxPool => (vec![add("x", [2, 2, 7, 5], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            let a = t.adaptive_max_pool(v[0], 3, 2)?;
            let g = t.global_max_pool(v[0])?;
            let gs = t.sum(g);
            let asum = t.sum(a);
            t.add(asum, gs)
        }),
        OpKind::FullyConnected => (
            vec![add("x", [3, 5, 1, 1], -1.0, 1.0)?, add("w", [4, 5, 1, 1], -1.0, 1.0)?, add("b", [4, 1, 1, 1], -1.0, 1.0)?],
            |t, s, ids| {
                let v = leaves(t, s, ids);
                t.fully_connected(v[0], v[1], v[2])
            },
        ),
        OpKind::Relu => (vec![add("x", [2, 3, 4, 4], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            Ok(t.relu(v[0]))
        }),
        OpKind::Sigmoid => (vec![add("x", [2, 3, 3, 3], -3.0, 3.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            Ok(t.sigmoid(v[0]))
        }),
        OpKind::Upsample => (vec![add("x", [1, 2, 3, 3], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            Ok(t.upsample_nearest2x(v[0]))
        }),
        OpKind::Add => (vec![add("a", [2, 3, 3, 3], -1.0, 1.0)?, add("b", [2, 3, 3, 3], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            t.add(v[0], v[1])
        }),
        OpKind::Hadamard => (
            vec![add("a", [2, 3, 3, 3], -1.0, 1.0)?, add("b", [2, 3, 3, 3], -1.0, 1.0)?, add("w", [1, 3, 3, 3], -1.0, 1.0)?],
            |t, s, ids| {
                let v = leaves(t, s, ids);
                let same = t.hadamard(v[0], v[1])?;
                t.hadamard(same, v[2])
            },
        ),
        OpKind::BroadcastScale => (
            vec![add("x", [2, 3, 4, 4], -1.0, 1.0)?, add("s", [2, 3, 1, 1], -1.0, 1.0)?],
            |t, s, ids| {
                let v = leaves(t, s, ids);
                t.broadcast_scale(v[0], v[1])
            },
        ),
        OpKind::Concat => (vec![add("a", [2, 2, 3, 3], -1.0, 1.0)?, add("b", [2, 3, 3, 3], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            t.concat_channels(v[0], v[1])
        }),
        OpKind::Sum => (vec![add("x", [2, 2, 3, 3], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            Ok(t.sum(v[0]))
        }),
        OpKind::WeightedSum => (vec![add("x", [2, 2, 3, 3], -1.0, 1.0)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            let w = Tensor::from_fn([2, 2, 3, 3], |[n, c, y, x]| (n + 2 * c) as f64 * 0.25 - (y * 3 + x) as f64 * 0.125);
            t.weighted_sum(v[0], &w)
        }),
        OpKind::Bce => (vec![add("p", [2, 1, 4, 4], 0.05, 0.95)?], |t, s, ids| {
            let v = leaves(t, s, ids);
            let target = Tensor::from_fn([2, 1, 4, 4], |[n, _, y, x]| f64::from(u8::from((n + y * 3 + x) % 3 == 0)));
            t.bce_loss(v[0], &target)
        }),
        other => return config_err(format!("gradcheck: {other} has no backward rule")),
    };
    let mut tape = Tape::new();
    let out = build(&mut tape, &store, &ids)?;
    let weights = Tensor::from_fn(tape.value(out).dims(), |_| rng.gen_range(-1.0..1.0));
    Ok(OpCase { store, ids, build, weights })
}

/// Exhaustive check of every leaf coordinate of one op case.
pub fn check_op(kind: OpKind, cfg: &GradcheckConfig) -> Result<CheckRow> {
    let mut rng = param_rng(cfg.seed, &format!("gradcheck.op.{kind}"));
    let mut case = op_case(kind, &mut rng)?;
    let base_sig = gradients(&mut case, cfg.fault)?;
    let mut row = CheckRow::new(kind.name());
    for id in case.ids.clone() {
        for idx in 0..case.store.get(id).value.len() {
            let analytic = case.store.get(id).grad.data()[idx];
            match numeric(&mut case, id, idx, cfg.fd_step, base_sig, cfg.fault)? {
                Some(n) => row.record(analytic, n, cfg.floor),
                None => row.skipped += 1,
            }
        }
    }
    Ok(row)
}

/// BCE of the head plus a fixed random weighting of every pyramid level,
/// so that P₂..P₅ (and hence the extra layers) carry gradient too.
struct ModelObjective {
    model: LrFpnModel,
    images: Tensor,
    targets: Tensor,
    level_weights: Vec<Tensor>,
}

impl Objective for ModelObjective {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn eval(&self, tape: &mut Tape) -> Result<Var> {
        let pyr = self.model.forward(tape, &self.images)?;
        let pred = self.model.head(tape, pyr.levels[0])?;
        let mut total = tape.bce_loss(pred, &self.targets)?;
        for (&level, w) in pyr.levels.iter().zip(&self.level_weights) {
            let term = tape.weighted_sum(level, w)?;
            total = tape.add(total, term)?;
        }
        Ok(total)
    }
}

/// Model with all branches enabled and params jittered off the exact ties
/// of the default initialization.
pub fn gradcheck_model(config: &ModelConfig, cfg: &GradcheckConfig) -> Result<LrFpnModel> {
    let mut model = LrFpnModel::new(config.clone(), AblationFlags::FULL, cfg.seed)?;
    let mut rng = param_rng(cfg.seed, "gradcheck.jitter");
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-cfg.jitter..=cfg.jitter);
        }
    }
    Ok(model)
}

/// Outcome of the sampled end-to-end check.
pub struct ModelCheck {
    pub groups: Vec<CheckRow>,
    pub probes: usize,
    pub params_probed: usize,
    pub params_total: usize,
}

/// Sampled coordinates of the full model objective, round-robin over params.
pub fn check_model(config: &ModelConfig, cfg: &GradcheckConfig) -> Result<ModelCheck> {
    cfg.validate()?;
    let model = gradcheck_model(config, cfg)?;
    let mut rng = param_rng(cfg.seed, "gradcheck.model");
    let (images, targets) = gen_batch(&model.scene_spec(), cfg.batch, &mut rng)?;
    let level_weights = {
        let mut tape = model.tape();
        let pyr = model.forward(&mut tape, &images)?;
        pyr.levels
            .iter()
            .map(|&v| {
                let t = tape.value(v);
                let n = t.len() as f64;
                Tensor::from_fn(t.dims(), |_| rng.gen_range(-1.0..1.0) / n)
            })
            .collect()
    };
    let mut obj = ModelObjective { model, images, targets, level_weights };
    let base_sig = gradients(&mut obj, cfg.fault)?;
    let params: Vec<(ParamId, String)> = obj.store().iter().map(|(id, p)| (id, p.name.clone())).collect();

    let mut groups: BTreeMap<String, CheckRow> = BTreeMap::new();
    let mut probed = vec![false; params.len()];
    let mut probes = 0;
    for i in 0..cfg.probes {
        let slot = i % params.len();
        let (id, name) = &params[slot];
        let group = param_group(name);
        let row = groups.entry(group.clone()).or_insert_with(|| CheckRow::new(group));
        let mut candidates: Vec<usize> = (0..obj.store().get(*id).value.len()).collect();
        candidates.shuffle(&mut rng);
        for &idx in candidates.iter().take(RESAMPLE_LIMIT) {
            let analytic = obj.store().get(*id).grad.data()[idx];
            match numeric(&mut obj, *id, idx, cfg.fd_step, base_sig, cfg.fault)? {
                Some(n) => {
                    row.record(analytic, n, cfg.floor);
                    probed[slot] = true;
                    probes += 1;
                    break;
                }
                None => row.skipped += 1,
            }
        }
    }
    Ok(ModelCheck {
        groups: groups.into_values().collect(),
        probes,
        params_probed: probed.iter().filter(|&&p| p).count(),
        params_total: params.len(),
    })
}

/// Every per-op check followed by the end-to-end check.
pub fn run_gradcheck(config: &ModelConfig, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let ops = OpKind::DIFFERENTIABLE.iter().map(|&k| check_op(k, cfg)).collect::<Result<Vec<_>>>()?;
    let model = check_model(config, cfg)?;
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        fd_step: cfg.fd_step,
        floor: cfg.floor,
        seed: cfg.seed,
        ops,
        groups: model.groups,
        probes: model.probes,
        params_probed: model.params_probed,
        params_total: model.params_total,
    })
}
