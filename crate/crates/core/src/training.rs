//! Composite attendance/orders loss and the blank-then-treated training procedure.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Example, Group};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::{MmceModel, ModelSpec, SchemeKind};
use crate::tensor::{backward, optimizer_step, NodeId, OptimState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the attendance cross-entropy.
    pub a: f64,
    /// Weight of the orders squared error.
    pub b: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub scheme: SchemeKind,
    pub head: HeadKind,
    /// Hidden widths of the trunk.
    pub hidden: Vec<usize>,
    /// Largest treatment the model covers; defaults to the largest in the data.
    pub t_max: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            epochs: 20,
            batch_size: 256,
            lr: 0.003,
            seed: 42,
            scheme: SchemeKind::Mmce2,
            head: HeadKind::SShaped,
            hidden: vec![64, 64],
            t_max: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("loss weights must be positive, got a={} b={}", self.a, self.b));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive: {:?}", self.hidden));
        }
        if let Some(t) = self.t_max {
            if !(t >= 0.1 && t.is_finite()) {
                return bad(format!("t_max must be >= 0.1, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Natural,
    Incremental,
    /// Single-phase schemes train every group on all data.
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Natural => "natural",
            Phase::Incremental => "incremental",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub loss_p: f64,
    pub loss_o: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: LossValue,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "phase={} epoch={} loss={} loss_p={} loss_o={}",
            self.phase.name(),
            self.epoch,
            self.loss.loss,
            self.loss.loss_p,
            self.loss.loss_o
        )
    }
}

struct LossNodes {
    total: NodeId,
    loss_p: Option<NodeId>,
    loss_o: NodeId,
}

fn check_weights(a: f64, b: f64) -> Result<()> {
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Config(format!("loss weights must be finite and >= 0, got a={a} b={b}")));
    }
    Ok(())
}

fn loss_on_tape(
    model: &MmceModel,
    tape: &mut Tape<'_>,
    examples: &[&Example],
    a: f64,
    b: f64,
) -> Result<LossNodes> {
    if examples.is_empty() {
        return Err(Error::Usage("loss needs a non-empty batch".into()));
    }
    let d = model.spec().input_dim();
    let mut xs = Vec::with_capacity(examples.len() * d);
    for e in examples {
        if e.x.len() != d {
            return Err(Error::Config(format!(
                "example {} has {} features, model expects {d}",
                e.id,
                e.x.len()
            )));
        }
        xs.extend_from_slice(&e.x);
    }
    let ts: Vec<f64> = examples.iter().map(|e| e.t).collect();
    let out = model.forward_tape(tape, &Tensor::new(examples.len(), d, xs)?, &ts)?;

    let target = tape.constant(Tensor::column(examples.iter().map(|e| e.orders).collect()));
    let diff = tape.sub(out.orders, target)?;
    let sq = tape.square(diff);
    let loss_o = tape.mean(sq);
    let weighted_o = tape.scale(loss_o, b);

    let (total, loss_p) = match out.logit {
        Some(z) => {
            let y = Tensor::column(examples.iter().map(|e| f64::from(u8::from(e.attendance))).collect());
            let sp = tape.softplus(z);
            let yz = tape.mul_const(z, y)?;
            let ce = tape.sub(sp, yz)?;
            let loss_p = tape.mean(ce);
            let weighted_p = tape.scale(loss_p, a);
            (tape.add(weighted_p, weighted_o)?, Some(loss_p))
        }
        None => (weighted_o, None),
    };
    Ok(LossNodes { total, loss_p, loss_o })
}

fn read_loss(tape: &Tape<'_>, n: &LossNodes) -> Result<LossValue> {
    let v = LossValue {
        loss: tape.value(n.total).data()[0],
        loss_p: n.loss_p.map_or(0.0, |p| tape.value(p).data()[0]),
        loss_o: tape.value(n.loss_o).data()[0],
    };
    if !(v.loss.is_finite() && v.loss_p.is_finite() && v.loss_o.is_finite()) {
        return Err(Error::numeric(format!(
            "loss is not finite (loss={} loss_p={} loss_o={})",
            v.loss, v.loss_p, v.loss_o
        )));
    }
    Ok(v)
}

/// `a * mean BCE(attendance) + b * mean squared error(orders)` over the whole batch.
///
/// `loss_p` is 0 for schemes without an attendance factor.
pub fn composite_loss(model: &MmceModel, batch: &[Example], a: f64, b: f64) -> Result<LossValue> {
    check_weights(a, b)?;
    let refs: Vec<&Example> = batch.iter().collect();
    let mut tape = Tape::new(model.store());
    let nodes = loss_on_tape(model, &mut tape, &refs, a, b)?;
    read_loss(&tape, &nodes)
}

/// Records the composite loss on `tape` and returns the scalar node; used for
/// gradient checks.
pub fn composite_loss_tape(
    model: &MmceModel,
    tape: &mut Tape<'_>,
    batch: &[Example],
    a: f64,
    b: f64,
) -> Result<NodeId> {
    check_weights(a, b)?;
    let refs: Vec<&Example> = batch.iter().collect();
    Ok(loss_on_tape(model, tape, &refs, a, b)?.total)
}

fn phase_seed(seed: u64, phase: Phase) -> u64 {
    seed ^ match phase {
        Phase::Natural => 0x6E61_7475,
        Phase::Incremental => 0x696E_6372,
        Phase::Joint => 0x6A6F_696E,
    }
}

fn run_phase(
    model: &mut MmceModel,
    data: &Dataset,
    cfg: &TrainConfig,
    phase: Phase,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<()> {
    let trainable = match phase {
        Phase::Natural => model.natural_groups(),
        Phase::Incremental => model.incremental_groups(),
        Phase::Joint => model.store().ids().collect(),
    };
    let store = model.store_mut();
    store.set_all_trainable(false);
    for id in trainable {
        store.set_trainable(id, true);
    }

    let mut optim = OptimState::new(model.store(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed(cfg.seed, phase));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let result = (|| {
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut acc = LossValue {
                loss: 0.0,
                loss_p: 0.0,
                loss_o: 0.0,
            };
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &data.examples()[i]).collect();
                let (value, grads) = {
                    let mut tape = Tape::new(model.store());
                    let nodes = loss_on_tape(model, &mut tape, &batch, cfg.a, cfg.b)?;
                    (read_loss(&tape, &nodes)?, backward(&tape, nodes.total)?)
                };
                optimizer_step(model.store_mut(), &grads, &mut optim)?;
                let w = chunk.len() as f64;
                acc.loss += value.loss * w;
                acc.loss_p += value.loss_p * w;
                acc.loss_o += value.loss_o * w;
            }
            let n = data.len() as f64;
            log(&EpochLog {
                phase,
                epoch,
                loss: LossValue {
                    loss: acc.loss / n,
                    loss_p: acc.loss_p / n,
                    loss_o: acc.loss_o / n,
                },
            });
        }
        Ok(())
    })();
    model.store_mut().set_all_trainable(true);
    result
}

fn require_group(data: &Dataset, group: Group) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation(format!("{group} phase needs at least one example")));
    }
    if let Some(e) = data.examples().iter().find(|e| e.group != group) {
        return Err(Error::Validation(format!(
            "{group} phase received example {} from the {} group",
            e.id, e.group
        )));
    }
    Ok(())
}

/// Fits trunk(s) and natural scalars on blank data; incremental heads stay
/// bit-identical.
pub fn train_phase_natural(
    model: &mut MmceModel,
    blank: &Dataset,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<()> {
    cfg.validate()?;
    require_group(blank, Group::Blank)?;
    run_phase(model, blank, cfg, Phase::Natural, log)
}

/// Fits only incremental head projections on treated data; trunk(s) and
/// natural scalars stay bit-identical, so predictions at t = 0 are unchanged.
pub fn train_phase_incremental(
    model: &mut MmceModel,
    treated: &Dataset,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<()> {
    cfg.validate()?;
    require_group(treated, Group::Treated)?;
    if !model.scheme().is_split() {
        return Err(Error::Usage(format!(
            "scheme {} has no incremental heads to train",
            model.scheme()
        )));
    }
    run_phase(model, treated, cfg, Phase::Incremental, log)
}

/// Ceiling for s-shaped orders heads: 99th percentile of positive orders.
pub fn orders_ceiling(data: &Dataset) -> f64 {
    let mut pos: Vec<f64> = data.examples().iter().map(|e| e.orders).filter(|&o| o > 0.0).collect();
    if pos.is_empty() {
        return 1.0;
    }
    pos.sort_by(f64::total_cmp);
    let k = ((pos.len() - 1) as f64 * 0.99).round() as usize;
    pos[k].max(1e-6)
}

/// Model spec implied by a dataset and a training configuration.
pub fn spec_for(data: &Dataset, cfg: &TrainConfig) -> Result<ModelSpec> {
    let t_max = match cfg.t_max {
        Some(t) => t,
        None => (data.max_treatment() * 10.0).ceil() / 10.0,
    }
    .max(0.1);
    if data.max_treatment() > t_max + 1e-9 {
        return Err(Error::Validation(format!(
            "data contains treatment {} beyond t_max {t_max}",
            data.max_treatment()
        )));
    }
    let mut spec = ModelSpec::new(cfg.scheme, cfg.head, data.feature_dim(), t_max, orders_ceiling(data))?;
    spec.layers = std::iter::once(data.feature_dim()).chain(cfg.hidden.iter().copied()).collect();
    Ok(spec)
}

/// Builds a fresh model and trains it: natural then incremental phase for
/// split schemes, one joint phase on all data otherwise.
pub fn fit(data: &Dataset, cfg: &TrainConfig, log: &mut dyn FnMut(&EpochLog)) -> Result<MmceModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training data is empty".into()));
    }
    let mut model = MmceModel::new(spec_for(data, cfg)?, cfg.seed)?;
    if cfg.scheme.is_split() {
        let blank = data.subset(Group::Blank);
        let treated = data.subset(Group::Treated);
        if blank.is_empty() || treated.is_empty() {
            return Err(Error::Validation(format!(
                "scheme {} needs both blank and treated rows (found {} blank, {} treated)",
                cfg.scheme,
                blank.len(),
                treated.len()
            )));
        }
        train_phase_natural(&mut model, &blank, cfg, log)?;
        train_phase_incremental(&mut model, &treated, cfg, log)?;
    } else {
        run_phase(&mut model, data, cfg, Phase::Joint, log)?;
    }
    Ok(model)
}
