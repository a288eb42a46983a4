//! Scheme catalog: backbone trunks, natural scalars and monotone heads wired
//! into attendance, post-attendance orders and total orders.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::heads::{
    head_delta_tape, head_eval_tape, param_transform_with, HeadHyper, HeadKind, HeadParams, Intercept,
    TreatmentGrid,
};
use crate::tensor::math::{sigmoid, softplus};
use crate::tensor::{
    init_mlp, init_rng, mlp_forward, mlp_forward_tape, mlp_param_count, GroupId, NodeId, ParameterStore, Tape,
    Tensor,
};

pub const SHARED_TRUNK: &str = "shared_trunk";
pub const ATTENDANCE_TRUNK: &str = "attendance_trunk";
pub const ORDERS_TRUNK: &str = "orders_trunk";
pub const NATURAL_ATTENDANCE: &str = "natural_attendance";
pub const NATURAL_ORDERS: &str = "natural_orders";
pub const INCREMENTAL_ATTENDANCE: &str = "incremental_attendance_head";
pub const INCREMENTAL_ORDERS: &str = "incremental_orders_head";
pub const ATTENDANCE_HEAD: &str = "attendance_head";
pub const ORDERS_HEAD: &str = "orders_head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// One monotone head on total orders.
    Minimalist,
    /// Natural and incremental orders, no attendance factor.
    DualTask,
    /// Attendance x post-attendance orders, each a single monotone head.
    Sequence,
    /// Sequence + natural/incremental split, separate trunks per chain.
    Mmce1,
    /// Sequence + natural/incremental split, one shared trunk.
    Mmce2,
    /// Sequence with direct heads on a shared trunk.
    Mmce3,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::Minimalist,
        SchemeKind::DualTask,
        SchemeKind::Sequence,
        SchemeKind::Mmce1,
        SchemeKind::Mmce2,
        SchemeKind::Mmce3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Minimalist => "minimalist",
            SchemeKind::DualTask => "dualtask",
            SchemeKind::Sequence => "sequence",
            SchemeKind::Mmce1 => "mmce1",
            SchemeKind::Mmce2 => "mmce2",
            SchemeKind::Mmce3 => "mmce3",
        }
    }

    /// Predicts an attendance probability (otherwise attendance is 1).
    pub fn has_attendance(self) -> bool {
        matches!(
            self,
            SchemeKind::Sequence | SchemeKind::Mmce1 | SchemeKind::Mmce2 | SchemeKind::Mmce3
        )
    }

    /// Separate natural scalars and incremental delta-heads; trained in two phases.
    pub fn is_split(self) -> bool {
        matches!(self, SchemeKind::DualTask | SchemeKind::Mmce1 | SchemeKind::Mmce2)
    }

    pub fn separate_trunks(self) -> bool {
        matches!(self, SchemeKind::Sequence | SchemeKind::Mmce1)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown scheme `{s}` (expected minimalist|dualtask|sequence|mmce1|mmce2|mmce3)"
            ))
        })
    }
}

/// Everything about a model except its parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub scheme: SchemeKind,
    pub head: HeadKind,
    /// Trunk widths, input first: `[d, h1, ..., hk]`.
    pub layers: Vec<usize>,
    pub attendance_hyper: HeadHyper,
    pub orders_hyper: HeadHyper,
    pub grid: TreatmentGrid,
}

impl ModelSpec {
    /// Default two hidden layers of width 64; `N = ceil(t_max)`.
    pub fn new(scheme: SchemeKind, head: HeadKind, input_dim: usize, t_max: f64, orders_ceiling: f64) -> Result<Self> {
        let levels = t_max.ceil().max(1.0) as usize;
        Ok(Self {
            scheme,
            head,
            layers: vec![input_dim, 64, 64],
            attendance_hyper: HeadHyper {
                ceiling: 4.0,
                levels,
            },
            orders_hyper: HeadHyper {
                ceiling: orders_ceiling,
                levels,
            },
            grid: TreatmentGrid::uniform(t_max)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    fn hidden_dim(&self) -> usize {
        *self.layers.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(Error::Config(format!(
                "trunk layer spec must have an input and at least one hidden width, all > 0: {:?}",
                self.layers
            )));
        }
        self.attendance_hyper.validate()?;
        self.orders_hyper.validate()?;
        if self.attendance_hyper.levels != self.orders_hyper.levels {
            return Err(Error::Config("attendance and orders heads must share the level count".into()));
        }
        if self.head == HeadKind::IsotonicEncodingLR && self.grid.max() > self.orders_hyper.levels as f64 {
            return Err(Error::Config(format!(
                "grid reaches {} but isotonic head covers only 0..={}",
                self.grid.max(),
                self.orders_hyper.levels
            )));
        }
        Ok(())
    }

    /// Parameter groups for this scheme, in storage order, with their layer widths.
    pub fn group_plan(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h = self.hidden_dim();
        let ka = self.head.raw_len(&self.attendance_hyper);
        let ko = self.head.raw_len(&self.orders_hyper);
        let mut plan = Vec::new();
        if self.scheme.separate_trunks() {
            plan.push((ATTENDANCE_TRUNK, self.layers.clone()));
            plan.push((ORDERS_TRUNK, self.layers.clone()));
        } else {
            plan.push((SHARED_TRUNK, self.layers.clone()));
        }
        match self.scheme {
            SchemeKind::Minimalist => plan.push((ORDERS_HEAD, vec![h, ko])),
            SchemeKind::DualTask => {
                plan.push((NATURAL_ORDERS, vec![h, 1]));
                plan.push((INCREMENTAL_ORDERS, vec![h, ko]));
            }
            SchemeKind::Sequence | SchemeKind::Mmce3 => {
                plan.push((ATTENDANCE_HEAD, vec![h, ka + 1]));
                plan.push((ORDERS_HEAD, vec![h, ko]));
            }
            SchemeKind::Mmce1 | SchemeKind::Mmce2 => {
                plan.push((NATURAL_ATTENDANCE, vec![h, 1]));
                plan.push((NATURAL_ORDERS, vec![h, 1]));
                plan.push((INCREMENTAL_ATTENDANCE, vec![h, ka]));
                plan.push((INCREMENTAL_ORDERS, vec![h, ko]));
            }
        }
        plan
    }
}

#[derive(Clone, Copy, Debug)]
struct Wiring {
    att_trunk: GroupId,
    ord_trunk: GroupId,
    nat_att: Option<GroupId>,
    nat_ord: Option<GroupId>,
    inc_att: Option<GroupId>,
    inc_ord: Option<GroupId>,
    dir_att: Option<GroupId>,
    dir_ord: Option<GroupId>,
}

impl Wiring {
    fn resolve(spec: &ModelSpec, store: &ParameterStore) -> Result<Self> {
        let plan = spec.group_plan();
        if store.len() != plan.len() {
            return Err(Error::Config(format!(
                "scheme {} expects {} parameter groups, found {}",
                spec.scheme,
                plan.len(),
                store.len()
            )));
        }
        for (name, widths) in &plan {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Config(format!("scheme {} needs group `{name}`", spec.scheme)))?;
            let need = mlp_param_count(widths);
            if store.values(id).len() != need {
                return Err(Error::Config(format!(
                    "group `{name}` has {} values, expected {need}",
                    store.values(id).len()
                )));
            }
        }
        let (att_trunk, ord_trunk) = if spec.scheme.separate_trunks() {
            (store.find(ATTENDANCE_TRUNK).unwrap(), store.find(ORDERS_TRUNK).unwrap())
        } else {
            let s = store.find(SHARED_TRUNK).unwrap();
            (s, s)
        };
        Ok(Self {
            att_trunk,
            ord_trunk,
            nat_att: store.find(NATURAL_ATTENDANCE),
            nat_ord: store.find(NATURAL_ORDERS),
            inc_att: store.find(INCREMENTAL_ATTENDANCE),
            inc_ord: store.find(INCREMENTAL_ORDERS),
            dir_att: store.find(ATTENDANCE_HEAD),
            dir_ord: store.find(ORDERS_HEAD),
        })
    }
}

#[derive(Clone, Debug)]
pub struct MmceModel {
    spec: ModelSpec,
    store: ParameterStore,
    wiring: Wiring,
}

/// Per-individual sampled curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseCurve {
    pub id: u64,
    pub grid: Vec<f64>,
    pub attendance: Vec<f64>,
    pub orders_pa: Vec<f64>,
    pub orders: Vec<f64>,
    /// Total orders at t = 0.
    pub natural: f64,
    /// `orders - natural` at each grid point.
    pub incremental: Vec<f64>,
}

impl ResponseCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Write curves as `id,t,attendance,orders_pa,orders,natural,incremental`,
/// one row per rider and grid point.
pub fn write_curves_csv<W: Write>(curves: &[ResponseCurve], w: W) -> Result<()> {
    let werr = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "t", "attendance", "orders_pa", "orders", "natural", "incremental"])
        .map_err(werr)?;
    for c in curves {
        for i in 0..c.len() {
            out.write_record([
                c.id.to_string(),
                c.grid[i].to_string(),
                c.attendance[i].to_string(),
                c.orders_pa[i].to_string(),
                c.orders[i].to_string(),
                c.natural.to_string(),
                c.incremental[i].to_string(),
            ])
            .map_err(werr)?;
        }
    }
    out.flush().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(())
}

pub fn save_curves(curves: &[ResponseCurve], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_curves_csv(curves, std::io::BufWriter::new(f))
}

#[derive(Clone, Debug)]
enum AttendancePart {
    One,
    Split { logit: f64, head: HeadParams },
    Direct { head: HeadParams, offset: f64 },
}

#[derive(Clone, Debug)]
enum OrdersPart {
    Split { natural: f64, head: HeadParams },
    Direct { head: HeadParams },
}

/// Head parameters of one individual, evaluated once and reusable across `t`.
#[derive(Clone, Debug)]
pub struct Individual {
    attendance: AttendancePart,
    orders: OrdersPart,
}

impl Individual {
    pub fn attendance(&self, t: f64) -> Result<f64> {
        Ok(match &self.attendance {
            AttendancePart::One => {
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::Domain(format!("treatment must be finite and >= 0, got {t}")));
                }
                1.0
            }
            AttendancePart::Split { logit, head } => sigmoid(logit + head.delta(t)?),
            AttendancePart::Direct { head, offset } => sigmoid(head.eval(t)? + offset),
        })
    }

    pub fn orders_pa(&self, t: f64) -> Result<f64> {
        match &self.orders {
            OrdersPart::Split { natural, head } => Ok(natural + head.delta(t)?),
            OrdersPart::Direct { head } => head.eval(t),
        }
    }

    pub fn orders(&self, t: f64) -> Result<f64> {
        Ok(self.attendance(t)? * self.orders_pa(t)?)
    }

    /// `(natural, incremental)` with natural the total at t = 0.
    pub fn decompose(&self, t: f64) -> Result<(f64, f64)> {
        let natural = self.orders(0.0)?;
        Ok((natural, self.orders(t)? - natural))
    }

    pub fn curve(&self, id: u64, grid: &TreatmentGrid) -> Result<ResponseCurve> {
        let natural = self.orders(0.0)?;
        let n = grid.len();
        let mut c = ResponseCurve {
            id,
            grid: grid.values().to_vec(),
            attendance: Vec::with_capacity(n),
            orders_pa: Vec::with_capacity(n),
            orders: Vec::with_capacity(n),
            natural,
            incremental: Vec::with_capacity(n),
        };
        for &t in grid.values() {
            let a = self.attendance(t)?;
            let p = self.orders_pa(t)?;
            let o = a * p;
            c.attendance.push(a);
            c.orders_pa.push(p);
            c.orders.push(o);
            c.incremental.push(o - natural);
        }
        Ok(c)
    }
}

/// Output nodes of a batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TapeOutputs {
    /// Attendance logit (absent for schemes without attendance).
    pub logit: Option<NodeId>,
    pub attendance: Option<NodeId>,
    pub orders_pa: NodeId,
    pub orders: NodeId,
}

impl MmceModel {
    /// Fresh model with seeded uniform fan-in initialization.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = init_rng(seed);
        let mut store = ParameterStore::new();
        for (name, widths) in spec.group_plan() {
            store.add_group(name, init_mlp(&widths, &mut rng))?;
        }
        Self::from_parts(spec, store)
    }

    pub fn from_parts(spec: ModelSpec, store: ParameterStore) -> Result<Self> {
        spec.validate()?;
        let wiring = Wiring::resolve(&spec, &store)?;
        Ok(Self { spec, store, wiring })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn scheme(&self) -> SchemeKind {
        self.spec.scheme
    }

    pub fn head(&self) -> HeadKind {
        self.spec.head
    }

    pub fn grid(&self) -> &TreatmentGrid {
        &self.spec.grid
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Groups fitted on blank data: trunk(s) and natural scalars.
    pub fn natural_groups(&self) -> Vec<GroupId> {
        let w = &self.wiring;
        let mut v = vec![w.att_trunk];
        if w.ord_trunk != w.att_trunk {
            v.push(w.ord_trunk);
        }
        v.extend(w.nat_att);
        v.extend(w.nat_ord);
        v
    }

    /// Incremental delta-head projections (empty for unsplit schemes).
    pub fn incremental_groups(&self) -> Vec<GroupId> {
        self.wiring.inc_att.into_iter().chain(self.wiring.inc_ord).collect()
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Config(format!(
                "feature width {} does not match model input width {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    fn proj_widths(&self, group: GroupId) -> [usize; 2] {
        let h = self.spec.hidden_dim();
        [h, self.store.values(group).len() / (h + 1)]
    }

    fn features(&self, trunk: GroupId, x: &[f64]) -> Result<Vec<f64>> {
        let mut f = mlp_forward(&self.store, trunk, &self.spec.layers, x)?;
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(f)
    }

    fn project(&self, group: GroupId, feat: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.store, group, &self.proj_widths(group), feat)
    }

    pub fn individual(&self, x: &[f64]) -> Result<Individual> {
        self.check_width(x)?;
        let w = &self.wiring;
        let spec = &self.spec;
        let fa = self.features(w.att_trunk, x)?;
        let fo = if w.ord_trunk == w.att_trunk {
            fa.clone()
        } else {
            self.features(w.ord_trunk, x)?
        };

        let attendance = if let (Some(nat), Some(inc)) = (w.nat_att, w.inc_att) {
            AttendancePart::Split {
                logit: self.project(nat, &fa)?[0],
                head: param_transform_with(&self.project(inc, &fa)?, spec.head, &spec.attendance_hyper, Intercept::Free)?,
            }
        } else if let Some(dir) = w.dir_att {
            let raw = self.project(dir, &fa)?;
            let (head_raw, offset) = raw.split_at(raw.len() - 1);
            AttendancePart::Direct {
                head: param_transform_with(head_raw, spec.head, &spec.attendance_hyper, Intercept::Free)?,
                offset: offset[0],
            }
        } else {
            AttendancePart::One
        };

        let orders = if let (Some(nat), Some(inc)) = (w.nat_ord, w.inc_ord) {
            OrdersPart::Split {
                natural: softplus(self.project(nat, &fo)?[0]),
                head: param_transform_with(&self.project(inc, &fo)?, spec.head, &spec.orders_hyper, Intercept::Free)?,
            }
        } else {
            let dir = w.dir_ord.expect("every scheme has an orders head");
            OrdersPart::Direct {
                head: param_transform_with(
                    &self.project(dir, &fo)?,
                    spec.head,
                    &spec.orders_hyper,
                    Intercept::NonNegative,
                )?,
            }
        };
        Ok(Individual { attendance, orders })
    }

    pub fn predict_attendance(&self, x: &[f64], t: f64) -> Result<f64> {
        self.individual(x)?.attendance(t)
    }

    pub fn predict_orders_pa(&self, x: &[f64], t: f64) -> Result<f64> {
        self.individual(x)?.orders_pa(t)
    }

    pub fn predict_orders(&self, x: &[f64], t: f64) -> Result<f64> {
        self.individual(x)?.orders(t)
    }

    pub fn decompose(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        self.individual(x)?.decompose(t)
    }

    pub fn predict_curve(&self, id: u64, x: &[f64], grid: &TreatmentGrid) -> Result<ResponseCurve> {
        self.individual(x)?.curve(id, grid)
    }

    /// Batched forward pass on a tape. `x` is `rows x d`, `t` has `rows` entries.
    pub fn forward_tape(&self, tape: &mut Tape<'_>, x: &Tensor, t: &[f64]) -> Result<TapeOutputs> {
        if x.cols() != self.spec.input_dim() || x.rows() != t.len() {
            return Err(Error::Config(format!(
                "batch shape {:?} with {} treatments does not fit input width {}",
                x.shape(),
                t.len(),
                self.spec.input_dim()
            )));
        }
        let w = self.wiring;
        let spec = &self.spec;
        let input = tape.constant(x.clone());
        let features = |tape: &mut Tape<'_>, trunk: GroupId| -> Result<NodeId> {
            let z = mlp_forward_tape(tape, trunk, &spec.layers, input)?;
            Ok(tape.sigmoid(z))
        };
        let fa = features(tape, w.att_trunk)?;
        let fo = if w.ord_trunk == w.att_trunk {
            fa
        } else {
            features(tape, w.ord_trunk)?
        };
        let project = |tape: &mut Tape<'_>, g: GroupId, f: NodeId| mlp_forward_tape(tape, g, &self.proj_widths(g), f);

        let logit = if let (Some(nat), Some(inc)) = (w.nat_att, w.inc_att) {
            let l = project(tape, nat, fa)?;
            let raw = project(tape, inc, fa)?;
            let d = head_delta_tape(tape, spec.head, &spec.attendance_hyper, Intercept::Free, raw, t)?;
            Some(tape.add(l, d)?)
        } else if let Some(dir) = w.dir_att {
            let raw = project(tape, dir, fa)?;
            let k = spec.head.raw_len(&spec.attendance_hyper);
            let head_raw = tape.columns(raw, 0, k)?;
            let offset = tape.column(raw, k)?;
            let y = head_eval_tape(tape, spec.head, &spec.attendance_hyper, Intercept::Free, head_raw, t)?;
            Some(tape.add(y, offset)?)
        } else {
            None
        };
        let attendance = logit.map(|l| tape.sigmoid(l));

        let orders_pa = if let (Some(nat), Some(inc)) = (w.nat_ord, w.inc_ord) {
            let n = project(tape, nat, fo)?;
            let n = tape.softplus(n);
            let raw = project(tape, inc, fo)?;
            let d = head_delta_tape(tape, spec.head, &spec.orders_hyper, Intercept::Free, raw, t)?;
            tape.add(n, d)?
        } else {
            let raw = project(tape, w.dir_ord.expect("orders head"), fo)?;
            head_eval_tape(tape, spec.head, &spec.orders_hyper, Intercept::NonNegative, raw, t)?
        };
        let orders = match attendance {
            Some(a) => tape.mul(a, orders_pa)?,
            None => orders_pa,
        };
        Ok(TapeOutputs {
            logit,
            attendance,
            orders_pa,
            orders,
        })
    }
}
