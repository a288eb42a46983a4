//! Monotone response functions of the treatment level.
//!
//! Each head maps a raw parameter vector (one per individual, produced by the
//! backbone) through a sign-constraining transform into parameters for which
//! the response is non-decreasing in `t` by construction.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::math::{compensated_sum, sigmoid, softplus};
use crate::tensor::{NodeId, Tape, Tensor};

/// Tolerance for "non-decreasing" comparisons across grid points.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// `a * t + b`
    Linear,
    /// `a * ln(t + 1) + b`
    Logarithmic,
    /// `D / (1 + e^(-a t + b))`
    SShaped,
    /// `sum_i w_i [i <= t]`
    IsotonicEncodingLR,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [
        HeadKind::Linear,
        HeadKind::Logarithmic,
        HeadKind::SShaped,
        HeadKind::IsotonicEncodingLR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Logarithmic => "log",
            HeadKind::SShaped => "sshaped",
            HeadKind::IsotonicEncodingLR => "isotonic",
        }
    }

    /// Number of raw parameter nodes the backbone must emit for this head.
    pub fn raw_len(self, hyper: &HeadHyper) -> usize {
        match self {
            HeadKind::IsotonicEncodingLR => hyper.levels + 1,
            _ => 2,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind `{s}` (expected linear|log|sshaped|isotonic)")))
    }
}

/// Fixed (non-learned) head hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadHyper {
    /// Ceiling `D` of the s-shaped head.
    pub ceiling: f64,
    /// Largest integer treatment `N` of the isotonic head.
    pub levels: usize,
}

impl HeadHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.ceiling > 0.0 && self.ceiling.is_finite()) {
            return Err(Error::Config(format!("s-shaped ceiling must be positive, got {}", self.ceiling)));
        }
        Ok(())
    }
}

/// How the intercept of the linear and logarithmic heads is transformed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Intercept {
    Free,
    /// Softplus-constrained, used where the head output must stay non-negative.
    NonNegative,
}

/// Constraint-satisfying head parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    Linear { slope: f64, intercept: f64 },
    Logarithmic { slope: f64, intercept: f64 },
    SShaped { steepness: f64, shift: f64, ceiling: f64 },
    IsotonicEncodingLR { weights: Vec<f64> },
}

pub fn param_transform(raw: &[f64], kind: HeadKind, hyper: &HeadHyper) -> Result<HeadParams> {
    param_transform_with(raw, kind, hyper, Intercept::Free)
}

pub fn param_transform_with(
    raw: &[f64],
    kind: HeadKind,
    hyper: &HeadHyper,
    intercept: Intercept,
) -> Result<HeadParams> {
    let want = kind.raw_len(hyper);
    if raw.len() != want {
        return Err(Error::Config(format!(
            "{kind} head expects {want} raw parameters, got {}",
            raw.len()
        )));
    }
    let icpt = |v: f64| match intercept {
        Intercept::Free => v,
        Intercept::NonNegative => softplus(v),
    };
    Ok(match kind {
        HeadKind::Linear => HeadParams::Linear {
            slope: softplus(raw[0]),
            intercept: icpt(raw[1]),
        },
        HeadKind::Logarithmic => HeadParams::Logarithmic {
            slope: softplus(raw[0]),
            intercept: icpt(raw[1]),
        },
        HeadKind::SShaped => HeadParams::SShaped {
            steepness: softplus(raw[0]),
            shift: raw[1],
            ceiling: hyper.ceiling,
        },
        HeadKind::IsotonicEncodingLR => HeadParams::IsotonicEncodingLR {
            weights: raw.iter().map(|&r| softplus(r)).collect(),
        },
    })
}

/// Cumulative 0/1 encoding: position `i` is 1 iff `i <= t`.
pub fn isotonic_encode(t: i64, levels: usize) -> Result<Vec<f64>> {
    if t < 0 || t as u64 > levels as u64 {
        return Err(Error::Domain(format!("isotonic level {t} outside 0..={levels}")));
    }
    Ok((0..=levels).map(|i| if i as i64 <= t { 1.0 } else { 0.0 }).collect())
}

/// Nearest integer level for a continuous treatment.
fn isotonic_level(t: f64, levels: usize) -> Result<i64> {
    if !(t >= 0.0 && t <= levels as f64) {
        return Err(Error::Domain(format!("treatment {t} outside isotonic range 0..={levels}")));
    }
    Ok(t.round() as i64)
}

fn check_treatment(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("treatment must be finite and >= 0, got {t}")));
    }
    Ok(())
}

impl HeadParams {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::Linear { .. } => HeadKind::Linear,
            HeadParams::Logarithmic { .. } => HeadKind::Logarithmic,
            HeadParams::SShaped { .. } => HeadKind::SShaped,
            HeadParams::IsotonicEncodingLR { .. } => HeadKind::IsotonicEncodingLR,
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_treatment(t)?;
        Ok(match self {
            HeadParams::Linear { slope, intercept } => slope * t + intercept,
            HeadParams::Logarithmic { slope, intercept } => slope * t.ln_1p() + intercept,
            HeadParams::SShaped {
                steepness,
                shift,
                ceiling,
            } => sigmoid(steepness * t - shift) * ceiling,
            HeadParams::IsotonicEncodingLR { weights } => {
                let levels = weights.len() - 1;
                let enc = isotonic_encode(isotonic_level(t, levels)?, levels)?;
                compensated_sum(weights.iter().zip(&enc).map(|(w, e)| w * e))
            }
        })
    }

    /// `eval(t) - eval(0)`: the increment over the untreated level.
    pub fn delta(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)? - self.eval(0.0)?)
    }
}

/// Non-decreasing across every adjacent grid pair, within [`MONOTONE_TOL`].
pub fn check_monotone(params: &HeadParams, grid: &TreatmentGrid) -> bool {
    let mut prev: Option<f64> = None;
    for &t in grid.values() {
        let Ok(y) = params.eval(t) else { return false };
        if let Some(p) = prev {
            if y < p - MONOTONE_TOL {
                return false;
            }
        }
        prev = Some(y);
    }
    true
}

/// Head evaluation over a batch on the tape. `raw` is `rows x raw_len`.
pub fn head_eval_tape(
    tape: &mut Tape<'_>,
    kind: HeadKind,
    hyper: &HeadHyper,
    intercept: Intercept,
    raw: NodeId,
    t: &[f64],
) -> Result<NodeId> {
    let rows = tape.value(raw).rows();
    let want = kind.raw_len(hyper);
    if tape.value(raw).cols() != want || t.len() != rows {
        return Err(Error::Config(format!(
            "{kind} head on tape: raw {:?}, expected {rows}x{want} with {} treatments",
            tape.value(raw).shape(),
            t.len()
        )));
    }
    for &v in t {
        check_treatment(v)?;
    }
    let constrained_intercept = |tape: &mut Tape<'_>| -> Result<NodeId> {
        let b = tape.column(raw, 1)?;
        Ok(match intercept {
            Intercept::Free => b,
            Intercept::NonNegative => tape.softplus(b),
        })
    };
    match kind {
        HeadKind::Linear | HeadKind::Logarithmic => {
            let a = tape.column(raw, 0)?;
            let a = tape.softplus(a);
            let x = if kind == HeadKind::Linear {
                t.to_vec()
            } else {
                t.iter().map(|v| v.ln_1p()).collect()
            };
            let ax = tape.mul_const(a, Tensor::column(x))?;
            let b = constrained_intercept(tape)?;
            tape.add(ax, b)
        }
        HeadKind::SShaped => {
            let a = tape.column(raw, 0)?;
            let a = tape.softplus(a);
            let at = tape.mul_const(a, Tensor::column(t.to_vec()))?;
            let b = tape.column(raw, 1)?;
            let z = tape.sub(at, b)?;
            let s = tape.sigmoid(z);
            Ok(tape.scale(s, hyper.ceiling))
        }
        HeadKind::IsotonicEncodingLR => {
            let n = hyper.levels;
            let mut enc = Vec::with_capacity(rows * (n + 1));
            for &v in t {
                enc.extend(isotonic_encode(isotonic_level(v, n)?, n)?);
            }
            let w = tape.softplus(raw);
            let prod = tape.mul_const(w, Tensor::new(rows, n + 1, enc)?)?;
            Ok(tape.row_sum(prod))
        }
    }
}

/// Tape version of [`HeadParams::delta`].
pub fn head_delta_tape(
    tape: &mut Tape<'_>,
    kind: HeadKind,
    hyper: &HeadHyper,
    intercept: Intercept,
    raw: NodeId,
    t: &[f64],
) -> Result<NodeId> {
    let at_t = head_eval_tape(tape, kind, hyper, intercept, raw, t)?;
    let zeros = vec![0.0; t.len()];
    let at_zero = head_eval_tape(tape, kind, hyper, intercept, raw, &zeros)?;
    tape.sub(at_t, at_zero)
}

/// Strictly increasing treatment levels starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentGrid {
    values: Vec<f64>,
}

/// Treatments are recorded with one decimal place.
pub const TREATMENT_RESOLUTION: f64 = 0.1;

/// Snap a treatment to the 0.1 lattice. Values are built as `k / 10` so they
/// compare bit-equal with grid points.
pub fn snap_treatment(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

impl TreatmentGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        match values.first() {
            Some(0.0) => {}
            _ => return Err(Error::Validation("treatment grid must start at 0".into())),
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("treatment grid must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("treatment grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `0, 0.1, ..., t_max` (with `t_max` snapped to the 0.1 lattice).
    pub fn uniform(t_max: f64) -> Result<Self> {
        Self::with_stride(t_max, 1)
    }

    /// Every `stride`-th point of the 0.1 lattice up to `t_max`.
    pub fn with_stride(t_max: f64, stride: usize) -> Result<Self> {
        if !(t_max >= 0.0 && t_max.is_finite()) || stride == 0 {
            return Err(Error::Validation(format!("invalid grid bounds t_max={t_max}, stride={stride}")));
        }
        let top = (t_max * 10.0).round() as usize;
        Self::new((0..=top).step_by(stride).map(|k| k as f64 / 10.0).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("grid is never empty")
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.values.iter().position(|&v| (v - t).abs() <= 1e-9)
    }
}
