//! Synthetic rider population with confounded incentive assignment and exact
//! ground-truth response curves.
//!
//! Ground truth per rider with latent ability `u` in `[0, 1]`:
//!
//! * attendance: `sigmoid(1.5 + 1.5 u + 0.2 t)`
//! * post-attendance orders: `2 + 12 u + C(u) * s(t)` with ceiling
//!   `C(u) = 1 + 9 (1 - u)` and `s(t) = (sigmoid(r t + 0.5) - sigmoid(0.5)) / (1 - sigmoid(0.5))`
//!
//! `s` is the concave upper half of a logistic curve, so increments are
//! concave on `t > 0` and the best return per unit of incentive is at the
//! smallest positive level. Able riders have higher natural orders and a
//! smaller incentive ceiling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};

use crate::data::{Dataset, Example, Group};
use crate::error::{Error, Result};
use crate::heads::{snap_treatment, TreatmentGrid};
use crate::tensor::math::sigmoid;

const ATT_BASE: f64 = 1.5;
const ATT_ABILITY: f64 = 1.5;
const ATT_SLOPE: f64 = 0.2;
const PA_BASE: f64 = 2.0;
const PA_ABILITY: f64 = 12.0;
const PA_CEIL_MIN: f64 = 1.0;
const PA_CEIL_SPAN: f64 = 9.0;
const S_SHIFT: f64 = 0.5;
/// Log-scale spread of the long-tailed outcome option.
const LONG_TAIL_SIGMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub n_riders: usize,
    pub feature_dim: usize,
    /// Leading feature columns that are noisy functions of ability.
    pub signal_dims: usize,
    /// 0 = uniform assignment, 1 = fully inverse-to-ability.
    pub bias_strength: f64,
    pub blank_fraction: f64,
    pub t_max: f64,
    /// Std of the Gaussian noise on signal features.
    pub feature_noise: f64,
    /// Std of the Gaussian noise added to the assigned treatment.
    pub treatment_noise: f64,
    /// Coefficient of variation of post-attendance orders around the truth.
    pub outcome_noise: f64,
    /// Log-normal instead of gamma outcome noise.
    pub long_tail: bool,
    /// Rate `r` of the saturating post-attendance response `s(t)`.
    pub saturation: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_riders: 10_000,
            feature_dim: 8,
            signal_dims: 4,
            bias_strength: 0.9,
            blank_fraction: 0.2,
            t_max: 5.0,
            feature_noise: 0.25,
            treatment_noise: 0.3,
            outcome_noise: 0.3,
            long_tail: false,
            saturation: 1.5,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 || self.signal_dims == 0 || self.signal_dims > self.feature_dim {
            return bad(format!(
                "need 1 <= signal_dims ({}) <= feature_dim ({})",
                self.signal_dims, self.feature_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return bad(format!("bias_strength must be in [0, 1], got {}", self.bias_strength));
        }
        if !(self.blank_fraction > 0.0 && self.blank_fraction < 1.0) {
            return bad(format!("blank_fraction must be in (0, 1), got {}", self.blank_fraction));
        }
        if !(self.t_max >= 0.1 && self.t_max.is_finite()) || (self.t_max * 10.0 - (self.t_max * 10.0).round()).abs() > 1e-9
        {
            return bad(format!("t_max must be a positive multiple of 0.1, got {}", self.t_max));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("treatment_noise", self.treatment_noise),
            ("outcome_noise", self.outcome_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.saturation > 0.0 && self.saturation.is_finite()) {
            return bad(format!("saturation must be positive, got {}", self.saturation));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TreatmentGrid> {
        TreatmentGrid::uniform(self.t_max)
    }
}

/// Exact response of one rider.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthCurve {
    pub att_intercept: f64,
    pub att_slope: f64,
    pub pa_base: f64,
    pub pa_ceiling: f64,
    pub rate: f64,
    pub t_max: f64,
}

impl TruthCurve {
    pub fn for_ability(u: f64, rate: f64, t_max: f64) -> Self {
        Self {
            att_intercept: ATT_BASE + ATT_ABILITY * u,
            att_slope: ATT_SLOPE,
            pa_base: PA_BASE + PA_ABILITY * u,
            pa_ceiling: PA_CEIL_MIN + PA_CEIL_SPAN * (1.0 - u),
            rate,
            t_max,
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.t_max + 1e-9) {
            return Err(Error::Domain(format!("treatment {t} outside [0, {}]", self.t_max)));
        }
        Ok(())
    }

    pub fn attendance(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(sigmoid(self.att_intercept + self.att_slope * t))
    }

    pub fn orders_pa(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let s0 = sigmoid(S_SHIFT);
        let s = (sigmoid(self.rate * t + S_SHIFT) - s0) / (1.0 - s0);
        Ok(self.pa_base + self.pa_ceiling * s)
    }

    pub fn orders(&self, t: f64) -> Result<f64> {
        Ok(self.attendance(t)? * self.orders_pa(t)?)
    }

    pub fn incremental(&self, t: f64) -> Result<f64> {
        Ok(self.orders(t)? - self.orders(0.0)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rider {
    pub id: u64,
    pub ability: f64,
    pub x: Vec<f64>,
    pub truth: TruthCurve,
}

pub fn true_orders(rider: &Rider, t: f64) -> Result<f64> {
    rider.truth.orders(t)
}

#[derive(Clone, Copy)]
enum Stream {
    Population = 1,
    Assignment = 2,
    Outcome = 3,
    Split = 4,
}

/// Independent deterministic stream per (seed, purpose, rider).
fn stream_rng(seed: u64, purpose: Stream, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose as u64);
    rng.set_stream(id);
    rng
}

pub fn gen_population(cfg: &GenConfig) -> Result<Vec<Rider>> {
    cfg.validate()?;
    Ok((0..cfg.n_riders as u64)
        .map(|id| {
            let mut rng = stream_rng(cfg.seed, Stream::Population, id);
            let ability: f64 = rng.random();
            let x = (0..cfg.feature_dim)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    if j < cfg.signal_dims {
                        2.0 * ability - 1.0 + cfg.feature_noise * z
                    } else {
                        z
                    }
                })
                .collect();
            Rider {
                id,
                ability,
                x,
                truth: TruthCurve::for_ability(ability, cfg.saturation, cfg.t_max),
            }
        })
        .collect())
}

/// Mixture of the inverse-ability policy (weight `bias_strength`) and a
/// uniform policy, plus Gaussian noise, snapped to 0.1 and clamped to
/// `[0.1, t_max]`. Blank riders always get 0.
pub fn assign_treatment(rider: &Rider, group: Group, cfg: &GenConfig, rng: &mut impl Rng) -> f64 {
    if group == Group::Blank {
        return 0.0;
    }
    let beta = cfg.bias_strength;
    let inverse = cfg.t_max * (1.0 - rider.ability);
    let uniform = rng.random::<f64>() * cfg.t_max;
    let z: f64 = rng.sample(StandardNormal);
    let t = beta * inverse + (1.0 - beta) * uniform + cfg.treatment_noise * z;
    snap_treatment(t).clamp(0.1, snap_treatment(cfg.t_max))
}

/// Bernoulli attendance, then a mean-preserving noisy draw of orders.
pub fn sample_outcome(rider: &Rider, t: f64, cfg: &GenConfig, rng: &mut impl Rng) -> Result<(bool, f64)> {
    let p = rider.truth.attendance(t)?;
    let mean = rider.truth.orders_pa(t)?;
    let present = rng.random::<f64>() < p;
    if !present {
        return Ok((false, 0.0));
    }
    Ok((true, noisy_orders(mean, cfg, rng)?))
}

fn noisy_orders(mean: f64, cfg: &GenConfig, rng: &mut impl Rng) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let dist_err = |e: String| Error::Config(format!("outcome noise: {e}"));
    let v = if cfg.long_tail {
        let s = LONG_TAIL_SIGMA;
        LogNormal::new(mean.ln() - 0.5 * s * s, s)
            .map_err(|e| dist_err(e.to_string()))?
            .sample(rng)
    } else if cfg.outcome_noise == 0.0 {
        mean
    } else {
        let cv2 = cfg.outcome_noise * cfg.outcome_noise;
        Gamma::new(1.0 / cv2, mean * cv2)
            .map_err(|e| dist_err(e.to_string()))?
            .sample(rng)
    };
    Ok(v.max(0.0))
}

/// Ids of blank riders: exactly `round(blank_fraction * n)`, uniformly at random.
fn blank_ids(cfg: &GenConfig) -> Vec<bool> {
    let n = cfg.n_riders;
    let k = (cfg.blank_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(cfg.seed, Stream::Split, 0));
    let mut blank = vec![false; n];
    for &i in &order[..k.min(n)] {
        blank[i] = true;
    }
    blank
}

/// Per-rider ground truth on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub grid: TreatmentGrid,
    pub riders: Vec<(u64, f64, TruthCurve)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRow {
    pub id: u64,
    pub ability: f64,
    pub t: f64,
    pub true_attendance: f64,
    pub true_orders_pa: f64,
    pub true_orders: f64,
}

impl GroundTruth {
    pub fn rows(&self) -> impl Iterator<Item = TruthRow> + '_ {
        self.riders.iter().flat_map(move |(id, ability, c)| {
            self.grid.values().iter().map(move |&t| TruthRow {
                id: *id,
                ability: *ability,
                t,
                true_attendance: c.attendance(t).expect("grid within range"),
                true_orders_pa: c.orders_pa(t).expect("grid within range"),
                true_orders: c.orders(t).expect("grid within range"),
            })
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_truth_rows(w, self.rows())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
    }
}

fn write_truth_rows<W: Write>(w: W, rows: impl Iterator<Item = TruthRow>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let e = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
    out.write_record(["id", "ability", "t", "true_attendance", "true_orders_pa", "true_orders"])
        .map_err(e)?;
    for r in rows {
        out.write_record([
            r.id.to_string(),
            r.ability.to_string(),
            r.t.to_string(),
            r.true_attendance.to_string(),
            r.true_orders_pa.to_string(),
            r.true_orders.to_string(),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|err| Error::Validation(err.to_string()))
}

/// Ground-truth sidecar read back: rows grouped by rider id, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthTable {
    pub by_id: BTreeMap<u64, Vec<TruthRow>>,
}

impl TruthTable {
    pub fn read_csv<R: Read>(r: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let perr = |line: usize, m: String| Error::Parse {
            path: origin.to_string(),
            message: format!("line {line}: {m}"),
        };
        let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>()
            != ["id", "ability", "t", "true_attendance", "true_orders_pa", "true_orders"]
        {
            return Err(perr(1, "unexpected ground-truth header".into()));
        }
        let mut by_id: BTreeMap<u64, Vec<TruthRow>> = BTreeMap::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| perr(line, e.to_string()))?;
            let f = |i: usize| rec[i].parse::<f64>().map_err(|e| perr(line, e.to_string()));
            let row = TruthRow {
                id: rec[0].parse().map_err(|e: std::num::ParseIntError| perr(line, e.to_string()))?,
                ability: f(1)?,
                t: f(2)?,
                true_attendance: f(3)?,
                true_orders_pa: f(4)?,
                true_orders: f(5)?,
            };
            by_id.entry(row.id).or_default().push(row);
        }
        Ok(Self { by_id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), &path.display().to_string())
    }

    pub fn from_truth(truth: &GroundTruth) -> Self {
        let mut by_id: BTreeMap<u64, Vec<TruthRow>> = BTreeMap::new();
        for r in truth.rows() {
            by_id.entry(r.id).or_default().push(r);
        }
        Self { by_id }
    }
}

/// Generated dataset plus its exact ground truth.
#[derive(Clone, Debug)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    pub riders: Vec<Rider>,
}

pub fn emit_dataset(cfg: &GenConfig) -> Result<Generated> {
    let riders = gen_population(cfg)?;
    let blank = blank_ids(cfg);
    let mut examples = Vec::with_capacity(riders.len());
    for r in &riders {
        let group = if blank[r.id as usize] { Group::Blank } else { Group::Treated };
        let t = assign_treatment(r, group, cfg, &mut stream_rng(cfg.seed, Stream::Assignment, r.id));
        let (attendance, orders) = sample_outcome(r, t, cfg, &mut stream_rng(cfg.seed, Stream::Outcome, r.id))?;
        examples.push(Example {
            id: r.id,
            x: r.x.clone(),
            t,
            attendance,
            orders,
            group,
        });
    }
    let truth = GroundTruth {
        grid: cfg.grid()?,
        riders: riders.iter().map(|r| (r.id, r.ability, r.truth)).collect(),
    };
    Ok(Generated {
        dataset: Dataset::new(cfg.feature_dim, examples)?,
        truth,
        riders,
    })
}

/// Least-squares slope of observed orders on treatment over treated rows.
/// Negative under strong inverse-to-ability assignment even though every
/// individual curve increases.
pub fn observational_slope(data: &Dataset) -> Result<f64> {
    let rows: Vec<(f64, f64)> = data
        .examples()
        .iter()
        .filter(|e| e.group == Group::Treated)
        .map(|e| (e.t, e.orders))
        .collect();
    let n = rows.len() as f64;
    if rows.len() < 2 {
        return Err(Error::Validation("need at least two treated rows for a slope".into()));
    }
    let mt = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mo = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let sxy: f64 = rows.iter().map(|(t, o)| (t - mt) * (o - mo)).sum();
    let sxx: f64 = rows.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("treatment has no variance among treated rows".into()));
    }
    Ok(sxy / sxx)
}
