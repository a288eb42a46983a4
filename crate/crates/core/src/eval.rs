//! Prior-based scores, Gini, causal-assumption checks and the eligibility
//! verdict for treating observational data as an evaluation set.

use std::fmt::Write as _;
use std::io::Write;

use crate::data::{Dataset, Group};
use crate::datagen::TruthTable;
use crate::error::{Error, Result};
use crate::model::{MmceModel, ResponseCurve};

/// Tolerance for "ordered" comparisons between adjacent values.
pub const ORDER_TOL: f64 = 1e-12;

/// `(1 + #{i >= 1 : y_i >= y_{i-1} - tol}) / len`. A single value scores 1.
pub fn series_monotonicity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let ordered = values.windows(2).filter(|w| w[1] >= w[0] - ORDER_TOL).count();
    (1 + ordered) as f64 / values.len() as f64
}

/// Mean per-curve monotonicity of total orders.
pub fn monotonicity_score(curves: &[ResponseCurve]) -> Result<f64> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Validation("monotonicity needs at least one curve".into()))?;
    if first.grid.len() < 2 {
        return Err(Error::Validation("monotonicity needs a grid with at least two levels".into()));
    }
    if let Some(c) = curves.iter().find(|c| c.grid != first.grid) {
        return Err(Error::Validation(format!("curve {} is on a different grid", c.id)));
    }
    Ok(curves.iter().map(|c| series_monotonicity(&c.orders)).sum::<f64>() / curves.len() as f64)
}

/// Mean curve of one stratum.
#[derive(Clone, Debug, PartialEq)]
pub struct StratumCurve {
    pub size: usize,
    pub total: Vec<f64>,
    pub natural: f64,
    pub incremental: Vec<f64>,
}

/// Strata ordered from low to high ability.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratification {
    pub grid: Vec<f64>,
    pub strata: Vec<StratumCurve>,
}

impl Stratification {
    /// Sorts curves by `ability` ascending (ties by id) and cuts them into
    /// `k` contiguous strata of near-equal size.
    pub fn from_curves(curves: &[ResponseCurve], ability: &[f64], k: usize) -> Result<Self> {
        if curves.len() != ability.len() {
            return Err(Error::Validation("one ability score per curve required".into()));
        }
        if k == 0 || curves.len() < k {
            return Err(Error::Validation(format!(
                "cannot cut {} curves into {k} non-empty strata",
                curves.len()
            )));
        }
        let grid = curves[0].grid.clone();
        if curves.iter().any(|c| c.grid != grid) {
            return Err(Error::Validation("curves must share one grid".into()));
        }
        let mut order: Vec<usize> = (0..curves.len()).collect();
        order.sort_by(|&a, &b| ability[a].total_cmp(&ability[b]).then(curves[a].id.cmp(&curves[b].id)));
        let n = curves.len();
        let strata = (0..k)
            .map(|s| {
                let members = &order[s * n / k..(s + 1) * n / k];
                let m = members.len() as f64;
                let mean = |f: &dyn Fn(&ResponseCurve) -> &[f64]| -> Vec<f64> {
                    (0..grid.len())
                        .map(|i| members.iter().map(|&j| f(&curves[j])[i]).sum::<f64>() / m)
                        .collect()
                };
                StratumCurve {
                    size: members.len(),
                    total: mean(&|c| &c.orders),
                    natural: members.iter().map(|&j| curves[j].natural).sum::<f64>() / m,
                    incremental: mean(&|c| &c.incremental),
                }
            })
            .collect();
        Ok(Self { grid, strata })
    }

    fn validate(&self) -> Result<()> {
        if self.strata.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 strata, got {}",
                self.strata.len()
            )));
        }
        for (i, s) in self.strata.iter().enumerate() {
            if s.size == 0 {
                return Err(Error::Validation(format!("stratum {i} is empty")));
            }
            if s.incremental.len() != self.grid.len() || s.total.len() != self.grid.len() {
                return Err(Error::Validation(format!("stratum {i} does not match the grid")));
            }
        }
        Ok(())
    }

    fn positive_levels(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.grid[i] > 0.0).collect()
    }

    /// Per-stratum CSV: `stratum,t,total,natural,incremental`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let e = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
        out.write_record(["stratum", "t", "total", "natural", "incremental"]).map_err(e)?;
        for (s, c) in self.strata.iter().enumerate() {
            for (i, t) in self.grid.iter().enumerate() {
                out.write_record([
                    s.to_string(),
                    t.to_string(),
                    c.total[i].to_string(),
                    c.natural.to_string(),
                    c.incremental[i].to_string(),
                ])
                .map_err(e)?;
            }
        }
        out.flush().map_err(|err| Error::Validation(err.to_string()))
    }
}

/// Fraction of strata whose mean incremental curve is at or above that of
/// every higher-ability stratum at every positive grid point.
pub fn stratification_score(strat: &Stratification) -> Result<f64> {
    strat.validate()?;
    let pos = strat.positive_levels();
    let k = strat.strata.len();
    let passed = (0..k)
        .filter(|&s| {
            strat.strata[s + 1..].iter().all(|higher| {
                pos.iter()
                    .all(|&i| strat.strata[s].incremental[i] >= higher.incremental[i] - ORDER_TOL)
            })
        })
        .count();
    Ok(passed as f64 / k as f64)
}

/// Fraction of strata whose mean return per unit (`incremental / t`) peaks at
/// the lowest positive level.
pub fn marginal_effect_score(strat: &Stratification) -> Result<f64> {
    strat.validate()?;
    let pos = strat.positive_levels();
    if pos.len() < 2 {
        return Err(Error::Validation("marginal effect needs at least two positive levels".into()));
    }
    let passed = strat
        .strata
        .iter()
        .filter(|s| {
            let roi: Vec<f64> = pos.iter().map(|&i| s.incremental[i] / strat.grid[i]).collect();
            let mut best = 0;
            for (j, r) in roi.iter().enumerate() {
                if *r > roi[best] {
                    best = j;
                }
            }
            best == 0
        })
        .count();
    Ok(passed as f64 / strat.strata.len() as f64)
}

/// Gini of a ranking: individuals sorted by `scores` descending (ties by
/// position), cumulative `gains` normalized by their total, trapezoid area
/// `A` under that curve, `2A - 1` clamped to `[-1, 1]`.
pub fn gini_from_scores(scores: &[f64], gains: &[f64]) -> Result<f64> {
    if scores.len() != gains.len() || scores.is_empty() {
        return Err(Error::Validation("gini needs equally many scores and gains, at least one".into()));
    }
    if scores.iter().chain(gains).any(|v| !v.is_finite()) {
        return Err(Error::numeric("gini inputs must be finite"));
    }
    let total: f64 = gains.iter().sum();
    if total <= 0.0 {
        return Err(Error::Validation(format!("total observed gain {total} is not positive")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let n = scores.len() as f64;
    let mut cum = 0.0;
    let mut area = 0.0;
    for &i in &order {
        let prev = cum / total;
        cum += gains[i];
        area += (prev + cum / total) / 2.0 / n;
    }
    Ok((2.0 * area - 1.0).clamp(-1.0, 1.0))
}

/// Number of natural-prediction strata used to match blank baselines.
pub const GINI_STRATA: usize = 10;

/// Ranks treated rows by predicted incremental orders at their observed
/// treatment; gain is observed orders minus the mean of blank rows in the
/// same stratum of predicted natural orders.
pub fn gini_score(model: &MmceModel, holdout: &Dataset) -> Result<f64> {
    let mut blank = Vec::new();
    let mut treated = Vec::new();
    for e in holdout.examples() {
        let (natural, inc) = model.decompose(&e.x, e.t)?;
        match e.group {
            Group::Blank => blank.push((natural, e.orders)),
            Group::Treated => treated.push((natural, inc, e.orders)),
        }
    }
    if blank.is_empty() {
        return Err(Error::Validation("gini needs blank rows for the baseline".into()));
    }
    if treated.is_empty() {
        return Err(Error::Validation("gini needs treated rows".into()));
    }
    let mut nat: Vec<f64> = blank.iter().map(|b| b.0).collect();
    nat.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..GINI_STRATA).map(|j| nat[j * nat.len() / GINI_STRATA]).collect();
    let stratum = |v: f64| edges.partition_point(|&e| e <= v);
    let global = blank.iter().map(|b| b.1).sum::<f64>() / blank.len() as f64;
    let mut sums = [(0.0, 0usize); GINI_STRATA];
    for &(n, o) in &blank {
        let s = &mut sums[stratum(n)];
        s.0 += o;
        s.1 += 1;
    }
    let baseline: Vec<f64> = sums
        .iter()
        .map(|&(s, c)| if c == 0 { global } else { s / c as f64 })
        .collect();
    let scores: Vec<f64> = treated.iter().map(|t| t.1).collect();
    let gains: Vec<f64> = treated.iter().map(|t| t.2 - baseline[stratum(t.0)]).collect();
    gini_from_scores(&scores, &gains)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinSupport {
    pub count: usize,
    /// Distinct treatment deciles observed in the bin, ascending.
    pub deciles: Vec<usize>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport {
    pub n_bins: usize,
    /// `features[j][b]`: support of quantile bin `b` of feature `j`.
    pub features: Vec<Vec<BinSupport>>,
}

impl PositivityReport {
    pub fn flagged_bins(&self, feature: usize) -> usize {
        self.features.get(feature).map_or(0, |b| b.iter().filter(|s| s.flagged).count())
    }

    pub fn total_flagged(&self) -> usize {
        (0..self.features.len()).map(|j| self.flagged_bins(j)).sum()
    }
}

fn decile(t: f64, t_top: f64) -> usize {
    if t_top <= 0.0 {
        return 0;
    }
    ((10.0 * t / t_top).floor() as usize).min(9)
}

/// Bins each feature at quantiles of the treated rows and records which
/// equal-width treatment deciles occur in each bin. Bins with fewer than two
/// distinct deciles (including empty bins) are flagged.
pub fn positivity_check(data: &Dataset, n_bins: usize) -> Result<PositivityReport> {
    if n_bins < 2 {
        return Err(Error::Validation(format!("positivity needs n_bins >= 2, got {n_bins}")));
    }
    let treated: Vec<_> = data.examples().iter().filter(|e| e.group == Group::Treated).collect();
    let t_top = treated.iter().map(|e| e.t).fold(0.0, f64::max);
    let features = (0..data.feature_dim())
        .map(|j| {
            let mut vals: Vec<f64> = treated.iter().map(|e| e.x[j]).collect();
            vals.sort_by(f64::total_cmp);
            let edges: Vec<f64> = if vals.is_empty() {
                vec![]
            } else {
                (1..n_bins).map(|b| vals[b * vals.len() / n_bins]).collect()
            };
            let mut seen = vec![[false; 10]; n_bins];
            let mut counts = vec![0usize; n_bins];
            for e in &treated {
                let b = edges.partition_point(|&v| v <= e.x[j]);
                counts[b] += 1;
                seen[b][decile(e.t, t_top)] = true;
            }
            (0..n_bins)
                .map(|b| {
                    let deciles: Vec<usize> = (0..10).filter(|&d| seen[b][d]).collect();
                    BinSupport {
                        count: counts[b],
                        flagged: deciles.len() < 2,
                        deciles,
                    }
                })
                .collect()
        })
        .collect();
    Ok(PositivityReport { n_bins, features })
}

/// Mean observed orders per equal-width treatment decile over treated rows;
/// empty deciles are skipped.
pub fn macro_curve(data: &Dataset) -> Vec<f64> {
    let treated: Vec<_> = data.examples().iter().filter(|e| e.group == Group::Treated).collect();
    let t_top = treated.iter().map(|e| e.t).fold(0.0, f64::max);
    let mut sums = [(0.0, 0usize); 10];
    for e in treated {
        let s = &mut sums[decile(e.t, t_top)];
        s.0 += e.orders;
        s.1 += 1;
    }
    sums.iter().filter(|s| s.1 > 0).map(|s| s.0 / s.1 as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EligibilityOptions {
    /// Feature columns whose treatment support must be non-degenerate.
    pub important_features: Vec<usize>,
    /// Caller attestation that units do not interfere.
    pub sutva: bool,
    pub monotonicity_threshold: f64,
    pub n_bins: usize,
}

impl Default for EligibilityOptions {
    fn default() -> Self {
        Self {
            important_features: vec![],
            sutva: true,
            monotonicity_threshold: 0.9,
            n_bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eligibility {
    pub eligible: bool,
    pub reasons: Vec<String>,
    pub macro_monotonicity: f64,
    pub positivity: PositivityReport,
}

pub fn eligibility_check(data: &Dataset, opts: &EligibilityOptions) -> Result<Eligibility> {
    if data.is_empty() {
        return Err(Error::Validation("eligibility needs a non-empty dataset".into()));
    }
    if let Some(&j) = opts.important_features.iter().find(|&&j| j >= data.feature_dim()) {
        return Err(Error::Validation(format!(
            "important feature {j} out of range (width {})",
            data.feature_dim()
        )));
    }
    let positivity = positivity_check(data, opts.n_bins)?;
    let mut reasons = Vec::new();
    for &j in &opts.important_features {
        let f = positivity.flagged_bins(j);
        if f > 0 {
            reasons.push(format!("positivity: feature x_{j} has {f} bins with degenerate treatment support"));
        }
    }
    let curve = macro_curve(data);
    let macro_monotonicity = series_monotonicity(&curve);
    if curve.len() < 2 || macro_monotonicity < opts.monotonicity_threshold {
        reasons.push(format!(
            "macro monotonicity {macro_monotonicity:.4} below threshold {}",
            opts.monotonicity_threshold
        ));
    }
    if !opts.sutva {
        reasons.push("SUTVA not affirmed".into());
    }
    Ok(Eligibility {
        eligible: reasons.is_empty(),
        reasons,
        macro_monotonicity,
        positivity,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub strata: usize,
    pub eligibility: EligibilityOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            strata: 5,
            eligibility: EligibilityOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: usize,
    pub monotonicity: f64,
    pub stratification: f64,
    pub marginal_effect: f64,
    pub gini: Option<f64>,
    pub gini_note: Option<String>,
    pub eligibility: Eligibility,
    /// Mean absolute error of predicted total orders vs ground truth.
    pub curve_mae: Option<f64>,
    pub strata: Stratification,
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("rows", self.rows.to_string());
        kv("monotonicity_score", self.monotonicity.to_string());
        kv("stratification_score", self.stratification.to_string());
        kv("marginal_effect_score", self.marginal_effect.to_string());
        kv("gini", self.gini.map_or("na".into(), |g| g.to_string()));
        if let Some(n) = &self.gini_note {
            kv("gini_note", n.clone());
        }
        kv("strata", self.strata.strata.len().to_string());
        kv("macro_monotonicity", self.eligibility.macro_monotonicity.to_string());
        kv("positivity_bins", self.eligibility.positivity.n_bins.to_string());
        for (j, _) in self.eligibility.positivity.features.iter().enumerate() {
            kv(
                &format!("positivity_flagged_x_{j}"),
                self.eligibility.positivity.flagged_bins(j).to_string(),
            );
        }
        kv("eligible", self.eligibility.eligible.to_string());
        for (i, r) in self.eligibility.reasons.iter().enumerate() {
            kv(&format!("reason_{i}"), r.clone());
        }
        if let Some(m) = self.curve_mae {
            kv("curve_mae", m.to_string());
        }
        s
    }
}

/// Curves for every row of `data` on the model grid.
pub fn model_curves(model: &MmceModel, data: &Dataset) -> Result<Vec<ResponseCurve>> {
    data.examples()
        .iter()
        .map(|e| model.predict_curve(e.id, &e.x, model.grid()))
        .collect()
}

/// Mean absolute error of predicted total orders against every truth row of
/// riders present in `data`.
pub fn curve_mae(model: &MmceModel, data: &Dataset, truth: &TruthTable) -> Result<f64> {
    let mut err = 0.0;
    let mut n = 0usize;
    for e in data.examples() {
        let Some(rows) = truth.by_id.get(&e.id) else { continue };
        let ind = model.individual(&e.x)?;
        for r in rows {
            err += (ind.orders(r.t)? - r.true_orders).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Validation("ground truth shares no rider ids with the data".into()));
    }
    Ok(err / n as f64)
}

/// Full evaluation. Strata are ordered by true ability when ground truth is
/// given, otherwise by predicted natural orders.
pub fn evaluate(
    model: &MmceModel,
    holdout: &Dataset,
    truth: Option<&TruthTable>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let curves = model_curves(model, holdout)?;
    let ability: Vec<f64> = curves
        .iter()
        .map(|c| match truth.and_then(|t| t.by_id.get(&c.id)).and_then(|r| r.first()) {
            Some(r) => r.ability,
            None => c.natural,
        })
        .collect();
    let strata = Stratification::from_curves(&curves, &ability, opts.strata)?;
    let (gini, gini_note) = match gini_score(model, holdout) {
        Ok(g) => (Some(g), None),
        Err(Error::Validation(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        rows: holdout.len(),
        monotonicity: monotonicity_score(&curves)?,
        stratification: stratification_score(&strata)?,
        marginal_effect: marginal_effect_score(&strata)?,
        gini,
        gini_note,
        eligibility: eligibility_check(holdout, &opts.eligibility)?,
        curve_mae: truth.map(|t| curve_mae(model, holdout, t)).transpose()?,
        strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{emit_dataset, GenConfig};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn curve(id: u64, grid: &[f64], orders: &[f64]) -> ResponseCurve {
        ResponseCurve {
            id,
            grid: grid.to_vec(),
            attendance: vec![1.0; grid.len()],
            orders_pa: orders.to_vec(),
            orders: orders.to_vec(),
            natural: orders[0],
            incremental: orders.iter().map(|o| o - orders[0]).collect(),
        }
    }

    fn strat(grid: &[f64], incs: &[&[f64]]) -> Stratification {
        Stratification {
            grid: grid.to_vec(),
            strata: incs
                .iter()
                .map(|inc| StratumCurve {
                    size: 1,
                    total: inc.to_vec(),
                    natural: 0.0,
                    incremental: inc.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn monotonicity_hand_counts() {
        let g = [0.0, 1.0, 2.0];
        assert_eq!(monotonicity_score(&[curve(0, &g, &[1.0, 2.0, 3.0])]).unwrap(), 1.0);
        let s = monotonicity_score(&[curve(0, &g, &[1.0, 3.0, 2.0])]).unwrap();
        assert_eq!(s, 2.0 / 3.0);
        assert!(monotonicity_score(&[]).is_err());
        assert!(monotonicity_score(&[curve(0, &g, &[1.0, 2.0, 3.0]), curve(1, &[0.0, 1.0, 3.0], &[1.0, 2.0, 3.0])]).is_err());
        assert!(monotonicity_score(&[curve(0, &[0.0], &[1.0])]).is_err());
    }

    #[test]
    fn stratification_crossing_fixture() {
        let g = [0.0, 1.0, 2.0];
        // Low stratum dominates at t=1 but not at t=2: only the top stratum passes.
        let s = strat(&g, &[&[0.0, 3.0, 3.5], &[0.0, 1.0, 4.0]]);
        assert_eq!(stratification_score(&s).unwrap(), 0.5);
        let ordered = strat(&g, &[&[0.0, 3.0, 5.0], &[0.0, 2.0, 4.0], &[0.0, 1.0, 1.0]]);
        assert_eq!(stratification_score(&ordered).unwrap(), 1.0);
        assert!(stratification_score(&strat(&g, &[&[0.0, 1.0, 2.0]])).is_err());
        let mut empty = ordered.clone();
        empty.strata[1].size = 0;
        assert!(stratification_score(&empty).is_err());
    }

    #[test]
    fn marginal_effect_fixtures() {
        let g = [0.0, 1.0, 2.0, 3.0];
        let concave: &[f64] = &[0.0, 2.0, 3.0, 3.5];
        let convex: &[f64] = &[0.0, 1.0, 4.0, 9.0];
        assert_eq!(marginal_effect_score(&strat(&g, &[concave, concave])).unwrap(), 1.0);
        assert_eq!(marginal_effect_score(&strat(&g, &[convex, convex])).unwrap(), 0.0);
        let s = marginal_effect_score(&strat(&g, &[concave, convex, concave])).unwrap();
        assert_eq!(s, 2.0 / 3.0);
        assert!(marginal_effect_score(&strat(&[0.0, 1.0], &[&[0.0, 1.0], &[0.0, 1.0]])).is_err());
    }

    #[test]
    fn datagen_truth_scores_perfectly() {
        let g = emit_dataset(&GenConfig { n_riders: 3000, ..GenConfig::default() }).unwrap();
        let grid = GenConfig::default().grid().unwrap();
        let curves: Vec<ResponseCurve> = g
            .riders
            .iter()
            .map(|r| {
                let o: Vec<f64> = grid.values().iter().map(|&t| r.truth.orders(t).unwrap()).collect();
                curve(r.id, grid.values(), &o)
            })
            .collect();
        let ability: Vec<f64> = g.riders.iter().map(|r| r.ability).collect();
        let s = Stratification::from_curves(&curves, &ability, 5).unwrap();
        assert_eq!(monotonicity_score(&curves).unwrap(), 1.0);
        assert_eq!(stratification_score(&s).unwrap(), 1.0);
        assert_eq!(marginal_effect_score(&s).unwrap(), 1.0);
    }

    #[test]
    fn gini_basic_cases() {
        assert!(gini_from_scores(&[1.0, 2.0], &[-1.0, 1.0]).is_err());
        assert!(gini_from_scores(&[], &[]).is_err());
        let gains = [5.0, 3.0, 1.0, 0.5];
        let perfect = gini_from_scores(&[4.0, 3.0, 2.0, 1.0], &gains).unwrap();
        let reversed = gini_from_scores(&[1.0, 2.0, 3.0, 4.0], &gains).unwrap();
        assert!(perfect > 0.0);
        assert!((perfect + reversed).abs() < 1e-12);
        // Hand value: cumulative shares 5/9.5, 8/9.5, 9/9.5, 1.
        let shares = [5.0 / 9.5, 8.0 / 9.5, 9.0 / 9.5, 1.0];
        let mut area = 0.0;
        let mut prev = 0.0;
        for s in shares {
            area += (prev + s) / 2.0 / 4.0;
            prev = s;
        }
        assert!((perfect - (2.0 * area - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_near_zero_gini_on_shuffled_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gains: Vec<f64> = (0..10_000).map(|i| (i % 17) as f64 * 0.3 - 1.0).collect();
        gains.shuffle(&mut rng);
        let g = gini_from_scores(&vec![1.0; gains.len()], &gains).unwrap();
        assert!(g.abs() < 0.05, "{g}");
    }

    #[test]
    fn positivity_fixtures() {
        let uniform = emit_dataset(&GenConfig { n_riders: 10_000, bias_strength: 0.0, ..GenConfig::default() }).unwrap();
        assert_eq!(positivity_check(&uniform.dataset, 10).unwrap().total_flagged(), 0);

        let biased = emit_dataset(&GenConfig {
            n_riders: 10_000,
            bias_strength: 1.0,
            treatment_noise: 0.0,
            feature_noise: 0.0,
            ..GenConfig::default()
        })
        .unwrap();
        let r = positivity_check(&biased.dataset, 20).unwrap();
        assert!(r.flagged_bins(0) > 0);
        assert_eq!(r.flagged_bins(7), 0);

        let one = Dataset::new(2, vec![uniform.dataset.examples().iter().find(|e| e.group == Group::Treated).map(|e| {
            let mut e = e.clone();
            e.x.truncate(2);
            e
        }).unwrap()])
        .unwrap();
        let r = positivity_check(&one, 4).unwrap();
        assert_eq!(r.total_flagged(), 8);
        assert!(positivity_check(&one, 1).is_err());
    }

    #[test]
    fn eligibility_verdicts() {
        let opts = EligibilityOptions {
            important_features: vec![0, 1, 2, 3],
            ..EligibilityOptions::default()
        };
        let uniform = emit_dataset(&GenConfig { n_riders: 50_000, bias_strength: 0.0, ..GenConfig::default() }).unwrap();
        let v = eligibility_check(&uniform.dataset, &opts).unwrap();
        assert!(v.eligible, "{:?}", v.reasons);

        let biased = emit_dataset(&GenConfig { n_riders: 10_000, bias_strength: 0.9, ..GenConfig::default() }).unwrap();
        let v = eligibility_check(&biased.dataset, &opts).unwrap();
        assert!(!v.eligible);
        assert!(v.reasons.iter().any(|r| r.contains("macro monotonicity")), "{:?}", v.reasons);

        let v = eligibility_check(&uniform.dataset, &EligibilityOptions { sutva: false, ..opts }).unwrap();
        assert!(!v.eligible);
    }

    proptest! {
        #[test]
        fn monotonicity_shift_invariant(vals in prop::collection::vec(-100.0f64..100.0, 2..20), c in -50.0f64..50.0) {
            let grid: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
            let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
            let a = monotonicity_score(&[curve(0, &grid, &vals)]).unwrap();
            let b = monotonicity_score(&[curve(0, &grid, &shifted)]).unwrap();
            // Shifts can only move values by rounding; compare on a coarse lattice.
            let coarse = |v: &[f64]| v.iter().map(|x| (x * 1e6).round()).collect::<Vec<_>>();
            prop_assume!(coarse(&vals).windows(2).all(|w| w[0] != w[1]));
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn gini_rank_invariant(
            scores in prop::collection::vec(-10.0f64..10.0, 2..50),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gains: Vec<f64> = scores.iter().map(|_| rand::Rng::random_range(&mut rng, 0.0..5.0)).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            let a = gini_from_scores(&scores, &gains).unwrap();
            let b = gini_from_scores(&transformed, &gains).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
