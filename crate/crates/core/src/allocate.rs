//! Budget-constrained incentive allocation over predicted response curves.
//!
//! Each rider picks one treatment level. Cost is the treatment itself and the
//! objective is the sum of predicted incremental orders, so natural orders
//! never enter the optimisation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ResponseCurve;
use crate::tensor::math::compensated_sum;

/// Enumeration limit for [`allocate_bruteforce`].
pub const BRUTEFORCE_LIMIT: f64 = 1e7;

/// Relative slack used when comparing a cost sum against the budget.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RiderOptions {
    pub id: u64,
    /// Predicted incremental orders at each candidate level.
    pub gains: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProblem {
    levels: Vec<f64>,
    riders: Vec<RiderOptions>,
    budget: f64,
}

impl AllocationProblem {
    /// `levels` are the candidate treatments (and their costs); riders are
    /// stored sorted by id.
    pub fn new(levels: Vec<f64>, mut riders: Vec<RiderOptions>, budget: f64) -> Result<Self> {
        if !budget.is_finite() || budget < 0.0 {
            return Err(Error::Validation(format!("budget must be finite and non-negative, got {budget}")));
        }
        match levels.first() {
            Some(0.0) => {}
            _ => return Err(Error::Validation("candidate levels must start at 0".into())),
        }
        if levels.iter().any(|v| !v.is_finite()) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("candidate levels must be finite and strictly increasing".into()));
        }
        riders.sort_by_key(|r| r.id);
        for w in riders.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Validation(format!("duplicate rider id {}", w[0].id)));
            }
        }
        for r in &riders {
            if r.gains.len() != levels.len() {
                return Err(Error::Validation(format!(
                    "rider {} has {} gains for {} levels",
                    r.id,
                    r.gains.len(),
                    levels.len()
                )));
            }
            if r.gains.iter().any(|g| !g.is_finite()) {
                return Err(Error::Validation(format!("rider {} has non-finite gains", r.id)));
            }
        }
        Ok(Self { levels, riders, budget })
    }

    /// Build from predicted curves restricted to `candidates` (the full curve
    /// grid when `None`).
    pub fn from_curves(curves: &[ResponseCurve], candidates: Option<&[f64]>, budget: f64) -> Result<Self> {
        let grid: &[f64] = match curves.first() {
            Some(c) => &c.grid,
            None => candidates.unwrap_or(&[0.0]),
        };
        for c in curves {
            if c.grid != grid {
                return Err(Error::Validation(format!("curve {} is on a different grid", c.id)));
            }
            if c.incremental.len() != grid.len() {
                return Err(Error::Validation(format!("curve {} has mismatched lengths", c.id)));
            }
        }
        let levels: Vec<f64> = candidates.map(<[f64]>::to_vec).unwrap_or_else(|| grid.to_vec());
        let idx = levels
            .iter()
            .map(|&t| {
                grid.iter()
                    .position(|&g| (g - t).abs() <= 1e-9)
                    .ok_or_else(|| Error::Validation(format!("candidate level {t} is not on the curve grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        let riders = curves
            .iter()
            .map(|c| RiderOptions {
                id: c.id,
                gains: idx.iter().map(|&i| c.incremental[i]).collect(),
            })
            .collect();
        Self::new(levels, riders, budget)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn riders(&self) -> &[RiderOptions] {
        &self.riders
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn fits(&self, cost: f64) -> bool {
        cost <= self.budget + BUDGET_TOL * self.budget.max(1.0)
    }

    fn assignment(&self, choice: &[usize]) -> Assignment {
        let rows: Vec<AssignmentRow> = self
            .riders
            .iter()
            .zip(choice)
            .map(|(r, &j)| AssignmentRow {
                id: r.id,
                t: self.levels[j],
                cost: self.levels[j],
                pred_incremental: r.gains[j],
            })
            .collect();
        Assignment {
            total_cost: compensated_sum(rows.iter().map(|r| r.cost)),
            total_incremental: compensated_sum(rows.iter().map(|r| r.pred_incremental)),
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentRow {
    pub id: u64,
    pub t: f64,
    pub cost: f64,
    pub pred_incremental: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// One row per rider, ascending id.
    pub rows: Vec<AssignmentRow>,
    pub total_cost: f64,
    pub total_incremental: f64,
}

impl Assignment {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let werr = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
        out.write_record(["id", "t", "cost", "pred_incremental"]).map_err(werr)?;
        for r in &self.rows {
            out.write_record([r.id.to_string(), r.t.to_string(), r.cost.to_string(), r.pred_incremental.to_string()])
                .map_err(werr)?;
        }
        out.flush().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Vertices of the upper concave envelope of `(levels[j], gains[j])` over
/// level `from` and every later level costing at most `cap`, truncated after
/// the last strictly improving vertex. Collinear vertices are kept so
/// equal-slope steps stay separate.
fn concave_frontier(levels: &[f64], gains: &[f64], from: usize, cap: f64) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(levels.len() - from);
    for p in from..levels.len() {
        if p > from && levels[p] > cap {
            break;
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let below = (gains[b] - gains[a]) * (levels[p] - levels[a]) < (gains[p] - gains[a]) * (levels[b] - levels[a]);
            if below {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let keep = hull.windows(2).take_while(|w| gains[w[1]] > gains[w[0]]).count();
    hull.truncate(keep + 1);
    hull
}

#[derive(Debug)]
struct Step {
    slope: f64,
    id: u64,
    t: f64,
    rider: usize,
    /// Position of the target vertex in that rider's frontier.
    vertex: usize,
}

impl PartialEq for Step {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Step {}

impl PartialOrd for Step {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Step {
    // Max-heap order: steeper first, then smaller id, then smaller t.
    fn cmp(&self, other: &Self) -> Ordering {
        self.slope
            .total_cmp(&other.slope)
            .then_with(|| other.id.cmp(&self.id))
            .then_with(|| other.t.total_cmp(&self.t))
    }
}

/// Greedy allocation on concavified frontiers.
///
/// Steps are taken in order of incremental orders per unit cost. When a
/// rider's next step no longer fits, their frontier is rebuilt over the levels
/// still affordable, so cheaper intermediate levels stay reachable. A final
/// pass spends any leftover on the largest single upgrade that fits, then
/// pair exchanges (one rider down, another up) are applied while they
/// strictly improve the objective.
pub fn allocate_greedy(p: &AllocationProblem) -> Assignment {
    let levels = &p.levels;
    let cap = p.budget + BUDGET_TOL * p.budget.max(1.0);
    let mut frontiers: Vec<Vec<usize>> = p
        .riders
        .iter()
        .map(|r| concave_frontier(levels, &r.gains, 0, cap))
        .collect();
    let step = |frontiers: &[Vec<usize>], rider: usize, vertex: usize| -> Option<Step> {
        let f = &frontiers[rider];
        let (a, b) = (*f.get(vertex - 1)?, *f.get(vertex)?);
        let g = &p.riders[rider].gains;
        Some(Step {
            slope: (g[b] - g[a]) / (levels[b] - levels[a]),
            id: p.riders[rider].id,
            t: levels[b],
            rider,
            vertex,
        })
    };

    let mut choice = vec![0usize; p.riders.len()];
    let mut spent = 0.0;
    let mut heap: BinaryHeap<Step> = (0..p.riders.len()).filter_map(|i| step(&frontiers, i, 1)).collect();
    while let Some(s) = heap.pop() {
        let from = choice[s.rider];
        let to = frontiers[s.rider][s.vertex];
        let after = spent + levels[to] - levels[from];
        let next = if p.fits(after) {
            spent = after;
            choice[s.rider] = to;
            step(&frontiers, s.rider, s.vertex + 1)
        } else {
            let left = cap - spent + levels[from];
            frontiers[s.rider] = concave_frontier(levels, &p.riders[s.rider].gains, from, left);
            step(&frontiers, s.rider, 1)
        };
        if let Some(next) = next {
            heap.push(next);
        }
    }

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, r) in p.riders.iter().enumerate() {
            let cur = choice[i];
            for j in cur + 1..levels.len() {
                let dg = r.gains[j] - r.gains[cur];
                if dg > 0.0 && p.fits(spent + levels[j] - levels[cur]) && best.is_none_or(|(k, _, _)| dg > k) {
                    best = Some((dg, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        spent += levels[j] - levels[choice[i]];
        choice[i] = j;
    }
    for _ in 0..p.riders.len().max(1) * levels.len() {
        if !exchange(p, &mut choice, &mut spent) {
            break;
        }
    }
    p.assignment(&choice)
}

#[derive(Clone, Copy)]
struct Move {
    rider: usize,
    level: usize,
    gain: f64,
}

/// Applies the best strictly improving pair move (one rider down, another
/// up) that fits the budget. Returns whether a move was made.
fn exchange(p: &AllocationProblem, choice: &mut [usize], spent: &mut f64) -> bool {
    let levels = &p.levels;
    let cap = p.budget + BUDGET_TOL * p.budget.max(1.0);
    let mut ups: Vec<(f64, Move)> = Vec::new();
    for (k, r) in p.riders.iter().enumerate() {
        let cur = choice[k];
        for b in cur + 1..levels.len() {
            let dg = r.gains[b] - r.gains[cur];
            if dg > 0.0 {
                ups.push((levels[b] - levels[cur], Move { rider: k, level: b, gain: dg }));
            }
        }
    }
    if ups.is_empty() {
        return false;
    }
    ups.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Best and runner-up (from a different rider) among upgrades up to each index.
    let mut top: Vec<(Move, Option<Move>)> = Vec::with_capacity(ups.len());
    for (i, &(_, m)) in ups.iter().enumerate() {
        let entry = match top.get(i.wrapping_sub(1)).copied() {
            None => (m, None),
            Some((b1, b2)) if m.gain > b1.gain => (m, if m.rider == b1.rider { b2 } else { Some(b1) }),
            Some((b1, b2)) if m.rider != b1.rider && b2.is_none_or(|b2| m.gain > b2.gain) => (b1, Some(m)),
            Some(prev) => prev,
        };
        top.push(entry);
    }

    let total: f64 = choice.iter().zip(&p.riders).map(|(&j, r)| r.gains[j]).sum();
    let min_gain = 1e-12 * total.abs().max(1.0);
    let mut best: Option<(f64, usize, usize, Move)> = None;
    for (i, r) in p.riders.iter().enumerate() {
        let cur = choice[i];
        for a in 0..cur {
            let loss = r.gains[cur] - r.gains[a];
            let room = cap - *spent + levels[cur] - levels[a];
            let n = ups.partition_point(|u| u.0 <= room);
            if n == 0 {
                continue;
            }
            let (b1, b2) = top[n - 1];
            let Some(up) = (if b1.rider != i { Some(b1) } else { b2 }) else { continue };
            let gain = up.gain - loss;
            if gain > min_gain && best.is_none_or(|(g, ..)| gain > g) {
                best = Some((gain, i, a, up));
            }
        }
    }
    let Some((_, i, a, up)) = best else { return false };
    *spent += levels[a] - levels[choice[i]] + levels[up.level] - levels[choice[up.rider]];
    choice[i] = a;
    choice[up.rider] = up.level;
    true
}

/// Exact optimum by exhaustive enumeration. Among equal objectives the
/// lexicographically smallest level vector (riders by ascending id) wins.
pub fn allocate_bruteforce(p: &AllocationProblem) -> Result<Assignment> {
    let n = p.riders.len();
    let l = p.levels.len();
    let size = (l as f64).powi(n as i32);
    if size > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{l} levels ^ {n} riders = {size:e} assignments exceeds {BRUTEFORCE_LIMIT:e}"
        )));
    }
    let mut choice = vec![0usize; n];
    let mut best = choice.clone();
    let mut best_gain = f64::NEG_INFINITY;
    loop {
        let cost: f64 = choice.iter().map(|&j| p.levels[j]).sum();
        if p.fits(cost) {
            let gain: f64 = choice.iter().zip(&p.riders).map(|(&j, r)| r.gains[j]).sum();
            if gain > best_gain {
                best_gain = gain;
                best.clone_from(&choice);
            }
        }
        // Odometer with the last rider as the fastest digit.
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(p.assignment(&best));
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < l {
                break;
            }
            choice[k] = 0;
        }
    }
}

/// Predicted incremental orders per unit of incentive at treatment `t`.
pub fn roi(curve: &ResponseCurve, t: f64) -> Result<f64> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::Domain(format!("roi needs a positive treatment, got {t}")));
    }
    let i = curve
        .grid
        .iter()
        .position(|&g| (g - t).abs() <= 1e-9)
        .ok_or_else(|| Error::Domain(format!("treatment {t} is not on the curve grid")))?;
    Ok(curve.incremental[i] / t)
}
