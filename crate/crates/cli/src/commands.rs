use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mmce_core::allocate::{allocate_bruteforce, allocate_greedy, AllocationProblem, Assignment};
use mmce_core::data::Group;
use mmce_core::datagen::{emit_dataset, observational_slope, TruthTable};
use mmce_core::eval::{evaluate, model_curves, EvalOptions};
use mmce_core::model::save_curves;
use mmce_core::{fit, modelfile, Dataset};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(mmce_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `data.csv` and `truth.csv` into `out`, creating it if needed.
pub fn gen(cfg: &RunConfig, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let g = emit_dataset(&cfg.gen)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let data_path = out.join("data.csv");
    let truth_path = out.join("truth.csv");
    g.dataset.save(&data_path)?;
    g.truth.save(&truth_path)?;
    let slope = observational_slope(&g.dataset)?;
    let sign = if slope < 0.0 {
        "negative"
    } else if slope > 0.0 {
        "positive"
    } else {
        "zero"
    };
    let _ = writeln!(
        stdout,
        "rows={} blank={} treated={} observational_slope={slope} slope_sign={sign} data={} truth={}",
        g.dataset.len(),
        g.dataset.count(Group::Blank),
        g.dataset.count(Group::Treated),
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let dataset = Dataset::load(data)?;
    let model = fit(&dataset, &cfg.train, &mut |log| {
        let _ = writeln!(stdout, "{log}");
    })?;
    modelfile::save(&model, out)?;
    let _ = writeln!(
        stdout,
        "model={} scheme={} head={} parameters={}",
        out.display(),
        model.scheme(),
        model.head(),
        model.store().num_parameters()
    );
    Ok(())
}

pub fn curves(model: &Path, data: &Path, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let model = modelfile::load(model)?;
    let dataset = Dataset::load(data)?;
    let curves = model_curves(&model, &dataset)?;
    save_curves(&curves, out)?;
    let _ = writeln!(
        stdout,
        "riders={} grid={} rows={} out={}",
        curves.len(),
        model.grid().len(),
        curves.len() * model.grid().len(),
        out.display()
    );
    Ok(())
}

/// Per-stratum curves go next to the report, e.g. `report.txt` gets
/// `report.strata.csv`.
pub fn strata_path(out: &Path) -> PathBuf {
    out.with_extension("strata.csv")
}

pub fn eval(
    cfg: &RunConfig,
    model: &Path,
    data: &Path,
    truth: Option<&Path>,
    force: bool,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let model = modelfile::load(model)?;
    let holdout = Dataset::load(data)?;
    let truth = truth.map(TruthTable::load).transpose()?;
    let opts = EvalOptions {
        strata: cfg.strata,
        eligibility: cfg.eligibility.clone(),
    };
    let report = evaluate(&model, &holdout, truth.as_ref(), &opts)?;
    if !report.eligibility.eligible && !force {
        return Err(CliError::Ineligible(report.eligibility.reasons.clone()));
    }
    let text = report.to_text();
    fs::write(out, &text).map_err(|e| io_err(out, e))?;
    let strata = strata_path(out);
    let f = fs::File::create(&strata).map_err(|e| io_err(&strata, e))?;
    report.strata.write_csv(std::io::BufWriter::new(f))?;
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

pub struct AllocateArgs<'a> {
    pub model: &'a Path,
    pub data: &'a Path,
    pub truth: Option<&'a Path>,
    pub budget: Option<f64>,
    pub exact: bool,
    pub out: &'a Path,
}

pub fn allocate(cfg: &RunConfig, args: &AllocateArgs<'_>, stdout: &mut dyn Write) -> Result<()> {
    let budget = args
        .budget
        .or(cfg.budget)
        .ok_or_else(|| CliError::Config("no budget given (use --budget or the `budget` key)".into()))?;
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(CliError::Config(format!("budget must be finite and >= 0, got {budget}")));
    }
    let model = modelfile::load(args.model)?;
    let population = Dataset::load(args.data)?;
    let truth = args.truth.map(TruthTable::load).transpose()?;
    let curves = model_curves(&model, &population)?;
    let candidates: Vec<f64> = model.grid().values().iter().copied().step_by(cfg.candidate_stride).collect();
    let problem = AllocationProblem::from_curves(&curves, Some(&candidates), budget)?;
    let assignment = if args.exact {
        allocate_bruteforce(&problem)?
    } else {
        allocate_greedy(&problem)
    };
    assignment.save(args.out)?;
    let mut line = format!(
        "riders={} budget={budget} cost={} predicted_incremental={} method={}",
        assignment.rows.len(),
        assignment.total_cost,
        assignment.total_incremental,
        if args.exact { "exact" } else { "greedy" }
    );
    if let Some(t) = &truth {
        line.push_str(&format!(" realized_incremental={}", realized(&assignment, t)?));
    }
    let _ = writeln!(stdout, "{line} out={}", args.out.display());
    Ok(())
}

/// True incremental orders of an assignment under the ground truth.
fn realized(a: &Assignment, truth: &TruthTable) -> Result<f64> {
    let mut total = 0.0;
    for r in &a.rows {
        let rows = truth
            .by_id
            .get(&r.id)
            .ok_or_else(|| CliError::Config(format!("ground truth has no rider {}", r.id)))?;
        let at = |t: f64| {
            rows.iter()
                .find(|row| (row.t - t).abs() <= 1e-9)
                .map(|row| row.true_orders)
                .ok_or_else(|| CliError::Config(format!("ground truth for rider {} lacks t={t}", r.id)))
        };
        total += at(r.t)? - at(0.0)?;
    }
    Ok(total)
}
