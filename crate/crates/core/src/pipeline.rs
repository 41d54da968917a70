//! End-to-end runs: collect data, fit the ellipsoid, synthesize, certify,
//! and the seed-median sweeps behind the comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::certify::{certify_robust, h2_norm, hinf_norm, CertificationReport, CertifyOptions};
use crate::error::{Error, Result};
use crate::lti::{simulate_collect, CollectConfig, DataSet, LtiSystem};
use crate::scenario::{Mode, Scenario, SweepAxis, POINT_RHO};
use crate::synthesis::{
    baseline_xdiag, h2_structured, hinf_structured, stabilize_structured, Objective, SynthesisOutcome, SynthesisStatus,
};
use crate::uncertainty::{fit_from_data, MatrixEllipsoid};

/// Process exit code for a synthesis status.
pub fn exit_code(status: SynthesisStatus) -> i32 {
    match status {
        SynthesisStatus::Ok => 0,
        SynthesisStatus::Infeasible => 2,
        SynthesisStatus::NoConvergence => 3,
    }
}

/// Exit code for usage, data and numerical errors.
pub const EXIT_ERROR: i32 = 1;

pub fn collect(s: &Scenario) -> Result<DataSet> {
    simulate_collect(&s.plant, &s.data)
}

/// Uncertainty set for the scenario's mode; `data` is required unless the
/// mode is model-based.
pub fn ellipsoid(s: &Scenario, data: Option<&DataSet>) -> Result<MatrixEllipsoid> {
    match s.mode {
        Mode::Model => MatrixEllipsoid::point(&s.plant.a, &s.plant.b, POINT_RHO),
        Mode::Data | Mode::Baseline => {
            let ds = data.ok_or_else(|| Error::Input(format!("mode {} needs a data set", s.mode)))?;
            fit_from_data(ds, &s.plant.g, ds.eps)
        }
    }
}

/// Runs the synthesis routine selected by the scenario's mode and objective.
pub fn synthesize(s: &Scenario, ell: &MatrixEllipsoid) -> Result<SynthesisOutcome> {
    synthesize_with(s, ell, s.mode == Mode::Baseline)
}

fn synthesize_with(s: &Scenario, ell: &MatrixEllipsoid, baseline: bool) -> Result<SynthesisOutcome> {
    let p = &s.plant;
    let ch = s.channels();
    if baseline {
        let ch = (s.objective != Objective::Stabilize).then_some(&ch);
        return baseline_xdiag(ell, &s.pattern, s.objective, ch, &s.algo);
    }
    match s.objective {
        Objective::Stabilize => stabilize_structured(ell, &s.pattern, &s.algo),
        Objective::H2 => h2_structured(ell, &p.c, &p.d, &p.g, &s.pattern, &s.algo),
        Objective::Hinf => hinf_structured(ell, &p.c, &p.d, &p.g, &p.h, &s.pattern, &s.algo),
    }
}

/// Certifies an ok outcome against the ellipsoid and the ground truth.
pub fn certify(s: &Scenario, ell: &MatrixEllipsoid, out: &SynthesisOutcome) -> Result<CertificationReport> {
    let ch = s.channels();
    let opts = CertifyOptions {
        channels: (s.objective != Objective::Stabilize).then_some(&ch),
        truth: Some(&s.plant),
        pattern: Some(&s.pattern),
        samples: s.cert_samples,
        seed: s.cert_seed,
        sampled_norms: false,
    };
    certify_robust(ell, out, &opts)
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub data: Option<DataSet>,
    pub ellipsoid: MatrixEllipsoid,
    pub outcome: SynthesisOutcome,
    /// Present when the outcome is ok.
    pub report: Option<CertificationReport>,
}

pub fn run_scenario(s: &Scenario) -> Result<RunArtifacts> {
    s.validate()?;
    let data = match s.mode {
        Mode::Model => None,
        Mode::Data | Mode::Baseline => Some(collect(s)?),
    };
    let ell = ellipsoid(s, data.as_ref())?;
    let outcome = synthesize(s, &ell)?;
    let report = if outcome.is_ok() { Some(certify(s, &ell, &outcome)?) } else { None };
    Ok(RunArtifacts { data, ellipsoid: ell, outcome, report })
}

impl RunArtifacts {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.outcome.status)
    }

    /// One line: status, bound, residual, ground-truth stability and the
    /// certified sample fraction.
    pub fn summary(&self) -> String {
        let o = &self.outcome;
        let mut line = format!("status={} iterations={}", o.status, o.iterations());
        if let Some(g) = o.gamma {
            let _ = write!(line, " gamma={g:.6}");
        }
        if let Some(r) = &self.report {
            if let Some(res) = r.residual {
                let _ = write!(line, " residual={res:.3e}");
            }
            if let Some(h) = r.hurwitz_truth {
                let _ = write!(line, " hurwitz={h}");
            }
            if let Some(n) = r.true_h2.or(r.true_hinf) {
                let _ = write!(line, " true_norm={n:.6}");
            }
            let _ = write!(line, " certified={:.4}", r.hurwitz_sampled_fraction.min(r.lemma_sampled_fraction));
        }
        line
    }

    /// Writes every artifact into `dir` and returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body)?;
            files.push(path);
            Ok(())
        };
        if let Some(d) = &self.data {
            put("data.csv", d.to_csv())?;
        }
        put("ellipsoid.csv", self.ellipsoid.to_csv())?;
        put("outcome.csv", self.outcome.to_csv())?;
        put("trace.csv", self.outcome.trace_csv())?;
        if let Some(r) = &self.report {
            put("report.txt", r.to_text())?;
            put("samples.csv", r.samples_csv())?;
        }
        Ok(files)
    }
}

/// Aggregated result of one table cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    /// Median performance bound over the successful seeds.
    Value(f64),
    /// Successful stabilization (no performance bound).
    Stable,
    Infeasible,
    NoConv,
    Error,
}

impl Cell {
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }

    fn label(&self, precise: bool) -> String {
        match self {
            Cell::Value(v) if precise => format!("{v:.16e}"),
            Cell::Value(v) => sig4(*v),
            Cell::Stable => "Stable".into(),
            Cell::Infeasible => "Infeasible".into(),
            Cell::NoConv => "NoConv".into(),
            Cell::Error => "Error".into(),
        }
    }

    fn parse(s: &str) -> Result<Cell> {
        Ok(match s {
            "Stable" => Cell::Stable,
            "Infeasible" => Cell::Infeasible,
            "NoConv" => Cell::NoConv,
            "Error" => Cell::Error,
            v => Cell::Value(v.parse().map_err(|_| Error::Input(format!("bad table cell `{v}`")))?),
        })
    }
}

fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 3 - v.abs().log10().floor() as i32;
    if (0..=12).contains(&digits) {
        format!("{v:.*}", digits as usize)
    } else {
        format!("{v:.3e}")
    }
}

/// One synthesis run inside a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub design: String,
    pub column: String,
    /// Absent for the model-based column, which uses no data.
    pub seed: Option<u64>,
    pub status: Option<SynthesisStatus>,
    pub gamma: Option<f64>,
    /// True closed-loop norm at the ground truth for ok performance runs.
    pub true_norm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub objective: Objective,
    pub axis: String,
    pub seeds: Vec<u64>,
    pub columns: Vec<String>,
    /// `(design, cells)` in column order.
    pub rows: Vec<(String, Vec<Cell>)>,
    pub runs: Vec<SweepRun>,
}

pub const DESIGN_OURS: &str = "structured";
pub const DESIGN_XDIAG: &str = "x-diag";
pub const MODEL_COLUMN: &str = "model";

#[derive(Clone)]
struct Task {
    design: &'static str,
    col: usize,
    seed: Option<u64>,
}

/// Runs the table behind `template`: one row per design (the structured
/// algorithm and the diagonal-X baseline), a model-based column followed by
/// one column per axis value; data-driven cells report the median over the
/// template's seeds. Runs execute on up to `jobs` threads; the result does
/// not depend on `jobs`.
pub fn run_sweep(template: &Scenario, jobs: usize) -> Result<SweepTable> {
    template.validate()?;
    let axis = &template.sweep_axis;
    let mut columns = vec![MODEL_COLUMN.to_string()];
    columns.extend(axis.labels());
    let mut tasks = Vec::new();
    for design in [DESIGN_OURS, DESIGN_XDIAG] {
        tasks.push(Task { design, col: 0, seed: None });
        for col in 1..columns.len() {
            for &seed in &template.sweep_seeds {
                tasks.push(Task { design, col, seed: Some(seed) });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<SweepRun> =
        pool.install(|| tasks.par_iter().map(|t| sweep_run(template, axis, &columns, t)).collect());

    let rows = [DESIGN_OURS, DESIGN_XDIAG]
        .iter()
        .map(|&design| {
            let cells = columns
                .iter()
                .map(|c| aggregate(template.objective, runs.iter().filter(|r| r.design == design && &r.column == c)))
                .collect();
            (design.to_string(), cells)
        })
        .collect();
    Ok(SweepTable {
        objective: template.objective,
        axis: axis.name().to_string(),
        seeds: template.sweep_seeds.clone(),
        columns,
        rows,
        runs,
    })
}

fn sweep_run(template: &Scenario, axis: &SweepAxis, columns: &[String], t: &Task) -> SweepRun {
    let mut s = template.clone();
    let baseline = t.design == DESIGN_XDIAG;
    let res = (|| -> Result<SynthesisOutcome> {
        let ell = match t.seed {
            None => MatrixEllipsoid::point(&s.plant.a, &s.plant.b, POINT_RHO)?,
            Some(seed) => {
                let mut cfg: CollectConfig = s.data;
                cfg.seed = seed;
                axis.apply(t.col - 1, &mut cfg);
                s.data = cfg;
                let ds = collect(&s)?;
                fit_from_data(&ds, &s.plant.g, ds.eps)?
            }
        };
        synthesize_with(&s, &ell, baseline)
    })();
    let mut run = SweepRun {
        design: t.design.to_string(),
        column: columns[t.col].clone(),
        seed: t.seed,
        status: None,
        gamma: None,
        true_norm: None,
        error: None,
    };
    match res {
        Ok(o) => {
            run.status = Some(o.status);
            run.gamma = o.gamma;
            if o.is_ok() {
                run.true_norm = true_norm(&s.plant, s.objective, &o.k).ok().flatten();
            }
        }
        Err(e) => run.error = Some(e.to_string()),
    }
    run
}

/// True H2 or H-infinity norm of the closed loop `sys` under `k`; `None`
/// for stabilization.
pub fn true_norm(sys: &LtiSystem, objective: Objective, k: &DMatrix<f64>) -> Result<Option<f64>> {
    match objective {
        Objective::Stabilize => Ok(None),
        Objective::H2 => h2_norm(sys, k).map(Some),
        Objective::Hinf => hinf_norm(sys, k, 1e-4).map(Some),
    }
}

/// Median over successful runs when they are a strict majority, otherwise
/// the most frequent failure.
fn aggregate<'a>(objective: Objective, runs: impl Iterator<Item = &'a SweepRun>) -> Cell {
    let runs: Vec<&SweepRun> = runs.collect();
    let ok: Vec<&SweepRun> = runs.iter().copied().filter(|r| r.status == Some(SynthesisStatus::Ok)).collect();
    if 2 * ok.len() > runs.len() {
        if objective == Objective::Stabilize {
            return Cell::Stable;
        }
        let mut g: Vec<f64> = ok.iter().filter_map(|r| r.gamma).collect();
        if g.is_empty() {
            return Cell::Error;
        }
        return Cell::Value(median(&mut g));
    }
    let count = |f: &dyn Fn(&SweepRun) -> bool| runs.iter().filter(|r| f(r)).count();
    let inf = count(&|r| r.status == Some(SynthesisStatus::Infeasible));
    let nc = count(&|r| r.status == Some(SynthesisStatus::NoConvergence));
    let err = count(&|r| r.error.is_some());
    if err > inf.max(nc) {
        Cell::Error
    } else if nc > inf {
        Cell::NoConv
    } else {
        Cell::Infeasible
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SweepTable {
    pub fn cell(&self, design: &str, column: &str) -> Option<Cell> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|(d, _)| d == design).map(|(_, cells)| cells[j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "# objective={}", self.objective);
        let _ = writeln!(out, "# axis={}", self.axis);
        let _ = writeln!(out, "# seeds={}", seeds.join(" "));
        let _ = writeln!(out, "# cells: median bound over seeds when a majority succeed, else the dominant failure");
        let _ = writeln!(out, "design,{}", self.columns.join(","));
        for (design, cells) in &self.rows {
            let c: Vec<String> = cells.iter().map(|c| c.label(true)).collect();
            let _ = writeln!(out, "{design},{}", c.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<SweepTable> {
        let bad = |m: String| Error::Input(format!("sweep table: {m}"));
        let mut header = std::collections::BTreeMap::new();
        let mut columns = None;
        let mut rows = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match columns {
                None => {
                    if fields.first() != Some(&"design") {
                        return Err(bad("missing column header".into()));
                    }
                    columns = Some(fields[1..].iter().map(|s| s.to_string()).collect::<Vec<_>>());
                }
                Some(ref cols) => {
                    if fields.len() != cols.len() + 1 {
                        return Err(bad(format!("row `{}` has {} cells", fields[0], fields.len() - 1)));
                    }
                    let cells = fields[1..].iter().map(|f| Cell::parse(f)).collect::<Result<_>>()?;
                    rows.push((fields[0].to_string(), cells));
                }
            }
        }
        let get = |k: &str| header.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let seeds = get("seeds")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("bad seed `{s}`"))))
            .collect::<Result<_>>()?;
        Ok(SweepTable {
            objective: get("objective")?.parse()?,
            axis: get("axis")?,
            seeds,
            columns: columns.ok_or_else(|| bad("no columns".into()))?,
            rows,
            runs: Vec::new(),
        })
    }

    /// Per-run details: one line per (design, column, seed).
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("design,column,seed,status,gamma,true_norm,error\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.16e}"));
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.design,
                r.column,
                r.seed.map_or_else(String::new, |s| s.to_string()),
                r.status.map_or_else(|| "error".to_string(), |s| s.to_string()),
                opt(r.gamma),
                opt(r.true_norm),
                r.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }

    /// Aligned console table with four significant digits.
    pub fn to_text(&self) -> String {
        let mut grid = vec![std::iter::once("design".to_string()).chain(self.columns.iter().cloned()).collect::<Vec<_>>()];
        for (design, cells) in &self.rows {
            grid.push(std::iter::once(design.clone()).chain(cells.iter().map(|c| c.label(false))).collect());
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|j| grid.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{} bound, median over seeds {}", self.objective, seeds.join(","));
        for row in &grid {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Writes `sweep.csv`, `sweep_runs.csv` and `sweep.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (name, body) in [("sweep.csv", self.to_csv()), ("sweep_runs.csv", self.runs_csv()), ("sweep.txt", self.to_text())] {
            let path = dir.join(name);
            fs::write(&path, body)?;
            files.push(path);
        }
        Ok(files)
    }
}
