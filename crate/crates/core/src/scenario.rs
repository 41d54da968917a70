//! Scenario files: a flat list of dotted `key = value` lines describing a
//! plant, its performance channels, the data experiment, the sparsity
//! pattern and the algorithm settings.
//!
//! ```text
//! preset = paper.h2
//! data.T = 80
//! data.eps = 0.03
//! pattern.row1 = 1 1 0 0
//! pattern.row2 = 0 0 1 1
//! ```
//!
//! Matrices are written row by row, rows separated by `;`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lti::{make_mass_spring, CollectConfig, LtiSystem, SparsityPattern};
use crate::synthesis::{AlgoConfig, Channels, Objective};

pub use crate::uncertainty::POINT_RHO;

/// Names accepted by [`Scenario::preset`].
pub const PRESETS: [&str; 3] = ["paper.stab", "paper.h2", "paper.hinf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Structured design over the ellipsoid fitted to data.
    Data,
    /// Structured design over a point ellipsoid at the true `(A, B)`.
    Model,
    /// Diagonal-X baseline over the ellipsoid fitted to data.
    Baseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Data => "data",
            Mode::Model => "model",
            Mode::Baseline => "baseline",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "data" | "data-driven" => Ok(Mode::Data),
            "model" | "model-based" | "model-based-point-ellipsoid" => Ok(Mode::Model),
            "baseline" | "baseline-xdiag" | "xdiag" => Ok(Mode::Baseline),
            other => Err(Error::Input(format!("unknown mode `{other}` (expected data, model or baseline)"))),
        }
    }
}

/// Values swept by `run_sweep`.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Eps(Vec<f64>),
    Samples(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Eps(_) => "eps",
            SweepAxis::Samples(_) => "T",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Eps(v) => v.len(),
            SweepAxis::Samples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::Eps(v) => v.iter().map(|e| format!("eps={e}")).collect(),
            SweepAxis::Samples(v) => v.iter().map(|t| format!("T={t}")).collect(),
        }
    }

    /// Applies the `i`-th value to a data configuration.
    pub fn apply(&self, i: usize, cfg: &mut CollectConfig) {
        match self {
            SweepAxis::Eps(v) => cfg.eps = v[i],
            SweepAxis::Samples(v) => cfg.samples = v[i],
        }
    }
}

impl Default for SweepAxis {
    fn default() -> Self {
        SweepAxis::Eps(vec![0.01, 0.03, 0.05])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Ground-truth plant together with its performance channels.
    pub plant: LtiSystem,
    pub data: CollectConfig,
    pub pattern: SparsityPattern,
    pub objective: Objective,
    pub algo: AlgoConfig,
    pub mode: Mode,
    /// Monte-Carlo members drawn when certifying.
    pub cert_samples: usize,
    pub cert_seed: u64,
    pub sweep_axis: SweepAxis,
    pub sweep_seeds: Vec<u64>,
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// `[I; 0]` and `[0; I]` output channels weighting state and input.
fn weighted_channels(nx: usize, nu: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut c = DMatrix::zeros(nx + nu, nx);
    c.view_mut((0, 0), (nx, nx)).copy_from(&eye(nx));
    let mut d = DMatrix::zeros(nx + nu, nu);
    d.view_mut((nx, 0), (nu, nu)).copy_from(&eye(nu));
    (c, d)
}

fn rows(r: &[&[u8]]) -> SparsityPattern {
    SparsityPattern::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).expect("preset pattern")
}

impl Default for Scenario {
    /// Two-mass chain, state output, full pattern, stabilization from data.
    fn default() -> Self {
        let plant = make_mass_spring(2).expect("builtin plant");
        let (nx, nu) = (plant.nx(), plant.nu());
        Scenario {
            name: "custom".into(),
            plant,
            data: CollectConfig::default(),
            pattern: SparsityPattern::full(nu, nx),
            objective: Objective::Stabilize,
            algo: AlgoConfig::default(),
            mode: Mode::Data,
            cert_samples: 1000,
            cert_seed: 7,
            sweep_axis: SweepAxis::default(),
            sweep_seeds: (1..=5).collect(),
        }
    }
}

impl Scenario {
    pub fn preset(name: &str) -> Result<Scenario> {
        let base = Scenario::default();
        let (nx, nu, nd) = (base.plant.nx(), base.plant.nu(), base.plant.nd());
        let (c, d) = weighted_channels(nx, nu);
        // the structured performance designs creep toward their fixed point
        let algo = AlgoConfig { max_iter: 300, ..AlgoConfig::default() };
        match name {
            "paper.stab" => Ok(Scenario {
                name: name.into(),
                pattern: rows(&[&[0, 1, 1, 0], &[0, 1, 1, 0]]),
                ..base
            }),
            "paper.h2" => Ok(Scenario {
                name: name.into(),
                plant: base.plant.with_channels(c, d, DMatrix::zeros(nx + nu, nd))?,
                pattern: rows(&[&[1, 1, 0, 0], &[0, 0, 1, 1]]),
                objective: Objective::H2,
                algo,
                ..base
            }),
            "paper.hinf" => {
                let (_, h) = weighted_channels(nx, nd);
                Ok(Scenario {
                    name: name.into(),
                    plant: base.plant.with_channels(c, d, h)?,
                    pattern: rows(&[&[0, 0, 1, 1], &[1, 0, 0, 0]]),
                    objective: Objective::Hinf,
                    algo,
                    ..base
                })
            }
            other => Err(Error::Input(format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")))),
        }
    }

    pub fn channels(&self) -> Channels {
        Channels::from_system(&self.plant)
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        if self.pattern.shape() != (self.plant.nu(), self.plant.nx()) {
            return Err(Error::Dimension(format!(
                "pattern is {:?}, gain is {:?}",
                self.pattern.shape(),
                (self.plant.nu(), self.plant.nx())
            )));
        }
        if !(self.data.ts > 0.0) || !(self.data.eps >= 0.0) || self.data.samples == 0 {
            return Err(Error::Input("need data.Ts > 0, data.eps >= 0 and data.T >= 1".into()));
        }
        if self.objective == Objective::H2 && self.plant.h.amax() != 0.0 {
            return Err(Error::UnsupportedChannel("H2 objective requires H = 0".into()));
        }
        if self.sweep_axis.is_empty() || self.sweep_seeds.is_empty() {
            return Err(Error::Input("sweep axis and seed list must not be empty".into()));
        }
        self.algo.validate()
    }

    pub fn parse(text: &str) -> Result<Scenario> {
        let entries = Entries::parse(text)?;
        entries.build()
    }

    /// Writes the scenario back in the file format; `parse` of the output
    /// reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name = {}", self.name);
        let p = &self.plant;
        for (k, m) in [("A", &p.a), ("B", &p.b), ("G", &p.g)] {
            let _ = writeln!(out, "plant.{k} = {}", fmt_matrix(m));
        }
        for (k, m) in [("C", &p.c), ("D", &p.d), ("H", &p.h)] {
            let _ = writeln!(out, "channels.{k} = {}", fmt_matrix(m));
        }
        let d = &self.data;
        let _ = writeln!(out, "data.T = {}", d.samples);
        let _ = writeln!(out, "data.Ts = {:e}", d.ts);
        let _ = writeln!(out, "data.eps = {:e}", d.eps);
        let _ = writeln!(out, "data.seed = {}", d.seed);
        let _ = writeln!(out, "data.amplitude = {:e}", d.amplitude);
        let _ = writeln!(out, "data.initial_scale = {:e}", d.initial_scale);
        for (i, row) in self.pattern.mask().row_iter().enumerate() {
            let r: Vec<String> = row.iter().map(|v| format!("{}", *v as u8)).collect();
            let _ = writeln!(out, "pattern.row{} = {}", i + 1, r.join(" "));
        }
        let _ = writeln!(out, "objective = {}", self.objective);
        let _ = writeln!(out, "mode = {}", self.mode);
        let a = &self.algo;
        let _ = writeln!(out, "algo.beta0 = {:e}", a.beta0);
        let _ = writeln!(out, "algo.mu = {:e}", a.mu);
        let _ = writeln!(out, "algo.beta_cap = {:e}", a.beta_cap);
        let _ = writeln!(out, "algo.eps_T = {:e}", a.eps_t);
        let _ = writeln!(out, "algo.eta = {:e}", a.eta);
        let _ = writeln!(out, "algo.max_iter = {}", a.max_iter);
        let _ = writeln!(out, "certify.samples = {}", self.cert_samples);
        let _ = writeln!(out, "certify.seed = {}", self.cert_seed);
        let axis = match &self.sweep_axis {
            SweepAxis::Eps(v) => v.iter().map(|e| format!("{e:e}")).collect::<Vec<_>>(),
            SweepAxis::Samples(v) => v.iter().map(|t| t.to_string()).collect(),
        };
        let _ = writeln!(out, "sweep.{} = {}", self.sweep_axis.name(), axis.join(" "));
        let seeds: Vec<String> = self.sweep_seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "sweep.seeds = {}", seeds.join(" "));
        out
    }
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))
        .collect();
    rows.join("; ")
}

const KEYS: &[&str] = &[
    "name",
    "preset",
    "plant.kind",
    "plant.masses",
    "plant.A",
    "plant.B",
    "plant.G",
    "channels.preset",
    "channels.C",
    "channels.D",
    "channels.H",
    "data.T",
    "data.Ts",
    "data.eps",
    "data.seed",
    "data.amplitude",
    "data.initial_scale",
    "objective",
    "mode",
    "algo.beta0",
    "algo.mu",
    "algo.beta_cap",
    "algo.eps_T",
    "algo.eta",
    "algo.max_iter",
    "certify.samples",
    "certify.seed",
    "sweep.eps",
    "sweep.T",
    "sweep.seeds",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    /// `(row index, line, value)` of the `pattern.rowN` keys.
    pattern: Vec<(usize, usize, String)>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

impl Entries {
    fn parse(text: &str) -> Result<Entries> {
        let mut map = BTreeMap::new();
        let mut pattern: Vec<(usize, usize, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| perr(line, format!("expected `key = value`, found `{body}`")))?;
            let (key, value) = (key.trim(), value.trim().to_string());
            if let Some(n) = key.strip_prefix("pattern.row") {
                let idx: usize = n
                    .parse()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| perr(line, format!("bad pattern key `{key}` (use pattern.row1, pattern.row2, ...)")))?;
                if pattern.iter().any(|p| p.0 == idx) {
                    return Err(perr(line, format!("duplicate key `{key}`")));
                }
                pattern.push((idx, line, value));
                continue;
            }
            if !KEYS.contains(&key) {
                return Err(perr(line, format!("unknown key `{key}`")));
            }
            if map.insert(key.to_string(), (line, value)).is_some() {
                return Err(perr(line, format!("duplicate key `{key}`")));
            }
        }
        pattern.sort_by_key(|p| p.0);
        Ok(Entries { map, pattern })
    }

    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| perr(line, format!("cannot parse `{v}` as a number for `{key}`"))),
        }
    }

    fn matrix(&self, key: &str) -> Result<Option<DMatrix<f64>>> {
        self.get(key).map(|(line, v)| parse_matrix(line, v)).transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some((line, v)) = self.get(key) else { return Ok(None) };
        let items: Vec<T> = v
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| perr(line, format!("cannot parse `{s}` in `{key}`"))))
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(perr(line, format!("`{key}` needs at least one value")));
        }
        Ok(Some(items))
    }

    fn build(&self) -> Result<Scenario> {
        let mut s = match self.get("preset") {
            Some((line, name)) => Scenario::preset(name).map_err(|e| perr(line, e.to_string()))?,
            None => Scenario::default(),
        };
        if let Some((_, name)) = self.get("name") {
            s.name = name.to_string();
        }
        self.plant(&mut s)?;
        self.channels(&mut s)?;
        self.pattern(&mut s)?;

        let d = &mut s.data;
        d.samples = self.num("data.T")?.unwrap_or(d.samples);
        d.ts = self.num("data.Ts")?.unwrap_or(d.ts);
        d.eps = self.num("data.eps")?.unwrap_or(d.eps);
        d.seed = self.num("data.seed")?.unwrap_or(d.seed);
        d.amplitude = self.num("data.amplitude")?.unwrap_or(d.amplitude);
        d.initial_scale = self.num("data.initial_scale")?.unwrap_or(d.initial_scale);
        if let Some((line, _)) = self.get("data.Ts").filter(|_| !(d.ts > 0.0)) {
            return Err(perr(line, "data.Ts must be positive"));
        }
        if let Some((line, _)) = self.get("data.T").filter(|_| d.samples == 0) {
            return Err(perr(line, "data.T must be at least 1"));
        }
        if let Some((line, v)) = self.get("objective") {
            s.objective = v.parse().map_err(|e: Error| perr(line, e.to_string()))?;
        }
        if let Some((line, v)) = self.get("mode") {
            s.mode = v.parse().map_err(|e: Error| perr(line, e.to_string()))?;
        }
        let a = &mut s.algo;
        a.beta0 = self.num("algo.beta0")?.unwrap_or(a.beta0);
        a.mu = self.num("algo.mu")?.unwrap_or(a.mu);
        a.beta_cap = self.num("algo.beta_cap")?.unwrap_or(a.beta_cap);
        a.eps_t = self.num("algo.eps_T")?.unwrap_or(a.eps_t);
        a.eta = self.num("algo.eta")?.unwrap_or(a.eta);
        a.max_iter = self.num("algo.max_iter")?.unwrap_or(a.max_iter);
        s.cert_samples = self.num("certify.samples")?.unwrap_or(s.cert_samples);
        s.cert_seed = self.num("certify.seed")?.unwrap_or(s.cert_seed);

        match (self.list::<f64>("sweep.eps")?, self.list::<usize>("sweep.T")?) {
            (Some(_), Some(_)) => {
                let line = self.get("sweep.T").map_or(0, |x| x.0);
                return Err(perr(line, "give either sweep.eps or sweep.T, not both"));
            }
            (Some(e), None) => s.sweep_axis = SweepAxis::Eps(e),
            (None, Some(t)) => s.sweep_axis = SweepAxis::Samples(t),
            (None, None) => {}
        }
        if let Some(seeds) = self.list("sweep.seeds")? {
            s.sweep_seeds = seeds;
        }
        s.validate()?;
        Ok(s)
    }

    fn plant(&self, s: &mut Scenario) -> Result<()> {
        let kind = self.get("plant.kind");
        let explicit = self.get("plant.A").is_some();
        if let Some((line, k)) = kind {
            match k {
                "mass-spring" | "mass_spring" if !explicit => {}
                "explicit" if explicit => {}
                "mass-spring" | "mass_spring" | "explicit" => {
                    return Err(perr(line, "plant.kind conflicts with the presence of plant.A"));
                }
                other => return Err(perr(line, format!("unknown plant kind `{other}`"))),
            }
        }
        let new_plant = if explicit {
            let (line, _) = self.get("plant.A").expect("checked");
            let a = self.matrix("plant.A")?.expect("checked");
            let b = self.matrix("plant.B")?.ok_or_else(|| perr(line, "plant.A given without plant.B"))?;
            let g = self.matrix("plant.G")?.unwrap_or_else(|| b.clone());
            let nx = a.nrows();
            let (nu, nd) = (b.ncols(), g.ncols());
            Some(
                LtiSystem::new(a, b, g, eye(nx), DMatrix::zeros(nx, nu), DMatrix::zeros(nx, nd))
                    .map_err(|e| perr(line, e.to_string()))?,
            )
        } else if let Some((line, _)) = self.get("plant.masses") {
            let n: usize = self.num("plant.masses")?.expect("present");
            Some(make_mass_spring(n).map_err(|e| perr(line, e.to_string()))?)
        } else {
            for k in ["plant.B", "plant.G"] {
                if let Some((line, _)) = self.get(k) {
                    return Err(perr(line, format!("{k} given without plant.A")));
                }
            }
            None
        };
        if let Some(p) = new_plant {
            if (p.nx(), p.nu(), p.nd()) != (s.plant.nx(), s.plant.nu(), s.plant.nd()) {
                s.pattern = SparsityPattern::full(p.nu(), p.nx());
            }
            let same_channels = p.nx() == s.plant.nx() && p.nu() == s.plant.nu() && p.nd() == s.plant.nd();
            s.plant = if same_channels { p.with_channels(s.plant.c.clone(), s.plant.d.clone(), s.plant.h.clone())? } else { p };
        }
        Ok(())
    }

    fn channels(&self, s: &mut Scenario) -> Result<()> {
        let (nx, nu, nd) = (s.plant.nx(), s.plant.nu(), s.plant.nd());
        let (mut c, mut d, mut h) = (s.plant.c.clone(), s.plant.d.clone(), s.plant.h.clone());
        if let Some((line, name)) = self.get("channels.preset") {
            let (cw, dw) = weighted_channels(nx, nu);
            match name {
                "state" => {
                    c = eye(nx);
                    d = DMatrix::zeros(nx, nu);
                    h = DMatrix::zeros(nx, nd);
                }
                "weighted" => {
                    c = cw;
                    d = dw;
                    h = DMatrix::zeros(nx + nu, nd);
                }
                "weighted-feedthrough" => {
                    if nd != nu {
                        return Err(perr(line, "weighted-feedthrough needs as many disturbances as inputs"));
                    }
                    c = cw;
                    d = dw.clone();
                    h = dw;
                }
                other => {
                    return Err(perr(
                        line,
                        format!("unknown channel preset `{other}` (state, weighted, weighted-feedthrough)"),
                    ))
                }
            }
        }
        let mut last = 0;
        if let Some(m) = self.matrix("channels.C")? {
            last = self.get("channels.C").map_or(0, |x| x.0);
            c = m;
            if d.nrows() != c.nrows() && self.get("channels.D").is_none() {
                d = DMatrix::zeros(c.nrows(), nu);
            }
            if h.nrows() != c.nrows() && self.get("channels.H").is_none() {
                h = DMatrix::zeros(c.nrows(), nd);
            }
        }
        if let Some(m) = self.matrix("channels.D")? {
            last = last.max(self.get("channels.D").map_or(0, |x| x.0));
            d = m;
        }
        if let Some(m) = self.matrix("channels.H")? {
            last = last.max(self.get("channels.H").map_or(0, |x| x.0));
            h = m;
        }
        s.plant = s.plant.with_channels(c, d, h).map_err(|e| perr(last, e.to_string()))?;
        Ok(())
    }

    fn pattern(&self, s: &mut Scenario) -> Result<()> {
        if self.pattern.is_empty() {
            return Ok(());
        }
        let (nu, nx) = (s.plant.nu(), s.plant.nx());
        let mut rows = Vec::with_capacity(self.pattern.len());
        for (k, (idx, line, value)) in self.pattern.iter().enumerate() {
            if *idx != k + 1 {
                return Err(perr(*line, format!("pattern rows must be numbered 1..; found row{idx} after row{k}")));
            }
            let row: Vec<u8> = value
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| match t {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(perr(*line, format!("pattern entries must be 0 or 1, found `{t}`"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != nx {
                return Err(perr(*line, format!("pattern row has {} entries, the plant has {nx} states", row.len())));
            }
            rows.push(row);
        }
        if rows.len() != nu {
            let line = self.pattern.last().map_or(0, |p| p.1);
            return Err(perr(line, format!("pattern has {} rows, the plant has {nu} inputs", rows.len())));
        }
        s.pattern = SparsityPattern::from_rows(&rows)?;
        Ok(())
    }
}

fn parse_matrix(line: usize, text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| perr(line, format!("cannot parse `{t}` as a number"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(perr(line, "matrix rows must be non-empty and of equal length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(perr(line, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
