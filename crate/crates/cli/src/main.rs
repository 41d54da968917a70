//! `ddsc`: collect data, fit the uncertainty ellipsoid, synthesize and
//! certify structured state-feedback gains, and run comparison sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddsc_core::certify::{h2_norm, hinf_grid, hinf_norm};
use ddsc_core::pipeline::{self, run_scenario, run_sweep, EXIT_ERROR};
use ddsc_core::scenario::{Mode, Scenario, PRESETS};
use ddsc_core::synthesis::{Objective, SynthesisOutcome};
use ddsc_core::uncertainty::{contains, MatrixEllipsoid};
use ddsc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ddsc", version, about = "Data-driven structured robust state-feedback design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write data.csv
    Collect(Common),
    /// Collect data and fit the uncertainty ellipsoid
    Ellipsoid(Common),
    /// Run the full pipeline and write every artifact
    Synth(Common),
    /// Re-certify outcome.csv against ellipsoid.csv in the output directory
    Certify(Common),
    /// Median-over-seeds comparison table along the scenario's sweep axis
    Sweep(Common),
    /// True closed-loop norms of the gain in outcome.csv
    Norms(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a builtin preset name (paper.stab, paper.h2, paper.hinf)
    #[arg(long)]
    scenario: String,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides data.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and Monte-Carlo certification
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the scenario mode: data, model or baseline
    #[arg(long)]
    mode: Option<String>,
}

fn load(c: &Common) -> Result<Scenario> {
    let path = Path::new(&c.scenario);
    let mut s = if path.exists() {
        let text = fs::read_to_string(path)?;
        Scenario::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Input(format!("{}:{line}: {msg}", path.display())),
            other => other,
        })?
    } else if PRESETS.contains(&c.scenario.as_str()) {
        Scenario::preset(&c.scenario)?
    } else {
        return Err(Error::Input(format!(
            "no scenario file `{}` and no preset of that name (presets: {})",
            c.scenario,
            PRESETS.join(", ")
        )));
    };
    if let Some(seed) = c.seed {
        s.data.seed = seed;
        s.sweep_seeds = vec![seed];
    }
    if let Some(m) = &c.mode {
        s.mode = m.parse::<Mode>()?;
    }
    s.validate()?;
    Ok(s)
}

fn write(dir: &Path, name: &str, body: String) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn pool(jobs: usize) {
    // ignore the error when a global pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Collect(c) => {
            let s = load(&c)?;
            let ds = pipeline::collect(&s)?;
            write(&c.out, "scenario.txt", s.to_text())?;
            write(&c.out, "data.csv", ds.to_csv())?;
            println!("collected {} samples (seed {}, eps {})", ds.samples(), ds.seed, ds.eps);
            Ok(0)
        }
        Command::Ellipsoid(c) => {
            let s = load(&c)?;
            let data = match s.mode {
                Mode::Model => None,
                _ => Some(pipeline::collect(&s)?),
            };
            let ell = pipeline::ellipsoid(&s, data.as_ref())?;
            write(&c.out, "scenario.txt", s.to_text())?;
            if let Some(ds) = &data {
                write(&c.out, "data.csv", ds.to_csv())?;
            }
            write(&c.out, "ellipsoid.csv", ell.to_csv())?;
            let (a, b) = ell.center();
            let dist = (a - &s.plant.a).norm_squared() + (b - &s.plant.b).norm_squared();
            let inside = contains(&ell, &s.plant.a, &s.plant.b, 1e-7)?;
            println!("ellipsoid fitted: center distance {:.4e}, contains truth {inside}", dist.sqrt());
            Ok(0)
        }
        Command::Synth(c) => {
            pool(c.jobs);
            let s = load(&c)?;
            let art = run_scenario(&s)?;
            write(&c.out, "scenario.txt", s.to_text())?;
            art.write(&c.out)?;
            println!("{}", art.summary());
            Ok(art.exit_code())
        }
        Command::Certify(c) => {
            pool(c.jobs);
            let s = load(&c)?;
            let out = SynthesisOutcome::from_csv(&read(&c.out, "outcome.csv")?)?;
            let ell = MatrixEllipsoid::from_csv(&read(&c.out, "ellipsoid.csv")?)?;
            if !out.is_ok() {
                println!("status={} (nothing to certify)", out.status);
                return Ok(pipeline::exit_code(out.status));
            }
            let r = pipeline::certify(&s, &ell, &out)?;
            write(&c.out, "report.txt", r.to_text())?;
            write(&c.out, "samples.csv", r.samples_csv())?;
            print!("{}", r.to_text());
            Ok(if r.robust_ok() { 0 } else { EXIT_ERROR })
        }
        Command::Sweep(c) => {
            let s = load(&c)?;
            let t = run_sweep(&s, c.jobs)?;
            t.write(&c.out)?;
            print!("{}", t.to_text());
            Ok(0)
        }
        Command::Norms(c) => {
            let s = load(&c)?;
            let out = SynthesisOutcome::from_csv(&read(&c.out, "outcome.csv")?)?;
            let sys = &s.plant;
            if s.objective != Objective::Hinf && sys.h.amax() == 0.0 {
                println!("h2={:.16e}", h2_norm(sys, &out.k)?);
            }
            println!("hinf={:.16e}", hinf_norm(sys, &out.k, 1e-6)?);
            println!("hinf_grid={:.16e}", hinf_grid(sys, &out.k)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
