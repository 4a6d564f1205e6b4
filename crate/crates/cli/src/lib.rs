//! Command implementations for the `censor` binary: censor schedules, simulated
//! market tracks, and oracle suites, each writing CSV/JSON into an output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use censor_core::market::{DisclosureEvent, Market, ValuationTrack};
use censor_core::oracle::{
    engine_window, indifference_check, lpm_order_check, nash_check, reduction_check, statics_sweep,
    Report, StaticsGrid, WindowConfig,
};
use censor_core::{
    simulate_path, HypIntensityForm, ModelSpec, MultiCensor, TimeGrid, VarianceConvention,
};

pub const SUMMARY_SCHEMA: &str = "censor-summary/1";

#[derive(Debug, Parser)]
#[command(
    name = "censor",
    version,
    about = "Disclosure censors, market simulation and equilibrium checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cutoff and valuation schedules for a silent interval and optional event fixtures.
    Censor(CensorArgs),
    /// Simulate paths, run the disclosure game, and dump tracks, events and a summary.
    Simulate(SimulateArgs),
    /// Run an oracle suite; exit code 0 iff every verdict passes.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Form {
    #[default]
    Thinned,
    Literal,
}

impl From<Form> for HypIntensityForm {
    fn from(f: Form) -> Self {
        match f {
            Form::Thinned => HypIntensityForm::Thinned,
            Form::Literal => HypIntensityForm::Literal,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Uniform grid steps K on [0, 1].
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    /// Variance convention for σ̂: theorem1, lemma2 or proof.
    #[arg(long, default_value = "proof")]
    pub convention: VarianceConvention,
    /// Hypothetical-agent intensity form.
    #[arg(long, value_enum, default_value_t = Form::Thinned)]
    pub form: Form,
}

#[derive(Debug, Clone, Args)]
pub struct CensorArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON list of {t, agents, values} disclosure fixtures.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Write every k-th grid point to tracks.csv (events and t = 1 always kept).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Also write the simulated observation paths and arrival times.
    #[arg(long)]
    pub dump_paths: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Indifference,
    Lpm,
    Nash,
    Statics,
    Reduction,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Model config; the statics suite runs its built-in grid and ignores it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub paths: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Window start t.
    #[arg(long, default_value_t = 0.2)]
    pub t: f64,
    /// Window length s − t.
    #[arg(long, default_value_t = 1e-3)]
    pub window: f64,
    /// Multiplier applied to the engine cutoff of `--agent`.
    #[arg(long, default_value_t = 1.0)]
    pub perturb: f64,
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Round-trip-safe float text (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn load_spec(path: &Path) -> Result<ModelSpec> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    ModelSpec::from_json_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

/// Disclosure fixture for `censor --events`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EventFixture {
    pub t: f64,
    pub agents: Vec<usize>,
    pub values: Vec<f64>,
}

fn build_censor(spec: &ModelSpec, engine: &EngineArgs) -> Result<MultiCensor> {
    let grid = Arc::new(TimeGrid::uniform(engine.grid)?);
    Ok(MultiCensor::new(
        spec,
        grid,
        engine.convention,
        engine.form.into(),
    )?)
}

fn write_schedule(
    w: &mut csv::Writer<fs::File>,
    censor: &MultiCensor,
    anchor: usize,
    obs: &[f64],
    end: usize,
    segment: Option<usize>,
) -> Result<()> {
    for p in censor
        .points(anchor, obs)
        .into_iter()
        .take(end - anchor + 1)
    {
        for i in 0..censor.m() {
            let mut row = vec![
                fmt_f64(p.t),
                i.to_string(),
                fmt_f64(p.y_cut[i]),
                fmt_f64(p.gamma_tilde[i]),
                fmt_f64(p.nu_agg[i]),
            ];
            if let Some(s) = segment {
                row.push(s.to_string());
            }
            w.write_record(&row)?;
        }
    }
    Ok(())
}

/// Writes `censor.csv` (silence from t = 0 anchored at the initial observations) and,
/// with fixtures, `censor_fixture.csv` with one segment per re-anchoring.
pub fn cmd_censor(args: &CensorArgs) -> Result<Vec<PathBuf>> {
    let spec = load_spec(&args.config)?;
    let censor = build_censor(&spec, &args.engine)?;
    ensure_dir(&args.out)?;
    let obs = spec.initial_observations();
    let last = censor.grid.last_index();
    let header = ["t", "agent", "gamma_obs", "gamma_tilde", "nu"];
    let path = args.out.join("censor.csv");
    let mut w = writer(&path)?;
    w.write_record(header)?;
    write_schedule(&mut w, &censor, 0, &obs, last, None)?;
    w.flush()?;
    let mut written = vec![path];

    if let Some(events) = &args.events {
        let text =
            fs::read_to_string(events).with_context(|| format!("reading {}", events.display()))?;
        let mut fixtures: Vec<EventFixture> =
            serde_json::from_str(&text).context("parsing event fixtures")?;
        fixtures.sort_by(|a, b| a.t.total_cmp(&b.t));
        let path = args.out.join("censor_fixture.csv");
        let mut w = writer(&path)?;
        w.write_record(header.iter().chain(&["segment"]))?;
        let (mut anchor, mut current) = (0usize, obs.clone());
        for (seg, fx) in fixtures.iter().enumerate() {
            if fx.agents.len() != fx.values.len() || fx.agents.is_empty() {
                bail!(
                    "fixture at t = {}: agents and values must be non-empty and aligned",
                    fx.t
                );
            }
            if !(fx.t > 0.0 && fx.t < 1.0) {
                bail!("fixture time {} outside (0, 1)", fx.t);
            }
            let k = censor.grid.index_at_or_after(fx.t);
            if k <= anchor {
                bail!("fixture at t = {} snaps onto the previous anchor", fx.t);
            }
            write_schedule(&mut w, &censor, anchor, &current, k, Some(seg))?;
            let mut fresh = censor.cutoffs(anchor, &current, k);
            for (&j, &v) in fx.agents.iter().zip(&fx.values) {
                if j >= spec.m || !v.is_finite() || v <= 0.0 {
                    bail!("fixture at t = {}: invalid agent {j} or value {v}", fx.t);
                }
                fresh[j] = v;
            }
            anchor = k;
            current = fresh;
        }
        write_schedule(
            &mut w,
            &censor,
            anchor,
            &current,
            last,
            Some(fixtures.len()),
        )?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub voluntary_disclosures: u64,
    pub mean_jump: Option<f64>,
    pub terminal_mean: f64,
    pub terminal_sd: f64,
    pub initial_valuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub schema: &'static str,
    pub seed: u64,
    pub paths: usize,
    pub grid_steps: usize,
    pub convention: String,
    pub voluntary_events: u64,
    pub mean_events_per_path: f64,
    pub paths_with_disclosure: u64,
    pub agents: Vec<AgentSummary>,
}

fn summarize(tracks: &[ValuationTrack], args: &SimulateArgs, m: usize) -> SimulationSummary {
    let last = tracks.first().map(|t| t.grid.last_index()).unwrap_or(0);
    let mut agents: Vec<AgentSummary> = (0..m)
        .map(|i| AgentSummary {
            agent: i,
            ..Default::default()
        })
        .collect();
    let mut voluntary = 0u64;
    let mut with = 0u64;
    for (i, agent) in agents.iter_mut().enumerate() {
        let mut jumps = 0.0;
        let mut count = 0u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for tr in tracks {
            for e in tr.voluntary() {
                jumps += tr.s_price[i][e.index] - tr.gamma_tilde[i][e.index];
                count += 1;
                if e.agents.contains(&i) {
                    agent.voluntary_disclosures += 1;
                }
            }
            let v = tr.s_price[i][last];
            s1 += v;
            s2 += v * v;
        }
        let n = tracks.len() as f64;
        let mean = s1 / n;
        agent.mean_jump = (count > 0).then(|| jumps / count as f64);
        agent.terminal_mean = mean;
        agent.terminal_sd = if n > 1.0 {
            ((s2 - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
        } else {
            0.0
        };
        agent.initial_valuation = tracks.first().map(|t| t.s_price[i][0]).unwrap_or(f64::NAN);
    }
    for tr in tracks {
        let c = tr.voluntary().count() as u64;
        voluntary += c;
        with += u64::from(c > 0);
    }
    SimulationSummary {
        schema: SUMMARY_SCHEMA,
        seed: args.seed,
        paths: tracks.len(),
        grid_steps: args.engine.grid,
        convention: args.engine.convention.to_string(),
        voluntary_events: voluntary,
        mean_events_per_path: voluntary as f64 / tracks.len().max(1) as f64,
        paths_with_disclosure: with,
        agents,
    }
}

fn event_record(path: u64, e: &DisclosureEvent) -> Vec<String> {
    vec![
        path.to_string(),
        fmt_f64(e.t),
        join(&e.agents, |a| a.to_string()),
        join(&e.values, |v| fmt_f64(*v)),
        e.terminal.to_string(),
    ]
}

/// Writes `tracks.csv`, `events.csv`, `summary.json` and optionally `paths.csv`, `arrivals.csv`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulationSummary> {
    if args.paths == 0 || args.stride == 0 {
        bail!("--paths and --stride must be positive");
    }
    let spec = load_spec(&args.config)?;
    let censor = build_censor(&spec, &args.engine)?;
    let grid = Arc::clone(&censor.grid);
    let market = Market::new(censor);
    ensure_dir(&args.out)?;
    let paths: Vec<_> = (0..args.paths as u64)
        .map(|j| simulate_path(&spec, &grid, args.seed, j))
        .collect();
    let tracks = market.run_paths(&paths)?;

    let mut tw = writer(&args.out.join("tracks.csv"))?;
    tw.write_record(["path", "t", "agent", "gamma_tilde", "s_price"])?;
    let mut ew = writer(&args.out.join("events.csv"))?;
    ew.write_record(["path", "t", "agents", "values", "terminal"])?;
    let last = grid.last_index();
    for tr in &tracks {
        let mut keep = vec![false; grid.len()];
        for (k, flag) in keep.iter_mut().enumerate() {
            *flag = k % args.stride == 0 || k == last;
        }
        for e in &tr.events {
            keep[e.index] = true;
            ew.write_record(event_record(tr.path, e))?;
        }
        for (k, &t) in grid.points().iter().enumerate().filter(|(k, _)| keep[*k]) {
            for i in 0..tr.agents() {
                tw.write_record([
                    tr.path.to_string(),
                    fmt_f64(t),
                    i.to_string(),
                    fmt_f64(tr.gamma_tilde[i][k]),
                    fmt_f64(tr.s_price[i][k]),
                ])?;
            }
        }
    }
    tw.flush()?;
    ew.flush()?;

    if args.dump_paths {
        let mut pw = writer(&args.out.join("paths.csv"))?;
        pw.write_record(["path", "t", "x", "agent", "y"])?;
        let mut aw = writer(&args.out.join("arrivals.csv"))?;
        aw.write_record(["path", "agent", "t"])?;
        for p in &paths {
            for (k, &t) in grid.points().iter().enumerate() {
                for i in 0..p.agents() {
                    pw.write_record([
                        p.index.to_string(),
                        fmt_f64(t),
                        fmt_f64(p.x[k]),
                        i.to_string(),
                        fmt_f64(p.y[i][k]),
                    ])?;
                }
            }
            for (i, times) in p.arrivals.iter().enumerate() {
                for &t in times {
                    aw.write_record([p.index.to_string(), i.to_string(), fmt_f64(t)])?;
                }
            }
        }
        pw.flush()?;
        aw.flush()?;
    }

    let summary = summarize(&tracks, args, spec.m);
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Indifference => "indifference",
        Suite::Lpm => "lpm",
        Suite::Nash => "nash",
        Suite::Statics => "statics",
        Suite::Reduction => "reduction",
    }
}

/// Runs the suite and writes `report_<suite>.json`.
pub fn cmd_verify(args: &VerifyArgs) -> Result<Report> {
    let spec = match (&args.config, args.suite) {
        (_, Suite::Statics) => None,
        (Some(p), _) => Some(load_spec(p)?),
        (None, s) => bail!("--config is required for the {} suite", suite_name(s)),
    };
    let window = |spec: &ModelSpec| WindowConfig {
        conv: args.engine.convention,
        form: args.engine.form.into(),
        ..WindowConfig::new(spec, args.t, args.t + args.window, args.paths, args.seed)
    };
    let perturbed = |spec: &ModelSpec, cfg: &WindowConfig| -> Result<Vec<f64>> {
        let mut cut = engine_window(spec, cfg)?.cutoffs;
        let slot = cut
            .get_mut(args.agent)
            .with_context(|| format!("agent {} out of range", args.agent))?;
        *slot *= args.perturb;
        Ok(cut)
    };
    let report = match (args.suite, spec.as_ref()) {
        (Suite::Indifference, Some(spec)) => {
            let cfg = window(spec);
            let cut = perturbed(spec, &cfg)?;
            indifference_check(spec, &cfg, args.agent, Some(&cut))?
        }
        (Suite::Nash, Some(spec)) => {
            let cfg = window(spec);
            let cut = perturbed(spec, &cfg)?;
            nash_check(spec, &cfg, Some(&cut))?
        }
        (Suite::Lpm, Some(spec)) => {
            lpm_order_check(spec, &window(spec), 10.0 * args.window, args.window, 5.0)?
        }
        (Suite::Reduction, Some(spec)) => reduction_check(
            spec,
            args.engine.grid,
            args.engine.convention,
            args.engine.form.into(),
        )?,
        (Suite::Statics, _) => statics_sweep(&StaticsGrid::default())?,
        (s, None) => bail!("--config is required for the {} suite", suite_name(s)),
    };
    ensure_dir(&args.out)?;
    let path = args
        .out
        .join(format!("report_{}.json", suite_name(args.suite)));
    fs::write(&path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}
