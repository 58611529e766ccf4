//! Command-line front end: configuration loading, subcommand dispatch and
//! tabular output.

pub mod config;
pub mod output;

use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context as _};
use clap::{Args, Parser, Subcommand};
use lln_energy::explorer::{frontier, sweep, SweepAxis, SweepSpec};
use lln_energy::pathmodel::{evaluate, ModelReport};
use lln_energy::record::{Record, Value};
use lln_energy::simulator::{simulate, Fidelity, Sampling, SimConfig, SimReport, RNG_NAME};
use sha2::{Digest, Sha256};

use config::{FamilyAxis, FragmentSetting, RunConfig, SamplingSetting};
use output::{emit, Format};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "LLN_ENERGY_CONFIG";

/// Exit status for a degenerate or divergent result under `--strict`.
pub const EXIT_DEGENERATE: u8 = 2;
/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "lln-energy",
    version,
    about = "Energy cost of reliable transfers over multi-hop lossy links"
)]
pub struct Cli {
    /// TOML configuration file; every key is optional.
    #[arg(long, env = CONFIG_ENV, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv", global = true)]
    pub format: Format,

    /// Master seed for simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Simulation replications.
    #[arg(long, global = true)]
    pub reps: Option<u32>,

    /// Exit with status 2 when a result is degenerate or divergent.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(flatten)]
    pub scenario: ScenarioFlags,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct ScenarioFlags {
    /// Maximum segment size in bytes.
    #[arg(long, global = true)]
    pub mss: Option<u32>,

    /// Bit error rate on every hop.
    #[arg(long, global = true)]
    pub ber: Option<f64>,

    /// Link-layer attempts per frame.
    #[arg(long = "r", global = true)]
    pub retries: Option<u32>,

    /// Number of hops.
    #[arg(long, global = true)]
    pub hops: Option<usize>,

    /// FEC redundancy ratio.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Application bytes to deliver.
    #[arg(long, global = true)]
    pub transfer_bytes: Option<u64>,

    /// Fragments per segment: `table`, `computed`, or a count.
    #[arg(long, global = true)]
    pub fragments: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimFlags {
    #[arg(long, value_parser = parse_fidelity)]
    pub fidelity: Option<Fidelity>,

    /// `auto`, `direct` or `skip`.
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<SamplingSetting>,

    /// Simulate at most this many segments per replication and scale up.
    #[arg(long)]
    pub segment_cap: Option<u64>,

    /// Run replications on one thread.
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the analytical model for one scenario.
    Model,
    /// Monte Carlo estimate for one scenario.
    Simulate(SimFlags),
    /// Model and simulator side by side with a 3-sigma verdict.
    Validate(SimFlags),
    /// Evaluate the model over a parameter grid.
    Sweep {
        /// `ber`, `r`, `alpha`, `h` or `mss`.
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SweepAxis>,
        /// `v1,v2,...`, `a..b` (integers), `log:start:stop:points` or
        /// `lin:start:stop:points`.
        #[arg(long)]
        grid: Option<String>,
        /// Segment sizes compared at each grid point, e.g. `64,512`.
        #[arg(long)]
        mss_list: Option<String>,
    },
    /// Crossover BER between the short and long MSS over hop counts.
    Frontier {
        /// `r=1..7` or `alpha=1e-3,1e-2,1e-1`.
        #[arg(long)]
        family: Option<String>,
        /// Hop counts, e.g. `1..9` or `1,3,5`.
        #[arg(long)]
        h: Option<String>,
    },
}

fn parse_fidelity(s: &str) -> Result<Fidelity, String> {
    match s {
        "frame" => Ok(Fidelity::FrameLevel),
        "bit" => Ok(Fidelity::BitLevel),
        _ => Err("expected `frame` or `bit`".into()),
    }
}

fn parse_sampling(s: &str) -> Result<SamplingSetting, String> {
    match s {
        "auto" => Ok(SamplingSetting::Auto),
        "direct" => Ok(SamplingSetting::Direct),
        "skip" => Ok(SamplingSetting::Skip),
        _ => Err("expected `auto`, `direct` or `skip`".into()),
    }
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    match s {
        "ber" => Ok(SweepAxis::Ber),
        "r" => Ok(SweepAxis::Retries),
        "alpha" => Ok(SweepAxis::Alpha),
        "h" => Ok(SweepAxis::Hops),
        "mss" => Ok(SweepAxis::Mss),
        _ => Err("expected one of ber, r, alpha, h, mss".into()),
    }
}

/// Parses `a..b` (inclusive integers) or a comma-separated list.
pub fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().with_context(|| format!("bad range start in {s:?}"))?;
        let b: i64 = b.trim().parse().with_context(|| format!("bad range end in {s:?}"))?;
        ensure!(a <= b, "empty range {s:?}");
        return Ok((a..=b).map(|x| x as f64).collect());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {x:?} in {s:?}"))
        })
        .collect()
}

fn apply_grid(config: &mut RunConfig, spec: &str) -> anyhow::Result<()> {
    let s = &mut config.sweep;
    let scaled = spec
        .strip_prefix("log:")
        .map(|rest| (config::Scale::Log, rest))
        .or_else(|| spec.strip_prefix("lin:").map(|rest| (config::Scale::Linear, rest)));
    match scaled {
        Some((scale, rest)) => {
            let parts: Vec<&str> = rest.split(':').collect();
            ensure!(parts.len() == 3, "grid {spec:?}: expected start:stop:points");
            s.scale = scale;
            s.start = parts[0].parse().with_context(|| format!("grid {spec:?}: bad start"))?;
            s.stop = parts[1].parse().with_context(|| format!("grid {spec:?}: bad stop"))?;
            s.points = parts[2]
                .parse()
                .with_context(|| format!("grid {spec:?}: bad point count"))?;
            s.values = None;
        }
        None => s.values = Some(parse_list(spec)?),
    }
    Ok(())
}

fn to_u32_list(xs: Vec<f64>, what: &str) -> anyhow::Result<Vec<u32>> {
    xs.into_iter()
        .map(|x| {
            ensure!(
                x >= 1.0 && x.fract() == 0.0 && x <= f64::from(u32::MAX),
                "{what}: {x} is not a positive integer"
            );
            Ok(x as u32)
        })
        .collect()
}

impl Cli {
    /// File (or defaults) with command-line overrides applied.
    pub fn effective_config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let f = &self.scenario;
        if let Some(x) = f.mss {
            c.scenario.mss_bytes = x;
        }
        if let Some(x) = f.ber {
            c.scenario.ber = x;
        }
        if let Some(x) = f.retries {
            c.scenario.r = x;
        }
        if let Some(x) = f.hops {
            c.scenario.hops = x;
        }
        if let Some(x) = f.alpha {
            c.layout.alpha = x;
        }
        if let Some(x) = f.transfer_bytes {
            c.scenario.transfer_bytes = x;
        }
        if let Some(mode) = &f.fragments {
            match mode.as_str() {
                "table" => c.layout.fragment_mode = FragmentSetting::Table,
                "computed" => c.layout.fragment_mode = FragmentSetting::Computed,
                n => {
                    let m: u32 = n
                        .parse()
                        .with_context(|| format!("--fragments {n:?}: expected table, computed or a count"))?;
                    c.layout.fragment_mode = FragmentSetting::Explicit;
                    c.layout.fragment_count = Some(m);
                }
            }
        }
        if let Some(x) = self.seed {
            c.sim.seed = x;
        }
        if let Some(x) = self.reps {
            c.sim.replications = x;
        }
        match &self.command {
            Some(Command::Simulate(s) | Command::Validate(s)) => {
                if let Some(x) = s.fidelity {
                    c.sim.fidelity = x;
                }
                if let Some(x) = s.sampling {
                    c.sim.sampling = x;
                }
                if s.segment_cap.is_some() {
                    c.sim.segment_cap = s.segment_cap;
                }
                if s.serial {
                    c.sim.parallel = false;
                }
            }
            Some(Command::Sweep { axis, grid, mss_list }) => {
                if let Some(a) = axis {
                    c.sweep.axis = *a;
                }
                if let Some(g) = grid {
                    apply_grid(&mut c, g)?;
                }
                if let Some(m) = mss_list {
                    c.sweep.mss = to_u32_list(parse_list(m)?, "--mss-list")?;
                }
            }
            Some(Command::Frontier { family, h }) => {
                if let Some(fam) = family {
                    let (axis, values) = fam
                        .split_once('=')
                        .with_context(|| format!("--family {fam:?}: expected r=... or alpha=..."))?;
                    c.frontier.family = match axis.trim() {
                        "r" => FamilyAxis::R,
                        "alpha" => FamilyAxis::Alpha,
                        other => bail!("--family: unknown parameter {other:?}"),
                    };
                    c.frontier.values = parse_list(values)?;
                }
                if let Some(h) = h {
                    c.frontier.hops = to_u32_list(parse_list(h)?, "--h")?
                        .into_iter()
                        .map(|x| x as usize)
                        .collect();
                }
            }
            Some(Command::Model) | None => {}
        }
        c.check()?;
        Ok(c)
    }
}

/// What a run produced, before it is written out.
struct Outcome {
    rows: Vec<Record>,
    degenerate: bool,
    seeded: bool,
}

fn model_report(config: &RunConfig) -> anyhow::Result<ModelReport> {
    Ok(evaluate(&config.scenario()?, config.energy)?)
}

fn sim_config(config: &RunConfig, model: &ModelReport) -> anyhow::Result<SimConfig> {
    let s = &config.sim;
    let mut sim = SimConfig::new(config.scenario()?, s.replications, s.seed);
    sim.energy = config.energy;
    sim.fidelity = s.fidelity;
    sim.segment_cap = s.segment_cap;
    sim.attempt_cap = s.attempt_cap;
    sim.parallel = s.parallel;
    let skip = match s.sampling {
        SamplingSetting::Direct => false,
        SamplingSetting::Skip => true,
        SamplingSetting::Auto => model.p_s < s.skip_below,
    };
    if skip {
        sim.sampling = Sampling::SkipFailures {
            failure_samples: s.failure_samples,
        };
    }
    Ok(sim)
}

fn run_sim(config: &RunConfig) -> anyhow::Result<(ModelReport, SimReport)> {
    let model = model_report(config)?;
    let sim = simulate(&sim_config(config, &model)?)?;
    Ok((model, sim))
}

fn validate_row(model: &ModelReport, sim: &SimReport) -> Record {
    const SIGMAS: f64 = 3.0;
    let mut rec = Record::default();
    rec.push("source", Value::Text("validate".into()));
    for (k, v) in model.to_record().iter().skip(1).take(6) {
        rec.push(k, v.clone());
    }
    let sim_rec = sim.to_record();
    for key in [
        "replications",
        "seed",
        "rng",
        "fidelity",
        "sampling",
        "segments_simulated",
    ] {
        rec.push(key, sim_rec.get(key).cloned().unwrap_or(Value::Undefined));
    }
    rec.push("model_total_bits", model.total_bits.into());
    rec.push("sim_mean_total_bits", Value::Num(sim.mean_total_bits));
    rec.push("sim_stderr", Value::Num(sim.stderr));
    let (z, verdict) = match model.total_bits.value() {
        Some(expected) => {
            let z = if sim.stderr > 0.0 {
                Value::Num((sim.mean_total_bits - expected) / sim.stderr)
            } else {
                Value::Undefined
            };
            let pass = sim.agrees_with(expected, SIGMAS) && !sim.truncated();
            (z, if pass { "PASS" } else { "FAIL" })
        }
        None => (Value::Diverges, "FAIL"),
    };
    rec.push("z", z);
    rec.push("sigmas", Value::Num(SIGMAS));
    rec.push("model_joules", model.total_joules.into());
    rec.push("sim_mean_joules", Value::Num(sim.mean_joules));
    rec.push("truncated_segments", Value::Int(sim.truncated_segments));
    rec.push("verdict", Value::Text(verdict.into()));
    rec
}

fn execute(command: &Command, config: &RunConfig) -> anyhow::Result<Outcome> {
    Ok(match command {
        Command::Model => {
            let report = model_report(config)?;
            let degenerate = report.diverges()
                || report
                    .data_hops
                    .iter()
                    .chain(&report.ack_hops)
                    .any(|h| h.is_degenerate());
            Outcome {
                rows: vec![report.to_record()],
                degenerate,
                seeded: false,
            }
        }
        Command::Simulate(_) => {
            let (_, sim) = run_sim(config)?;
            Outcome {
                rows: vec![sim.to_record()],
                degenerate: sim.truncated(),
                seeded: true,
            }
        }
        Command::Validate(_) => {
            let (model, sim) = run_sim(config)?;
            Outcome {
                rows: vec![validate_row(&model, &sim)],
                degenerate: model.diverges() || sim.truncated(),
                seeded: true,
            }
        }
        Command::Sweep { .. } => {
            let spec = SweepSpec {
                base: config.scenario()?,
                energy: config.energy,
                axis: config.sweep.axis,
                grid: config.sweep.grid(),
                mss: config.sweep.mss.clone(),
                fragments: config.active_table()?,
            };
            let rows = sweep(&spec)?;
            let degenerate = rows
                .iter()
                .any(|r| r.report.as_ref().map_or(true, ModelReport::diverges));
            Outcome {
                rows: rows.iter().map(|r| r.to_record()).collect(),
                degenerate,
                seeded: false,
            }
        }
        Command::Frontier { .. } => {
            let rows = frontier(
                &config.crossover_base()?,
                &config.frontier.family()?,
                &config.frontier.hops,
            )?;
            Outcome {
                degenerate: rows.iter().any(|r| r.result.is_err()),
                rows: rows.iter().map(|r| r.to_record()).collect(),
                seeded: false,
            }
        }
    })
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Model => "model",
        Command::Simulate(_) => "simulate",
        Command::Validate(_) => "validate",
        Command::Sweep { .. } => "sweep",
        Command::Frontier { .. } => "frontier",
    }
}

/// Runs a parsed command line, writing results to `out`. Returns the exit
/// status; configuration problems are returned as errors.
pub fn run(cli: &Cli, out: &mut impl Write) -> anyhow::Result<u8> {
    let config = cli.effective_config()?;
    let text = config.to_toml();
    if cli.print_config {
        out.write_all(text.as_bytes())?;
        return Ok(0);
    }
    let Some(command) = &cli.command else {
        bail!("no subcommand given (model, simulate, validate, sweep, frontier)");
    };
    let outcome = execute(command, &config)?;

    let mut meta = vec![
        ("tool", format!("lln-energy {}", env!("CARGO_PKG_VERSION"))),
        ("command", command_name(command).to_owned()),
        ("config_sha256", hex::encode(Sha256::digest(text.as_bytes()))),
    ];
    if outcome.seeded {
        meta.push(("seed", config.sim.seed.to_string()));
        meta.push(("rng", RNG_NAME.to_owned()));
    }
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    meta.push(("generated_unix", now.to_string()));
    emit(out, cli.format, &meta, &outcome.rows)?;

    Ok(if cli.strict && outcome.degenerate {
        EXIT_DEGENERATE
    } else {
        0
    })
}
