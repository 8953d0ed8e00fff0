use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rampsim_core::analysis::region::examples;
use rampsim_core::analysis::{
    inner_region_fixed_cycle, inner_region_renewal, outer_region, saturation_probe, BatchProtocol, ProbeConfig,
    ThroughputRegion,
};
use rampsim_core::dynamics::merge_headway_multiple;
use rampsim_core::experiments::{self, CompareConfig};
use rampsim_core::scenario::{presets, RoutingSection};
use rampsim_core::{cumulative_routing, run, EngineKind, Params, RoutingMatrix, Scenario, Shape};

#[derive(Parser, Debug)]
#[command(name = "rampsim", version, about = "Slot-based freeway ramp-metering simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed; replicated commands use consecutive seeds from here.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "RAMPSIM_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads for replicated runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Built-in scenario to start from.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one scenario and write its trace tables and manifest.
    Simulate {
        /// Scenario or manifest file; `--preset` may be used instead.
        scenario: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, value_enum)]
        engine: Option<Engine>,
    },
    /// Throughput regions for a routing matrix.
    Region(RegionArgs),
    /// Queue averages over a range of cycle lengths.
    Sweep {
        /// `T_cyc=a..b` (inclusive), `T_cyc=a..b:step` or `T_cyc=a,b,c`.
        #[arg(long, default_value = "T_cyc=1..50")]
        param: String,
        #[arg(long, default_value_t = 3)]
        replications: u64,
        #[arg(long)]
        horizon: Option<u64>,
        /// Use the long 1% protocol instead of the desk one.
        #[arg(long)]
        full: bool,
    },
    /// Replicated comparison of several presets.
    Compare {
        /// Comma-separated presets; defaults to every `compare_*` preset.
        #[arg(long, value_delimiter = ',')]
        presets: Vec<String>,
        #[arg(long, default_value_t = 10)]
        replications: u64,
        #[arg(long)]
        horizon: Option<u64>,
        /// Trips averaged for the travel time.
        #[arg(long, default_value_t = 20_000)]
        ttt_n: usize,
    },
    /// Bisect for the arrival rate at which the preset saturates.
    Probe {
        #[arg(long, default_value_t = 0.3)]
        lo: f64,
        #[arg(long, default_value_t = 0.7)]
        hi: f64,
        #[arg(long, default_value_t = 0.04)]
        width: f64,
        #[arg(long, default_value_t = 3)]
        replications: u64,
        #[arg(long, default_value_t = 200_000)]
        horizon: u64,
    },
    /// List the built-in presets and region cases.
    Presets,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Engine {
    Micro,
    Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Kind {
    InnerRenewal,
    InnerFixedCycle,
    Outer,
    All,
}

#[derive(Args, Debug)]
struct RegionArgs {
    /// TOML file with `R`, or a scenario file; defaults to the three-ramp matrix.
    #[arg(long)]
    routing: Option<PathBuf>,
    /// Merge speed per ramp (m/s); converted to headway multiples.
    #[arg(long, value_delimiter = ',')]
    merge_speeds: Vec<f64>,
    /// Headway multiples per ramp, instead of merge speeds.
    #[arg(long, value_delimiter = ',')]
    k: Vec<u32>,
    #[arg(long, value_enum, default_value_t = Kind::All)]
    kind: Kind,
    /// Fix rates, e.g. `3=0.5` (ramps count from one).
    #[arg(long, value_delimiter = ',')]
    fix: Vec<String>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Ring)]
    shape: ShapeArg,
    /// Built-in case; overrides the other inputs.
    #[arg(long)]
    case: Option<String>,
    /// Boundary points per region when two rates are free.
    #[arg(long, default_value_t = 101)]
    samples: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Ring,
    Straight,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for file-system trouble, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    use rampsim_core::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Io(_) => 3,
                E::Param(_) | E::Geometry(_) | E::Routing(_) | E::Scenario(_) | E::Toml(_) | E::TomlSer(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
    }
    1
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = &cli.global;
    match cli.cmd {
        Cmd::Simulate { scenario, horizon, engine } => simulate(g, scenario.as_deref(), horizon, engine),
        Cmd::Region(args) => region(g, &args),
        Cmd::Sweep { param, replications, horizon, full } => sweep(g, &param, replications, horizon, full),
        Cmd::Compare { presets, replications, horizon, ttt_n } => compare(g, &presets, replications, horizon, ttt_n),
        Cmd::Probe { lo, hi, width, replications, horizon } => probe(g, lo, hi, width, replications, horizon),
        Cmd::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            for c in examples::CASES {
                println!("region case: {}", c.name);
            }
            Ok(())
        }
    }
}

fn preset(name: &str) -> Result<Scenario> {
    presets::get(name).ok_or_else(|| usage(format!("unknown preset `{name}`; see `rampsim presets`")))
}

fn load(g: &Global, path: Option<&Path>) -> Result<Scenario> {
    match (path, &g.preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Scenario::from_toml(&text)?)
        }
        (None, Some(name)) => preset(name),
        (None, None) => Err(usage("give a scenario file or --preset")),
    }
}

fn seeds(g: &Global, n: u64) -> Vec<u64> {
    let base = g.seed.unwrap_or(1);
    (0..n.max(1)).map(|k| base + k).collect()
}

fn out_dir(g: &Global, sub: &str) -> Result<PathBuf> {
    let dir = g.out.join(sub);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn simulate(g: &Global, path: Option<&Path>, horizon: Option<u64>, engine: Option<Engine>) -> Result<()> {
    let mut s = load(g, path)?;
    if let Some(seed) = g.seed {
        s.demand.seed = seed;
    }
    if let Some(h) = horizon {
        s.demand.horizon = h;
    }
    if let Some(e) = engine {
        s.engine = match e {
            Engine::Micro => EngineKind::Micro,
            Engine::Slot => EngineKind::Slot,
        };
    }
    s.validate()?;
    let name = if s.name.is_empty() { "run".to_string() } else { s.name.clone() };
    let dir = out_dir(g, &name)?;
    fs::write(dir.join("manifest.toml"), s.manifest()?.to_toml()?)?;
    if s.demand.horizon == 0 {
        println!("wrote {}", dir.join("manifest.toml").display());
        return Ok(());
    }
    let trace = run(&s)?;
    trace.write_csv(&dir)?;
    let sum = trace.checksum()?;
    fs::write(dir.join("checksum.sha256"), format!("{sum}\n"))?;
    let q = trace.total_queue();
    println!(
        "{name}: {} steps, {} arrivals, {} exited, final queue {}, collisions {}, spacing violations {}",
        trace.steps,
        trace.arrivals,
        trace.exited,
        q.last().copied().unwrap_or(0.0),
        trace.safety.collisions,
        trace.safety.spacing_violations
    );
    println!("sha256 {sum}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn parse_fix(items: &[String], m: usize) -> Result<Vec<Option<f64>>> {
    let mut fixed = vec![None; m];
    for it in items {
        let (i, v) = it.split_once('=').ok_or_else(|| usage(format!("`{it}` is not ramp=rate")))?;
        let i: usize = i.trim().parse().map_err(|_| usage(format!("bad ramp in `{it}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| usage(format!("bad rate in `{it}`")))?;
        if i == 0 || i > m {
            bail!(usage(format!("ramp {i} outside 1..={m}")));
        }
        fixed[i - 1] = Some(v);
    }
    Ok(fixed)
}

fn region(g: &Global, a: &RegionArgs) -> Result<()> {
    let dir = out_dir(g, "region")?;
    let regions: Vec<ThroughputRegion> = if let Some(name) = &a.case {
        let case = examples::get(name).ok_or_else(|| usage(format!("unknown region case `{name}`")))?;
        vec![case.region()?]
    } else {
        let r = match &a.routing {
            Some(p) => {
                RoutingSection::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
                    .r
            }
            None => RoutingMatrix::example(),
        };
        let m = r.size();
        let shape = match a.shape {
            ShapeArg::Ring => Shape::Ring,
            ShapeArg::Straight => Shape::Straight,
        };
        let rt = cumulative_routing(&r, shape)?;
        let k: Vec<u32> = match (a.k.is_empty(), a.merge_speeds.is_empty()) {
            (false, true) => a.k.clone(),
            (true, false) => {
                let p = Params::default();
                a.merge_speeds.iter().map(|&v| merge_headway_multiple(v, &p)).collect()
            }
            (true, true) => vec![2; m],
            (false, false) => bail!(usage("give either --k or --merge-speeds")),
        };
        if k.len() != m {
            bail!(usage(format!("{} headway values for {m} ramps", k.len())));
        }
        let fixed = parse_fix(&a.fix, m)?;
        let kinds = match a.kind {
            Kind::All => vec![Kind::InnerFixedCycle, Kind::InnerRenewal, Kind::Outer],
            k => vec![k],
        };
        kinds
            .into_iter()
            .map(|kind| {
                let full = match kind {
                    Kind::InnerRenewal => inner_region_renewal(&rt, &k)?,
                    Kind::InnerFixedCycle => inner_region_fixed_cycle(&rt, &k)?,
                    _ => outer_region(&rt),
                };
                Ok(full.restrict(&fixed)?.binding())
            })
            .collect::<Result<_>>()?
    };
    ThroughputRegion::write_csv(&regions, create(&dir, "region.csv")?)?;
    for r in &regions {
        let terms: Vec<String> = r
            .constraints
            .iter()
            .map(|c| {
                let lhs: Vec<String> =
                    c.a.iter()
                        .zip(&r.coords)
                        .filter(|(a, _)| **a != 0.0)
                        .map(|(a, j)| format!("{a}*lambda{}", j + 1))
                        .collect();
                format!("{} {} {}", lhs.join(" + "), if r.strict() { "<" } else { "<=" }, c.b)
            })
            .collect();
        println!("{}: {{{}}}", r.kind.name(), terms.join(", "));
    }
    if regions.iter().all(|r| r.dim() == 2) {
        let mut w = csv::Writer::from_writer(create(&dir, "boundary.csv")?);
        w.write_record(["kind", "lambda_a", "lambda_b"])?;
        for r in &regions {
            for (x, y) in r.boundary_2d(a.samples) {
                w.write_record([r.kind.name().to_string(), x.to_string(), y.to_string()])?;
            }
        }
        w.flush()?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn parse_values(param: &str) -> Result<Vec<u64>> {
    let (name, spec) = param.split_once('=').ok_or_else(|| usage("expected T_cyc=..."))?;
    if name.trim() != "T_cyc" {
        bail!(usage(format!("only T_cyc can be swept, not `{name}`")));
    }
    let bad = || usage(format!("cannot read `{spec}`"));
    let values: Vec<u64> = if let Some((a, rest)) = spec.split_once("..") {
        let (b, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let (a, b, step): (u64, u64, u64) =
            (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
        (a..=b).step_by(step.max(1) as usize).collect()
    } else {
        spec.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        bail!(usage("cycle lengths must be positive"));
    }
    Ok(values)
}

fn sweep(g: &Global, param: &str, replications: u64, horizon: Option<u64>, full: bool) -> Result<()> {
    let mut s = preset(g.preset.as_deref().unwrap_or("cycle_sweep_low"))?;
    if let Some(h) = horizon {
        s.demand.horizon = h;
    }
    let values = parse_values(param)?;
    let protocol = if full { BatchProtocol::FULL } else { BatchProtocol::DESK };
    let rows = experiments::cycle_sweep(&s, &values, &seeds(g, replications), protocol)?;
    let dir = out_dir(g, "sweep")?;
    experiments::write_sweep_csv(&rows, create(&dir, "summary.csv")?)?;
    for r in &rows {
        println!("T_cyc {:>3}: {:?}, plotted queue {:.3}", r.t_cyc, r.verdict, r.plot_value());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn compare(g: &Global, names: &[String], replications: u64, horizon: Option<u64>, ttt_n: usize) -> Result<()> {
    let names: Vec<String> = if names.is_empty() {
        presets::NAMES.iter().filter(|n| n.starts_with("compare_")).map(|n| n.to_string()).collect()
    } else {
        names.to_vec()
    };
    let scenarios: Vec<Scenario> = names
        .iter()
        .map(|n| {
            let mut s = preset(n)?;
            // Downstream of the middle merge, for the flow series.
            if s.metrics.flow_points.is_empty() {
                s.metrics.flow_points = vec![650.0];
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let cfg = CompareConfig { seeds: seeds(g, replications), horizon, ttt_n, ..Default::default() };
    let rows = experiments::compare(&scenarios, &cfg)?;
    let dir = out_dir(g, "compare")?;
    experiments::write_summary_csv(&rows, create(&dir, "summary.csv")?)?;
    experiments::write_ttc_box_csv(&rows, create(&dir, "ttc_box.csv")?)?;
    experiments::write_flow_csv(&rows, create(&dir, "flow.csv")?)?;
    println!("{:<12} {:>10} {:>10} {:>10} {:>10}", "policy", "TTT (min)", "avg queue", "verdict", "collisions");
    for r in &rows {
        println!(
            "{:<12} {:>10.2} {:>10.1} {:>10} {:>10}",
            r.policy.name(),
            r.ttt_min,
            r.avg_queue,
            format!("{:?}", r.verdict).to_lowercase(),
            r.safety.collisions
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn probe(g: &Global, lo: f64, hi: f64, width: f64, replications: u64, horizon: u64) -> Result<()> {
    let s = preset(g.preset.as_deref().ok_or_else(|| usage("probe needs --preset"))?)?;
    let cfg = ProbeConfig { lo, hi, width, seeds: seeds(g, replications), horizon, max_horizon: 2 * horizon };
    let res = saturation_probe(&s, &cfg).map_err(|e| anyhow!(e))?;
    let dir = out_dir(g, "probe")?;
    res.write_csv(create(&dir, "probe.csv")?)?;
    for p in &res.points {
        println!("lambda {:.4}: {:?} (mean slope {:.5})", p.lambda, p.verdict, p.mean_slope());
    }
    println!("saturation rate in [{:.4}, {:.4}]", res.lo, res.hi);
    println!("wrote {}", dir.display());
    Ok(())
}
