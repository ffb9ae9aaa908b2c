use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand};

use hypernat_core::analytics::{
    any_nic_bound, write_cdf_csv, AvailabilityParams, AvailabilityReport,
};
use hypernat_core::report::RunReport;
use hypernat_core::simnet::{
    gen_trace, load_trace, run, saturate, write_trace, RunOptions, Topology, TraceSpace,
};

mod config_args;
use config_args::ConfigArgs;

/// Exit status plus message.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl ToString) -> Self {
        Self {
            code: 2,
            msg: msg.to_string(),
        }
    }

    fn runtime(msg: impl ToString) -> Self {
        Self {
            code: 3,
            msg: msg.to_string(),
        }
    }
}

type Res<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "hypernat",
    version,
    about = "Multi-smartNIC NAT gateway simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one topology over a trace and write a report.
    Simulate(SimulateArgs),
    /// Saturation throughput across topologies and flow counts.
    Sweep(SweepArgs),
    /// Write a synthetic trace CSV.
    GenTrace(GenTraceArgs),
    /// Subspace overflow bounds against a Monte Carlo estimate.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["trace", "flows"])))]
struct SimulateArgs {
    #[arg(long, default_value = "hypernat")]
    topology: Topology,
    /// Trace CSV to replay.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Generate a trace with this many flows instead of reading one.
    #[arg(long)]
    flows: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pkts: u64,
    #[arg(long, default_value_t = 100_000)]
    rate: u64,
    /// Trace generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the per-packet event log.
    #[arg(long)]
    events: bool,
    #[arg(long, default_value = "hypernat-out")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "hypernat,servernat,onenic"
    )]
    topologies: Vec<Topology>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "10000,50000,100000,200000"
    )]
    flows: Vec<u64>,
    /// Total packets per cell, split evenly across flows.
    #[arg(long, default_value_t = 1_000_000)]
    packets: u64,
    #[arg(long, default_value_t = 2_000_000.0)]
    offered_pps: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "hypernat-out")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    flows: u64,
    #[arg(long, default_value_t = 10)]
    pkts: u64,
    #[arg(long, default_value_t = 1_000_000)]
    rate: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Simultaneous flows.
    #[arg(long = "X", default_value_t = 100_000)]
    x: u64,
    /// External space size.
    #[arg(long = "F", default_value_t = 1 << 32)]
    f: u64,
    /// NICs.
    #[arg(long = "N", default_value_t = 10)]
    n: u32,
    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    mc_trials: u64,
    /// Trials per cell of the X/F by N grid written to the sweep CSV.
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    grid_trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "hypernat-out")]
    out: PathBuf,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Res {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn out_dir(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

fn simulate(a: SimulateArgs) -> Res {
    if a.topology != Topology::HyperNat {
        if let Some(n) = a.cfg.explicit_nics() {
            if n != "1" {
                return Err(Failure::usage(format!(
                    "--topology {} has exactly one NAT element; --nics {n} does not apply",
                    a.topology
                )));
            }
        }
    }
    let cfg = a.cfg.resolve()?;
    let space = TraceSpace::with_nets(cfg.internal_net, cfg.remote_net);
    let (trace, source) = match (&a.trace, a.flows) {
        (Some(path), _) => (
            load_trace(path, &space).map_err(Failure::invalid)?,
            path.display().to_string(),
        ),
        (None, Some(flows)) => (
            gen_trace(flows, a.pkts, a.rate, a.seed, &space).map_err(Failure::invalid)?,
            format!(
                "gen-trace --flows {flows} --pkts {} --rate {} --seed {}",
                a.pkts, a.rate, a.seed
            ),
        ),
        (None, None) => unreachable!("clap enforces the input group"),
    };

    let out = run(
        &cfg,
        &trace,
        a.topology,
        RunOptions {
            record_events: a.events,
        },
    )
    .map_err(|e| match e {
        hypernat_core::SimError::Trace { .. } | hypernat_core::SimError::Config(_) => {
            Failure::invalid(e)
        }
        other => Failure::runtime(other),
    })?;
    let report = RunReport::new(&cfg, source.clone(), &out);

    out_dir(&a.out)?;
    write_file(&a.out.join("report.json"), report.to_json())?;
    write_file(
        &a.out.join("config.kv"),
        format!("# trace: {source}\n{}", cfg.to_kv()),
    )?;
    let mut cdf = Vec::new();
    write_cdf_csv(&mut cdf, &report.rtt_cdf).map_err(Failure::runtime)?;
    write_file(&a.out.join("rtt_cdf.csv"), cdf)?;
    if a.events {
        write_file(&a.out.join("events.csv"), out.event_log_csv())?;
    }

    let m = &out.metrics;
    println!("topology      {}", a.topology);
    println!("throughput    {:.1} Kpps", m.throughput_pps / 1e3);
    if let Some(p) = m.rtt {
        println!("rtt p50/p99   {:.3} / {:.3} us", p.p50, p.p99);
    }
    println!(
        "packets       emitted {} returned {} dropped {} in flight {}",
        m.emitted,
        m.returned,
        m.drops.total(),
        m.in_flight
    );
    println!(
        "tdc           {}",
        if out.tdc.pass() { "pass" } else { "FAIL" }
    );
    println!("report        {}", a.out.join("report.json").display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Res {
    let cfg = a.cfg.resolve()?;
    let space = TraceSpace::with_nets(cfg.internal_net, cfg.remote_net);
    out_dir(&a.out)?;
    let mut csv = String::from("topology,n_flows,throughput_pps,p50_us,p99_us\n");
    for &flows in &a.flows {
        if flows == 0 || a.packets < flows {
            return Err(Failure::usage(format!(
                "{} packets cannot cover {flows} flows",
                a.packets
            )));
        }
        let trace = gen_trace(
            flows,
            a.packets / flows,
            a.offered_pps as u64,
            a.seed,
            &space,
        )
        .map_err(Failure::invalid)?;
        for &topo in &a.topologies {
            let out = saturate(&cfg, &trace, topo, a.offered_pps).map_err(Failure::runtime)?;
            let m = &out.metrics;
            let (p50, p99) = m.rtt.map_or((f64::NAN, f64::NAN), |p| (p.p50, p.p99));
            let row = format!("{topo},{flows},{:.1},{p50:.3},{p99:.3}\n", m.throughput_pps);
            eprint!("{row}");
            csv.push_str(&row);
        }
    }
    write_file(&a.out.join("sweep.csv"), &csv)?;
    write_file(
        &a.out.join("sweep.config.kv"),
        format!(
            "# sweep --packets {} --offered-pps {} --seed {}\n{}",
            a.packets,
            a.offered_pps,
            a.seed,
            cfg.to_kv()
        ),
    )?;
    print!("{csv}");
    Ok(())
}

fn gen(a: GenTraceArgs) -> Res {
    let trace = gen_trace(a.flows, a.pkts, a.rate, a.seed, &TraceSpace::default())
        .map_err(Failure::invalid)?;
    match &a.out {
        Some(path) => {
            let f = fs::File::create(path)
                .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
            write_trace(io::BufWriter::new(f), &trace).map_err(Failure::runtime)?;
        }
        None => {
            let stdout = io::stdout().lock();
            write_trace(io::BufWriter::new(stdout), &trace).map_err(Failure::runtime)?;
        }
    }
    Ok(())
}

const GRID_RATIOS: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

fn analyze(a: AnalyzeArgs) -> Res {
    let p = AvailabilityParams::new(a.x, a.f, a.n).map_err(|e| Failure::usage(e.to_string()))?;
    let report = AvailabilityReport::compute(&p, a.mc_trials, a.seed).map_err(Failure::runtime)?;

    let mut csv = format!("{}\n", AvailabilityReport::CSV_HEADER);
    for ratio in GRID_RATIOS {
        let x = (a.f as f64 * ratio).round() as u64;
        for n in 1..=a.n {
            let Ok(gp) = AvailabilityParams::new(x, a.f, n) else {
                continue;
            };
            let r = AvailabilityReport::compute(&gp, a.grid_trials, a.seed)
                .map_err(Failure::runtime)?;
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
    }

    out_dir(&a.out)?;
    let json = serde_json::json!({
        "seed": a.seed,
        "report": report,
        "bound_dominates": report.bound_dominates(),
    });
    let text = serde_json::to_string_pretty(&json).expect("json");
    write_file(&a.out.join("availability.json"), &text)?;
    write_file(&a.out.join("availability_sweep.csv"), csv)?;
    println!("{text}");
    let b = any_nic_bound(&p);
    eprintln!("linear bound {:.3e}, exact {:.3e}", b.linear, b.exact);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::GenTrace(a) => gen(a),
        Cmd::Analyze(a) => analyze(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(io::stderr(), "error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
