use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use capsule_core::apps::{builtin_tier, GraphicsTier};
use capsule_core::calibrate::calibrate;
use capsule_core::gateway::{BotClient, Gateway, GatewayConfig, Message};
use capsule_core::harness::{self, compare_runs, read_samples_csv, write_samples_csv, Mode, RunResult};
use capsule_core::scenario::{Scenario, ScheduleAction, ScheduleEntry};

#[derive(Parser)]
#[command(name = "capsule", version, about = "Multi-tenant ECS engine and scaling harness")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run one mode over the scenario's schedule and write its samples.
    Run(RunArgs),
    /// Sweep player counts up to capacity in both modes.
    Bench(BenchArgs),
    /// Ratio table between two results CSVs, or both modes of a scenario.
    Compare(CompareArgs),
    /// Host the scenario behind the TCP gateway.
    Serve(ServeArgs),
    /// Fit the scenario's cost constants to its tier targets.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "path")]
    scenario: PathBuf,
    #[arg(long, value_name = "u64")]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "capsule|baseline", default_value = "capsule")]
    mode: Mode,
    #[arg(long, value_name = "dir", default_value = "out")]
    out: PathBuf,
    /// Replace the schedule with this many joins, one per tick from tick 0.
    #[arg(long, value_name = "n")]
    players: Option<u64>,
    #[arg(long, value_name = "n")]
    ticks: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "dir", default_value = "out")]
    out: PathBuf,
    /// Stop the sweep at this many players.
    #[arg(long, value_name = "n")]
    players: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two results CSVs: the reference run, then the run to compare with it.
    #[arg(value_name = "csv", num_args = 0..=2)]
    files: Vec<PathBuf>,
    #[arg(long, value_name = "path", conflicts_with = "files")]
    scenario: Option<PathBuf>,
    #[arg(long, value_name = "u64", requires = "scenario")]
    seed: Option<u64>,
    #[arg(long, value_name = "n", requires = "scenario")]
    players: Option<u64>,
    #[arg(long, value_name = "dir")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "addr", default_value = "127.0.0.1:7777")]
    listen: String,
    /// In-process bot clients to connect.
    #[arg(long, value_name = "n", default_value_t = 0)]
    bots: usize,
    /// Stop after this many ticks; without it the server runs until killed,
    /// or for the scenario's duration when bots are used.
    #[arg(long, value_name = "n")]
    ticks: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "dir", default_value = "out")]
    out: PathBuf,
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load(c: &Common) -> Result<Scenario> {
    let mut s = Scenario::load(&c.scenario)?;
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn run(a: RunArgs) -> Result<()> {
    let mut s = load(&a.common)?;
    if let Some(n) = a.players {
        s.join_schedule = (0..n)
            .map(|tick| ScheduleEntry {
                tick,
                action: ScheduleAction::Join,
                player: None,
            })
            .collect();
        s.duration_ticks = s.duration_ticks.max(n);
    }
    if let Some(t) = a.ticks {
        s.duration_ticks = t;
    }
    let result = harness::run(&s, a.mode)?;
    let out = create(&a.out, &format!("{}_{}.csv", s.name, a.mode))?;
    write_samples_csv(out, a.mode, &s.cost_model(), &result.samples)?;
    println!(
        "{} {}: {} ticks, peak {} players, {} joins rejected",
        s.name,
        a.mode,
        result.samples.len(),
        result.max_players_admitted,
        result.rejections.len()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let s = load(&a.common)?;
    for mode in [Mode::Capsule, Mode::Baseline] {
        let limit = a.players.unwrap_or(harness::MAX_PROBE_PLAYERS);
        let mut rows = harness::sweep(&s, mode, limit);
        rows.remove(0);
        let out = create(&a.out, &format!("{}_{mode}_bench.csv", s.name))?;
        write_samples_csv(out, mode, &s.cost_model(), &rows)?;
        println!("{} {mode}: capacity {}", s.name, rows.last().map_or(0, |r| r.players));
    }
    Ok(())
}

fn read_run(path: &Path) -> Result<RunResult> {
    let (mode, samples) = read_samples_csv(File::open(path)?)?;
    Ok(RunResult::from_samples(mode, samples))
}

fn compare(a: CompareArgs) -> Result<()> {
    let (first, second) = match (&a.scenario, a.files.as_slice()) {
        (Some(path), []) => {
            let mut s = Scenario::load(path)?;
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            let limit = a.players.unwrap_or(harness::MAX_PROBE_PLAYERS);
            let sweep = |mode| RunResult::from_samples(mode, harness::sweep(&s, mode, limit));
            (sweep(Mode::Capsule), sweep(Mode::Baseline))
        }
        (None, [x, y]) => (read_run(x)?, read_run(y)?),
        _ => return Err(Box::new(UsageError("compare takes two CSV files or --scenario".into()))),
    };
    let report = compare_runs(&first, &second)?;
    print!("{report}");
    if let Some(dir) = &a.out {
        report.write_csv(create(dir, "comparison.csv")?)?;
        report.write_marginal_csv(create(dir, "marginal.csv")?)?;
    }
    Ok(())
}

fn run_bot(addr: std::net::SocketAddr, id: usize) -> std::io::Result<(u64, bool)> {
    let mut bot = BotClient::connect(addr)?;
    bot.request_join()?;
    let mut frames = 0;
    let mut got_down = false;
    loop {
        match bot.recv() {
            Ok(Some(Message::JoinAck { player })) => bot.player = Some(player),
            Ok(Some(Message::Frame { tick, .. })) => {
                frames += 1;
                bot.send_input("move", &[(id % 256) as u8, (tick % 256) as u8])?;
            }
            Ok(Some(Message::EngineDown { .. })) => got_down = true,
            Ok(Some(Message::Reject { reason, .. })) => log::info!("bot {id}: rejected ({reason:?})"),
            Ok(Some(other)) => log::debug!("bot {id}: {other:?}"),
            Ok(None) | Err(_) => return Ok((frames, got_down)),
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let s = load(&a.common)?;
    let budget = Duration::from_secs_f64(s.budget_ms() / 1000.0);
    let ticks = a.ticks.or((a.bots > 0).then_some(s.duration_ticks));
    let config = GatewayConfig {
        listen: a.listen,
        ..GatewayConfig::default()
    };
    let mut gw = Gateway::serve(s, config)?;
    println!("listening on {}", gw.local_addr());
    let addr = gw.local_addr();
    let bots: Vec<_> = (0..a.bots).map(|id| thread::spawn(move || run_bot(addr, id))).collect();
    if a.bots > 0 && !gw.wait_for_connections(a.bots, Duration::from_secs(10)) {
        log::warn!("only {} of {} bots connected", gw.connections(), a.bots);
    }
    let mut tick = 0;
    while ticks.is_none_or(|t| tick < t) {
        let started = Instant::now();
        let report = gw.tick();
        if report.overrun {
            log::warn!("tick {} overran the budget ({:.2} ms)", report.tick, report.model_ms());
        }
        tick += 1;
        if let Some(rest) = budget.checked_sub(started.elapsed()) {
            thread::sleep(rest);
        }
    }
    let down = gw.terminate("server shutdown");
    let stats = gw.stats();
    println!(
        "{tick} ticks, {} joins, {} rejects, {} inputs, {} frames, {down} ENGINE_DOWN sent",
        stats.joins, stats.rejects, stats.inputs_accepted, stats.frames_sent
    );
    for (id, h) in bots.into_iter().enumerate() {
        match h.join() {
            Ok(Ok((frames, got_down))) => log::info!("bot {id}: {frames} frames, engine down: {got_down}"),
            Ok(Err(e)) => log::warn!("bot {id}: {e}"),
            Err(_) => log::warn!("bot {id} panicked"),
        }
    }
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let s = load(&a.common)?;
    let tier = builtin_tier(&s.name).unwrap_or_else(|| {
        log::warn!("{} is not a built-in profile; using low-tier targets", s.name);
        GraphicsTier::Low
    });
    let c = calibrate(&s, &tier.targets())?;
    let mut calibrated = s.clone();
    calibrated.set_cost_model(&c.cost);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(format!("{}.cost.toml", s.name)), toml::to_string(&c.cost)?)?;
    calibrated.save(a.out.join(format!("{}.scn", s.name)))?;
    println!(
        "{} ({tier} tier): capsule {} / baseline {} players, limited by {}",
        s.name,
        c.capsule_capacity,
        c.baseline_capacity,
        c.bottleneck.map_or("nothing".to_string(), |b| b.to_string())
    );
    println!(
        "ratios at {} players: cpu {:.3} ram {:.3} gpu {:.3} vram {:.3}",
        c.baseline_capacity, c.ratios.cpu, c.ratios.ram, c.ratios.gpu, c.ratios.vram
    );
    Ok(())
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPSULE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.verb {
        Verb::Run(a) => run(a),
        Verb::Bench(a) => bench(a),
        Verb::Compare(a) => compare(a),
        Verb::Serve(a) => serve(a),
        Verb::Calibrate(a) => calibrate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
