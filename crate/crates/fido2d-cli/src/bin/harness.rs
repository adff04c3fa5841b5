//! Simulation harness CLI: replay scenario files, explore randomized
//! schedules per threat configuration, or walk the honest flow over a real
//! local transport.

use std::net::TcpListener;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use fido2d::crypto::rng_from_seed;
use fido2d::devices::UserMode;
use fido2d::harness::{
    check_lemma1, check_lemma1_with, check_lemma2, check_lemma2_with, explore, run, Bounds, Label,
    LemmaOptions, Schedule, ThreatConfig, TraceEvent, Verdict,
};
use fido2d_cli::client::{DeviceAClient, DeviceBClient};
use fido2d_cli::WireServer;

#[derive(Parser)]
#[command(name = "harness", about = "Dolev-Yao simulation harness")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and check both lemmas on its trace.
    Run {
        /// Scenario file (see docs/scenarios.md for the grammar)
        #[arg(long)]
        scenario: std::path::PathBuf,
        /// Run seed; same seed, byte-identical log
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also check the stricter temporally-ordered lemma variants
        #[arg(long)]
        ordered: bool,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Run N randomized schedules under a threat configuration.
    Explore {
        /// Comma list: compromise-b, compromise-a, phishing, compare|no-compare
        #[arg(long)]
        threats: String,
        /// Number of randomized schedules
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        /// Master seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (0 = all cores)
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Spawn a local server plus both device agents and walk the honest
    /// flow end to end.
    Demo {
        /// Seed for all key and nonce generation
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in attack scenarios as scenario text.
    Scenario {
        /// One of: honest, manipulation, manipulation-compare, initiation,
        /// dual-compromise, replay
        name: String,
    },
}

#[derive(clap::Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = Bounds::default().max_steps)]
    max_steps: u64,
    #[arg(long, default_value_t = Bounds::default().max_accounts)]
    max_accounts: u64,
    #[arg(long, default_value_t = Bounds::default().max_transactions)]
    max_transactions: u64,
    #[arg(long, default_value_t = Bounds::default().pending_expiry_steps)]
    pending_expiry: u64,
}

impl BoundsArgs {
    fn to_bounds(&self) -> Bounds {
        Bounds {
            max_steps: self.max_steps,
            max_accounts: self.max_accounts,
            max_transactions: self.max_transactions,
            pending_expiry_steps: self.pending_expiry,
        }
    }
}

fn print_verdict(v: &Verdict) {
    println!(
        "lemma {}: {}",
        v.lemma.name(),
        if v.holds { "holds" } else { "VIOLATED" }
    );
    if let Some(cex) = &v.counterexample {
        println!("counterexample ({} events):", cex.len());
        for e in cex {
            println!("  {}", e.to_json_line());
        }
    }
}

fn cmd_run(scenario: &std::path::Path, seed: u64, ordered: bool, bounds: Bounds) -> ExitCode {
    let text = match std::fs::read_to_string(scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", scenario.display());
            return ExitCode::from(2);
        }
    };
    let actions = match Schedule::parse(&text) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let schedule = Schedule {
        seed,
        bounds,
        actions,
    };
    let out = match run(&schedule) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("schedule error: {e}");
            return ExitCode::from(2);
        }
    };
    println!("{}", out.log);
    println!(
        "# trace: {} events in {} steps",
        out.trace.len(),
        out.steps_executed
    );
    print_verdict(&check_lemma1(&out.trace));
    print_verdict(&check_lemma2(&out.trace));
    if ordered {
        let opts = LemmaOptions {
            temporal_order: true,
            ..LemmaOptions::default()
        };
        println!("# stricter ordered variants (not the default property):");
        print_verdict(&check_lemma1_with(&out.trace, opts));
        print_verdict(&check_lemma2_with(&out.trace, opts));
    }
    ExitCode::SUCCESS
}

fn cmd_explore(threats: &str, runs: u64, seed: u64, threads: usize, bounds: Bounds) -> ExitCode {
    let threats = match ThreatConfig::parse(threats) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("bad --threats: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = if threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        threads
    };
    let report = explore(&threats, seed, runs, &bounds, threads);
    print!("{}", report.detail_text());
    println!("# elapsed {:?}", report.elapsed);
    // Nonzero exit exactly when a violation contradicts the claimed
    // security of this configuration.
    if !report.violation_free() && threats.expected_secure() {
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn cmd_demo(seed: u64) -> ExitCode {
    let trace: Arc<Mutex<Vec<TraceEvent>>> = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&trace);
    let listener = match TcpListener::bind("127.0.0.1:0") {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind: {e}");
            return ExitCode::FAILURE;
        }
    };
    let addr = listener
        .local_addr()
        .expect("bound socket has an address")
        .to_string();
    println!("# demo server id=demo.example on {addr}");
    let started = TraceEvent::new(0, Label::NewServer, "", "demo.example", "");
    println!("event {}", started.to_json_line());
    trace.lock().expect("trace sink poisoned").push(started);
    let server = WireServer::new("demo.example", seed, move |event| {
        println!("event {}", event.to_json_line());
        sink.lock().expect("trace sink poisoned").push(event);
    });
    std::thread::spawn(move || {
        let _ = server.serve(listener);
    });

    let mut rng_b = rng_from_seed(seed ^ 0xB);
    let mut rng_a = rng_from_seed(seed ^ 0xA);
    let result = (|| -> std::io::Result<()> {
        let mut device_b = DeviceBClient::connect(&addr, "alice")?;
        println!("# device B registering account \"alice\"");
        let link = device_b.register(&mut rng_b)?;
        println!("# link nonce handed to device A: {}", link.value.to_hex());
        let mut device_a = DeviceAClient::link(&addr, &link.value.to_hex(), &mut rng_a)?;
        println!("# device A linked; initiating \"pay 10 to bob\"");

        let confirmer = std::thread::spawn(move || -> std::io::Result<String> {
            let options = device_a.next_confirmation()?;
            println!(
                "# device A displays: {:?} — user compares and confirms",
                options.transaction_data.as_deref().unwrap_or_default()
            );
            device_a.confirm(&options)
        });
        let status = device_b.transact("pay 10 to bob")?;
        println!("# device B: {status}");
        let detail = confirmer
            .join()
            .map_err(|_| std::io::Error::other("confirmer thread panicked"))??;
        println!("# device A: {detail}");
        Ok(())
    })();
    if let Err(e) = result {
        eprintln!("demo failed: {e}");
        return ExitCode::FAILURE;
    }
    let trace = trace.lock().expect("trace sink poisoned").clone();
    let complete = trace
        .iter()
        .any(|e| e.label == Label::TransactionComplete && e.transaction == "pay 10 to bob");
    // The wire demo has no user-intent actor, so initiation is recorded
    // here from the driver's perspective for the lemma check.
    let mut full = vec![TraceEvent::new(
        0,
        Label::TransactionBegin,
        "alice",
        "demo.example",
        "pay 10 to bob",
    )];
    full.extend(trace);
    print_verdict(&check_lemma1(&full));
    print_verdict(&check_lemma2(&full));
    if complete {
        println!("demo: transaction completed through both ceremonies");
        ExitCode::SUCCESS
    } else {
        eprintln!("demo: no completion observed");
        ExitCode::FAILURE
    }
}

fn cmd_scenario(name: &str) -> ExitCode {
    use fido2d::harness::scenarios;
    let schedule = match name {
        "honest" => scenarios::honest(0),
        "manipulation" => scenarios::manipulation(UserMode::NoCompare),
        "manipulation-compare" => scenarios::manipulation(UserMode::Compare),
        "initiation" => scenarios::initiation(),
        "dual-compromise" => scenarios::dual_compromise(),
        "replay" => scenarios::replay_defense(),
        other => {
            eprintln!("unknown scenario {other:?}");
            return ExitCode::from(2);
        }
    };
    print!("{}", schedule.to_text());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Args::parse().command {
        Command::Run {
            scenario,
            seed,
            ordered,
            bounds,
        } => cmd_run(&scenario, seed, ordered, bounds.to_bounds()),
        Command::Explore {
            threats,
            runs,
            seed,
            threads,
            bounds,
        } => cmd_explore(&threats, runs, seed, threads, bounds.to_bounds()),
        Command::Demo { seed } => cmd_demo(seed),
        Command::Scenario { name } => cmd_scenario(&name),
    }
}
