//! Relying-party demo server: speaks the wire format over a local TCP
//! endpoint and logs every trace event as one structured line.

use std::net::TcpListener;
use std::process::ExitCode;

use clap::Parser;
use fido2d_cli::WireServer;

#[derive(Parser)]
#[command(name = "server", about = "Two-display authentication demo server")]
struct Args {
    /// Local endpoint to listen on, e.g. 127.0.0.1:7002
    #[arg(long)]
    listen: String,
    /// Relying-party identifier signed into every assertion
    #[arg(long = "server-id")]
    server_id: String,
    /// Seed for challenge and nonce generation
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let listener = match TcpListener::bind(&args.listen) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot listen on {}: {e}", args.listen);
            return ExitCode::FAILURE;
        }
    };
    println!(
        "# server id={} listening on {} seed={}",
        args.server_id, args.listen, args.seed
    );
    println!(
        "event {}",
        fido2d::harness::TraceEvent::new(
            0,
            fido2d::harness::Label::NewServer,
            "",
            &args.server_id,
            ""
        )
        .to_json_line()
    );
    let server = WireServer::new(&args.server_id, args.seed, |event| {
        println!("event {}", event.to_json_line());
    });
    if let Err(e) = server.serve(listener) {
        eprintln!("server stopped: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
