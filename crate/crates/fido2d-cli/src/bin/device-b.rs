//! Interactive device B: the browser machine. Registers, prints the link
//! nonce for device A, then prompts for transaction texts and consent.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::Parser;
use fido2d::crypto::rng_from_seed;
use fido2d_cli::client::DeviceBClient;

#[derive(Parser)]
#[command(name = "device-b", about = "Browser-device agent (first factor)")]
struct Args {
    /// Server endpoint, e.g. 127.0.0.1:7002
    #[arg(long)]
    server: String,
    /// Account username to register and transact as
    #[arg(long)]
    user: String,
    /// Seed for credential generation
    #[arg(long, default_value_t = 0xB)]
    seed: u64,
}

fn prompt(text: &str) -> io::Result<String> {
    print!("{text}");
    io::stdout().flush()?;
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line)?;
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut rng = rng_from_seed(args.seed);
    let mut client = match DeviceBClient::connect(&args.server, &args.user) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot reach server: {e}");
            return ExitCode::FAILURE;
        }
    };
    let consent = prompt(&format!(
        "Register account {:?} at this server? [y/n] ",
        args.user
    ))
    .unwrap_or_default();
    if consent != "y" {
        println!("registration declined");
        return ExitCode::SUCCESS;
    }
    let link = match client.register(&mut rng) {
        Ok(link) => link,
        Err(e) => {
            eprintln!("registration failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("registered; link device A with nonce:");
    println!("  {}", link.value.to_hex());
    println!("(run: device-a --server {} --link <nonce>)", args.server);
    while let Ok(data) = prompt("transaction text (empty to quit): ") {
        if data.is_empty() {
            break;
        }
        let consent = prompt(&format!("Sign transaction {data:?}? [y/n] ")).unwrap_or_default();
        if consent != "y" {
            println!("declined");
            continue;
        }
        match client.transact(&data) {
            Ok(detail) => println!("server: {detail}"),
            Err(e) => println!("failed: {e}"),
        }
    }
    ExitCode::SUCCESS
}
