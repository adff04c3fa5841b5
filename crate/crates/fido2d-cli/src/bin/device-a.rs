//! Interactive device A: the additional device with the confirmation
//! display. Links via the nonce, then shows each pushed transaction text
//! and asks for confirmation.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::Parser;
use fido2d::crypto::rng_from_seed;
use fido2d_cli::client::DeviceAClient;

#[derive(Parser)]
#[command(name = "device-a", about = "Additional-device agent (second factor)")]
struct Args {
    /// Server endpoint, e.g. 127.0.0.1:7002
    #[arg(long)]
    server: String,
    /// Link nonce from device B, in hex
    #[arg(long)]
    link: String,
    /// Seed for credential generation
    #[arg(long, default_value_t = 0xA)]
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
    let mut client = match DeviceAClient::link(&args.server, &args.link, &mut rng) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("link failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!(
        "linked to account {:?} at {:?}; waiting for transactions (ctrl-c to quit)",
        client.username, client.server_id
    );
    loop {
        let options = match client.next_confirmation() {
            Ok(o) => o,
            Err(e) => {
                eprintln!("connection lost: {e}");
                return ExitCode::FAILURE;
            }
        };
        println!("--- transaction to confirm ---");
        println!("  account: {}", client.username);
        println!("  server:  {}", client.server_id);
        println!(
            "  text:    {}",
            options.transaction_data.as_deref().unwrap_or("<missing>")
        );
        let consent = prompt("Confirm? [y/n] ").unwrap_or_default();
        if consent != "y" {
            println!("declined; nothing signed");
            continue;
        }
        match client.confirm(&options) {
            Ok(detail) => println!("server: {detail}"),
            Err(e) => println!("failed: {e}"),
        }
    }
}
