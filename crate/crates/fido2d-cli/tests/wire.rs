//! End-to-end wire transport: a real server on a local socket, both device
//! clients walking registration, linking and transactions.

use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use fido2d::crypto::rng_from_seed;
use fido2d::harness::{Label, TraceEvent};
use fido2d_cli::client::{DeviceAClient, DeviceBClient};
use fido2d_cli::WireServer;

fn spawn_server(server_id: &str) -> (String, Arc<Mutex<Vec<TraceEvent>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let trace: Arc<Mutex<Vec<TraceEvent>>> = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&trace);
    let server = WireServer::new(server_id, 1, move |event| {
        sink.lock().unwrap().push(event);
    });
    std::thread::spawn(move || {
        let _ = server.serve(listener);
    });
    (addr, trace)
}

#[test]
fn full_flow_over_tcp() {
    let (addr, trace) = spawn_server("wire.example");
    let mut rng_b = rng_from_seed(100);
    let mut rng_a = rng_from_seed(200);

    let mut device_b = DeviceBClient::connect(&addr, "alice").unwrap();
    let link = device_b.register(&mut rng_b).unwrap();
    assert_eq!(link.username, "alice");

    let mut device_a = DeviceAClient::link(&addr, &link.value.to_hex(), &mut rng_a).unwrap();
    assert_eq!(device_a.username, "alice");
    assert_eq!(device_a.server_id, "wire.example");

    // Two transactions back to back; the confirmation push arrives on
    // device A's persistent connection.
    for data in ["pay 10 to bob", "post hello world"] {
        let confirmer = std::thread::spawn({
            let data = data.to_string();
            move || {
                let options = device_a.next_confirmation().unwrap();
                assert_eq!(options.transaction_data.as_deref(), Some(data.as_str()));
                let detail = device_a.confirm(&options).unwrap();
                assert!(detail.contains("transaction complete"), "{detail}");
                device_a
            }
        });
        let status = device_b.transact(data).unwrap();
        assert!(status.contains("confirm on device A"), "{status}");
        device_a = confirmer.join().unwrap();
    }

    let trace = trace.lock().unwrap().clone();
    assert!(trace.iter().any(|e| e.label == Label::Registered));
    let completed: Vec<_> = trace
        .iter()
        .filter(|e| e.label == Label::TransactionComplete)
        .map(|e| e.transaction.clone())
        .collect();
    assert_eq!(completed, ["pay 10 to bob", "post hello world"]);
}

#[test]
fn wire_server_rejects_stale_link_and_duplicate_registration() {
    let (addr, _trace) = spawn_server("wire.example");
    let mut rng_b = rng_from_seed(300);
    let mut rng_a = rng_from_seed(400);

    let mut device_b = DeviceBClient::connect(&addr, "carol").unwrap();
    let link = device_b.register(&mut rng_b).unwrap();
    let hex = link.value.to_hex();
    let _device_a = DeviceAClient::link(&addr, &hex, &mut rng_a).unwrap();

    // The nonce is consumed: a second device cannot link with it.
    let err = match DeviceAClient::link(&addr, &hex, &mut rng_a) {
        Err(e) => e,
        Ok(_) => panic!("consumed nonce must not link"),
    };
    assert!(
        err.to_string().contains("unknown or consumed nonce"),
        "{err}"
    );

    // The account is active: registration attempts are refused.
    let mut other_b = DeviceBClient::connect(&addr, "carol").unwrap();
    let err = other_b.register(&mut rng_b).unwrap_err();
    assert!(err.to_string().contains("already active"), "{err}");

    // Garbled link text is rejected on-device, before any traffic.
    let err = match DeviceAClient::link(&addr, "not-hex", &mut rng_a) {
        Err(e) => e,
        Ok(_) => panic!("garbled link text must not link"),
    };
    assert!(err.to_string().contains("not a valid nonce"), "{err}");
}

#[test]
fn unknown_account_transaction_refused_over_wire() {
    let (addr, trace) = spawn_server("wire.example");
    let mut device_b = DeviceBClient::connect(&addr, "nobody").unwrap();
    let err = device_b.transact("pay 10 to bob").unwrap_err();
    assert!(err.to_string().contains("not active"), "{err}");
    assert!(trace.lock().unwrap().is_empty());
}
