use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;
use std::thread::{self, JoinHandle};

use mrflow_core::extraction::{parse_model_description, to_model_description_xml};
use mrflow_core::signals::{SignalBundle, TimeGrid, Trace};
use mrflow_core::sut::bridge::CHUNK_SAMPLES;
use mrflow_core::sut::{loc_interface, BackendError, BridgeClient, BridgeProcess, SutError};
use serde_json::{json, Value};

type Client = BridgeClient<BufReader<UnixStream>, UnixStream>;

/// Fake bridge. `reply` gets the command, id and every chunk payload of a
/// request and returns the response messages; `None` hangs up.
fn fake_bridge<F>(mut reply: F) -> (Client, JoinHandle<Vec<String>>)
where
    F: FnMut(&str, u64, &[Value]) -> Option<Vec<Value>> + Send + 'static,
{
    let (client_end, server_end) = UnixStream::pair().unwrap();
    let handle = thread::spawn(move || {
        let mut reader = BufReader::new(server_end.try_clone().unwrap());
        let mut writer = server_end;
        let mut seen = Vec::new();
        let mut pending: Vec<Value> = Vec::new();
        let mut line = String::new();
        while reader.read_line(&mut line).unwrap() > 0 {
            let msg: Value = serde_json::from_str(line.trim_end()).unwrap();
            line.clear();
            let cmd = msg["cmd"].as_str().unwrap().to_string();
            let id = msg["id"].as_u64().unwrap();
            let more = msg["payload"]["more"].as_bool().unwrap_or(false);
            pending.push(msg["payload"].clone());
            if more {
                continue;
            }
            seen.push(cmd.clone());
            let Some(responses) = reply(&cmd, id, &pending) else { break };
            pending.clear();
            for r in responses {
                let mut text = if r.is_string() { r.as_str().unwrap().to_string() } else { r.to_string() };
                text.push('\n');
                if writer.write_all(text.as_bytes()).is_err() {
                    return seen;
                }
            }
            if cmd == "shutdown" {
                break;
            }
        }
        seen
    });
    let reader = BufReader::new(client_end.try_clone().unwrap());
    (BridgeClient::new(reader, client_end), handle)
}

fn ok(id: u64, payload: Value) -> Value {
    json!({"id": id, "ok": true, "payload": payload})
}

fn err(id: u64, code: &str, message: &str) -> Value {
    json!({"id": id, "ok": false, "error": {"code": code, "message": message}})
}

/// Bridge that echoes `2 * u` as `y` and knows one interface.
fn doubling_bridge(version: &'static str) -> (Client, JoinHandle<Vec<String>>) {
    fake_bridge(move |cmd, id, chunks| {
        Some(match cmd {
            "hello" => vec![ok(id, json!({"protocol_version": version, "bridge": "fake"}))],
            "describe" => vec![ok(id, json!({"interface": loc_interface()}))],
            "simulate" => chunks
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let u: Vec<f64> = serde_json::from_value(c["inputs"]["u"].clone()).unwrap();
                    let y: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
                    let mut p = json!({"offset": c["offset"], "outputs": {"y": y}});
                    if chunks.len() > 1 {
                        p["more"] = json!(i + 1 < chunks.len());
                    }
                    ok(id, p)
                })
                .collect(),
            "shutdown" => vec![ok(id, json!({}))],
            _ => vec![err(id, "UnknownCommand", cmd)],
        })
    })
}

fn ramp_inputs(grid: TimeGrid) -> SignalBundle {
    let mut b = SignalBundle::new(grid);
    let values: Vec<f64> = grid.times().collect();
    b.insert(Trace::new("u", grid, values).unwrap()).unwrap();
    b
}

#[test]
fn full_transcript() {
    let (mut client, server) = doubling_bridge("1.0");
    assert_eq!(client.hello().unwrap(), "1.0");
    let described = client.describe(Path::new("model.fmu")).unwrap();
    let grid = TimeGrid::new(0.0, 10.0, 1.0).unwrap();
    let out = client.simulate(Path::new("model.fmu"), &ramp_inputs(grid)).unwrap();
    client.shutdown().unwrap();
    assert_eq!(server.join().unwrap(), vec!["hello", "describe", "simulate", "shutdown"]);

    // Parity with the primary-side XML parser.
    let parsed = parse_model_description(to_model_description_xml(&loc_interface()).as_bytes()).unwrap();
    assert_eq!(described, parsed);

    let y = out.values("y").unwrap();
    assert_eq!(y.len(), 11);
    for (i, v) in y.iter().enumerate() {
        assert_eq!(*v, 2.0 * i as f64);
    }
}

#[test]
fn same_major_version_is_accepted() {
    let (mut client, _server) = doubling_bridge("1.7");
    assert_eq!(client.hello().unwrap(), "1.7");
}

#[test]
fn version_mismatch_fails_the_handshake() {
    let (mut client, _server) = doubling_bridge("2.0");
    assert!(matches!(client.hello(), Err(BackendError::HandshakeFailed(_))));
}

#[test]
fn long_traces_travel_in_chunks() {
    let (mut client, server) = doubling_bridge("1.0");
    let n = 2 * CHUNK_SAMPLES + 10;
    let grid = TimeGrid::new(0.0, (n - 1) as f64, 1.0).unwrap();
    let out = client.simulate(Path::new("m.fmu"), &ramp_inputs(grid)).unwrap();
    let y = out.values("y").unwrap();
    assert_eq!(y.len(), n);
    assert_eq!(y[CHUNK_SAMPLES], 2.0 * CHUNK_SAMPLES as f64);
    assert_eq!(y[n - 1], 2.0 * (n - 1) as f64);
    drop(client);
    assert_eq!(server.join().unwrap(), vec!["simulate"]);
}

#[test]
fn remote_errors_map_to_backend_errors() {
    let (mut client, _server) = fake_bridge(|cmd, id, _| {
        Some(vec![match cmd {
            "describe" => err(id, "BadFmu", "not a zip archive"),
            _ => err(id, "SimulationFailed", "solver stalled"),
        }])
    });
    assert_eq!(
        client.describe(Path::new("x.fmu")),
        Err(BackendError::BadFmu("not a zip archive".into()))
    );
    let grid = TimeGrid::new(0.0, 2.0, 1.0).unwrap();
    assert_eq!(
        client.simulate(Path::new("x.fmu"), &ramp_inputs(grid)),
        Err(BackendError::Remote {
            code: "SimulationFailed".into(),
            message: "solver stalled".into()
        })
    );
}

#[test]
fn protocol_violations_are_reported() {
    let (mut client, _server) = fake_bridge(|cmd, id, _| {
        Some(vec![match cmd {
            "describe" => ok(id + 7, json!({})),
            "shutdown" => json!("this is not json"),
            _ => json!({"id": id, "payload": {}}),
        }])
    });
    assert!(matches!(client.describe(Path::new("a.fmu")), Err(BackendError::Protocol(_))));
    let (mut client2, _s2) = fake_bridge(|_, id, _| Some(vec![json!({"id": id, "payload": {}})]));
    assert!(matches!(client2.shutdown(), Err(BackendError::Protocol(_))));
    let (mut client3, _s3) = fake_bridge(|_, _, _| Some(vec![json!("garbage")]));
    assert!(matches!(client3.shutdown(), Err(BackendError::Protocol(_))));
}

#[test]
fn closed_bridge_is_down() {
    let (mut client, _server) = fake_bridge(|_, _, _| None);
    assert!(matches!(client.hello(), Err(BackendError::BridgeDown(_))));
}

#[test]
fn missing_fmu_is_bad_fmu() {
    let command = vec!["true".to_string()];
    let e = BridgeProcess::spawn(&command, Path::new("/nonexistent/model.fmu")).err().unwrap();
    assert!(matches!(e, SutError::Backend(BackendError::BadFmu(_))));
}

#[test]
fn dead_bridge_process_is_down() {
    let dir = tempfile::tempdir().unwrap();
    let fmu = dir.path().join("m.fmu");
    std::fs::write(&fmu, b"").unwrap();
    let e = BridgeProcess::spawn(&["true".to_string()], &fmu).err().unwrap();
    assert!(matches!(e, SutError::Backend(BackendError::BridgeDown(_))), "{e}");
    let e = BridgeProcess::spawn(&["/nonexistent/bridge".to_string()], &fmu).err().unwrap();
    assert!(matches!(e, SutError::Backend(BackendError::BridgeDown(_))), "{e}");
}
