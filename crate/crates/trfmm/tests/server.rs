use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use trfmm::bridge::{serve, LogEntry, ServeOptions, Session, SCHEMA};

mod common;

use common::{config, world};

type Socket = WebSocket<MaybeTlsStream<TcpStream>>;

struct Conn {
    ws: Socket,
    next_seq: u64,
    snapshots: Vec<Value>,
}

impl Conn {
    fn open(addr: std::net::SocketAddr) -> Conn {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        }
        Conn { ws, next_seq: 0, snapshots: Vec::new() }
    }

    /// Next message; checks the envelope and the per-connection sequence.
    fn recv(&mut self) -> Value {
        loop {
            match self.ws.read().unwrap() {
                Message::Text(t) => {
                    let v: Value = serde_json::from_str(&t).unwrap();
                    assert_eq!(v["seq"], json!(self.next_seq), "{v}");
                    self.next_seq += 1;
                    return v;
                }
                Message::Ping(_) | Message::Pong(_) => continue,
                other => panic!("unexpected frame {other:?}"),
            }
        }
    }

    /// Next message that is not a periodic snapshot.
    fn reply(&mut self) -> Value {
        loop {
            let v = self.recv();
            if v["type"] == "snapshot" {
                self.snapshots.push(v);
            } else {
                return v;
            }
        }
    }

    fn send(&mut self, v: Value) {
        self.ws.send(Message::text(v.to_string())).unwrap();
    }
}

fn validator() -> jsonschema::Validator {
    jsonschema::validator_for(&serde_json::from_str::<Value>(SCHEMA).unwrap()).unwrap()
}

#[test]
fn websocket_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("commands.jsonl");
    let opts = ServeOptions {
        broadcast_period: Duration::from_millis(20),
        pace: 0.0,
        command_log: Some(log_path.clone()),
    };
    let handle = serve(Session::new(world(), config()).unwrap(), "127.0.0.1:0", opts).unwrap();
    let schema = validator();
    let mut c = Conn::open(handle.local_addr());

    let first = c.recv();
    assert_eq!(first["type"], "full_state");
    assert!(schema.is_valid(&first));
    assert_eq!(first["payload"]["snapshot"]["paused"], json!(true));
    assert_eq!(first["payload"]["map"]["width"], json!(30));

    c.ws.send(Message::text("{not json")).unwrap();
    let e = c.reply();
    assert_eq!(e["type"], "error");
    assert_eq!(e["payload"]["code"], "bad_message");
    assert_eq!(e["payload"]["command_seq"], Value::Null);

    c.send(json!({"type": "command", "seq": 1, "payload": {"kind": "set_goal", "x": 0.1, "y": 0.1}}));
    let e = c.reply();
    assert_eq!(e["payload"]["code"], "invalid_target");
    assert_eq!(e["payload"]["command_seq"], json!(1));
    assert!(schema.is_valid(&e));

    c.send(json!({"type": "get_raster", "seq": 2, "payload": {"id": "arrival"}}));
    assert_eq!(c.reply()["payload"]["code"], "raster_unavailable");

    c.send(json!({"type": "get_raster", "seq": 3, "payload": {"id": "clearance"}}));
    let r = c.reply();
    assert_eq!(r["type"], "raster");
    assert_eq!(r["payload"]["values"].as_array().unwrap().len(), 30 * 14);
    assert!(schema.is_valid(&r));

    c.send(json!({"type": "command", "seq": 4, "payload": {"kind": "remove_obstacle", "id": 42}}));
    assert_eq!(c.reply()["payload"]["code"], "unknown_obstacle");

    c.send(json!({"type": "command", "seq": 5, "payload": {"kind": "resume"}}));
    let ack = c.reply();
    assert_eq!(ack, json!({"type": "ack", "seq": ack["seq"], "payload": {"command_seq": 5, "kind": "resume"}}));

    // time moves and snapshots keep coming
    let deadline = Instant::now() + Duration::from_secs(10);
    let mut last_tick = 0;
    while last_tick < 20 {
        assert!(Instant::now() < deadline, "no progress");
        let v = c.recv();
        if v["type"] == "snapshot" {
            assert!(schema.is_valid(&v), "{v}");
            let tick = v["payload"]["tick"].as_u64().unwrap();
            assert!(tick >= last_tick);
            last_tick = tick;
        }
    }

    c.send(json!({"type": "get_raster", "seq": 6, "payload": {"id": "arrival"}}));
    let r = c.reply();
    assert_eq!(r["type"], "raster", "{r}");
    assert!(r["payload"]["values"].as_array().unwrap().iter().any(|v| v.is_null()));

    // a second console gets its own handshake and sequence
    let mut d = Conn::open(handle.local_addr());
    assert_eq!(d.recv()["type"], "full_state");
    d.send(json!({"type": "command", "seq": 0, "payload": {"kind": "spawn_obstacle", "x": 3.0, "y": 1.5}}));
    assert_eq!(d.reply()["type"], "ack");
    c.send(json!({"type": "command", "seq": 7, "payload": {"kind": "pause"}}));
    assert_eq!(c.reply()["type"], "ack");

    drop(c);
    drop(d);
    let session = handle.shutdown();
    assert!(session.is_paused());
    let kinds: Vec<&str> = session.log().iter().map(|e| e.command.kind()).collect();
    assert_eq!(kinds, ["resume", "spawn_obstacle", "pause"]);

    // the command log on disk replays the served session
    let text = std::fs::read_to_string(&log_path).unwrap();
    let entries: Vec<LogEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries, session.log());
    let replayed = Session::replay(world(), config(), &entries, session.ticks()).unwrap();
    assert_eq!(replayed.trace(), session.trace());
}

#[test]
fn binding_a_taken_port_fails() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let err = serve(Session::new(world(), config()).unwrap(), addr, ServeOptions::default()).err().unwrap();
    assert!(err.to_string().contains("cannot bind"));
}
