use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_server(time_scale: &str) -> Server {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/teleop.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ehgo"))
        .args(["serve", scenario.to_str().unwrap(), "--port", "0", "--time-scale", time_scale])
        .env("EHGO_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    Server { child, addr }
}

async fn connect(server: &Server) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{}", server.addr)).await.unwrap().0
}

async fn next_frame(ws: &mut Ws) -> Value {
    loop {
        let msg = timeout(Duration::from_secs(10), ws.next()).await.expect("frame within 10 s").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, text: String) {
    ws.send(Message::text(text)).await.unwrap();
}

#[tokio::test]
async fn scripted_circle_lands_and_the_stream_freezes() {
    let server = spawn_server("5");
    let mut ws = connect(&server).await;
    send(&mut ws, "not json".into()).await;
    send(&mut ws, json!({"type": "cmd", "v": 1, "vx": 0.1}).to_string()).await;
    send(&mut ws, json!({"type": "cmd", "v": 9, "vx": 0.1, "vy": 0.0}).to_string()).await;

    let w = 2.0 * std::f64::consts::PI / 20.0;
    let landed_at = loop {
        let f = next_frame(&mut ws).await;
        assert_eq!(f["v"], 1);
        match f["type"].as_str().unwrap() {
            "state" => {
                let t = f["t"].as_f64().unwrap();
                assert!(t < 30.0, "no landing within 30 s of driving");
                for key in ["p1", "theta1", "xc1", "xc1_hat"] {
                    assert_eq!(f[key].as_array().unwrap().len(), 3, "{key}");
                }
                assert!(f["flags"]["offset_active"].is_boolean());
                let cmd = json!({"type": "cmd", "v": 1, "vx": 0.3 * (w * t).cos(), "vy": 0.3 * (w * t).sin()});
                send(&mut ws, cmd.to_string()).await;
            }
            "event" => {
                assert_eq!(f["name"], "landed");
                break f["t"].as_f64().unwrap();
            }
            other => panic!("unexpected frame type {other}"),
        }
    };

    for _ in 0..3 {
        let f = next_frame(&mut ws).await;
        assert_eq!(f["type"], "state");
        assert_eq!(f["landed"], true);
        assert_eq!(f["t"].as_f64().unwrap(), landed_at);
    }

    let mut late = connect(&server).await;
    let first = next_frame(&mut late).await;
    assert_eq!(first["type"], "event");
    assert_eq!(first["t"].as_f64().unwrap(), landed_at);
}

#[tokio::test]
async fn reference_holds_still_without_commands() {
    let server = spawn_server("5");
    let mut ws = connect(&server).await;
    let mut last = Value::Null;
    while last["t"].as_f64().map_or(true, |t| t < 2.0) {
        last = next_frame(&mut ws).await;
    }
    assert_eq!(last["xc1"], json!([0.0, 0.0, -0.5]));
}

#[tokio::test]
async fn only_the_first_commander_moves_the_reference() {
    let server = spawn_server("5");
    let mut driver = connect(&server).await;
    let mut viewer = connect(&server).await;
    send(&mut driver, json!({"type": "cmd", "v": 1, "vx": 0.2, "vy": 0.0}).to_string()).await;
    let mut f = next_frame(&mut driver).await;
    while f["xc1"][0].as_f64().unwrap() <= 0.0 {
        f = next_frame(&mut driver).await;
    }
    let t_claimed = f["t"].as_f64().unwrap();
    send(&mut viewer, json!({"type": "cmd", "v": 1, "vx": 1.0, "vy": 1.0}).to_string()).await;
    while f["t"].as_f64().unwrap() < t_claimed + 2.0 {
        f = next_frame(&mut driver).await;
    }
    assert_eq!(f["xc1"][1].as_f64().unwrap(), 0.0);
    let vx_held = f["xc1"][0].as_f64().unwrap() / f["t"].as_f64().unwrap();
    assert!(vx_held < 0.2, "{f}");
}

#[test]
fn occupied_port_is_a_config_error() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/teleop.json");
    let out = Command::new(env!("CARGO_BIN_EXE_ehgo"))
        .args(["serve", scenario.to_str().unwrap(), "--port", &port])
        .env("EHGO_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("port"));
}
