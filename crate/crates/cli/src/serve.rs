//! Live session server. A single stepper thread owns the simulation; each
//! WebSocket connection talks to it only through channels.

use std::io::Write;
use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use ehgo_core::teleop::{ClientFrame, ServerFrame, TeleopSession, FRAME_VERSION};
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};
use tokio_tungstenite::tungstenite::Message;

use crate::commands::{load, sim_failure};
use crate::{Failure, ScenarioArgs};

const FRAME_RATE: f64 = 30.0;
/// Largest slice of simulated time advanced between two looks at the inbox.
const MAX_CHUNK: f64 = 0.01;
const IDLE_SLEEP: Duration = Duration::from_millis(2);

#[derive(Debug)]
enum Inbound {
    Cmd { conn: u64, vx: f64, vy: f64 },
    Malformed { conn: u64, reason: String },
    Closed { conn: u64 },
}

#[derive(Debug, Clone)]
enum Outbound {
    State(String),
    Event(String),
}

struct Stepper {
    session: TeleopSession,
    time_scale: f64,
    inbox: mpsc::UnboundedReceiver<Inbound>,
    frames: broadcast::Sender<Outbound>,
    terminal: watch::Sender<Option<String>>,
    controller: Option<u64>,
    malformed: u64,
    ignored: u64,
    halted: bool,
}

impl Stepper {
    fn handle(&mut self, msg: Inbound) {
        match msg {
            Inbound::Cmd { conn, vx, vy } => {
                if self.controller.is_none() {
                    log::info!("connection {conn} now holds the command channel");
                    self.controller = Some(conn);
                }
                if self.controller == Some(conn) {
                    self.session.set_command(vx, vy);
                } else {
                    self.ignored += 1;
                    log::debug!("command from viewer {conn} ignored ({} so far)", self.ignored);
                }
            }
            Inbound::Malformed { conn, reason } => {
                self.malformed += 1;
                log::warn!("dropped frame from connection {conn}: {reason} ({} dropped)", self.malformed);
            }
            Inbound::Closed { conn } => {
                if self.controller == Some(conn) {
                    log::info!("controller {conn} left; command reset to zero");
                    self.controller = None;
                    self.session.set_command(0.0, 0.0);
                }
            }
        }
    }

    fn finish(&mut self, frame: ServerFrame) {
        let json = frame.to_json();
        self.terminal.send_replace(Some(json.clone()));
        let _ = self.frames.send(Outbound::Event(json));
        self.publish_state();
    }

    fn publish_state(&self) {
        let _ = self.frames.send(Outbound::State(self.session.snapshot().to_json()));
    }

    fn run(mut self) {
        let period = Duration::from_secs_f64(1.0 / FRAME_RATE);
        let origin = Instant::now();
        let t0 = self.session.time();
        let mut next_frame = origin;
        loop {
            loop {
                match self.inbox.try_recv() {
                    Ok(msg) => self.handle(msg),
                    Err(mpsc::error::TryRecvError::Empty) => break,
                    Err(mpsc::error::TryRecvError::Disconnected) => return,
                }
            }
            let target = t0 + origin.elapsed().as_secs_f64() * self.time_scale;
            let behind = !self.halted && !self.session.is_finished() && target > self.session.time();
            if behind {
                match self.session.advance(target.min(self.session.time() + MAX_CHUNK)) {
                    Ok(Some(event)) => {
                        log::info!("landed at t = {:.3} s", self.session.time());
                        self.finish(event);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        log::error!("simulation stopped: {e}");
                        self.halted = true;
                        let t = self.session.time();
                        self.finish(ServerFrame::Event { v: FRAME_VERSION, name: "diverged".into(), t });
                    }
                }
            }
            let now = Instant::now();
            if now >= next_frame {
                self.publish_state();
                next_frame += period;
                if next_frame < now {
                    next_frame = now + period;
                }
            }
            if !behind {
                thread::sleep(next_frame.saturating_duration_since(Instant::now()).min(IDLE_SLEEP));
            }
        }
    }
}

async fn connection(
    stream: TcpStream,
    peer: SocketAddr,
    conn: u64,
    inbox: mpsc::UnboundedSender<Inbound>,
    mut frames: broadcast::Receiver<Outbound>,
    terminal: watch::Receiver<Option<String>>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("handshake with {peer} failed: {e}");
            return;
        }
    };
    log::info!("connection {conn} from {peer}");
    let (mut tx, mut rx) = ws.split();
    let stored = terminal.borrow().clone();
    let mut event_sent = false;
    if let Some(event) = stored {
        event_sent = true;
        if tx.send(Message::text(event)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            out = frames.recv() => {
                let text = match out {
                    Ok(Outbound::State(s)) => s,
                    Ok(Outbound::Event(_)) if event_sent => continue,
                    Ok(Outbound::Event(e)) => {
                        event_sent = true;
                        e
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                if tx.send(Message::text(text)).await.is_err() {
                    break;
                }
            }
            msg = rx.next() => {
                let inbound = match msg {
                    Some(Ok(Message::Text(text))) => match ClientFrame::parse(text.as_str()) {
                        Ok(ClientFrame::Cmd { vx, vy, .. }) => Inbound::Cmd { conn, vx, vy },
                        Err(e) => Inbound::Malformed { conn, reason: e.to_string() },
                    },
                    Some(Ok(Message::Binary(_))) => Inbound::Malformed { conn, reason: "binary frame".into() },
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                if inbox.send(inbound).is_err() {
                    break;
                }
            }
        }
    }
    log::info!("connection {conn} closed");
    let _ = inbox.send(Inbound::Closed { conn });
}

pub fn serve(args: &ScenarioArgs, host: &str, port: u16, time_scale: f64) -> Result<u8, Failure> {
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(Failure::Config(anyhow!("time_scale: {time_scale} is not a positive number")));
    }
    let scenario = load(args)?;
    let session = TeleopSession::new(&scenario).map_err(sim_failure)?;
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener = TcpListener::bind((host, port)).await.with_context(|| format!("port: cannot bind {host}:{port}"))?;
        let addr = listener.local_addr()?;
        println!("listening on {addr}");
        std::io::stdout().flush()?;

        let (inbox_tx, inbox_rx) = mpsc::unbounded_channel();
        let (frames_tx, _) = broadcast::channel(64);
        let (terminal_tx, terminal_rx) = watch::channel(None);
        let stepper = Stepper {
            session,
            time_scale,
            inbox: inbox_rx,
            frames: frames_tx.clone(),
            terminal: terminal_tx,
            controller: None,
            malformed: 0,
            ignored: 0,
            halted: false,
        };
        thread::Builder::new().name("stepper".into()).spawn(move || stepper.run())?;

        let mut next_conn = 0u64;
        loop {
            tokio::select! {
                accepted = listener.accept() => {
                    let (stream, peer) = match accepted {
                        Ok(a) => a,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    next_conn += 1;
                    let frames = frames_tx.subscribe();
                    tokio::spawn(connection(stream, peer, next_conn, inbox_tx.clone(), frames, terminal_rx.clone()));
                }
                _ = tokio::signal::ctrl_c() => {
                    log::info!("shutting down");
                    break;
                }
            }
        }
        Ok(0)
    })
}
