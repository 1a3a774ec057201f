//! WebSocket transport around a [`Session`].
//!
//! The simulator runs on its own thread at a wall-clock locked 30 Hz. All
//! client input funnels through one ordered channel that the loop drains
//! before each tick; frames and state go out through a broadcast channel.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use fsd_core::dataset::Manifest;
use fsd_core::sim::{Command, TrackSpec};
use futures::{SinkExt, StreamExt};
use tokio::sync::broadcast;

use crate::protocol::{encode_frame, ClientMsg, ServerMsg};
use crate::session::{Session, SessionConfig, TICK_HZ};
use crate::{Error, Result};

enum Event {
    Control(Command, u64),
    Record(bool),
    DriverLeft,
}

struct Shared {
    epoch: Instant,
    events: Mutex<mpsc::Sender<Event>>,
    /// Taken on shutdown so client feeds close.
    out: Mutex<Option<broadcast::Sender<Message>>>,
    driver: Mutex<Option<u64>>,
    next_client: AtomicU64,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn send(&self, e: Event) {
        let _ = self.events.lock().unwrap().send(e);
    }
}

/// A running server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    ticks: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    shared: Arc<Shared>,
    sim: Option<JoinHandle<Result<Option<Manifest>>>>,
    http: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::Relaxed)
    }

    /// Stops the loop and returns the finished recording, if any.
    pub async fn stop(mut self) -> Result<Option<Manifest>> {
        self.stop.store(true, Ordering::Relaxed);
        self.http.abort();
        self.shared.out.lock().unwrap().take();
        let sim = self.sim.take().expect("joined once");
        tokio::task::spawn_blocking(move || sim.join())
            .await
            .map_err(|e| Error::Protocol(format!("sim thread: {e}")))?
            .map_err(|_| Error::Protocol("sim thread panicked".into()))?
    }
}

/// Binds `addr` and starts the simulator loop.
pub async fn start(addr: SocketAddr, track: &TrackSpec, cfg: SessionConfig) -> Result<ServerHandle> {
    let session = Session::new(track, cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| Error::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(|source| Error::Bind { addr, source })?;
    let (events_tx, events_rx) = mpsc::channel();
    let (out, _) = broadcast::channel(32);
    let shared = Arc::new(Shared {
        epoch: Instant::now(),
        events: Mutex::new(events_tx),
        out: Mutex::new(Some(out.clone())),
        driver: Mutex::new(None),
        next_client: AtomicU64::new(0),
    });
    let ticks = Arc::new(AtomicU64::new(0));
    let stop = Arc::new(AtomicBool::new(false));
    let sim = {
        let (ticks, stop, epoch) = (ticks.clone(), stop.clone(), shared.epoch);
        std::thread::Builder::new()
            .name("sim".into())
            .spawn(move || sim_loop(session, events_rx, out, ticks, stop, epoch))
            .map_err(|e| Error::Protocol(format!("cannot spawn sim thread: {e}")))?
    };
    let app = Router::new()
        .route("/", get(|| async { "fsd teleop server; connect a WebSocket to /ws\n" }))
        .route("/ws", get(ws_handler))
        .with_state(shared.clone());
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    log::info!("listening on {addr}");
    Ok(ServerHandle {
        addr,
        ticks,
        stop,
        shared,
        sim: Some(sim),
        http,
    })
}

/// Serves on `port` until Ctrl-C.
pub async fn serve(port: u16, track: &TrackSpec, cfg: SessionConfig) -> Result<Option<Manifest>> {
    let handle = start(SocketAddr::from(([0, 0, 0, 0], port)), track, cfg).await?;
    let _ = tokio::signal::ctrl_c().await;
    handle.stop().await
}

fn sim_loop(
    mut session: Session,
    events: mpsc::Receiver<Event>,
    out: broadcast::Sender<Message>,
    ticks: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    epoch: Instant,
) -> Result<Option<Manifest>> {
    let period = Duration::from_secs(1) / TICK_HZ as u32;
    let start = Instant::now();
    let mut k: u32 = 0;
    while !stop.load(Ordering::Relaxed) {
        while let Ok(e) = events.try_recv() {
            match e {
                Event::Control(cmd, at) => session.set_control(cmd, at),
                Event::Record(on) => {
                    if let Err(e) = session.set_recording(on) {
                        log::error!("recording: {e}");
                    }
                }
                Event::DriverLeft => session.clear_control(),
            }
        }
        let now_ms = epoch.elapsed().as_millis() as u64;
        let tick = session.tick(now_ms)?;
        ticks.store(session.ticks(), Ordering::Relaxed);
        if let Some((seq, img)) = tick.frame {
            let _ = out.send(Message::Binary(encode_frame(seq, &img).into()));
        }
        if let Some(state) = tick.state {
            let text = serde_json::to_string(&ServerMsg::State(state))?;
            let _ = out.send(Message::Text(text.into()));
        }
        k += 1;
        // Absolute deadlines: a late tick shortens the next wait instead of
        // shifting the schedule.
        let deadline = start + period * k;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
    session.finish()
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

fn text(msg: &ServerMsg) -> Message {
    Message::Text(serde_json::to_string(msg).expect("serializable").into())
}

/// Driver if the slot is free, otherwise spectator.
fn claim(shared: &Shared, id: u64) -> bool {
    let mut slot = shared.driver.lock().unwrap();
    if slot.is_none() {
        *slot = Some(id);
    }
    *slot == Some(id)
}

fn release(shared: &Shared, id: u64) -> bool {
    let mut slot = shared.driver.lock().unwrap();
    if *slot == Some(id) {
        *slot = None;
        true
    } else {
        false
    }
}

async fn client(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let Some(mut feed) = shared.out.lock().unwrap().as_ref().map(|o| o.subscribe()) else {
        return;
    };
    let mut is_driver = claim(&shared, id);
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = tokio::sync::mpsc::unbounded_channel::<Message>();
    let _ = direct_tx.send(text(&ServerMsg::Role { spectator: !is_driver }));
    let writer = tokio::spawn(async move {
        loop {
            let msg = tokio::select! {
                m = direct_rx.recv() => match m {
                    Some(m) => m,
                    None => break,
                },
                m = feed.recv() => match m {
                    Ok(m) => m,
                    // A slow client simply misses messages.
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => {
                        let _ = sink.send(Message::Close(None)).await;
                        break;
                    }
                },
            };
            if sink.send(msg).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let body = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let parsed: ClientMsg = match serde_json::from_str(body.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let _ = direct_tx.send(text(&ServerMsg::Error { message: e.to_string() }));
                continue;
            }
        };
        match parsed {
            ClientMsg::Role { spectator } => {
                if spectator {
                    if release(&shared, id) {
                        shared.send(Event::DriverLeft);
                    }
                    is_driver = false;
                } else {
                    is_driver = claim(&shared, id);
                }
                let _ = direct_tx.send(text(&ServerMsg::Role { spectator: !is_driver }));
            }
            _ if !is_driver => {
                let _ = direct_tx.send(text(&ServerMsg::Error {
                    message: "spectators cannot send controls".into(),
                }));
            }
            ClientMsg::Control(c) => match c.validate() {
                Ok(cmd) => shared.send(Event::Control(cmd, shared.now_ms())),
                Err(e) => {
                    let _ = direct_tx.send(text(&ServerMsg::Error { message: e.to_string() }));
                }
            },
            ClientMsg::Record { on } => shared.send(Event::Record(on)),
        }
    }
    if release(&shared, id) {
        shared.send(Event::DriverLeft);
    }
    writer.abort();
}
