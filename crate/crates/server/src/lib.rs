//! Live session host.
//!
//! A single optimizer thread steps the session and applies control messages
//! between iterations. Clients connect to `/session` over a websocket and
//! receive binary [`frame`] updates plus JSON [`protocol::StatusFrame`]s;
//! every text message they send is answered with a [`protocol::Ack`].
//! Frames and status travel through newest-wins channels, so a slow client
//! only ever misses intermediate frames.

pub mod frame;
mod optimizer;
pub mod protocol;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use tailne::dataspace::DatasetStore;
use tailne::session::{Session, SessionConfig};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tower_http::services::ServeDir;

use optimizer::{Command, Outputs, Worker};
use protocol::{reason, Ack};

pub const DEFAULT_FRAME_HZ: f64 = 30.0;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Core(#[from] tailne::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub frame_hz: f64,
    /// Directory served at `/`; a placeholder page is served when absent.
    pub static_dir: Option<PathBuf>,
    /// Where `snapshot` requests write fbin files; kept in memory otherwise.
    pub snapshot_dir: Option<PathBuf>,
    /// Start with the optimizer paused.
    pub start_paused: bool,
    pub session: SessionConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            frame_hz: DEFAULT_FRAME_HZ,
            static_dir: None,
            snapshot_dir: None,
            start_paused: false,
            session: SessionConfig::default(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Command>,
    frames: watch::Receiver<Bytes>,
    status: watch::Receiver<String>,
}

/// A server bound to a socket. Dropping it without [`RunningServer::shutdown`]
/// leaves the tasks running until the runtime stops.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
    shutdown: Option<oneshot::Sender<()>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub async fn shutdown(mut self) -> Result<(), ServerError> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let served = self.http.await.map_err(|e| ServerError::Config(e.to_string()))?;
        if let Some(worker) = self.worker.take() {
            tokio::task::spawn_blocking(move || worker.join())
                .await
                .map_err(|e| ServerError::Config(e.to_string()))?
                .map_err(|_| ServerError::Config("optimizer thread panicked".into()))?;
        }
        Ok(served?)
    }
}

/// Builds the session, starts the optimizer thread and binds the listener.
pub async fn start(store: DatasetStore, config: ServerConfig) -> Result<RunningServer, ServerError> {
    if !(config.frame_hz.is_finite() && config.frame_hz > 0.0) {
        return Err(ServerError::Config("frame_hz must be > 0".into()));
    }
    if let Some(dir) = &config.static_dir {
        if !dir.is_dir() {
            return Err(ServerError::Config(format!("{} is not a directory", dir.display())));
        }
    }
    let session = Session::new(store, config.session.clone())?;
    let listener = TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;

    let (frames_tx, frames_rx) = watch::channel(Bytes::new());
    let (status_tx, status_rx) = watch::channel(String::new());
    let (cmd_tx, cmd_rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let worker = Worker::new(
        session,
        config.session.clone(),
        config.frame_hz,
        config.snapshot_dir.clone(),
        config.start_paused,
        Outputs {
            frames: frames_tx,
            status: status_tx,
        },
        stop.clone(),
    );
    let worker = std::thread::Builder::new()
        .name("optimizer".into())
        .spawn(move || worker.run(cmd_rx))?;

    let app = router(
        AppState {
            commands: cmd_tx,
            frames: frames_rx,
            status: status_rx,
        },
        config.static_dir.clone(),
    );
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await
    });
    log::info!("listening on {addr}");
    Ok(RunningServer {
        addr,
        stop,
        worker: Some(worker),
        shutdown: Some(shutdown_tx),
        http,
    })
}

const PLACEHOLDER: &str = "<!doctype html><title>tailne</title>\
<p>Session endpoint: <code>/session</code> (websocket). No UI directory configured.</p>";

fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new().route("/session", get(upgrade));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    app.with_state(state)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let AppState {
        commands,
        mut frames,
        mut status,
    } = state;
    // Newly connected clients get the current frame and status at once.
    frames.mark_changed();
    status.mark_changed();
    let mut received = 0u64;
    loop {
        let outgoing = tokio::select! {
            changed = frames.changed() => match changed {
                Ok(()) => Message::Binary(frames.borrow_and_update().clone()),
                Err(_) => break,
            },
            changed = status.changed() => match changed {
                Ok(()) => Message::Text(status.borrow_and_update().clone().into()),
                Err(_) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    received += 1;
                    let ack = dispatch(&commands, text.as_str(), received).await;
                    Message::Text(serde_json::to_string(&ack).expect("ack serializes").into())
                }
                Some(Ok(Message::Binary(_))) => {
                    received += 1;
                    let ack = Ack::fail(None, 0, reason::MALFORMED, "binary messages are not accepted");
                    Message::Text(serde_json::to_string(&Ack { seq: Some(received), ..ack }).unwrap().into())
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
        };
        if outgoing.clone().into_data().is_empty() {
            continue;
        }
        if socket.send(outgoing).await.is_err() {
            break;
        }
    }
}

async fn dispatch(commands: &mpsc::Sender<Command>, text: &str, received: u64) -> Ack {
    let envelope = match protocol::parse(text) {
        Ok(e) => e,
        Err((seq, why, message)) => {
            return Ack {
                seq: Some(seq.unwrap_or(received)),
                ..Ack::fail(None, 0, why, message)
            }
        }
    };
    let seq = Some(envelope.seq.unwrap_or(received));
    let kind = envelope.message.kind();
    let (reply, answer) = oneshot::channel();
    let command = Command {
        message: envelope.message,
        seq,
        reply,
    };
    if commands.send(command).is_err() {
        return Ack {
            seq,
            ..Ack::fail(Some(kind), 0, reason::UNAVAILABLE, "optimizer stopped")
        };
    }
    answer.await.unwrap_or_else(|_| Ack {
        seq,
        ..Ack::fail(Some(kind), 0, reason::UNAVAILABLE, "optimizer stopped")
    })
}
