//! The worker thread that owns the session.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use serde_json::{json, Value};
use tailne::dataspace::{load_dataset, save_matrix, Format};
use tailne::session::{ParamValue, Session, SessionConfig, Snapshot, PARAM_NAMES};
use tailne::{Error, Matrix};
use tokio::sync::{oneshot, watch};

use crate::frame;
use crate::protocol::{reason, Ack, ClientMessage, StatusFrame};

pub const STATUS_INTERVAL: Duration = Duration::from_millis(500);
const IDLE_POLL: Duration = Duration::from_millis(20);

pub struct Command {
    pub message: ClientMessage,
    pub seq: Option<u64>,
    pub reply: oneshot::Sender<Ack>,
}

pub struct Outputs {
    pub frames: watch::Sender<Bytes>,
    pub status: watch::Sender<String>,
}

pub struct Worker {
    session: Session,
    config: SessionConfig,
    paused: bool,
    view: Option<[usize; 2]>,
    frame_interval: Duration,
    snapshot_dir: Option<PathBuf>,
    snapshots: Vec<Snapshot>,
    last_error: Option<String>,
    fraction_new: f64,
    out: Outputs,
    stop: Arc<AtomicBool>,
}

fn default_view(d: usize) -> Option<[usize; 2]> {
    (d > 3).then_some([0, 1])
}

fn core_reason(e: &Error) -> &'static str {
    match e {
        Error::UnknownParam(_) => reason::UNKNOWN_PARAM,
        _ => reason::INVALID_VALUE,
    }
}

impl Worker {
    pub fn new(
        session: Session,
        config: SessionConfig,
        frame_hz: f64,
        snapshot_dir: Option<PathBuf>,
        paused: bool,
        out: Outputs,
        stop: Arc<AtomicBool>,
    ) -> Self {
        Worker {
            view: default_view(session.dim()),
            fraction_new: session.stats().fraction_new,
            session,
            config,
            paused,
            frame_interval: Duration::from_secs_f64(1.0 / frame_hz),
            snapshot_dir,
            snapshots: Vec::new(),
            last_error: None,
            out,
            stop,
        }
    }

    pub fn run(mut self, commands: Receiver<Command>) {
        self.publish_frame();
        let mut last_frame = Instant::now();
        let mut last_status = Instant::now();
        let mut status_iteration = self.session.iteration();
        self.publish_status(0.0);
        let mut dirty = false;
        while !self.stop.load(Ordering::Relaxed) {
            loop {
                match commands.try_recv() {
                    Ok(c) => dirty |= self.apply(c),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }
            if self.paused {
                match commands.recv_timeout(IDLE_POLL) {
                    Ok(c) => dirty |= self.apply(c),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            } else {
                match self.session.step() {
                    Ok(report) => {
                        self.fraction_new = report.fraction_new;
                        dirty = true;
                    }
                    Err(e) => {
                        log::error!("optimizer paused: {e}");
                        self.last_error = Some(e.to_string());
                        self.paused = true;
                    }
                }
            }
            let now = Instant::now();
            if dirty && now - last_frame >= self.frame_interval {
                self.publish_frame();
                last_frame = now;
                dirty = false;
            }
            if now - last_status >= STATUS_INTERVAL {
                let done = self.session.iteration().saturating_sub(status_iteration);
                self.publish_status(done as f64 / (now - last_status).as_secs_f64());
                last_status = now;
                status_iteration = self.session.iteration();
            }
        }
    }

    fn publish_frame(&self) {
        let (coords, _) = self.session.live_coords();
        let bytes = frame::encode(self.session.iteration(), &coords, self.view);
        self.out.frames.send_replace(Bytes::from(bytes));
    }

    fn publish_status(&self, rate: f64) {
        let mut params = serde_json::Map::new();
        for name in PARAM_NAMES {
            let v = match self.session.param(name) {
                Some(ParamValue::Number(x)) => json!(x),
                Some(ParamValue::Text(t)) => json!(t),
                None => Value::Null,
            };
            params.insert(name.to_string(), v);
        }
        let status = StatusFrame {
            kind: "status".into(),
            iteration: self.session.iteration(),
            iterations_per_sec: rate,
            fraction_new: self.fraction_new,
            paused: self.paused,
            n: self.session.n_live(),
            d: self.session.dim(),
            params,
            view_dims: self.view,
            error: self.last_error.clone(),
        };
        self.out
            .status
            .send_replace(serde_json::to_string(&status).expect("status serializes"));
    }

    /// Applies one command and answers it. Returns whether coordinates or the
    /// frame layout changed.
    fn apply(&mut self, command: Command) -> bool {
        let kind = command.message.kind();
        let (ack, changed) = match self.handle(command.message) {
            Ok((data, changed)) => {
                let ack = Ack::ok(kind, self.session.iteration());
                (if data.is_null() { ack } else { ack.with_data(data) }, changed)
            }
            Err((why, message)) => (Ack::fail(Some(kind), self.session.iteration(), why, message), false),
        };
        let _ = command.reply.send(Ack {
            seq: command.seq,
            ..ack
        });
        if changed {
            // Keep status in step with acknowledged state.
            self.publish_status(0.0);
        }
        changed
    }

    fn handle(&mut self, message: ClientMessage) -> Result<(Value, bool), (&'static str, String)> {
        let core = |e: Error| (core_reason(&e), e.to_string());
        match message {
            ClientMessage::SetParam { name, value } if name == "view_dims" => {
                self.view = Some(self.parse_view(&value)?);
                Ok((Value::Null, true))
            }
            ClientMessage::SetParam { name, value } => {
                let value = match value {
                    Value::Number(n) => ParamValue::Number(n.as_f64().unwrap_or(f64::NAN)),
                    Value::String(s) => ParamValue::Text(s),
                    other => {
                        if !PARAM_NAMES.contains(&name.as_str()) {
                            return Err((reason::UNKNOWN_PARAM, format!("unknown parameter {name}")));
                        }
                        return Err((reason::INVALID_VALUE, format!("unsupported value {other}")));
                    }
                };
                self.session.set_param(&name, value).map_err(core)?;
                if name == "learning_rate" || name == "alpha" {
                    self.last_error = None;
                }
                Ok((Value::Null, true))
            }
            ClientMessage::Implode { factor } => {
                self.session.implode(factor).map_err(core)?;
                Ok((Value::Null, true))
            }
            ClientMessage::Pause => {
                self.paused = true;
                Ok((Value::Null, true))
            }
            ClientMessage::Resume => {
                self.paused = false;
                self.last_error = None;
                Ok((Value::Null, true))
            }
            ClientMessage::Load { path } => {
                let path = PathBuf::from(path);
                let metric = self.session.store().metric();
                let store = load_dataset(&path, Format::from_path(&path), metric)
                    .map_err(|e| (reason::LOAD_FAILED, e.to_string()))?;
                let session =
                    Session::new(store, self.config.clone()).map_err(|e| (reason::LOAD_FAILED, e.to_string()))?;
                self.view = default_view(session.dim());
                self.fraction_new = session.stats().fraction_new;
                self.session = session;
                self.last_error = None;
                Ok((json!({ "n": self.session.n_live() }), true))
            }
            ClientMessage::AddPoints { payload } => {
                if payload.is_empty() {
                    return Err((reason::INVALID_VALUE, "no rows".into()));
                }
                let rows = Matrix::from_rows(&payload);
                let ids = self.session.add_points(&rows).map_err(core)?;
                Ok((json!({ "ids": ids }), true))
            }
            ClientMessage::RemovePoints { payload } => {
                self.session.remove_points(&payload).map_err(core)?;
                Ok((Value::Null, true))
            }
            ClientMessage::Snapshot => {
                let snap = self.session.take_snapshot();
                let index = self.snapshots.len();
                let mut data = json!({ "index": index, "iteration": snap.iteration, "alpha": snap.alpha });
                if let Some(dir) = &self.snapshot_dir {
                    let path = dir.join(format!("snapshot_{index:04}_{}.fbin", snap.iteration));
                    save_matrix(&snap.coords, &path).map_err(|e| (reason::UNAVAILABLE, e.to_string()))?;
                    data["path"] = json!(path.display().to_string());
                }
                self.snapshots.push(snap);
                Ok((data, false))
            }
        }
    }

    fn parse_view(&self, value: &Value) -> Result<[usize; 2], (&'static str, String)> {
        let d = self.session.dim();
        let axes: Option<Vec<usize>> = value
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_u64().map(|x| x as usize)).collect());
        match axes.as_deref() {
            Some(&[a, b]) if a != b && a < d && b < d && value.as_array().is_some_and(|v| v.len() == 2) => Ok([a, b]),
            _ => Err((
                reason::INVALID_VALUE,
                format!("view_dims must be two distinct axes below {d}, got {value}"),
            )),
        }
    }
}
