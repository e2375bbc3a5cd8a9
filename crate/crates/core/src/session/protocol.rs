//! Newline-delimited JSON messages between the painting client and a session.

use std::collections::HashMap;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::canvas::{Canvas, Rect};
use crate::error::{Error, Result};
use crate::io::{export_tile, import_image};
use crate::stroke::StrokeRecord;

use super::{CompletionOutcome, RefineStatus, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Stroke {
        stroke: StrokeRecord,
    },
    /// Set the lasso polygon, or clear it with `null`.
    Lasso {
        #[serde(default)]
        polygon: Option<Vec<[f64; 2]>>,
    },
    /// Store a base64 PNG under `image_id` for later `set_reference`.
    Upload {
        image_id: String,
        png: String,
    },
    SetReference {
        image_id: String,
    },
    OptimizeHistory,
    CompleteStep {
        count: usize,
    },
    Inpaint {
        label: u32,
        seed: u64,
    },
    Refine {
        stroke_id: u64,
    },
    Undo,
    Redo,
    /// Report finished background jobs.
    Poll,
    /// Resend the whole canvas as one patch.
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryEventKind {
    /// `ids` were appended.
    Commit,
    /// `ids` had their stamps replaced.
    Replace,
    Undo,
    Redo,
    /// Completion found nothing left to paint.
    Complete,
    /// Completion found no stamp that lowers the loss.
    Stalled,
    /// Undo or redo with an empty stack.
    Noop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    InvalidStroke,
    EmptyHistory,
    NoIntent,
    EmptyMask,
    UnknownId,
    UnknownImage,
    Image,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// 8-bit sRGB PNG of the changed rectangle, base64-encoded. `seq`
    /// increases by one per patch.
    CanvasPatch {
        seq: u64,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        png: String,
    },
    HistoryEvent {
        kind: HistoryEventKind,
        ids: Vec<u64>,
        history_len: usize,
    },
    JobStatus {
        job_id: u64,
        stroke_id: u64,
        status: RefineStatus,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

fn error_code(e: &Error) -> ErrorCode {
    match e {
        Error::EmptyStroke | Error::InvalidParameter { .. } | Error::MissingTexture(_) => ErrorCode::InvalidStroke,
        Error::EmptyHistory => ErrorCode::EmptyHistory,
        Error::NoIntent => ErrorCode::NoIntent,
        Error::EmptyMask => ErrorCode::EmptyMask,
        Error::UnknownEntry(_) => ErrorCode::UnknownId,
        Error::Image(_) => ErrorCode::Image,
        Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::Schema { .. } => ErrorCode::BadRequest,
        _ => ErrorCode::Internal,
    }
}

/// Applies client messages to one session and produces the replies,
/// including canvas patches for whatever changed since the last reply.
pub struct ProtocolHandler {
    session: Session,
    images: HashMap<String, Canvas>,
    seq: u64,
    shown: Canvas,
}

impl ProtocolHandler {
    pub fn new(session: Session) -> Self {
        let shown = session.canvas().clone();
        ProtocolHandler {
            session,
            images: HashMap::new(),
            seq: 0,
            shown,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    /// Parse and handle one line. Malformed input yields a `bad_request`
    /// error and leaves the session untouched.
    pub fn handle_line(&mut self, line: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::Error {
                code: ErrorCode::BadRequest,
                message: e.to_string(),
            }],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let full = matches!(msg, ClientMessage::Snapshot);
        if let Err(e) = self.dispatch(msg, &mut out) {
            out.push(ServerMessage::Error {
                code: error_code(&e),
                message: e.to_string(),
            });
        }
        self.collect_jobs(&mut out);
        self.push_patch(full, &mut out);
        out
    }

    /// Job updates and canvas patches produced by background work.
    pub fn poll(&mut self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        self.collect_jobs(&mut out);
        self.push_patch(false, &mut out);
        out
    }

    fn event(&self, kind: HistoryEventKind, ids: Vec<u64>) -> ServerMessage {
        ServerMessage::HistoryEvent {
            kind,
            ids,
            history_len: self.session.history_len(),
        }
    }

    fn dispatch(&mut self, msg: ClientMessage, out: &mut Vec<ServerMessage>) -> Result<()> {
        match msg {
            ClientMessage::Stroke { stroke } => {
                let id = self.session.apply_user_stroke(stroke)?;
                out.push(self.event(HistoryEventKind::Commit, vec![id]));
            }
            ClientMessage::Lasso { polygon } => self.session.set_lasso_polygon(polygon.as_deref())?,
            ClientMessage::Upload { image_id, png } => {
                let bytes = BASE64
                    .decode(png.as_bytes())
                    .map_err(|e| Error::Image(format!("invalid base64: {e}")))?;
                self.images.insert(image_id, import_image(&bytes)?);
            }
            ClientMessage::SetReference { image_id } => match self.images.get(&image_id) {
                Some(img) => self.session.set_reference(img.clone())?,
                None => out.push(ServerMessage::Error {
                    code: ErrorCode::UnknownImage,
                    message: format!("no uploaded image `{image_id}`"),
                }),
            },
            ClientMessage::OptimizeHistory => {
                let ids: Vec<u64> = self.session.history().map(|e| e.id).collect();
                let result = self.session.optimize_history()?;
                let ids = if result.accepted { ids } else { Vec::new() };
                out.push(self.event(HistoryEventKind::Replace, ids));
            }
            ClientMessage::CompleteStep { count } => {
                let mut ids = Vec::new();
                let mut last = None;
                for _ in 0..count {
                    match self.session.stroke_completion_step() {
                        Ok(CompletionOutcome::Committed { id, .. }) => ids.push(id),
                        Ok(CompletionOutcome::Complete) => {
                            last = Some(HistoryEventKind::Complete);
                            break;
                        }
                        Ok(CompletionOutcome::Stalled) => {
                            last = Some(HistoryEventKind::Stalled);
                            break;
                        }
                        Err(e) => {
                            if !ids.is_empty() {
                                out.push(self.event(HistoryEventKind::Commit, ids));
                            }
                            return Err(e);
                        }
                    }
                }
                if !ids.is_empty() {
                    out.push(self.event(HistoryEventKind::Commit, ids));
                }
                if let Some(kind) = last {
                    out.push(self.event(kind, Vec::new()));
                }
            }
            ClientMessage::Inpaint { label, seed } => {
                let mask = self.session.lasso().cloned().ok_or(Error::EmptyMask)?;
                let result = self.session.region_inpaint(&mask, label, seed)?;
                out.push(self.event(HistoryEventKind::Commit, result.id.into_iter().collect()));
            }
            ClientMessage::Refine { stroke_id } => {
                let job_id = self.session.dynamic_brush_refine(stroke_id)?;
                out.push(ServerMessage::JobStatus {
                    job_id,
                    stroke_id,
                    status: RefineStatus::Pending,
                });
            }
            ClientMessage::Undo => {
                let kind = if self.session.undo()? { HistoryEventKind::Undo } else { HistoryEventKind::Noop };
                out.push(self.event(kind, Vec::new()));
            }
            ClientMessage::Redo => {
                let kind = if self.session.redo()? { HistoryEventKind::Redo } else { HistoryEventKind::Noop };
                out.push(self.event(kind, Vec::new()));
            }
            ClientMessage::Poll | ClientMessage::Snapshot => {}
        }
        Ok(())
    }

    fn collect_jobs(&mut self, out: &mut Vec<ServerMessage>) {
        match self.session.poll_jobs() {
            Ok(events) => {
                for ev in events {
                    if ev.status == RefineStatus::Done {
                        out.push(self.event(HistoryEventKind::Replace, vec![ev.stroke_id]));
                    }
                    out.push(ServerMessage::JobStatus {
                        job_id: ev.job_id,
                        stroke_id: ev.stroke_id,
                        status: ev.status,
                    });
                }
            }
            Err(e) => out.push(ServerMessage::Error {
                code: error_code(&e),
                message: e.to_string(),
            }),
        }
    }

    fn push_patch(&mut self, full: bool, out: &mut Vec<ServerMessage>) {
        let canvas = self.session.canvas();
        let rect = if full {
            Some(canvas.bounds())
        } else {
            self.shown.diff_bounds(canvas)
        };
        let Some(rect) = rect else {
            return;
        };
        match tile(canvas, rect) {
            Ok(png) => {
                self.seq += 1;
                out.push(ServerMessage::CanvasPatch {
                    seq: self.seq,
                    x: rect.x as usize,
                    y: rect.y as usize,
                    w: rect.w,
                    h: rect.h,
                    png,
                });
                self.shown = canvas.clone();
            }
            Err(e) => out.push(ServerMessage::Error {
                code: error_code(&e),
                message: e.to_string(),
            }),
        }
    }
}

fn tile(canvas: &Canvas, rect: Rect) -> Result<String> {
    Ok(BASE64.encode(export_tile(canvas, rect)?))
}

/// Decode a `canvas_patch` payload back into linear RGB.
pub fn decode_patch(png: &str) -> Result<Canvas> {
    let bytes = BASE64
        .decode(png.as_bytes())
        .map_err(|e| Error::Image(format!("invalid base64: {e}")))?;
    import_image(&bytes)
}
