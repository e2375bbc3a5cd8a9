use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use crate::brush::TextureBank;
use crate::error::Result;

use super::{ProtocolHandler, ServerMessage, Session, SessionConfig};

/// How often an idle connection checks for finished background jobs.
pub const POLL_INTERVAL: Duration = Duration::from_millis(50);

fn send(writer: &mut TcpStream, msgs: &[ServerMessage]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for m in msgs {
        serde_json::to_writer(&mut buf, m)?;
        buf.push(b'\n');
    }
    writer.write_all(&buf)?;
    writer.flush()
}

/// Serve one client: one JSON message per line in, replies as lines out.
/// Job results are pushed while the client is idle.
pub fn handle_connection(stream: TcpStream, session: Session) -> std::io::Result<()> {
    stream.set_read_timeout(Some(POLL_INTERVAL))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut handler = ProtocolHandler::new(session);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                let text = line.trim();
                if !text.is_empty() {
                    let out = handler.handle_line(text);
                    send(&mut writer, &out)?;
                }
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                let out = handler.poll();
                if !out.is_empty() {
                    send(&mut writer, &out)?;
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Accept connections forever, each with its own blank session.
pub fn serve(
    listener: TcpListener,
    width: usize,
    height: usize,
    cfg: SessionConfig,
    textures: Arc<TextureBank>,
) -> Result<()> {
    Session::with_textures(width, height, cfg.clone(), textures.clone())?;
    for stream in listener.incoming() {
        let stream = stream?;
        let session = Session::with_textures(width, height, cfg.clone(), textures.clone())?;
        std::thread::spawn(move || {
            if let Err(e) = handle_connection(stream, session) {
                log::warn!("connection closed: {e}");
            }
        });
    }
    Ok(())
}
