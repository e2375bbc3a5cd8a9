use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

use copaint::brush::TextureBank;
use copaint::io::{export_image, PngDepth};
use copaint::session::{serve, ClientMessage, HistoryEventKind, RefineStatus, ServerMessage, SessionConfig};
use copaint::stroke::{StrokeRecord, TabletSample};
use copaint::Canvas;

struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        Client {
            writer: stream.try_clone().unwrap(),
            reader: BufReader::new(stream),
        }
    }

    fn send(&mut self, msg: &ClientMessage) {
        let mut line = serde_json::to_vec(msg).unwrap();
        line.push(b'\n');
        self.writer.write_all(&line).unwrap();
    }

    fn recv(&mut self) -> ServerMessage {
        let mut l = String::new();
        self.reader.read_line(&mut l).unwrap();
        serde_json::from_str(&l).unwrap()
    }

    /// Read until `pred` matches, returning everything seen.
    fn until(&mut self, pred: impl Fn(&ServerMessage) -> bool) -> Vec<ServerMessage> {
        let deadline = Instant::now() + Duration::from_secs(30);
        let mut seen = Vec::new();
        while Instant::now() < deadline {
            let m = self.recv();
            let done = pred(&m);
            seen.push(m);
            if done {
                return seen;
            }
        }
        panic!("timed out; saw {seen:?}");
    }
}

fn start() -> std::net::SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let mut cfg = SessionConfig::default();
    cfg.optim.iterations = 8;
    std::thread::spawn(move || serve(listener, 24, 24, cfg, Arc::new(TextureBank::new())));
    addr
}

fn stroke() -> StrokeRecord {
    StrokeRecord {
        tool: copaint::brush::BrushMode::HardRound,
        base_size: 3.0,
        color: [0.2, 0.3, 0.8],
        smoothing: true,
        samples: vec![TabletSample::new(4.0, 6.0, 0.7, 0.0), TabletSample::new(14.0, 9.0, 0.8, 12.0)],
    }
}

#[test]
fn refine_result_is_pushed_without_polling() {
    let addr = start();
    let mut c = Client::connect(addr);
    let mut reference = Canvas::new(24, 24, [1.0; 3]);
    for y in 3..12 {
        for x in 2..18 {
            reference.set_pixel(x, y, [0.8, 0.3, 0.2]);
        }
    }
    c.send(&ClientMessage::Upload {
        image_id: "ref".into(),
        png: BASE64.encode(export_image(&reference, PngDepth::Sixteen).unwrap()),
    });
    c.send(&ClientMessage::SetReference { image_id: "ref".into() });
    c.send(&ClientMessage::Stroke { stroke: stroke() });
    let id = match c.until(|m| matches!(m, ServerMessage::HistoryEvent { .. })).pop().unwrap() {
        ServerMessage::HistoryEvent { ids, .. } => ids[0],
        _ => unreachable!(),
    };
    c.send(&ClientMessage::Refine { stroke_id: id });
    let seen = c.until(|m| matches!(m, ServerMessage::JobStatus { status, .. } if *status != RefineStatus::Pending));
    assert!(seen
        .iter()
        .any(|m| matches!(m, ServerMessage::JobStatus { status: RefineStatus::Pending, stroke_id, .. } if *stroke_id == id)));
    match seen.last().unwrap() {
        ServerMessage::JobStatus { status, .. } => assert_eq!(*status, RefineStatus::Done),
        _ => unreachable!(),
    }
    assert!(seen.iter().any(
        |m| matches!(m, ServerMessage::HistoryEvent { kind: HistoryEventKind::Replace, ids, .. } if ids == &vec![id])
    ));
}

#[test]
fn connections_get_independent_sessions() {
    let addr = start();
    let mut a = Client::connect(addr);
    let mut b = Client::connect(addr);
    a.send(&ClientMessage::Stroke { stroke: stroke() });
    a.until(|m| matches!(m, ServerMessage::CanvasPatch { .. }));
    b.send(&ClientMessage::Undo);
    match b.recv() {
        ServerMessage::HistoryEvent { kind, history_len, .. } => {
            assert_eq!((kind, history_len), (HistoryEventKind::Noop, 0))
        }
        other => panic!("{other:?}"),
    }
    b.send(&ClientMessage::SetReference { image_id: "missing".into() });
    match b.recv() {
        ServerMessage::Error { code, .. } => assert_eq!(code, copaint::session::ErrorCode::UnknownImage),
        other => panic!("{other:?}"),
    }
}
