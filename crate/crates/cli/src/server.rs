//! WebSocket streaming server. Each connection gets its own session: a
//! synthesis thread that drains commands at step boundaries, and the socket
//! loop that forwards replies and the newest frame.

use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use crate::protocol::{FrameMessage, Reply};
use crate::session::Session;
use dynca::Player;

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Upper bound on produced frames per second; `None` runs flat out.
    pub max_fps: Option<f64>,
    /// Stop accepting after this many connections.
    pub max_connections: Option<usize>,
}

/// Client input forwarded to the synthesis thread.
enum Inbound {
    Text(String),
    Rejected(String),
}

/// What the socket loop still has to send. Replies keep their order; only
/// the newest frame is kept.
#[derive(Default)]
struct Outbox {
    replies: Vec<Reply>,
    frame: Option<FrameMessage>,
    failed: Option<String>,
}

/// Accepts connections one after another, each starting from `player`.
pub fn serve(listener: TcpListener, player: Player, opts: &ServeOptions) -> io::Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let stream = stream?;
        if let Err(e) = run_session(stream, player.clone(), opts) {
            eprintln!("session ended: {e}");
        }
        served += 1;
        if opts.max_connections.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

/// Serves one connection until the client closes it.
pub fn run_session(stream: TcpStream, player: Player, opts: &ServeOptions) -> Result<(), String> {
    let mut ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_ref()
        .set_read_timeout(Some(Duration::from_millis(2)))
        .map_err(|e| e.to_string())?;
    let outbox = Arc::new(Mutex::new(Outbox::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let worker = {
        let (outbox, stop) = (outbox.clone(), stop.clone());
        let period = opts.max_fps.filter(|f| *f > 0.0).map(|f| Duration::from_secs_f64(1.0 / f));
        thread::spawn(move || synthesis_loop(Session::new(player), rx, outbox, stop, period))
    };
    let result = socket_loop(&mut ws, &tx, &outbox);
    stop.store(true, Ordering::Relaxed);
    drop(tx);
    let _ = worker.join();
    result
}

fn synthesis_loop(
    mut session: Session,
    rx: Receiver<Inbound>,
    outbox: Arc<Mutex<Outbox>>,
    stop: Arc<AtomicBool>,
    period: Option<Duration>,
) {
    while !stop.load(Ordering::Relaxed) {
        let started = Instant::now();
        let mut replies = Vec::new();
        loop {
            match rx.try_recv() {
                Ok(Inbound::Text(t)) => replies.push(session.handle_text(&t)),
                Ok(Inbound::Rejected(why)) => replies.push(Reply::error(None, session.step_index(), why)),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return,
            }
        }
        if !replies.is_empty() {
            // A pending frame predates these commands; drop it so every frame
            // sent after an ack shows the edit.
            let mut out = outbox.lock().unwrap();
            out.replies.extend(replies);
            out.frame = None;
        }
        let frame = session
            .advance()
            .map_err(|e| e.to_string())
            .and_then(|img| FrameMessage::from_image(&img).map_err(|e| e.to_string()));
        let mut out = outbox.lock().unwrap();
        match frame {
            Ok(f) => out.frame = Some(f),
            Err(e) => {
                out.failed = Some(e);
                return;
            }
        }
        drop(out);
        if let Some(p) = period {
            if let Some(rest) = p.checked_sub(started.elapsed()) {
                thread::sleep(rest);
            }
        }
    }
}

fn socket_loop(
    ws: &mut WebSocket<TcpStream>,
    tx: &mpsc::Sender<Inbound>,
    outbox: &Mutex<Outbox>,
) -> Result<(), String> {
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => forward(tx, Inbound::Text(t))?,
            Ok(Message::Binary(_)) => forward(tx, Inbound::Rejected("commands are JSON text records".into()))?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }
        let (replies, frame, failed) = {
            let mut out = outbox.lock().unwrap();
            (std::mem::take(&mut out.replies), out.frame.take(), out.failed.take())
        };
        for r in replies {
            ws.write(Message::Text(r.to_json())).map_err(|e| e.to_string())?;
        }
        if let Some(f) = frame {
            ws.write(Message::Binary(f.encode())).map_err(|e| e.to_string())?;
        }
        match ws.flush() {
            Ok(()) => {}
            Err(tungstenite::Error::Io(e)) if e.kind() == io::ErrorKind::WouldBlock => {}
            Err(e) => return Err(e.to_string()),
        }
        if let Some(e) = failed {
            return Err(e);
        }
    }
}

fn forward(tx: &mpsc::Sender<Inbound>, msg: Inbound) -> Result<(), String> {
    tx.send(msg).map_err(|_| "synthesis stopped".to_string())
}
