use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use dynca::checkpoint::save_checkpoint;
use dynca::controls::LocalTransform;
use dynca::grid::Grid;
use dynca::model::{DyncaConfig, UpdateRule};
use dynca::Player;
use dynca_cli::protocol::{Command, FrameMessage, Reply};
use dynca_cli::server::{serve, ServeOptions};
use dynca_cli::session::Session;
use tungstenite::Message;

fn cfg() -> DyncaConfig {
    DyncaConfig::small().with_frame_interval(4)
}

/// A random rule so steps change the state.
fn live_player() -> Player {
    let c = cfg();
    Player::new(c.clone(), UpdateRule::random(&c, 3, 0.1), 32, 32, 1).unwrap()
}

/// Identity dynamics over a constant state, so only edits change frames.
fn still_player() -> Player {
    let c = cfg();
    let mut p = Player::new(c.clone(), UpdateRule::init(&c, 0), 32, 32, 1).unwrap();
    p.state_mut().grid = Grid::filled(32, 32, 12, 0.8);
    p
}

/// State and controls that a command could touch.
fn snapshot(s: &Session) -> impl PartialEq + std::fmt::Debug {
    (s.player().state().clone(), s.player().controls().clone())
}

#[test]
fn malformed_commands_change_nothing() {
    let mut s = Session::new(live_player());
    s.advance().unwrap();
    let before = snapshot(&s);
    let bad = [
        r#"{"cmd":"explode"}"#,
        "{",
        r#"{"cmd":"set_speed","t":0}"#,
        r#"{"cmd":"set_direction","theta":"left"}"#,
        r#"{"cmd":"brush","x":1,"y":1,"radius":0}"#,
        r#"{"cmd":"set_transform","kind":"map","map":[1,2,3]}"#,
        r#"{"cmd":"set_transform","kind":"map"}"#,
        r#"{"cmd":"set_transform","kind":"none","map":[1]}"#,
        r#"{"cmd":"resize","width":30,"height":7}"#,
        r#"{"cmd":"load_weights","path":"/nonexistent/w.dync"}"#,
    ];
    for text in bad {
        let r = s.handle_text(text);
        assert!(!r.ok, "{text}");
        assert!(r.error.is_some());
        assert_eq!(r.step, 4);
        assert_eq!(snapshot(&s), before, "{text}");
    }
}

#[test]
fn commands_ack_with_the_step() {
    let mut s = Session::new(live_player());
    s.advance().unwrap();
    s.advance().unwrap();
    let r = s.handle(&Command::SetDirection { theta: 0.5 });
    assert_eq!(r, Reply::ack("set_direction", 8));
    assert_eq!(s.player().controls().theta(), 0.5);

    assert!(s.handle(&Command::SetSpeed { t: 2 }).ok);
    s.advance().unwrap();
    assert_eq!(s.step_index(), 10);

    let r = s.handle_text(r#"{"cmd":"set_transform","kind":"circular_from_right"}"#);
    assert!(r.ok);
    assert_eq!(s.player().controls().transform(), &LocalTransform::CircularFromRight);
    let map: Vec<f32> = vec![0.25; 32 * 32];
    assert!(s.handle(&Command::SetTransform { kind: dynca_cli::protocol::TransformKind::Map, map: Some(map) }).ok);

    // A user map pins the size until it is cleared.
    let r = s.handle(&Command::Resize { width: 48, height: 16 });
    assert!(!r.ok);
    assert_eq!(s.player().state().grid.shape(), (32, 32, 12));
    assert!(s.handle_text(r#"{"cmd":"set_transform","kind":"none"}"#).ok);
    let r = s.handle(&Command::Resize { width: 48, height: 16 });
    assert_eq!(r, Reply::ack("resize", 10));
    assert_eq!(s.player().state().grid.shape(), (16, 48, 12));
    assert_eq!(s.step_index(), 0);
}

#[test]
fn brush_erases_at_the_next_boundary() {
    let mut s = Session::new(still_player());
    assert!(s.handle_text(r#"{"cmd":"brush","x":10,"y":20,"radius":3}"#).ok);
    let img = s.advance().unwrap();
    assert_eq!(img.get_pixel(10, 20).0, [128; 3]);
    assert_eq!(img.get_pixel(10, 24).0, [230; 3]);
    assert_eq!(img.get_pixel(14, 20).0, [230; 3]);
}

#[test]
fn load_weights_swaps_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.dync");
    let c = cfg();
    let rule = UpdateRule::<f32>::random(&c, 9, 0.1);
    save_checkpoint(&rule, &c, &path).unwrap();
    let mut s = Session::new(live_player());
    s.advance().unwrap();
    let r = s.handle(&Command::LoadWeights { path });
    assert!(r.ok, "{r:?}");
    assert_eq!(s.player().engine().rule, rule);
    assert_eq!(s.step_index(), 0);
}

type Client = tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>;

fn start(player: Player) -> (Client, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let opts = ServeOptions {
            max_fps: None,
            max_connections: Some(1),
        };
        serve(listener, player, &opts).unwrap();
    });
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    (ws, server)
}

enum Incoming {
    Frame(FrameMessage),
    Reply(Reply),
}

fn next(ws: &mut Client) -> Incoming {
    loop {
        match ws.read().unwrap() {
            Message::Binary(b) => return Incoming::Frame(FrameMessage::decode(&b).unwrap()),
            Message::Text(t) => return Incoming::Reply(Reply::from_json(&t).unwrap()),
            _ => {}
        }
    }
}

fn next_frame(ws: &mut Client) -> FrameMessage {
    loop {
        if let Incoming::Frame(f) = next(ws) {
            return f;
        }
    }
}

/// Reads until the next reply, skipping frames.
fn await_reply(ws: &mut Client) -> Reply {
    let deadline = Instant::now() + Duration::from_secs(30);
    while Instant::now() < deadline {
        if let Incoming::Reply(r) = next(ws) {
            return r;
        }
    }
    panic!("no reply");
}

fn pixel(f: &FrameMessage, x: usize, y: usize) -> [u8; 3] {
    let i = 3 * (y * f.width as usize + x);
    [f.rgb[i], f.rgb[i + 1], f.rgb[i + 2]]
}

#[test]
fn streamed_brush_shows_in_later_frames() {
    let (mut ws, server) = start(still_player());
    let f = next_frame(&mut ws);
    assert_eq!((f.width, f.height, f.rgb.len()), (32, 32, 32 * 32 * 3));
    assert_eq!(pixel(&f, 16, 16), [230; 3]);

    ws.send(Message::Text(r#"{"cmd":"brush","x":16,"y":16,"radius":4}"#.into()))
        .unwrap();
    let r = await_reply(&mut ws);
    assert!(r.ok && r.cmd.as_deref() == Some("brush"), "{r:?}");
    assert_eq!(r.step % 4, 0);
    for _ in 0..3 {
        let f = next_frame(&mut ws);
        assert_eq!(pixel(&f, 16, 16), [128; 3]);
        assert_eq!(pixel(&f, 16, 21), [230; 3]);
    }
    ws.close(None).unwrap();
    while ws.read().is_ok() {}
    server.join().unwrap();
}

#[test]
fn every_command_gets_one_reply_in_order() {
    let (mut ws, server) = start(live_player());
    next_frame(&mut ws);
    let sent = [
        r#"{"cmd":"set_speed","t":1}"#,
        r#"{"cmd":"nope"}"#,
        r#"{"cmd":"set_direction","theta":0.3}"#,
        "garbage",
        r#"{"cmd":"resize","width":16,"height":24}"#,
    ];
    for s in sent {
        ws.send(Message::Text(s.into())).unwrap();
    }
    ws.send(Message::Binary(vec![1, 2, 3])).unwrap();
    let mut replies = Vec::new();
    while replies.len() < sent.len() + 1 {
        match next(&mut ws) {
            Incoming::Reply(r) => replies.push(r),
            Incoming::Frame(_) => {}
        }
    }
    let oks: Vec<bool> = replies.iter().map(|r| r.ok).collect();
    assert_eq!(oks, vec![true, false, true, false, true, false]);
    assert_eq!(replies[1].cmd.as_deref(), Some("nope"));
    assert_eq!(replies[3].cmd, None);
    let steps: Vec<u64> = replies.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1] || w[1] == 0), "{steps:?}");
    // After the resize, frames arrive at the new size.
    let f = next_frame(&mut ws);
    assert_eq!((f.width, f.height), (16, 24));
    ws.close(None).unwrap();
    while ws.read().is_ok() {}
    server.join().unwrap();
}
