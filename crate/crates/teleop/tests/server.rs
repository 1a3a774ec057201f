use std::net::SocketAddr;
use std::time::{Duration, Instant};

use fsd_core::dataset::{Driver, Manifest};
use fsd_core::sim::{straight_line, Command};
use fsd_teleop::{decode_frame, replay, start, ServerMsg, Session, SessionConfig};
use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

fn config(dir: &std::path::Path) -> SessionConfig {
    SessionConfig {
        record_dir: dir.join("rec"),
        ..SessionConfig::default()
    }
}

#[test]
fn idle_session_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(300.0, 4.0).unwrap();
    let mut s = Session::new(&track, config(dir.path())).unwrap();
    let p0 = s.state().position;
    for k in 0..90 {
        s.tick(k * 33).unwrap();
    }
    assert_eq!(s.state().position, p0);
    assert_eq!(s.state().speed, 0.0);
}

#[test]
fn stale_control_falls_back_to_neutral() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(300.0, 4.0).unwrap();
    let mut s = Session::new(&track, config(dir.path())).unwrap();
    s.set_control(Command { y: 0.8, throttle: 1.0, brake: 0.0 }, 0);
    s.tick(500).unwrap();
    assert_eq!(s.state().steering_norm, 0.8);
    s.tick(501).unwrap();
    assert_eq!(s.state().steering_norm, 0.5);
    assert_eq!(s.state().throttle, 0.0);
}

#[test]
fn recording_toggles_share_one_manifest_and_replay_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(400.0, 4.0).unwrap();
    let mut s = Session::new(&track, config(dir.path())).unwrap();
    let mut now = 0;
    let mut drive = |s: &mut Session, ticks: u64, y: f64| {
        for _ in 0..ticks {
            s.set_control(Command { y, throttle: 0.6, brake: 0.0 }, now);
            s.tick(now).unwrap();
            now += 33;
        }
    };
    s.set_recording(true).unwrap();
    drive(&mut s, 30, 0.55);
    s.set_recording(false).unwrap();
    drive(&mut s, 30, 0.45);
    s.set_recording(true).unwrap();
    drive(&mut s, 30, 0.5);
    let m = s.finish().unwrap().unwrap();
    assert_eq!(m.samples.len(), 20);
    let seqs: Vec<u64> = m.samples.iter().map(|x| x.seq).collect();
    assert_eq!(seqs, (0..20).collect::<Vec<_>>());
    assert!(m.samples[10].t - m.samples[9].t > 1.0);
    assert!(m.samples.iter().all(|x| x.driver == Driver::Teleop));

    let poses = replay(dir.path().join("rec")).unwrap();
    assert_eq!(poses.len(), m.samples.len());
    for ((seq, pose), meta) in poses.iter().zip(&m.samples) {
        assert_eq!(*seq, meta.seq);
        assert_eq!(pose, &meta.pose);
    }
}

async fn connect(addr: SocketAddr) -> tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>> {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn next_role<S>(ws: &mut S) -> bool
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            if let Ok(ServerMsg::Role { spectator }) = serde_json::from_str(t.as_str()) {
                return spectator;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn tick_cadence_is_wall_clock_locked() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(300.0, 4.0).unwrap();
    let handle = start(SocketAddr::from(([127, 0, 0, 1], 0)), &track, config(dir.path())).await.unwrap();
    let t0 = Instant::now();
    let k0 = handle.ticks();
    tokio::time::sleep(Duration::from_secs(10)).await;
    let ticks = handle.ticks() - k0;
    let expected = t0.elapsed().as_secs_f64() * 30.0;
    handle.stop().await.unwrap();
    assert!((ticks as f64 - expected).abs() <= 2.0, "{ticks} ticks, expected {expected:.1}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_client_is_a_spectator() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(300.0, 4.0).unwrap();
    let handle = start(SocketAddr::from(([127, 0, 0, 1], 0)), &track, config(dir.path())).await.unwrap();
    let mut a = connect(handle.addr).await;
    assert!(!next_role(&mut a).await);
    let mut b = connect(handle.addr).await;
    assert!(next_role(&mut b).await);
    // Asking to drive while the slot is taken is refused.
    b.send(Message::Text(r#"{"type":"role","spectator":false}"#.into())).await.unwrap();
    assert!(next_role(&mut b).await);
    // Spectator controls are rejected with an error message.
    b.send(Message::Text(r#"{"type":"control","steering":0.9,"throttle":1,"brake":0}"#.into())).await.unwrap();
    loop {
        if let Message::Text(t) = b.next().await.unwrap().unwrap() {
            if let Ok(ServerMsg::Error { .. }) = serde_json::from_str(t.as_str()) {
                break;
            }
        }
    }
    // Once the driver leaves, the slot is free again.
    a.close(None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    b.send(Message::Text(r#"{"type":"role","spectator":false}"#.into())).await.unwrap();
    assert!(!next_role(&mut b).await);
    handle.stop().await.unwrap();
}

/// A scripted client holds the wheel straight with light throttle for 30 s
/// of recording.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_client_records_thirty_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(600.0, 4.0).unwrap();
    let handle = start(SocketAddr::from(([127, 0, 0, 1], 0)), &track, config(dir.path())).await.unwrap();
    let ws = connect(handle.addr).await;
    let (mut tx, mut rx) = ws.split();

    let reader = tokio::spawn(async move {
        let (mut frames, mut states, mut last_seq, mut max_speed) = (0u32, 0u32, None, 0.0f64);
        while let Some(Ok(msg)) = rx.next().await {
            match msg {
                Message::Binary(b) => {
                    let (seq, img) = decode_frame(&b).expect("valid frame");
                    assert_eq!((img.w, img.h), (320, 180));
                    if let Some(prev) = last_seq {
                        assert!(seq > prev);
                    }
                    last_seq = Some(seq);
                    frames += 1;
                }
                Message::Text(t) => {
                    if let Ok(ServerMsg::State(s)) = serde_json::from_str(t.as_str()) {
                        states += 1;
                        max_speed = max_speed.max(s.speed);
                    }
                }
                _ => {}
            }
        }
        (frames, states, max_speed)
    });

    let control = r#"{"type":"control","steering":0.5,"throttle":0.3,"brake":0}"#;
    tx.send(Message::Text(control.into())).await.unwrap();
    tx.send(Message::Text(r#"{"type":"record","on":true}"#.into())).await.unwrap();
    let t0 = Instant::now();
    let mut tick = tokio::time::interval(Duration::from_millis(33));
    while t0.elapsed() < Duration::from_secs(30) {
        tick.tick().await;
        tx.send(Message::Text(control.into())).await.unwrap();
    }
    tx.send(Message::Text(r#"{"type":"record","on":false}"#.into())).await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    let manifest: Manifest = handle.stop().await.unwrap().expect("recording exists");
    let (frames, states, max_speed) = reader.await.unwrap();

    let n = manifest.samples.len() as i64;
    assert!((n - 300).abs() <= 1, "{n} samples");
    assert!(manifest.samples.iter().all(|s| s.y_label == 0.5 && s.driver == Driver::Teleop));
    let speeds: Vec<f32> = manifest.samples.iter().map(|s| s.speed).collect();
    assert!(speeds.last().unwrap() > &speeds[10]);
    assert!(max_speed > 3.0);
    assert!(frames >= 20 * 29, "{frames} frames");
    assert!(states >= 10 * 29, "{states} states");

    let poses = replay(dir.path().join("rec")).unwrap();
    assert_eq!(poses.len(), manifest.samples.len());
    assert!(poses.iter().zip(&manifest.samples).all(|((_, p), m)| *p == m.pose));
}

#[tokio::test]
async fn busy_port_fails_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let track = straight_line(300.0, 4.0).unwrap();
    let first = start(SocketAddr::from(([127, 0, 0, 1], 0)), &track, config(dir.path())).await.unwrap();
    let err = start(first.addr, &track, config(dir.path())).await;
    assert!(matches!(err, Err(fsd_teleop::Error::Bind { .. })));
    first.stop().await.unwrap();
}
