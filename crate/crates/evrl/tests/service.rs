use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;

use evrl::service::{offline_actions, replay, Client, ClientMessage, Server, ServerMessage, Session, WindowBucketer};
use evrl_core::event::{Event, Polarity};
use evrl_core::qnet::{NetworkConfig, QNetwork};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: u16 = 16;
const H: u16 = 12;
const DT: u64 = 10_000;

fn network(seed: u64) -> QNetwork<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QNetwork::new(NetworkConfig::new(W as usize, H as usize, 3), &mut rng).unwrap()
}

fn hello(t0_us: Option<u64>) -> String {
    serde_json::to_string(&ClientMessage::Hello {
        width: W,
        height: H,
        dt_us: DT,
        t0_us,
    })
    .unwrap()
}

fn actions(messages: &[ServerMessage]) -> Vec<(u64, usize)> {
    messages
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Action { step, action, .. } => Some((*step, *action)),
            _ => None,
        })
        .collect()
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<Event> {
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            let p = if rng.gen() { Polarity::On } else { Polarity::Off };
            Event::new(rng.gen_range(0..span), rng.gen_range(0..W), rng.gen_range(0..H), p)
        })
        .collect();
    events.sort_by_key(|e| e.t);
    events
}

struct Running {
    addr: std::net::SocketAddr,
    stop: Arc<std::sync::atomic::AtomicBool>,
    handle: thread::JoinHandle<Vec<u8>>,
}

fn start(network: QNetwork<f32>) -> Running {
    let server = Server::bind("127.0.0.1:0", network, DT).unwrap();
    let addr = server.local_addr().unwrap();
    let stop = server.shutdown_flag();
    let handle = thread::spawn(move || {
        let mut log = Vec::new();
        server.run(Some(&mut log)).unwrap();
        log
    });
    Running { addr, stop, handle }
}

impl Running {
    fn stop(self) -> Vec<u8> {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.join().unwrap()
    }
}

#[test]
fn first_action_on_crossing_window_boundary() {
    let mut b = WindowBucketer::new(W as usize, H as usize, DT, None);
    assert!(b.push(&[Event::new(500, 3, 4, Polarity::On)]).unwrap().is_empty());
    let closed = b.push(&[Event::new(10_500, 5, 6, Polarity::Off)]).unwrap();
    assert_eq!(closed.len(), 1);
    let (step, frame) = &closed[0];
    assert_eq!(*step, 0);
    assert_eq!(frame.count_nonzero(), 1);
    assert_eq!(frame.get(3, 4), 1);

    let mut s = Session::new(Arc::new(network(0)), DT);
    s.handle_line(&hello(None));
    let r = s.handle_line(r#"{"type":"events","events":[[500,3,4,1]]}"#);
    assert!(r.messages.is_empty());
    let r = s.handle_line(r#"{"type":"events","events":[[10500,5,6,-1]]}"#);
    assert_eq!(actions(&r.messages).len(), 1);
    assert_eq!(actions(&r.messages)[0].0, 0);
}

#[test]
fn flush_over_three_empty_windows() {
    let mut s = Session::new(Arc::new(network(1)), DT);
    s.handle_line(&hello(Some(0)));
    let r = s.handle_line(r#"{"type":"flush","until_us":30000}"#);
    let a = actions(&r.messages);
    assert_eq!(a.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(a.iter().all(|x| x.1 == a[0].1));
    assert!(!r.close);
}

#[test]
fn gaps_emit_empty_windows_in_order() {
    let mut s = Session::new(Arc::new(network(2)), DT);
    s.handle_line(&hello(None));
    s.handle_line(r#"{"type":"events","events":[[100,0,0,1]]}"#);
    let r = s.handle_line(r#"{"type":"events","events":[[40100,0,0,1]]}"#);
    assert_eq!(actions(&r.messages).iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn hello_then_flush_gives_ready_and_no_actions() {
    let net = network(3);
    let running = start(net);
    let mut c = Client::connect(running.addr).unwrap();
    c.send_raw(&hello(None)).unwrap();
    c.send(&ClientMessage::Flush { until_us: None }).unwrap();
    c.finish().unwrap();
    let msgs = c.drain().unwrap();
    assert_eq!(msgs, vec![ServerMessage::Ready { action_count: 3 }]);
    running.stop();
}

#[test]
fn sequential_sessions_are_independent_and_match_offline() {
    let net = network(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let events = random_stream(&mut rng, 3000, 20 * DT);
    let expected = offline_actions(&net, &events, 0, DT, 20).unwrap();
    let running = start(net);
    let first = replay(running.addr, W, H, DT, 0, &events, 20, 97).unwrap();
    let second = replay(running.addr, W, H, DT, 0, &events, 20, 13).unwrap();
    let log = running.stop();
    assert_eq!(first[0], ServerMessage::Ready { action_count: 3 });
    let a1 = actions(&first);
    assert_eq!(a1, actions(&second));
    assert_eq!(a1.iter().map(|x| x.0).collect::<Vec<_>>(), (0..20).collect::<Vec<_>>());
    assert_eq!(a1.iter().map(|x| x.1).collect::<Vec<_>>(), expected);
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().all(|l| l["latency_us"].is_u64()));
}

#[test]
fn malformed_line_closes_connection() {
    let running = start(network(6));
    let mut c = Client::connect(running.addr).unwrap();
    c.send_raw(&hello(None)).unwrap();
    c.send_raw("{not json").unwrap();
    let msgs = c.drain().unwrap();
    assert_eq!(msgs.len(), 2);
    assert!(matches!(msgs[1], ServerMessage::Error { .. }));
    running.stop();
}

#[test]
fn late_events_are_rejected_but_session_continues() {
    let running = start(network(7));
    let mut c = Client::connect(running.addr).unwrap();
    c.send_raw(&hello(Some(20_000))).unwrap();
    c.send_raw(r#"{"type":"events","events":[[100,0,0,1]]}"#).unwrap();
    c.send_raw(r#"{"type":"events","events":[[20100,0,0,1],[30100,1,1,-1]]}"#).unwrap();
    c.finish().unwrap();
    let msgs = c.drain().unwrap();
    assert!(matches!(msgs[0], ServerMessage::Ready { .. }));
    match &msgs[1] {
        ServerMessage::Error { message } => assert!(message.contains("precedes"), "{message}"),
        m => panic!("expected error, got {m:?}"),
    }
    assert_eq!(actions(&msgs[2..]).iter().map(|x| x.0).collect::<Vec<_>>(), vec![0]);
    running.stop();
}

#[test]
fn protocol_violations_are_fatal() {
    for first in [
        r#"{"type":"flush"}"#.to_string(),
        serde_json::to_string(&ClientMessage::Hello {
            width: 240,
            height: 180,
            dt_us: DT,
            t0_us: None,
        })
        .unwrap(),
        serde_json::to_string(&ClientMessage::Hello {
            width: W,
            height: H,
            dt_us: DT + 1,
            t0_us: None,
        })
        .unwrap(),
    ] {
        let mut s = Session::new(Arc::new(network(8)), DT);
        let r = s.handle_line(&first);
        assert!(r.close, "{first}");
        assert!(matches!(r.messages[..], [ServerMessage::Error { .. }]));
    }
    let mut s = Session::new(Arc::new(network(8)), DT);
    assert!(!s.handle_line(&hello(None)).close);
    assert!(s.handle_line(&hello(None)).close);
}

#[test]
fn bad_events_keep_session_open() {
    let mut s = Session::new(Arc::new(network(9)), DT);
    s.handle_line(&hello(None));
    for line in [
        r#"{"type":"events","events":[[10,99,0,1]]}"#,
        r#"{"type":"events","events":[[10,0,0,2]]}"#,
        r#"{"type":"events","events":[[20,0,0,1],[10,0,0,1]]}"#,
    ] {
        let r = s.handle_line(line);
        assert!(!r.close, "{line}");
        assert!(matches!(r.messages[..], [ServerMessage::Error { .. }]), "{line}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn message_split_does_not_change_actions(seed in any::<u64>(), n in 0usize..400, cuts in prop::collection::vec(0usize..400, 0..8)) {
        let net = Arc::new(network(10));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let events = random_stream(&mut rng, n, 8 * DT);
        let expected = offline_actions(&net, &events, 0, DT, 8).unwrap();
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c.min(n)).collect();
        bounds.push(0);
        bounds.push(n);
        bounds.sort_unstable();
        let mut s = Session::new(net, DT);
        s.handle_line(&hello(Some(0)));
        let mut got = Vec::new();
        for w in bounds.windows(2) {
            let chunk: Vec<(u64, u16, u16, i8)> = events[w[0]..w[1]].iter().map(|e| (e.t, e.x, e.y, e.polarity.as_i8())).collect();
            let line = serde_json::to_string(&ClientMessage::Events { events: chunk }).unwrap();
            got.extend(actions(&s.handle_line(&line).messages));
        }
        got.extend(actions(&s.handle_line(r#"{"type":"flush","until_us":80000}"#).messages));
        prop_assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        prop_assert_eq!(got.iter().map(|x| x.1).collect::<Vec<_>>(), expected);
    }
}
