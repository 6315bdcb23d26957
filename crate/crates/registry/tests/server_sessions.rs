mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use common::report;
use roadscan_registry::protocol::Message;
use roadscan_registry::state::load_events;
use roadscan_registry::{Client, ClientError, RegistryState, Server, ServerConfig, ServerHandle, UpdateAction};

fn start(cfg: ServerConfig) -> (ServerHandle, thread::JoinHandle<Result<(), roadscan_registry::ServerError>>) {
    Server::bind(&ServerConfig { endpoint: "127.0.0.1:0".into(), ..cfg }).unwrap().spawn()
}

const SHORT: Duration = Duration::from_millis(300);

#[test]
fn empty_query() {
    let (h, j) = start(ServerConfig::default());
    let mut c = Client::connect(h.addr(), "solo").unwrap();
    assert!(c.query([0.0, 0.0], 10.0).unwrap().is_empty());
    c.close().unwrap();
    h.shutdown();
    j.join().unwrap().unwrap();
}

#[test]
fn nearby_agent_gets_one_alert() {
    let (h, j) = start(ServerConfig::default());
    let mut a = Client::connect(h.addr(), "a").unwrap();
    let mut b = Client::connect(h.addr(), "b").unwrap();
    let mut far = Client::connect(h.addr(), "far").unwrap();
    b.query([40.0, 0.0], 1.0).unwrap();
    far.query([4000.0, 0.0], 1.0).unwrap();
    let (id, action) = a.report(&report("a", 0.0, 0.0, 1.0, 1.0)).unwrap();
    assert_eq!((id, action), (1, UpdateAction::Created));
    let alert = b.wait_alert(Duration::from_secs(5)).unwrap();
    assert_eq!((alert.id, alert.revision), (1, 0));
    assert!(b.wait_alert(SHORT).is_none());
    assert!(far.wait_alert(SHORT).is_none());
    assert!(a.wait_alert(SHORT).is_none());

    // kept reports do not alert; replacements do
    a.report(&report("a", 0.0, 0.0, 1.0, 1.0)).unwrap();
    assert!(b.wait_alert(SHORT).is_none());
    a.report(&report("a", 0.0, 0.0, 1.3, 1.0)).unwrap();
    assert_eq!(b.wait_alert(Duration::from_secs(5)).unwrap().revision, 1);

    // moving into range delivers what the agent has not seen, before the query answer
    far.send(&Message::Query { position: [10.0, 0.0], radius: 1.0 }).unwrap();
    let alert = far.wait_alert(Duration::from_secs(5)).unwrap();
    assert_eq!((alert.id, alert.revision), (1, 1));
    assert_eq!(far.next_response().unwrap(), Message::Records(0));
    h.shutdown();
    j.join().unwrap().unwrap();
}

#[test]
fn concurrent_agents_serialize() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.log");
    let (h, j) = start(ServerConfig { log_path: Some(log.clone()), ..ServerConfig::default() });
    let addr = h.addr();
    let workers: Vec<_> = (0..10)
        .map(|i| {
            thread::spawn(move || {
                let name = format!("agent{i}");
                let mut c = Client::connect(addr, &name).unwrap();
                let r = c.report(&report(&name, i as f64 * 100.0, 0.0, 1.0, 1.0)).unwrap();
                assert_eq!(r.1, UpdateAction::Created);
                c.close().unwrap();
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    let snap = h.snapshot();
    assert_eq!(snap.len(), 10);
    assert_eq!(snap.events().len(), 10);
    h.shutdown();
    j.join().unwrap().unwrap();

    let events = load_events(&log).unwrap();
    assert_eq!(events.len(), 10);
    let rebuilt = RegistryState::replay(*snap.config(), &events).unwrap();
    assert_eq!(rebuilt, snap);

    // a restarted server resumes from the log
    let (h, j) = start(ServerConfig { log_path: Some(log.clone()), ..ServerConfig::default() });
    let mut c = Client::connect(h.addr(), "late").unwrap();
    assert_eq!(c.query([0.0, 0.0], 1e6).unwrap().len(), 10);
    assert_eq!(c.report(&report("late", 2000.0, 0.0, 1.0, 1.0)).unwrap(), (11, UpdateAction::Created));
    h.shutdown();
    j.join().unwrap().unwrap();
    assert_eq!(load_events(&log).unwrap().len(), 11);
}

#[test]
fn invalid_report_keeps_session_open() {
    let (h, j) = start(ServerConfig::default());
    let mut c = Client::connect(h.addr(), "a").unwrap();
    let err = c.report(&common::absent("a", 0.0, 0.0)).unwrap_err();
    assert!(matches!(err, ClientError::Rejected(_)));
    let err = c.report(&report("someone-else", 0.0, 0.0, 1.0, 1.0)).unwrap_err();
    assert!(matches!(err, ClientError::Rejected(_)));
    assert!(matches!(c.query([0.0, 0.0], -1.0), Err(ClientError::Rejected(_))));
    assert_eq!(c.report(&report("a", 0.0, 0.0, 1.0, 1.0)).unwrap().1, UpdateAction::Created);
    assert!(h.snapshot().len() == 1);
    h.shutdown();
    j.join().unwrap().unwrap();
}

fn raw_session(addr: std::net::SocketAddr, lines: &[&str]) -> Vec<String> {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    for l in lines {
        writeln!(s, "{l}").unwrap();
    }
    BufReader::new(s).lines().map_while(Result::ok).collect()
}

#[test]
fn protocol_violations_close_the_session() {
    let (h, j) = start(ServerConfig::default());
    let got = raw_session(h.addr(), &["HELLO 1 raw", "GIMME 3", "QUERY 0 0 5"]);
    assert_eq!(got.len(), 2, "{got:?}");
    assert_eq!(got[0], "HELLO 1");
    assert!(got[1].starts_with("ERR "));

    let got = raw_session(h.addr(), &["QUERY 0 0 5"]);
    assert_eq!(got.len(), 1);
    assert!(got[0].starts_with("ERR "));

    let got = raw_session(h.addr(), &["HELLO 2 raw"]);
    assert!(got[0].starts_with("ERR unsupported protocol version"));

    let got = raw_session(h.addr(), &["HELLO 1 raw", "REPORT raw 1 2", "QUERY 0 0 5"]);
    assert_eq!(got.len(), 2);
    assert!(got[1].starts_with("ERR REPORT takes"));

    let got = raw_session(h.addr(), &["HELLO 1 raw", "ALERT 1 0 0 negative 0 0 0 1 1 1 0"]);
    assert!(got[1].starts_with("ERR agents may not send ALERT"));
    h.shutdown();
    j.join().unwrap().unwrap();
}

#[test]
fn alerts_respect_radius_at_delivery() {
    let cfg = ServerConfig { registry: roadscan_registry::RegistryConfig { alert_radius: 50.0, match_radius: 3.0 }, ..ServerConfig::default() };
    let (h, j) = start(cfg);
    let mut reporter = Client::connect(h.addr(), "r").unwrap();
    let mut watchers: Vec<Client> = (0..5).map(|i| Client::connect(h.addr(), &format!("w{i}")).unwrap()).collect();
    for (i, w) in watchers.iter_mut().enumerate() {
        w.query([i as f64 * 20.0, 0.0], 1.0).unwrap();
    }
    for k in 0..4 {
        reporter.report(&report("r", k as f64 * 30.0, 5.0, 1.0, 1.0)).unwrap();
    }
    let snap = h.snapshot();
    for (i, w) in watchers.iter_mut().enumerate() {
        thread::sleep(Duration::from_millis(50));
        let me = [i as f64 * 20.0, 0.0];
        for a in w.drain_alerts() {
            let rec = snap.get(a.id).unwrap();
            assert!((rec.position[0] - me[0]).hypot(rec.position[1] - me[1]) <= 50.0);
        }
    }
    h.shutdown();
    j.join().unwrap().unwrap();
}

#[test]
fn bind_failure_is_reported() {
    let (h, j) = start(ServerConfig::default());
    let taken = ServerConfig { endpoint: h.addr().to_string(), ..ServerConfig::default() };
    assert!(matches!(Server::bind(&taken), Err(roadscan_registry::ServerError::Bind { .. })));
    h.shutdown();
    j.join().unwrap().unwrap();
}

#[test]
fn shutdown_disconnects_clients() {
    let (h, j) = start(ServerConfig::default());
    let mut c = Client::connect(h.addr(), "a").unwrap();
    c.set_timeout(Duration::from_secs(5));
    h.shutdown();
    j.join().unwrap().unwrap();
    assert!(c.query([0.0, 0.0], 1.0).is_err());
}
