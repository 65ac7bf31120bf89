use std::io::{Read, Write};
use std::net::{SocketAddrV4, TcpListener, UdpSocket};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chokepoint_core::dnsmap::{probe_resolver, probe_resolvers, write_probe_results, DnsProbeConfig, ResolverClass};
use chokepoint_core::probe::{probe_corpus, probe_url, read_corpus, ProbeConfig, UrlClass};
use url::Url;

/// Serves canned responses keyed by request path until the test exits.
fn http_stub() -> u16 {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut s) = stream else { continue };
            thread::spawn(move || {
                let mut buf = Vec::new();
                let mut chunk = [0u8; 1024];
                while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
                    match s.read(&mut chunk) {
                        Ok(0) | Err(_) => return,
                        Ok(n) => buf.extend_from_slice(&chunk[..n]),
                    }
                }
                let req = String::from_utf8_lossy(&buf);
                let path = req.split_whitespace().nth(1).unwrap_or("/").to_string();
                let (status, headers, body) = match path.as_str() {
                    "/blocked" => ("200 OK", "", "<iframe>This URL has been Blocked as per the directions of the authority</iframe>"),
                    "/hdr" => ("200 OK", "X-Filter: blocked as per the directions\r\n", "ok"),
                    "/down" => ("503 Service Unavailable", "", "down"),
                    "/missing" => ("404 Not Found", "", "nope"),
                    "/to-blocked" => ("302 Found", "Location: /blocked\r\n", ""),
                    "/loop" => ("302 Found", "Location: /loop\r\n", ""),
                    "/slow" => {
                        thread::sleep(Duration::from_millis(1500));
                        ("200 OK", "", "late")
                    }
                    _ => ("200 OK", "", "<html>hello</html>"),
                };
                let resp = format!(
                    "HTTP/1.1 {status}\r\n{headers}Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = s.write_all(resp.as_bytes());
            });
        }
    });
    port
}

fn closed_tcp_port() -> u16 {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

fn cfg() -> ProbeConfig {
    ProbeConfig {
        timeout: Duration::from_millis(600),
        rate_per_sec: 0.0,
        ..Default::default()
    }
}

#[test]
fn http_three_classes() {
    let port = http_stub();
    let url = |p: &str| Url::parse(&format!("http://127.0.0.1:{port}{p}")).unwrap();
    let class = |p: &str| probe_url(&url(p), &cfg()).unwrap();
    assert_eq!(class("/blocked").class, UrlClass::Censored);
    assert_eq!(class("/hdr").class, UrlClass::Censored);
    assert_eq!(class("/to-blocked").class, UrlClass::Censored);
    assert_eq!(class("/plain").class, UrlClass::Open);
    let looped = class("/loop");
    assert_eq!((looped.class, looped.status), (UrlClass::Open, Some(302)));
    let down = class("/down");
    assert_eq!((down.class, down.reason.as_deref()), (UrlClass::Inaccessible, Some("http_5xx")));
    assert_eq!(class("/missing").class, UrlClass::Inaccessible);
    let slow = class("/slow");
    assert_eq!((slow.class, slow.reason.as_deref()), (UrlClass::Inaccessible, Some("timeout")));

    let refused = Url::parse(&format!("http://127.0.0.1:{}/", closed_tcp_port())).unwrap();
    let r = probe_url(
        &refused,
        &ProbeConfig {
            retries: 2,
            ..cfg()
        },
    )
    .unwrap();
    assert_eq!((r.class, r.reason.as_deref(), r.attempts), (UrlClass::Inaccessible, Some("connect"), 3));
}

#[test]
fn corpus_summary_sums_to_category_sizes() {
    let port = http_stub();
    let dead = closed_tcp_port();
    let text = format!(
        "news|http://127.0.0.1:{port}/blocked\nnews|http://127.0.0.1:{port}/plain\nnews|http://127.0.0.1:{dead}/\n\
         escort|http://127.0.0.1:{port}/a\nescort|http://127.0.0.1:{port}/b\nempty|\n"
    );
    let corpus = read_corpus(text.as_bytes()).unwrap();
    let s = probe_corpus(&corpus, &cfg()).unwrap();
    let news = s.categories["news"];
    assert_eq!((news.censored, news.open, news.inaccessible), (1, 1, 1));
    assert_eq!(s.categories["escort"].open, 2);
    assert_eq!(s.categories["empty"].total(), 0);
    for (cat, n) in corpus.categories() {
        assert_eq!(s.categories[cat].total(), *n);
    }
    assert_eq!(s.flagged.len(), 1);
    assert_eq!(s.records.len(), corpus.len());
}

#[derive(Clone, Copy)]
enum DnsMode {
    Answer,
    Refuse,
    Silent,
}

/// UDP stub resolver; returns its address and a received-query counter.
fn dns_stub(mode: DnsMode) -> (SocketAddrV4, Arc<AtomicUsize>) {
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = match sock.local_addr().unwrap() {
        std::net::SocketAddr::V4(a) => a,
        _ => unreachable!(),
    };
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = seen.clone();
    thread::spawn(move || {
        let mut buf = [0u8; 512];
        while let Ok((n, peer)) = sock.recv_from(&mut buf) {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reply = buf[..n].to_vec();
            reply[2] |= 0x80;
            match mode {
                DnsMode::Silent => continue,
                DnsMode::Refuse => reply[3] = (reply[3] & 0xF0) | 5,
                DnsMode::Answer => {
                    reply[3] |= 0x80;
                    reply[7] = 1;
                    reply.extend_from_slice(&[0xC0, 12, 0, 1, 0, 1, 0, 0, 0, 60, 0, 4, 192, 0, 2, 7]);
                }
            }
            let _ = sock.send_to(&reply, peer);
        }
    });
    (addr, seen)
}

fn closed_udp() -> SocketAddrV4 {
    let s = UdpSocket::bind("127.0.0.1:0").unwrap();
    match s.local_addr().unwrap() {
        std::net::SocketAddr::V4(a) => a,
        _ => unreachable!(),
    }
}

fn dns_cfg() -> DnsProbeConfig {
    DnsProbeConfig {
        timeout: Duration::from_millis(300),
        rate_per_sec: 0.0,
        ..Default::default()
    }
}

#[test]
fn resolver_classes() {
    let (open, open_seen) = dns_stub(DnsMode::Answer);
    let (refusing, _) = dns_stub(DnsMode::Refuse);
    let (silent, silent_seen) = dns_stub(DnsMode::Silent);
    let closed = closed_udp();
    let c = dns_cfg();
    let o = probe_resolver(open, &c).unwrap();
    assert_eq!((o.class, o.queries), (ResolverClass::Open, 1));
    assert!(o.rtt_ms.is_some());
    assert_eq!(open_seen.load(Ordering::SeqCst), 1);
    assert_eq!(probe_resolver(refusing, &c).unwrap().class, ResolverClass::NonResolving);
    assert_eq!(probe_resolver(closed, &c).unwrap().class, ResolverClass::Closed);
    let f = probe_resolver(silent, &c).unwrap();
    assert_eq!((f.class, f.queries), (ResolverClass::Filtered, 2));
    assert_eq!(silent_seen.load(Ordering::SeqCst), 2);

    let results = probe_resolvers(&[open, closed, silent], &c);
    let mut out = Vec::new();
    write_probe_results(&results, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("127.0.0.1|open|"));
    assert!(lines[1].starts_with("127.0.0.1|closed|"));
    assert_eq!(lines[2], "127.0.0.1|filtered|");
}
