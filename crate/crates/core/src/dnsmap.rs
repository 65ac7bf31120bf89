//! DNS filtering coverage: one resolver prefix per AS, paths towards them,
//! and a per-address UDP probe.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddrV4, UdpSocket};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::chokepoint::{rank_interceptors, ChokepointError, CoverageReport, InterceptOptions};
use crate::ingest::ResolverInventory;
use crate::model::{ASGraph, ASPath, Asn, Prefix};
use crate::pace::{run_bounded, RateLimiter};
use crate::pathinfer::{infer_routes, InferError, RoutingTable};

#[derive(Debug, Error)]
pub enum DnsError {
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Chokepoint(#[from] ChokepointError),
    #[error("invalid test name `{0}`")]
    InvalidName(String),
    #[error("local network error: {0}")]
    LocalNetwork(#[source] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResolverTarget {
    pub prefix: Prefix,
    pub resolvers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResolverTargetSet {
    pub targets: BTreeMap<Asn, ResolverTarget>,
    /// Resolvers across the whole inventory, chosen or not.
    pub total_resolvers: u64,
}

impl ResolverTargetSet {
    pub fn prefixes(&self) -> Vec<Prefix> {
        let mut p: Vec<Prefix> = self.targets.values().map(|t| t.prefix).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// The prefix with most resolvers in each AS; ties go to the numerically
/// lowest prefix.
pub fn select_resolver_targets(inventory: &ResolverInventory) -> ResolverTargetSet {
    let targets = inventory
        .by_as()
        .iter()
        .filter_map(|(&asn, prefixes)| {
            prefixes
                .iter()
                .min_by_key(|(p, &c)| (std::cmp::Reverse(c), p.numeric(), p.len()))
                .map(|(&prefix, &resolvers)| (asn, ResolverTarget { prefix, resolvers }))
        })
        .collect();
    ResolverTargetSet {
        targets,
        total_resolvers: inventory.total_resolvers(),
    }
}

/// Registers each chosen prefix as originated by its AS, infers routes to all
/// of them and ranks the interceptors.
pub fn dns_coverage(
    graph: &ASGraph,
    known: &[ASPath],
    targets: &ResolverTargetSet,
    opts: &InterceptOptions,
) -> Result<(RoutingTable, CoverageReport), DnsError> {
    let mut b = graph.to_builder();
    for (&asn, t) in &targets.targets {
        b.add_node(asn);
        b.add_origin(t.prefix, asn);
    }
    let g = b.build();
    let table = infer_routes(&g, known, &targets.prefixes())?;
    let report = rank_interceptors(&table, &g, opts)?;
    Ok((table, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolverClass {
    Open,
    Filtered,
    Closed,
    NonResolving,
}

impl ResolverClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResolverClass::Open => "open",
            ResolverClass::Filtered => "filtered",
            ResolverClass::Closed => "closed",
            ResolverClass::NonResolving => "non_resolving",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DnsProbeConfig {
    pub timeout: Duration,
    pub test_name: String,
    /// Upper bound on queries sent to one address.
    pub max_queries: u32,
    pub max_concurrency: usize,
    pub rate_per_sec: f64,
}

impl Default for DnsProbeConfig {
    fn default() -> Self {
        DnsProbeConfig {
            timeout: Duration::from_secs(2),
            test_name: "www.example.com".into(),
            max_queries: 2,
            max_concurrency: 16,
            rate_per_sec: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResolverProbe {
    pub address: SocketAddrV4,
    pub class: ResolverClass,
    pub rtt_ms: Option<u64>,
    pub queries: u32,
}

/// Encodes a recursive A query.
pub fn encode_query(id: u16, name: &str) -> Result<Vec<u8>, DnsError> {
    let mut msg = Vec::with_capacity(32 + name.len());
    msg.extend_from_slice(&id.to_be_bytes());
    msg.extend_from_slice(&[0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
    for label in name.trim_end_matches('.').split('.') {
        if label.is_empty() || label.len() > 63 {
            return Err(DnsError::InvalidName(name.into()));
        }
        msg.push(label.len() as u8);
        msg.extend_from_slice(label.as_bytes());
    }
    msg.push(0);
    msg.extend_from_slice(&[0, 1, 0, 1]);
    Ok(msg)
}

fn skip_name(msg: &[u8], mut pos: usize) -> Option<usize> {
    loop {
        let len = *msg.get(pos)? as usize;
        if len == 0 {
            return Some(pos + 1);
        }
        if len & 0xC0 == 0xC0 {
            return Some(pos + 2);
        }
        pos += 1 + len;
    }
}

fn u16_at(msg: &[u8], pos: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*msg.get(pos)?, *msg.get(pos + 1)?]))
}

/// What a reply to query `id` says, if it is one. `Some(addrs)` lists the A
/// records in the answer section.
pub fn parse_reply(msg: &[u8], id: u16) -> Option<Vec<Ipv4Addr>> {
    if msg.len() < 12 || u16_at(msg, 0)? != id || msg[2] & 0x80 == 0 {
        return None;
    }
    let rcode = msg[3] & 0x0F;
    let qd = u16_at(msg, 4)?;
    let an = u16_at(msg, 6)?;
    let mut pos = 12;
    for _ in 0..qd {
        pos = skip_name(msg, pos)? + 4;
    }
    let mut addrs = Vec::new();
    if rcode != 0 {
        return Some(addrs);
    }
    for _ in 0..an {
        pos = skip_name(msg, pos)?;
        let rtype = u16_at(msg, pos)?;
        let rdlen = u16_at(msg, pos + 8)? as usize;
        let data = msg.get(pos + 10..pos + 10 + rdlen)?;
        if rtype == 1 && rdlen == 4 {
            addrs.push(Ipv4Addr::new(data[0], data[1], data[2], data[3]));
        }
        pos += 10 + rdlen;
    }
    Some(addrs)
}

/// Queries one resolver for `test_name`. A usable A answer means open, an
/// ICMP port-unreachable means closed, silence means filtered, and any other
/// reply means it answers without resolving. A silent address is asked again
/// while the query budget lasts.
pub fn probe_resolver(address: SocketAddrV4, config: &DnsProbeConfig) -> Result<ResolverProbe, DnsError> {
    let sock = UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0)).map_err(DnsError::LocalNetwork)?;
    sock.connect(address).map_err(DnsError::LocalNetwork)?;
    sock.set_read_timeout(Some(config.timeout.max(Duration::from_millis(1))))
        .map_err(DnsError::LocalNetwork)?;
    let mut buf = [0u8; 1500];
    let mut queries = 0;
    let done = |class, rtt: Option<Duration>, queries| ResolverProbe {
        address,
        class,
        rtt_ms: rtt.map(|d| d.as_millis() as u64),
        queries,
    };
    while queries < config.max_queries.max(1) {
        let id: u16 = rand::random();
        let query = encode_query(id, &config.test_name)?;
        let sent = Instant::now();
        match sock.send(&query) {
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                return Ok(done(ResolverClass::Closed, None, queries + 1))
            }
            Err(e) => return Err(DnsError::LocalNetwork(e)),
        }
        queries += 1;
        let deadline = sent + config.timeout;
        loop {
            match sock.recv(&mut buf) {
                Ok(n) => match parse_reply(&buf[..n], id) {
                    Some(addrs) => {
                        let class = if addrs.is_empty() {
                            ResolverClass::NonResolving
                        } else {
                            ResolverClass::Open
                        };
                        return Ok(done(class, Some(sent.elapsed()), queries));
                    }
                    // stray datagram; keep listening for the rest of the window
                    None => {
                        let left = deadline.saturating_duration_since(Instant::now());
                        if left.is_zero() {
                            break;
                        }
                        sock.set_read_timeout(Some(left)).map_err(DnsError::LocalNetwork)?;
                    }
                },
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                    return Ok(done(ResolverClass::Closed, Some(sent.elapsed()), queries))
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                Err(e) => return Err(DnsError::LocalNetwork(e)),
            }
        }
        sock.set_read_timeout(Some(config.timeout.max(Duration::from_millis(1))))
            .map_err(DnsError::LocalNetwork)?;
    }
    Ok(done(ResolverClass::Filtered, None, queries))
}

/// Probes every address with bounded concurrency under one shared rate limit.
pub fn probe_resolvers(
    addresses: &[SocketAddrV4],
    config: &DnsProbeConfig,
) -> Vec<(SocketAddrV4, Result<ResolverProbe, DnsError>)> {
    let limiter = RateLimiter::new(config.rate_per_sec);
    run_bounded(addresses, config.max_concurrency, |&addr| {
        limiter.acquire();
        (addr, probe_resolver(addr, config))
    })
}

/// `<ip>|<classification>|<rtt_ms>`; local failures are written as
/// `local_error` with an empty RTT.
pub fn write_probe_results<W: Write>(
    results: &[(SocketAddrV4, Result<ResolverProbe, DnsError>)],
    mut w: W,
) -> io::Result<()> {
    for (addr, r) in results {
        match r {
            Ok(p) => {
                let rtt = p.rtt_ms.map(|v| v.to_string()).unwrap_or_default();
                writeln!(w, "{}|{}|{}", addr.ip(), p.class.as_str(), rtt)?
            }
            Err(_) => writeln!(w, "{}|local_error|", addr.ip())?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chokepoint::rank_interceptors;
    use crate::model::{asn, GraphBuilder};

    fn p(s: &str) -> Prefix {
        s.parse().unwrap()
    }

    #[test]
    fn max_count_then_lowest_prefix() {
        let mut inv = ResolverInventory::new();
        inv.add(asn(1), p("10.0.1.0/24"), 10);
        inv.add(asn(1), p("10.0.2.0/24"), 17);
        inv.add(asn(2), p("10.1.9.0/24"), 5);
        inv.add(asn(2), p("10.1.3.0/24"), 5);
        inv.add(asn(3), p("10.2.0.0/24"), 1);
        let t = select_resolver_targets(&inv);
        assert_eq!(t.len(), 3);
        assert_eq!(t.targets[&asn(1)].prefix, p("10.0.2.0/24"));
        assert_eq!(t.targets[&asn(2)].prefix, p("10.1.3.0/24"));
        assert_eq!(t.total_resolvers, 38);
    }

    #[test]
    fn single_as_covers_itself() {
        let mut b = GraphBuilder::new();
        b.add_node(asn(5));
        let g = b.build();
        let mut inv = ResolverInventory::new();
        inv.add(asn(5), p("10.0.0.0/24"), 3);
        let (_, r) = dns_coverage(&g, &[], &select_resolver_targets(&inv), &Default::default()).unwrap();
        // only the origin's own trivial route exists
        assert_eq!(r.total_paths, 0);
    }

    #[test]
    fn two_transits_carry_everything() {
        let mut b = GraphBuilder::new();
        b.peer(1, 2).unwrap();
        for (prov, c) in [(1, 10), (1, 11), (2, 12), (2, 13)] {
            b.provider_customer(prov, c).unwrap();
        }
        let g = b.build();
        let mut inv = ResolverInventory::new();
        for c in 10..=13 {
            inv.add(asn(c), Prefix::new(Ipv4Addr::new(10, 0, c as u8, 0), 24).unwrap(), 1);
        }
        let targets = select_resolver_targets(&inv);
        let opts = InterceptOptions::default();
        let (table, r) = dns_coverage(&g, &[], &targets, &opts).unwrap();
        let top2: Vec<Asn> = r.ranked[..2].iter().map(|x| x.asn).collect();
        assert_eq!(top2, vec![asn(1), asn(2)]);
        assert_eq!(r.cumulative[1].fraction, 1.0);

        // same answer as plain chokepoint coverage over the same table
        let mut b = g.to_builder();
        for (a, t) in &targets.targets {
            b.add_origin(t.prefix, *a);
        }
        let direct = rank_interceptors(&table, &b.build(), &opts).unwrap();
        assert_eq!(direct, r);
    }

    #[test]
    fn query_encoding_and_reply_parsing() {
        let q = encode_query(0xBEEF, "www.example.com").unwrap();
        assert_eq!(&q[..2], &[0xBE, 0xEF]);
        assert_eq!(q.len(), 12 + 17 + 4);
        assert!(encode_query(1, "a..b").is_err());

        let mut reply = q.clone();
        reply[2] |= 0x80;
        reply[7] = 1;
        reply.extend_from_slice(&[0xC0, 12, 0, 1, 0, 1, 0, 0, 0, 60, 0, 4, 93, 184, 216, 34]);
        assert_eq!(parse_reply(&reply, 0xBEEF), Some(vec![Ipv4Addr::new(93, 184, 216, 34)]));
        assert_eq!(parse_reply(&reply, 0xBEEE), None);
        assert_eq!(parse_reply(&q, 0xBEEF), None);
        let mut refused = q.clone();
        refused[2] |= 0x80;
        refused[3] |= 5;
        assert_eq!(parse_reply(&refused, 0xBEEF), Some(vec![]));
        assert_eq!(parse_reply(&reply[..20], 0xBEEF), None);
    }
}
