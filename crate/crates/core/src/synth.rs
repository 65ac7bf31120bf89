//! Seeded synthetic topologies and datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DatasetBundle, RawDatasets, ResolverInventory};
use crate::intraas::{AliasMap, Hop, RouterId, RouterTrace};
use crate::model::{ASGraph, ASPath, Asn, CountryCode, GraphBuilder, Link, Prefix, Relationship};
use crate::pathinfer::{infer_routes, InferError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_stub: usize,
    pub n_regional: usize,
    pub n_transit: usize,
    /// Chance of a peer link between two regionals, or two stubs sharing a
    /// provider.
    pub peer_density: f64,
    /// Share of ASes tagged with each country; the remainder stays untagged.
    pub country_mix: BTreeMap<CountryCode, f64>,
    pub n_targets: usize,
    /// Chance that a regional or stub takes a second provider.
    pub multihoming: f64,
    /// Share of ASes whose routes show up as known paths.
    pub vantage_fraction: f64,
    /// Generate a resolver inventory.
    pub resolvers: bool,
    /// ASes (largest first) that get synthetic router traces.
    pub traced_ases: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_stub: 160,
            n_regional: 35,
            n_transit: 5,
            peer_density: 0.1,
            country_mix: BTreeMap::new(),
            n_targets: 20,
            multihoming: 0.3,
            vantage_fraction: 0.05,
            resolvers: true,
            traced_ases: 4,
        }
    }
}

impl SynthSpec {
    /// Roughly 80% stubs, 17.5% regionals, 2.5% transits (at least one).
    pub fn sized(seed: u64, total: usize) -> Self {
        let n_transit = (total / 40).max(1).min(total);
        let n_regional = (total * 7 / 40).min(total - n_transit);
        SynthSpec {
            seed,
            n_transit,
            n_regional,
            n_stub: total - n_transit - n_regional,
            ..Default::default()
        }
    }

    pub fn total(&self) -> usize {
        self.n_stub + self.n_regional + self.n_transit
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Infeasible(m.into()));
        if self.total() == 0 {
            return bad("no ASes requested");
        }
        for f in [self.peer_density, self.multihoming, self.vantage_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        if self.country_mix.values().any(|f| !(0.0..=1.0).contains(f))
            || self.country_mix.values().sum::<f64>() > 1.0 + 1e-9
        {
            return bad("country mix must be fractions summing to at most 1");
        }
        if self.n_transit == 0 && self.n_regional > 1 {
            return bad("more than one regional needs a transit tier to connect them");
        }
        if self.n_transit == 0 && self.n_regional == 0 && self.n_stub > 1 {
            return bad("several stubs need a provider tier");
        }
        if self.n_targets > 1 << 16 {
            return bad("at most 65536 targets");
        }
        Ok(())
    }
}

/// The i-th synthetic target: 10.0.0.0/24, 10.0.1.0/24, ...
pub fn target_prefix(i: usize) -> Prefix {
    let base = u32::from(Ipv4Addr::new(10, 0, 0, 0)) + ((i as u32) << 8);
    Prefix::new(Ipv4Addr::from(base), 24).expect("aligned /24")
}

fn resolver_prefix(i: usize) -> Prefix {
    let base = u32::from(Ipv4Addr::new(100, 64, 0, 0)) + ((i as u32) << 8);
    Prefix::new(Ipv4Addr::from(base), 24).expect("aligned /24")
}

fn asn(v: usize) -> Asn {
    Asn::new(v as u32).expect("synthetic ASNs start at 1")
}

fn pick_providers(rng: &mut ChaCha8Rng, pool: &[Asn], multihoming: f64) -> Vec<Asn> {
    let mut out = vec![*pool.choose(rng).expect("non-empty provider pool")];
    if pool.len() > 1 && rng.random::<f64>() < multihoming {
        loop {
            let p = *pool.choose(rng).expect("non-empty");
            if p != out[0] {
                out.push(p);
                break;
            }
        }
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<DatasetBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // ASNs: transits, then regionals, then stubs
    let transits: Vec<Asn> = (1..=spec.n_transit).map(asn).collect();
    let regionals: Vec<Asn> = (0..spec.n_regional).map(|i| asn(spec.n_transit + 1 + i)).collect();
    let stubs: Vec<Asn> = (0..spec.n_stub)
        .map(|i| asn(spec.n_transit + spec.n_regional + 1 + i))
        .collect();

    let mut links: Vec<Link> = Vec::new();
    for (i, &a) in transits.iter().enumerate() {
        for &b in &transits[i + 1..] {
            links.push(Link::new(a, b, Relationship::Peer));
        }
    }
    for &r in &regionals {
        if !transits.is_empty() {
            for p in pick_providers(&mut rng, &transits, spec.multihoming) {
                links.push(Link::new(p, r, Relationship::ProviderToCustomer));
            }
        }
    }
    for (i, &a) in regionals.iter().enumerate() {
        for &b in &regionals[i + 1..] {
            if rng.random::<f64>() < spec.peer_density {
                links.push(Link::new(a, b, Relationship::Peer));
            }
        }
    }
    let stub_pool: &[Asn] = if regionals.is_empty() { &transits } else { &regionals };
    let mut customers: BTreeMap<Asn, Vec<Asn>> = BTreeMap::new();
    for &s in &stubs {
        if stub_pool.is_empty() {
            continue;
        }
        for p in pick_providers(&mut rng, stub_pool, spec.multihoming) {
            links.push(Link::new(p, s, Relationship::ProviderToCustomer));
            customers.entry(p).or_default().push(s);
        }
    }
    let mut stub_peers: BTreeSet<(Asn, Asn)> = BTreeSet::new();
    for siblings in customers.values() {
        for (i, &a) in siblings.iter().enumerate() {
            for &b in &siblings[i + 1..] {
                let key = (a.min(b), a.max(b));
                if !stub_peers.contains(&key) && rng.random::<f64>() < spec.peer_density {
                    stub_peers.insert(key);
                }
            }
        }
    }
    // two stubs sharing both providers would otherwise be drawn twice
    for (a, b) in stub_peers {
        links.push(Link::new(a, b, Relationship::Peer));
    }

    let all: Vec<Asn> = transits.iter().chain(&regionals).chain(&stubs).copied().collect();
    let mut countries = BTreeMap::new();
    if !spec.country_mix.is_empty() {
        for &a in &all {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (&cc, &f) in &spec.country_mix {
                acc += f;
                if u < acc {
                    countries.insert(a, cc);
                    break;
                }
            }
        }
    }

    let origin_pool: &[Asn] = if stubs.is_empty() { &all } else { &stubs };
    let mut origins: BTreeMap<Prefix, BTreeSet<Asn>> = BTreeMap::new();
    for i in 0..spec.n_targets {
        let o = *origin_pool.choose(&mut rng).expect("at least one AS");
        origins.entry(target_prefix(i)).or_default().insert(o);
    }

    let mut resolvers = ResolverInventory::new();
    if spec.resolvers {
        let mut next = 0;
        for &a in regionals.iter().chain(&stubs) {
            if rng.random::<f64>() < 0.5 {
                continue;
            }
            for _ in 0..rng.random_range(1..=3usize) {
                resolvers.add(a, resolver_prefix(next), rng.random_range(1..=50u64));
                next += 1;
            }
        }
    }

    let (router_traces, aliases) = router_data(&mut rng, &all, spec.traced_ases);

    let mut raw = RawDatasets {
        links,
        origins,
        countries,
        resolvers,
        router_traces,
        aliases,
        ..Default::default()
    };
    let (skeleton, _) = DatasetBundle::assemble(raw.clone());
    let graph = with_all_nodes(&skeleton.graph, &all);
    raw.known.paths = sample_known_paths(&mut rng, &graph, spec.vantage_fraction)?;
    let (mut bundle, _) = DatasetBundle::assemble(raw);
    bundle.graph = with_all_nodes(&bundle.graph, &all);
    Ok(bundle)
}

fn with_all_nodes(graph: &ASGraph, all: &[Asn]) -> ASGraph {
    if all.iter().all(|&a| graph.contains(a)) {
        return graph.clone();
    }
    let mut b = graph.to_builder();
    for &a in all {
        b.add_node(a);
    }
    b.build()
}

/// Routes seen from a random set of vantage ASes, as a collector would.
fn sample_known_paths(
    rng: &mut ChaCha8Rng,
    graph: &ASGraph,
    vantage_fraction: f64,
) -> Result<Vec<ASPath>, SynthError> {
    let n = graph.len();
    let k = ((n as f64 * vantage_fraction).round() as usize).min(n);
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut vantage: Vec<usize> = index::sample(rng, n, k).into_vec();
    vantage.sort_unstable();
    let vantage: BTreeSet<Asn> = vantage.into_iter().map(|i| graph.asn_at(i)).collect();
    let targets: Vec<Prefix> = graph.origins().keys().copied().collect();
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let table = infer_routes(graph, &[], &targets)?;
    Ok(table
        .iter()
        .filter(|r| r.hop_count() >= 2 && vantage.contains(&r.source))
        .map(|r| r.path.clone())
        .collect())
}

/// Edge-to-edge traces through a small core inside the `count` highest-degree
/// ASes, with every other router given a second aliased interface.
fn router_data(rng: &mut ChaCha8Rng, all: &[Asn], count: usize) -> (Vec<RouterTrace>, AliasMap) {
    let mut traces = Vec::new();
    let mut aliases = AliasMap::new();
    let mut next_ip = u32::from(Ipv4Addr::new(172, 16, 0, 1));
    let mut fresh = || {
        let ip = Ipv4Addr::from(next_ip);
        next_ip += 1;
        ip
    };
    for (k, &a) in all.iter().take(count).enumerate() {
        let n_edge = rng.random_range(3..=8usize);
        let n_core = rng.random_range(2..=6usize);
        let mut ifaces: Vec<Vec<Ipv4Addr>> = Vec::new();
        for r in 0..n_edge + n_core {
            let mut ips = vec![fresh()];
            if r % 2 == 0 {
                ips.push(fresh());
            }
            aliases
                .insert(RouterId::new(format!("AS{a}-R{r}")), ips.clone())
                .expect("fresh addresses never collide");
            ifaces.push(ips);
        }
        for t in 0..rng.random_range(10..=30usize) {
            let mut hops = vec![*ifaces[rng.random_range(0..n_edge)].choose(rng).expect("iface")];
            for _ in 0..rng.random_range(1..=3usize) {
                let core = &ifaces[n_edge + rng.random_range(0..n_core)];
                if rng.random::<f64>() < 0.05 {
                    hops.push(Ipv4Addr::UNSPECIFIED);
                } else {
                    hops.push(*core.choose(rng).expect("iface"));
                }
            }
            hops.push(*ifaces[rng.random_range(0..n_edge)].choose(rng).expect("iface"));
            traces.push(RouterTrace {
                asn: a,
                trace_id: format!("t{k}-{t}"),
                hops: hops
                    .into_iter()
                    .map(|ip| if ip.is_unspecified() { Hop::Anonymous } else { Hop::Addr(ip) })
                    .collect(),
            });
        }
    }
    (traces, aliases)
}

/// A connected random graph of `n` ASes for oracle comparisons: a random
/// provider tree plus extra peer and transit links, one or two origins.
pub fn random_small_graph(seed: u64, n: usize) -> (ASGraph, Prefix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.max(1);
    let mut b = GraphBuilder::new();
    let nodes: Vec<Asn> = (1..=n).map(asn).collect();
    for &a in &nodes {
        b.add_node(a);
    }
    // lower ASNs sit higher in the hierarchy
    for i in 1..n {
        let p = rng.random_range(0..i);
        b.add_link(Link::new(nodes[p], nodes[i], Relationship::ProviderToCustomer))
            .expect("fresh pair");
    }
    let extra = rng.random_range(0..=n);
    for _ in 0..extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let link = if rng.random::<f64>() < 0.5 {
            Link::new(nodes[lo], nodes[hi], Relationship::Peer)
        } else {
            Link::new(nodes[lo], nodes[hi], Relationship::ProviderToCustomer)
        };
        // an existing different relationship on the pair is left alone
        let _ = b.add_link(link);
    }
    let target = target_prefix(0);
    b.add_origin(target, nodes[rng.random_range(0..n)]);
    if n > 3 && rng.random::<f64>() < 0.2 {
        b.add_origin(target, nodes[rng.random_range(0..n)]);
    }
    (b.build(), target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::valley_free;

    #[test]
    fn degenerate_single_stub() {
        let spec = SynthSpec {
            n_stub: 1,
            n_regional: 0,
            n_transit: 0,
            n_targets: 1,
            ..Default::default()
        };
        let b = generate(&spec).unwrap();
        assert_eq!(b.graph.len(), 1);
        assert_eq!(b.target_prefixes.len(), 1);
        assert_eq!(b.graph.origins_of(b.target_prefixes[0]).unwrap().len(), 1);
    }

    #[test]
    fn infeasible_specs() {
        let spec = SynthSpec {
            n_transit: 0,
            n_regional: 2,
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(SynthError::Infeasible(_))));
        let empty = SynthSpec {
            n_stub: 0,
            n_regional: 0,
            n_transit: 0,
            ..Default::default()
        };
        assert!(generate(&empty).is_err());
        let mut mix = SynthSpec::default();
        mix.country_mix.insert("IN".parse().unwrap(), 0.8);
        mix.country_mix.insert("US".parse().unwrap(), 0.4);
        assert!(generate(&mix).is_err());
    }

    #[test]
    fn sizes_and_known_paths() {
        let spec = SynthSpec::sized(3, 200);
        assert_eq!(spec.total(), 200);
        let b = generate(&spec).unwrap();
        assert_eq!(b.graph.len(), 200);
        assert_eq!(b.target_prefixes.len(), spec.n_targets);
        assert!(!b.known_paths.is_empty());
        for p in &b.known_paths {
            assert!(valley_free(p, &b.graph).unwrap());
        }
        assert!(!b.router_traces.is_empty());
        assert!(!b.resolver_inventory.is_empty());
    }

    #[test]
    fn same_seed_same_bundle() {
        let spec = SynthSpec {
            seed: 1,
            n_stub: 10,
            n_regional: 3,
            n_transit: 2,
            peer_density: 0.2,
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.graph.links(), b.graph.links());
        assert_eq!(a.known_paths, b.known_paths);
        assert_eq!(a.router_traces, b.router_traces);
    }

    #[test]
    fn small_graphs_are_valid() {
        for seed in 0..20 {
            let (g, t) = random_small_graph(seed, 8);
            assert_eq!(g.len(), 8);
            assert!(g.origins_of(t).is_some());
        }
    }
}
