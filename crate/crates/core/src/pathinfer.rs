//! Valley-free AS path inference.
//!
//! Routes to each target prefix are computed by staged propagation from the
//! prefix's origin ASes:
//!
//! 1. customer routes climb customer-to-provider edges,
//! 2. holders of customer routes hand them across a single peer edge,
//! 3. every holder passes its route down provider-to-customer edges.
//!
//! Each AS keeps one best route, preferring `Customer > Peer > Provider`, then
//! fewer hops, then the lowest next-hop ASN. Observed AS paths can seed the
//! computation; a seeded candidate wins ties against an inferred candidate of
//! equal class and length.
//!
//! [`oracle_best_route`] is an independent brute-force check for small graphs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    hops_valley_free, ASGraph, ASPath, Asn, InferredRoute, ModelError, Prefix, Provenance,
    RouteClass,
};

/// Largest graph [`oracle_best_route`] will enumerate.
pub const ORACLE_MAX_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("target prefix {0} has no origin AS")]
    UnknownTarget(Prefix),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("AS{0} is not in the graph")]
    UnknownAsn(Asn),
    #[error("graph has {nodes} nodes; the oracle is limited to {limit}")]
    GraphTooLarge { nodes: usize, limit: usize },
    #[error("oracle did not reach a stable routing state for {0}")]
    OracleNoConvergence(Prefix),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub path: Vec<Asn>,
    pub class: RouteClass,
    pub fake: bool,
    pub known: bool,
}

pub(crate) type CandidateKey = (Reverse<RouteClass>, usize, bool, bool, Option<Asn>);

impl Candidate {
    pub(crate) fn origin(asn: Asn) -> Self {
        Candidate {
            path: vec![asn],
            class: RouteClass::Customer,
            fake: false,
            known: false,
        }
    }

    pub(crate) fn key(&self) -> CandidateKey {
        (
            Reverse(self.class),
            self.path.len(),
            self.fake,
            !self.known,
            self.path.get(1).copied(),
        )
    }

    /// The route `holder` would install when learning this one over an edge
    /// of the given class; `None` if the path already visits `holder`.
    pub(crate) fn extend(&self, holder: Asn, class: RouteClass) -> Option<Candidate> {
        if self.path.contains(&holder) {
            return None;
        }
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.push(holder);
        path.extend_from_slice(&self.path);
        Some(Candidate {
            path,
            class,
            fake: self.fake,
            known: false,
        })
    }
}

fn offer(slot: &mut Option<Candidate>, cand: Candidate) -> bool {
    match slot {
        Some(current) if current.key() <= cand.key() => false,
        _ => {
            *slot = Some(cand);
            true
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Seed {
    pub node: usize,
    pub cand: Candidate,
}

/// Staged valley-free propagation. `locked` pins one node to its seed: the
/// node keeps and exports that candidate whatever else it hears.
pub(crate) fn propagate(
    graph: &ASGraph,
    seeds: Vec<Seed>,
    locked: Option<usize>,
) -> Vec<Option<Candidate>> {
    let n = graph.len();
    let mut best: Vec<Option<Candidate>> = vec![None; n];
    let is_locked = |i: usize| locked == Some(i);

    let mut later: Vec<Seed> = Vec::new();
    let mut heap = BinaryHeap::new();
    for seed in seeds {
        if seed.cand.class == RouteClass::Customer {
            let len = seed.cand.path.len();
            if offer(&mut best[seed.node], seed.cand) {
                heap.push(Reverse((len, seed.node)));
            }
        } else if !is_locked(seed.node) {
            later.push(seed);
        }
    }

    // customer routes climb towards providers
    let mut done = vec![false; n];
    while let Some(Reverse((len, i))) = heap.pop() {
        if done[i] || best[i].as_ref().map(|c| c.path.len()) != Some(len) {
            continue;
        }
        done[i] = true;
        let route = best[i].clone().expect("queued node has a route");
        for &p in graph.provider_indices(i) {
            let p = p as usize;
            if done[p] || is_locked(p) {
                continue;
            }
            if let Some(c) = route.extend(graph.asn_at(p), RouteClass::Customer) {
                if offer(&mut best[p], c) {
                    heap.push(Reverse((len + 1, p)));
                }
            }
        }
    }

    // customer routes cross one peer edge
    let has_customer: Vec<bool> = best.iter().map(Option::is_some).collect();
    let mut peer_seeds: HashMap<usize, Vec<Candidate>> = HashMap::new();
    let mut provider_seeds: Vec<Seed> = Vec::new();
    for seed in later {
        match seed.cand.class {
            RouteClass::Peer => peer_seeds.entry(seed.node).or_default().push(seed.cand),
            _ => provider_seeds.push(seed),
        }
    }
    for i in 0..n {
        if has_customer[i] || is_locked(i) {
            continue;
        }
        let holder = graph.asn_at(i);
        let mut slot: Option<Candidate> = None;
        for &q in graph.peer_indices(i) {
            if let Some(route) = best[q as usize].as_ref().filter(|_| has_customer[q as usize]) {
                if let Some(c) = route.extend(holder, RouteClass::Peer) {
                    offer(&mut slot, c);
                }
            }
        }
        for c in peer_seeds.remove(&i).unwrap_or_default() {
            offer(&mut slot, c);
        }
        best[i] = slot;
    }

    // every route descends to customers
    let fixed: Vec<bool> = best.iter().map(Option::is_some).collect();
    let mut heap = BinaryHeap::new();
    for (i, slot) in best.iter().enumerate() {
        if let Some(c) = slot {
            heap.push(Reverse((c.path.len(), i)));
        }
    }
    for seed in provider_seeds {
        if fixed[seed.node] {
            continue;
        }
        let len = seed.cand.path.len();
        if offer(&mut best[seed.node], seed.cand) {
            heap.push(Reverse((len, seed.node)));
        }
    }
    let mut done = vec![false; n];
    while let Some(Reverse((len, i))) = heap.pop() {
        if done[i] || best[i].as_ref().map(|c| c.path.len()) != Some(len) {
            continue;
        }
        done[i] = true;
        let route = best[i].clone().expect("queued node has a route");
        for &c in graph.customer_indices(i) {
            let c = c as usize;
            if fixed[c] || done[c] || is_locked(c) {
                continue;
            }
            if let Some(cand) = route.extend(graph.asn_at(c), RouteClass::Provider) {
                if offer(&mut best[c], cand) {
                    heap.push(Reverse((len + 1, c)));
                }
            }
        }
    }
    best
}

/// Counters describing how observed paths were used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SeedStats {
    /// Valley-free observed paths whose suffixes seeded the propagation.
    pub seeded: usize,
    /// Paths violating valley-freeness (or using unknown links): installed
    /// for their own source only, never propagated.
    pub policy_violations: usize,
    /// Paths whose last hop is not an origin of their target.
    pub unterminated: usize,
}

impl SeedStats {
    fn merge(&mut self, other: SeedStats) {
        self.seeded += other.seeded;
        self.policy_violations += other.policy_violations;
        self.unterminated += other.unterminated;
    }
}

pub(crate) struct TargetSeeds {
    pub seeds: Vec<Seed>,
    pub pinned: Vec<ASPath>,
    pub stats: SeedStats,
}

/// Builds origin seeds plus seeds from every suffix of the observed paths.
pub(crate) fn target_seeds(
    graph: &ASGraph,
    target: Prefix,
    known: &[ASPath],
) -> Result<TargetSeeds, InferError> {
    let origins = graph
        .origins_of(target)
        .ok_or(InferError::UnknownTarget(target))?;
    let mut seeds = Vec::new();
    for &o in origins {
        let node = graph.index_of(o).ok_or(InferError::UnknownAsn(o))?;
        seeds.push(Seed {
            node,
            cand: Candidate::origin(o),
        });
    }
    let mut pinned = Vec::new();
    let mut stats = SeedStats::default();
    for path in known.iter().filter(|p| p.target() == target) {
        if !origins.contains(&path.origin()) {
            stats.unterminated += 1;
            continue;
        }
        if path.len() == 1 {
            continue;
        }
        let hops = path.hops();
        let all_present = hops.iter().all(|&h| graph.contains(h));
        if !all_present || !matches!(hops_valley_free(hops, graph), Ok(true)) {
            stats.policy_violations += 1;
            pinned.push(path.clone());
            continue;
        }
        stats.seeded += 1;
        for i in 0..hops.len() - 1 {
            if origins.contains(&hops[i]) {
                continue;
            }
            let class = graph.relationship_of(hops[i], hops[i + 1])?;
            seeds.push(Seed {
                node: graph.index_of(hops[i]).expect("checked above"),
                cand: Candidate {
                    path: hops[i..].to_vec(),
                    class,
                    fake: false,
                    known: true,
                },
            });
        }
    }
    Ok(TargetSeeds {
        seeds,
        pinned,
        stats,
    })
}

/// Best routes of every AS towards one target prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetRoutes {
    routes: BTreeMap<Asn, InferredRoute>,
    policy_violations: BTreeSet<Asn>,
    known: Vec<ASPath>,
}

impl TargetRoutes {
    pub fn routes(&self) -> &BTreeMap<Asn, InferredRoute> {
        &self.routes
    }

    pub fn get(&self, asn: Asn) -> Option<&InferredRoute> {
        self.routes.get(&asn)
    }

    /// Sources whose stored route is an observed path that breaks the
    /// valley-free rule.
    pub fn policy_violations(&self) -> &BTreeSet<Asn> {
        &self.policy_violations
    }

    /// Observed paths for this target the table was computed with.
    pub fn known_paths(&self) -> &[ASPath] {
        &self.known
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// Per-target best routes for every AS that can reach the target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingTable {
    targets: BTreeMap<Prefix, TargetRoutes>,
    stats: SeedStats,
}

impl RoutingTable {
    pub fn targets(&self) -> impl Iterator<Item = Prefix> + '_ {
        self.targets.keys().copied()
    }

    pub fn target(&self, prefix: Prefix) -> Option<&TargetRoutes> {
        self.targets.get(&prefix)
    }

    pub fn route(&self, prefix: Prefix, asn: Asn) -> Option<&InferredRoute> {
        self.targets.get(&prefix).and_then(|t| t.get(asn))
    }

    pub fn iter(&self) -> impl Iterator<Item = &InferredRoute> + '_ {
        self.targets.values().flat_map(|t| t.routes.values())
    }

    pub fn per_target(&self) -> impl Iterator<Item = (Prefix, &TargetRoutes)> + '_ {
        self.targets.iter().map(|(p, t)| (*p, t))
    }

    pub fn len(&self) -> usize {
        self.targets.values().map(TargetRoutes::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seed_stats(&self) -> SeedStats {
        self.stats
    }

    /// Writes `<target>|<source>|<class>|<provenance>|<hop,hop,...>` lines,
    /// ordered by target then source.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for route in self.iter() {
            write!(
                w,
                "{}|{}|{}|{}|",
                route.target,
                route.source,
                route.class,
                route.provenance.as_str()
            )?;
            for (i, hop) in route.path.hops().iter().enumerate() {
                if i > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{hop}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn class_of_first_link(graph: &ASGraph, hops: &[Asn]) -> RouteClass {
    if hops.len() < 2 {
        return RouteClass::Customer;
    }
    graph
        .relationship_of(hops[0], hops[1])
        .unwrap_or(RouteClass::Peer)
}

fn infer_target(
    graph: &ASGraph,
    target: Prefix,
    known: &[ASPath],
) -> Result<(TargetRoutes, SeedStats), InferError> {
    let TargetSeeds {
        seeds,
        mut pinned,
        stats,
    } = target_seeds(graph, target, known)?;
    let best = propagate(graph, seeds, None);
    let mut routes = BTreeMap::new();
    for (i, slot) in best.into_iter().enumerate() {
        let Some(cand) = slot else { continue };
        let source = graph.asn_at(i);
        let route = InferredRoute {
            source,
            target,
            class: if cand.path.len() == 1 {
                RouteClass::Customer
            } else {
                cand.class
            },
            provenance: if cand.known {
                Provenance::Known
            } else {
                Provenance::Inferred
            },
            path: ASPath::new(cand.path, target)?,
        };
        routes.insert(source, route);
    }

    pinned.sort_by(|a, b| (a.len(), a.hops()).cmp(&(b.len(), b.hops())));
    let mut policy_violations = BTreeSet::new();
    for path in pinned {
        if !policy_violations.insert(path.source()) {
            continue;
        }
        routes.insert(
            path.source(),
            InferredRoute {
                source: path.source(),
                target,
                class: class_of_first_link(graph, path.hops()),
                provenance: Provenance::Known,
                path,
            },
        );
    }
    let known = known
        .iter()
        .filter(|p| p.target() == target)
        .cloned()
        .collect();
    Ok((
        TargetRoutes {
            routes,
            policy_violations,
            known,
        },
        stats,
    ))
}

/// Infers the best valley-free route from every AS to each target prefix.
pub fn infer_routes(
    graph: &ASGraph,
    known: &[ASPath],
    targets: &[Prefix],
) -> Result<RoutingTable, InferError> {
    if graph.is_empty() {
        return Err(InferError::EmptyGraph);
    }
    let unique: BTreeSet<Prefix> = targets.iter().copied().collect();
    for &t in &unique {
        if graph.origins_of(t).is_none() {
            return Err(InferError::UnknownTarget(t));
        }
    }
    let mut by_target: HashMap<Prefix, Vec<ASPath>> = HashMap::new();
    for path in known {
        if unique.contains(&path.target()) {
            by_target.entry(path.target()).or_default().push(path.clone());
        }
    }
    type Outcome = Result<(TargetRoutes, SeedStats), InferError>;
    let results: Vec<(Prefix, Outcome)> = unique
        .into_par_iter()
        .map(|t| {
            let paths = by_target.get(&t).map(Vec::as_slice).unwrap_or(&[]);
            (t, infer_target(graph, t, paths))
        })
        .collect();

    let mut table = RoutingTable::default();
    for (t, res) in results {
        let (routes, stats) = res?;
        table.stats.merge(stats);
        table.targets.insert(t, routes);
    }
    if table.stats.policy_violations > 0 {
        log::warn!(
            "{} observed paths violate valley-freeness; honoured for their source only",
            table.stats.policy_violations
        );
    }
    if table.stats.unterminated > 0 {
        log::warn!(
            "{} observed paths do not end at an origin of their prefix; ignored",
            table.stats.unterminated
        );
    }
    Ok(table)
}

/// Route counts for one target, split by provenance and class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub customer: usize,
    pub peer: usize,
    pub provider: usize,
}

impl ClassCounts {
    fn bump(&mut self, class: RouteClass) {
        match class {
            RouteClass::Customer => self.customer += 1,
            RouteClass::Peer => self.peer += 1,
            RouteClass::Provider => self.provider += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.customer + self.peer + self.provider
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RouteCounts {
    pub known: ClassCounts,
    pub inferred: ClassCounts,
}

impl RouteCounts {
    pub fn total(&self) -> usize {
        self.known.total() + self.inferred.total()
    }
}

pub fn route_count_summary(table: &RoutingTable) -> BTreeMap<Prefix, RouteCounts> {
    table
        .per_target()
        .map(|(prefix, routes)| {
            let mut counts = RouteCounts::default();
            for r in routes.routes().values() {
                match r.provenance {
                    Provenance::Known => counts.known.bump(r.class),
                    Provenance::Inferred => counts.inferred.bump(r.class),
                }
            }
            (prefix, counts)
        })
        .collect()
}

/// Brute-force best route for one source: see [`oracle_routes`].
pub fn oracle_best_route(
    graph: &ASGraph,
    source: Asn,
    target: Prefix,
) -> Result<Option<InferredRoute>, InferError> {
    if !graph.contains(source) {
        return Err(InferError::UnknownAsn(source));
    }
    Ok(oracle_routes(graph, target)?.remove(&source))
}

/// Brute-force routing state for one target on a small graph.
///
/// Enumerates every loop-free valley-free path from each AS to the first
/// origin it reaches. A path is admissible only if the rest of it is exactly
/// the next hop's own chosen route and the next hop may export that route to
/// the holder (customer-learned routes go to everyone, others only to
/// customers). Choices are re-evaluated for all ASes in rounds until nothing
/// changes; each AS picks by class, then hop count, then hop sequence.
pub fn oracle_routes(
    graph: &ASGraph,
    target: Prefix,
) -> Result<BTreeMap<Asn, InferredRoute>, InferError> {
    if graph.len() > ORACLE_MAX_NODES {
        return Err(InferError::GraphTooLarge {
            nodes: graph.len(),
            limit: ORACLE_MAX_NODES,
        });
    }
    let origins = graph
        .origins_of(target)
        .ok_or(InferError::UnknownTarget(target))?
        .clone();

    let mut candidates: BTreeMap<Asn, Vec<Vec<Asn>>> = BTreeMap::new();
    for &source in graph.asns() {
        if origins.contains(&source) {
            continue;
        }
        let mut found = Vec::new();
        let mut stack = vec![source];
        enumerate_paths(graph, &origins, &mut stack, false, &mut found);
        candidates.insert(source, found);
    }

    let seed: BTreeMap<Asn, (Vec<Asn>, RouteClass)> = origins
        .iter()
        .map(|&o| (o, (vec![o], RouteClass::Customer)))
        .collect();
    let mut chosen = seed.clone();
    let max_rounds = 2 * graph.len() + 4;
    for _ in 0..max_rounds {
        let mut next = seed.clone();
        for (&source, paths) in &candidates {
            let mut pick: Option<(Reverse<RouteClass>, usize, &Vec<Asn>)> = None;
            for path in paths {
                let hop = path[1];
                let Some((hop_path, hop_class)) = chosen.get(&hop) else {
                    continue;
                };
                if hop_path.as_slice() != &path[1..] {
                    continue;
                }
                let class = graph.relationship_of(source, hop)?;
                let exported = *hop_class == RouteClass::Customer || class == RouteClass::Provider;
                if !exported {
                    continue;
                }
                let key = (Reverse(class), path.len(), path);
                if pick.as_ref().is_none_or(|p| key < *p) {
                    pick = Some(key);
                }
            }
            if let Some((Reverse(class), _, path)) = pick {
                next.insert(source, (path.clone(), class));
            }
        }
        if next == chosen {
            return chosen
                .into_iter()
                .map(|(asn, (hops, class))| {
                    Ok((
                        asn,
                        InferredRoute {
                            source: asn,
                            target,
                            path: ASPath::new(hops, target)?,
                            class,
                            provenance: Provenance::Inferred,
                        },
                    ))
                })
                .collect();
        }
        chosen = next;
    }
    Err(InferError::OracleNoConvergence(target))
}

fn enumerate_paths(
    graph: &ASGraph,
    origins: &BTreeSet<Asn>,
    stack: &mut Vec<Asn>,
    descending: bool,
    out: &mut Vec<Vec<Asn>>,
) {
    let here = *stack.last().expect("stack starts non-empty");
    for next in graph.neighbors_of(here) {
        if stack.contains(&next) {
            continue;
        }
        let class = graph
            .relationship_of(here, next)
            .expect("neighbours are adjacent");
        let still_descending = match class {
            RouteClass::Provider if descending => continue,
            RouteClass::Provider => false,
            RouteClass::Peer if descending => continue,
            RouteClass::Peer | RouteClass::Customer => true,
        };
        stack.push(next);
        if origins.contains(&next) {
            out.push(stack.clone());
        } else {
            enumerate_paths(graph, origins, stack, still_descending, out);
        }
        stack.pop();
    }
}

/// Re-checks the route invariants: loop-free, valley-free, class matching
/// the first link, first hop equal to the source. Returns a description of
/// the first problem found.
pub fn check_route(graph: &ASGraph, route: &InferredRoute) -> Result<(), String> {
    let hops = route.path.hops();
    if hops.first() != Some(&route.source) {
        return Err(format!("route for AS{} starts elsewhere", route.source));
    }
    let unique: BTreeSet<_> = hops.iter().collect();
    if unique.len() != hops.len() {
        return Err(format!("route for AS{} loops", route.source));
    }
    match hops_valley_free(hops, graph) {
        Ok(true) => {}
        Ok(false) => return Err(format!("route for AS{} has a valley", route.source)),
        Err(e) => return Err(e.to_string()),
    }
    if hops.len() > 1 && class_of_first_link(graph, hops) != route.class {
        return Err(format!("route class for AS{} disagrees with first link", route.source));
    }
    Ok(())
}
