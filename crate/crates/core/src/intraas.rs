//! Router-level analysis inside one AS.
//!
//! Traceroute sub-paths restricted to a single AS are rewritten to router
//! identities using an alias map, routers are split into edge (first or last
//! in-AS hop of some path) and core, and the cheaper of two filtering sets is
//! selected: all edge routers, or the shortest frequency-ranked prefix of
//! routers whose union covers a threshold share of the paths.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Asn;

pub const DEFAULT_ROUTER_THRESHOLD: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntraAsError {
    #[error("address {0} is listed under more than one router")]
    AliasConflict(Ipv4Addr),
    #[error("trace `{0}` has no hops")]
    EmptyTrace(String),
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hop {
    Addr(Ipv4Addr),
    /// A hop that did not answer (`*`).
    Anonymous,
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hop::Addr(a) => write!(f, "{a}"),
            Hop::Anonymous => f.write_str("*"),
        }
    }
}

/// One traceroute sub-path restricted to the routers of a single AS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RouterTrace {
    pub asn: Asn,
    pub trace_id: String,
    pub hops: Vec<Hop>,
}

/// Canonical router identity after alias resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct RouterId(String);

impl RouterId {
    pub fn new(id: impl Into<String>) -> Self {
        RouterId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_anonymous(&self) -> bool {
        self.0.starts_with('*')
    }

    /// Short stable digest used when router addresses must not be published.
    pub fn redacted(&self) -> RouterId {
        let digest = Sha256::digest(self.0.as_bytes());
        RouterId(format!("r-{}", &hex::encode(digest)[..12]))
    }
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Interface-address to router mapping. Member sets are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    by_ip: HashMap<Ipv4Addr, RouterId>,
    members: BTreeMap<RouterId, BTreeSet<Ipv4Addr>>,
}

impl AliasMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I>(&mut self, router: RouterId, ips: I) -> Result<(), IntraAsError>
    where
        I: IntoIterator<Item = Ipv4Addr>,
    {
        let ips: Vec<Ipv4Addr> = ips.into_iter().collect();
        for ip in &ips {
            if let Some(existing) = self.by_ip.get(ip) {
                if *existing != router {
                    return Err(IntraAsError::AliasConflict(*ip));
                }
            }
        }
        let set = self.members.entry(router.clone()).or_default();
        for ip in ips {
            set.insert(ip);
            self.by_ip.insert(ip, router.clone());
        }
        Ok(())
    }

    /// Router owning `ip`; unaliased addresses are their own router.
    pub fn resolve(&self, ip: Ipv4Addr) -> RouterId {
        self.by_ip
            .get(&ip)
            .cloned()
            .unwrap_or_else(|| RouterId(ip.to_string()))
    }

    pub fn routers(&self) -> &BTreeMap<RouterId, BTreeSet<Ipv4Addr>> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub type RouterPath = Vec<RouterId>;

/// Alias-resolved router paths grouped by AS.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterTopology {
    paths: BTreeMap<Asn, Vec<RouterPath>>,
}

impl RouterTopology {
    pub fn paths(&self, asn: Asn) -> &[RouterPath] {
        self.paths.get(&asn).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn ases(&self) -> impl Iterator<Item = Asn> + '_ {
        self.paths.keys().copied()
    }

    /// Number of paths each router of `asn` appears on.
    pub fn path_counts(&self, asn: Asn) -> BTreeMap<RouterId, usize> {
        path_counts(self.paths(asn))
    }
}

fn path_counts(paths: &[RouterPath]) -> BTreeMap<RouterId, usize> {
    let mut counts = BTreeMap::new();
    for path in paths {
        let distinct: BTreeSet<&RouterId> = path.iter().collect();
        for r in distinct {
            *counts.entry(r.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Rewrites trace hops to router identities. Consecutive hops on the same
/// router collapse; every anonymous hop becomes its own placeholder router
/// keyed by trace and position.
pub fn build_router_topology(
    traces: &[RouterTrace],
    aliases: &AliasMap,
) -> Result<RouterTopology, IntraAsError> {
    let mut paths: BTreeMap<Asn, Vec<RouterPath>> = BTreeMap::new();
    for trace in traces {
        if trace.hops.is_empty() {
            return Err(IntraAsError::EmptyTrace(trace.trace_id.clone()));
        }
        let mut path: RouterPath = Vec::with_capacity(trace.hops.len());
        for (pos, hop) in trace.hops.iter().enumerate() {
            let id = match hop {
                Hop::Addr(ip) => aliases.resolve(*ip),
                Hop::Anonymous => RouterId(format!("*{}:{}#{}", trace.asn, trace.trace_id, pos)),
            };
            if path.last() != Some(&id) {
                path.push(id);
            }
        }
        paths.entry(trace.asn).or_default().push(path);
    }
    Ok(RouterTopology { paths })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EdgeCore {
    pub edge: BTreeSet<RouterId>,
    pub core: BTreeSet<RouterId>,
}

/// Edge routers are the first or last hop of some path; every other observed
/// router is core.
pub fn classify_edge_core(paths: &[RouterPath]) -> EdgeCore {
    let mut edge = BTreeSet::new();
    for path in paths {
        if let (Some(first), Some(last)) = (path.first(), path.last()) {
            edge.insert(first.clone());
            edge.insert(last.clone());
        }
    }
    let core = paths
        .iter()
        .flatten()
        .filter(|r| !edge.contains(*r))
        .cloned()
        .collect();
    EdgeCore { edge, core }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyHitters {
    /// Routers in selection order (descending path count, then id).
    pub routers: Vec<RouterId>,
    pub covered_paths: usize,
    pub total_paths: usize,
    pub threshold: f64,
}

impl HeavyHitters {
    pub fn len(&self) -> usize {
        self.routers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }
}

fn check_threshold(threshold: f64) -> Result<(), IntraAsError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(IntraAsError::InvalidThreshold(threshold))
    }
}

pub(crate) fn meets(covered: usize, total: usize, threshold: f64) -> bool {
    covered as f64 >= threshold * total as f64 - 1e-9
}

/// Shortest prefix of the frequency-ranked routers whose paths, taken
/// together, reach `threshold` of all paths.
pub fn heavy_hitters(paths: &[RouterPath], threshold: f64) -> Result<HeavyHitters, IntraAsError> {
    check_threshold(threshold)?;
    let mut on_paths: BTreeMap<&RouterId, Vec<usize>> = BTreeMap::new();
    for (i, path) in paths.iter().enumerate() {
        for r in path.iter().collect::<BTreeSet<_>>() {
            on_paths.entry(r).or_default().push(i);
        }
    }
    let mut ranked: Vec<(&RouterId, Vec<usize>)> = on_paths.into_iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));

    let total = paths.len();
    let mut covered = vec![false; total];
    let mut count = 0;
    let mut routers = Vec::new();
    for (router, hits) in ranked {
        if meets(count, total, threshold) {
            break;
        }
        routers.push(router.clone());
        for i in hits {
            if !covered[i] {
                covered[i] = true;
                count += 1;
            }
        }
    }
    Ok(HeavyHitters {
        routers,
        covered_paths: count,
        total_paths: total,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    EdgeSet,
    HeavyHitterSet,
}

impl FilterRule {
    /// Edge routers are chosen whenever there are no more of them than heavy
    /// hitters.
    pub fn choose(edge_count: usize, heavy_hitter_count: usize) -> FilterRule {
        if edge_count <= heavy_hitter_count {
            FilterRule::EdgeSet
        } else {
            FilterRule::HeavyHitterSet
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouterSelection {
    pub asn: Asn,
    pub edge_count: usize,
    pub core_count: usize,
    pub heavy_hitter_count: usize,
    pub rule: FilterRule,
    pub selected: Vec<RouterId>,
    pub coverage_fraction: f64,
    pub threshold: f64,
}

impl RouterSelection {
    /// Copy with every router identity replaced by its digest.
    pub fn redacted(&self) -> RouterSelection {
        let mut out = self.clone();
        out.selected = self.selected.iter().map(RouterId::redacted).collect();
        out
    }
}

pub fn select_filter_routers(
    asn: Asn,
    edge_core: &EdgeCore,
    heavy: &HeavyHitters,
    paths: &[RouterPath],
) -> RouterSelection {
    let rule = FilterRule::choose(edge_core.edge.len(), heavy.len());
    let selected: Vec<RouterId> = match rule {
        FilterRule::EdgeSet => edge_core.edge.iter().cloned().collect(),
        FilterRule::HeavyHitterSet => heavy.routers.clone(),
    };
    let chosen: BTreeSet<&RouterId> = selected.iter().collect();
    let covered = paths
        .iter()
        .filter(|p| p.iter().any(|r| chosen.contains(r)))
        .count();
    let coverage_fraction = if paths.is_empty() {
        1.0
    } else {
        covered as f64 / paths.len() as f64
    };
    RouterSelection {
        asn,
        edge_count: edge_core.edge.len(),
        core_count: edge_core.core.len(),
        heavy_hitter_count: heavy.len(),
        rule,
        selected,
        coverage_fraction,
        threshold: heavy.threshold,
    }
}

/// Full per-AS pipeline: classify, rank, select.
pub fn analyze_as(
    asn: Asn,
    paths: &[RouterPath],
    threshold: f64,
) -> Result<RouterSelection, IntraAsError> {
    let edge_core = classify_edge_core(paths);
    let heavy = heavy_hitters(paths, threshold)?;
    Ok(select_filter_routers(asn, &edge_core, &heavy, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::asn;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn rid(s: &str) -> RouterId {
        RouterId::new(s)
    }

    fn rpath(ids: &[&str]) -> RouterPath {
        ids.iter().map(|s| rid(s)).collect()
    }

    fn trace(id: &str, hops: &[&str]) -> RouterTrace {
        RouterTrace {
            asn: asn(9498),
            trace_id: id.to_string(),
            hops: hops
                .iter()
                .map(|h| if *h == "*" { Hop::Anonymous } else { Hop::Addr(ip(h)) })
                .collect(),
        }
    }

    #[test]
    fn aliases_collapse_consecutive_interfaces() {
        let mut aliases = AliasMap::new();
        aliases
            .insert(rid("R1"), [ip("10.0.0.1"), ip("10.0.0.2")])
            .unwrap();
        let topo = build_router_topology(&[trace("t", &["10.0.0.1", "10.0.0.2"])], &aliases).unwrap();
        assert_eq!(topo.paths(asn(9498)), &[rpath(&["R1"])]);
    }

    #[test]
    fn anonymous_hops_become_placeholders() {
        let mut aliases = AliasMap::new();
        aliases.insert(rid("R1"), [ip("10.0.0.1")]).unwrap();
        aliases.insert(rid("R2"), [ip("10.0.0.9")]).unwrap();
        let topo =
            build_router_topology(&[trace("t1", &["10.0.0.1", "*", "*", "10.0.0.9"])], &aliases)
                .unwrap();
        let path = &topo.paths(asn(9498))[0];
        assert_eq!(path.len(), 4);
        assert_eq!(path[0], rid("R1"));
        assert!(path[1].is_anonymous() && path[2].is_anonymous());
        assert_ne!(path[1], path[2]);
        assert_eq!(path[3], rid("R2"));
    }

    #[test]
    fn alias_conflict_detected() {
        let mut aliases = AliasMap::new();
        aliases.insert(rid("R1"), [ip("10.0.0.1")]).unwrap();
        aliases.insert(rid("R1"), [ip("10.0.0.1")]).unwrap();
        assert_eq!(
            aliases.insert(rid("R2"), [ip("10.0.0.1")]),
            Err(IntraAsError::AliasConflict(ip("10.0.0.1")))
        );
    }

    #[test]
    fn shared_router_path_count() {
        let mut aliases = AliasMap::new();
        aliases.insert(rid("R5"), [ip("10.5.0.1"), ip("10.5.0.2")]).unwrap();
        let traces = [
            trace("a", &["10.1.0.1", "10.5.0.1"]),
            trace("b", &["10.5.0.2", "10.2.0.1"]),
            trace("c", &["10.3.0.1", "10.5.0.1", "10.4.0.1"]),
        ];
        let topo = build_router_topology(&traces, &aliases).unwrap();
        assert_eq!(topo.path_counts(asn(9498))[&rid("R5")], 3);
    }

    #[test]
    fn edge_core_examples() {
        let ec = classify_edge_core(&[rpath(&["R1", "R2", "R3"])]);
        assert_eq!(ec.edge, [rid("R1"), rid("R3")].into_iter().collect());
        assert_eq!(ec.core, [rid("R2")].into_iter().collect());

        let ec = classify_edge_core(&[rpath(&["R1"])]);
        assert_eq!(ec.edge.len(), 1);
        assert!(ec.core.is_empty());

        // R2 is interior on one path and last hop on another
        let ec = classify_edge_core(&[
            rpath(&["R1", "R2", "R3"]),
            rpath(&["R4", "R2"]),
            rpath(&["R5", "R6", "R3"]),
        ]);
        assert_eq!(
            ec.edge,
            ["R1", "R2", "R3", "R4", "R5"].iter().map(|s| rid(s)).collect()
        );
        assert_eq!(ec.core, [rid("R6")].into_iter().collect());
        assert!(ec.edge.is_disjoint(&ec.core));
    }

    #[test]
    fn heavy_hitter_examples() {
        let paths = vec![
            rpath(&["A", "HUB", "B"]),
            rpath(&["C", "HUB"]),
            rpath(&["HUB", "D", "E"]),
        ];
        assert_eq!(heavy_hitters(&paths, 0.9).unwrap().routers, vec![rid("HUB")]);

        let disjoint: Vec<RouterPath> = (0..10).map(|i| rpath(&[&format!("R{i}")])).collect();
        let hh = heavy_hitters(&disjoint, 0.9).unwrap();
        assert_eq!(hh.len(), 9);
        assert_eq!(hh.covered_paths, 9);

        assert!(matches!(
            heavy_hitters(&paths, 0.0),
            Err(IntraAsError::InvalidThreshold(_))
        ));
        assert!(heavy_hitters(&paths, 1.5).is_err());
    }

    #[test]
    fn selection_prefers_heavy_hitters_when_fewer() {
        // 5 edge routers on 4 paths each; three core routers cover 6, 5 and 4
        let paths = vec![
            rpath(&["E1", "C1", "E2"]),
            rpath(&["E3", "C1", "E4"]),
            rpath(&["E5", "C1", "E1"]),
            rpath(&["E2", "C1", "C2", "E3"]),
            rpath(&["E4", "C1", "C2", "E5"]),
            rpath(&["E1", "C1", "C2", "E2"]),
            rpath(&["E3", "C2", "C3", "E4"]),
            rpath(&["E5", "C2", "C3", "E1"]),
            rpath(&["E2", "C3", "E3"]),
            rpath(&["E4", "C3", "E5"]),
        ];
        let sel = analyze_as(asn(1), &paths, 0.9).unwrap();
        assert_eq!(sel.edge_count, 5);
        assert_eq!(sel.core_count, 3);
        assert_eq!(sel.heavy_hitter_count, 3);
        assert_eq!(sel.rule, FilterRule::HeavyHitterSet);
        assert_eq!(sel.selected, vec![rid("C1"), rid("C2"), rid("C3")]);
        assert!(sel.coverage_fraction >= 0.9);
    }

    #[test]
    fn edge_set_wins_a_tie() {
        // E1 alone covers 2 of 3 paths, so H = 2 = E
        let paths = vec![rpath(&["E1"]), rpath(&["E2"]), rpath(&["E1"])];
        let sel = analyze_as(asn(1), &paths, 0.9).unwrap();
        assert_eq!(sel.rule, FilterRule::EdgeSet);
        assert_eq!(sel.selected.len(), 2);
        assert_eq!(sel.coverage_fraction, 1.0);
    }

    #[test]
    fn rule_choice_from_counts() {
        assert_eq!(FilterRule::choose(1782, 5192), FilterRule::EdgeSet);
        assert_eq!(FilterRule::choose(1779, 6434), FilterRule::EdgeSet);
        assert_eq!(FilterRule::choose(5, 3), FilterRule::HeavyHitterSet);
        assert_eq!(FilterRule::choose(4, 4), FilterRule::EdgeSet);
    }

    #[test]
    fn redaction_is_stable_and_hides_addresses() {
        let a = rid("10.0.0.1").redacted();
        assert_eq!(a, rid("10.0.0.1").redacted());
        assert!(!a.as_str().contains("10.0"));
        assert_eq!(a.as_str().len(), 14);
    }
}
