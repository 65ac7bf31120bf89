//! Core domain types: AS numbers, IPv4 prefixes, the relationship-annotated
//! AS graph, paths and inferred routes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid AS number `{0}`")]
    InvalidAsn(String),
    #[error("invalid IPv4 prefix `{0}`")]
    InvalidPrefix(String),
    #[error("IPv6 prefix `{0}` is not supported")]
    Ipv6Unsupported(String),
    #[error("invalid country code `{0}`")]
    InvalidCountry(String),
    #[error("self-loop edge on AS{0}")]
    SelfLoop(Asn),
    #[error("conflicting relationships for AS pair ({0}, {1})")]
    ConflictingRelationship(Asn, Asn),
    #[error("AS{0} and AS{1} are not adjacent")]
    MissingEdge(Asn, Asn),
    #[error("path is empty")]
    EmptyPath,
    #[error("path visits AS{0} more than once")]
    PathLoop(Asn),
    #[error("AS{0} is not in the graph")]
    UnknownAsn(Asn),
}

/// Autonomous system number. Zero is reserved and rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Asn(u32);

impl Asn {
    pub fn new(value: u32) -> Result<Self, ModelError> {
        if value == 0 {
            return Err(ModelError::InvalidAsn(value.to_string()));
        }
        Ok(Asn(value))
    }

    pub const fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Asn {
    type Error = ModelError;
    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Asn::new(value)
    }
}

impl From<Asn> for u32 {
    fn from(asn: Asn) -> u32 {
        asn.0
    }
}

impl FromStr for Asn {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let digits = trimmed
            .strip_prefix("AS")
            .or_else(|| trimmed.strip_prefix("as"))
            .unwrap_or(trimmed);
        digits
            .parse::<u32>()
            .map_err(|_| ModelError::InvalidAsn(s.to_string()))
            .and_then(Asn::new)
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// ISO-3166 alpha-2 country code, stored upper-case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        // constructed only from ASCII letters
        std::str::from_utf8(&self.0).unwrap_or("??")
    }
}

impl FromStr for CountryCode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.trim().as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_alphabetic) {
            return Err(ModelError::InvalidCountry(s.to_string()));
        }
        Ok(CountryCode([
            bytes[0].to_ascii_uppercase(),
            bytes[1].to_ascii_uppercase(),
        ]))
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// IPv4 network prefix with all host bits cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    network: u32,
    len: u8,
}

impl Prefix {
    pub fn new(network: Ipv4Addr, len: u8) -> Result<Self, ModelError> {
        let bits = u32::from(network);
        if len > 32 || bits & !Self::mask(len) != 0 {
            return Err(ModelError::InvalidPrefix(format!("{network}/{len}")));
        }
        Ok(Prefix { network: bits, len })
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - u32::from(len))
        }
    }

    pub fn network(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.network)
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    /// Numeric value of the network address, used for deterministic tie-breaks.
    pub fn numeric(&self) -> u32 {
        self.network
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & Self::mask(self.len) == self.network
    }
}

impl FromStr for Prefix {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.contains(':') {
            return Err(ModelError::Ipv6Unsupported(s.to_string()));
        }
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| ModelError::InvalidPrefix(s.to_string()))?;
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| ModelError::InvalidPrefix(s.to_string()))?;
        let len: u8 = len
            .parse()
            .map_err(|_| ModelError::InvalidPrefix(s.to_string()))?;
        Prefix::new(addr, len).map_err(|_| ModelError::InvalidPrefix(s.to_string()))
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.len)
    }
}

impl Serialize for Prefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Business relationship carried by a stored edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relationship {
    ProviderToCustomer,
    Peer,
}

/// Relationship of the neighbour a route was learned from, seen from the
/// route holder. The derived order is the preference order:
/// `Provider < Peer < Customer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteClass {
    Provider,
    Peer,
    Customer,
}

impl RouteClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RouteClass::Customer => "customer",
            RouteClass::Peer => "peer",
            RouteClass::Provider => "provider",
        }
    }
}

impl fmt::Display for RouteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouteClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "customer" => Ok(RouteClass::Customer),
            "peer" => Ok(RouteClass::Peer),
            "provider" => Ok(RouteClass::Provider),
            other => Err(format!("unknown route class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Known,
    Inferred,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Known => "known",
            Provenance::Inferred => "inferred",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "known" => Ok(Provenance::Known),
            "inferred" => Ok(Provenance::Inferred),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// Loop-free AS path from a source AS (first hop) to an origin of `target`
/// (last hop).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ASPath {
    hops: Vec<Asn>,
    target: Prefix,
}

impl ASPath {
    pub fn new(hops: Vec<Asn>, target: Prefix) -> Result<Self, ModelError> {
        if hops.is_empty() {
            return Err(ModelError::EmptyPath);
        }
        let mut seen = BTreeSet::new();
        for &hop in &hops {
            if !seen.insert(hop) {
                return Err(ModelError::PathLoop(hop));
            }
        }
        Ok(ASPath { hops, target })
    }

    pub fn hops(&self) -> &[Asn] {
        &self.hops
    }

    pub fn target(&self) -> Prefix {
        self.target
    }

    pub fn source(&self) -> Asn {
        self.hops[0]
    }

    pub fn origin(&self) -> Asn {
        self.hops[self.hops.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.hops.contains(&asn)
    }
}

/// Best route held by `source` towards `target`.
///
/// Origin ASes hold a single-hop route of class [`RouteClass::Customer`]: it
/// is the most preferred kind and is exported to every neighbour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferredRoute {
    pub source: Asn,
    pub target: Prefix,
    pub path: ASPath,
    pub class: RouteClass,
    pub provenance: Provenance,
}

impl InferredRoute {
    pub fn hop_count(&self) -> usize {
        self.path.len()
    }

    pub fn next_hop(&self) -> Option<Asn> {
        self.path.hops().get(1).copied()
    }
}

/// A stored edge, normalized so that peers are kept as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    ProviderToCustomer { provider: Asn, customer: Asn },
    Peer(Asn, Asn),
}

impl Link {
    pub fn new(a: Asn, b: Asn, rel: Relationship) -> Self {
        match rel {
            Relationship::ProviderToCustomer => Link::ProviderToCustomer {
                provider: a,
                customer: b,
            },
            Relationship::Peer => Link::Peer(a.min(b), a.max(b)),
        }
    }

    pub fn endpoints(&self) -> (Asn, Asn) {
        match *self {
            Link::ProviderToCustomer { provider, customer } => (provider, customer),
            Link::Peer(a, b) => (a, b),
        }
    }

    pub fn relationship(&self) -> Relationship {
        match self {
            Link::ProviderToCustomer { .. } => Relationship::ProviderToCustomer,
            Link::Peer(..) => Relationship::Peer,
        }
    }

    fn pair(&self) -> (Asn, Asn) {
        let (a, b) = self.endpoints();
        (a.min(b), a.max(b))
    }
}

/// Mutable accumulator that validates edges before freezing into an [`ASGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    nodes: BTreeSet<Asn>,
    links: BTreeMap<(Asn, Asn), Link>,
    country: BTreeMap<Asn, CountryCode>,
    origins: BTreeMap<Prefix, BTreeSet<Asn>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, asn: Asn) -> &mut Self {
        self.nodes.insert(asn);
        self
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.nodes.contains(&asn)
    }

    /// Adds an edge. Re-adding the same relationship is a no-op; a different
    /// relationship for the same unordered pair is an error.
    pub fn add_link(&mut self, link: Link) -> Result<&mut Self, ModelError> {
        let (a, b) = link.endpoints();
        if a == b {
            return Err(ModelError::SelfLoop(a));
        }
        match self.links.get(&link.pair()) {
            Some(existing) if *existing != link => {
                return Err(ModelError::ConflictingRelationship(a, b));
            }
            Some(_) => {}
            None => {
                self.links.insert(link.pair(), link);
            }
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        Ok(self)
    }

    pub fn add_edge(&mut self, a: Asn, b: Asn, rel: Relationship) -> Result<&mut Self, ModelError> {
        self.add_link(Link::new(a, b, rel))
    }

    pub fn provider_customer(&mut self, provider: u32, customer: u32) -> Result<&mut Self, ModelError> {
        self.add_edge(Asn::new(provider)?, Asn::new(customer)?, Relationship::ProviderToCustomer)
    }

    pub fn peer(&mut self, a: u32, b: u32) -> Result<&mut Self, ModelError> {
        self.add_edge(Asn::new(a)?, Asn::new(b)?, Relationship::Peer)
    }

    pub fn set_country(&mut self, asn: Asn, cc: CountryCode) -> &mut Self {
        self.nodes.insert(asn);
        self.country.insert(asn, cc);
        self
    }

    pub fn add_origin(&mut self, prefix: Prefix, asn: Asn) -> &mut Self {
        self.nodes.insert(asn);
        self.origins.entry(prefix).or_default().insert(asn);
        self
    }

    pub fn build(self) -> ASGraph {
        let asns: Vec<Asn> = self.nodes.into_iter().collect();
        let index: HashMap<Asn, u32> = asns
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, i as u32))
            .collect();
        let n = asns.len();
        let mut providers = vec![Vec::new(); n];
        let mut customers = vec![Vec::new(); n];
        let mut peers = vec![Vec::new(); n];
        for link in self.links.values() {
            match *link {
                Link::ProviderToCustomer { provider, customer } => {
                    let (p, c) = (index[&provider], index[&customer]);
                    customers[p as usize].push(c);
                    providers[c as usize].push(p);
                }
                Link::Peer(a, b) => {
                    let (a, b) = (index[&a], index[&b]);
                    peers[a as usize].push(b);
                    peers[b as usize].push(a);
                }
            }
        }
        for list in providers
            .iter_mut()
            .chain(customers.iter_mut())
            .chain(peers.iter_mut())
        {
            list.sort_unstable();
        }
        ASGraph {
            asns,
            index,
            providers,
            customers,
            peers,
            link_count: self.links.len(),
            country: self.country,
            origins: self.origins,
        }
    }
}

/// Immutable relationship-annotated AS topology with prefix origins and
/// optional country tags.
///
/// Nodes are stored densely in ascending ASN order, so comparing node indices
/// orders ASes by number.
#[derive(Debug, Clone)]
pub struct ASGraph {
    asns: Vec<Asn>,
    index: HashMap<Asn, u32>,
    providers: Vec<Vec<u32>>,
    customers: Vec<Vec<u32>>,
    peers: Vec<Vec<u32>>,
    link_count: usize,
    country: BTreeMap<Asn, CountryCode>,
    origins: BTreeMap<Prefix, BTreeSet<Asn>>,
}

impl ASGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    /// Returns a builder pre-populated with this graph's contents.
    pub fn to_builder(&self) -> GraphBuilder {
        let mut b = GraphBuilder::new();
        b.nodes = self.asns.iter().copied().collect();
        for link in self.links() {
            b.links.insert(link.pair(), link);
        }
        b.country = self.country.clone();
        b.origins = self.origins.clone();
        b
    }

    pub fn len(&self) -> usize {
        self.asns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asns.is_empty()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.index.contains_key(&asn)
    }

    pub fn asns(&self) -> &[Asn] {
        &self.asns
    }

    pub fn index_of(&self, asn: Asn) -> Option<usize> {
        self.index.get(&asn).map(|&i| i as usize)
    }

    pub fn asn_at(&self, idx: usize) -> Asn {
        self.asns[idx]
    }

    pub(crate) fn provider_indices(&self, idx: usize) -> &[u32] {
        &self.providers[idx]
    }

    pub(crate) fn customer_indices(&self, idx: usize) -> &[u32] {
        &self.customers[idx]
    }

    pub(crate) fn peer_indices(&self, idx: usize) -> &[u32] {
        &self.peers[idx]
    }

    fn resolve<'a>(&'a self, list: &'a [Vec<u32>], asn: Asn) -> impl Iterator<Item = Asn> + 'a {
        self.index_of(asn)
            .map(|i| list[i].as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&j| self.asns[j as usize])
    }

    pub fn providers_of(&self, asn: Asn) -> impl Iterator<Item = Asn> + '_ {
        self.resolve(&self.providers, asn)
    }

    pub fn customers_of(&self, asn: Asn) -> impl Iterator<Item = Asn> + '_ {
        self.resolve(&self.customers, asn)
    }

    pub fn peers_of(&self, asn: Asn) -> impl Iterator<Item = Asn> + '_ {
        self.resolve(&self.peers, asn)
    }

    /// All neighbours in ascending ASN order.
    pub fn neighbors_of(&self, asn: Asn) -> Vec<Asn> {
        let mut all: Vec<Asn> = self
            .providers_of(asn)
            .chain(self.customers_of(asn))
            .chain(self.peers_of(asn))
            .collect();
        all.sort_unstable();
        all
    }

    pub fn degree(&self, asn: Asn) -> usize {
        self.index_of(asn)
            .map(|i| self.providers[i].len() + self.customers[i].len() + self.peers[i].len())
            .unwrap_or(0)
    }

    /// Relationship of `to` as seen from `from`: `Customer` when `to` is a
    /// customer of `from`, `Provider` when it is a provider, `Peer` otherwise.
    pub fn relationship_of(&self, from: Asn, to: Asn) -> Result<RouteClass, ModelError> {
        let (f, t) = match (self.index_of(from), self.index_of(to)) {
            (Some(f), Some(t)) => (f as u32, t as u32),
            _ => return Err(ModelError::MissingEdge(from, to)),
        };
        self.relationship_by_index(f as usize, t)
            .ok_or(ModelError::MissingEdge(from, to))
    }

    pub(crate) fn relationship_by_index(&self, from: usize, to: u32) -> Option<RouteClass> {
        if self.customers[from].binary_search(&to).is_ok() {
            Some(RouteClass::Customer)
        } else if self.providers[from].binary_search(&to).is_ok() {
            Some(RouteClass::Provider)
        } else if self.peers[from].binary_search(&to).is_ok() {
            Some(RouteClass::Peer)
        } else {
            None
        }
    }

    /// Every stored edge exactly once, in a deterministic order.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::with_capacity(self.link_count);
        for (i, custs) in self.customers.iter().enumerate() {
            for &c in custs {
                out.push(Link::ProviderToCustomer {
                    provider: self.asns[i],
                    customer: self.asns[c as usize],
                });
            }
        }
        for (i, peers) in self.peers.iter().enumerate() {
            for &p in peers {
                if (p as usize) > i {
                    out.push(Link::Peer(self.asns[i], self.asns[p as usize]));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn country_of(&self, asn: Asn) -> Option<CountryCode> {
        self.country.get(&asn).copied()
    }

    pub fn countries(&self) -> &BTreeMap<Asn, CountryCode> {
        &self.country
    }

    pub fn has_country_data(&self) -> bool {
        !self.country.is_empty()
    }

    pub fn origins(&self) -> &BTreeMap<Prefix, BTreeSet<Asn>> {
        &self.origins
    }

    pub fn origins_of(&self, prefix: Prefix) -> Option<&BTreeSet<Asn>> {
        self.origins.get(&prefix).filter(|set| !set.is_empty())
    }
}

/// Checks the valley-free property: read from source to origin, the path
/// climbs to providers, crosses at most one peer link, then only descends
/// to customers.
pub fn valley_free(path: &ASPath, graph: &ASGraph) -> Result<bool, ModelError> {
    hops_valley_free(path.hops(), graph)
}

pub(crate) fn hops_valley_free(hops: &[Asn], graph: &ASGraph) -> Result<bool, ModelError> {
    let mut descending = false;
    let mut ok = true;
    for pair in hops.windows(2) {
        match graph.relationship_of(pair[0], pair[1])? {
            RouteClass::Provider => {
                if descending {
                    ok = false;
                }
            }
            RouteClass::Peer => {
                if descending {
                    ok = false;
                }
                descending = true;
            }
            RouteClass::Customer => descending = true,
        }
    }
    Ok(ok)
}

/// Free-function form of [`ASGraph::relationship_of`].
pub fn relationship_of(graph: &ASGraph, from: Asn, to: Asn) -> Result<RouteClass, ModelError> {
    graph.relationship_of(from, to)
}

#[cfg(test)]
pub(crate) fn asn(v: u32) -> Asn {
    Asn::new(v).unwrap()
}
