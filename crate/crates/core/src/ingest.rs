//! Line-oriented text formats for every input dataset.
//!
//! | dataset            | line format                               |
//! |--------------------|-------------------------------------------|
//! | relationships      | `<asn>|<asn>|<rel>` (`-1` p2c, `0` peer)  |
//! | known paths        | `<prefix> <asn> <asn> ... <asn>`          |
//! | prefix origins     | `<prefix>|<asn>`                          |
//! | countries          | `<asn>|<CC>`                              |
//! | resolver inventory | `<prefix>|<asn>|<count>`                  |
//! | router traces      | `<asn>|<trace-id>|<ip_or_*>,<ip_or_*>...` |
//! | aliases            | `<router-id>|<ip>,<ip>,...`               |
//! | targets            | `<prefix>`                                |
//!
//! Blank lines and lines starting with `#` are ignored; trailing whitespace
//! is trimmed. IPv6 prefixes are skipped with a warning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::intraas::{AliasMap, Hop, IntraAsError, RouterId, RouterTrace};
use crate::model::{
    ASGraph, ASPath, Asn, CountryCode, GraphBuilder, Link, ModelError, Prefix, Relationship,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("conflicting relationships for AS pair ({0}, {1})")]
    ConflictingRelationship(Asn, Asn),
    #[error("AS{0} is tagged with two different countries")]
    ConflictingCountry(Asn),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    IntraAs(#[from] IntraAsError),
}

fn parse_err(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

/// Yields `(line_number, trimmed_line)` for every non-comment, non-blank line.
fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), IngestError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(IngestError::Io(e))),
        Ok(line) => {
            let trimmed = line.trim_end();
            if trimmed.trim_start().is_empty() || trimmed.trim_start().starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, trimmed.to_string())))
            }
        }
    })
}

fn asn_field(line: usize, s: &str) -> Result<Asn, IngestError> {
    s.trim()
        .parse::<Asn>()
        .map_err(|e| parse_err(line, e.to_string()))
}

/// `Ok(None)` means an IPv6 prefix that should be skipped.
fn prefix_field(line: usize, s: &str) -> Result<Option<Prefix>, IngestError> {
    match s.trim().parse::<Prefix>() {
        Ok(p) => Ok(Some(p)),
        Err(ModelError::Ipv6Unsupported(_)) => Ok(None),
        Err(e) => Err(parse_err(line, e.to_string())),
    }
}

fn split_fields(line: usize, s: &str, expected: usize) -> Result<Vec<&str>, IngestError> {
    let fields: Vec<&str> = s.split('|').collect();
    if fields.len() < expected {
        return Err(parse_err(
            line,
            format!("expected {expected} `|`-separated fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Parses AS relationships. Codes other than `-1` and `0` (siblings,
/// unknown) are stored as peer links with a warning. Extra trailing fields
/// are ignored.
pub fn read_relationships<R: BufRead>(reader: R) -> Result<Vec<Link>, IngestError> {
    let mut links: BTreeMap<(Asn, Asn), Link> = BTreeMap::new();
    let mut remapped = 0usize;
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 3)?;
        let a = asn_field(line, fields[0])?;
        let b = asn_field(line, fields[1])?;
        let code: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad relationship code `{}`", fields[2])))?;
        let rel = match code {
            -1 => Relationship::ProviderToCustomer,
            0 => Relationship::Peer,
            _ => {
                remapped += 1;
                Relationship::Peer
            }
        };
        if a == b {
            return Err(parse_err(line, format!("self-loop on AS{a}")));
        }
        let link = Link::new(a, b, rel);
        let key = (a.min(b), a.max(b));
        match links.get(&key) {
            Some(existing) if *existing != link => {
                return Err(IngestError::ConflictingRelationship(key.0, key.1));
            }
            _ => {
                links.insert(key, link);
            }
        }
    }
    if remapped > 0 {
        log::warn!("{remapped} relationship lines had sibling/unknown codes; stored as peer links");
    }
    let mut out: Vec<Link> = links.into_values().collect();
    out.sort_unstable();
    Ok(out)
}

pub fn write_relationships<W: Write>(graph: &ASGraph, mut w: W) -> io::Result<()> {
    for link in graph.links() {
        match link {
            Link::ProviderToCustomer { provider, customer } => {
                writeln!(w, "{provider}|{customer}|-1")?
            }
            Link::Peer(a, b) => writeln!(w, "{a}|{b}|0")?,
        }
    }
    Ok(())
}

/// Observed paths plus counters for what was discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnownPaths {
    pub paths: Vec<ASPath>,
    /// Paths that still loop after prepending is collapsed.
    pub dropped_loops: usize,
    pub skipped_ipv6: usize,
}

/// Parses `<prefix> <asn> ... <asn>` lines (source first, origin last).
/// Prepending is collapsed; looping paths are dropped and counted.
pub fn read_known_paths<R: BufRead>(reader: R) -> Result<KnownPaths, IngestError> {
    let mut out = KnownPaths::default();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let mut fields = text.split_whitespace();
        let prefix = fields
            .next()
            .ok_or_else(|| parse_err(line, "missing prefix"))?;
        let hops: Vec<Asn> = fields
            .map(|f| asn_field(line, f))
            .collect::<Result<_, _>>()?;
        let Some(prefix) = prefix_field(line, prefix)? else {
            out.skipped_ipv6 += 1;
            continue;
        };
        if hops.is_empty() {
            return Err(parse_err(line, "path has no AS hops"));
        }
        let mut collapsed = hops;
        collapsed.dedup();
        match ASPath::new(collapsed, prefix) {
            Ok(path) => out.paths.push(path),
            Err(ModelError::PathLoop(_)) => out.dropped_loops += 1,
            Err(e) => return Err(parse_err(line, e.to_string())),
        }
    }
    if out.dropped_loops > 0 {
        log::warn!("dropped {} looping known paths", out.dropped_loops);
    }
    if out.skipped_ipv6 > 0 {
        log::warn!("skipped {} IPv6 known paths", out.skipped_ipv6);
    }
    Ok(out)
}

pub fn write_known_paths<W: Write>(paths: &[ASPath], mut w: W) -> io::Result<()> {
    for path in paths {
        write!(w, "{}", path.target())?;
        for hop in path.hops() {
            write!(w, " {hop}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses `<prefix>|<asn>`; repeated prefixes union their origin sets.
pub fn read_prefix_origins<R: BufRead>(
    reader: R,
) -> Result<BTreeMap<Prefix, BTreeSet<Asn>>, IngestError> {
    let mut origins: BTreeMap<Prefix, BTreeSet<Asn>> = BTreeMap::new();
    let mut skipped = 0usize;
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 2)?;
        let asn = asn_field(line, fields[1])?;
        match prefix_field(line, fields[0])? {
            Some(prefix) => {
                origins.entry(prefix).or_default().insert(asn);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} IPv6 prefix origins");
    }
    Ok(origins)
}

pub fn write_prefix_origins<W: Write>(
    origins: &BTreeMap<Prefix, BTreeSet<Asn>>,
    mut w: W,
) -> io::Result<()> {
    for (prefix, set) in origins {
        for asn in set {
            writeln!(w, "{prefix}|{asn}")?;
        }
    }
    Ok(())
}

pub fn read_countries<R: BufRead>(reader: R) -> Result<BTreeMap<Asn, CountryCode>, IngestError> {
    let mut out = BTreeMap::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 2)?;
        let asn = asn_field(line, fields[0])?;
        let cc: CountryCode = fields[1]
            .parse()
            .map_err(|e: ModelError| parse_err(line, e.to_string()))?;
        if let Some(existing) = out.insert(asn, cc) {
            if existing != cc {
                return Err(IngestError::ConflictingCountry(asn));
            }
        }
    }
    Ok(out)
}

pub fn write_countries<W: Write>(countries: &BTreeMap<Asn, CountryCode>, mut w: W) -> io::Result<()> {
    for (asn, cc) in countries {
        writeln!(w, "{asn}|{cc}")?;
    }
    Ok(())
}

/// Open-resolver counts per AS and prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolverInventory {
    entries: BTreeMap<Asn, BTreeMap<Prefix, u64>>,
}

impl ResolverInventory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds resolvers; repeated `(asn, prefix)` entries are summed.
    pub fn add(&mut self, asn: Asn, prefix: Prefix, count: u64) {
        *self
            .entries
            .entry(asn)
            .or_default()
            .entry(prefix)
            .or_insert(0) += count;
    }

    pub fn get(&self, asn: Asn, prefix: Prefix) -> Option<u64> {
        self.entries.get(&asn).and_then(|m| m.get(&prefix)).copied()
    }

    pub fn by_as(&self) -> &BTreeMap<Asn, BTreeMap<Prefix, u64>> {
        &self.entries
    }

    pub fn total_resolvers(&self) -> u64 {
        self.entries.values().flat_map(|m| m.values()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Asn, Prefix, u64)> + '_ {
        self.entries
            .iter()
            .flat_map(|(&a, m)| m.iter().map(move |(&p, &c)| (a, p, c)))
    }
}

pub fn read_resolver_inventory<R: BufRead>(reader: R) -> Result<ResolverInventory, IngestError> {
    let mut inv = ResolverInventory::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 3)?;
        let asn = asn_field(line, fields[1])?;
        let count: u64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad resolver count `{}`", fields[2])))?;
        match prefix_field(line, fields[0])? {
            Some(prefix) => inv.add(asn, prefix, count),
            None => log::warn!("line {line}: skipping IPv6 resolver prefix"),
        }
    }
    Ok(inv)
}

pub fn write_resolver_inventory<W: Write>(inv: &ResolverInventory, mut w: W) -> io::Result<()> {
    let mut rows: Vec<(Prefix, Asn, u64)> = inv.iter().map(|(a, p, c)| (p, a, c)).collect();
    rows.sort();
    for (prefix, asn, count) in rows {
        writeln!(w, "{prefix}|{asn}|{count}")?;
    }
    Ok(())
}

pub fn read_router_traces<R: BufRead>(reader: R) -> Result<Vec<RouterTrace>, IngestError> {
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 3)?;
        let asn = asn_field(line, fields[0])?;
        let trace_id = fields[1].trim().to_string();
        if trace_id.is_empty() {
            return Err(parse_err(line, "empty trace id"));
        }
        let hops = fields[2]
            .split(',')
            .map(|h| match h.trim() {
                "*" => Ok(Hop::Anonymous),
                other => other
                    .parse::<Ipv4Addr>()
                    .map(Hop::Addr)
                    .map_err(|_| parse_err(line, format!("bad hop `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RouterTrace {
            asn,
            trace_id,
            hops,
        });
    }
    Ok(out)
}

pub fn write_router_traces<W: Write>(traces: &[RouterTrace], mut w: W) -> io::Result<()> {
    for t in traces {
        let hops: Vec<String> = t.hops.iter().map(ToString::to_string).collect();
        writeln!(w, "{}|{}|{}", t.asn, t.trace_id, hops.join(","))?;
    }
    Ok(())
}

pub fn read_aliases<R: BufRead>(reader: R) -> Result<AliasMap, IngestError> {
    let mut map = AliasMap::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let fields = split_fields(line, &text, 2)?;
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty router id"));
        }
        let ips = fields[1]
            .split(',')
            .map(|ip| {
                ip.trim()
                    .parse::<Ipv4Addr>()
                    .map_err(|_| parse_err(line, format!("bad address `{ip}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        map.insert(RouterId::new(id), ips)?;
    }
    Ok(map)
}

pub fn write_aliases<W: Write>(aliases: &AliasMap, mut w: W) -> io::Result<()> {
    for (id, ips) in aliases.routers() {
        let ips: Vec<String> = ips.iter().map(ToString::to_string).collect();
        writeln!(w, "{}|{}", id, ips.join(","))?;
    }
    Ok(())
}

pub fn read_targets<R: BufRead>(reader: R) -> Result<Vec<Prefix>, IngestError> {
    let mut out = BTreeSet::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        if let Some(p) = prefix_field(line, &text)? {
            out.insert(p);
        }
    }
    Ok(out.into_iter().collect())
}

pub fn write_targets<W: Write>(targets: &[Prefix], mut w: W) -> io::Result<()> {
    for t in targets {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

/// Opens `path` and runs `parse` on it, attaching the path to any error.
pub fn load_file<T, F>(path: &Path, parse: F) -> Result<T, IngestError>
where
    F: FnOnce(BufReader<File>) -> Result<T, IngestError>,
{
    let wrap = |e: IngestError| IngestError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    };
    let file = File::open(path).map_err(|e| wrap(e.into()))?;
    parse(BufReader::new(file)).map_err(wrap)
}

pub fn load_relationships(path: &Path) -> Result<Vec<Link>, IngestError> {
    load_file(path, read_relationships)
}

pub fn load_known_paths(path: &Path) -> Result<KnownPaths, IngestError> {
    load_file(path, read_known_paths)
}

pub fn load_prefix_origins(path: &Path) -> Result<BTreeMap<Prefix, BTreeSet<Asn>>, IngestError> {
    load_file(path, read_prefix_origins)
}

pub fn load_countries(path: &Path) -> Result<BTreeMap<Asn, CountryCode>, IngestError> {
    load_file(path, read_countries)
}

pub fn load_resolver_inventory(path: &Path) -> Result<ResolverInventory, IngestError> {
    load_file(path, read_resolver_inventory)
}

/// File locations of a dataset bundle. Missing entries load as empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetPaths {
    pub relationships: Option<PathBuf>,
    pub known_paths: Option<PathBuf>,
    pub prefix_origins: Option<PathBuf>,
    pub countries: Option<PathBuf>,
    pub resolvers: Option<PathBuf>,
    pub router_traces: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub targets: Option<PathBuf>,
}

impl DatasetPaths {
    pub const RELATIONSHIPS: &'static str = "relationships.txt";
    pub const KNOWN_PATHS: &'static str = "known_paths.txt";
    pub const PREFIX_ORIGINS: &'static str = "prefix_origins.txt";
    pub const COUNTRIES: &'static str = "countries.txt";
    pub const RESOLVERS: &'static str = "resolvers.txt";
    pub const ROUTER_TRACES: &'static str = "router_traces.txt";
    pub const ALIASES: &'static str = "aliases.txt";
    pub const TARGETS: &'static str = "targets.txt";

    /// Standard file names inside `dir`, keeping only those that exist.
    pub fn in_dir(dir: &Path) -> Self {
        let pick = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            relationships: pick(Self::RELATIONSHIPS),
            known_paths: pick(Self::KNOWN_PATHS),
            prefix_origins: pick(Self::PREFIX_ORIGINS),
            countries: pick(Self::COUNTRIES),
            resolvers: pick(Self::RESOLVERS),
            router_traces: pick(Self::ROUTER_TRACES),
            aliases: pick(Self::ALIASES),
            targets: pick(Self::TARGETS),
        }
    }

    /// `(role, path)` for every configured file.
    pub fn files(&self) -> Vec<(&'static str, &Path)> {
        [
            ("relationships", &self.relationships),
            ("known_paths", &self.known_paths),
            ("prefix_origins", &self.prefix_origins),
            ("countries", &self.countries),
            ("resolvers", &self.resolvers),
            ("router_traces", &self.router_traces),
            ("aliases", &self.aliases),
            ("targets", &self.targets),
        ]
        .into_iter()
        .filter_map(|(role, p)| p.as_deref().map(|p| (role, p)))
        .collect()
    }
}

/// Every input an analysis may need, cross-referenced and validated.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: ASGraph,
    pub known_paths: Vec<ASPath>,
    pub resolver_inventory: ResolverInventory,
    pub router_traces: Vec<RouterTrace>,
    pub alias_map: AliasMap,
    pub target_prefixes: Vec<Prefix>,
}

/// What happened while assembling a bundle.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    pub nodes: usize,
    pub links: usize,
    pub prefixes: usize,
    pub known_paths: usize,
    pub dropped_loops: usize,
    pub skipped_ipv6: usize,
    /// ASNs seen only in known paths, added as isolated nodes.
    pub added_from_paths: usize,
    pub tagged_ases: usize,
    pub resolver_prefixes: usize,
    pub router_traces: usize,
    pub alias_routers: usize,
    pub targets: usize,
}

/// Raw parsed inputs before cross-referencing.
#[derive(Debug, Clone, Default)]
pub struct RawDatasets {
    pub links: Vec<Link>,
    pub known: KnownPaths,
    pub origins: BTreeMap<Prefix, BTreeSet<Asn>>,
    pub countries: BTreeMap<Asn, CountryCode>,
    pub resolvers: ResolverInventory,
    pub router_traces: Vec<RouterTrace>,
    pub aliases: AliasMap,
    pub targets: Option<Vec<Prefix>>,
}

impl DatasetBundle {
    pub fn load(paths: &DatasetPaths) -> Result<(DatasetBundle, LoadReport), IngestError> {
        let mut raw = RawDatasets::default();
        if let Some(p) = &paths.relationships {
            raw.links = load_relationships(p)?;
        }
        if let Some(p) = &paths.known_paths {
            raw.known = load_known_paths(p)?;
        }
        if let Some(p) = &paths.prefix_origins {
            raw.origins = load_prefix_origins(p)?;
        }
        if let Some(p) = &paths.countries {
            raw.countries = load_countries(p)?;
        }
        if let Some(p) = &paths.resolvers {
            raw.resolvers = load_resolver_inventory(p)?;
        }
        if let Some(p) = &paths.router_traces {
            raw.router_traces = load_file(p, read_router_traces)?;
        }
        if let Some(p) = &paths.aliases {
            raw.aliases = load_file(p, read_aliases)?;
        }
        if let Some(p) = &paths.targets {
            raw.targets = Some(load_file(p, read_targets)?);
        }
        Ok(Self::assemble(raw))
    }

    /// Cross-references raw inputs. ASNs seen only in known paths become
    /// isolated nodes. Without an explicit target list every originated
    /// prefix is a target.
    pub fn assemble(raw: RawDatasets) -> (DatasetBundle, LoadReport) {
        let mut builder = GraphBuilder::new();
        for link in &raw.links {
            builder
                .add_link(*link)
                .expect("relationship reader rejects conflicts and self-loops");
        }
        let mut added = 0;
        for path in &raw.known.paths {
            for &hop in path.hops() {
                if !builder.contains(hop) {
                    builder.add_node(hop);
                    added += 1;
                }
            }
        }
        if added > 0 {
            log::warn!("{added} ASNs appear only in known paths; added as isolated nodes");
        }
        for (prefix, set) in &raw.origins {
            for &asn in set {
                builder.add_origin(*prefix, asn);
            }
        }
        for (&asn, &cc) in &raw.countries {
            builder.set_country(asn, cc);
        }
        let graph = builder.build();
        let target_prefixes = raw
            .targets
            .unwrap_or_else(|| graph.origins().keys().copied().collect());
        let report = LoadReport {
            nodes: graph.len(),
            links: graph.link_count(),
            prefixes: graph.origins().len(),
            known_paths: raw.known.paths.len(),
            dropped_loops: raw.known.dropped_loops,
            skipped_ipv6: raw.known.skipped_ipv6,
            added_from_paths: added,
            tagged_ases: graph.countries().len(),
            resolver_prefixes: raw.resolvers.iter().count(),
            router_traces: raw.router_traces.len(),
            alias_routers: raw.aliases.len(),
            targets: target_prefixes.len(),
        };
        (
            DatasetBundle {
                graph,
                known_paths: raw.known.paths,
                resolver_inventory: raw.resolvers,
                router_traces: raw.router_traces,
                alias_map: raw.aliases,
                target_prefixes,
            },
            report,
        )
    }

    /// Writes every dataset under its standard file name in `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<DatasetPaths> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> io::Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        let mut w = create(DatasetPaths::RELATIONSHIPS)?;
        write_relationships(&self.graph, &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::KNOWN_PATHS)?;
        write_known_paths(&self.known_paths, &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::PREFIX_ORIGINS)?;
        write_prefix_origins(self.graph.origins(), &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::COUNTRIES)?;
        write_countries(self.graph.countries(), &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::RESOLVERS)?;
        write_resolver_inventory(&self.resolver_inventory, &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::ROUTER_TRACES)?;
        write_router_traces(&self.router_traces, &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::ALIASES)?;
        write_aliases(&self.alias_map, &mut w)?;
        w.flush()?;
        let mut w = create(DatasetPaths::TARGETS)?;
        write_targets(&self.target_prefixes, &mut w)?;
        w.flush()?;
        Ok(DatasetPaths::in_dir(dir))
    }
}
