//! Which ASes sit on the most paths, and what filtering there would cost.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ASGraph, Asn, CountryCode};
use crate::pathinfer::RoutingTable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChokepointError {
    #[error("country filtering requested but the graph carries no country tags")]
    MissingCountryData,
    #[error("threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),
    #[error("even the full interceptor set covers less than {threshold} of paths (max {max:.4})")]
    Unreachable { threshold: f64, max: f64 },
}

/// Country filter for interceptors or sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "country")]
pub enum Scope {
    #[default]
    All,
    Country(CountryCode),
}

impl Scope {
    pub fn admits(&self, graph: &ASGraph, asn: Asn) -> bool {
        match self {
            Scope::All => true,
            Scope::Country(cc) => graph.country_of(asn) == Some(*cc),
        }
    }

    fn check(&self, graph: &ASGraph) -> Result<(), ChokepointError> {
        match self {
            Scope::Country(_) if !graph.has_country_data() => Err(ChokepointError::MissingCountryData),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InterceptOptions {
    /// Which ASes may count as interceptors.
    pub scope: Scope,
    /// Which source ASes contribute paths.
    pub source_scope: Scope,
    /// Whether the path's own source AS counts as an interceptor.
    pub count_source: bool,
}

impl Default for InterceptOptions {
    fn default() -> Self {
        InterceptOptions {
            scope: Scope::All,
            source_scope: Scope::All,
            count_source: true,
        }
    }
}

/// Interceptor sets of a path population, stored flat.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathSets {
    offsets: Vec<usize>,
    members: Vec<Asn>,
}

impl PathSets {
    pub fn new() -> Self {
        PathSets {
            offsets: vec![0],
            members: Vec::new(),
        }
    }

    /// Adds one path; duplicate interceptors are collapsed.
    pub fn push<I: IntoIterator<Item = Asn>>(&mut self, interceptors: I) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        let start = self.members.len();
        self.members.extend(interceptors);
        self.members[start..].sort_unstable();
        let mut w = start;
        for r in start..self.members.len() {
            if w == start || self.members[r] != self.members[w - 1] {
                self.members[w] = self.members[r];
                w += 1;
            }
        }
        self.members.truncate(w);
        self.offsets.push(w);
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[Asn] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[Asn]> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    fn append(&mut self, other: PathSets) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        let base = self.members.len();
        self.members.extend(other.members);
        self.offsets
            .extend(other.offsets.into_iter().skip(1).map(|o| o + base));
    }
}

impl<I: IntoIterator<Item = Asn>> FromIterator<I> for PathSets {
    fn from_iter<T: IntoIterator<Item = I>>(iter: T) -> Self {
        let mut sets = PathSets::new();
        for p in iter {
            sets.push(p);
        }
        sets
    }
}

/// Interceptors of one route: its hops minus the terminal origin, minus the
/// source unless `count_source`, restricted to `scope`.
pub fn interceptors_of<'a>(
    graph: &'a ASGraph,
    hops: &'a [Asn],
    opts: &'a InterceptOptions,
) -> impl Iterator<Item = Asn> + 'a {
    let end = hops.len().saturating_sub(1);
    let start = usize::from(!opts.count_source);
    hops[start.min(end)..end]
        .iter()
        .copied()
        .filter(move |&a| opts.scope.admits(graph, a))
}

/// One path per (source, target) with at least one AS-level hop; the origin's
/// own trivial route is not a path.
pub fn collect_paths(
    table: &RoutingTable,
    graph: &ASGraph,
    opts: &InterceptOptions,
) -> Result<PathSets, ChokepointError> {
    opts.scope.check(graph)?;
    opts.source_scope.check(graph)?;
    let parts: Vec<PathSets> = table
        .per_target()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(_, routes)| {
            let mut sets = PathSets::new();
            for (&src, route) in routes.routes() {
                if route.hop_count() < 2 || !opts.source_scope.admits(graph, src) {
                    continue;
                }
                sets.push(interceptors_of(graph, route.path.hops(), opts));
            }
            sets
        })
        .collect();
    let mut all = PathSets::new();
    for p in parts {
        all.append(p);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedAs {
    pub asn: Asn,
    pub paths: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub k: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    /// Descending path count, ties by ascending ASN.
    pub ranked: Vec<RankedAs>,
    /// Union coverage of the top-k ranked ASes, k = 1..=ranked.len().
    pub cumulative: Vec<CurvePoint>,
    pub total_paths: usize,
    pub options: InterceptOptions,
    #[serde(skip)]
    paths: PathSets,
}

fn fraction(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

/// AS → indices of the paths it intercepts.
fn inverted(paths: &PathSets) -> HashMap<Asn, Vec<usize>> {
    let mut idx: HashMap<Asn, Vec<usize>> = HashMap::new();
    for (i, p) in paths.iter().enumerate() {
        for &a in p {
            idx.entry(a).or_default().push(i);
        }
    }
    idx
}

impl CoverageReport {
    /// Ranks interceptors of an explicit path population.
    pub fn from_paths(paths: PathSets, options: InterceptOptions) -> CoverageReport {
        let total = paths.len();
        let index = inverted(&paths);
        let mut ranked: Vec<(Asn, usize)> = index.iter().map(|(&a, v)| (a, v.len())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut covered = vec![false; total];
        let mut count = 0;
        let mut cumulative = Vec::with_capacity(ranked.len());
        for (k, (asn, _)) in ranked.iter().enumerate() {
            for &i in &index[asn] {
                if !covered[i] {
                    covered[i] = true;
                    count += 1;
                }
            }
            cumulative.push(CurvePoint {
                k: k + 1,
                fraction: fraction(count, total),
            });
        }
        CoverageReport {
            ranked: ranked
                .into_iter()
                .map(|(asn, n)| RankedAs {
                    asn,
                    paths: n,
                    fraction: fraction(n, total),
                })
                .collect(),
            cumulative,
            total_paths: total,
            options,
            paths,
        }
    }

    pub fn paths(&self) -> &PathSets {
        &self.paths
    }

    /// Fraction covered by the full interceptor set.
    pub fn max_coverage(&self) -> f64 {
        self.cumulative.last().map_or(0.0, |p| p.fraction)
    }

    /// Greedy set-cover curve: each step adds the AS covering the most
    /// not-yet-covered paths (ties to the lower ASN). Stops once no AS adds
    /// anything.
    pub fn greedy_curve(&self) -> Vec<(Asn, CurvePoint)> {
        let total = self.total_paths;
        let index = inverted(&self.paths);
        let mut heap: BinaryHeap<(usize, Reverse<Asn>)> =
            index.iter().map(|(&a, v)| (v.len(), Reverse(a))).collect();
        let mut covered = vec![false; total];
        let mut count = 0;
        let mut out = Vec::new();
        while let Some((gain, Reverse(asn))) = heap.pop() {
            if gain == 0 {
                break;
            }
            let fresh = index[&asn].iter().filter(|&&i| !covered[i]).count();
            if fresh < gain {
                heap.push((fresh, Reverse(asn)));
                continue;
            }
            for &i in &index[&asn] {
                covered[i] = true;
            }
            count += fresh;
            out.push((
                asn,
                CurvePoint {
                    k: out.len() + 1,
                    fraction: fraction(count, total),
                },
            ));
        }
        out
    }
}

pub fn rank_interceptors(
    table: &RoutingTable,
    graph: &ASGraph,
    opts: &InterceptOptions,
) -> Result<CoverageReport, ChokepointError> {
    let paths = collect_paths(table, graph, opts)?;
    Ok(CoverageReport::from_paths(paths, *opts))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    Rank,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyAsSelection {
    pub mode: SelectionMode,
    pub threshold: f64,
    pub ases: Vec<Asn>,
    pub coverage: f64,
}

impl KeyAsSelection {
    pub fn k(&self) -> usize {
        self.ases.len()
    }
}

fn reaches(f: f64, threshold: f64) -> bool {
    f >= threshold - 1e-12
}

/// Smallest set reaching `threshold` coverage under the chosen mode.
pub fn select_key_ases(
    report: &CoverageReport,
    threshold: f64,
    mode: SelectionMode,
) -> Result<KeyAsSelection, ChokepointError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ChokepointError::InvalidThreshold(threshold));
    }
    let unreachable = || ChokepointError::Unreachable {
        threshold,
        max: report.max_coverage(),
    };
    let (ases, coverage) = match mode {
        SelectionMode::Rank => {
            let k = report
                .cumulative
                .iter()
                .position(|p| reaches(p.fraction, threshold))
                .ok_or_else(unreachable)?;
            (
                report.ranked[..=k].iter().map(|r| r.asn).collect(),
                report.cumulative[k].fraction,
            )
        }
        SelectionMode::Greedy => {
            let curve = report.greedy_curve();
            let k = curve
                .iter()
                .position(|(_, p)| reaches(p.fraction, threshold))
                .ok_or_else(unreachable)?;
            (
                curve[..=k].iter().map(|(a, _)| *a).collect(),
                curve[k].1.fraction,
            )
        }
    };
    Ok(KeyAsSelection {
        mode,
        threshold,
        ases,
        coverage,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Bucket {
    pub paths: usize,
    /// Share of all paths in the table.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollateralReport {
    pub home: CountryCode,
    pub total_paths: usize,
    pub intercepted_paths: usize,
    pub home_origin: Bucket,
    pub foreign_origin: Bucket,
    pub unknown_origin: Bucket,
    /// Intercepted foreign-source paths by source country.
    pub per_country: BTreeMap<CountryCode, usize>,
}

/// Splits every path that crosses `censors` by the country of its source.
pub fn collateral_damage(
    table: &RoutingTable,
    censors: &BTreeSet<Asn>,
    home: CountryCode,
    graph: &ASGraph,
    count_source: bool,
) -> CollateralReport {
    let opts = InterceptOptions {
        count_source,
        ..InterceptOptions::default()
    };
    let mut total = 0;
    let (mut h, mut f, mut u) = (0, 0, 0);
    let mut per_country: BTreeMap<CountryCode, usize> = BTreeMap::new();
    for route in table.iter() {
        if route.hop_count() < 2 {
            continue;
        }
        total += 1;
        if !interceptors_of(graph, route.path.hops(), &opts).any(|a| censors.contains(&a)) {
            continue;
        }
        match graph.country_of(route.source) {
            Some(cc) if cc == home => h += 1,
            Some(cc) => {
                f += 1;
                *per_country.entry(cc).or_insert(0) += 1;
            }
            None => u += 1,
        }
    }
    let bucket = |n| Bucket {
        paths: n,
        fraction: fraction(n, total),
    };
    CollateralReport {
        home,
        total_paths: total,
        intercepted_paths: h + f + u,
        home_origin: bucket(h),
        foreign_origin: bucket(f),
        unknown_origin: bucket(u),
        per_country,
    }
}
