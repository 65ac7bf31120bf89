//! Subcommand implementations. Each returns a one-line summary for stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use chokepoint_core::chokepoint::{
    collateral_damage, rank_interceptors, select_key_ases, CoverageReport, CurvePoint, InterceptOptions,
    Scope, SelectionMode,
};
use chokepoint_core::dnsmap::{
    dns_coverage, probe_resolvers, select_resolver_targets, write_probe_results, DnsProbeConfig,
};
use chokepoint_core::hijack::{rank_attackers, simulate_hijack, FakeAdvertisement, HijackOptions};
use chokepoint_core::ingest::{DatasetBundle, IngestError, LoadReport};
use chokepoint_core::intraas::{analyze_as, build_router_topology, RouterSelection};
use chokepoint_core::model::{Asn, Prefix};
use chokepoint_core::pathinfer::{
    infer_routes, oracle_routes, route_count_summary, RoutingTable, ORACLE_MAX_NODES,
};
use chokepoint_core::probe::{probe_corpus, read_corpus, read_signatures, ProbeConfig};
use chokepoint_core::synth::{generate, random_small_graph, SynthSpec};

use crate::config::{ConfigError, RunConfig};
use crate::report::{frac, ReportDir, Stamp};
use crate::{Cli, Command, HijackArgs, HijackRank, IngestAction, ProbeKind, ScopeArgs, SynthArgs};

/// A command argument that parsed but makes no sense.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

fn input_err(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Machine-readable category of a failure.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return "config";
        }
        if cause.is::<InputError>() {
            return "input";
        }
        if cause.is::<IngestError>() {
            return "ingest";
        }
        if cause.is::<io::Error>() {
            return "io";
        }
    }
    "analysis"
}

pub fn execute(cli: &Cli) -> Result<String> {
    let config = cli.global.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()?;
    pool.install(|| dispatch(&cli.command, &config))
}

fn dispatch(command: &Command, config: &RunConfig) -> Result<String> {
    match command {
        Command::Ingest {
            action: IngestAction::Validate,
        } => ingest_validate(config),
        Command::Infer => infer(config),
        Command::Coverage(scope) => coverage(config, scope),
        Command::RankAs(scope) => rank_as(config, scope),
        Command::Collateral { censors } => collateral(config, censors.as_deref()),
        Command::Routers { redact } => routers(config, *redact),
        Command::DnsCoverage(scope) => dns(config, scope),
        Command::Hijack(args) => match &args.rank {
            Some(HijackRank::Rank { top, target }) => hijack_rank(config, *top, target.as_deref()),
            None => hijack(config, args),
        },
        Command::Probe { kind } => match kind {
            ProbeKind::Http {
                corpus,
                signatures,
                timeout_ms,
                retries,
                max_redirects,
                rate,
            } => {
                let mut cfg = ProbeConfig {
                    timeout: Duration::from_millis(*timeout_ms),
                    retries: *retries,
                    max_redirects: *max_redirects,
                    rate_per_sec: *rate,
                    ..ProbeConfig::default()
                };
                if let Some(j) = config.jobs {
                    cfg.max_concurrency = j;
                }
                probe_http(config, corpus, signatures.as_deref(), cfg)
            }
            ProbeKind::Dns {
                addresses,
                name,
                timeout_ms,
                rate,
            } => {
                let mut cfg = DnsProbeConfig {
                    timeout: Duration::from_millis(*timeout_ms),
                    test_name: name.clone(),
                    rate_per_sec: *rate,
                    ..DnsProbeConfig::default()
                };
                if let Some(j) = config.jobs {
                    cfg.max_concurrency = j;
                }
                probe_dns(config, addresses, cfg)
            }
        },
        Command::Synth(args) => synth(config, args),
        Command::OracleCheck { trials, nodes } => oracle(config, *trials, *nodes),
    }
}

fn load(config: &RunConfig) -> Result<(DatasetBundle, LoadReport)> {
    if config.datasets.relationships.is_none() {
        return Err(input_err(
            "no relationships dataset configured (use --data-dir or --relationships)",
        ));
    }
    Ok(DatasetBundle::load(&config.datasets)?)
}

fn open(config: &RunConfig, command: &str, extra: &[(&str, &Path)]) -> Result<ReportDir> {
    let stamp = Stamp::new(config, extra).context("checksumming inputs")?;
    Ok(ReportDir::create(&config.out, command, stamp)?)
}

fn done(dir: ReportDir, line: String) -> Result<String> {
    let path = dir.finish()?;
    Ok(format!("{line} [{}]", path.display()))
}

fn parse_asn(s: &str) -> Result<Asn> {
    s.trim().parse().map_err(|e| input_err(format!("bad ASN `{s}`: {e}")))
}

fn parse_asn_list(s: &str) -> Result<Vec<Asn>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_asn).collect()
}

fn parse_prefix(s: &str) -> Result<Prefix> {
    s.trim().parse().map_err(|e| input_err(format!("bad prefix `{s}`: {e}")))
}

fn scope_of(s: Option<&str>) -> Result<Scope> {
    Ok(match s {
        None => Scope::All,
        Some(cc) => Scope::Country(cc.parse().map_err(|e| input_err(format!("bad country `{cc}`: {e}")))?),
    })
}

fn intercept_options(config: &RunConfig, scope: &ScopeArgs) -> Result<InterceptOptions> {
    Ok(InterceptOptions {
        scope: scope_of(scope.scope.as_deref())?,
        source_scope: scope_of(scope.source_scope.as_deref())?,
        count_source: config.count_source,
    })
}

fn mode_name(m: SelectionMode) -> &'static str {
    match m {
        SelectionMode::Rank => "rank",
        SelectionMode::Greedy => "greedy",
    }
}

fn curve_rows(points: &[(Asn, CurvePoint)]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|(a, p)| vec![p.k.to_string(), a.to_string(), frac(p.fraction)])
        .collect()
}

fn rank_curve(report: &CoverageReport) -> Vec<(Asn, CurvePoint)> {
    report
        .ranked
        .iter()
        .zip(&report.cumulative)
        .map(|(r, p)| (r.asn, *p))
        .collect()
}

#[derive(Serialize)]
struct CurveEntry {
    k: usize,
    asn: Asn,
    fraction: f64,
}

fn curve_json(points: &[(Asn, CurvePoint)]) -> Vec<CurveEntry> {
    points
        .iter()
        .map(|(a, p)| CurveEntry {
            k: p.k,
            asn: *a,
            fraction: p.fraction,
        })
        .collect()
}

const CURVE_HEADER: &[&str] = &["k", "asn", "cumulative_fraction"];

fn ingest_validate(config: &RunConfig) -> Result<String> {
    let (bundle, report) = load(config)?;
    let g = &bundle.graph;
    let unknown_targets: Vec<Prefix> = bundle
        .target_prefixes
        .iter()
        .filter(|t| g.origins_of(**t).is_none())
        .copied()
        .collect();
    let isolated = g.asns().iter().filter(|&&a| g.degree(a) == 0).count();
    let mut dir = open(config, "ingest-validate", &[])?;
    dir.write_report(&json!({
        "load": report,
        "isolated_ases": isolated,
        "unknown_targets": unknown_targets,
        "ok": unknown_targets.is_empty(),
    }))?;
    if !unknown_targets.is_empty() {
        dir.finish()?;
        return Err(input_err(format!(
            "{} target prefixes have no origin AS (first: {})",
            unknown_targets.len(),
            unknown_targets[0]
        )));
    }
    done(
        dir,
        format!(
            "ok: {} ASes, {} links, {} prefixes, {} known paths",
            report.nodes, report.links, report.prefixes, report.known_paths
        ),
    )
}

fn routes(bundle: &DatasetBundle) -> Result<RoutingTable> {
    Ok(infer_routes(&bundle.graph, &bundle.known_paths, &bundle.target_prefixes)?)
}

fn infer(config: &RunConfig) -> Result<String> {
    let (bundle, _) = load(config)?;
    let table = routes(&bundle)?;
    let mut dir = open(config, "infer", &[])?;
    dir.write_with("routes.txt", |w| table.write_to(w))?;
    dir.write_report(&json!({
        "targets": bundle.target_prefixes.len(),
        "routes": table.len(),
        "seed_stats": table.seed_stats(),
        "per_target": route_count_summary(&table),
    }))?;
    done(
        dir,
        format!("{} routes to {} targets", table.len(), bundle.target_prefixes.len()),
    )
}

fn coverage(config: &RunConfig, scope: &ScopeArgs) -> Result<String> {
    let (bundle, _) = load(config)?;
    let opts = intercept_options(config, scope)?;
    let table = routes(&bundle)?;
    let report = rank_interceptors(&table, &bundle.graph, &opts)?;
    let rank = rank_curve(&report);
    let greedy = report.greedy_curve();
    let mut dir = open(config, "coverage", &[])?;
    dir.write_csv("coverage.csv", CURVE_HEADER, &curve_rows(&rank))?;
    dir.write_csv("greedy.csv", CURVE_HEADER, &curve_rows(&greedy))?;
    dir.write_report(&json!({
        "options": opts,
        "total_paths": report.total_paths,
        "max_coverage": report.max_coverage(),
        "ranked": report.ranked,
        "rank_curve": curve_json(&rank),
        "greedy_curve": curve_json(&greedy),
    }))?;
    done(
        dir,
        format!(
            "{} interceptors over {} paths, max coverage {}",
            report.ranked.len(),
            report.total_paths,
            frac(report.max_coverage())
        ),
    )
}

fn rank_as(config: &RunConfig, scope: &ScopeArgs) -> Result<String> {
    let (bundle, _) = load(config)?;
    let opts = intercept_options(config, scope)?;
    let table = routes(&bundle)?;
    let report = rank_interceptors(&table, &bundle.graph, &opts)?;
    let selection = select_key_ases(&report, config.threshold, config.mode)?;
    let curve = match config.mode {
        SelectionMode::Rank => rank_curve(&report),
        SelectionMode::Greedy => report.greedy_curve(),
    };
    let mut dir = open(config, "rank-as", &[])?;
    dir.write_csv("cdf.csv", CURVE_HEADER, &curve_rows(&curve))?;
    dir.write_report(&json!({
        "options": opts,
        "selection": selection,
        "total_paths": report.total_paths,
        "max_coverage": report.max_coverage(),
        "curve": curve_json(&curve),
    }))?;
    done(
        dir,
        format!(
            "{} ASes cover {} of {} paths ({} mode, threshold {})",
            selection.k(),
            frac(selection.coverage),
            report.total_paths,
            mode_name(config.mode),
            config.threshold
        ),
    )
}

fn collateral(config: &RunConfig, censors: Option<&str>) -> Result<String> {
    let (bundle, _) = load(config)?;
    let g = &bundle.graph;
    let censors: BTreeSet<Asn> = match censors {
        Some(list) => parse_asn_list(list)?.into_iter().collect(),
        None => g
            .asns()
            .iter()
            .copied()
            .filter(|&a| g.country_of(a) == Some(config.home))
            .collect(),
    };
    if censors.is_empty() {
        return Err(input_err(format!(
            "empty censor set (no --censors and no AS registered in {})",
            config.home
        )));
    }
    let table = routes(&bundle)?;
    let report = collateral_damage(&table, &censors, config.home, g, config.count_source);
    let mut dir = open(config, "collateral", &[])?;
    let rows: Vec<Vec<String>> = report
        .per_country
        .iter()
        .map(|(cc, n)| {
            let f = if report.total_paths == 0 { 0.0 } else { *n as f64 / report.total_paths as f64 };
            vec![cc.to_string(), n.to_string(), frac(f)]
        })
        .collect();
    dir.write_csv("per_country.csv", &["country", "paths", "fraction"], &rows)?;
    dir.write_report(&json!({
        "censors": censors,
        "report": report,
    }))?;
    done(
        dir,
        format!(
            "{} of {} paths intercepted; foreign-source share {}",
            report.intercepted_paths,
            report.total_paths,
            frac(report.foreign_origin.fraction)
        ),
    )
}

fn routers(config: &RunConfig, redact: bool) -> Result<String> {
    let (bundle, _) = load(config)?;
    let topo = build_router_topology(&bundle.router_traces, &bundle.alias_map)?;
    let ases: Vec<Asn> = topo.ases().collect();
    if ases.is_empty() {
        return Err(input_err("no router traces configured"));
    }
    let mut selections: Vec<RouterSelection> = ases
        .par_iter()
        .map(|&a| analyze_as(a, topo.paths(a), config.router_threshold))
        .collect::<Result<_, _>>()?;
    if redact {
        selections = selections.iter().map(RouterSelection::redacted).collect();
    }
    let total: usize = selections.iter().map(|s| s.selected.len()).sum();
    let rows: Vec<Vec<String>> = selections
        .iter()
        .map(|s| {
            vec![
                s.asn.to_string(),
                s.edge_count.to_string(),
                s.core_count.to_string(),
                s.heavy_hitter_count.to_string(),
                match s.rule {
                    chokepoint_core::intraas::FilterRule::EdgeSet => "edge_set".into(),
                    chokepoint_core::intraas::FilterRule::HeavyHitterSet => "heavy_hitter_set".into(),
                },
                s.selected.len().to_string(),
                frac(s.coverage_fraction),
            ]
        })
        .collect();
    let mut dir = open(config, "routers", &[])?;
    dir.write_csv(
        "routers.csv",
        &["asn", "edge", "core", "heavy_hitters", "rule", "selected", "coverage"],
        &rows,
    )?;
    dir.write_report(&json!({
        "threshold": config.router_threshold,
        "total_selected": total,
        "ases": selections,
    }))?;
    done(dir, format!("{total} filter routers across {} ASes", ases.len()))
}

fn dns(config: &RunConfig, scope: &ScopeArgs) -> Result<String> {
    let (bundle, _) = load(config)?;
    if bundle.resolver_inventory.is_empty() {
        return Err(input_err("no resolver inventory configured"));
    }
    let opts = intercept_options(config, scope)?;
    let targets = select_resolver_targets(&bundle.resolver_inventory);
    let (_, report) = dns_coverage(&bundle.graph, &bundle.known_paths, &targets, &opts)?;
    let selection = select_key_ases(&report, config.threshold, config.mode)?;
    let curve = match config.mode {
        SelectionMode::Rank => rank_curve(&report),
        SelectionMode::Greedy => report.greedy_curve(),
    };
    let mut dir = open(config, "dns-coverage", &[])?;
    dir.write_csv("cdf.csv", CURVE_HEADER, &curve_rows(&curve))?;
    dir.write_report(&json!({
        "options": opts,
        "resolver_targets": targets,
        "selection": selection,
        "total_paths": report.total_paths,
        "max_coverage": report.max_coverage(),
        "curve": curve_json(&curve),
    }))?;
    done(
        dir,
        format!(
            "{} resolver prefixes; {} ASes cover {} of paths",
            targets.len(),
            selection.k(),
            frac(selection.coverage)
        ),
    )
}

fn hijack_options(config: &RunConfig) -> HijackOptions {
    HijackOptions {
        home: Some(config.home),
        neighbors_only: config.neighbors_only,
    }
}

fn hijack(config: &RunConfig, args: &HijackArgs) -> Result<String> {
    let attacker = parse_asn(args.attacker.as_deref().ok_or_else(|| input_err("--attacker is required"))?)?;
    let (bundle, _) = load(config)?;
    let target = match (&args.target, bundle.target_prefixes.as_slice()) {
        (Some(t), _) => parse_prefix(t)?,
        (None, [only]) => *only,
        (None, _) => return Err(input_err("--target is required when there is more than one target")),
    };
    let adv = match &args.claimed_path {
        Some(c) => FakeAdvertisement::new(attacker, target, parse_asn_list(c)?)?,
        None => FakeAdvertisement::origin_claim(attacker, target),
    };
    let baseline = infer_routes(&bundle.graph, &bundle.known_paths, &[target])?;
    let out = simulate_hijack(&bundle.graph, &baseline, &adv, &hijack_options(config))?;
    let rows: Vec<Vec<String>> = out
        .poisoned
        .iter()
        .map(|(a, p)| {
            vec![
                a.to_string(),
                p.rule.id().map(|r| r.to_string()).unwrap_or_else(|| "none".into()),
                p.class.to_string(),
                p.displaced.to_string(),
                p.path.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    let mut dir = open(config, "hijack", &[])?;
    dir.write_csv("poisoned.csv", &["asn", "rule", "class", "displaced", "path"], &rows)?;
    dir.write_report(&json!({
        "neighbors_only": config.neighbors_only,
        "outcome": out,
    }))?;
    done(
        dir,
        format!(
            "AS{attacker} poisons {} ASes for {target} ({} home, {} foreign, {} unknown)",
            out.poisoned.len(),
            out.counts.home,
            out.counts.foreign,
            out.counts.unknown
        ),
    )
}

fn hijack_rank(config: &RunConfig, top: usize, target: Option<&str>) -> Result<String> {
    let (bundle, _) = load(config)?;
    let targets = match target {
        Some(t) => vec![parse_prefix(t)?],
        None => bundle.target_prefixes.clone(),
    };
    let baseline = infer_routes(&bundle.graph, &bundle.known_paths, &targets)?;
    let ranked = rank_attackers(&bundle.graph, &baseline, &targets, top, &hijack_options(config))?;
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .map(|s| {
            vec![
                s.attacker.to_string(),
                s.degree.to_string(),
                s.affected.home.to_string(),
                s.affected.foreign.to_string(),
                s.affected.unknown.to_string(),
                s.affected.total().to_string(),
            ]
        })
        .collect();
    let mut dir = open(config, "hijack-rank", &[])?;
    dir.write_csv(
        "attackers.csv",
        &["attacker", "degree", "home", "foreign", "unknown", "total"],
        &rows,
    )?;
    dir.write_report(&json!({
        "neighbors_only": config.neighbors_only,
        "targets": targets.len(),
        "attackers": ranked,
    }))?;
    let best = ranked.iter().map(|s| s.affected.total()).max().unwrap_or(0);
    done(
        dir,
        format!(
            "{} attackers over {} targets; most affected: {best} ASes",
            ranked.len(),
            targets.len()
        ),
    )
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn probe_http(config: &RunConfig, corpus: &Path, signatures: Option<&Path>, mut cfg: ProbeConfig) -> Result<String> {
    let urls = read_corpus(open_reader(corpus)?).with_context(|| corpus.display().to_string())?;
    if let Some(p) = signatures {
        cfg.signatures = read_signatures(open_reader(p)?).with_context(|| p.display().to_string())?;
    }
    let summary = probe_corpus(&urls, &cfg)?;
    let mut inputs = vec![("corpus", corpus)];
    if let Some(p) = signatures {
        inputs.push(("signatures", p));
    }
    let mut dir = open(config, "probe-http", &inputs)?;
    let rows: Vec<Vec<String>> = summary
        .categories
        .iter()
        .map(|(c, t)| {
            vec![
                c.clone(),
                t.censored.to_string(),
                t.open.to_string(),
                t.inaccessible.to_string(),
            ]
        })
        .collect();
    dir.write_csv("categories.csv", &["category", "censored", "open", "inaccessible"], &rows)?;
    dir.write_report(&summary)?;
    let censored: usize = summary.categories.values().map(|t| t.censored).sum();
    done(
        dir,
        format!(
            "{} URLs probed: {censored} censored, {} flagged",
            summary.records.len(),
            summary.flagged.len()
        ),
    )
}

/// One IPv4 address per line, optionally with `:port` (default 53).
pub fn read_addresses<R: BufRead>(reader: R) -> Result<Vec<SocketAddrV4>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let addr = if let Ok(a) = t.parse::<SocketAddrV4>() {
            a
        } else {
            let ip: Ipv4Addr = t
                .parse()
                .map_err(|_| input_err(format!("line {}: bad address `{t}`", i + 1)))?;
            SocketAddrV4::new(ip, 53)
        };
        out.push(addr);
    }
    Ok(out)
}

fn probe_dns(config: &RunConfig, addresses: &Path, cfg: DnsProbeConfig) -> Result<String> {
    let addrs = read_addresses(open_reader(addresses)?)?;
    let results = probe_resolvers(&addrs, &cfg);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut probes = Vec::with_capacity(results.len());
    for (addr, r) in &results {
        match r {
            Ok(p) => {
                *counts.entry(p.class.as_str()).or_insert(0) += 1;
                probes.push(json!(p));
            }
            Err(e) => {
                *counts.entry("local_error").or_insert(0) += 1;
                probes.push(json!({"address": addr, "error": e.to_string()}));
            }
        }
    }
    let mut dir = open(config, "probe-dns", &[("addresses", addresses)])?;
    dir.write_with("results.txt", |w| write_probe_results(&results, w))?;
    dir.write_report(&json!({
        "test_name": cfg.test_name,
        "counts": counts,
        "probes": probes,
    }))?;
    let summary = counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    done(dir, format!("{} resolvers probed: {summary}", results.len()))
}

fn synth(config: &RunConfig, args: &SynthArgs) -> Result<String> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| input_err(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::sized(config.seed, args.size),
    };
    if let Some(t) = args.n_targets {
        spec.n_targets = t;
    }
    for entry in &args.country_mix {
        let (cc, share) = entry
            .split_once('=')
            .ok_or_else(|| input_err(format!("bad --country `{entry}`, expected CC=SHARE")))?;
        let cc = cc.parse().map_err(|e| input_err(format!("bad country `{cc}`: {e}")))?;
        let share: f64 = share
            .parse()
            .map_err(|_| input_err(format!("bad share in `{entry}`")))?;
        spec.country_mix.insert(cc, share);
    }
    let bundle = generate(&spec)?;
    let mut dir = open(config, "synth", &[])?;
    let paths = bundle.write_to_dir(dir.dir())?;
    let (_, load) = DatasetBundle::load(&paths)?;
    let files: BTreeMap<&str, String> = paths
        .files()
        .into_iter()
        .map(|(role, p)| Ok((role, crate::report::sha256_file(p)?)))
        .collect::<io::Result<_>>()?;
    dir.write_report(&json!({
        "spec": spec,
        "files": files,
        "load": load,
    }))?;
    done(
        dir,
        format!(
            "{} ASes, {} links, {} targets written",
            load.nodes, load.links, load.targets
        ),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Disagreement {
    pub graph_seed: u64,
    pub nodes: usize,
    pub asn: Asn,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub trials: u64,
    pub agree: u64,
    pub max_nodes: usize,
    pub disagreements: Vec<Disagreement>,
}

/// Trial `i` uses graph seed `seed + i` and a size cycling through
/// `3..=max_nodes`.
pub fn oracle_check(seed: u64, trials: u64, max_nodes: usize) -> Result<OracleCheck> {
    if !(1..=ORACLE_MAX_NODES).contains(&max_nodes) {
        return Err(input_err(format!("--nodes must be in 1..={ORACLE_MAX_NODES}")));
    }
    let low = max_nodes.min(3);
    let span = (max_nodes - low + 1) as u64;
    let results: Vec<Result<Vec<Disagreement>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let gs = seed.wrapping_add(i);
            let n = low + (i % span) as usize;
            let (g, t) = random_small_graph(gs, n);
            let table = infer_routes(&g, &[], &[t])?;
            let oracle = oracle_routes(&g, t)?;
            let origins = g.origins_of(t).cloned().unwrap_or_default();
            let mut bad = Vec::new();
            for &src in g.asns() {
                if origins.contains(&src) {
                    continue;
                }
                let got = table.route(t, src);
                let want = oracle.get(&src);
                let detail = match (got, want) {
                    (None, None) => continue,
                    (Some(a), Some(b)) if a.class == b.class && a.path.hops() == b.path.hops() => continue,
                    (a, b) => format!(
                        "inferred {:?} vs oracle {:?}",
                        a.map(|r| (r.class, r.path.hops().to_vec())),
                        b.map(|r| (r.class, r.path.hops().to_vec()))
                    ),
                };
                bad.push(Disagreement {
                    graph_seed: gs,
                    nodes: n,
                    asn: src,
                    detail,
                });
            }
            Ok(bad)
        })
        .collect();
    let mut agree = 0;
    let mut disagreements = Vec::new();
    for r in results {
        let bad = r?;
        if bad.is_empty() {
            agree += 1;
        }
        disagreements.extend(bad);
    }
    Ok(OracleCheck {
        trials,
        agree,
        max_nodes,
        disagreements,
    })
}

fn oracle(config: &RunConfig, trials: u64, nodes: usize) -> Result<String> {
    let check = oracle_check(config.seed, trials, nodes)?;
    let mut dir = open(config, "oracle-check", &[])?;
    dir.write_report(&check)?;
    let line = format!("{}/{} agree", check.agree, check.trials);
    if check.agree != check.trials {
        dir.finish()?;
        anyhow::bail!("{line}");
    }
    done(dir, line)
}
