//! Prefix-hijack simulation: how far does a fake advertisement spread?
//!
//! Acceptance follows three rules keyed on the class of the route an AS
//! already holds:
//!
//! 1. customer route: take a customer-class fake only if strictly shorter;
//! 2. provider route: take customer- or peer-class fakes outright, a
//!    provider-class fake only if strictly shorter;
//! 3. peer route: take customer-class fakes outright, a peer-class fake only
//!    if strictly shorter, never a provider-class one.
//!
//! An AS with no route takes anything. These rules coincide with ordinary
//! route preference (class, then length) with ties going to the genuine
//! route, so the full simulation re-runs the path engine with the attacker
//! pinned to its fake route.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{ASGraph, ASPath, Asn, CountryCode, ModelError, Prefix, RouteClass};
use crate::pathinfer::{propagate, target_seeds, Candidate, InferError, RoutingTable, Seed};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HijackError {
    #[error("attacker AS{0} is not in the graph")]
    UnknownAttacker(Asn),
    #[error("invalid claimed path: {0}")]
    InvalidClaim(String),
    #[error("baseline has no routes for {0}")]
    MissingBaseline(Prefix),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FakeAdvertisement {
    pub attacker: Asn,
    pub target: Prefix,
    /// Starts at the attacker and ends at the claimed origin.
    pub claimed_path: Vec<Asn>,
}

impl FakeAdvertisement {
    /// The attacker claims to originate the prefix itself.
    pub fn origin_claim(attacker: Asn, target: Prefix) -> Self {
        FakeAdvertisement {
            attacker,
            target,
            claimed_path: vec![attacker],
        }
    }

    pub fn new(attacker: Asn, target: Prefix, claimed_path: Vec<Asn>) -> Result<Self, HijackError> {
        if claimed_path.first() != Some(&attacker) {
            return Err(HijackError::InvalidClaim(format!(
                "path must start at the attacker AS{attacker}"
            )));
        }
        let distinct: BTreeSet<Asn> = claimed_path.iter().copied().collect();
        if distinct.len() != claimed_path.len() {
            return Err(HijackError::InvalidClaim("path visits an AS twice".into()));
        }
        Ok(FakeAdvertisement {
            attacker,
            target,
            claimed_path,
        })
    }
}

/// Rule-by-rule acceptance of a fake `(class, hops)` route against the
/// current one.
pub fn ballani_accepts(current: Option<(RouteClass, usize)>, fake: (RouteClass, usize)) -> bool {
    use RouteClass::*;
    let Some((cur_class, cur_len)) = current else {
        return true;
    };
    let (f_class, f_len) = fake;
    match cur_class {
        Customer => f_class == Customer && f_len < cur_len,
        Provider => match f_class {
            Customer | Peer => true,
            Provider => f_len < cur_len,
        },
        Peer => match f_class {
            Customer => true,
            Peer => f_len < cur_len,
            Provider => false,
        },
    }
}

/// Which rule decided an acceptance, from the class of the displaced route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptingRule {
    Rule1,
    Rule2,
    Rule3,
    NoBaseline,
}

impl AcceptingRule {
    pub fn for_baseline(class: Option<RouteClass>) -> Self {
        match class {
            Some(RouteClass::Customer) => AcceptingRule::Rule1,
            Some(RouteClass::Provider) => AcceptingRule::Rule2,
            Some(RouteClass::Peer) => AcceptingRule::Rule3,
            None => AcceptingRule::NoBaseline,
        }
    }

    pub fn id(&self) -> Option<u8> {
        match self {
            AcceptingRule::Rule1 => Some(1),
            AcceptingRule::Rule2 => Some(2),
            AcceptingRule::Rule3 => Some(3),
            AcceptingRule::NoBaseline => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoisonedRoute {
    pub rule: AcceptingRule,
    pub class: RouteClass,
    /// From the poisoned AS through the attacker to the claimed origin.
    pub path: Vec<Asn>,
    /// The AS's genuine route ran through the attacker or another poisoned
    /// AS, so it had no untouched alternative of the same standing.
    pub displaced: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CountryCounts {
    pub home: usize,
    pub foreign: usize,
    pub unknown: usize,
}

impl CountryCounts {
    pub fn tally<I: IntoIterator<Item = Asn>>(graph: &ASGraph, home: Option<CountryCode>, ases: I) -> Self {
        let mut c = CountryCounts::default();
        for a in ases {
            match (graph.country_of(a), home) {
                (Some(cc), Some(h)) if cc == h => c.home += 1,
                (Some(_), Some(_)) => c.foreign += 1,
                _ => c.unknown += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.home + self.foreign + self.unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HijackOutcome {
    pub attacker: Asn,
    pub target: Prefix,
    pub claimed_path: Vec<Asn>,
    pub poisoned: BTreeMap<Asn, PoisonedRoute>,
    pub counts: CountryCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HijackOptions {
    pub home: Option<CountryCode>,
    /// Only the attacker's direct neighbours evaluate the fake route.
    pub neighbors_only: bool,
}

fn outcome(
    graph: &ASGraph,
    adv: &FakeAdvertisement,
    poisoned: BTreeMap<Asn, PoisonedRoute>,
    opts: &HijackOptions,
) -> HijackOutcome {
    HijackOutcome {
        attacker: adv.attacker,
        target: adv.target,
        claimed_path: adv.claimed_path.clone(),
        counts: CountryCounts::tally(graph, opts.home, poisoned.keys().copied()),
        poisoned,
    }
}

pub fn simulate_hijack(
    graph: &ASGraph,
    baseline: &RoutingTable,
    adv: &FakeAdvertisement,
    opts: &HijackOptions,
) -> Result<HijackOutcome, HijackError> {
    let attacker_idx = graph
        .index_of(adv.attacker)
        .ok_or(HijackError::UnknownAttacker(adv.attacker))?;
    let routes = baseline
        .target(adv.target)
        .ok_or(HijackError::MissingBaseline(adv.target))?;
    // advertising a route one really holds, or hijacking one's own prefix,
    // diverts nothing
    let is_origin = graph
        .origins_of(adv.target)
        .is_some_and(|o| o.contains(&adv.attacker));
    if is_origin
        || routes
            .get(adv.attacker)
            .is_some_and(|r| r.path.hops() == adv.claimed_path.as_slice())
    {
        return Ok(outcome(graph, adv, BTreeMap::new(), opts));
    }
    let baseline_of = |a: Asn| routes.get(a).map(|r| (r.class, r.hop_count()));
    let fake = Candidate {
        path: adv.claimed_path.clone(),
        class: RouteClass::Customer,
        fake: true,
        known: false,
    };

    let mut accepted: BTreeMap<Asn, (RouteClass, Vec<Asn>)> = BTreeMap::new();
    if opts.neighbors_only {
        for n in graph.neighbors_of(adv.attacker) {
            let class = graph.relationship_of(n, adv.attacker)?;
            if let Some(c) = fake.extend(n, class) {
                if ballani_accepts(baseline_of(n), (c.class, c.path.len())) {
                    accepted.insert(n, (c.class, c.path));
                }
            }
        }
    } else {
        let mut ts = target_seeds(graph, adv.target, routes.known_paths())?;
        ts.seeds.retain(|s| s.node != attacker_idx);
        ts.seeds.push(Seed {
            node: attacker_idx,
            cand: fake,
        });
        let pinned = routes.policy_violations();
        for (i, slot) in propagate(graph, ts.seeds, Some(attacker_idx)).into_iter().enumerate() {
            let Some(c) = slot.filter(|c| c.fake) else { continue };
            let a = graph.asn_at(i);
            if a == adv.attacker {
                continue;
            }
            // observed off-policy routes are kept unless the fake beats them
            if pinned.contains(&a) && !ballani_accepts(baseline_of(a), (c.class, c.path.len())) {
                continue;
            }
            accepted.insert(a, (c.class, c.path));
        }
    }

    let poisoned = accepted
        .iter()
        .map(|(&a, (class, path))| {
            let base = routes.get(a);
            let displaced = base.is_some_and(|r| {
                r.path.hops()[1..]
                    .iter()
                    .any(|h| *h == adv.attacker || accepted.contains_key(h))
            });
            (
                a,
                PoisonedRoute {
                    rule: AcceptingRule::for_baseline(base.map(|r| r.class)),
                    class: *class,
                    path: path.clone(),
                    displaced,
                },
            )
        })
        .collect();
    Ok(outcome(graph, adv, poisoned, opts))
}

/// Top-`n` ASes by degree, ties to the lower ASN.
pub fn top_by_degree(graph: &ASGraph, n: usize) -> Vec<Asn> {
    let mut all: Vec<Asn> = graph.asns().to_vec();
    all.sort_by_key(|&a| (std::cmp::Reverse(graph.degree(a)), a));
    all.truncate(n);
    all
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackerSummary {
    pub attacker: Asn,
    pub degree: usize,
    /// Targets simulated.
    pub targets: usize,
    /// ASes poisoned for at least one target.
    pub affected: CountryCounts,
}

/// Simulates an origin-claim hijack by each of the top-`n` ASes on every
/// `target`, against one shared baseline.
pub fn rank_attackers(
    graph: &ASGraph,
    baseline: &RoutingTable,
    targets: &[Prefix],
    n: usize,
    opts: &HijackOptions,
) -> Result<Vec<AttackerSummary>, HijackError> {
    let attackers = top_by_degree(graph, n);
    let jobs: Vec<(Asn, Prefix)> = attackers
        .iter()
        .flat_map(|&a| targets.iter().map(move |&t| (a, t)))
        .collect();
    let results: Vec<(Asn, Result<HijackOutcome, HijackError>)> = jobs
        .into_par_iter()
        .map(|(a, t)| {
            let adv = FakeAdvertisement::origin_claim(a, t);
            (a, simulate_hijack(graph, baseline, &adv, opts))
        })
        .collect();
    let mut affected: BTreeMap<Asn, BTreeSet<Asn>> = BTreeMap::new();
    for (a, res) in results {
        affected.entry(a).or_default().extend(res?.poisoned.into_keys());
    }
    Ok(attackers
        .into_iter()
        .map(|a| AttackerSummary {
            attacker: a,
            degree: graph.degree(a),
            targets: targets.len(),
            affected: CountryCounts::tally(graph, opts.home, affected.remove(&a).unwrap_or_default()),
        })
        .collect())
}

/// The part of a poisoned path that real routers exported: up to and
/// including the attacker. The claimed tail is fabricated.
pub fn exported_segment(path: &[Asn], attacker: Asn) -> &[Asn] {
    match path.iter().position(|&a| a == attacker) {
        Some(i) => &path[..=i],
        None => path,
    }
}

/// Checks a poisoned route: loop-free, passes through the attacker, and the
/// exported segment is valley-free with the attacker as its origin.
pub fn check_poisoned(graph: &ASGraph, attacker: Asn, target: Prefix, path: &[Asn]) -> Result<(), String> {
    let seg = exported_segment(path, attacker);
    if seg.last() != Some(&attacker) {
        return Err(format!("path {path:?} does not reach the attacker"));
    }
    let full = ASPath::new(path.to_vec(), target).map_err(|e| e.to_string())?;
    let seg = ASPath::new(seg.to_vec(), target).map_err(|e| e.to_string())?;
    match crate::model::valley_free(&seg, graph) {
        Ok(true) => Ok(()),
        Ok(false) => Err(format!("exported segment of {:?} is not valley-free", full.hops())),
        Err(e) => Err(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{asn, GraphBuilder};
    use crate::pathinfer::infer_routes;
    use RouteClass::*;

    fn prefix() -> Prefix {
        "192.0.2.0/24".parse().unwrap()
    }

    #[test]
    fn ballani_matches_preference_with_ties_to_genuine() {
        let classes = [Customer, Peer, Provider];
        let mut cases = 0;
        for cur in classes {
            for fake in classes {
                for (cl, fl) in [(3, 2), (3, 3), (3, 4)] {
                    let by_rule = ballani_accepts(Some((cur, cl)), (fake, fl));
                    let by_pref = (fake, std::cmp::Reverse(fl)) > (cur, std::cmp::Reverse(cl));
                    assert_eq!(by_rule, by_pref, "{cur:?}/{cl} vs {fake:?}/{fl}");
                    cases += 1;
                }
            }
        }
        assert!(cases >= 20);
        assert!(ballani_accepts(None, (Provider, 9)));
    }

    #[test]
    fn claim_validation() {
        assert!(FakeAdvertisement::new(asn(1), prefix(), vec![asn(2)]).is_err());
        assert!(FakeAdvertisement::new(asn(1), prefix(), vec![asn(1), asn(2), asn(1)]).is_err());
        assert!(FakeAdvertisement::new(asn(1), prefix(), vec![asn(1), asn(2)]).is_ok());
    }

    #[test]
    fn isolated_attacker_poisons_nobody() {
        let mut b = GraphBuilder::new();
        b.provider_customer(1, 2).unwrap();
        b.add_node(asn(9));
        b.add_origin(prefix(), asn(2));
        let g = b.build();
        let base = infer_routes(&g, &[], &[prefix()]).unwrap();
        let out = simulate_hijack(&g, &base, &FakeAdvertisement::origin_claim(asn(9), prefix()), &Default::default()).unwrap();
        assert!(out.poisoned.is_empty());
        assert_eq!(
            simulate_hijack(&g, &base, &FakeAdvertisement::origin_claim(asn(77), prefix()), &Default::default()),
            Err(HijackError::UnknownAttacker(asn(77)))
        );
    }

    #[test]
    fn true_origin_claiming_itself_changes_nothing() {
        let mut b = GraphBuilder::new();
        b.provider_customer(1, 2).unwrap().provider_customer(1, 3).unwrap();
        b.add_origin(prefix(), asn(2));
        let g = b.build();
        let base = infer_routes(&g, &[], &[prefix()]).unwrap();
        let out = simulate_hijack(&g, &base, &FakeAdvertisement::origin_claim(asn(2), prefix()), &Default::default()).unwrap();
        assert!(out.poisoned.is_empty());
    }

    #[test]
    fn customer_route_beats_shorter_provider_fake() {
        // 3 is a customer of 1 and originates; attacker 4 is 1's provider
        let mut b = GraphBuilder::new();
        b.provider_customer(1, 3).unwrap().provider_customer(4, 1).unwrap();
        b.provider_customer(4, 5).unwrap();
        b.add_origin(prefix(), asn(3));
        let g = b.build();
        let base = infer_routes(&g, &[], &[prefix()]).unwrap();
        let out = simulate_hijack(&g, &base, &FakeAdvertisement::origin_claim(asn(4), prefix()), &Default::default()).unwrap();
        // 1 keeps its customer route; 5 held [5,4,1,3] and now takes [5,4]
        assert_eq!(out.poisoned.keys().copied().collect::<Vec<_>>(), vec![asn(5)]);
        let p = &out.poisoned[&asn(5)];
        assert_eq!(p.rule, AcceptingRule::Rule2);
        assert!(p.displaced);
        assert_eq!(p.path, vec![asn(5), asn(4)]);
    }

    #[test]
    fn degree_ranking_on_star() {
        let mut b = GraphBuilder::new();
        for c in 1..=5 {
            b.provider_customer(100, c).unwrap();
        }
        b.peer(1, 2).unwrap();
        let g = b.build();
        assert_eq!(top_by_degree(&g, 3), vec![asn(100), asn(1), asn(2)]);
    }

    #[test]
    fn country_counts() {
        let mut b = GraphBuilder::new();
        b.provider_customer(1, 2).unwrap().provider_customer(1, 3).unwrap();
        b.set_country(asn(1), "IN".parse().unwrap())
            .set_country(asn(2), "PK".parse().unwrap());
        let g = b.build();
        let c = CountryCounts::tally(&g, Some("IN".parse().unwrap()), [asn(1), asn(2), asn(3)]);
        assert_eq!((c.home, c.foreign, c.unknown), (1, 1, 1));
    }
}
