//! URL accessibility probing through the local network.

use std::collections::BTreeMap;
use std::error::Error as _;
use std::io::{self, BufRead, Read};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use url::Url;

use crate::pace::{run_bounded, RateLimiter};

/// Default block-page signature.
pub const DEFAULT_SIGNATURE: &str = "blocked as per the directions";

const MAX_BODY: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UrlCorpus {
    entries: Vec<(String, Url)>,
    categories: BTreeMap<String, usize>,
}

impl UrlCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_category(&mut self, category: &str) {
        self.categories.entry(category.to_string()).or_insert(0);
    }

    pub fn push(&mut self, category: &str, url: Url) {
        *self.categories.entry(category.to_string()).or_insert(0) += 1;
        self.entries.push((category.to_string(), url));
    }

    pub fn entries(&self) -> &[(String, Url)] {
        &self.entries
    }

    /// Category name → number of URLs.
    pub fn categories(&self) -> &BTreeMap<String, usize> {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `<category>|<url>` lines; `<category>|` declares an empty category.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<UrlCorpus, ProbeError> {
    let mut corpus = UrlCorpus::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |m: String| ProbeError::Parse { line: i + 1, message: m };
        let (cat, url) = text
            .split_once('|')
            .ok_or_else(|| err("expected `<category>|<url>`".into()))?;
        let cat = cat.trim();
        if cat.is_empty() {
            return Err(err("empty category".into()));
        }
        let url = url.trim();
        if url.is_empty() {
            corpus.add_category(cat);
            continue;
        }
        let parsed = Url::parse(url).map_err(|e| err(format!("bad url `{url}`: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
            return Err(err(format!("not an http(s) url: `{url}`")));
        }
        corpus.push(cat, parsed);
    }
    Ok(corpus)
}

/// One pattern per line; blank lines and `#` comments are skipped.
pub fn read_signatures<R: BufRead>(reader: R) -> Result<Vec<String>, ProbeError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub signatures: Vec<String>,
    pub timeout: Duration,
    pub max_redirects: usize,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub max_concurrency: usize,
    pub rate_per_sec: f64,
    pub user_agent: String,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            signatures: vec![DEFAULT_SIGNATURE.to_string()],
            timeout: Duration::from_secs(10),
            max_redirects: 5,
            retries: 0,
            max_concurrency: 8,
            rate_per_sec: 10.0,
            user_agent: concat!("chokepoint-probe/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlClass {
    Censored,
    Open,
    Inaccessible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UrlProbe {
    pub url: String,
    pub class: UrlClass,
    /// Final HTTP status, when a response arrived.
    pub status: Option<u16>,
    /// Why the URL was inaccessible: `http_4xx`, `http_5xx`, `timeout`,
    /// `connect`, `dns`, `tls`, `redirect`, `body` or `other`.
    pub reason: Option<String>,
    pub attempts: u32,
}

/// A reusable probing client.
pub struct Prober {
    client: reqwest::blocking::Client,
    patterns: Vec<String>,
    retries: u32,
}

impl Prober {
    pub fn new(config: &ProbeConfig) -> Result<Self, ProbeError> {
        if config.signatures.is_empty() {
            return Err(ProbeError::Config("signature list is empty".into()));
        }
        let max = config.max_redirects;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .user_agent(config.user_agent.clone())
            .no_proxy()
            .redirect(reqwest::redirect::Policy::custom(move |attempt| {
                // `previous` includes the original request
                if attempt.previous().len() > max {
                    attempt.stop()
                } else {
                    attempt.follow()
                }
            }))
            .build()
            .map_err(|e| ProbeError::Config(e.to_string()))?;
        Ok(Prober {
            client,
            patterns: config.signatures.iter().map(|s| s.to_lowercase()).collect(),
            retries: config.retries,
        })
    }

    fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.patterns.iter().any(|p| lower.contains(p))
    }

    fn attempt(&self, url: &Url) -> Result<(u16, bool), String> {
        let resp = self.client.get(url.clone()).send().map_err(|e| reason_of(&e))?;
        let status = resp.status().as_u16();
        let mut flagged = resp.headers().iter().any(|(k, v)| {
            self.matches(k.as_str()) || v.to_str().is_ok_and(|v| self.matches(v))
        });
        let mut body = Vec::new();
        resp.take(MAX_BODY)
            .read_to_end(&mut body)
            .map_err(|_| "body".to_string())?;
        flagged |= self.matches(&String::from_utf8_lossy(&body));
        Ok((status, flagged))
    }

    /// A signature anywhere in headers or body means censored; otherwise a
    /// 2xx or 3xx terminal response means open and anything else means
    /// inaccessible.
    pub fn probe(&self, url: &Url) -> UrlProbe {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let (class, status, reason) = match self.attempt(url) {
                Ok((s, true)) => (UrlClass::Censored, Some(s), None),
                Ok((s, false)) if (200..400).contains(&s) => (UrlClass::Open, Some(s), None),
                Ok((s, false)) => (UrlClass::Inaccessible, Some(s), Some(format!("http_{}xx", s / 100))),
                Err(r) if attempts <= self.retries => {
                    log::debug!("{url}: {r}, retrying");
                    continue;
                }
                Err(r) => (UrlClass::Inaccessible, None, Some(r)),
            };
            return UrlProbe {
                url: url.to_string(),
                class,
                status,
                reason,
                attempts,
            };
        }
    }
}

fn reason_of(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        return "timeout".into();
    }
    if e.is_redirect() {
        return "redirect".into();
    }
    let mut chain = e.to_string().to_lowercase();
    let mut src = e.source();
    while let Some(s) = src {
        chain.push_str(" | ");
        chain.push_str(&s.to_string().to_lowercase());
        src = s.source();
    }
    if chain.contains("dns") || chain.contains("resolve") {
        "dns".into()
    } else if chain.contains("certificate") || chain.contains("tls") || chain.contains("handshake") {
        "tls".into()
    } else if e.is_connect() {
        "connect".into()
    } else {
        "other".into()
    }
}

pub fn probe_url(url: &Url, config: &ProbeConfig) -> Result<UrlProbe, ProbeError> {
    Ok(Prober::new(config)?.probe(url))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CategoryTuple {
    pub censored: usize,
    pub open: usize,
    pub inaccessible: usize,
}

impl CategoryTuple {
    pub fn total(&self) -> usize {
        self.censored + self.open + self.inaccessible
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeRecord {
    pub category: String,
    #[serde(flatten)]
    pub probe: UrlProbe,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProbeSummary {
    pub categories: BTreeMap<String, CategoryTuple>,
    pub records: Vec<ProbeRecord>,
    /// Entries that never produced an HTTP response.
    pub flagged: Vec<ProbeRecord>,
}

/// Probes every URL once (plus retries), one request at a time per host.
pub fn probe_corpus(corpus: &UrlCorpus, config: &ProbeConfig) -> Result<ProbeSummary, ProbeError> {
    let prober = Prober::new(config)?;
    let limiter = RateLimiter::new(config.rate_per_sec);
    let mut by_host: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (_, url)) in corpus.entries().iter().enumerate() {
        let host = format!("{}:{}", url.host_str().unwrap_or(""), url.port_or_known_default().unwrap_or(0));
        by_host.entry(host).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_host.into_values().collect();
    let results = run_bounded(&groups, config.max_concurrency, |group| {
        group
            .iter()
            .map(|&i| {
                limiter.acquire();
                (i, prober.probe(&corpus.entries()[i].1))
            })
            .collect::<Vec<_>>()
    });
    let mut probes: Vec<(usize, UrlProbe)> = results.into_iter().flatten().collect();
    probes.sort_by_key(|(i, _)| *i);

    let mut summary = ProbeSummary {
        categories: corpus.categories().keys().map(|c| (c.clone(), CategoryTuple::default())).collect(),
        ..Default::default()
    };
    for (i, probe) in probes {
        let category = corpus.entries()[i].0.clone();
        let t = summary.categories.entry(category.clone()).or_default();
        match probe.class {
            UrlClass::Censored => t.censored += 1,
            UrlClass::Open => t.open += 1,
            UrlClass::Inaccessible => t.inaccessible += 1,
        }
        let record = ProbeRecord { category, probe };
        if record.probe.status.is_none() {
            summary.flagged.push(record.clone());
        }
        summary.records.push(record);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_parsing() {
        let c = read_corpus("# x\nnews|http://a.example/\nescort|https://b.example/p?q=1\ngambling|\n".as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.categories().len(), 3);
        assert_eq!(c.categories()["gambling"], 0);
        assert!(matches!(
            read_corpus("news|not a url\n".as_bytes()),
            Err(ProbeError::Parse { line: 1, .. })
        ));
        assert!(read_corpus("news|ftp://a.example/\n".as_bytes()).is_err());
        assert!(read_corpus("|http://a.example/\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_signatures_rejected() {
        let cfg = ProbeConfig {
            signatures: read_signatures("# only a comment\n\n".as_bytes()).unwrap(),
            ..Default::default()
        };
        assert!(matches!(Prober::new(&cfg), Err(ProbeError::Config(_))));
    }

    #[test]
    fn signature_matching_ignores_case() {
        let p = Prober::new(&ProbeConfig::default()).unwrap();
        assert!(p.matches("This site is BLOCKED as per the Directions from DoT"));
        assert!(!p.matches("welcome"));
    }

    #[test]
    fn empty_category_summarizes_to_zero() {
        let c = read_corpus("adult|\n".as_bytes()).unwrap();
        let s = probe_corpus(&c, &ProbeConfig::default()).unwrap();
        assert_eq!(s.categories["adult"], CategoryTuple::default());
    }
}
