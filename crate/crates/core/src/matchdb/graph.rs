use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::dsu::Dsu;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";
const AUDIT: &str = "audit.jsonl";
const COMPACT_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirmed,
    Rejected,
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confirmed" | "confirm" => Ok(Self::Confirmed),
            "rejected" | "reject" => Ok(Self::Rejected),
            other => Err(Error::InvalidInput(format!("unknown verdict `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEvent {
    pub ts: String,
    pub a: String,
    pub b: String,
    pub verdict: Verdict,
    pub reviewer: String,
}

impl VerdictEvent {
    fn key(&self) -> (String, String) {
        pair_key(&self.a, &self.b)
    }
}

/// A confirmation joining two components that each already held a confirmed match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub ts: String,
    pub event: String,
    pub a: String,
    pub b: String,
    pub a_component: Vec<String>,
    pub b_component: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictOutcome {
    pub previous: Option<Verdict>,
    /// Size of the confirmed component holding `a` after the verdict.
    pub component_size: usize,
    pub merge: Option<MergeEvent>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events_applied: usize,
    nodes: Vec<String>,
    current: Vec<VerdictEvent>,
}

#[derive(Serialize)]
struct State<'a> {
    nodes: Vec<&'a String>,
    current: Vec<&'a VerdictEvent>,
}

struct Store {
    dir: PathBuf,
    events: File,
}

/// Image nodes, current verdict per unordered pair, and the full history.
pub struct MatchGraph {
    nodes: BTreeMap<String, usize>,
    names: Vec<String>,
    current: BTreeMap<(String, String), VerdictEvent>,
    history: Vec<VerdictEvent>,
    root: Vec<usize>,
    size: Vec<usize>,
    store: Option<Store>,
    since_compact: usize,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl std::fmt::Debug for MatchGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatchGraph")
            .field("nodes", &self.names.len())
            .field("current", &self.current.len())
            .field("history", &self.history.len())
            .field("store", &self.store.as_ref().map(|s| &s.dir))
            .finish()
    }
}

impl MatchGraph {
    /// A graph without persistence.
    pub fn in_memory<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut g = Self {
            nodes: BTreeMap::new(),
            names: Vec::new(),
            current: BTreeMap::new(),
            history: Vec::new(),
            root: Vec::new(),
            size: Vec::new(),
            store: None,
            since_compact: 0,
        };
        for n in nodes {
            g.insert_node(n.into());
        }
        g.rebuild();
        g
    }

    /// Opens or creates a store directory.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let snap_path = dir.join(SNAPSHOT);
        let snapshot: Snapshot = if snap_path.exists() {
            serde_json::from_slice(&fs::read(&snap_path)?).map_err(|e| Error::Corrupt {
                path: snap_path.clone(),
                message: e.to_string(),
            })?
        } else {
            Snapshot {
                events_applied: 0,
                nodes: Vec::new(),
                current: Vec::new(),
            }
        };
        let mut g = Self::in_memory(snapshot.nodes);
        for e in snapshot.current {
            g.current.insert(e.key(), e);
        }

        let events_path = dir.join(EVENTS);
        let history = read_events(&events_path)?;
        if history.len() < snapshot.events_applied {
            return Err(Error::Corrupt {
                path: events_path,
                message: format!(
                    "{} events but the snapshot covers {}",
                    history.len(),
                    snapshot.events_applied
                ),
            });
        }
        for e in &history[snapshot.events_applied..] {
            for id in [&e.a, &e.b] {
                if !g.nodes.contains_key(id) {
                    return Err(Error::Corrupt {
                        path: events_path.clone(),
                        message: format!("event references unknown image `{id}`"),
                    });
                }
            }
            g.current.insert(e.key(), e.clone());
        }
        g.since_compact = history.len() - snapshot.events_applied;
        g.history = history;
        g.rebuild();
        let events = OpenOptions::new().create(true).append(true).open(&events_path)?;
        g.store = Some(Store {
            dir: dir.to_path_buf(),
            events,
        });
        Ok(g)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.store.as_ref().map(|s| s.dir.as_path())
    }

    fn insert_node(&mut self, id: String) -> bool {
        if self.nodes.contains_key(&id) {
            return false;
        }
        self.nodes.insert(id.clone(), self.names.len());
        self.names.push(id);
        true
    }

    /// Registers an image; returns false if it was already known.
    pub fn add_node(&mut self, id: &str) -> Result<bool> {
        if id.is_empty() {
            return Err(Error::InvalidInput("empty image_id".into()));
        }
        if !self.insert_node(id.to_string()) {
            return Ok(false);
        }
        self.rebuild();
        if self.store.is_some() {
            self.compact()?;
        }
        Ok(true)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Image ids in ascending order.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn history(&self) -> &[VerdictEvent] {
        &self.history
    }

    pub fn current(&self) -> impl Iterator<Item = &VerdictEvent> {
        self.current.values()
    }

    pub fn current_verdict(&self, a: &str, b: &str) -> Option<Verdict> {
        self.current.get(&pair_key(a, b)).map(|e| e.verdict)
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.nodes
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn record_verdict(&mut self, a: &str, b: &str, verdict: Verdict, reviewer: &str) -> Result<VerdictOutcome> {
        self.record_verdict_at(a, b, verdict, reviewer, now())
    }

    /// Applies a verdict with an explicit timestamp; durable before returning.
    pub fn record_verdict_at(
        &mut self,
        a: &str,
        b: &str,
        verdict: Verdict,
        reviewer: &str,
        ts: String,
    ) -> Result<VerdictOutcome> {
        if a == b {
            return Err(Error::SelfPair(a.to_string()));
        }
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let event = VerdictEvent {
            ts: ts.clone(),
            a: a.to_string(),
            b: b.to_string(),
            verdict,
            reviewer: reviewer.to_string(),
        };

        let merge = if verdict == Verdict::Confirmed
            && self.root[ia] != self.root[ib]
            && self.size[ia] >= 2
            && self.size[ib] >= 2
        {
            Some(MergeEvent {
                ts,
                event: "merge".into(),
                a: a.to_string(),
                b: b.to_string(),
                a_component: self.component(a),
                b_component: self.component(b),
            })
        } else {
            None
        };

        if let Some(store) = &mut self.store {
            let mut line = serde_json::to_vec(&event)?;
            line.push(b'\n');
            store.events.write_all(&line)?;
            store.events.sync_data()?;
            if let Some(m) = &merge {
                log::warn!(
                    "confirmation {}-{} merges components of {} and {} images",
                    m.a,
                    m.b,
                    m.a_component.len(),
                    m.b_component.len()
                );
                let mut audit = OpenOptions::new().create(true).append(true).open(store.dir.join(AUDIT))?;
                let mut line = serde_json::to_vec(m)?;
                line.push(b'\n');
                audit.write_all(&line)?;
                audit.sync_data()?;
            }
        }

        let previous = self.current.insert(event.key(), event.clone()).map(|e| e.verdict);
        self.history.push(event);
        self.rebuild();
        self.since_compact += 1;
        if self.store.is_some() && self.since_compact >= COMPACT_EVERY {
            self.compact()?;
        }
        Ok(VerdictOutcome {
            previous,
            component_size: self.size[ia],
            merge,
        })
    }

    fn rebuild(&mut self) {
        let mut dsu = Dsu::new(self.names.len());
        for e in self.current.values() {
            if e.verdict == Verdict::Confirmed {
                dsu.union(self.nodes[&e.a], self.nodes[&e.b]);
            }
        }
        self.root = (0..self.names.len()).map(|i| dsu.find(i)).collect();
        self.size = (0..self.names.len()).map(|i| dsu.size_of(i)).collect();
    }

    /// Members of the confirmed component holding `id`, sorted, `id` included.
    pub fn component(&self, id: &str) -> Vec<String> {
        let Some(&i) = self.nodes.get(id) else {
            return Vec::new();
        };
        let r = self.root[i];
        self.nodes
            .iter()
            .filter(|(_, &j)| self.root[j] == r)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn component_size(&self, id: &str) -> usize {
        self.nodes.get(id).map_or(0, |&i| self.size[i])
    }

    pub fn same_component(&self, a: &str, b: &str) -> bool {
        match (self.nodes.get(a), self.nodes.get(b)) {
            (Some(&i), Some(&j)) => self.root[i] == self.root[j],
            _ => false,
        }
    }

    /// All confirmed components, each sorted, ordered by first member.
    pub fn components(&self) -> Vec<Vec<String>> {
        let mut groups: HashMap<usize, Vec<String>> = HashMap::new();
        for (n, &i) in &self.nodes {
            groups.entry(self.root[i]).or_default().push(n.clone());
        }
        let mut out: Vec<Vec<String>> = groups.into_values().collect();
        out.sort();
        out
    }

    /// Confirmed component of `anchor` without `anchor`, plus current rejections of it.
    pub fn exclusion_set(&self, anchor: &str) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.component(anchor).into_iter().filter(|n| n != anchor).collect();
        for e in self.current.values() {
            if e.verdict == Verdict::Rejected {
                if e.a == anchor {
                    out.insert(e.b.clone());
                } else if e.b == anchor {
                    out.insert(e.a.clone());
                }
            }
        }
        out
    }

    /// Canonical serialization of the node set and current verdicts.
    pub fn state_bytes(&self) -> Vec<u8> {
        let state = State {
            nodes: self.nodes.keys().collect(),
            current: self.current.values().collect(),
        };
        serde_json::to_vec(&state).expect("state serializes")
    }

    /// Rewrites the snapshot to cover the whole history.
    pub fn compact(&mut self) -> Result<()> {
        let Some(store) = &self.store else {
            return Ok(());
        };
        let snap = Snapshot {
            events_applied: self.history.len(),
            nodes: self.nodes.keys().cloned().collect(),
            current: self.current.values().cloned().collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&snap)?;
        bytes.push(b'\n');
        write_atomic(&store.dir.join(SNAPSHOT), &bytes)?;
        self.since_compact = 0;
        Ok(())
    }
}

/// Reads the event log, dropping a torn final line.
fn read_events(path: &Path) -> Result<Vec<VerdictEvent>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path)?;
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(p) => p + 1,
        None => 0,
    };
    if complete < bytes.len() {
        log::warn!("{}: dropping torn final line", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
    }
    let mut out = Vec::new();
    for (n, line) in BufReader::new(&bytes[..complete]).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: VerdictEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// An anchor and its scored candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuery {
    pub anchor: String,
    pub pool: Vec<(String, f64)>,
    pub top_k: usize,
}

impl CandidateQuery {
    pub fn new(anchor: impl Into<String>, pool: Vec<(String, f64)>) -> Self {
        Self {
            anchor: anchor.into(),
            pool,
            top_k: 5,
        }
    }
}

/// Pool minus the anchor's exclusion set, best first, ties by image_id.
pub fn filter_candidates(query: &CandidateQuery, graph: &MatchGraph) -> Vec<(String, f64)> {
    let excluded = graph.exclusion_set(&query.anchor);
    let mut out: Vec<(String, f64)> = query
        .pool
        .iter()
        .filter(|(id, _)| *id != query.anchor && !excluded.contains(id))
        .cloned()
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    out.truncate(query.top_k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: &[&str]) -> MatchGraph {
        MatchGraph::in_memory(n.iter().copied())
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn confirm_excludes() {
        let mut g = graph(&["A", "B", "C"]);
        let out = g.record_verdict("A", "B", Verdict::Confirmed, "r").unwrap();
        assert_eq!(out.component_size, 2);
        assert_eq!(g.exclusion_set("A"), set(&["B"]));
    }

    #[test]
    fn latest_wins() {
        let mut g = graph(&["A", "B"]);
        g.record_verdict("A", "B", Verdict::Confirmed, "r").unwrap();
        let out = g.record_verdict("B", "A", Verdict::Rejected, "r").unwrap();
        assert_eq!(out.previous, Some(Verdict::Confirmed));
        assert_eq!(g.current_verdict("A", "B"), Some(Verdict::Rejected));
        assert_eq!(g.history().len(), 2);
        assert_eq!(g.component_size("A"), 1);
        assert_eq!(g.exclusion_set("A"), set(&["B"]));
    }

    #[test]
    fn self_pair_and_unknown() {
        let mut g = graph(&["A"]);
        assert!(matches!(
            g.record_verdict("A", "A", Verdict::Confirmed, "r"),
            Err(Error::SelfPair(_))
        ));
        assert!(matches!(
            g.record_verdict("A", "Z", Verdict::Confirmed, "r"),
            Err(Error::UnknownImage(_))
        ));
        assert!(g.history().is_empty());
    }

    #[test]
    fn chain_is_transitive() {
        let mut g = graph(&["A", "B", "C", "D"]);
        g.record_verdict("A", "B", Verdict::Confirmed, "r").unwrap();
        let out = g.record_verdict("B", "C", Verdict::Confirmed, "r").unwrap();
        assert_eq!(out.component_size, 3);
        assert_eq!(g.exclusion_set("A"), set(&["B", "C"]));
        assert_eq!(g.exclusion_set("D"), set(&[]));
        assert_eq!(
            g.components(),
            vec![vec!["A".to_string(), "B".into(), "C".into()], vec!["D".to_string()]]
        );
    }

    #[test]
    fn rejection_is_pairwise() {
        let mut g = graph(&["A", "B", "D"]);
        g.record_verdict("A", "D", Verdict::Rejected, "r").unwrap();
        assert_eq!(g.exclusion_set("A"), set(&["D"]));
        assert_eq!(g.exclusion_set("B"), set(&[]));
        assert!(graph(&[]).exclusion_set("A").is_empty());
    }

    #[test]
    fn candidates() {
        let mut g = graph(&["q", "a", "b", "c", "d", "e", "f"]);
        g.record_verdict("q", "c", Verdict::Confirmed, "r").unwrap();
        let pool: Vec<(String, f64)> = [("a", 0.9), ("b", 0.8), ("c", 0.95), ("d", 0.5), ("e", 0.4), ("f", 0.3)]
            .iter()
            .map(|(i, s)| (i.to_string(), *s))
            .collect();
        let got = filter_candidates(&CandidateQuery::new("q", pool.clone()), &g);
        let ids: Vec<&str> = got.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["a", "b", "d", "e", "f"]);

        let tied: Vec<(String, f64)> = ["f", "b", "a"].iter().map(|i| (i.to_string(), 0.5)).collect();
        let got = filter_candidates(&CandidateQuery::new("q", tied), &g);
        let ids: Vec<&str> = got.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["a", "b", "f"]);

        let only_c = vec![("c".to_string(), 1.0)];
        assert!(filter_candidates(&CandidateQuery::new("q", only_c), &g).is_empty());
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let state = {
            let mut g = MatchGraph::open(dir.path()).unwrap();
            for n in ["A", "B", "C", "D"] {
                g.add_node(n).unwrap();
            }
            g.record_verdict_at("A", "B", Verdict::Confirmed, "r", "2024-01-01T00:00:00.000Z".into())
                .unwrap();
            g.record_verdict_at("C", "D", Verdict::Rejected, "s", "2024-01-01T00:00:01.000Z".into())
                .unwrap();
            g.state_bytes()
        };
        let g = MatchGraph::open(dir.path()).unwrap();
        assert_eq!(g.state_bytes(), state);
        assert_eq!(g.history().len(), 2);
        let log = fs::read_to_string(dir.path().join(EVENTS)).unwrap();
        assert_eq!(
            log.lines().next().unwrap(),
            r#"{"ts":"2024-01-01T00:00:00.000Z","a":"A","b":"B","verdict":"confirmed","reviewer":"r"}"#
        );
    }

    #[test]
    fn torn_line_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut g = MatchGraph::open(dir.path()).unwrap();
            g.add_node("A").unwrap();
            g.add_node("B").unwrap();
            g.record_verdict("A", "B", Verdict::Confirmed, "r").unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join(EVENTS)).unwrap();
        f.write_all(b"{\"ts\":\"2024").unwrap();
        drop(f);
        let mut g = MatchGraph::open(dir.path()).unwrap();
        assert_eq!(g.history().len(), 1);
        g.record_verdict("A", "B", Verdict::Rejected, "r").unwrap();
        assert_eq!(MatchGraph::open(dir.path()).unwrap().history().len(), 2);
    }

    #[test]
    fn merge_is_audited() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = MatchGraph::open(dir.path()).unwrap();
        for n in ["A", "B", "C", "D"] {
            g.add_node(n).unwrap();
        }
        assert!(g.record_verdict("A", "B", Verdict::Confirmed, "r").unwrap().merge.is_none());
        assert!(g.record_verdict("C", "D", Verdict::Confirmed, "r").unwrap().merge.is_none());
        let out = g.record_verdict("B", "C", Verdict::Confirmed, "r").unwrap();
        assert_eq!(out.component_size, 4);
        assert_eq!(out.merge.unwrap().a_component, vec!["A", "B"]);
        let audit = fs::read_to_string(dir.path().join(AUDIT)).unwrap();
        assert_eq!(audit.lines().count(), 1);
    }
}
