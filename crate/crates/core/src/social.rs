//! Social neighbors from co-visitation.
//!
//! Two users are neighbors when the cosine similarity of their POI visit
//! vectors exceeds a threshold. Visit vectors count only training-portion
//! check-ins, and the trajectory context a neighbor contributes to a
//! prediction is cut off at the prediction's observation horizon, so no
//! future information can leak in from either direction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::data::{train_boundary, CheckInLog, History, PoiRegistry};
use crate::error::{Error, Result};

/// Sparse visit-count vector over POIs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckinVector(BTreeMap<u32, f64>);

impl CheckinVector {
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, f64)>) -> Self {
        Self(counts.into_iter().filter(|(_, c)| *c != 0.0).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        // Walk the smaller map, probe the larger.
        let (small, large) = if self.0.len() <= other.0.len() {
            (&self.0, &other.0)
        } else {
            (&other.0, &self.0)
        };
        small
            .iter()
            .filter_map(|(k, v)| large.get(k).map(|w| v * w))
            .sum()
    }
}

/// Visit counts over the user's training-portion check-ins only.
pub fn checkin_vector(log: &CheckInLog, user: u32, train_frac: f64) -> CheckinVector {
    let seq = log.user(user);
    let boundary = train_boundary(seq.len(), train_frac);
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for c in &seq[..boundary] {
        *counts.entry(c.poi).or_insert(0.0) += 1.0;
    }
    CheckinVector(counts)
}

/// Cosine similarity; zero-norm vectors yield 0 rather than NaN.
pub fn cosine_similarity(a: &CheckinVector, b: &CheckinVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Symmetric neighbor lists. For each user, neighbors sort by similarity
/// descending with ties broken by ascending user id.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub tau: f64,
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl NeighborGraph {
    pub fn user_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, user: u32) -> &[(u32, f64)] {
        &self.neighbors[user as usize]
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edge_set(&self) -> BTreeSet<(u32, u32)> {
        let mut set = BTreeSet::new();
        for (u, list) in self.neighbors.iter().enumerate() {
            for &(v, _) in list {
                let (a, b) = if (u as u32) < v { (u as u32, v) } else { (v, u as u32) };
                set.insert((a, b));
            }
        }
        set
    }

    fn sort_lists(&mut self) {
        for list in &mut self.neighbors {
            list.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        }
    }

    /// One `user<TAB>neighbor<TAB>similarity` line per undirected edge,
    /// endpoints as raw ids, lower dense id first, in dense-id order.
    pub fn export(&self, log: &CheckInLog) -> String {
        let mut out = String::new();
        for (u, list) in self.neighbors.iter().enumerate() {
            let mut edges: Vec<&(u32, f64)> =
                list.iter().filter(|(v, _)| (u as u32) < *v).collect();
            edges.sort_by_key(|(v, _)| *v);
            for (v, sim) in edges {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}",
                    log.users[u], log.users[*v as usize], sim
                );
            }
        }
        out
    }

    /// Rebuild from an exported adjacency list (or a provided friendship
    /// file with the same layout). Unknown raw ids are skipped — provided
    /// social links often cover users outside the check-in subset — and the
    /// count of skipped lines is returned alongside the graph.
    pub fn load(text: &str, log: &CheckInLog, tau: f64) -> Result<(Self, usize)> {
        let ids: BTreeMap<&str, u32> = log
            .users
            .iter()
            .enumerate()
            .map(|(i, name)| (name.as_str(), i as u32))
            .collect();
        let mut neighbors = vec![Vec::new(); log.user_count()];
        let mut seen = BTreeSet::new();
        let mut skipped = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 {
                return Err(Error::Malformed(format!(
                    "social edges line {}: expected at least two tab-separated ids",
                    lineno + 1
                )));
            }
            let sim = if fields.len() >= 3 {
                fields[2].parse::<f64>().map_err(|_| {
                    Error::Malformed(format!("social edges line {}: bad similarity", lineno + 1))
                })?
            } else {
                1.0
            };
            match (ids.get(fields[0]), ids.get(fields[1])) {
                (Some(&a), Some(&b)) => {
                    if a == b {
                        return Err(Error::Malformed(format!(
                            "social edges line {}: self-loop on `{}`",
                            lineno + 1,
                            fields[0]
                        )));
                    }
                    let key = (a.min(b), a.max(b));
                    if seen.insert(key) {
                        neighbors[a as usize].push((b, sim));
                        neighbors[b as usize].push((a, sim));
                    }
                }
                _ => skipped += 1,
            }
        }
        let mut graph = Self { tau, neighbors };
        graph.sort_lists();
        Ok((graph, skipped))
    }
}

/// All-pairs neighbor discovery over training-portion visit vectors. An
/// edge exists iff cosine similarity is *strictly* greater than `tau`.
pub fn discover_neighbors(log: &CheckInLog, train_frac: f64, tau: f64) -> NeighborGraph {
    let n = log.user_count();
    let vectors: Vec<CheckinVector> =
        (0..n as u32).map(|u| checkin_vector(log, u, train_frac)).collect();
    let mut neighbors = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            let sim = cosine_similarity(&vectors[a], &vectors[b]);
            if sim > tau {
                neighbors[a].push((b as u32, sim));
                neighbors[b].push((a as u32, sim));
            }
        }
    }
    let mut graph = NeighborGraph { tau, neighbors };
    graph.sort_lists();
    graph
}

/// The neighbor's most recent `n` consecutive check-ins whose last
/// timestamp is `<= cutoff` (inclusive). `None` when fewer than `n`
/// check-ins precede the cutoff.
pub fn neighbor_window(
    log: &CheckInLog,
    neighbor: u32,
    registry: &PoiRegistry,
    cutoff: i64,
    n: usize,
) -> Option<History> {
    if n == 0 {
        return None;
    }
    let seq = log.user(neighbor);
    let upto = seq.partition_point(|c| c.ts <= cutoff);
    if upto < n {
        return None;
    }
    Some(History::from_checkins(&seq[upto - n..upto], registry))
}

/// Neighbor contexts for one prediction: highest-similarity neighbors with
/// a feasible window under the cutoff, at most `k_max` of them.
pub fn neighbor_contexts(
    log: &CheckInLog,
    registry: &PoiRegistry,
    graph: &NeighborGraph,
    user: u32,
    cutoff: i64,
    n: usize,
    k_max: usize,
) -> Vec<(u32, History)> {
    let mut out = Vec::new();
    for &(v, _) in graph.neighbors(user) {
        if out.len() == k_max {
            break;
        }
        if let Some(h) = neighbor_window(log, v, registry, cutoff, n) {
            out.push((v, h));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_poi_registry, parse_checkins_str, CategoryScheme, SourceFormat};
    use approx::assert_abs_diff_eq;

    fn vec_of(pairs: &[(u32, f64)]) -> CheckinVector {
        CheckinVector::from_counts(pairs.iter().copied())
    }

    #[test]
    fn cosine_of_known_vectors() {
        let a = vec_of(&[(0, 1.0), (1, 1.0)]);
        let b = vec_of(&[(0, 1.0)]);
        assert_abs_diff_eq!(cosine_similarity(&a, &b), 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(cosine_similarity(&a, &a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_vector_has_zero_similarity() {
        let a = vec_of(&[]);
        let b = vec_of(&[(3, 2.0)]);
        assert_eq!(cosine_similarity(&a, &b), 0.0);
        assert_eq!(cosine_similarity(&a, &a), 0.0);
    }

    fn log_from_visits(visits: &[&[u32]]) -> CheckInLog {
        // One check-in per hour per user; POI ids map to coordinates on a
        // line so registry building works.
        let mut lines = Vec::new();
        for (u, pois) in visits.iter().enumerate() {
            for (i, p) in pois.iter().enumerate() {
                let lat = 40.0 + f64::from(*p) * 0.01;
                let lon = -74.0 + f64::from(*p) * 0.01;
                lines.push(format!("user{u}\t2012-04-{:02}T{:02}:00:00Z\t{lat}\t{lon}\tpoi{p}", 2 + i / 24, i % 24));
            }
        }
        parse_checkins_str(&lines.join("\n"), SourceFormat::Gowalla, "mem").unwrap().0
    }

    #[test]
    fn vectors_use_training_portion_only() {
        // 10 check-ins, boundary at 8: the final two visits (to POI 9) must
        // not appear in the vector.
        let log = log_from_visits(&[&[1, 1, 2, 1, 2, 1, 1, 2, 9, 9]]);
        let v = checkin_vector(&log, 0, 0.8);
        let nine = log.pois.iter().position(|p| p == "poi9").unwrap() as u32;
        assert_eq!(v.dot(&vec_of(&[(nine, 1.0)])), 0.0);
        assert!(v.norm() > 0.0);
    }

    #[test]
    fn threshold_is_strict() {
        // Visit counts [3, 4] vs [4, 3]: similarity exactly 24/25.
        let visits: Vec<u32> = [vec![0u32; 3], vec![1u32; 4]].concat();
        let visits_b: Vec<u32> = [vec![0u32; 4], vec![1u32; 3]].concat();
        let log = log_from_visits(&[&visits, &visits_b]);
        let sim = 24.0 / 25.0;
        let at = discover_neighbors(&log, 1.0, sim);
        assert_eq!(at.edge_count(), 0, "similarity equal to the threshold is not an edge");
        let below = discover_neighbors(&log, 1.0, sim - 1e-9);
        assert_eq!(below.edge_count(), 1);
    }

    #[test]
    fn raising_the_threshold_never_adds_edges() {
        let log = log_from_visits(&[
            &[0, 1, 2, 0, 1],
            &[0, 1, 3, 0, 1],
            &[4, 5, 6, 7, 8],
            &[0, 0, 0, 1, 1],
        ]);
        let mut prev = usize::MAX;
        for tau in [0.0, 0.25, 0.5, 0.75, 0.95] {
            let g = discover_neighbors(&log, 1.0, tau);
            let edges = g.edge_count();
            assert!(edges <= prev, "tau {tau} added edges");
            prev = edges;
            // Symmetry and no self-loops.
            for u in 0..g.user_count() as u32 {
                for &(v, s) in g.neighbors(u) {
                    assert_ne!(u, v);
                    assert!(g.neighbors(v).iter().any(|&(w, s2)| w == u && s2 == s));
                }
            }
        }
    }

    #[test]
    fn export_load_round_trips_the_edge_set() {
        let log = log_from_visits(&[
            &[0, 1, 2, 0, 1],
            &[0, 1, 3, 0, 1],
            &[0, 1, 2, 0, 2],
            &[9, 9, 9, 9, 9],
        ]);
        let g = discover_neighbors(&log, 1.0, 0.5);
        assert!(g.edge_count() > 0);
        let text = g.export(&log);
        let (loaded, skipped) = NeighborGraph::load(&text, &log, 0.5).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(loaded.edge_set(), g.edge_set());
    }

    #[test]
    fn load_skips_unknown_users_and_rejects_self_loops() {
        let log = log_from_visits(&[&[0, 1], &[0, 1]]);
        let (g, skipped) =
            NeighborGraph::load("user0\tuser1\nghost\tuser0\n", &log, 0.5).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(skipped, 1);
        assert!(NeighborGraph::load("user0\tuser0\n", &log, 0.5).is_err());
    }

    #[test]
    fn neighbor_window_respects_cutoff() {
        let log = log_from_visits(&[&[0, 1, 2, 3, 4, 5]]);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 0.9).unwrap();
        let seq = log.user(0);
        // Cutoff exactly at the 4th check-in (index 3): inclusive.
        let cutoff = seq[3].ts;
        let w = neighbor_window(&log, 0, &registry, cutoff, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.last_ts, cutoff);
        // Every included stamp respects the horizon.
        assert!(w.last_ts <= cutoff);
        // Not enough history before the cutoff.
        assert!(neighbor_window(&log, 0, &registry, seq[1].ts, 3).is_none());
        // A cutoff before everything yields nothing.
        assert!(neighbor_window(&log, 0, &registry, seq[0].ts - 1, 1).is_none());
    }

    #[test]
    fn neighbor_contexts_cap_and_order() {
        // User 0 plus six near-identical users; cap at 4.
        let base: &[u32] = &[0, 1, 2, 0, 1, 2];
        let log = log_from_visits(&[base, base, base, base, base, base, base]);
        let registry = build_poi_registry(&log, &CategoryScheme::foursquare(), 1.0).unwrap();
        let g = discover_neighbors(&log, 1.0, 0.5);
        let cutoff = log.user(0).last().unwrap().ts;
        let ctxs = neighbor_contexts(&log, &registry, &g, 0, cutoff, 3, 4);
        assert_eq!(ctxs.len(), 4);
        // Equal similarity ties break toward lower ids.
        assert_eq!(ctxs.iter().map(|(v, _)| *v).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
