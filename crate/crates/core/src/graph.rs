//! Event-sourced continuous-time dynamic graph.
//!
//! Append-only interaction log with chronological batching and a temporal
//! neighbor index answering "most recent n neighbors of v strictly before
//! time t". Two-phase use: single-writer build, then `freeze` for reads.

use crate::error::{Error, Result};
use std::ops::Range;

pub type NodeId = usize;
pub type Time = f64;

/// One timestamped citation interaction: `src` cites `dst` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub t: Time,
    pub edge_feat: Option<Vec<f64>>,
}

/// Contiguous chronological slice of the event log.
#[derive(Debug, Clone, Copy)]
pub struct EventBatch<'a> {
    pub batch_index: usize,
    /// Absolute index of the first event in the global log.
    pub start: usize,
    pub events: &'a [Event],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub time: Time,
    pub event_id: u64,
}

/// Per-node adjacency sorted most-recent-first. `capacity` bounds retained
/// entries per node; `usize::MAX` keeps full history.
#[derive(Debug)]
pub struct NeighborIndex {
    capacity: usize,
    lists: Vec<Vec<NeighborEntry>>,
}

impl NeighborIndex {
    fn build(events: &[Event], node_count: usize, capacity: usize) -> Self {
        let mut lists: Vec<Vec<NeighborEntry>> = vec![Vec::new(); node_count];
        // events arrive chronologically; record both directions
        for e in events {
            lists[e.src].push(NeighborEntry {
                neighbor: e.dst,
                time: e.t,
                event_id: e.event_id,
            });
            lists[e.dst].push(NeighborEntry {
                neighbor: e.src,
                time: e.t,
                event_id: e.event_id,
            });
        }
        for list in &mut lists {
            if list.len() > capacity {
                let drop = list.len() - capacity;
                list.drain(..drop);
            }
            list.reverse(); // (time, event_id) descending
        }
        NeighborIndex { capacity, lists }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Retained entries for `v`, most recent first.
    pub fn entries(&self, v: NodeId) -> &[NeighborEntry] {
        self.lists.get(v).map_or(&[], |l| l.as_slice())
    }
}

/// Ordered event log plus node metadata.
#[derive(Debug)]
pub struct TemporalGraph {
    events: Vec<Event>,
    node_count: usize,
    node_features: Option<crate::tensor::Tensor<f64>>,
    first_seen: Vec<Time>,
    frozen: bool,
    index: Option<NeighborIndex>,
}

fn validate_edge(src: NodeId, dst: NodeId, t: Time) -> Result<()> {
    if src == dst {
        return Err(Error::InvalidEvent(format!(
            "self-citation rejected: node {src} at t={t}"
        )));
    }
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidEvent(format!(
            "timestamp must be finite and non-negative, got {t}"
        )));
    }
    Ok(())
}

impl TemporalGraph {
    pub fn new() -> Self {
        TemporalGraph {
            events: Vec::new(),
            node_count: 0,
            node_features: None,
            first_seen: Vec::new(),
            frozen: false,
            index: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn node_features(&self) -> Option<&crate::tensor::Tensor<f64>> {
        self.node_features.as_ref()
    }

    /// Earliest event time a node participates in; `None` if isolated.
    pub fn first_seen(&self, v: NodeId) -> Option<Time> {
        self.first_seen.get(v).copied().filter(|t| t.is_finite())
    }

    fn touch_node(&mut self, v: NodeId, t: Time) {
        if v >= self.node_count {
            self.node_count = v + 1;
            self.first_seen.resize(self.node_count, Time::INFINITY);
        }
        if t < self.first_seen[v] {
            self.first_seen[v] = t;
        }
    }

    /// Append one event. Times must be non-decreasing; for unsorted input
    /// use [`TemporalGraph::bulk_load`].
    pub fn add_event(
        &mut self,
        src: NodeId,
        dst: NodeId,
        t: Time,
        edge_feat: Option<Vec<f64>>,
    ) -> Result<u64> {
        if self.frozen {
            return Err(Error::InvalidEvent("graph is frozen".into()));
        }
        validate_edge(src, dst, t)?;
        if let Some(last) = self.events.last() {
            if t < last.t {
                return Err(Error::InvalidEvent(format!(
                    "out-of-order append: t={t} after t={}; use bulk_load for unsorted input",
                    last.t
                )));
            }
        }
        let event_id = self.events.len() as u64;
        self.touch_node(src, t);
        self.touch_node(dst, t);
        self.events.push(Event {
            event_id,
            src,
            dst,
            t,
            edge_feat,
        });
        Ok(event_id)
    }

    /// Load possibly-unsorted edges. Sorts by `(t, src, dst)` — a total
    /// order over distinct edges, so iteration order is independent of the
    /// input permutation — then assigns sequential event ids.
    pub fn bulk_load(
        &mut self,
        edges: impl IntoIterator<Item = (NodeId, NodeId, Time, Option<Vec<f64>>)>,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::InvalidEvent("graph is frozen".into()));
        }
        if !self.events.is_empty() {
            return Err(Error::InvalidEvent(
                "bulk_load requires an empty graph".into(),
            ));
        }
        let mut staged: Vec<(NodeId, NodeId, Time, Option<Vec<f64>>)> = Vec::new();
        for (src, dst, t, feat) in edges {
            validate_edge(src, dst, t)?;
            staged.push((src, dst, t, feat));
        }
        staged.sort_by(|a, b| {
            a.2.partial_cmp(&b.2)
                .expect("finite timestamps")
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        for (src, dst, t, feat) in staged {
            let event_id = self.events.len() as u64;
            self.touch_node(src, t);
            self.touch_node(dst, t);
            self.events.push(Event {
                event_id,
                src,
                dst,
                t,
                edge_feat: feat,
            });
        }
        Ok(())
    }

    /// Register node ids up to `n` even if they have no events yet, so
    /// isolated nodes still get memory slots and feature rows.
    pub fn ensure_nodes(&mut self, n: usize) -> Result<()> {
        if self.frozen {
            return Err(Error::InvalidEvent("graph is frozen".into()));
        }
        if n > self.node_count {
            self.node_count = n;
            self.first_seen.resize(n, Time::INFINITY);
        }
        Ok(())
    }

    /// Node feature matrix, one row per node.
    pub fn set_node_features(&mut self, features: crate::tensor::Tensor<f64>) -> Result<()> {
        if features.rows() != self.node_count {
            return Err(Error::InvalidArgument(format!(
                "feature rows {} != node count {}",
                features.rows(),
                self.node_count
            )));
        }
        self.node_features = Some(features);
        Ok(())
    }

    /// End the build phase and construct the neighbor index. `capacity`
    /// bounds retained entries per node; `None` keeps full history so
    /// queries at any past time see their full prefix.
    pub fn freeze(&mut self, capacity: Option<usize>) {
        let cap = capacity.unwrap_or(usize::MAX);
        self.index = Some(NeighborIndex::build(&self.events, self.node_count, cap));
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn neighbor_index(&self) -> Option<&NeighborIndex> {
        self.index.as_ref()
    }

    /// Most recent `n` neighbors of `v` strictly before `t`, most recent
    /// first, with positive time gaps. Unknown nodes yield an empty list.
    pub fn temporal_neighbors(&self, v: NodeId, t: Time, n: usize) -> Vec<(NodeId, Time, f64)> {
        let index = self.index.as_ref().expect("graph must be frozen");
        index
            .entries(v)
            .iter()
            .skip_while(|e| e.time >= t)
            .take(n)
            .map(|e| (e.neighbor, e.time, t - e.time))
            .collect()
    }

    /// Partition the event list into chronological train/val/test ranges.
    pub fn split_chronological(
        &self,
        fractions: (f64, f64, f64),
    ) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
        let (a, b, c) = fractions;
        if self.events.is_empty() {
            return Err(Error::InvalidArgument("cannot split an empty graph".into()));
        }
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must be positive, got ({a}, {b}, {c})"
            )));
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {}",
                a + b + c
            )));
        }
        let n = self.events.len();
        let i1 = ((a * n as f64).round() as usize).min(n);
        let i2 = (((a + b) * n as f64).round() as usize).clamp(i1, n);
        Ok((0..i1, i1..i2, i2..n))
    }

    /// Next chronological batch within `range` starting at absolute index
    /// `cursor`. `None` when the cursor is exhausted.
    pub fn next_batch(
        &self,
        range: &Range<usize>,
        cursor: usize,
        batch_size: usize,
    ) -> Result<Option<EventBatch<'_>>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let start = cursor.max(range.start);
        if start >= range.end {
            return Ok(None);
        }
        let end = (start + batch_size).min(range.end);
        Ok(Some(EventBatch {
            batch_index: (start - range.start) / batch_size,
            start,
            events: &self.events[start..end],
        }))
    }
}

impl Default for TemporalGraph {
    fn default() -> Self {
        Self::new()
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_edges() -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
        prop::collection::vec(
            (0usize..8, 0usize..8, 0u32..20).prop_filter_map("no self-loops", |(s, d, t)| {
                (s != d).then_some((s, d, t as f64))
            }),
            1..40,
        )
    }

    proptest! {
        #[test]
        fn bulk_load_order_is_permutation_invariant(edges in arb_edges(), seed in 0u64..1000) {
            let mut g1 = TemporalGraph::new();
            g1.bulk_load(edges.iter().map(|&(s, d, t)| (s, d, t, None))).unwrap();

            // deterministic shuffle of the input
            let mut shuffled = edges.clone();
            let mut state = seed.wrapping_add(1);
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let mut g2 = TemporalGraph::new();
            g2.bulk_load(shuffled.iter().map(|&(s, d, t)| (s, d, t, None))).unwrap();

            let key = |g: &TemporalGraph| -> Vec<(usize, usize, u64)> {
                g.events().iter().map(|e| (e.src, e.dst, e.t as u64)).collect()
            };
            prop_assert_eq!(key(&g1), key(&g2));
        }

        #[test]
        fn neighbor_queries_respect_time_and_prefix(edges in arb_edges(), v in 0usize..8, t in 0u32..25, n in 1usize..6) {
            let mut g = TemporalGraph::new();
            g.bulk_load(edges.iter().map(|&(s, d, t)| (s, d, t, None))).unwrap();
            g.freeze(None);
            let t = t as f64;
            let got = g.temporal_neighbors(v, t, n);
            prop_assert!(got.len() <= n);
            for w in got.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for &(_, et, dt) in &got {
                prop_assert!(et < t);
                prop_assert!(dt > 0.0);
            }
            // prefix of the full reverse-chronological adjacency before t
            let full = g.temporal_neighbors(v, t, usize::MAX);
            prop_assert_eq!(&got[..], &full[..got.len().min(full.len())]);
        }

        #[test]
        fn index_retains_min_degree_capacity(edges in arb_edges(), cap in 1usize..5) {
            let mut g = TemporalGraph::new();
            g.bulk_load(edges.iter().map(|&(s, d, t)| (s, d, t, None))).unwrap();
            let mut degree = vec![0usize; g.node_count()];
            for e in g.events() {
                degree[e.src] += 1;
                degree[e.dst] += 1;
            }
            g.freeze(Some(cap));
            let idx = g.neighbor_index().unwrap();
            for v in 0..g.node_count() {
                prop_assert_eq!(idx.entries(v).len(), degree[v].min(cap));
            }
        }

        #[test]
        fn split_partitions_and_is_time_monotone(edges in arb_edges()) {
            let mut g = TemporalGraph::new();
            g.bulk_load(edges.iter().map(|&(s, d, t)| (s, d, t, None))).unwrap();
            if let Ok((tr, va, te)) = g.split_chronological((0.6, 0.2, 0.2)) {
                prop_assert_eq!(tr.start, 0);
                prop_assert_eq!(tr.end, va.start);
                prop_assert_eq!(va.end, te.start);
                prop_assert_eq!(te.end, g.events().len());
                let ev = g.events();
                if !tr.is_empty() && !va.is_empty() {
                    prop_assert!(ev[tr.end - 1].t <= ev[va.start].t);
                }
                if !va.is_empty() && !te.is_empty() {
                    prop_assert!(ev[va.end - 1].t <= ev[te.start].t);
                }
            }
        }
    }
}
