//! Undirected street network with parking lots placed on edges.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// A location on the network: `offset` metres from node `a` of `edge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkPoint {
    pub edge: usize,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub lot_id: String,
    pub point: NetworkPoint,
    pub side: String,
}

#[derive(Debug, Clone, Default)]
pub struct StreetGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Queued(f64, usize);

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl StreetGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, x: f64, y: f64) -> Result<usize> {
        let id = id.into();
        if self.node_index.contains_key(&id) {
            return Err(Error::Network(format!("duplicate node `{id}`")));
        }
        let idx = self.nodes.len();
        self.node_index.insert(id.clone(), idx);
        self.nodes.push(Node { id, x, y });
        self.adjacency.push(Vec::new());
        Ok(idx)
    }

    pub fn add_edge(&mut self, id: impl Into<String>, a: &str, b: &str, length: f64) -> Result<usize> {
        let id = id.into();
        if self.edge_index.contains_key(&id) {
            return Err(Error::Network(format!("duplicate edge `{id}`")));
        }
        let lookup = |n: &str| {
            self.node_index.get(n).copied().ok_or_else(|| Error::Network(format!("edge `{id}` references unknown node `{n}`")))
        };
        let (ia, ib) = (lookup(a)?, lookup(b)?);
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Network(format!("edge `{id}` must have positive length, got {length}")));
        }
        let straight = self.straight_distance(ia, ib);
        if length < straight - 1e-3 * straight.max(1.0) {
            return Err(Error::Network(format!(
                "edge `{id}` is shorter ({length}) than the straight-line distance of its nodes ({straight:.3})"
            )));
        }
        let idx = self.edges.len();
        self.edge_index.insert(id.clone(), idx);
        self.edges.push(Edge { id, a: ia, b: ib, length });
        self.adjacency[ia].push(idx);
        if ib != ia {
            self.adjacency[ib].push(idx);
        }
        Ok(idx)
    }

    fn straight_distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (&self.nodes[a], &self.nodes[b]);
        (p.x - q.x).hypot(p.y - q.y)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_by_id(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn point(&self, edge: usize, offset: f64) -> Result<NetworkPoint> {
        let e = self.edges.get(edge).ok_or_else(|| Error::Network(format!("no edge with index {edge}")))?;
        if !(offset >= 0.0 && offset <= e.length) {
            return Err(Error::Network(format!("offset {offset} outside edge `{}` of length {}", e.id, e.length)));
        }
        Ok(NetworkPoint { edge, offset })
    }

    /// Node distances from `source`, exploring no further than `limit`.
    pub fn node_distances(&self, source: NetworkPoint, limit: f64) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        let e = &self.edges[source.edge];
        for (node, d) in [(e.a, source.offset), (e.b, e.length - source.offset)] {
            if d < dist[node] && d <= limit {
                dist[node] = d;
                heap.push(Queued(d, node));
            }
        }
        while let Some(Queued(d, node)) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &ei in &self.adjacency[node] {
                let edge = &self.edges[ei];
                let next = if edge.a == node { edge.b } else { edge.a };
                let nd = d + edge.length;
                if nd < dist[next] && nd <= limit {
                    dist[next] = nd;
                    heap.push(Queued(nd, next));
                }
            }
        }
        dist
    }

    /// Distance from the source of `node_dist` to `target`.
    pub fn distance_to(&self, source: NetworkPoint, node_dist: &[f64], target: NetworkPoint) -> f64 {
        let e = &self.edges[target.edge];
        let mut best = (node_dist[e.a] + target.offset).min(node_dist[e.b] + e.length - target.offset);
        if source.edge == target.edge {
            best = best.min((source.offset - target.offset).abs());
        }
        best
    }

    /// Shortest-path distance along the network.
    pub fn distance(&self, a: NetworkPoint, b: NetworkPoint) -> Result<f64> {
        let dist = self.node_distances(a, f64::INFINITY);
        let d = self.distance_to(a, &dist, b);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Network("points are not connected".into()))
        }
    }

    /// Walks `length` metres from `start`, choosing the initial direction and
    /// the edge at every node uniformly; dead ends turn the walk around.
    pub fn random_walk<R: Rng + ?Sized>(&self, start: NetworkPoint, length: f64, rng: &mut R) -> NetworkPoint {
        let mut edge = start.edge;
        let mut offset = start.offset;
        let mut toward_b = rng.gen_bool(0.5);
        let mut left = length;
        loop {
            let e = &self.edges[edge];
            let room = if toward_b { e.length - offset } else { offset };
            if left <= room {
                offset += if toward_b { left } else { -left };
                return NetworkPoint { edge, offset: offset.clamp(0.0, e.length) };
            }
            left -= room;
            let node = if toward_b { e.b } else { e.a };
            let choices = &self.adjacency[node];
            let others: Vec<usize> = choices.iter().copied().filter(|&c| c != edge).collect();
            let next = if others.is_empty() { edge } else { others[rng.gen_range(0..others.len())] };
            let ne = &self.edges[next];
            if next == edge {
                toward_b = !toward_b;
                offset = if toward_b { 0.0 } else { ne.length };
            } else if ne.a == node {
                toward_b = true;
                offset = 0.0;
            } else {
                toward_b = false;
                offset = ne.length;
            }
            edge = next;
        }
    }
}

/// A street graph together with its lot placements.
#[derive(Debug, Clone, Default)]
pub struct Network {
    pub graph: StreetGraph,
    pub placements: Vec<Placement>,
}

impl Network {
    pub fn lot_index(&self) -> HashMap<&str, usize> {
        self.placements.iter().enumerate().map(|(i, p)| (p.lot_id.as_str(), i)).collect()
    }

    pub fn add_placement(&mut self, lot_id: impl Into<String>, edge: &str, offset: f64, side: impl Into<String>) -> Result<()> {
        let lot_id = lot_id.into();
        if self.placements.iter().any(|p| p.lot_id == lot_id) {
            return Err(Error::Network(format!("duplicate lot `{lot_id}`")));
        }
        let e = self.graph.edge_by_id(edge).ok_or_else(|| Error::Network(format!("lot `{lot_id}` on unknown edge `{edge}`")))?;
        let point = self.graph.point(e, offset)?;
        self.placements.push(Placement { lot_id, point, side: side.into() });
        Ok(())
    }

    /// Lots within `radius` of `center`, sorted by distance then lot id.
    pub fn lots_within(&self, center: NetworkPoint, radius: f64) -> Vec<(String, f64)> {
        let dist = self.graph.node_distances(center, radius);
        let mut out: Vec<(String, f64)> = self
            .placements
            .iter()
            .filter_map(|p| {
                let d = self.graph.distance_to(center, &dist, p.point);
                (d <= radius).then(|| (p.lot_id.clone(), d))
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// For every lot, the indices of the other lots within `h`.
    pub fn neighbors(&self, h: f64) -> Vec<Vec<usize>> {
        self.placements
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dist = self.graph.node_distances(p.point, h);
                self.placements
                    .iter()
                    .enumerate()
                    .filter(|&(k, q)| k != i && self.graph.distance_to(p.point, &dist, q.point) <= h)
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect()
    }

    /// Scenario centre: a uniformly chosen lot moved a uniform [0, max_shift]
    /// metres along the network.
    pub fn sample_scenario_center<R: Rng + ?Sized>(&self, max_shift: f64, rng: &mut R) -> Result<NetworkPoint> {
        if self.placements.is_empty() {
            return Err(Error::EmptyInput("no lot placements to sample a scenario centre from"));
        }
        let lot = &self.placements[rng.gen_range(0..self.placements.len())];
        let shift = rng.gen::<f64>() * max_shift;
        Ok(self.graph.random_walk(lot.point, shift, rng))
    }

    /// Serialises to the line-oriented graph format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in self.graph.nodes() {
            let _ = writeln!(out, "N {} {} {}", n.id, n.x, n.y);
        }
        for e in self.graph.edges() {
            let nodes = self.graph.nodes();
            let _ = writeln!(out, "E {} {} {} {}", e.id, nodes[e.a].id, nodes[e.b].id, e.length);
        }
        for p in &self.placements {
            let _ = writeln!(out, "P {} {} {} {}", p.lot_id, self.graph.edges()[p.point.edge].id, p.point.offset, p.side);
        }
        out
    }
}

/// Fraction of `neighbors` whose known state equals `state`; `None` when no
/// neighbour has a known state.
pub fn nearby_fraction<F>(neighbors: &[usize], state: u8, state_of: F) -> Option<f64>
where
    F: Fn(usize) -> Option<u8>,
{
    let mut total = 0usize;
    let mut hits = 0usize;
    for &k in neighbors {
        if let Some(s) = state_of(k) {
            total += 1;
            hits += usize::from(s == state);
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Parses `N id x y`, `E id a b length` and `P lot edge offset side` lines;
/// `#` starts a comment.
pub fn parse_network(text: &str) -> Result<Network> {
    let mut net = Network::default();
    let mut pending = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse { line: line_no, message: format!("bad number `{s}`") })
        };
        let arity = |n: usize| -> Result<()> {
            if f.len() == n {
                Ok(())
            } else {
                Err(Error::Parse { line: line_no, message: format!("expected {n} fields, got {}", f.len()) })
            }
        };
        let wrap = |e: Error| Error::Parse { line: line_no, message: e.to_string() };
        match f[0] {
            "N" => {
                arity(4)?;
                net.graph.add_node(f[1], num(f[2])?, num(f[3])?).map_err(wrap)?;
            }
            "E" => {
                arity(5)?;
                net.graph.add_edge(f[1], f[2], f[3], num(f[4])?).map_err(wrap)?;
            }
            "P" => {
                arity(5)?;
                pending.push((line_no, f[1].to_string(), f[2].to_string(), num(f[3])?, f[4].to_string()));
            }
            other => {
                return Err(Error::Parse { line: line_no, message: format!("unknown record type `{other}`") });
            }
        }
    }
    for (line, lot, edge, offset, side) in pending {
        net.add_placement(lot, &edge, offset, side).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    Ok(net)
}

/// Rectangular street grid with `lots_per_edge` evenly spaced lots per edge;
/// sides cycle through `sides` edge by edge.
pub fn street_grid(nx: usize, ny: usize, block: f64, lots_per_edge: usize, sides: &[&str]) -> Result<Network> {
    if nx < 2 || ny < 1 || !(block > 0.0) || sides.is_empty() {
        return Err(Error::Network("grid needs nx >= 2, ny >= 1, a positive block length and at least one side".into()));
    }
    let mut net = Network::default();
    for j in 0..ny {
        for i in 0..nx {
            net.graph.add_node(format!("n{i}_{j}"), i as f64 * block, j as f64 * block)?;
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                edges.push((format!("n{i}_{j}"), format!("n{}_{j}", i + 1)));
            }
            if j + 1 < ny {
                edges.push((format!("n{i}_{j}"), format!("n{i}_{}", j + 1)));
            }
        }
    }
    let mut lot = 0;
    for (k, (a, b)) in edges.iter().enumerate() {
        let id = format!("e{k}");
        net.graph.add_edge(&id, a, b, block)?;
        for m in 0..lots_per_edge {
            let offset = block * (m as f64 + 1.0) / (lots_per_edge as f64 + 1.0);
            net.add_placement(format!("L{lot:04}"), &id, offset, sides[k % sides.len()])?;
            lot += 1;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Network {
        let text = "\
# A-B-C triangle
N A 0 0
N B 3 0
N C 3 4
E ab A B 3
E bc B C 4
E ac A C 8
P p1 ab 1.0 west
P p2 bc 2.0 central
P p3 ac 4.0 south
";
        parse_network(text).unwrap()
    }

    fn at_node(net: &Network, edge: &str, offset: f64) -> NetworkPoint {
        net.graph.point(net.graph.edge_by_id(edge).unwrap(), offset).unwrap()
    }

    #[test]
    fn triangle_distances() {
        let net = triangle();
        let a = at_node(&net, "ab", 0.0);
        let c = at_node(&net, "bc", 4.0);
        assert_eq!(net.graph.distance(a, c).unwrap(), 7.0);
        assert_eq!(net.graph.distance(a, a).unwrap(), 0.0);
        let p = at_node(&net, "ab", 10.0f64.min(3.0));
        assert_eq!(net.graph.distance(a, p).unwrap(), 3.0);
    }

    #[test]
    fn same_edge_uses_offset_difference() {
        let mut net = Network::default();
        net.graph.add_node("a", 0.0, 0.0).unwrap();
        net.graph.add_node("b", 100.0, 0.0).unwrap();
        net.graph.add_edge("e", "a", "b", 100.0).unwrap();
        let p = net.graph.point(0, 10.0).unwrap();
        let q = net.graph.point(0, 35.0).unwrap();
        assert_eq!(net.graph.distance(p, q).unwrap(), 25.0);
    }

    #[test]
    fn lots_within_triangle() {
        let net = triangle();
        // from A: p1 at 1, p2 at 3 + 2 = 5, p3 at min(4, 7 + 4) = 4
        let a = at_node(&net, "ab", 0.0);
        let got = net.lots_within(a, 5.0);
        assert_eq!(got, vec![("p1".into(), 1.0), ("p3".into(), 4.0), ("p2".into(), 5.0)]);
        assert_eq!(net.lots_within(a, 4.5).len(), 2);
        let at_p1 = at_node(&net, "ab", 1.0);
        assert_eq!(net.lots_within(at_p1, 0.0), vec![("p1".to_string(), 0.0)]);
        assert_eq!(net.lots_within(a, 1e9).len(), 3);
    }

    #[test]
    fn nearby_fraction_counts() {
        let states = [Some(1u8), Some(1), Some(0), None];
        assert_eq!(nearby_fraction(&[0, 1, 2], 1, |k| states[k]), Some(2.0 / 3.0));
        assert_eq!(nearby_fraction(&[0, 1], 1, |k| states[k]), Some(1.0));
        assert_eq!(nearby_fraction(&[], 1, |k| states[k]), None);
        assert_eq!(nearby_fraction(&[3], 0, |k| states[k]), None);
        assert_eq!(nearby_fraction(&[0, 1, 2, 3], 1, |k| states[k]), Some(2.0 / 3.0));
    }

    #[test]
    fn parse_errors_report_lines() {
        let err = parse_network("N A 0 0\nE x A Z 3\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_network("N A 0 0\nN B 10 0\nE x A B 3\n").unwrap_err().to_string();
        assert!(err.contains("shorter"), "{err}");
        assert!(parse_network("Q 1 2\n").is_err());
        let err = parse_network("N A 0 0\nN B 1 0\nE x A B 1\nP l x 2 west\n").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let net = street_grid(3, 2, 80.0, 2, &["west", "south"]).unwrap();
        let back = parse_network(&net.to_text()).unwrap();
        assert_eq!(back.placements, net.placements);
        assert_eq!(back.graph.edges(), net.graph.edges());
    }

    #[test]
    fn scenario_centres_stay_close_and_are_reproducible() {
        let mut net = Network::default();
        net.graph.add_node("a", 0.0, 0.0).unwrap();
        net.graph.add_node("b", 500.0, 0.0).unwrap();
        net.graph.add_edge("e", "a", "b", 500.0).unwrap();
        net.add_placement("only", "e", 250.0, "west").unwrap();
        let lot = net.placements[0].point;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<NetworkPoint> =
            (0..200).map(|_| net.sample_scenario_center(50.0, &mut rng).unwrap()).collect();
        for p in &draws {
            assert!(net.graph.distance(lot, *p).unwrap() <= 50.0 + 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let again: Vec<NetworkPoint> =
            (0..200).map(|_| net.sample_scenario_center(50.0, &mut rng).unwrap()).collect();
        assert_eq!(draws, again);
    }

    #[test]
    fn cluster_selection_frequency() {
        // nine lots near one end, one lot at the far end of a long edge
        let mut net = Network::default();
        net.graph.add_node("a", 0.0, 0.0).unwrap();
        net.graph.add_node("b", 5000.0, 0.0).unwrap();
        net.graph.add_edge("e", "a", "b", 5000.0).unwrap();
        for k in 0..9 {
            net.add_placement(format!("c{k}"), "e", 100.0 + k as f64, "west").unwrap();
        }
        net.add_placement("far", "e", 4900.0, "west").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let near = (0..n)
            .filter(|_| net.sample_scenario_center(50.0, &mut rng).unwrap().offset < 2500.0)
            .count();
        let freq = near as f64 / n as f64;
        assert!((freq - 0.9).abs() < 0.03, "{freq}");
    }

    #[test]
    fn random_walk_turns_at_dead_ends() {
        let mut net = Network::default();
        net.graph.add_node("a", 0.0, 0.0).unwrap();
        net.graph.add_node("b", 10.0, 0.0).unwrap();
        net.graph.add_edge("e", "a", "b", 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = net.graph.random_walk(NetworkPoint { edge: 0, offset: 5.0 }, 23.0, &mut rng);
            assert!(p.offset >= 0.0 && p.offset <= 10.0);
        }
    }

    #[test]
    fn grid_neighbors_are_symmetric() {
        let net = street_grid(4, 4, 100.0, 5, &["west", "central", "south"]).unwrap();
        let nb = net.neighbors(50.0);
        for (i, list) in nb.iter().enumerate() {
            for &k in list {
                assert!(nb[k].contains(&i));
            }
        }
        assert!(nb.iter().all(|l| !l.is_empty()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_graph(n: usize, extra: &[(usize, usize, f64)]) -> StreetGraph {
            let mut g = StreetGraph::new();
            for i in 0..n {
                g.add_node(format!("v{i}"), 0.0, 0.0).unwrap();
            }
            // spanning path keeps the graph connected
            for i in 1..n {
                g.add_edge(format!("p{i}"), &format!("v{}", i - 1), &format!("v{i}"), 1.0 + i as f64 % 3.0).unwrap();
            }
            for (k, (a, b, len)) in extra.iter().enumerate() {
                g.add_edge(format!("x{k}"), &format!("v{}", a % n), &format!("v{}", b % n), *len).unwrap();
            }
            g
        }

        proptest! {
            #[test]
            fn symmetric_and_triangle_inequality(
                n in 3usize..20,
                extra in proptest::collection::vec((0usize..50, 0usize..50, 0.5f64..20.0), 0..30),
                picks in proptest::collection::vec((0usize..200, 0.0f64..1.0), 3),
            ) {
                let g = random_graph(n, &extra);
                let pts: Vec<NetworkPoint> = picks
                    .iter()
                    .map(|(e, f)| {
                        let e = e % g.edges().len();
                        NetworkPoint { edge: e, offset: f * g.edges()[e].length }
                    })
                    .collect();
                let d = |a: NetworkPoint, b: NetworkPoint| g.distance(a, b).unwrap();
                prop_assert!((d(pts[0], pts[1]) - d(pts[1], pts[0])).abs() < 1e-9);
                prop_assert!(d(pts[0], pts[2]) <= d(pts[0], pts[1]) + d(pts[1], pts[2]) + 1e-9);
            }
        }
    }
}
