//! Min-cost-flow tracking.
//!
//! Every detection `k` is split into a `pre` and a `post` node joined by an
//! observation arc. The source feeds every `pre` node (entry cost), every
//! `post` node drains to the sink (exit cost) and transition arcs join `post`
//! of an earlier detection to `pre` of a later one within `max_gap` frames.
//! All arcs carry unit capacity, so each unit of flow is one trajectory and
//! trajectories are vertex-disjoint.
//!
//! Successive shortest paths: potentials are initialized by one relaxation
//! sweep in topological order (the graph is a DAG, costs may be negative),
//! then Dijkstra on reduced costs finds each augmenting path. Augmentation
//! stops once the cheapest path is no longer negative, which yields the
//! minimum cost over every possible number of trajectories.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::domain::{Detection, OffsetField, Point, Trajectory};
use crate::track::{edge_cost, EdgeCostParams};
use crate::Result;

pub const SOURCE: usize = 0;
pub const SINK: usize = 1;

pub fn pre_node(k: usize) -> usize {
    2 + 2 * k
}

pub fn post_node(k: usize) -> usize {
    3 + 2 * k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcKind {
    Entry(usize),
    Exit(usize),
    Observation(usize),
    Transition(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub capacity: u32,
    pub kind: ArcKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArcCounts {
    pub entry: usize,
    pub exit: usize,
    pub observation: usize,
    pub transition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGraph {
    detections: Vec<Detection>,
    arcs: Vec<Arc>,
}

impl TrackingGraph {
    /// Detections in node order (stable-sorted by time).
    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn num_nodes(&self) -> usize {
        2 + 2 * self.detections.len()
    }

    pub fn counts(&self) -> ArcCounts {
        let mut c = ArcCounts::default();
        for a in &self.arcs {
            match a.kind {
                ArcKind::Entry(_) => c.entry += 1,
                ArcKind::Exit(_) => c.exit += 1,
                ArcKind::Observation(_) => c.observation += 1,
                ArcKind::Transition(..) => c.transition += 1,
            }
        }
        c
    }

    /// Overrides every transition cost with `cost(i, j)`.
    pub fn set_transition_costs(&mut self, mut cost: impl FnMut(usize, usize) -> f64) {
        for a in &mut self.arcs {
            if let ArcKind::Transition(i, j) = a.kind {
                a.cost = cost(i, j);
            }
        }
    }

    /// Edge list dump: `src,dst,cost,capacity` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::from("src,dst,cost,capacity\n");
        for a in &self.arcs {
            let _ = writeln!(s, "{},{},{},{}", a.from, a.to, a.cost, a.capacity);
        }
        s
    }
}

/// Builds the flow graph. `bwd_offsets[k]`, when given, is the backward field
/// of the frame pair `(k, k+1)`: it maps frame `k+1` back to frame `k`.
pub fn build_graph(
    detections: &[Detection],
    bwd_offsets: Option<&[OffsetField]>,
    p: &EdgeCostParams,
) -> Result<TrackingGraph> {
    p.validate()?;
    let mut dets = detections.to_vec();
    dets.sort_by_key(|d| d.time);
    let n = dets.len();
    let mut arcs = Vec::with_capacity(4 * n);
    for (k, d) in dets.iter().enumerate() {
        arcs.push(Arc {
            from: SOURCE,
            to: pre_node(k),
            cost: p.entry_cost,
            capacity: 1,
            kind: ArcKind::Entry(k),
        });
        arcs.push(Arc {
            from: pre_node(k),
            to: post_node(k),
            cost: -p.obs_cost_scale * d.confidence,
            capacity: 1,
            kind: ArcKind::Observation(k),
        });
        arcs.push(Arc {
            from: post_node(k),
            to: SINK,
            cost: p.exit_cost,
            capacity: 1,
            kind: ArcKind::Exit(k),
        });
    }
    // motion at each detection, sampled once
    let motion: Vec<Point> = dets
        .iter()
        .map(|d| {
            let pair = d.time - 1;
            match bwd_offsets {
                Some(fields) if pair >= 0 && (pair as usize) < fields.len() => {
                    fields[pair as usize].sample(d.pos)
                }
                _ => Point::default(),
            }
        })
        .collect();
    for i in 0..n {
        let ti = dets[i].time;
        for j in i + 1..n {
            let gap = dets[j].time - ti;
            if gap < 1 {
                continue;
            }
            if gap > p.max_gap as i64 {
                break;
            }
            if dets[i].pos.dist(dets[j].pos) > gap as f64 * p.max_speed_cells {
                continue;
            }
            let cost = edge_cost(dets[i].pos, dets[j].pos, ti, dets[j].time, motion[j], p)?;
            arcs.push(Arc {
                from: post_node(i),
                to: pre_node(j),
                cost,
                capacity: 1,
                kind: ArcKind::Transition(i, j),
            });
        }
    }
    Ok(TrackingGraph {
        detections: dets,
        arcs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SspSolution {
    pub trajectories: Vec<Trajectory>,
    /// Detection indices (graph order) of each trajectory.
    pub paths: Vec<Vec<usize>>,
    pub total_cost: f64,
}

#[derive(Clone, Copy)]
struct Edge {
    to: usize,
    cap: i32,
    cost: f64,
}

#[derive(PartialEq)]
struct State {
    dist: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn solve_ssp(g: &TrackingGraph) -> SspSolution {
    let n_nodes = g.num_nodes();
    // residual edges: arc a is edge 2a, its reverse 2a+1
    let mut edges: Vec<Edge> = Vec::with_capacity(2 * g.arcs.len());
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for a in &g.arcs {
        adj[a.from].push(edges.len());
        edges.push(Edge {
            to: a.to,
            cap: a.capacity as i32,
            cost: a.cost,
        });
        adj[a.to].push(edges.len());
        edges.push(Edge {
            to: a.from,
            cap: 0,
            cost: -a.cost,
        });
    }

    // node order SOURCE, pre0, post0, pre1, … , SINK is topological
    let mut potential = vec![f64::INFINITY; n_nodes];
    potential[SOURCE] = 0.0;
    let order = std::iter::once(SOURCE)
        .chain(2..n_nodes)
        .chain(std::iter::once(SINK));
    for u in order {
        if !potential[u].is_finite() {
            continue;
        }
        for &e in &adj[u] {
            let edge = edges[e];
            if edge.cap > 0 && potential[u] + edge.cost < potential[edge.to] {
                potential[edge.to] = potential[u] + edge.cost;
            }
        }
    }

    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut parent = vec![usize::MAX; n_nodes];
    loop {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        dist[SOURCE] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(State {
            dist: 0.0,
            node: SOURCE,
        });
        while let Some(State { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &adj[u] {
                let edge = edges[e];
                if edge.cap <= 0 || !potential[edge.to].is_finite() {
                    continue;
                }
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    parent[edge.to] = e;
                    heap.push(State {
                        dist: nd,
                        node: edge.to,
                    });
                }
            }
        }
        if !dist[SINK].is_finite() {
            break;
        }
        let path_cost = dist[SINK] + potential[SINK] - potential[SOURCE];
        if path_cost >= 0.0 {
            break;
        }
        let mut v = SINK;
        while v != SOURCE {
            let e = parent[v];
            edges[e].cap -= 1;
            edges[e ^ 1].cap += 1;
            v = edges[e ^ 1].to;
        }
        for (p, d) in potential.iter_mut().zip(&dist) {
            if d.is_finite() {
                *p += d;
            }
        }
    }

    extract(g, &edges)
}

fn extract(g: &TrackingGraph, edges: &[Edge]) -> SspSolution {
    let used = |a: usize| edges[2 * a].cap == 0;
    let mut next_of: Vec<Option<usize>> = vec![None; g.detections.len()];
    let mut starts = Vec::new();
    let mut total_cost = 0.0;
    for (a, arc) in g.arcs.iter().enumerate() {
        if !used(a) {
            continue;
        }
        total_cost += arc.cost;
        match arc.kind {
            ArcKind::Entry(k) => starts.push(k),
            ArcKind::Transition(i, j) => next_of[i] = Some(j),
            _ => {}
        }
    }
    starts.sort_unstable();
    let mut paths = Vec::with_capacity(starts.len());
    let mut trajectories = Vec::with_capacity(starts.len());
    for (id, &s) in starts.iter().enumerate() {
        let mut path = vec![s];
        let d = &g.detections[s];
        let mut traj = Trajectory::start(id as i64, d.time, d.pos);
        let mut cur = s;
        while let Some(j) = next_of[cur] {
            let d = &g.detections[j];
            traj.push(d.time, d.pos)
                .expect("transition arcs go forward in time");
            path.push(j);
            cur = j;
        }
        paths.push(path);
        trajectories.push(traj);
    }
    SspSolution {
        trajectories,
        paths,
        total_cost,
    }
}
