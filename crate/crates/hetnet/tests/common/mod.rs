//! Shared test oracles. Everything here is deliberately written as plain
//! nested loops over `Vec<f64>`, independent of the tape/matrix code paths
//! it is used to check.

#![allow(dead_code)]

use std::collections::HashMap;

use hetnet::env::{EnvConfig, EnvSummary, TeamSpec};
use hetnet::hetgat::{Activation, HetGatLayer, Merge};
use hetnet::hetgraph::{build_graph, HetGraph, SsnNorm};
use hetnet::mat::Mat;
use hetnet::nn::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Dense-loop reference for the heterogeneous attention layer
// ---------------------------------------------------------------------------

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// h (len d_in) through a (d_in x d_out) weight laid out row-major.
fn project(h: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &hi) in h.iter().enumerate() {
        for (o, out_v) in out.iter_mut().enumerate() {
            *out_v += hi * w.get(i, o);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One head of the layer, evaluated per node with explicit mailbox loops.
/// Returns raw (pre-activation, pre-merge) features per node type.
fn dense_head(graph: &HetGraph, layer: &HetGatLayer, store: &ParamStore, head: usize) -> Vec<Vec<Vec<f64>>> {
    let topo = &graph.topo;
    let hp = &layer.heads[head];
    let features: Vec<Vec<Vec<f64>>> = graph.features.iter().map(mat_rows).collect();

    // Self projections.
    let self_proj: Vec<Vec<Vec<f64>>> = (0..topo.n_node_types())
        .map(|t| {
            features[t]
                .iter()
                .map(|h| project(h, store.value(hp.self_w[t])))
                .collect()
        })
        .collect();

    let mut out = self_proj.clone();
    for (ei, &(src, dst)) in topo.edge_types.iter().enumerate() {
        let w_e = store.value(hp.edge_w[ei]);
        let a_dst = store.value(hp.attn_dst[ei]);
        let a_dst: Vec<f64> = (0..a_dst.rows()).map(|r| a_dst.get(r, 0)).collect();
        let a_src = store.value(hp.attn_src[ei]);
        let a_src: Vec<f64> = (0..a_src.rows()).map(|r| a_src.get(r, 0)).collect();
        let n_dst = topo.nodes_of_type(dst);
        for j in 0..n_dst {
            // Mailbox: channel-projected features of senders along this type.
            let mut mailbox: Vec<Vec<f64>> = Vec::new();
            for &(s, d) in &topo.edges[ei] {
                if d as usize == j {
                    mailbox.push(project(&features[src][s as usize], w_e));
                }
            }
            if mailbox.is_empty() {
                continue;
            }
            let logits: Vec<f64> = mailbox
                .iter()
                .map(|m| leaky_relu(dot(&a_dst, &self_proj[dst][j]) + dot(&a_src, m), 0.2))
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (m, e) in mailbox.iter().zip(&exps) {
                for (o, v) in out[dst][j].iter_mut().zip(m) {
                    *o += (e / z) * v;
                }
            }
        }
    }
    out
}

/// Full dense reference: all heads, activation and merge applied the same
/// way the layer defines them (per-head activation before concatenation;
/// raw average for the final layer).
pub fn dense_layer_reference(graph: &HetGraph, layer: &HetGatLayer, store: &ParamStore) -> Vec<Vec<Vec<f64>>> {
    let heads: Vec<Vec<Vec<Vec<f64>>>> = (0..layer.k_heads())
        .map(|h| dense_head(graph, layer, store, h))
        .collect();
    let activate = |v: f64| match layer.activation {
        Activation::Elu => elu(v),
        Activation::Identity => v,
    };
    let n_types = graph.topo.n_node_types();
    (0..n_types)
        .map(|t| {
            let n = graph.topo.nodes_of_type(t);
            (0..n)
                .map(|j| match layer.merge {
                    Merge::Concat => {
                        let mut row = Vec::new();
                        for head in &heads {
                            row.extend(head[t][j].iter().map(|&v| activate(v)));
                        }
                        row
                    }
                    Merge::Average => {
                        let d = heads[0][t][j].len();
                        let mut row = vec![0.0; d];
                        for head in &heads {
                            for (acc, &v) in row.iter_mut().zip(&head[t][j]) {
                                *acc += v;
                            }
                        }
                        row.iter().map(|v| activate(v / heads.len() as f64)).collect()
                    }
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Homogeneous graph-layer references
// ---------------------------------------------------------------------------

/// Homogeneous GAT update with a self term and one shared weight/attention:
/// h'_j = act( W h_j + sum_k alpha_jk W h_k ),
/// alpha = softmax_k( leaky_relu( a . [W h_j || W h_k] ) ).
pub fn homogeneous_gat_reference(
    features: &[Vec<f64>],
    undirected_edges: &[(usize, usize)],
    w: &Mat,
    a_dst: &[f64],
    a_src: &[f64],
    use_elu: bool,
) -> Vec<Vec<f64>> {
    let n = features.len();
    let proj: Vec<Vec<f64>> = features.iter().map(|h| project(h, w)).collect();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in undirected_edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    (0..n)
        .map(|j| {
            let mut out = proj[j].clone();
            if !neighbors[j].is_empty() {
                let logits: Vec<f64> = neighbors[j]
                    .iter()
                    .map(|&k| leaky_relu(dot(a_dst, &proj[j]) + dot(a_src, &proj[k]), 0.2))
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (idx, &k) in neighbors[j].iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(&proj[k]) {
                        *o += exps[idx] / z * v;
                    }
                }
            }
            out.iter().map(|&v| if use_elu { elu(v) } else { v }).collect()
        })
        .collect()
}

/// Structure-normalized graph convolution (no attention):
/// h'_j = act( W h_j + sum_k (1/c_jk) W h_k ), c_jk = sqrt(|N(j)||N(k)|).
pub fn structural_conv_reference(
    features: &[Vec<f64>],
    undirected_edges: &[(usize, usize)],
    w: &Mat,
    use_elu: bool,
) -> Vec<Vec<f64>> {
    let n = features.len();
    let proj: Vec<Vec<f64>> = features.iter().map(|h| project(h, w)).collect();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in undirected_edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    (0..n)
        .map(|j| {
            let mut out = proj[j].clone();
            for &k in &neighbors[j] {
                let c = ((neighbors[j].len() * neighbors[k].len()) as f64).sqrt();
                for (o, v) in out.iter_mut().zip(&proj[k]) {
                    *o += v / c;
                }
            }
            out.iter().map(|&v| if use_elu { elu(v) } else { v }).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Graph/layer scaffolding helpers
// ---------------------------------------------------------------------------

pub fn summary_for(team: &TeamSpec) -> EnvSummary {
    EnvSummary {
        class_counts: team.counts.clone(),
        grid_height: 8,
        grid_width: 8,
        timestep: 3,
        episode_limit: 80,
    }
}

/// Build a layer whose node/edge tables match `team` in training mode, with
/// uniform dims (`ssn_in` on the SSN input when it differs).
pub fn make_layer(
    team: &TeamSpec,
    d_in: usize,
    ssn_in: usize,
    d_out: usize,
    k: usize,
    merge: Merge,
    activation: Activation,
    seed: u64,
) -> (HetGatLayer, ParamStore) {
    use hetnet::hetgraph::{edge_type_names, edge_type_table};
    use rand::SeedableRng;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = team.n_classes();
    let edge_types = edge_type_table(n, true);
    let edge_names = edge_type_names(team, true);
    let mut type_names: Vec<String> = team.classes.iter().map(|c| c.short_code.to_string()).collect();
    type_names.push("S".into());
    let mut in_dims = vec![d_in; n];
    in_dims.push(ssn_in);
    let out_dims = vec![d_out; n + 1];
    let layer = HetGatLayer::new(
        &mut store,
        "gat",
        &in_dims,
        &out_dims,
        &edge_types,
        &type_names,
        &edge_names,
        k,
        merge,
        activation,
        &mut rng,
    );
    (layer, store)
}

/// Random features for a team on an 8x8 board, positions supplied.
pub fn random_graph(
    team: &TeamSpec,
    positions: &[(i64, i64)],
    d_in: usize,
    range: Option<u64>,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> HetGraph {
    let feats: Vec<Vec<f64>> = (0..team.n_agents())
        .map(|_| (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    build_graph(
        team,
        positions,
        &feats,
        range,
        training,
        &summary_for(team),
        &SsnNorm::default(),
    )
    .unwrap()
}

/// A PP/PCP team with the given class sizes (n_capture = 0 gives PP).
pub fn team_of(n_predator: usize, n_capture: usize) -> TeamSpec {
    if n_capture == 0 {
        EnvConfig::pp(8, 8, n_predator).team()
    } else {
        EnvConfig::pcp(8, 8, n_predator, n_capture).team()
    }
}

/// Graph over explicit undirected agent pairs with random features.
pub fn graph_from_pairs(
    team: &TeamSpec,
    pairs: &[(usize, usize)],
    d_in: usize,
    ssn_in: usize,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> HetGraph {
    use hetnet::hetgraph::topology_from_pairs;
    let topo = topology_from_pairs(team, pairs, training);
    let mut features = Vec::new();
    for class in 0..team.n_classes() {
        features.push(Mat::from_fn(team.counts[class], d_in, |_, _| {
            rng.random_range(-1.0..1.0)
        }));
    }
    if training {
        features.push(Mat::from_fn(1, ssn_in, |_, _| rng.random_range(0.0..1.0)));
    }
    HetGraph { topo, features }
}

/// Batched layer output vs. the dense mailbox reference, entry by entry.
pub fn assert_matches_dense(graph: &HetGraph, layer: &HetGatLayer, store: &ParamStore) {
    let got = layer.multi_head_forward(graph, store);
    let want = dense_layer_reference(graph, layer, store);
    for (t, mat) in got.iter().enumerate() {
        for j in 0..mat.rows() {
            for c in 0..mat.cols() {
                let g = mat.get(j, c);
                let w = want[t][j][c];
                assert!(
                    (g - w).abs() <= 1e-10 * g.abs().max(w.abs()).max(1.0),
                    "type {t} node {j} col {c}: {g} vs {w}"
                );
            }
        }
    }
}

/// Dense-oracle equivalence sweep: every undirected pair subset on teams of
/// up to `max_exhaustive` nodes (with and without SSN), plus `n_random`
/// random graphs of up to 6 nodes. Returns the number of graphs checked.
pub fn dense_equivalence_suite(max_exhaustive: usize, n_random: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut cases = 0usize;
    for n in 2..=max_exhaustive {
        for n_capture in 0..n {
            let team = team_of(n - n_capture, n_capture);
            let all_pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|j| ((j + 1)..n).map(move |k| (j, k)))
                .collect();
            for subset in 0..(1usize << all_pairs.len()) {
                let pairs: Vec<(usize, usize)> = all_pairs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| subset & (1 << i) != 0)
                    .map(|(_, &p)| p)
                    .collect();
                for training in [false, true] {
                    let (layer, store) =
                        make_layer(&team, 3, 5, 3, 2, Merge::Concat, Activation::Elu, 91 + n as u64);
                    let graph = graph_from_pairs(&team, &pairs, 3, 5, training, &mut rng);
                    assert_matches_dense(&graph, &layer, &store);
                    cases += 1;
                }
            }
        }
    }
    for case in 0..n_random as u64 {
        let n = rng.random_range(2..=6usize);
        let n_capture = rng.random_range(0..n);
        let team = team_of(n - n_capture, n_capture);
        let all_pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|j| ((j + 1)..n).map(move |k| (j, k)))
            .collect();
        let pairs: Vec<(usize, usize)> = all_pairs
            .iter()
            .filter(|_| rng.random_bool(0.6))
            .copied()
            .collect();
        let heads = rng.random_range(1..=4usize);
        let (merge, act) = if rng.random_bool(0.5) {
            (Merge::Concat, Activation::Elu)
        } else {
            (Merge::Average, Activation::Identity)
        };
        let (layer, store) = make_layer(&team, 4, 5, 3, heads, merge, act, 7000 + case);
        let graph = graph_from_pairs(&team, &pairs, 4, 5, true, &mut rng);
        assert_matches_dense(&graph, &layer, &store);
        cases += 1;
    }
    cases
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0),
        "{what}: {a} vs {b}"
    );
}

// ---------------------------------------------------------------------------
// Optimal-search oracle (belief-space value iteration)
// ---------------------------------------------------------------------------

/// Exact expected steps-to-prey of an optimal single searcher on an
/// `h x w` grid with a Chebyshev field of view of radius `v`.
///
/// The searcher starts uniformly at random; the prey is uniform over the
/// remaining cells. Observations are deterministic, so the belief state is
/// (position, set of still-possible prey cells): once the prey enters the
/// window its position is known and the optimal continuation is the
/// Manhattan walk. Between sightings no information arrives beyond window
/// eliminations, so optimal behavior satisfies a Bellman equation over
/// (position, candidate mask), solved here by memoized value iteration —
/// candidate sets only ever shrink, so each mask layer is a deterministic
/// shortest-path problem with exit costs into strictly smaller layers.
pub struct SearchOracle {
    h: usize,
    w: usize,
    v: i64,
    windows: Vec<u32>,
    memo: HashMap<(u8, u32), f64>,
}

impl SearchOracle {
    pub fn new(h: usize, w: usize, fov_radius: usize) -> Self {
        assert!(h * w <= 32, "mask is u32");
        assert!(fov_radius >= 1, "moves must stay inside the field of view");
        let v = fov_radius as i64;
        let windows = (0..h * w)
            .map(|p| {
                let (pr, pc) = ((p / w) as i64, (p % w) as i64);
                let mut mask = 0u32;
                for c in 0..h * w {
                    let (cr, cc) = ((c / w) as i64, (c % w) as i64);
                    if (pr - cr).abs().max((pc - cc).abs()) <= v {
                        mask |= 1 << c;
                    }
                }
                mask
            })
            .collect();
        SearchOracle {
            h,
            w,
            v,
            windows,
            memo: HashMap::new(),
        }
    }

    fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = (a / self.w, a % self.w);
        let (br, bc) = (b / self.w, b % self.w);
        ar.abs_diff(br) + ac.abs_diff(bc)
    }

    fn neighbors(&self, p: usize) -> Vec<usize> {
        let (r, c) = (p / self.w, p % self.w);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(p - self.w);
        }
        if r + 1 < self.h {
            out.push(p + self.w);
        }
        if c > 0 {
            out.push(p - 1);
        }
        if c + 1 < self.w {
            out.push(p + 1);
        }
        out
    }

    /// Expected extra steps once the prey is known to be in `seen`
    /// (conditioned on that event), standing at `p`.
    fn mean_walk(&self, p: usize, seen: u32) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for c in 0..self.h * self.w {
            if seen & (1 << c) != 0 {
                total += self.manhattan(p, c) as f64;
                count += 1.0;
            }
        }
        total / count
    }

    /// V(p, S): expected remaining steps standing at `p` with candidate set
    /// `S`, given W(p) has already been observed empty (S excludes it).
    fn value(&mut self, p: usize, s: u32) -> f64 {
        debug_assert_eq!(self.windows[p] & s, 0);
        debug_assert!(s != 0);
        if let Some(&v) = self.memo.get(&(p as u8, s)) {
            return v;
        }
        self.solve_layer(s);
        self.memo[&(p as u8, s)]
    }

    /// Solve all in-layer positions of mask `s` at once (those whose window
    /// does not intersect `s`): a shortest-path sweep where moving onto a
    /// probing cell pays its expected continuation.
    fn solve_layer(&mut self, s: u32) {
        let n = self.h * self.w;
        let total = s.count_ones() as f64;
        // Exit cost of moving onto q when W(q) intersects S.
        let mut exit: Vec<Option<f64>> = vec![None; n];
        for q in 0..n {
            let seen = self.windows[q] & s;
            if seen == 0 {
                continue;
            }
            let rho = seen.count_ones() as f64 / total;
            let remaining = s & !self.windows[q];
            let mut cost = rho * self.mean_walk(q, seen);
            if remaining != 0 {
                cost += (1.0 - rho) * self.value(q, remaining);
            }
            exit[q] = Some(cost);
        }
        // Bellman sweeps over in-layer positions.
        let in_layer: Vec<usize> = (0..n).filter(|&p| self.windows[p] & s == 0).collect();
        let mut v: Vec<f64> = vec![f64::INFINITY; n];
        for _ in 0..4 * n {
            let mut changed = false;
            for &p in &in_layer {
                let mut best = f64::INFINITY;
                for q in self.neighbors(p) {
                    let cand = 1.0
                        + match exit[q] {
                            Some(cost) => cost,
                            None => v[q],
                        };
                    best = best.min(cand);
                }
                if best < v[p] - 1e-12 {
                    v[p] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for &p in &in_layer {
            assert!(v[p].is_finite(), "layer {s:#b} position {p} unreachable");
            self.memo.insert((p as u8, s), v[p]);
        }
    }

    /// Expected steps over uniform start and uniform prey != start.
    pub fn optimal_expected_steps(&mut self) -> f64 {
        let n = self.h * self.w;
        let mut total = 0.0;
        for p0 in 0..n {
            let candidates = !0u32 >> (32 - n) & !(1 << p0);
            let seen0 = self.windows[p0] & candidates;
            let hidden = candidates & !self.windows[p0];
            let count = candidates.count_ones() as f64;
            let mut e = 0.0;
            if seen0 != 0 {
                e += seen0.count_ones() as f64 / count * self.mean_walk(p0, seen0);
            }
            if hidden != 0 {
                e += hidden.count_ones() as f64 / count * self.value(p0, hidden);
            }
            total += e;
        }
        total / n as f64
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }
}
