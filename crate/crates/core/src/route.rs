//! Desk-scale routing system: near-shortest candidate paths, a queueing
//! latency oracle and a softmax path-choice model that can be masked per
//! (demand, link) connection.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hypergraph::{build_routing_hypergraph, Demand, Hypergraph, Topology};
use crate::mask::{MaskableModel, OutputKind};
use crate::matrix::Matrix;
use crate::seed;

/// Link ids from source to destination.
pub type Path = Vec<usize>;

/// Utilization beyond which the latency curve continues linearly.
pub const LATENCY_KNEE: f64 = 0.95;
/// Score subtracted per hop.
pub const LENGTH_PENALTY: f64 = 0.3;
const RESIDUAL_FLOOR: f64 = 0.01;

fn bfs_hops(topology: &Topology, src: usize, dst: usize) -> Option<usize> {
    let out = topology.out_links();
    let mut dist = vec![usize::MAX; topology.n_nodes()];
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            return Some(dist[u]);
        }
        for &l in &out[u] {
            let v = topology.links[l].v;
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    None
}

/// Every simple path at most one hop longer than the shortest, ordered by
/// hop count and then by node sequence.
pub fn candidate_paths(topology: &Topology, src: usize, dst: usize) -> Result<Vec<Path>> {
    if src >= topology.n_nodes() || dst >= topology.n_nodes() || src == dst {
        return domain(format!("invalid endpoints {src}→{dst}"));
    }
    let h = bfs_hops(topology, src, dst)
        .ok_or_else(|| Error::Validation(format!("node {dst} is unreachable from {src}")))?;
    let out = topology.out_links();
    let mut found: Vec<(Vec<usize>, Path)> = Vec::new();
    let mut nodes = vec![src];
    let mut links = Vec::new();
    let mut on_path = vec![false; topology.n_nodes()];
    on_path[src] = true;
    fn walk(
        t: &Topology,
        out: &[Vec<usize>],
        dst: usize,
        limit: usize,
        nodes: &mut Vec<usize>,
        links: &mut Vec<usize>,
        on_path: &mut [bool],
        found: &mut Vec<(Vec<usize>, Path)>,
    ) {
        let u = *nodes.last().expect("nonempty");
        if u == dst {
            found.push((nodes.clone(), links.clone()));
            return;
        }
        if links.len() == limit {
            return;
        }
        for &l in &out[u] {
            let v = t.links[l].v;
            if on_path[v] {
                continue;
            }
            on_path[v] = true;
            nodes.push(v);
            links.push(l);
            walk(t, out, dst, limit, nodes, links, on_path, found);
            links.pop();
            nodes.pop();
            on_path[v] = false;
        }
    }
    walk(topology, &out, dst, h + 1, &mut nodes, &mut links, &mut on_path, &mut found);
    found.sort_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| a.0.cmp(&b.0)));
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Candidate paths for every demand of a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub paths: Vec<Vec<Path>>,
}

impl CandidateSet {
    pub fn build(topology: &Topology) -> Result<Self> {
        let paths = topology
            .demands
            .iter()
            .map(|d| candidate_paths(topology, d.src, d.dst))
            .collect::<Result<_>>()?;
        Ok(Self { paths })
    }

    /// Output segment sizes when stacking one distribution per demand.
    pub fn segments(&self) -> Vec<usize> {
        self.paths.iter().map(Vec::len).collect()
    }
}

/// Queueing delay `1 / (c - load)` up to the knee at 0.95 c, continued by
/// its tangent beyond it.
pub fn link_latency(capacity: f64, load: f64) -> Result<f64> {
    if !(capacity > 0.0) {
        return domain(format!("capacity {capacity} must be positive"));
    }
    if !(load >= 0.0) {
        return domain(format!("load {load} must be non-negative"));
    }
    let knee = LATENCY_KNEE * capacity;
    if load < knee {
        return Ok(1.0 / (capacity - load));
    }
    let gap = capacity - knee;
    Ok(1.0 / gap + (load - knee) / (gap * gap))
}

pub fn path_latency(topology: &Topology, loads: &[f64], path: &[usize]) -> Result<f64> {
    path.iter().map(|&l| link_latency(topology.links[l].capacity_mbps, loads[l])).sum()
}

/// Background load plus every demand placed on its route.
pub fn link_loads(topology: &Topology, routes: &[Path]) -> Vec<f64> {
    let mut loads: Vec<f64> = topology.links.iter().map(|l| l.load_mbps).collect();
    for (d, route) in topology.demands.iter().zip(routes) {
        for &l in route {
            loads[l] += d.mbps;
        }
    }
    loads
}

/// Traffic the demands put on each link, background excluded.
pub fn routed_traffic(topology: &Topology, routes: &[Path]) -> Vec<f64> {
    link_loads(topology, routes).iter().zip(&topology.links).map(|(l, link)| l - link.load_mbps).collect()
}

/// Load the model observes: background plus every demand on its first
/// (shortest) candidate.
fn observed_loads(topology: &Topology, candidates: &CandidateSet) -> Vec<f64> {
    let first: Vec<Path> = candidates.paths.iter().map(|p| p[0].clone()).collect();
    link_loads(topology, &first)
}

/// Node at which `alt` leaves `base`, as an index into `base`'s links.
pub fn divergence_index(base: &[usize], alt: &[usize]) -> Option<usize> {
    let k = base.iter().zip(alt).take_while(|(a, b)| a == b).count();
    (k < base.len()).then_some(k)
}

/// Softmax path choice over candidate paths. Per link `v` of path `p` for
/// demand `e` the score adds `θ·φ` with
/// `φ = (ln(δ + W̃·r_v), u_v, d_e·u_v, [v first]·u_v)`,
/// where `r_v` is residual capacity over the largest capacity and `u_v`
/// utilization, both under the observed loads, `d_e` is demand over the
/// largest capacity, and `W̃_ev` is the mask on connections and 1 elsewhere.
/// The mask on `(e, v)` gates `v` in every candidate of demand `e`. Each hop
/// costs [`LENGTH_PENALTY`].
#[derive(Debug, Clone)]
pub struct PathChoiceModel {
    topology: Topology,
    candidates: CandidateSet,
    theta: [f64; 4],
    residual: Vec<f64>,
    utilization: Vec<f64>,
    demand: Vec<f64>,
}

/// Settings for fitting `θ` toward low-latency candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThetaFit {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ThetaFit {
    fn default() -> Self {
        Self { iterations: 400, learning_rate: 0.5 }
    }
}

impl PathChoiceModel {
    pub fn new(topology: Topology, theta: [f64; 4]) -> Result<Self> {
        topology.validate()?;
        let candidates = CandidateSet::build(&topology)?;
        Ok(Self::with_candidates(topology, candidates, theta))
    }

    fn with_candidates(topology: Topology, candidates: CandidateSet, theta: [f64; 4]) -> Self {
        let scale = topology.links.iter().map(|l| l.capacity_mbps).fold(0.0, f64::max);
        let observed = observed_loads(&topology, &candidates);
        let residual = topology
            .links
            .iter()
            .zip(&observed)
            .map(|(l, x)| (l.capacity_mbps - x).max(0.0) / scale)
            .collect();
        let utilization = topology.links.iter().zip(&observed).map(|(l, x)| x / l.capacity_mbps).collect();
        let demand = topology.demands.iter().map(|d| d.mbps / scale).collect();
        Self { topology, candidates, theta, residual, utilization, demand }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn theta(&self) -> [f64; 4] {
        self.theta
    }

    fn phi(&self, e: usize, v: usize, first: bool, wt: f64) -> [f64; 4] {
        let m = (RESIDUAL_FLOOR + wt * self.residual[v]).ln();
        let u = self.utilization[v];
        [m, u, self.demand[e] * u, if first { u } else { 0.0 }]
    }

    /// `∂(θ·φ)/∂W̃` for one link on one path.
    fn dphi(&self, v: usize, wt: f64) -> f64 {
        self.theta[0] * self.residual[v] / (RESIDUAL_FLOOR + wt * self.residual[v])
    }

    fn effective(w: Option<(&Matrix, &Matrix)>, e: usize, v: usize) -> f64 {
        match w {
            Some((w, inc)) if inc.get(e, v) == 1.0 => w.get(e, v),
            _ => 1.0,
        }
    }

    fn path_score(&self, e: usize, path: &[usize], w: Option<(&Matrix, &Matrix)>) -> f64 {
        let mut s = -LENGTH_PENALTY * path.len() as f64;
        for (k, &v) in path.iter().enumerate() {
            let phi = self.phi(e, v, k == 0, Self::effective(w, e, v));
            s += self.theta.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
        }
        s
    }

    /// Per-demand path distributions under `w` (unmasked when `None`).
    pub fn distributions(&self, w: Option<(&Matrix, &Matrix)>) -> Vec<Vec<f64>> {
        self.candidates
            .paths
            .iter()
            .enumerate()
            .map(|(e, paths)| softmax(&paths.iter().map(|p| self.path_score(e, p, w)).collect::<Vec<_>>()))
            .collect()
    }

    /// Highest-probability candidate index per demand, earliest on ties.
    pub fn baseline_choice(&self) -> Vec<usize> {
        self.distributions(None).iter().map(|y| argmax(y)).collect()
    }

    pub fn baseline_routes(&self) -> Vec<Path> {
        self.baseline_choice()
            .into_iter()
            .enumerate()
            .map(|(e, k)| self.candidates.paths[e][k].clone())
            .collect()
    }

    /// Routing hypergraph of the unmasked decisions.
    pub fn hypergraph(&self) -> Result<Hypergraph> {
        build_routing_hypergraph(&self.topology, &self.baseline_routes())
    }

    fn check_shape(&self, h: &Hypergraph, w: &Matrix) -> Result<()> {
        let want = (self.topology.demands.len(), self.topology.links.len());
        if h.incidence().shape() != want || w.shape() != want {
            return domain(format!("mask must be {}x{}", want.0, want.1));
        }
        Ok(())
    }

    /// Fit `θ` by softmax cross-entropy toward the candidate with the lowest
    /// oracle latency when the demand is added over the background load.
    pub fn fit_theta(instances: &[Topology], opts: &ThetaFit) -> Result<[f64; 4]> {
        let mut rows: Vec<(Vec<[f64; 4]>, Vec<f64>, usize)> = Vec::new();
        for t in instances {
            let probe = Self::new(t.clone(), [0.0; 4])?;
            let observed = observed_loads(t, &probe.candidates);
            for (e, paths) in probe.candidates.paths.iter().enumerate() {
                if paths.len() < 2 {
                    continue;
                }
                let d = t.demands[e].mbps;
                let lat: Vec<f64> = paths
                    .iter()
                    .map(|p| {
                        let mut loads = observed.clone();
                        paths[0].iter().for_each(|&l| loads[l] -= d);
                        p.iter().for_each(|&l| loads[l] += d);
                        path_latency(t, &loads, p)
                    })
                    .collect::<Result<_>>()?;
                let target = argmin(&lat);
                let feats = paths
                    .iter()
                    .map(|p| {
                        let mut f = [0.0; 4];
                        for (k, &v) in p.iter().enumerate() {
                            for (a, b) in f.iter_mut().zip(probe.phi(e, v, k == 0, 1.0)) {
                                *a += b;
                            }
                        }
                        f
                    })
                    .collect();
                let offsets = paths.iter().map(|p| -LENGTH_PENALTY * p.len() as f64).collect();
                rows.push((feats, offsets, target));
            }
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData("no demand has an alternative path".into()));
        }
        let mut theta = [0.0; 4];
        for _ in 0..opts.iterations {
            let mut grad = [0.0; 4];
            for (feats, offsets, target) in &rows {
                let s: Vec<f64> = feats
                    .iter()
                    .zip(offsets)
                    .map(|(f, o)| o + theta.iter().zip(f).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let y = softmax(&s);
                for (k, f) in feats.iter().enumerate() {
                    let coef = y[k] - if k == *target { 1.0 } else { 0.0 };
                    for (g, x) in grad.iter_mut().zip(f) {
                        *g += coef * x;
                    }
                }
            }
            for (t, g) in theta.iter_mut().zip(grad) {
                *t -= opts.learning_rate * g / rows.len() as f64;
            }
        }
        Ok(theta)
    }
}

impl MaskableModel for PathChoiceModel {
    fn output_kind(&self) -> OutputKind {
        OutputKind::Discrete { segments: self.candidates.segments() }
    }

    fn evaluate(&self, h: &Hypergraph, w: &Matrix) -> Result<Vec<f64>> {
        self.check_shape(h, w)?;
        Ok(self.distributions(Some((w, h.incidence()))).concat())
    }

    fn vjp(&self, h: &Hypergraph, w: &Matrix, g: &[f64]) -> Option<Result<Matrix>> {
        if let Err(e) = self.check_shape(h, w) {
            return Some(Err(e));
        }
        let inc = h.incidence();
        let ys = self.distributions(Some((w, inc)));
        let mut out = Matrix::zeros(w.rows(), w.cols());
        let mut at = 0;
        for (e, (paths, y)) in self.candidates.paths.iter().zip(&ys).enumerate() {
            let gy = &g[at..at + y.len()];
            at += y.len();
            let mean: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
            for (k, path) in paths.iter().enumerate() {
                // softmax backward: ∂D/∂s_k = y_k (g_k - Σ y g)
                let ds = y[k] * (gy[k] - mean);
                for &v in path {
                    if inc.get(e, v) == 1.0 {
                        let d = ds * self.dphi(v, w.get(e, v));
                        out.set(e, v, out.get(e, v) + d);
                    }
                }
            }
        }
        Some(Ok(out))
    }
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn argmax(y: &[f64]) -> usize {
    (0..y.len()).fold(0, |best, k| if y[k] > y[best] { k } else { best })
}

fn argmin(y: &[f64]) -> usize {
    (0..y.len()).fold(0, |best, k| if y[k] < y[best] { k } else { best })
}

/// Masked distributions and the chosen candidate per demand.
pub fn routing_decisions(model: &PathChoiceModel, h: &Hypergraph, w: &Matrix) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    model.check_shape(h, w)?;
    let ys = model.distributions(Some((w, h.incidence())));
    let chosen = ys.iter().map(|y| argmax(y)).collect();
    Ok((ys, chosen))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need two equal-length series of at least two values".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation between per-link mask sums and link loads.
pub fn mask_traffic_correlation(w: &Matrix, loads: &[f64]) -> Result<f64> {
    if loads.len() != w.cols() {
        return domain("one load per link expected");
    }
    let sums: Vec<f64> = (0..w.cols()).map(|v| (0..w.rows()).map(|e| w.get(e, v)).sum()).collect();
    pearson(&sums, loads)
}

/// One `(p0, p1, p2)` comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReroutePoint {
    pub demand: usize,
    pub p1: usize,
    pub p2: usize,
    /// `w1 - w2`.
    pub mask_gap: f64,
    /// `l1 - l2`, seconds.
    pub latency_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerouteReport {
    /// Share of nonzero points in quadrants I and III.
    pub quadrant_fraction: f64,
    pub points: Vec<ReroutePoint>,
}

/// For each demand's chosen path `p0`, compare every pair of candidates that
/// leave `p0` at different nodes: the mask on `p0`'s outgoing link at each
/// divergence node against the end-to-end latency after moving the demand.
pub fn reroute_points(model: &PathChoiceModel, w: &Matrix) -> Result<Vec<ReroutePoint>> {
    let t = model.topology();
    let chosen = model.baseline_choice();
    let routes = model.baseline_routes();
    let loads = link_loads(t, &routes);
    let mut points = Vec::new();
    for (e, paths) in model.candidates().paths.iter().enumerate() {
        let p0 = &paths[chosen[e]];
        let d = t.demands[e].mbps;
        let mut alts: Vec<(usize, usize, f64)> = Vec::new();
        for (k, p) in paths.iter().enumerate() {
            if k == chosen[e] {
                continue;
            }
            let Some(at) = divergence_index(p0, p) else { continue };
            let mut moved = loads.clone();
            p0.iter().for_each(|&l| moved[l] -= d);
            p.iter().for_each(|&l| moved[l] += d);
            alts.push((k, at, path_latency(t, &moved, p)?));
        }
        for i in 0..alts.len() {
            for j in i + 1..alts.len() {
                let (a, b) = (alts[i], alts[j]);
                if a.1 == b.1 {
                    continue;
                }
                points.push(ReroutePoint {
                    demand: e,
                    p1: a.0,
                    p2: b.0,
                    mask_gap: w.get(e, p0[a.1]) - w.get(e, p0[b.1]),
                    latency_gap: a.2 - b.2,
                });
            }
        }
    }
    Ok(points)
}

/// Fraction of points with `(w1 - w2)(l1 - l2) > 0` among those where the
/// product is nonzero.
pub fn reroute_indicator_eval(points: Vec<ReroutePoint>, min_points: usize) -> Result<RerouteReport> {
    if points.len() < min_points {
        return Err(Error::InsufficientData(format!("{} valid triples, need {min_points}", points.len())));
    }
    let signed: Vec<f64> = points.iter().map(|p| p.mask_gap * p.latency_gap).filter(|x| *x != 0.0).collect();
    let quadrant_fraction =
        if signed.is_empty() { 0.0 } else { signed.iter().filter(|x| **x > 0.0).count() as f64 / signed.len() as f64 };
    Ok(RerouteReport { quadrant_fraction, points })
}

/// Seeded traffic: background load on every link and one demand per
/// ordered node pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Background utilization drawn uniformly from this range.
    pub background: (f64, f64),
    /// Demand volume in Mbps drawn uniformly from this range.
    pub volume_mbps: (f64, f64),
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { background: (0.0, 0.6), volume_mbps: (0.05, 0.3) }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64), hi: f64| r.0 >= 0.0 && r.0 <= r.1 && r.1 <= hi;
        if !ok(self.background, 1.0) {
            return Err(Error::Config { path: "background".into(), message: "must be a range within [0, 1]".into() });
        }
        if !ok(self.volume_mbps, f64::MAX) {
            return Err(Error::Config { path: "volume_mbps".into(), message: "must be a non-negative range".into() });
        }
        Ok(())
    }

    pub fn apply(&self, base: &Topology, seed_value: u64) -> Topology {
        let mut rng = seed::rng(seed_value, 0x7af1c);
        let mut t = base.clone();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        for l in &mut t.links {
            l.load_mbps = draw(&mut rng, self.background) * l.capacity_mbps;
        }
        t.demands.clear();
        for src in 0..t.n_nodes() {
            for dst in 0..t.n_nodes() {
                if src != dst {
                    let mbps = draw(&mut rng, self.volume_mbps);
                    t.demands.push(Demand { src, dst, mbps });
                }
            }
        }
        t
    }
}
