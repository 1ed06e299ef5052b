//! Multi-resolution graph operators for a mesh topology: scaled Laplacians per
//! level, and down/upsampling matrices from quadric-error decimation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use crate::data::Topology;
use crate::error::{Error, Result};
use crate::nn::Csr;

type Vec3 = [f64; 3];
type Quadric = [[f64; 4]; 4];

/// Barycentric weights are snapped to this grid so that each upsampling row
/// sums to exactly one in both f32 and f64.
const WEIGHT_GRID: f64 = (1u64 << 20) as f64;
/// Relative weight of the boundary-preserving quadrics.
const BOUNDARY_WEIGHT: f64 = 100.0;
/// Edge-length tie-break added to the quadric cost.
const LENGTH_PENALTY: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct MeshGraphStack {
    pub topology_id: String,
    /// Vertex count per level, finest first.
    pub sizes: Vec<usize>,
    /// Scaled Laplacian per level (`sizes.len()` entries).
    pub laplacians: Vec<Csr<f64>>,
    /// `down[k]` maps level k to level k+1.
    pub down: Vec<Csr<f64>>,
    /// `up[k]` maps level k+1 back to level k.
    pub up: Vec<Csr<f64>>,
}

impl MeshGraphStack {
    pub fn levels(&self) -> usize {
        self.down.len()
    }
}

/// One resolution level: vertex positions, surviving faces and the edge graph.
#[derive(Debug, Clone)]
struct Level {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
}

/// Build a stack with `levels` halvings (generally: divisions by `factor`).
pub fn build_graph_stack(topology: &Topology, levels: usize) -> Result<MeshGraphStack> {
    build_graph_stack_with(topology, levels, 2)
}

pub fn build_graph_stack_with(topology: &Topology, levels: usize, factor: usize) -> Result<MeshGraphStack> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!("pool factor must be at least 2, got {factor}")));
    }
    let n = topology.n_vertices();
    let pos: Vec<Vec3> = topology
        .reference
        .rows()
        .into_iter()
        .map(|r| [f64::from(r[0]), f64::from(r[1]), f64::from(r[2])])
        .collect();
    let level0 = Level {
        pos,
        faces: topology
            .faces
            .iter()
            .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect(),
        edges: topology.edges(),
    };
    if !is_connected(n, &level0.edges) {
        return Err(Error::Topology {
            expected: "connected mesh".into(),
            got: format!("disconnected topology {}", topology.id),
        });
    }
    let mut sizes = vec![n];
    let mut laplacians = vec![scaled_laplacian(n, &level0.edges)];
    let mut down = Vec::new();
    let mut up = Vec::new();
    let mut cur = level0;
    for _ in 0..levels {
        let nk = cur.pos.len();
        let target = nk.div_ceil(factor).max(1);
        let (kept, coarse) = decimate(&cur, target);
        let d_trip: Vec<_> = kept.iter().enumerate().map(|(i, &v)| (i, v, 1.0)).collect();
        down.push(Csr::from_triplets(kept.len(), nk, &d_trip));
        up.push(upsample_matrix(&cur, &kept, &coarse));
        laplacians.push(scaled_laplacian(coarse.pos.len(), &coarse.edges));
        sizes.push(coarse.pos.len());
        cur = coarse;
    }
    Ok(MeshGraphStack {
        topology_id: topology.id.clone(),
        sizes,
        laplacians,
        down,
        up,
    })
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

/// `-D^{-1/2} A D^{-1/2}`: the normalised Laplacian rescaled by λ_max ≤ 2.
/// Isolated vertices get an all-zero row.
pub fn scaled_laplacian(n: usize, edges: &[(usize, usize)]) -> Csr<f64> {
    let mut deg = vec![0.0f64; n];
    for &(a, b) in edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut trip = Vec::with_capacity(2 * edges.len());
    for &(a, b) in edges {
        let w = -1.0 / (deg[a] * deg[b]).sqrt();
        trip.push((a, b, w));
        trip.push((b, a, w));
    }
    Csr::from_triplets(n, n, &trip)
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn plane_quadric(n: Vec3, p: Vec3, weight: f64) -> Quadric {
    let plane = [n[0], n[1], n[2], -dot(n, p)];
    let mut q = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            q[i][j] = weight * plane[i] * plane[j];
        }
    }
    q
}

fn add_quadric(a: &mut Quadric, b: &Quadric) {
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] += b[i][j];
        }
    }
}

fn quadric_cost(q: &Quadric, p: Vec3) -> f64 {
    let v = [p[0], p[1], p[2], 1.0];
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += v[i] * q[i][j] * v[j];
        }
    }
    s.max(0.0)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    keep: usize,
    remove: usize,
    versions: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // Reversed so that BinaryHeap pops the cheapest; ties by vertex index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then_with(|| (o.keep, o.remove).cmp(&(self.keep, self.remove)))
    }
}

struct Decimator<'a> {
    pos: &'a [Vec3],
    alive: Vec<bool>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<BTreeSet<usize>>,
    nbrs: Vec<BTreeSet<usize>>,
    quadrics: Vec<Quadric>,
    version: Vec<u32>,
    heap: BinaryHeap<Candidate>,
}

impl<'a> Decimator<'a> {
    fn new(level: &'a Level) -> Self {
        let n = level.pos.len();
        let mut vert_faces = vec![BTreeSet::new(); n];
        let mut quadrics = vec![[[0.0; 4]; 4]; n];
        let mut edge_faces: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
        for (fi, f) in level.faces.iter().enumerate() {
            let (a, b, c) = (level.pos[f[0]], level.pos[f[1]], level.pos[f[2]]);
            let nrm = cross(sub(b, a), sub(c, a));
            let area2 = norm(nrm);
            for &v in f {
                vert_faces[v].insert(fi);
            }
            for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edge_faces.entry((x.min(y), x.max(y))).or_default().push(fi);
            }
            if area2 > 0.0 {
                let unit = nrm.map(|c| c / area2);
                let q = plane_quadric(unit, a, 0.5 * area2);
                for &v in f {
                    add_quadric(&mut quadrics[v], &q);
                }
            }
        }
        // Boundary edges: a plane through the edge, perpendicular to its face.
        for (&(x, y), fs) in &edge_faces {
            if fs.len() != 1 {
                continue;
            }
            let f = level.faces[fs[0]];
            let (a, b, c) = (level.pos[f[0]], level.pos[f[1]], level.pos[f[2]]);
            let fnrm = cross(sub(b, a), sub(c, a));
            let e = sub(level.pos[y], level.pos[x]);
            let bn = cross(e, fnrm);
            let len = norm(bn);
            if len > 0.0 {
                let q = plane_quadric(bn.map(|c| c / len), level.pos[x], BOUNDARY_WEIGHT * dot(e, e));
                add_quadric(&mut quadrics[x], &q);
                add_quadric(&mut quadrics[y], &q);
            }
        }
        let mut nbrs = vec![BTreeSet::new(); n];
        for &(a, b) in &level.edges {
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }
        Self {
            pos: &level.pos,
            alive: vec![true; n],
            face_alive: vec![true; level.faces.len()],
            faces: level.faces.clone(),
            vert_faces,
            nbrs,
            quadrics,
            version: vec![0; n],
            heap: BinaryHeap::new(),
        }
    }

    fn push_edge(&mut self, a: usize, b: usize) {
        let mut q = self.quadrics[a];
        add_quadric(&mut q, &self.quadrics[b]);
        let d = sub(self.pos[a], self.pos[b]);
        let tie = LENGTH_PENALTY * dot(d, d);
        let (ca, cb) = (quadric_cost(&q, self.pos[a]), quadric_cost(&q, self.pos[b]));
        let (keep, remove, cost) = if ca <= cb { (a, b, ca) } else { (b, a, cb) };
        self.heap.push(Candidate {
            cost: cost + tie,
            keep,
            remove,
            versions: (self.version[keep], self.version[remove]),
        });
    }

    fn seed_heap(&mut self) {
        self.heap.clear();
        for a in 0..self.pos.len() {
            if !self.alive[a] {
                continue;
            }
            let ns: Vec<usize> = self.nbrs[a].iter().copied().filter(|&b| b > a).collect();
            for b in ns {
                self.push_edge(a, b);
            }
        }
    }

    /// Would moving `remove` onto `keep` flip or collapse a surviving face?
    fn flips(&self, keep: usize, remove: usize) -> bool {
        for &fi in &self.vert_faces[remove] {
            let f = self.faces[fi];
            if f.contains(&keep) {
                continue;
            }
            let p = f.map(|v| self.pos[v]);
            let q = f.map(|v| if v == remove { self.pos[keep] } else { self.pos[v] });
            let before = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            let after = cross(sub(q[1], q[0]), sub(q[2], q[0]));
            if dot(before, after) <= 1e-12 * dot(before, before) {
                return true;
            }
        }
        false
    }

    fn collapse(&mut self, keep: usize, remove: usize) {
        let faces: Vec<usize> = self.vert_faces[remove].iter().copied().collect();
        for fi in faces {
            if self.faces[fi].contains(&keep) {
                self.face_alive[fi] = false;
                for v in self.faces[fi] {
                    self.vert_faces[v].remove(&fi);
                }
            } else {
                for v in self.faces[fi].iter_mut() {
                    if *v == remove {
                        *v = keep;
                    }
                }
                self.vert_faces[keep].insert(fi);
            }
        }
        self.vert_faces[remove].clear();
        // Drop faces that became duplicates of another face around `keep`.
        let mut seen = BTreeSet::new();
        let around: Vec<usize> = self.vert_faces[keep].iter().copied().collect();
        for fi in around {
            let mut key = self.faces[fi];
            key.sort_unstable();
            if !seen.insert(key) {
                self.face_alive[fi] = false;
                for v in self.faces[fi] {
                    self.vert_faces[v].remove(&fi);
                }
            }
        }
        let rn: Vec<usize> = std::mem::take(&mut self.nbrs[remove]).into_iter().collect();
        for n in rn {
            self.nbrs[n].remove(&remove);
            if n != keep {
                self.nbrs[n].insert(keep);
                self.nbrs[keep].insert(n);
            }
        }
        let q = self.quadrics[remove];
        add_quadric(&mut self.quadrics[keep], &q);
        self.alive[remove] = false;
        self.version[keep] += 1;
        self.version[remove] += 1;
        let ns: Vec<usize> = self.nbrs[keep].iter().copied().collect();
        for n in ns {
            self.push_edge(keep, n);
        }
    }

    fn run(&mut self, target: usize) {
        let mut alive = self.alive.iter().filter(|a| **a).count();
        for strict in [true, false] {
            self.seed_heap();
            while alive > target {
                let Some(c) = self.heap.pop() else { break };
                if !self.alive[c.keep]
                    || !self.alive[c.remove]
                    || c.versions != (self.version[c.keep], self.version[c.remove])
                {
                    continue;
                }
                if strict && self.flips(c.keep, c.remove) {
                    continue;
                }
                self.collapse(c.keep, c.remove);
                alive -= 1;
            }
            if alive <= target {
                break;
            }
        }
    }
}

/// Collapse edges until `target` vertices remain. Returns the surviving
/// fine-level indices (ascending) and the coarse level built from them.
fn decimate(level: &Level, target: usize) -> (Vec<usize>, Level) {
    let mut dec = Decimator::new(level);
    dec.run(target);
    let kept: Vec<usize> = (0..level.pos.len()).filter(|&v| dec.alive[v]).collect();
    let mut remap = vec![usize::MAX; level.pos.len()];
    for (i, &v) in kept.iter().enumerate() {
        remap[v] = i;
    }
    let faces = dec
        .faces
        .iter()
        .zip(&dec.face_alive)
        .filter(|(_, a)| **a)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    let mut edges = Vec::new();
    for &a in &kept {
        for &b in &dec.nbrs[a] {
            if a < b {
                edges.push((remap[a], remap[b]));
            }
        }
    }
    edges.sort_unstable();
    let coarse = Level {
        pos: kept.iter().map(|&v| level.pos[v]).collect(),
        faces,
        edges,
    };
    (kept, coarse)
}

/// Closest point on triangle `abc` to `p`, as barycentric weights.
fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

fn combine(w: [f64; 3], a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    std::array::from_fn(|i| w[0] * a[i] + w[1] * b[i] + w[2] * c[i])
}

/// Snap weights to the dyadic grid; the last weight absorbs the remainder so
/// the sum is exactly one.
fn snap(w: [f64; 3]) -> [f64; 3] {
    let q = |x: f64| (x.clamp(0.0, 1.0) * WEIGHT_GRID).round() / WEIGHT_GRID;
    let w0 = q(w[0]);
    let w1 = q(w[1]).min(1.0 - w0);
    [w0, w1, 1.0 - w0 - w1]
}

/// Each fine vertex is expressed in barycentric coordinates of the closest
/// coarse triangle (or edge / vertex when no triangle survives). Kept
/// vertices map to themselves.
fn upsample_matrix(fine: &Level, kept: &[usize], coarse: &Level) -> Csr<f64> {
    let mut coarse_of = vec![usize::MAX; fine.pos.len()];
    for (i, &v) in kept.iter().enumerate() {
        coarse_of[v] = i;
    }
    let mut trip = Vec::new();
    for (v, &p) in fine.pos.iter().enumerate() {
        if coarse_of[v] != usize::MAX {
            trip.push((v, coarse_of[v], 1.0));
            continue;
        }
        let mut best: Option<(f64, [usize; 3], [f64; 3])> = None;
        let mut consider = |ids: [usize; 3], w: [f64; 3]| {
            let q = combine(w, coarse.pos[ids[0]], coarse.pos[ids[1]], coarse.pos[ids[2]]);
            let d = sub(p, q);
            let d2 = dot(d, d);
            if best.as_ref().is_none_or(|b| d2 < b.0) {
                best = Some((d2, ids, w));
            }
        };
        if !coarse.faces.is_empty() {
            for f in &coarse.faces {
                let w = closest_on_triangle(p, coarse.pos[f[0]], coarse.pos[f[1]], coarse.pos[f[2]]);
                consider(*f, w);
            }
        } else if !coarse.edges.is_empty() {
            for &(a, b) in &coarse.edges {
                let e = sub(coarse.pos[b], coarse.pos[a]);
                let len2 = dot(e, e);
                let t = if len2 > 0.0 { (dot(sub(p, coarse.pos[a]), e) / len2).clamp(0.0, 1.0) } else { 0.0 };
                consider([a, b, a], [1.0 - t, t, 0.0]);
            }
        } else {
            for i in 0..coarse.pos.len() {
                consider([i, i, i], [1.0, 0.0, 0.0]);
            }
        }
        let (_, ids, w) = best.expect("coarse level has at least one vertex");
        for (id, wt) in ids.iter().zip(snap(w)) {
            if wt != 0.0 {
                trip.push((v, *id, wt));
            }
        }
    }
    Csr::from_triplets(fine.pos.len(), coarse.pos.len(), &trip)
}
