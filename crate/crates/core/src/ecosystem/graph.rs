use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Directed follow graph stored as forward (following) and reverse
/// (followers) adjacency in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    n_users: usize,
    seed: u64,
    follow_offsets: Vec<u32>,
    follow_targets: Vec<u32>,
    follower_offsets: Vec<u32>,
    follower_sources: Vec<u32>,
}

impl SocialGraph {
    /// Builds a graph from `(consumer, creator)` pairs. Self-edges,
    /// duplicates and out-of-range ids are rejected.
    pub fn from_edges(n_users: usize, seed: u64, edges: &[(u32, u32)]) -> Result<Self> {
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::config(format!("duplicate edge {}->{}", w[0].0, w[0].1)));
            }
        }
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::config(format!("self edge on user {u}")));
            }
            if u as usize >= n_users || v as usize >= n_users {
                return Err(Error::config(format!("edge {u}->{v} outside 0..{n_users}")));
            }
        }

        let (follow_offsets, follow_targets) = csr(n_users, edges.iter().copied());
        let mut reversed: Vec<(u32, u32)> = edges.iter().map(|&(u, v)| (v, u)).collect();
        reversed.sort_unstable();
        let (follower_offsets, follower_sources) = csr(n_users, reversed.into_iter());

        Ok(Self { n_users, seed, follow_offsets, follow_targets, follower_offsets, follower_sources })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_edges(&self) -> usize {
        self.follow_targets.len()
    }

    /// Creators followed by `user`, ascending.
    pub fn following(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.follow_targets[self.follow_offsets[u] as usize..self.follow_offsets[u + 1] as usize]
    }

    /// Index range of `user`'s out-edges in [`SocialGraph::edges`] order.
    pub fn edge_range(&self, user: u32) -> std::ops::Range<usize> {
        let u = user as usize;
        self.follow_offsets[u] as usize..self.follow_offsets[u + 1] as usize
    }

    /// Consumers following `user`, ascending.
    pub fn followers(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.follower_sources[self.follower_offsets[u] as usize..self.follower_offsets[u + 1] as usize]
    }

    pub fn out_degree(&self, user: u32) -> usize {
        self.edge_range(user).len()
    }

    pub fn in_degree(&self, user: u32) -> usize {
        self.followers(user).len()
    }

    pub fn mean_out_degree(&self) -> f64 {
        self.n_edges() as f64 / self.n_users as f64
    }

    /// All edges as `(consumer, creator)`, sorted. The position of an edge
    /// in this sequence is its edge index.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_users as u32).flat_map(move |u| self.following(u).iter().map(move |&v| (u, v)))
    }
}

fn csr(n: usize, sorted: impl Iterator<Item = (u32, u32)>) -> (Vec<u32>, Vec<u32>) {
    let mut offsets = vec![0u32; n + 1];
    let mut targets = Vec::new();
    for (u, v) in sorted {
        offsets[u as usize + 1] += 1;
        targets.push(v);
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    (offsets, targets)
}

/// Small-world follow graph: a directed ring lattice where each user follows
/// their nearest neighbours (alternating sides), then each edge is rewired to
/// a uniformly random creator with probability `rewire_prob`.
///
/// A fractional `mean_degree` is realised by giving each user
/// `floor(mean_degree)` or `ceil(mean_degree)` out-edges.
pub fn generate_graph(n_users: usize, mean_degree: f64, rewire_prob: f64, seed: u64) -> Result<SocialGraph> {
    if n_users < 2 {
        return Err(Error::config(format!("n_users must be >= 2, got {n_users}")));
    }
    if !(mean_degree > 0.0 && mean_degree < n_users as f64) {
        return Err(Error::config(format!("mean_degree must be in (0, n_users), got {mean_degree}")));
    }
    if !(0.0..=1.0).contains(&rewire_prob) {
        return Err(Error::config(format!("rewire_prob must be in [0, 1], got {rewire_prob}")));
    }
    if n_users > u32::MAX as usize {
        return Err(Error::config("n_users exceeds u32 id space"));
    }

    let mut rng = rng_from(seed);
    let n = n_users as i64;
    let base = mean_degree.floor() as usize;
    let frac = mean_degree - mean_degree.floor();

    let mut adjacency: Vec<Vec<u32>> = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let extra = usize::from(frac > 0.0 && rng.random::<f64>() < frac);
        let degree = (base + extra).min(n_users - 1);
        let mut targets: Vec<u32> = Vec::with_capacity(degree);
        let mut step = 1i64;
        while targets.len() < degree {
            for off in [step, -step] {
                if targets.len() == degree {
                    break;
                }
                let j = (i as i64 + off).rem_euclid(n) as u32;
                if j as usize != i && !targets.contains(&j) {
                    targets.push(j);
                }
            }
            step += 1;
        }
        adjacency.push(targets);
    }

    if rewire_prob > 0.0 {
        for (i, targets) in adjacency.iter_mut().enumerate() {
            if targets.len() >= n_users - 1 {
                continue;
            }
            for k in 0..targets.len() {
                if rng.random::<f64>() >= rewire_prob {
                    continue;
                }
                loop {
                    let j = rng.random_range(0..n_users as u32);
                    if j as usize != i && !targets.contains(&j) {
                        targets[k] = j;
                        break;
                    }
                }
            }
        }
    }

    let edges: Vec<(u32, u32)> =
        adjacency.iter().enumerate().flat_map(|(i, ts)| ts.iter().map(move |&j| (i as u32, j))).collect();
    SocialGraph::from_edges(n_users, seed, &edges)
}
