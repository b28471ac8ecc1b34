use crate::error::contract;
use crate::so3::Vec3;
use crate::Result;

/// Each destination linked to its `k` nearest sources.
///
/// Edges are stored destination-major: the edges of destination `d` occupy
/// `d·k .. (d+1)·k`, sorted by distance, ties broken by source index.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub n_dst: usize,
    pub n_src: usize,
    pub src: Vec<usize>,
    pub dist: Vec<f64>,
}

impl KnnGraph {
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    /// Destination of every edge.
    pub fn dst(&self) -> Vec<usize> {
        (0..self.num_edges()).map(|e| e / self.k).collect()
    }

    pub fn neighbors(&self, d: usize) -> &[usize] {
        &self.src[d * self.k..(d + 1) * self.k]
    }

    /// Median non-zero edge length, or `None` when every edge is degenerate.
    pub fn median_distance(&self) -> Option<f64> {
        let mut d: Vec<f64> = self.dist.iter().copied().filter(|v| *v > 0.0).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }
}

/// Brute-force k-nearest-neighbour graph from `query` to `sources`.
pub fn knn(query: &[Vec3], sources: &[Vec3], k: usize) -> Result<KnnGraph> {
    contract!(k >= 1, "knn needs k >= 1");
    contract!(!sources.is_empty(), "knn over an empty source set");
    let k_eff = k.min(sources.len());
    let mut src = Vec::with_capacity(query.len() * k_eff);
    let mut dist = Vec::with_capacity(query.len() * k_eff);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(sources.len());
    for q in query {
        cand.clear();
        cand.extend(sources.iter().enumerate().map(|(i, p)| (sq_dist(q, p), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k_eff < cand.len() {
            cand.select_nth_unstable_by(k_eff - 1, cmp);
            cand.truncate(k_eff);
        }
        cand.sort_by(cmp);
        for &(d2, i) in &cand {
            src.push(i);
            dist.push(d2.sqrt());
        }
    }
    Ok(KnnGraph { k: k_eff, n_dst: query.len(), n_src: sources.len(), src, dist })
}

fn sq_dist(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Farthest-point sampling of `m` indices, seeded at the point nearest the
/// centroid. The result depends only on pairwise distances.
pub fn farthest_point_sampling(points: &[Vec3], m: usize) -> Result<Vec<usize>> {
    contract!(m <= points.len(), "cannot sample {m} of {} points", points.len());
    if m == 0 {
        return Ok(Vec::new());
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for j in 0..3 {
            c[j] += p[j] / n;
        }
    }
    let seed = (0..points.len()).min_by(|&a, &b| sq_dist(&points[a], &c).total_cmp(&sq_dist(&points[b], &c)).then(a.cmp(&b))).unwrap();
    let mut chosen = vec![seed];
    let mut best: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[seed])).collect();
    while chosen.len() < m {
        let next = (0..points.len()).max_by(|&a, &b| best[a].total_cmp(&best[b]).then(b.cmp(&a))).unwrap();
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            best[i] = best[i].min(sq_dist(p, &points[next]));
        }
    }
    Ok(chosen)
}
