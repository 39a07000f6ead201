use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::BinaryEmbedding;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;

/// Dense symmetric similarity matrix with a document id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("similarity matrix must be {n}x{n}")));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Self { ids, data };
        for a in 0..n {
            for b in 0..n {
                let v = m.get(a, b);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("similarity [{a}][{b}] = {v} outside [0, 1]")));
                }
                if v != m.get(b, a) {
                    return Err(Error::invalid(format!("similarity matrix not symmetric at [{a}][{b}]")));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n() + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let n = self.n();
        &self.data[a * n..(a + 1) * n]
    }
}

fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut x, mut y, mut c) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                x += 1;
                y += 1;
            }
        }
    }
    c
}

pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairwise Jaccard similarity of the active sets. The diagonal is 1.
pub fn jaccard_matrix(embs: &[BinaryEmbedding]) -> Result<SimilarityMatrix> {
    let n = embs.len();
    if n < 2 {
        return Err(Error::invalid(format!("jaccard_matrix needs at least 2 docs, got {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    if a == b {
                        1.0
                    } else {
                        jaccard(&embs[a].active, &embs[b].active)
                    }
                })
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix {
        ids: embs.iter().map(|e| e.doc_id.clone()).collect(),
        data: rows.into_iter().flatten().collect(),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start; returns (labels, inertia).
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &c)| sq_dist(p, &centers[c])).sum();
    (labels, inertia)
}

/// Best of several seeded k-means++ runs by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("k = {k} for {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// Renumbers labels in order of first appearance.
pub(crate) fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Cluster labels (one per matrix row) from spectral embedding + k-means.
///
/// Rows with no off-diagonal similarity are left out of the embedding and
/// then joined to the cluster they are most similar to on average (ties go
/// to the larger cluster, then the lower index).
pub fn spectral_labels(s: &SimilarityMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = s.n();
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the number of documents ({n})")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let degree: Vec<f64> = (0..n)
        .map(|a| {
            s.row(a)
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(_, v)| v)
                .sum()
        })
        .collect();
    let connected: Vec<usize> = (0..n).filter(|&a| degree[a] > 0.0).collect();
    let m = connected.len();
    if m < k {
        return Err(Error::invalid(format!(
            "only {m} documents have non-zero similarity to another document; cannot form {k} clusters"
        )));
    }
    let inv_sqrt: Vec<f64> = connected.iter().map(|&a| degree[a].sqrt().recip()).collect();
    let affinity = DMatrix::from_fn(m, m, |x, y| {
        if x == y {
            0.0
        } else {
            inv_sqrt[x] * s.get(connected[x], connected[y]) * inv_sqrt[y]
        }
    });
    let eig = SymmetricEigen::new(affinity);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let points: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            let row: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(r, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let sub = kmeans(&points, k, seed)?;

    let mut labels = vec![usize::MAX; n];
    for (r, &a) in connected.iter().enumerate() {
        labels[a] = sub[r];
    }
    let mut sizes = vec![0usize; k];
    for &l in &sub {
        sizes[l] += 1;
    }
    for a in 0..n {
        if labels[a] != usize::MAX {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (r, &b) in connected.iter().enumerate() {
            sums[sub[r]] += s.get(a, b);
        }
        let best = (0..k)
            .filter(|&c| sizes[c] > 0)
            .max_by(|&x, &y| {
                let (mx, my) = (sums[x] / sizes[x] as f64, sums[y] / sizes[y] as f64);
                mx.total_cmp(&my).then(sizes[x].cmp(&sizes[y])).then(y.cmp(&x))
            })
            .expect("k-means produced a non-empty cluster");
        labels[a] = best;
    }
    Ok(canonical_labels(&labels))
}
