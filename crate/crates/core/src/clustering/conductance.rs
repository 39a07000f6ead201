use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_KNN: usize = 15;
pub const DEFAULT_N_RANDOM: usize = 100;

/// Mutual k-nearest-neighbour graph with cosine edge weights clipped at 0.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
}

fn unit(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|&x| x as f64 / norm).collect()
    }
}

impl KnnGraph {
    pub fn build(vecs: &[Vec<f32>], k: usize) -> Result<Self> {
        let n = vecs.len();
        if n < 2 || k == 0 {
            return Err(Error::invalid(format!(
                "kNN graph needs n >= 2 and k >= 1 (n={n}, k={k})"
            )));
        }
        let dim = vecs[0].len();
        if vecs.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("dense vectors differ in dimension".into()));
        }
        let units: Vec<Vec<f64>> = vecs.iter().map(|v| unit(v)).collect();
        let cos = |a: usize, b: usize| units[a].iter().zip(&units[b]).map(|(x, y)| x * y).sum::<f64>();
        let neighbours: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|a| {
                let mut others: Vec<(usize, f64)> = (0..n).filter(|&b| b != a).map(|b| (b, cos(a, b))).collect();
                others.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                let mut top: Vec<usize> = others.into_iter().take(k).map(|(b, _)| b).collect();
                top.sort_unstable();
                top
            })
            .collect();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|a| {
                neighbours[a]
                    .iter()
                    .filter(|&&b| neighbours[b].binary_search(&a).is_ok())
                    .map(|&b| (b, cos(a, b).max(0.0)))
                    .collect()
            })
            .collect();
        let degree = adj.iter().map(|e| e.iter().map(|x| x.1).sum()).collect();
        Ok(Self { adj, degree })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    /// `cut(C, C̄) / min(vol C, vol C̄)`; 0 when the cut is 0.
    pub fn conductance(&self, members: &[bool]) -> f64 {
        let (mut cut, mut vol_in, mut vol_out) = (0.0, 0.0, 0.0);
        for (a, edges) in self.adj.iter().enumerate() {
            if members[a] {
                vol_in += self.degree[a];
                cut += edges.iter().filter(|e| !members[e.0]).map(|e| e.1).sum::<f64>();
            } else {
                vol_out += self.degree[a];
            }
        }
        if cut == 0.0 {
            0.0
        } else {
            cut / f64::min(vol_in, vol_out)
        }
    }
}

/// Z-score of a member set's conductance against `n_random` uniformly drawn
/// sets of the same size. Negative means tighter than chance.
pub fn conductance_zscore_in(graph: &KnnGraph, members: &[usize], n_random: usize, seed: u64) -> Result<f64> {
    let n = graph.n();
    let size = members.len();
    if size <= 1 || size >= n {
        return Err(Error::invalid(format!("cluster size {size} must be in (1, {n})")));
    }
    if n_random < 2 {
        return Err(Error::invalid("n_random must be at least 2"));
    }
    let mut mask = vec![false; n];
    for &m in members {
        if m >= n {
            return Err(Error::invalid(format!("member {m} out of range")));
        }
        mask[m] = true;
    }
    if mask.iter().filter(|&&b| b).count() != size {
        return Err(Error::invalid("duplicate cluster members"));
    }
    let observed = graph.conductance(&mask);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let baseline: Vec<f64> = (0..n_random)
        .map(|_| {
            let mut m = vec![false; n];
            for i in sample(&mut rng, n, size) {
                m[i] = true;
            }
            graph.conductance(&m)
        })
        .collect();
    let mean = baseline.iter().sum::<f64>() / n_random as f64;
    let var = baseline.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n_random as f64;
    let std = var.sqrt();
    Ok(if std == 0.0 { 0.0 } else { (observed - mean) / std })
}

pub fn conductance_zscore(
    members: &[usize],
    dense: &[Vec<f32>],
    n_random: usize,
    knn_k: usize,
    seed: u64,
) -> Result<f64> {
    conductance_zscore_in(&KnnGraph::build(dense, knn_k)?, members, n_random, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(rng: &mut impl Rng) -> f32 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    fn cloud(seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 8;
        let centre: Vec<f32> = (0..dim).map(|_| gaussian(&mut rng)).collect();
        (0..200)
            .map(|i| {
                if i < 30 {
                    centre.iter().map(|c| c * 4.0 + 0.05 * gaussian(&mut rng)).collect()
                } else {
                    (0..dim).map(|_| gaussian(&mut rng)).collect()
                }
            })
            .collect()
    }

    #[test]
    fn tight_blob_scores_low() {
        let vecs = cloud(5);
        let z = conductance_zscore(&(0..30).collect::<Vec<_>>(), &vecs, 100, 15, 1).unwrap();
        assert!(z < -2.0, "{z}");
    }

    #[test]
    fn random_sets_centre_near_zero() {
        let vecs = cloud(9);
        let g = KnnGraph::build(&vecs, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<f64> = (0..20)
            .map(|s| {
                let members = sample(&mut rng, 200, 30).into_vec();
                conductance_zscore_in(&g, &members, 100, s).unwrap()
            })
            .collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 1.0, "{mean}");
    }

    #[test]
    fn complement_of_singleton() {
        let vecs = cloud(2);
        let members: Vec<usize> = (1..200).collect();
        let z = conductance_zscore(&members, &vecs, 50, 15, 0).unwrap();
        assert!(z.is_finite());
        let g = KnnGraph::build(&vecs, 15).unwrap();
        let mut single = vec![false; 200];
        single[0] = true;
        let comp: Vec<bool> = single.iter().map(|b| !b).collect();
        assert_eq!(g.conductance(&single), g.conductance(&comp));
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let vecs = cloud(1);
        assert!(conductance_zscore(&[0], &vecs, 10, 5, 0).is_err());
        assert!(conductance_zscore(&(0..200).collect::<Vec<_>>(), &vecs, 10, 5, 0).is_err());
    }
}
