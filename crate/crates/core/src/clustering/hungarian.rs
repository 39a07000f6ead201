use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix; `out[row] = col`.
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// Cluster-to-label matching maximizing the matched mass of a
/// clusters × labels confusion matrix. `out[c]` is the label matched to
/// cluster `c`, or `None` when there are more clusters than labels.
pub fn align_clusters(confusion: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let rows = confusion.len();
    let cols = confusion.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    if confusion.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension("ragged confusion matrix".into()));
    }
    if confusion.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            "confusion matrix entries must be finite and non-negative",
        ));
    }
    let n = rows.max(cols);
    let max = confusion.iter().flatten().copied().fold(0.0, f64::max);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| max - if r < rows && c < cols { confusion[r][c] } else { 0.0 })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    Ok((0..rows).map(|r| (assign[r] < cols).then_some(assign[r])).collect())
}

/// Confusion counts of `clusters` (rows) against `labels` (columns).
pub fn confusion_matrix(clusters: &[usize], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if clusters.len() != labels.len() {
        return Err(Error::Dimension("assignments differ in length".into()));
    }
    let r = clusters.iter().max().map_or(0, |m| m + 1);
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let mut m = vec![vec![0.0; c]; r];
    for (&a, &b) in clusters.iter().zip(labels) {
        m[a][b] += 1.0;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_permutation() {
        let id = vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 5.0]];
        assert_eq!(align_clusters(&id).unwrap(), vec![Some(0), Some(1), Some(2)]);
        let perm = vec![vec![0.0, 0.0, 3.0], vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]];
        assert_eq!(align_clusters(&perm).unwrap(), vec![Some(2), Some(0), Some(1)]);
    }

    #[test]
    fn rectangular() {
        let wide = vec![vec![0.0, 1.0, 9.0], vec![8.0, 1.0, 0.0]];
        assert_eq!(align_clusters(&wide).unwrap(), vec![Some(2), Some(0)]);
        let tall = vec![vec![1.0], vec![7.0], vec![2.0]];
        assert_eq!(align_clusters(&tall).unwrap(), vec![None, Some(0), None]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(align_clusters(&[]).is_err());
        assert!(align_clusters(&[vec![-1.0]]).is_err());
        assert!(align_clusters(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let m = confusion_matrix(&[0, 0, 1, 1], &[1, 1, 0, 1]).unwrap();
        assert_eq!(m, vec![vec![0.0, 2.0], vec![1.0, 1.0]]);
    }
}
