//! Straightforward reference implementations used as test oracles.
#![allow(dead_code)]

/// Radius of gyration straight from the definition: centre of mass, then
/// the RMS distance to it.
pub fn gyration_direct(visits: &[((f64, f64), u64)]) -> f64 {
    let n: f64 = visits.iter().map(|v| v.1 as f64).sum();
    let cx = visits.iter().map(|v| v.1 as f64 * v.0 .0).sum::<f64>() / n;
    let cy = visits.iter().map(|v| v.1 as f64 * v.0 .1).sum::<f64>() / n;
    let ss: f64 = visits.iter().map(|v| v.1 as f64 * ((v.0 .0 - cx).powi(2) + (v.0 .1 - cy).powi(2))).sum();
    (ss / n).sqrt()
}

/// Same quantity from pairwise distances: `sum_{i<j} n_i n_j d_ij^2 / N^2`.
pub fn gyration_pairwise(visits: &[((f64, f64), u64)]) -> f64 {
    let n: f64 = visits.iter().map(|v| v.1 as f64).sum();
    let mut acc = 0.0;
    for i in 0..visits.len() {
        for j in i + 1..visits.len() {
            let (a, b) = (visits[i].0, visits[j].0);
            acc += visits[i].1 as f64 * visits[j].1 as f64 * ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2));
        }
    }
    (acc / (n * n)).sqrt()
}

/// `-sum p ln p / ln N` over activity shares.
pub fn entropy_direct(counts: &[u64]) -> f64 {
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    if n <= 1.0 {
        return 0.0;
    }
    let h: f64 = counts.iter().map(|&c| c as f64 / n).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
    h / n.ln()
}

/// Full-matrix Wagner-Fischer edit distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Weighted covariance by two explicit passes.
pub fn covariance(rows: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let w: f64 = weights.iter().sum();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().zip(weights).map(|(r, wi)| wi * r[k]).sum::<f64>() / w).collect();
    let mut c = vec![vec![0.0; d]; d];
    for (r, wi) in rows.iter().zip(weights) {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += wi * (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= w;
        }
    }
    c
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues descending with unit eigenvectors.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Index of the nearest point, smallest index on ties.
pub fn nearest(points: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in points.iter().enumerate() {
        let d = (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Distance gap between the nearest and second-nearest point.
pub fn nearest_margin(points: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let mut d: Vec<f64> = points.iter().map(|q| ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt()).collect();
    d.sort_by(f64::total_cmp);
    d.get(1).map_or(f64::INFINITY, |s| s - d[0])
}

/// Absolute cosine between two vectors.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}
