mod common;

use cdrscope_core::ses_pca::weighted_pca;
use cdrscope_core::Error;
use proptest::prelude::*;

fn table(max_dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2..max_dim, 3..25usize).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n),
            prop::collection::vec(0.1..10.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_jacobi_oracle((rows, w) in table(8)) {
        let d = rows[0].len();
        let pca = weighted_pca(&rows, &w, 2.min(d)).unwrap();
        let (values, vectors) = common::jacobi_eigen(&common::covariance(&rows, &w));
        let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
        for k in 0..d {
            prop_assert!((pca.eigenvalues[k] - values[k].max(0.0)).abs() <= 1e-9 * total.max(1.0));
        }
        let sum: f64 = pca.variance_fractions.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        for (k, c) in pca.components.iter().enumerate() {
            let gap_lo = if k + 1 < d { values[k] - values[k + 1] } else { f64::INFINITY };
            let gap_hi = if k > 0 { values[k - 1] - values[k] } else { f64::INFINITY };
            if gap_lo.min(gap_hi) > 1e-6 * total {
                prop_assert!(common::abs_cosine(c, &vectors[k]) > 1.0 - 1e-8);
            }
        }
    }

    #[test]
    fn split_row_weight_is_invisible((rows, w) in table(6), pick in any::<prop::sample::Index>()) {
        let i = pick.index(rows.len());
        let mut r2 = rows.clone();
        let mut w2 = w.clone();
        r2.push(rows[i].clone());
        w2[i] /= 2.0;
        w2.push(w[i] / 2.0);
        let a = weighted_pca(&rows, &w, 1).unwrap();
        let b = weighted_pca(&r2, &w2, 1).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn weight_scale_is_irrelevant((rows, w) in table(6), k in 0.01..100.0f64) {
        let a = weighted_pca(&rows, &w, 1).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let b = weighted_pca(&rows, &scaled, 1).unwrap();
        for (x, y) in a.variance_fractions.iter().zip(&b.variance_fractions) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn projections_are_centred((rows, w) in table(6)) {
        let pca = weighted_pca(&rows, &w, 2).unwrap();
        let total: f64 = w.iter().sum();
        for k in 0..2 {
            let m: f64 = pca.projections.iter().zip(&w).map(|(p, wi)| p[k] * wi).sum::<f64>() / total;
            prop_assert!(m.abs() <= 1e-9);
        }
    }
}

#[test]
fn collinear_rows_put_everything_on_pc1() {
    let rows: Vec<Vec<f64>> = (0..7).map(|i| { let t = f64::from(i); vec![t, 2.0 * t, -t + 1.0] }).collect();
    let pca = weighted_pca(&rows, &[1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 2.0], 1).unwrap();
    assert!((pca.variance_fractions[0] - 1.0).abs() <= 1e-12);
    let one = vec![vec![1.0, 2.0]; 4];
    assert!(matches!(weighted_pca(&one, &[1.0; 4], 1), Err(Error::DegenerateRank(_))));
    assert!(matches!(weighted_pca(&rows[..2], &[1.0, 0.0], 1), Err(Error::DegenerateRank(_))));
}
