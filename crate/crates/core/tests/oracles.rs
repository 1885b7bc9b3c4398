//! Cross-checks against independent implementations: nalgebra for the
//! linear algebra, direct pair counting and enumeration for the metrics.

use adequa_core::gmm::{GmmParams, FitMeta};
use adequa_core::metrics::{apfd_from_flags, failure_at_n, mann_whitney_u, roc_auc, spearman};
use adequa_core::seed::rng;
use adequa_core::{fit_gmm, fit_mdsa, fit_pca, GmmModel, VectorSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_set(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> VectorSet {
    // Correlated columns so the spectrum is not flat.
    let mix: Vec<f64> = (0..cols * cols).map(|_| normal(r)).collect();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let z: Vec<f64> = (0..cols).map(|_| normal(r)).collect();
        for i in 0..cols {
            data.push((0..cols).map(|j| mix[i * cols + j] * z[j]).sum::<f64>() + 3.0);
        }
    }
    VectorSet::new(rows, cols, data).unwrap()
}

fn to_matrix(x: &VectorSet) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice())
}

fn oracle_cov(x: &VectorSet, denom: f64) -> DMatrix<f64> {
    let m = to_matrix(x);
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c.transpose() * &c / denom
}

// Eigenpairs sorted by decreasing value, each vector signed so its
// largest-magnitude entry is positive.
fn oracle_eigen(cov: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let e = cov.clone().symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<f64>)> =
        (0..e.eigenvalues.len()).map(|i| (e.eigenvalues[i], e.eigenvectors.column(i).into_owned())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, v) in &mut pairs {
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            *v = -v.clone();
        }
    }
    pairs
}

#[test]
fn pca_matches_nalgebra_eigendecomposition() {
    let mut r = rng(1);
    for (rows, cols, d) in [(40, 6, 3), (25, 10, 10), (100, 4, 1)] {
        let x = random_set(&mut r, rows, cols);
        let p = fit_pca(&x, d).unwrap();
        let pairs = oracle_eigen(&oracle_cov(&x, (rows - 1) as f64));
        for (k, (val, vec)) in pairs.iter().enumerate().take(d) {
            assert!((p.explained_variance[k] - val).abs() < 1e-9 * val.max(1.0), "eigenvalue {k}");
            for j in 0..cols {
                assert!((p.basis[k * cols + j] - vec[j]).abs() < 1e-7, "basis {k},{j}");
            }
        }
    }
}

#[test]
fn pca_gram_route_spans_the_same_subspace() {
    let mut r = rng(2);
    // Fewer rows than columns, so the Gram route is taken.
    let x = random_set(&mut r, 8, 30);
    let p = fit_pca(&x, 4).unwrap();
    let pairs = oracle_eigen(&oracle_cov(&x, 7.0));
    for (k, (val, vec)) in pairs.iter().enumerate().take(4) {
        assert!((p.explained_variance[k] - val).abs() < 1e-8 * val, "eigenvalue {k}");
        let row = DVector::from_row_slice(&p.basis[k * 30..(k + 1) * 30]);
        assert!((row.dot(vec) - 1.0).abs() < 1e-7, "direction {k}");
    }
}

fn random_model(r: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..k * d).map(|_| 3.0 * normal(r)).collect();
    let mut covariances = Vec::new();
    for _ in 0..k {
        let a = DMatrix::from_fn(d, d, |_, _| normal(r));
        let c = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
        covariances.extend(c.transpose().iter().copied());
    }
    GmmModel::from_params(GmmParams { dim: d, weights, means, covariances, fit_meta: FitMeta::default() }).unwrap()
}

fn oracle_log_components(m: &GmmModel, x: &[f64]) -> Vec<f64> {
    let d = m.dim();
    let xv = DVector::from_row_slice(x);
    (0..m.k())
        .map(|c| {
            let cov = DMatrix::from_row_slice(d, d, m.covariance(c));
            let diff = &xv - DVector::from_row_slice(m.mean(c));
            let inv = cov.clone().try_inverse().unwrap();
            let quad = (diff.transpose() * inv * &diff)[(0, 0)];
            let log_det = cov.determinant().ln();
            m.weights()[c].ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
        })
        .collect()
}

fn oracle_log_density(m: &GmmModel, x: &[f64]) -> f64 {
    let parts = oracle_log_components(m, x);
    let max = parts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + parts.iter().map(|p| (p - max).exp()).sum::<f64>().ln()
}

#[test]
fn density_matches_per_component_sum() {
    let mut r = rng(3);
    for _ in 0..300 {
        let k = r.random_range(1..=6);
        let d = r.random_range(1..=6);
        let m = random_model(&mut r, k, d);
        let x: Vec<f64> = (0..d).map(|_| 4.0 * normal(&mut r)).collect();
        let got = m.log_density(&x).unwrap();
        let want = oracle_log_density(&m, &x);
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn responsibilities_and_entropy_match_brute_force() {
    let mut r = rng(4);
    let m = random_model(&mut r, 3, 4);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| 3.0 * normal(&mut r)).collect();
        let parts = oracle_log_components(&m, &x);
        let total = oracle_log_density(&m, &x);
        let want: Vec<f64> = parts.iter().map(|p| (p - total).exp()).collect();
        let got = m.responsibilities(&x).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
        let h: f64 = -want.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        assert!((m.responsibility_entropy(&x).unwrap() - h).abs() < 1e-10);
    }
}

#[test]
fn single_component_fit_is_the_regularised_mle() {
    let mut r = rng(5);
    let x = random_set(&mut r, 60, 3);
    let m = fit_gmm(&x, 1, 9).unwrap();
    let mle = oracle_cov(&x, 60.0);
    let eps = 1e-6 * mle.trace() / 3.0;
    let mean = to_matrix(&x).row_mean();
    assert_eq!(m.weights(), vec![1.0]);
    for j in 0..3 {
        assert!((m.mean(0)[j] - mean[j]).abs() < 1e-8);
    }
    for a in 0..3 {
        for b in 0..3 {
            let want = mle[(a, b)] + if a == b { eps } else { 0.0 };
            assert!((m.covariance(0)[a * 3 + b] - want).abs() < 1e-8);
        }
    }
    // closed-form Gaussian density
    let cov = DMatrix::from_row_slice(3, 3, m.covariance(0));
    let p = [1.0, -2.0, 0.5];
    let diff = DVector::from_row_slice(&p) - DVector::from_row_slice(m.mean(0));
    let quad = (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[(0, 0)];
    let want = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad);
    assert!((m.log_density(&p).unwrap() - want).abs() < 1e-8);
}

#[test]
fn mdsa_matches_quadratic_form() {
    let mut r = rng(6);
    let x = random_set(&mut r, 100, 4);
    let m = fit_mdsa(&x).unwrap();
    let cov = oracle_cov(&x, 99.0);
    let mean = to_matrix(&x).row_mean().transpose();
    for _ in 0..10 {
        let p: Vec<f64> = (0..4).map(|_| 3.0 + 2.0 * normal(&mut r)).collect();
        let diff = DVector::from_row_slice(&p) - &mean;
        let sol = cov.clone().lu().solve(&diff).unwrap();
        let want = diff.dot(&sol).sqrt();
        assert!((m.distance(&p).unwrap() - want).abs() < 1e-8);
    }
}

// Brute-force metric oracles: no ranks, only pairwise comparisons.

fn count_rank(v: &[f64], i: usize) -> f64 {
    let below = v.iter().filter(|x| **x < v[i]).count() as f64;
    let equal = v.iter().filter(|x| **x == v[i]).count() as f64;
    below + (equal + 1.0) / 2.0
}

fn oracle_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra: Vec<f64> = (0..a.len()).map(|i| count_rank(a, i)).collect();
    let rb: Vec<f64> = (0..b.len()).map(|i| count_rank(b, i)).collect();
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn pair_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        }
    }
    u
}

fn oracle_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let observed = (pair_u(a, b) - mu).abs();
    let (mut extreme, mut total) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (sa, sb): (Vec<f64>, Vec<f64>) = {
            let mut sa = Vec::new();
            let mut sb = Vec::new();
            for (i, v) in pooled.iter().enumerate() {
                if mask & (1 << i) != 0 { sa.push(*v) } else { sb.push(*v) }
            }
            (sa, sb)
        };
        total += 1;
        if (pair_u(&sa, &sb) - mu).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

fn tie_heavy(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if r.random::<bool>() {
        (0..n).map(|_| r.random_range(0..4) as f64).collect()
    } else {
        (0..n).map(|_| normal(r)).collect()
    }
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(7);
    for _ in 0..300 {
        let n = r.random_range(2..=30);
        let a = tie_heavy(&mut r, n);
        let b = tie_heavy(&mut r, n);
        match (spearman(&a, &b), oracle_spearman(&a, &b)) {
            (Ok(g), Some(w)) => assert!((g - w).abs() < 1e-12, "{g} {w}"),
            (Err(_), None) => {}
            (g, w) => panic!("spearman {g:?} vs {w:?}"),
        }

        let fail: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        let fs: Vec<f64> = a.iter().zip(&fail).filter(|(_, f)| **f).map(|(s, _)| *s).collect();
        let ps: Vec<f64> = a.iter().zip(&fail).filter(|(_, f)| !**f).map(|(s, _)| *s).collect();
        if fs.is_empty() || ps.is_empty() {
            assert!(roc_auc(&a, &fail).is_err());
        } else {
            let want = pair_u(&fs, &ps) / (fs.len() * ps.len()) as f64;
            assert!((roc_auc(&a, &fail).unwrap() - want).abs() < 1e-12);
            let mw = mann_whitney_u(&fs, &ps).unwrap();
            assert_eq!(mw.u, pair_u(&fs, &ps));
            if fs.len() <= 8 && ps.len() <= 8 {
                assert!(mw.exact);
                assert!((mw.p_two_sided - oracle_exact_p(&fs, &ps)).abs() < 1e-12);
            }
        }

        let cut = r.random_range(0..=n);
        assert_eq!(failure_at_n(&fail, cut).unwrap(), fail[..cut].iter().filter(|f| **f).count());
        let m = fail.iter().filter(|f| **f).count();
        if m > 0 {
            let tf: f64 = fail.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| (i + 1) as f64).sum();
            let want = 1.0 - tf / (n * m) as f64 + 1.0 / (2 * n) as f64;
            assert!((apfd_from_flags(&fail).unwrap() - want).abs() < 1e-12);
        }
    }
}
