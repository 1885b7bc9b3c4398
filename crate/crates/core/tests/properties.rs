use adequa_core::baseline::{lohs_variance, semantic_entropy};
use adequa_core::gmm::{component_perplexity, fit_gmm};
use adequa_core::metrics::{apfd_from_flags, failure_at_n, roc_auc, spearman};
use adequa_core::{fit_pca, VectorSet};
use proptest::prelude::*;

fn vectors(max_rows: usize, cols: usize) -> impl Strategy<Value = VectorSet> {
    (cols + 2..max_rows).prop_flat_map(move |rows| {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |data| VectorSet::new(rows, cols, data).unwrap())
    })
}

fn clustered(max_rows: usize) -> impl Strategy<Value = VectorSet> {
    (12..max_rows, prop::collection::vec(-8.0f64..8.0, 6)).prop_flat_map(|(rows, centres)| {
        prop::collection::vec(-1.0f64..1.0, rows * 2).prop_map(move |noise| {
            let data = noise
                .chunks(2)
                .enumerate()
                .flat_map(|(i, n)| {
                    let c = &centres[(i % 3) * 2..(i % 3) * 2 + 2];
                    [c[0] + n[0], c[1] + n[1]]
                })
                .collect();
            VectorSet::new(rows, 2, data).unwrap()
        })
    })
}

fn scores_and_flags() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (4usize..60).prop_flat_map(|n| {
        (prop::collection::vec(-5i32..5, n), prop::collection::vec(any::<bool>(), n))
            .prop_filter("both classes", |(_, f)| f.iter().any(|x| *x) && f.iter().any(|x| !*x))
            .prop_map(|(s, f)| (s.into_iter().map(|v| v as f64 * 0.5).collect(), f))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn em_trace_is_monotone_within_segments(x in clustered(80), k in 1usize..5, seed in any::<u64>()) {
        let m = fit_gmm(&x, k, seed).unwrap();
        let meta = m.fit_meta();
        let mut bounds = meta.segment_starts.clone();
        bounds.push(meta.trace.len());
        for seg in bounds.windows(2) {
            for w in meta.trace[seg[0]..seg[1]].windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
            }
        }
        // The kept parameters are the ones the last trace entry describes.
        let direct = m.log_densities(&x).unwrap().iter().sum::<f64>() / x.rows() as f64;
        let last = *meta.trace.last().unwrap();
        prop_assert!((direct - last).abs() <= 1e-9 * last.abs().max(1.0), "{direct} vs {last}");
        prop_assert_eq!(meta.log_likelihood, last);
        if let Some(r) = meta.rejected {
            prop_assert!(r < last);
        }
    }

    #[test]
    fn one_dimensional_density_integrates_to_one(
        data in prop::collection::vec(-5.0f64..5.0, 8..40),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let x = VectorSet::new(data.len(), 1, data).unwrap();
        let m = fit_gmm(&x, k, seed).unwrap();
        let sd = (0..m.k()).map(|c| m.covariance(c)[0].sqrt()).fold(f64::INFINITY, f64::min);
        let (lo, hi) = (-5.0 - 12.0, 5.0 + 12.0);
        let h = (sd / 20.0).min(0.01);
        let steps = ((hi - lo) / h).ceil() as usize;
        let h = (hi - lo) / steps as f64;
        let f = |t: f64| m.log_density(&[t]).unwrap().exp();
        let mut area = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            area += f(lo + i as f64 * h);
        }
        prop_assert!((area * h - 1.0).abs() < 1e-3, "area {}", area * h);
    }

    #[test]
    fn responsibilities_form_a_distribution(x in clustered(60), k in 1usize..5, seed in any::<u64>()) {
        let m = fit_gmm(&x, k, seed).unwrap();
        for row in x.iter_rows() {
            let r = m.responsibilities(row).unwrap();
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h = m.responsibility_entropy(row).unwrap();
            prop_assert!(h >= 0.0 && h <= (m.k() as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn perplexity_lies_between_one_and_k(w in prop::collection::vec(0.001f64..1.0, 1..30)) {
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / s).collect();
        let p = component_perplexity(&w).unwrap();
        prop_assert!(p >= 1.0 - 1e-12 && p <= w.len() as f64 + 1e-9);
        let uniform = vec![1.0 / w.len() as f64; w.len()];
        prop_assert!((component_perplexity(&uniform).unwrap() - w.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..50),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let base = spearman(&a, &b);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let cubed: Vec<f64> = a.iter().map(|v| v * v * v).collect();
        let exped: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        prop_assert!((spearman(&cubed, &exped).unwrap() - base).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        prop_assert!((spearman(&neg, &b).unwrap() + base).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_scaling_and_flips_under_negation((s, f) in scores_and_flags(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let auc = roc_auc(&s, &f).unwrap();
        let moved: Vec<f64> = s.iter().map(|v| v * scale + shift).collect();
        prop_assert!((roc_auc(&moved, &f).unwrap() - auc).abs() < 1e-12);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&neg, &f).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn apfd_of_an_order_and_its_reverse_sum_to_one(flags in prop::collection::vec(any::<bool>(), 1..80)) {
        prop_assume!(flags.iter().any(|f| *f));
        let rev: Vec<bool> = flags.iter().rev().copied().collect();
        let total = apfd_from_flags(&flags).unwrap() + apfd_from_flags(&rev).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failure_count_grows_with_cutoff(flags in prop::collection::vec(any::<bool>(), 0..80)) {
        let counts: Vec<usize> = (0..=flags.len()).map(|n| failure_at_n(&flags, n).unwrap()).collect();
        prop_assert!(counts.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
        prop_assert_eq!(counts[flags.len()], flags.iter().filter(|f| **f).count());
        prop_assert!(failure_at_n(&flags, flags.len() + 1).is_err());
    }

    #[test]
    fn semantic_entropy_ignores_order_and_labels(
        ids in prop::collection::vec(0u32..6, 1..30),
        relabel in 1u32..1000,
        rot in any::<prop::sample::Index>(),
    ) {
        let h = semantic_entropy(&ids).unwrap();
        let mut rotated = ids.clone();
        rotated.rotate_left(rot.index(ids.len()));
        let renamed: Vec<u32> = ids.iter().map(|c| c * relabel + 7).collect();
        prop_assert!((semantic_entropy(&rotated).unwrap() - h).abs() < 1e-12);
        prop_assert!((semantic_entropy(&renamed).unwrap() - h).abs() < 1e-12);
        prop_assert!(h >= 0.0 && h <= (ids.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn hidden_state_variance_ignores_rigid_motion(x in vectors(20, 2), shift in (-50.0f64..50.0, -50.0f64..50.0), angle in 0.0f64..6.3) {
        let v = lohs_variance(&x).unwrap();
        let (c, s) = (angle.cos(), angle.sin());
        let rows: Vec<Vec<f64>> = x
            .iter_rows()
            .map(|r| vec![c * r[0] - s * r[1] + shift.0, s * r[0] + c * r[1] + shift.1])
            .collect();
        let moved = lohs_variance(&VectorSet::from_rows(&rows).unwrap()).unwrap();
        prop_assert!((moved - v).abs() < 1e-9 * v.max(1.0));
    }

    #[test]
    fn fits_are_deterministic(x in vectors(40, 4), d in 1usize..4, k in 1usize..4, seed in any::<u64>()) {
        prop_assert_eq!(fit_pca(&x, d).unwrap(), fit_pca(&x, d).unwrap());
        let z = fit_pca(&x, d).unwrap().project_set(&x).unwrap();
        let a = fit_gmm(&z, k, seed);
        let b = fit_gmm(&z, k, seed);
        prop_assert_eq!(a, b);
    }
}
