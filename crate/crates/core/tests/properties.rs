use cae::alignment::{dtw, fastdtw, FrameDistance};
use cae::basis::{polar_encode, wrap_phase, ComplexBasis};
use cae::data::{ngram_slice, StandardizationStats};
use cae::discovery::{diagonal_smooth, find_diagonals};
use cae::transforms::circular_shift_1d;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn vec_of(n: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n)
}

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| vec_of(r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shifts_compose(x in vec_of(1..40), a in -50i64..50, b in -50i64..50) {
        let x = Array1::from(x);
        let twice = circular_shift_1d(circular_shift_1d(x.view(), a).view(), b);
        prop_assert_eq!(twice, circular_shift_1d(x.view(), a + b));
    }

    #[test]
    fn dft_magnitudes_ignore_shifts(x in vec_of(2..33), k in -40i64..40) {
        let x = Array1::from(x);
        let basis = ComplexBasis::dft(x.len());
        let m0 = basis.encode(x.view()).unwrap().magnitude;
        let m1 = basis.encode(circular_shift_1d(x.view(), k).view()).unwrap().magnitude;
        let scale = 1.0 + m0.iter().fold(0.0f64, |m, v| m.max(*v));
        for (a, b) in m0.iter().zip(&m1) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn polar_round_trip(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..20)) {
        let re: Array1<f64> = pairs.iter().map(|p| p.0).collect();
        let im: Array1<f64> = pairs.iter().map(|p| p.1).collect();
        let code = polar_encode(re.view(), im.view()).unwrap();
        prop_assert!(code.phase.iter().all(|&p| (0.0..2.0 * std::f64::consts::PI).contains(&p)));
        let (r2, i2) = code.to_cartesian();
        for k in 0..re.len() {
            prop_assert!((re[k] - r2[k]).abs() <= 1e-9 * (1.0 + re[k].abs()));
            prop_assert!((im[k] - i2[k]).abs() <= 1e-9 * (1.0 + im[k].abs()));
        }
    }

    #[test]
    fn wrapped_phase_is_canonical(a in -1e4f64..1e4) {
        use std::f64::consts::PI;
        let w = wrap_phase(a);
        prop_assert!(w > -PI && w <= PI, "{w}");
        prop_assert!((w - wrap_phase(w)).abs() < 1e-12);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn ngram_count_and_layout(x in matrix(1..30, 1..6), n in 1usize..8, hop in 1usize..4) {
        let (t, f) = x.dim();
        match ngram_slice(x.view(), n, hop) {
            Ok(g) => {
                prop_assert!(t >= n);
                prop_assert_eq!(g.dim(), ((t - n) / hop + 1, n * f));
                let last = g.nrows() - 1;
                prop_assert_eq!(g[[last, (n - 1) * f]], x[[last * hop + n - 1, 0]]);
            }
            Err(_) => prop_assert!(t < n),
        }
    }

    #[test]
    fn standardizing_twice_changes_nothing(x in matrix(2..20, 1..6)) {
        let s1 = StandardizationStats::fit(x.view()).unwrap();
        let z = s1.apply(x.view()).unwrap();
        let s2 = StandardizationStats::fit(z.view()).unwrap();
        let zz = s2.apply(z.view()).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn smoothing_is_linear(a in matrix(6..7, 6..7), b in matrix(6..7, 6..7), c in -3.0f64..3.0, k in 1usize..6) {
        let lhs = diagonal_smooth((&a * c + &b).view(), k).unwrap();
        let rhs = diagonal_smooth(a.view(), k).unwrap() * c + diagonal_smooth(b.view(), k).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn dtw_cost_is_symmetric(a in matrix(1..15, 3..4), b in matrix(1..15, 3..4)) {
        let ab = dtw(a.view(), b.view(), FrameDistance::Euclidean).unwrap();
        let ba = dtw(b.view(), a.view(), FrameDistance::Euclidean).unwrap();
        prop_assert!((ab.cost - ba.cost).abs() <= 1e-9 * (1.0 + ab.cost));
        ab.validate(a.nrows(), b.nrows()).unwrap();
    }

    #[test]
    fn fastdtw_paths_are_valid_and_never_cheaper(a in matrix(1..60, 2..3), b in matrix(1..60, 2..3), radius in 0usize..4) {
        let fast = fastdtw(a.view(), b.view(), radius, FrameDistance::Cosine).unwrap();
        fast.validate(a.nrows(), b.nrows()).unwrap();
        let exact = dtw(a.view(), b.view(), FrameDistance::Cosine).unwrap();
        prop_assert!(fast.cost >= exact.cost - 1e-9);
    }

    #[test]
    fn diagonal_runs_survive_exact_rescaling(s in matrix(12..13, 12..13), e in -2i32..4) {
        let c = 2f64.powi(e);
        let base = find_diagonals(s.view(), 0.5, 2, 1);
        let scaled = find_diagonals((&s * c).view(), 0.5 * c, 2, 1);
        prop_assert_eq!(base.len(), scaled.len());
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert_eq!(x.occurrence_a, y.occurrence_a);
            prop_assert_eq!(x.occurrence_b, y.occurrence_b);
            prop_assert!((x.score * c - y.score).abs() <= 1e-12 * (1.0 + y.score.abs()));
        }
    }
}
