use nalgebra::DMatrix;
use num_complex::Complex64;
use otfs_chanpred::basis::{dlp_basis, slepian_basis, SgFilter};
use otfs_chanpred::channel::TapChannel;
use otfs_chanpred::estimator::{coeffs_to_channel, form_measurements, Block, SparseCoeffs};
use otfs_chanpred::basis::rotated_dft;
use otfs_chanpred::metrics::{channel_nmse, dl_se, nmse_db};
use otfs_chanpred::otfs::{apply_taps, otfs_demodulate, otfs_modulate};
use otfs_chanpred::pilot::{assemble_frame, build_pattern_with, precode, precode_adjoint, random_qpsk};
use otfs_chanpred::predictor::{sbee_predict, SbeeParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn complex() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn grid() -> impl Strategy<Value = (usize, usize, Vec<Complex64>)> {
    (prop::sample::select(vec![4usize, 8, 16]), prop::sample::select(vec![2usize, 4, 8]))
        .prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(complex(), m * n)))
}

fn energy(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modulation_is_unitary((m, n, x) in grid()) {
        let t = otfs_modulate(&x, m, n).unwrap();
        prop_assert!((energy(&t) - energy(&x)).abs() < 1e-10 * (1.0 + energy(&x)));
        let back = otfs_demodulate(&t, m, n).unwrap();
        prop_assert!(x.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn precoder_is_unitary((m, n, x) in grid()) {
        let p = precode(&x, m, n).unwrap();
        prop_assert!((energy(&p) - energy(&x)).abs() < 1e-10 * (1.0 + energy(&x)));
        let back = precode_adjoint(&p, m, n).unwrap();
        prop_assert!(x.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn smoother_keeps_low_order_polynomials(
        n_sg in 1usize..6,
        q_sg in 0usize..4,
        coef in prop::collection::vec(complex(), 4),
        len in 12usize..40,
    ) {
        prop_assume!(q_sg < 2 * n_sg + 1);
        let x: Vec<Complex64> = (0..len)
            .map(|t| {
                let t = t as f64 / len as f64;
                (0..=q_sg).map(|p| coef[p] * t.powi(p as i32)).sum()
            })
            .collect();
        let y = SgFilter::new(n_sg, q_sg).unwrap().smooth(&x).unwrap();
        let scale = 1.0 + x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(x.iter().zip(&y).all(|(a, b)| (a - b).norm() < 1e-9 * scale));
    }

    #[test]
    fn extrapolation_is_exact_below_the_fit_order(
        q_dlp in 1usize..5,
        q_sg in 0usize..4,
        n_t in 5usize..8,
        delta in 1usize..3,
        coef in prop::collection::vec(complex(), 5),
    ) {
        let degree = q_dlp.min(q_sg + 1) - 1;
        prop_assume!(q_dlp <= n_t);
        let poly = |t: f64| -> Complex64 { (0..=degree).map(|k| coef[k] * (t / 4.0).powi(k as i32)).sum() };
        let traj = DMatrix::from_fn(n_t, 1, |r, _| poly(r as f64));
        let n_f = 2 * delta;
        let pred = sbee_predict(&traj, SbeeParams { n_f, delta, q_dlp, n_sg: 5, q_sg }).unwrap();
        for r in 0..n_f {
            let expect = poly((n_t + r) as f64);
            prop_assert!((pred[(r, 0)] - expect).norm() < 1e-6 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn nmse_of_scaled_truth(x in prop::collection::vec(complex(), 1..64), eps in 1e-4..0.5f64) {
        prop_assume!(energy(&x) > 1e-6);
        let est: Vec<Complex64> = x.iter().map(|v| v * (1.0 + eps)).collect();
        prop_assert!((nmse_db(&x, &est).unwrap() - 20.0 * eps.log10()).abs() < 1e-9);
    }

    #[test]
    fn window_and_concat_round_trip(seed in 0u64..1000, cut in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = TapChannel::zeros(2, vec![vec![0, 3], vec![1]], 16);
        for c in 0..h.columns() {
            for v in h.column_mut(c) {
                *v = otfs_chanpred::otfs::complex_gaussian(&mut rng, 1.0);
            }
        }
        let a = h.window(0, cut).unwrap();
        let b = h.window(cut, 16 - cut).unwrap();
        prop_assert_eq!(TapChannel::concat(&[a, b]).unwrap(), h);
    }

    #[test]
    fn perfect_prediction_is_repeatable_and_error_free(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = TapChannel::zeros(4, vec![vec![0, 2], vec![1, 2]], 32);
        for c in 0..h.columns() {
            for v in h.column_mut(c) {
                *v = otfs_chanpred::otfs::complex_gaussian(&mut rng, 0.5);
            }
        }
        let a = dl_se(&h, &h, 0.1, 8, 4).unwrap();
        prop_assert!(a.se > 0.0);
        let b = dl_se(&h, &h, 0.1, 8, 4).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(channel_nmse(std::slice::from_ref(&h), std::slice::from_ref(&h)).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_sparse_channel_is_linear_in_the_coefficients(seed in 0u64..500) {
        let (m, n, q, g, n_u, n_r, q_s, l) = (16, 4, 3, 10, 2, 3, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = build_pattern_with(m, n, q, g, n_u, 1.0, &mut rng).unwrap();
        let spatial: Vec<DMatrix<Complex64>> =
            (0..n_u).map(|u| rotated_dft(n_r, 0.03 * u as f64).columns(0, q_s).into_owned()).collect();
        let mut coeffs = SparseCoeffs::zeros(l, n_u, q_s, q);
        let delays = [(seed % 6) as usize, ((seed / 6) % 6) as usize];
        for (u, &d) in delays.iter().enumerate() {
            coeffs.support.push(Block { delay: d, user: u, common: false });
            for s in 0..q_s {
                for c in 0..q {
                    let row = coeffs.row(d, u, s);
                    coeffs.s[(row, c)] = otfs_chanpred::otfs::complex_gaussian(&mut rng, 1.0);
                }
            }
        }
        let taps = coeffs_to_channel(&coeffs, &spatial, m * n);
        let signals: Vec<Vec<Complex64>> = (0..n_u)
            .map(|u| assemble_frame(&pattern, &random_qpsk(&mut rng, pattern.data_len()), u).unwrap().time_signal())
            .collect();
        let rx = apply_taps(&signals, &taps, 0.0, &mut rng).unwrap();
        let y_dd: Vec<Vec<Complex64>> = rx.iter().map(|r| otfs_demodulate(r, m, n).unwrap()).collect();
        let sys = form_measurements(&y_dd, &pattern, &spatial, l).unwrap();
        let rel = (sys.y() - sys.apply(&coeffs.s)).norm() / sys.y().norm();
        prop_assert!(rel < 1e-8, "relative residual {}", rel);
    }
}

#[test]
fn slepian_orthonormal_and_legendre_endpoint() {
    for len in [16, 64, 200] {
        for q in 1..6 {
            let b = dlp_basis(len, q).unwrap();
            assert!(b.row(len - 1).iter().all(|v| (v - 1.0).abs() < 1e-12));
            let (s, eig) = slepian_basis(len, 0.01, q).unwrap();
            assert!((s.transpose() * &s - DMatrix::<f64>::identity(q, q)).norm() < 1e-10);
            assert!(eig.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
