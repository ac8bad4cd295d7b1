//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! with the measured value next to its bound. Tests hold a shared lock so
//! the reported runtimes are not inflated by each other.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use cae::alignment::{align_features, align_raw, dtw, evaluate_alignment, fastdtw, AlignConfig, FrameDistance, GroundTruthMap};
use cae::basis::{wrap_phase, ComplexBasis};
use cae::classify::{class_distance_ratio, cross_validate_pools, stratified_pools, ClassifierSpec, CvConfig, LogRegConfig};
use cae::data::{harmonic_signals, load_idx, synth_cqt_like_events, synth_cqt_like_with, PlantedRepeat, StandardizationStats, SynthOptions};
use cae::discovery::{discover, section_iou, DiscoveryConfig, RepeatedSection};
use cae::gradcheck::{run_grad_check, GradCheckConfig};
use cae::model::CaeModel;
use cae::train::{train, DatasetPairs, NormMode, TrainConfig};
use cae::transforms::{circular_shift_1d, pitch_shift, sample_pair, PairScheme, TransformSpec};
use cae::LossPower;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let within = elapsed <= budget;
    let ok = pass && within;
    println!(
        "{} criterion {id} ({name}): {detail}; runtime {:.2}s (budget {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    ok
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, n), || {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    })
}

#[test]
fn criterion_1_dft_invariance() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for n in [8usize, 32, 128] {
        let basis = ComplexBasis::dft(n);
        let xs = gaussian_rows(&mut rng, 1000, n);
        let mut shifted = Array2::zeros((1000, n));
        for (x, mut y) in xs.outer_iter().zip(shifted.outer_iter_mut()) {
            let k = rng.random_range(-(n as i64)..n as i64);
            y.assign(&circular_shift_1d(x, k));
        }
        let rx = basis.magnitude_features(xs.view()).unwrap();
        let ry = basis.magnitude_features(shifted.view()).unwrap();
        worst = worst.max((&rx - &ry).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v)));
    }
    let ok = report(
        1,
        "DFT magnitude invariance",
        worst <= 1e-10,
        format!("max deviation {worst:.3e} (bound 1e-10) over 3000 pairs, N in {{8, 32, 128}}"),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn criterion_2_dft_phase_law() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for n in [8usize, 32, 128] {
        let basis = ComplexBasis::dft(n);
        for _ in 0..200 {
            let x = gaussian_rows(&mut rng, 1, n).row(0).to_owned();
            let k = rng.random_range(-(n as i64)..n as i64);
            let y = circular_shift_1d(x.view(), k);
            let (re, im) = basis.project(x.view()).unwrap();
            // phase of the shifted copy minus phase of the original
            let forward = basis.phase_difference(y.view(), x.view()).unwrap();
            let backward = basis.phase_difference(x.view(), y.view()).unwrap();
            for f in 0..n {
                if re[f].hypot(im[f]) <= 1e-6 {
                    continue;
                }
                let expected = wrap_phase(2.0 * PI * (f as f64) * (k as f64) / n as f64);
                let err = wrap_phase(forward[f] - expected).abs();
                let anti = wrap_phase(forward[f] + backward[f]).abs();
                worst = worst.max(err).max(anti);
                checked += 1;
            }
        }
    }
    let ok = report(
        2,
        "DFT phase law",
        worst <= 1e-8,
        format!("max |phase(shifted) - phase(x) - 2 pi f k / N| {worst:.3e} (bound 1e-8) on {checked} bins"),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn criterion_3_gradient_check() {
    let _g = lock();
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    assert_eq!((cfg.n_input, cfg.n_basis, cfg.batch, cfg.instances), (12, 8, 4, 20));
    let r = run_grad_check(&cfg).unwrap();
    let ok = report(
        3,
        "gradient check",
        r.passed && r.instances_checked == 20 && r.max_rel_err() <= 1e-4,
        format!(
            "max relative error w_re {:.3e}, w_im {:.3e} (bound 1e-4) on {} instances",
            r.max_rel_err_w_re, r.max_rel_err_w_im, r.instances_checked
        ),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

/// Held-out mean of `||r_x - r_psi(x)|| / ||r_x||`.
fn magnitude_deviation(basis: &ComplexBasis, xs: &Array2<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let n = xs.ncols() as i64;
    let mut total = 0.0;
    for x in xs.outer_iter() {
        let y = circular_shift_1d(x, rng.random_range(1..n));
        let rx = basis.encode(x).unwrap().magnitude;
        let ry = basis.encode(y.view()).unwrap().magnitude;
        total += (&rx - &ry).mapv(|v| v * v).sum().sqrt() / rx.mapv(|v| v * v).sum().sqrt();
    }
    total / xs.nrows() as f64
}

#[test]
fn criterion_4_trained_shift_invariance() {
    let _g = lock();
    let start = Instant::now();
    let n = 32;
    let cfg = TrainConfig {
        n_basis: 16,
        p_norm: LossPower::Two,
        learning_rate: 3e-3,
        batch_size: 50,
        epochs: 200,
        transforms_per_epoch: 2000,
        dropout_p: 0.0,
        norm_mode: NormMode::None,
        rng_seed: 4,
        optimizer: Default::default(),
    };
    let spec = TransformSpec::circular_shift(n);
    let mut fresh = |bs: usize, rng: &mut ChaCha8Rng| {
        let xs = harmonic_signals(bs, n, 8, rng);
        sample_pair(xs.view(), &spec, PairScheme::Double, bs, rng)
    };
    let out = train(&cfg, n, &mut fresh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let held_out = harmonic_signals(1000, n, 8, &mut rng);
    let dev = magnitude_deviation(&out.basis, &held_out, &mut rng);
    let first = out.loss_history[0];
    let last = *out.loss_history.last().unwrap();
    let ratio = last / first;
    let ok = report(
        4,
        "trained shift invariance",
        dev <= 0.05 && ratio < 0.5,
        format!("held-out relative magnitude deviation {dev:.4} (bound 0.05), final/first epoch loss {ratio:.3e} (bound 0.5)"),
        start.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

#[test]
fn criterion_5_fastdtw_fidelity() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut valid = true;
    for _ in 0..50 {
        let a = Array2::from_shape_simple_fn((200, 12), || rng.random_range(0.0..1.0));
        let b = Array2::from_shape_simple_fn((200, 12), || rng.random_range(0.0..1.0));
        let exact = dtw(a.view(), b.view(), FrameDistance::Cosine).unwrap();
        let fast = fastdtw(a.view(), b.view(), 50, FrameDistance::Cosine).unwrap();
        valid &= exact.validate(200, 200).is_ok() && fast.validate(200, 200).is_ok();
        valid &= fast.cost >= exact.cost - 1e-9;
        worst = worst.max((fast.cost - exact.cost) / exact.cost);
    }
    let ok = report(
        5,
        "FastDTW fidelity",
        worst <= 0.01 && valid,
        format!("max relative cost excess {:.3}% (bound 1%), path invariants {}", worst * 100.0, if valid { "hold" } else { "violated" }),
        start.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}

#[test]
fn criterion_6_discovery_end_to_end() {
    let _g = lock();
    let start = Instant::now();
    let (frames, bins, ngram, len) = (400, 48, 16, 80);
    let dcfg = DiscoveryConfig {
        ngram,
        ..DiscoveryConfig::default()
    };
    let model = CaeModel::unstandardized(ComplexBasis::dft_along_bins(ngram, bins));
    let mut hits = 0;
    let mut ious = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let src = rng.random_range(10..100);
        let dst = rng.random_range(src + len + 10..frames - len - 10);
        let shift = rng.random_range(1..=6) * if rng.random::<bool>() { 1 } else { -1 };
        let mut opts = SynthOptions::new(frames, bins, frames / 2);
        opts.margin_bins = 6;
        opts.plant = Some(PlantedRepeat {
            src_start: src,
            dst_start: dst,
            len,
            shift,
        });
        let piece = synth_cqt_like_with(seed, &opts).unwrap();
        let found = discover(&piece, &model, &dcfg).unwrap();
        let truth = RepeatedSection {
            occurrence_a: (src, src + len - ngram + 1),
            occurrence_b: (dst, dst + len - ngram + 1),
            score: 1.0,
        };
        let best = found.sections.iter().map(|s| section_iou(s, &truth)).fold(0.0, f64::max);
        ious.push(best);
        if best >= 0.8 {
            hits += 1;
        }
    }
    let ok = report(
        6,
        "discovery end-to-end",
        hits >= 9,
        format!("{hits}/10 planted repetitions recovered at IoU >= 0.8 (need 9); IoUs {ious:.3?}"),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn rotate_all(images: &Array2<f64>, spec: &TransformSpec, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = images.clone();
    for (src, mut dst) in images.outer_iter().zip(out.outer_iter_mut()) {
        let p = spec.sample_param(rng);
        dst.assign(&spec.apply(src, p).unwrap());
    }
    out
}

#[test]
fn criterion_7_rotated_mnist() {
    let _g = lock();
    let start = Instant::now();
    let digits = load_idx(&data_path("mnist-5k-images.idx.gz"), &data_path("mnist-5k-labels.idx.gz")).unwrap();
    let pixels = digits.flattened();
    // The subset is sorted by digit, so the pools are drawn per class.
    let (train_idx, test_idx) = stratified_pools(&digits.labels, 3000, 2000).unwrap();
    let train_px = pixels.select(Axis(0), &train_idx);
    let test_px = pixels.select(Axis(0), &test_idx);
    let train_y: Vec<u8> = train_idx.iter().map(|&i| digits.labels[i]).collect();
    let test_y: Vec<u8> = test_idx.iter().map(|&i| digits.labels[i]).collect();

    let stats = StandardizationStats::fit_global(train_px.view()).unwrap();
    let train_z = stats.apply(train_px.view()).unwrap();
    let spec = TransformSpec::rotation(28, 28);
    let cfg = TrainConfig {
        n_basis: 64,
        p_norm: LossPower::Two,
        learning_rate: 1e-3,
        batch_size: 100,
        epochs: 50,
        transforms_per_epoch: 10_000,
        dropout_p: 0.5,
        norm_mode: NormMode::None,
        rng_seed: 7,
        optimizer: Default::default(),
    };
    let mut pairs = DatasetPairs {
        data: train_z.view(),
        spec: &spec,
        scheme: PairScheme::Double,
    };
    let out = train(&cfg, 784, &mut pairs).unwrap();
    let model = CaeModel::new(out.basis, stats).unwrap();
    let train_secs = start.elapsed().as_secs_f64();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rot_train = rotate_all(&train_px, &spec, &mut rng);
    let rot_test = rotate_all(&test_px, &spec, &mut rng);
    let mag_train = model.magnitudes(rot_train.view()).unwrap();
    let mag_test = model.magnitudes(rot_test.view()).unwrap();

    let cv = CvConfig {
        train_size: 1000,
        folds: 5,
        test_size: 2000,
        seed: 70,
    };
    let logreg = ClassifierSpec::LogReg {
        config: LogRegConfig {
            l2: 1e-2,
            epochs: 1000,
            learning_rate: 0.5,
        },
        standardize: true,
    };
    let mag_err = cross_validate_pools(mag_train.view(), &train_y, mag_test.view(), &test_y, &cv, &logreg).unwrap();
    let knn: Vec<(usize, f64)> = [1usize, 5]
        .iter()
        .map(|&k| {
            let r = cross_validate_pools(rot_train.view(), &train_y, rot_test.view(), &test_y, &cv, &ClassifierSpec::Knn { k }).unwrap();
            (k, r.mean_error)
        })
        .collect();
    let (best_k, best_knn) = knn.iter().copied().fold((0, 1.0), |b, c| if c.1 < b.1 { c } else { b });
    let margin = best_knn - mag_err.mean_error;

    let sub: Vec<usize> = (0..1000).collect();
    let ratio = class_distance_ratio(mag_test.select(Axis(0), &sub).view(), &test_y[..1000]);
    println!("    magnitude-space within/between class distance ratio on 1000 rotated test digits: {ratio:.3}");

    let ok = report(
        7,
        "rotated MNIST magnitudes vs pixels",
        margin >= 0.10,
        format!(
            "logreg on magnitudes {:.2}% vs best k-NN (k={best_k}) on pixels {:.2}% (k=1 {:.2}%, k=5 {:.2}%): margin {:.2} points (need 10); CAE training {train_secs:.0}s",
            mag_err.mean_error * 100.0,
            best_knn * 100.0,
            knn[0].1 * 100.0,
            knn[1].1 * 100.0,
            margin * 100.0
        ),
        start.elapsed(),
        Duration::from_secs(15 * 60),
    );
    assert!(ok);
}

#[test]
fn criterion_8_transposition_robust_alignment() {
    let _g = lock();
    let start = Instant::now();
    let (frames, bins, ngram) = (300, 84, 8);
    let acfg = AlignConfig {
        ngram,
        ..AlignConfig::default()
    };
    let model = CaeModel::unstandardized(ComplexBasis::dft_along_bins(ngram, bins));
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (k, shift) in [12i64, -12].into_iter().enumerate() {
        let mut opts = SynthOptions::new(frames, bins, frames / 2);
        opts.bins_per_octave = 24;
        opts.margin_bins = 12;
        let (piece, onsets) = synth_cqt_like_events(80 + k as u64, &opts).unwrap();
        let moved = cae::data::FeatureMatrix::new(pitch_shift(piece.values.view(), shift).unwrap(), piece.frame_hop_seconds, "transposed").unwrap();
        let hop = piece.frame_hop_seconds;
        let last = frames - ngram;
        let gt = GroundTruthMap::new(onsets.iter().filter(|&&t| t <= last).map(|&t| (t as f64 * hop, t as f64 * hop)).collect()).unwrap();
        let within = |path: &cae::alignment::WarpingPath| {
            let r = evaluate_alignment(path, hop, hop, &gt).unwrap();
            r.errors.iter().filter(|&&e| e <= hop + 1e-9).count() as f64 / r.n_events as f64
        };
        let mag_path = align_features(&piece, &moved, &model, &acfg).unwrap();
        let raw_path = align_raw(&piece, &moved, &acfg).unwrap();
        let (mag_rate, raw_rate) = (within(&mag_path), within(&raw_path));
        all_ok &= mag_rate >= 0.95 && raw_rate < 0.95;
        lines.push(format!(
            "shift {shift:+}: magnitudes {:.1}% within 1 frame (max path deviation {}), raw {:.1}%",
            mag_rate * 100.0,
            mag_path.max_diagonal_deviation(),
            raw_rate * 100.0
        ));
    }
    let ok = report(
        8,
        "transposition-robust alignment",
        all_ok,
        format!("{} (need >= 95% for magnitudes and < 95% for raw)", lines.join("; ")),
        start.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}
