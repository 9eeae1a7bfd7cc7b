use photon_dfa_bench::*;
use photon_dfa_core::mlp::Algorithm;
use photon_dfa_core::opu::LatencyModel;
use proptest::prelude::*;

fn counted() -> TimingOptions {
    TimingOptions::default()
}

fn wall() -> TimingOptions {
    TimingOptions {
        clock: Clock::Wall,
        ..TimingOptions::default()
    }
}

fn point(width: usize, depth: usize, seconds: f64) -> ScalingPoint {
    ScalingPoint::new(
        width,
        depth,
        Algorithm::Bp,
        Breakdown {
            forward: seconds,
            ..Breakdown::default()
        },
    )
}

#[test]
fn smallest_network_gives_a_valid_point() {
    for options in [counted(), wall()] {
        for alg in [Algorithm::Bp, Algorithm::Dfa, Algorithm::Tdfa, Algorithm::Odfa] {
            let p = time_training(1, 1, alg, LatencyModel::default(), 3, &options).unwrap();
            let b = p.breakdown;
            assert!([b.forward, b.feedback, b.update, b.optical].iter().all(|&v| v >= 0.0));
            assert!(p.seconds_per_sample > 0.0);
            assert!((b.total() - p.seconds_per_sample).abs() <= 0.01 * p.seconds_per_sample);
        }
    }
}

#[test]
fn invalid_requests_are_rejected() {
    let lat = LatencyModel::default();
    assert!(matches!(time_training(0, 1, Algorithm::Bp, lat, 1, &counted()), Err(BenchError::Invalid(_))));
    assert!(matches!(time_training(4, 0, Algorithm::Bp, lat, 1, &counted()), Err(BenchError::Invalid(_))));
    assert!(matches!(time_training(4, 1, Algorithm::Bp, lat, 0, &counted()), Err(BenchError::Invalid(_))));
    assert!(time_training(4, 1, Algorithm::Shlw, lat, 1, &counted()).is_err());
}

#[test]
fn oversized_networks_report_the_allocation() {
    let options = TimingOptions {
        max_bytes: 1 << 20,
        ..counted()
    };
    let needed = model_bytes(1024, 4, Algorithm::Bp);
    match time_training(1024, 4, Algorithm::Bp, LatencyModel::zero(), 1, &options) {
        Err(BenchError::Capacity { bytes, limit, .. }) => {
            assert_eq!(bytes, needed);
            assert_eq!(limit, 1 << 20);
        }
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn reference_time_grows_with_width() {
    for options in [counted(), wall()] {
        let times: Vec<f64> = [128, 256, 512, 1024]
            .iter()
            .map(|&w| time_training(w, 2, Algorithm::Bp, LatencyModel::zero(), 8, &options).unwrap().seconds_per_sample)
            .collect();
        assert!(times.windows(2).all(|t| t[0] < t[1]), "{times:?}");
    }
}

#[test]
fn counted_reference_time_grows_with_depth() {
    let times: Vec<f64> = (1..=6)
        .map(|d| time_training(64, d, Algorithm::Bp, LatencyModel::zero(), 2, &counted()).unwrap().seconds_per_sample)
        .collect();
    assert!(times.windows(2).all(|t| t[0] < t[1]));
}

#[test]
fn optical_ledger_is_projection_count_times_latency() {
    let latency = LatencyModel::new(0.0125, 2);
    let samples = 7;
    for options in [counted(), wall()] {
        let optical: Vec<f64> = [16, 64, 256]
            .iter()
            .map(|&w| time_training(w, 2, Algorithm::Odfa, latency, samples, &options).unwrap().breakdown.optical)
            .collect();
        let expected = samples as f64 * 2.0 * 0.0125 / samples as f64;
        assert!(optical.iter().all(|&o| o == expected), "{optical:?}");
    }
    let bp = time_training(16, 2, Algorithm::Bp, latency, samples, &counted()).unwrap();
    assert_eq!(bp.breakdown.optical, 0.0);
}

#[test]
fn counted_clock_is_reproducible() {
    let a = time_training(32, 3, Algorithm::Odfa, LatencyModel::default(), 4, &counted()).unwrap();
    let b = time_training(32, 3, Algorithm::Odfa, LatencyModel::default(), 4, &counted()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn counted_costs_match_hand_arithmetic() {
    // Width 4, one hidden layer: dims [4, 4, 10].
    let spf = 1e-9;
    let p = time_training(4, 1, Algorithm::Bp, LatencyModel::zero(), 1, &counted()).unwrap();
    let forward = (2.0 * 16.0 + 8.0) + (2.0 * 40.0 + 20.0) + 30.0;
    let feedback = 2.0 * 40.0 + 4.0;
    let update = (32.0 + 4.0 + 40.0) + (80.0 + 10.0 + 100.0);
    assert!((p.breakdown.forward - forward * spf).abs() < 1e-20);
    assert!((p.breakdown.feedback - feedback * spf).abs() < 1e-20);
    assert!((p.breakdown.update - update * spf).abs() < 1e-20);
}

#[test]
fn one_point_scan_equals_direct_timing() {
    let grid = ScanGrid::new(vec![2], vec![16], vec![Algorithm::Odfa], 3);
    let scan = scan_widths(&grid, LatencyModel::default(), &counted(), None).unwrap();
    let direct = time_training(16, 2, Algorithm::Odfa, LatencyModel::default(), 3, &counted()).unwrap();
    assert_eq!(scan, vec![direct]);
}

#[test]
fn scan_covers_the_cross_product_in_order() {
    let grid = ScanGrid::new(vec![1, 3], vec![8, 4], vec![Algorithm::Bp, Algorithm::Dfa], 2);
    let pts = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    let keys: Vec<_> = pts.iter().map(|p| (p.depth, p.width, p.algorithm)).collect();
    let mut expected = Vec::new();
    for d in [1, 3] {
        for w in [8, 4] {
            for a in [Algorithm::Bp, Algorithm::Dfa] {
                expected.push((d, w, a));
            }
        }
    }
    assert_eq!(keys, expected);
    assert!(scan_widths(&ScanGrid::new(vec![], vec![4], vec![Algorithm::Bp], 1), LatencyModel::zero(), &counted(), None).is_err());
}

#[test]
fn parallel_scan_matches_sequential_under_the_counted_clock() {
    let mut grid = ScanGrid::new(vec![1, 2], vec![8, 16, 32], vec![Algorithm::Bp, Algorithm::Odfa], 2);
    let seq = scan_widths(&grid, LatencyModel::default(), &counted(), None).unwrap();
    grid.threads = 3;
    assert_eq!(scan_widths(&grid, LatencyModel::default(), &counted(), None).unwrap(), seq);
}

#[test]
fn rerun_over_a_complete_file_recomputes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let grid = ScanGrid::new(vec![1, 2], vec![8, 16], vec![Algorithm::Bp], 2);
    let first = scan_widths(&grid, LatencyModel::zero(), &counted(), Some(&path)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let modified = std::fs::metadata(&path).unwrap().modified().unwrap();
    // Wall-clock options would give different numbers if anything were re-timed.
    let again = scan_widths(&grid, LatencyModel::zero(), &wall(), Some(&path)).unwrap();
    assert_eq!(again, first);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(std::fs::metadata(&path).unwrap().modified().unwrap(), modified);
    assert_eq!(read_points(&path).unwrap(), first);
}

#[test]
fn interrupted_scan_completes_only_the_remaining_points() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let grid = ScanGrid::new(vec![1], vec![8, 16, 32], vec![Algorithm::Bp], 2);
    let full = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    // A partial file whose first point carries a marker value.
    let mut marked = full[0].clone();
    marked.breakdown.forward = 123.0;
    marked.seconds_per_sample = marked.breakdown.total();
    write_points(&path, &[marked.clone()]).unwrap();
    let resumed = scan_widths(&grid, LatencyModel::zero(), &counted(), Some(&path)).unwrap();
    assert_eq!(resumed[0], marked);
    assert_eq!(&resumed[1..], &full[1..]);
    assert_eq!(read_points(&path).unwrap(), resumed);
}

#[test]
fn corrupt_results_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let grid = ScanGrid::new(vec![1], vec![8], vec![Algorithm::Bp], 1);
    for (name, body) in [
        ("header.csv", "w,d\n1,2\n"),
        ("value.csv", "width,depth,algorithm,seconds_per_sample,forward,feedback,update,optical\n8,1,bp,abc,0,0,0,0\n"),
        ("alg.csv", "width,depth,algorithm,seconds_per_sample,forward,feedback,update,optical\n8,1,sgd,1,1,0,0,0\n"),
        ("neg.csv", "width,depth,algorithm,seconds_per_sample,forward,feedback,update,optical\n8,1,bp,1,-1,0,0,0\n"),
    ] {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        let err = scan_widths(&grid, LatencyModel::zero(), &counted(), Some(&path)).unwrap_err();
        assert!(matches!(err, BenchError::Corrupt { .. }), "{name}: {err}");
    }
}

#[test]
fn exact_quadratic_is_recovered() {
    let (a, b, c) = (3e-9, -2e-7, 5e-4);
    let pts: Vec<_> = [50, 100, 200, 400, 800, 1600]
        .iter()
        .map(|&w| point(w, 3, a * (w * w) as f64 + b * w as f64 + c))
        .collect();
    let fit = fit_scaling(&pts, FitModel::QuadraticInWidth).unwrap();
    for (got, want) in fit.coefficients.iter().zip([a, b, c]) {
        assert!((got - want).abs() <= 1e-9 * want.abs(), "{got} vs {want}");
    }
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
}

#[test]
fn constant_data_has_zero_slope() {
    let pts: Vec<_> = (1..=5).map(|d| point(64, d, 0.25)).collect();
    let fit = fit_scaling(&pts, FitModel::LinearInDepth).unwrap();
    assert!(fit.coefficients[0].abs() < 1e-12);
    assert!((fit.coefficients[1] - 0.25).abs() < 1e-12);
    assert_eq!(fit.r_squared, 1.0);
}

#[test]
fn fits_reject_too_few_or_degenerate_points() {
    let three: Vec<_> = (1..=3).map(|d| point(64, d, d as f64)).collect();
    assert!(matches!(fit_scaling(&three, FitModel::LinearInDepth), Err(BenchError::Invalid(_))));
    let same_width: Vec<_> = (1..=5).map(|d| point(64, d, d as f64)).collect();
    assert!(matches!(fit_scaling(&same_width, FitModel::QuadraticInWidth), Err(BenchError::Degenerate(_))));
}

#[test]
fn surface_fit_recovers_its_generating_coefficients() {
    let coef = [1e-4, 2e-7, 3e-8, 4e-9];
    let mut pts = Vec::new();
    for d in [1, 2, 4, 8] {
        for w in [64, 128, 256] {
            let (wf, df) = (w as f64, d as f64);
            pts.push(point(w, d, coef[0] + coef[1] * wf + coef[2] * df * wf + coef[3] * df * wf * wf));
        }
    }
    let fit = fit_scaling(&pts, FitModel::WidthDepthSurface).unwrap();
    for (g, w) in fit.coefficients.iter().zip(coef) {
        assert!((g - w).abs() <= 1e-8 * w);
    }
    let far = coef[0] + coef[1] * 3080.0 + coef[2] * 96.0 * 3080.0 + coef[3] * 96.0 * 3080.0 * 3080.0;
    assert!((fit.predict(3080, 96) - far).abs() <= 1e-8 * far);
}

#[test]
fn counted_reference_scan_is_exactly_quadratic() {
    let grid = ScanGrid::new(vec![3], vec![32, 64, 96, 128, 192], vec![Algorithm::Bp], 1);
    let pts = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    let fit = fit_scaling(&pts, FitModel::QuadraticInWidth).unwrap();
    assert!(fit.r_squared > 1.0 - 1e-12);
}

fn curves(bp: &[(usize, f64)], od: &[(usize, f64)]) -> (Vec<ScalingPoint>, Vec<ScalingPoint>) {
    (
        bp.iter().map(|&(w, t)| point(w, 1, t)).collect(),
        od.iter()
            .map(|&(w, t)| ScalingPoint {
                algorithm: Algorithm::Odfa,
                ..point(w, 1, t)
            })
            .collect(),
    )
}

#[test]
fn crossover_is_the_first_faster_point() {
    let (bp, od) = curves(&[(10, 1.0), (20, 2.0), (30, 4.0)], &[(10, 3.0), (20, 3.0), (30, 3.0)]);
    assert_eq!(find_crossover(&bp, &od).unwrap(), Some((30, 1)));
    let (bp, od) = curves(&[(10, 1.0), (20, 2.0)], &[(10, 5.0), (20, 5.0)]);
    assert_eq!(find_crossover(&bp, &od).unwrap(), None);
    let (bp, od) = curves(&[(10, 1.0), (20, 2.0)], &[(10, 5.0)]);
    assert!(matches!(find_crossover(&bp, &od), Err(BenchError::GridMismatch(_))));
}

#[test]
fn crossover_limits_of_the_latency_model() {
    let grid = |alg| ScanGrid::new(vec![2], vec![16, 32, 64, 128], vec![alg], 2);
    // Free projections: the optical run skips the backward products and wins everywhere.
    let free = LatencyModel::zero();
    let bp = scan_widths(&grid(Algorithm::Bp), free, &counted(), None).unwrap();
    let od = scan_widths(&grid(Algorithm::Odfa), free, &counted(), None).unwrap();
    assert_eq!(find_crossover(&bp, &od).unwrap(), Some((16, 2)));
    let slow = LatencyModel::new(1.0, 2);
    let od = scan_widths(&grid(Algorithm::Odfa), slow, &counted(), None).unwrap();
    assert_eq!(find_crossover(&bp, &od).unwrap(), None);
}

#[test]
fn calibration_reproduces_the_target_ratio() {
    let grid = ScanGrid::new(vec![1, 2, 4], vec![32, 64, 128, 256], vec![Algorithm::Bp, Algorithm::Odfa], 1);
    let pts = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    let (bp, od): (Vec<_>, Vec<_>) = pts.into_iter().partition(|p| p.algorithm == Algorithm::Bp);
    let target = CalibrationTarget::default();
    let cal = calibrate_latency(&bp, &od, target, 2).unwrap();
    let (b, o) = cal.predict(target.width, target.depth);
    assert!((o / b - target.odfa_seconds / target.bp_seconds).abs() < 1e-9);
    assert!((b * cal.time_scale - target.bp_seconds).abs() < 1e-12);
    let widths: Vec<usize> = (1..=31).map(|k| 100 * k).collect();
    let (pb, po) = predict_points(&cal, &widths, target.depth);
    let cross = find_crossover(&pb, &po).unwrap().expect("crossover below the target");
    assert!(cross.0 <= target.width);
    // Calibrated latency re-timed through the harness lands on the same prediction.
    let again = time_training(256, 4, Algorithm::Odfa, cal.latency, 1, &counted()).unwrap();
    assert!((again.seconds_per_sample - cal.predict(256, 4).1).abs() <= 1e-9 * again.seconds_per_sample);
}

#[test]
fn calibration_fails_when_the_budget_is_negative() {
    let grid = ScanGrid::new(vec![1, 2, 4], vec![32, 64, 128, 256], vec![Algorithm::Bp, Algorithm::Odfa], 1);
    let pts = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    let (bp, od): (Vec<_>, Vec<_>) = pts.into_iter().partition(|p| p.algorithm == Algorithm::Bp);
    let target = CalibrationTarget {
        odfa_seconds: 1e-6,
        ..CalibrationTarget::default()
    };
    assert!(matches!(calibrate_latency(&bp, &od, target, 2), Err(BenchError::Degenerate(_))));
}

#[test]
fn ratio_curve_swaps_feedback_for_latency() {
    let grid = ScanGrid::new(vec![2], vec![16, 64], vec![Algorithm::Dfa], 2);
    let pts = scan_widths(&grid, LatencyModel::zero(), &counted(), None).unwrap();
    let latency = LatencyModel::new(1e-3, 2);
    let curve = latency_ratio_curve(&pts, latency).unwrap();
    for (r, p) in curve.iter().zip(&pts) {
        let b = p.breakdown;
        assert_eq!(r.optical_seconds, b.forward + b.update + 2e-3);
        assert_eq!(r.ratio, r.optical_seconds / p.seconds_per_sample);
    }
    // Free projections always help; the relative gain shrinks as width grows.
    let free = latency_ratio_curve(&pts, LatencyModel::zero()).unwrap();
    assert!(free.iter().all(|r| r.ratio < 1.0));
    assert!(latency_ratio_curve(&[point(4, 1, 1.0)], latency).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn breakdown_always_sums_to_the_total(width in 1usize..48, depth in 1usize..4, alg in 0usize..4, spp in 0.0f64..0.01) {
        let alg = [Algorithm::Bp, Algorithm::Dfa, Algorithm::Tdfa, Algorithm::Odfa][alg];
        let p = time_training(width, depth, alg, LatencyModel::new(spp, 2), 2, &counted()).unwrap();
        prop_assert!((p.breakdown.total() - p.seconds_per_sample).abs() <= 0.01 * p.seconds_per_sample);
    }

    #[test]
    fn quadratic_fit_r_squared_is_a_fraction(noise in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let pts: Vec<_> = [10usize, 20, 30, 40, 50, 60]
            .iter()
            .zip(&noise)
            .map(|(&w, n)| point(w, 1, (w * w) as f64 + 200.0 * n))
            .collect();
        let fit = fit_scaling(&pts, FitModel::QuadraticInWidth).unwrap();
        prop_assert!((0.0..=1.0).contains(&fit.r_squared));
    }
}
