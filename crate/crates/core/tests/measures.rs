use varhorse::dynsys::{Observable, ReferenceMeasure, TestFunctionFamily};
use varhorse::error::Error;
use varhorse::fixture::AffineFixture;
use varhorse::horseshoe::{SymbolicWord, VariableTimeHorseshoe};
use varhorse::measures::*;

const RHO: f64 = 0.1;
const S: usize = 4;

fn fixture() -> (AffineFixture, VariableTimeHorseshoe<f64>, TestFunctionFamily<f64>, ReferenceMeasure<f64>) {
    let fam = TestFunctionFamily::fourier(1);
    let leb = ReferenceMeasure::lebesgue(&fam);
    let fx = AffineFixture::for_delta(varhorse::branches::delta_modulus(&fam, RHO, S).unwrap());
    let hs = fx.horseshoe(&fam, &leb, RHO, S, 0.3).unwrap();
    (fx, hs, fam, leb)
}

#[test]
fn fixed_point_measure_averages_two_points() {
    let (fx, hs, fam, _) = fixture();
    let w = SymbolicWord::periodic(&[1]).unwrap();
    let m = periodic_measure(&fx, &hs, &w, &fam, S).unwrap();
    assert_eq!(m.period, 2);
    // chart point (-5/12, -5/12) at the centre, then the box at c + (1/2, 0)
    let sigma = fx.sigma;
    let (u, v) = (-5.0 / 12.0, -5.0 / 12.0);
    let p0 = [sigma * u, 0.25 + sigma * v];
    let (u1, v1) = (-5.0 / 16.0 + u / 4.0, 4.0 * (v + 5.0 / 16.0));
    let p1 = [0.5 + sigma * u1, 0.25 + sigma * v1];
    for (i, f) in fam.functions[..S].iter().enumerate() {
        let Observable::Fourier { k } = f else { unreachable!() };
        let phi = |p: [f64; 2]| (std::f64::consts::TAU * (k.0[0] as f64 * p[0] + k.0[1] as f64 * p[1])).cos();
        let expected = (phi(p0) + phi(p1)) / 2.0;
        assert!((m.integrals[i] - expected).abs() < 1e-14, "{i}");
    }
}

#[test]
fn constant_family_and_rotation_invariance() {
    let (fx, hs, _, _) = fixture();
    let c = TestFunctionFamily::constant(2.5);
    for w in [vec![1], vec![1, 2], vec![2, 2, 1]] {
        let m = periodic_measure(&fx, &hs, &SymbolicWord::periodic(&w).unwrap(), &c, 1).unwrap();
        assert!((m.integrals[0] - 2.5).abs() < 1e-15);
    }
    let fam = TestFunctionFamily::fourier(1);
    let a = periodic_measure(&fx, &hs, &SymbolicWord::periodic(&[1, 2]).unwrap(), &fam, S).unwrap();
    let b = periodic_measure(&fx, &hs, &SymbolicWord::periodic(&[2, 1]).unwrap(), &fam, S).unwrap();
    for i in 0..S {
        assert!((a.integrals[i] - b.integrals[i]).abs() < 1e-12);
    }
    assert!(periodic_measure(&fx, &hs, &SymbolicWord::forward(&[1]).unwrap(), &fam, S).is_err());
}

#[test]
fn two_rho_examples() {
    let (fx, hs, fam, leb) = fixture();
    let w = SymbolicWord::periodic(&[1, 2]).unwrap();
    let t = saturation_time(&hs.return_times(), &fam, RHO, S).unwrap();
    assert_eq!(t, 30);
    let out = check_two_rho(&fx, &hs, &w, t, &fam, &leb, RHO, S).unwrap();
    assert!(out.pass, "{out:?}");
    // oracle: direct summation along the saturated orbit
    let orbit = hs.saturate_orbit(&fx, &w, t).unwrap();
    for i in 0..S {
        let direct = orbit.points.iter().map(|p| fam.functions[i].eval(p)).sum::<f64>() / t as f64;
        assert!((direct.abs() - out.residuals[i]).abs() < 1e-15);
    }
    assert!(matches!(check_two_rho(&fx, &hs, &w, t - 1, &fam, &leb, RHO, S), Err(Error::InvalidInput(_))));
    let c = TestFunctionFamily::constant(1.0);
    let cref = ReferenceMeasure::analytic("one", vec![1.0]);
    let out = check_two_rho(&fx, &hs, &w, 30, &c, &cref, RHO, 1).unwrap();
    assert!(out.pass && out.max_residual == 0.0);
}

#[test]
fn three_rho_examples() {
    let (fx, hs, fam, leb) = fixture();
    let m = periodic_measure(&fx, &hs, &SymbolicWord::periodic(&[1, 1, 2]).unwrap(), &fam, S).unwrap();
    let own = ReferenceMeasure::analytic("self", m.integrals.clone());
    let same = check_three_rho(&m, &fam, &own, RHO, S).unwrap();
    assert_eq!(same.distance, 0.0);
    assert!(same.pass);
    assert!(check_three_rho(&m, &fam, &leb, RHO, S).unwrap().pass);
    let mut inflated = m.clone();
    inflated.integrals[2] += 4.0 * RHO;
    let bad = check_three_rho(&inflated, &fam, &leb, RHO, S).unwrap();
    assert!(!bad.pass);
}

#[test]
fn sweep_has_one_row_per_word() {
    let (fx, hs, fam, leb) = fixture();
    let rows = measure_sweep(&fx, &hs, &fam, &leb, RHO, S, 3).unwrap();
    assert_eq!(rows.len(), 2 + 4 + 8);
    assert_eq!(rows.iter().map(|r| r.cyclic_class.as_str()).collect::<std::collections::BTreeSet<_>>().len(), 5);
    let r = rows.iter().find(|r| r.word == "212").unwrap();
    assert_eq!(r.cyclic_class, "122");
    assert_eq!(r.period, 8);
    let r = rows.iter().find(|r| r.word == "11").unwrap();
    assert_eq!((r.cyclic_class.as_str(), r.period), ("1", 4));
    assert!(rows.iter().all(|r| r.pass));
    let csv = rows_to_csv(&rows).unwrap();
    assert_eq!(csv.lines().count(), 15);
}

#[test]
fn convergence_on_fixture() {
    let fam = TestFunctionFamily::fourier(1);
    let leb = ReferenceMeasure::lebesgue(&fam);
    let schedule: Vec<_> = (0..4).map(|n| ScheduleEntry { rho: 0.1 / 2f64.powi(n), s: 4 }).collect();
    let t0 = std::time::Instant::now();
    let run = convergence_experiment(&FixtureSource { gamma: 0.3 }, &fam, &leb, &schedule, &ExperimentOptions::default()).unwrap();
    assert!(t0.elapsed().as_secs() < 120);
    let st = &run.report.stages;
    assert_eq!(st.len(), 4);
    for s in st {
        assert!(s.error.is_none(), "{:?}", s.error);
        assert!(s.d < s.threshold, "stage {}: {} vs {}", s.stage, s.d, s.threshold);
        assert!(s.pass);
        assert_eq!(s.word_len, 16);
    }
    assert!(st[3].d < st[0].d);

    let empty = convergence_experiment(&FixtureSource { gamma: 0.3 }, &fam, &leb, &[], &ExperimentOptions::default()).unwrap();
    assert!(empty.report.stages.is_empty());
    let bad = [ScheduleEntry { rho: 0.1, s: 4 }, ScheduleEntry { rho: 0.2, s: 4 }];
    assert!(convergence_experiment(&FixtureSource { gamma: 0.3 }, &fam, &leb, &bad, &ExperimentOptions::default()).is_err());
}
