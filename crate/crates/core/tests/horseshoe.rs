use varhorse::branches::HyperbolicBranch;
use varhorse::dynsys::{iterate, MapSystem, ReferenceMeasure, TestFunctionFamily};
use varhorse::error::Error;
use varhorse::fixture::AffineFixture;
use varhorse::horseshoe::*;

fn fixture() -> (AffineFixture, VariableTimeHorseshoe<f64>) {
    let fx = AffineFixture::new(2f64.powi(-9));
    let fam = TestFunctionFamily::fourier(1);
    let leb = ReferenceMeasure::lebesgue(&fam);
    let hs = fx.horseshoe(&fam, &leb, 0.1, 4, 0.3).unwrap();
    (fx, hs)
}

fn branch(hs: &VariableTimeHorseshoe<f64>, letter: usize) -> &HyperbolicBranch<f64> {
    &hs.branches[letter - 1]
}

#[test]
fn build_accepts_fixture() {
    let (_, hs) = fixture();
    assert_eq!(hs.crossing_matrix, vec![vec![true; 2]; 2]);
    assert!(!hs.degenerate);
    assert_eq!(hs.return_times(), vec![2, 3]);
    assert_eq!(hs.lambda_bar(), 0.25);
}

#[test]
fn build_rejects_overlap_and_flags_single_branch() {
    let (_, hs) = fixture();
    let b = hs.branches[0].clone();
    let err = build(vec![b.clone(), b.clone()], hs.rectangle.clone()).unwrap_err();
    assert!(matches!(err, Error::Overlap(_)), "{err}");
    let one = build(vec![b], hs.rectangle.clone()).unwrap();
    assert!(one.degenerate);
    assert!(build(Vec::<HyperbolicBranch<f64>>::new(), hs.rectangle.clone()).is_err());
}

#[test]
fn refinement_decays_exactly() {
    let (fx, hs) = fixture();
    let w = 2.0 * hs.rectangle.scale;
    for n in 1..=8 {
        let r = refine(&fx, &hs, n, DEFAULT_CAP).unwrap();
        assert_eq!(r.count(), 1 << n);
        assert_eq!(r.unstable_cylinders.len(), 1 << n);
        assert_eq!(r.max_diameters.unstable_direction, w * 0.25f64.powi(n as i32));
        assert_eq!(r.max_diameters.stable_direction, w * 0.25f64.powi(n as i32));
        assert_eq!(r.level_diameters.len(), n);
    }
    let r1 = refine(&fx, &hs, 1, DEFAULT_CAP).unwrap();
    assert_eq!(r1.stable_cylinders[0], hs.branches[0].source);
    assert_eq!(r1.stable_cylinders[1], hs.branches[1].source);
}

#[test]
fn refinement_respects_cap_and_depth() {
    let (fx, hs) = fixture();
    assert!(matches!(refine(&fx, &hs, 21, DEFAULT_CAP), Err(Error::CapExceeded { requested, cap }) if requested == 1 << 21 && cap == 1 << 20));
    assert!(matches!(refine(&fx, &hs, 0, DEFAULT_CAP), Err(Error::InvalidInput(_))));
}

#[test]
fn refinement_words_follow_prefixes() {
    let (fx, hs) = fixture();
    let r = refine(&fx, &hs, 4, DEFAULT_CAP).unwrap();
    for idx in 0..r.count() {
        let w = r.word(idx);
        assert_eq!(r.index(&w), idx);
        // rebuilding each cylinder from its word gives the same strip
        assert_eq!(hs.stable_cylinder(&fx, &w).unwrap(), r.stable_cylinders[idx]);
        assert_eq!(hs.unstable_cylinder(&fx, &w).unwrap(), r.unstable_cylinders[idx]);
    }
}

#[test]
fn fixed_point_of_branch_one() {
    let (fx, hs) = fixture();
    // u = -5/16 + u/4 and v = -5/16 + v/4 give u = v = -5/12
    let ones = vec![1; 20];
    let p = hs.point_from_word(&fx, &ones, &ones).unwrap();
    let exact = hs.rectangle.from_chart([-5.0 / 12.0, -5.0 / 12.0]);
    assert!(p.point.distance(&exact) <= p.error_radius);
    let w = SymbolicWord::periodic(&[1]).unwrap();
    let q = hs.periodic_point(&fx, &w, 0).unwrap();
    assert!((q.chart[0] + 5.0 / 12.0).abs() < 1e-15 && (q.chart[1] + 5.0 / 12.0).abs() < 1e-15);
    let back = iterate(&fx, q.point, 2).unwrap();
    assert!(back.distance(&q.point) <= q.error_radius);
}

#[test]
fn error_radius_shrinks_with_depth() {
    let (fx, hs) = fixture();
    let coarse = hs.point_from_word(&fx, &[1], &[2]).unwrap();
    assert!(coarse.error_radius <= hs.rectangle.scale);
    assert!(hs.branches[1].source.contains(coarse.chart, 0.0) && hs.branches[0].target.contains(coarse.chart, 0.0));
    let word = [2, 1, 1, 2, 1, 2, 2, 1];
    for a in 0..word.len() {
        for b in 0..word.len() {
            let r = |i: usize, j: usize| hs.point_from_word(&fx, &word[..i], &word[..j]).unwrap().error_radius;
            assert!(r(a + 1, b) <= r(a, b));
            assert!(r(a, b + 1) <= r(a, b));
        }
    }
}

#[test]
fn shift_equivariance() {
    let (fx, hs) = fixture();
    let past = [2, 1, 2, 2, 1, 1];
    let future = [1, 2, 2, 1, 2, 1, 1, 2];
    for k in 0..4 {
        let before = hs.point_from_word(&fx, &past, &future[k..]).unwrap();
        let mut shifted_past = past.to_vec();
        shifted_past.push(future[k]);
        let after = hs.point_from_word(&fx, &shifted_past, &future[k + 1..]).unwrap();
        let b = branch(&hs, future[k]);
        let image = b.forward_chart(&fx, &hs.rectangle, before.chart).unwrap();
        let d = hs.rectangle.from_chart(image).distance(&after.point);
        let radius_image = b.cone_certificate.log_unstable_expansion.exp() * before.error_radius;
        assert!(d <= radius_image + after.error_radius, "k={k} d={d}");
    }
}

#[test]
fn points_staying_in_sources_lie_in_cylinders() {
    let (fx, hs) = fixture();
    let depth = 4;
    let r = refine(&fx, &hs, depth, DEFAULT_CAP).unwrap();
    let h = hs.rectangle.half_width;
    let mut staying = 0;
    for i in 0..=256 {
        for j in 0..=256 {
            let mut xi = [h * (2.0 * i as f64 / 256.0 - 1.0), h * (2.0 * j as f64 / 256.0 - 1.0)];
            let start = xi;
            let mut word = Vec::new();
            for _ in 0..depth {
                let Some(k) = hs.branches.iter().position(|b| b.source.contains(xi, 0.0)) else { break };
                word.push(k + 1);
                xi = hs.branches[k].forward_chart(&fx, &hs.rectangle, xi).unwrap();
                if xi[0].abs() > h || xi[1].abs() > h {
                    break;
                }
            }
            if word.len() == depth {
                staying += 1;
                assert!(r.stable_cylinders[r.index(&word)].contains(start, 0.0), "{start:?} {word:?}");
            }
        }
    }
    assert!(staying > 0);
}

#[test]
fn saturate_examples() {
    let (fx, hs) = fixture();
    let one = SymbolicWord::periodic(&[1]).unwrap();
    let orbit = hs.saturate_orbit(&fx, &one, 4).unwrap();
    assert_eq!(orbit.points.len(), 4);
    assert_eq!(orbit.points[2], orbit.points[0]);
    assert_eq!(orbit.points[3], orbit.points[1]);
    // the model orbit is the true orbit of the map
    let p1 = iterate(&fx, orbit.points[0], 1).unwrap();
    assert!(p1.distance(&orbit.points[1]) < 1e-15);

    let single = hs.saturate_orbit(&fx, &one, 1).unwrap();
    assert_eq!(single.points, vec![hs.periodic_point(&fx, &one, 0).unwrap().point]);

    let w = SymbolicWord::periodic(&[1, 2]).unwrap();
    let orbit = hs.saturate_orbit(&fx, &w, 5).unwrap();
    assert_eq!(orbit.points.len(), 5);
    let back = iterate(&fx, orbit.points[0], 5).unwrap();
    assert!(back.distance(&orbit.points[0]) <= orbit.error_radius);
    for j in 0..4 {
        let next = iterate(&fx, orbit.points[j], 1).unwrap();
        assert!(next.distance(&orbit.points[j + 1]) <= 2.0 * orbit.error_radius);
    }
}

#[test]
fn period_compatibility() {
    let (fx, hs) = fixture();
    for w in lyndon_words(2, 5) {
        let period = w.period(&hs.return_times());
        let orbit = hs.saturate_orbit(&fx, &w, period + 1).unwrap();
        let d = orbit.points[period].distance(&orbit.points[0]);
        assert!(d <= orbit.error_radius, "{w}: {d}");
        // each step shadows the map
        for j in 0..period {
            let next = iterate(&fx, orbit.points[j], 1).unwrap();
            assert!(next.distance(&orbit.points[j + 1]) <= 2.0 * orbit.error_radius, "{w} step {j}");
        }
    }
}

#[test]
fn forward_itinerary_must_cover_length() {
    let (fx, hs) = fixture();
    let w = SymbolicWord::forward(&[1, 2]).unwrap();
    assert!(hs.saturate_orbit(&fx, &w, 5).is_ok());
    assert!(matches!(hs.saturate_orbit(&fx, &w, 6), Err(Error::InsufficientItinerary { covered: 5, needed: 6 })));
    let bad = SymbolicWord::periodic(&[3]).unwrap();
    assert!(hs.saturate_orbit(&fx, &bad, 2).is_err());
}

#[test]
fn csv_export() {
    let (fx, hs) = fixture();
    let r = refine(&fx, &hs, 3, DEFAULT_CAP).unwrap();
    let csv = r.to_csv(&hs.rectangle).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kind,word,depth,u_min,u_max,v_min,v_max,thickness,width");
    assert_eq!(lines.len(), 1 + 2 * 8);
    assert!(lines[1].starts_with("stable,111,3,"));
    assert!(MapSystem::<f64>::is_affine(&fx));
}

#[test]
fn json_roundtrip() {
    let (_, hs) = fixture();
    let s = serde_json::to_string(&hs).unwrap();
    let back: VariableTimeHorseshoe<f64> = serde_json::from_str(&s).unwrap();
    assert_eq!(back, hs);
}

