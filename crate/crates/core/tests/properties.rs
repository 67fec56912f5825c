use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use std::sync::OnceLock;
use varhorse::branches::delta_modulus;
use varhorse::dynsys::*;
use varhorse::fixture::AffineFixture;
use varhorse::horseshoe::{refine, SymbolicWord, VariableTimeHorseshoe, DEFAULT_CAP};
use varhorse::measures::*;

const RHO: f64 = 0.1;
const S: usize = 4;

struct Fx {
    fx: AffineFixture,
    hs: VariableTimeHorseshoe<f64>,
    fam: TestFunctionFamily<f64>,
    leb: ReferenceMeasure<f64>,
}

fn fx() -> &'static Fx {
    static FX: OnceLock<Fx> = OnceLock::new();
    FX.get_or_init(|| {
        let fam = TestFunctionFamily::fourier(1);
        let leb = ReferenceMeasure::lebesgue(&fam);
        let fx = AffineFixture::for_delta(delta_modulus(&fam, RHO, S).unwrap());
        let hs = fx.horseshoe(&fam, &leb, RHO, S, 0.3).unwrap();
        Fx { fx, hs, fam, leb }
    })
}

fn letters(max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=2, 1..=max)
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..1.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iterates_compose(x in unit(), y in unit(), a in -100i64..=100, b in -100i64..=100) {
        let rot = Rotation::new(0.7);
        let p = Point::torus(x, y);
        let one = iterate(&rot, p, a + b).unwrap();
        let two = iterate(&rot, iterate(&rot, p, a).unwrap(), b).unwrap();
        prop_assert!(one.distance(&two) <= TAU_INV);
        // same-sign splits on the expanding cat map
        let (a, b) = (a.abs(), b.abs());
        for sign in [1, -1] {
            let one = iterate(&CatMap, p, sign * (a + b)).unwrap();
            let two = iterate(&CatMap, iterate(&CatMap, p, sign * a).unwrap(), sign * b).unwrap();
            prop_assert!(one.distance(&two) <= TAU_INV);
        }
    }

    #[test]
    fn cocycle_chain_rule(x in unit(), y in unit(), m in 1usize..20, n in 1usize..20) {
        let map = StandardMap::new(6.0);
        let p = Point::torus(x, y);
        let whole = cocycle(&map, p, m + n).unwrap().to_matrix();
        let first = cocycle(&map, p, m).unwrap().to_matrix();
        let second = cocycle(&map, iterate(&map, p, m as i64).unwrap(), n).unwrap().to_matrix();
        let prod = second.mul(&first);
        for k in 0..2 {
            let e = if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let (u, v) = (whole.apply(e), prod.apply(e));
            let scale = u[0].hypot(u[1]);
            prop_assert!((u[0] - v[0]).hypot(u[1] - v[1]) <= 1e-8 * scale);
        }
    }

    #[test]
    fn cat_cocycle_is_unimodular(x in unit(), y in unit(), n in 1usize..=1000) {
        let c = cocycle(&CatMap, Point::torus(x, y), n).unwrap();
        prop_assert!(c.log_abs_det().abs() <= 1e-8);
    }

    #[test]
    fn cat_exponents_do_not_depend_on_x(x in unit(), y in unit(), x2 in unit(), y2 in unit(), n in 1usize..200) {
        let (a, b) = finite_time_exponents(&CatMap, Point::torus(x, y), n).unwrap();
        let (c, d) = finite_time_exponents(&CatMap, Point::torus(x2, y2), n).unwrap();
        prop_assert!((a - c).abs() <= 1e-10 && (b - d).abs() <= 1e-10);
    }

    #[test]
    fn delta_implication(rho in 1e-3..1.0f64, s in 1usize..=12, x in unit(), y in unit(), th in 0.0..std::f64::consts::TAU, frac in 0.0..1.0f64) {
        let fam = TestFunctionFamily::<f64>::fourier(2);
        let s = s.min(fam.count());
        let delta = delta_modulus(&fam, rho, s).unwrap();
        let p = Point::torus(x, y);
        let q = Point::torus(x + frac * delta * th.cos(), y + frac * delta * th.sin());
        prop_assume!(p.distance(&q) < delta);
        for phi in &fam.functions[..s] {
            prop_assert!((phi.eval(&p) - phi.eval(&q)).abs() < rho / 2.0);
        }
    }

    #[test]
    fn decomposition_identity(w in letters(6), periodic in any::<bool>(), l in 1usize..150, k in 0usize..S) {
        let f = fx();
        let times = f.hs.return_times();
        let word = if periodic {
            SymbolicWord::periodic(&w).unwrap()
        } else {
            let mut long = w.clone();
            while long.iter().map(|&c| times[c - 1]).sum::<usize>() < l {
                long.extend_from_slice(&w);
            }
            SymbolicWord::forward(&long).unwrap()
        };
        let dec = decompose(&times, &word, l).unwrap();
        let whole: usize = dec.block_counts.iter().zip(&times).map(|(c, m)| c * m).sum();
        prop_assert_eq!(whole + dec.remainder, l);
        prop_assert!(dec.remainder < *times.iter().max().unwrap());
        // blocks tile 0..L' in order
        let mut at = 0;
        for b in &dec.blocks {
            prop_assert_eq!(b.start, at);
            prop_assert_eq!(b.len, times[b.symbol - 1]);
            at += b.len;
        }
        prop_assert_eq!(at, dec.l_prime);

        let orbit = f.hs.saturate_orbit(&f.fx, &word, l).unwrap();
        let vals: Vec<BigRational> = orbit.points.iter().map(|p| BigRational::from_float(f.fam.functions[k].eval(p)).unwrap()).collect();
        let direct = vals.iter().fold(BigRational::zero(), |a, b| a + b);
        let split = split_sum(&vals, &dec).unwrap();
        prop_assert_eq!(split.total(), direct);
    }

    #[test]
    fn remainder_bound_past_saturation(w in letters(6), extra in 0usize..500) {
        let f = fx();
        let times = f.hs.return_times();
        let t = saturation_time(&times, &f.fam, RHO, S).unwrap();
        let l = t + extra;
        let dec = decompose(&times, &SymbolicWord::periodic(&w).unwrap(), l).unwrap();
        let sup = f.fam.max_sup_norm(S);
        prop_assert!(2.0 * dec.remainder as f64 * sup / l as f64 <= RHO);
    }

    #[test]
    fn measure_is_rotation_invariant(w in letters(7), k in 0usize..7) {
        let f = fx();
        let word = SymbolicWord::periodic(&w).unwrap();
        let a = periodic_measure(&f.fx, &f.hs, &word, &f.fam, S).unwrap();
        let b = periodic_measure(&f.fx, &f.hs, &word.rotate(k % w.len()), &f.fam, S).unwrap();
        prop_assert_eq!(a.period, b.period);
        for i in 0..S {
            prop_assert!((a.integrals[i] - b.integrals[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_rho_chain_gives_three_rho(w in letters(6), extra in 0usize..50, shifts in prop::collection::vec(-1.0..1.0f64, S)) {
        let f = fx();
        let word = SymbolicWord::periodic(&w).unwrap();
        let t = saturation_time(&f.hs.return_times(), &f.fam, RHO, S).unwrap();
        let l = t + extra;
        let two = check_two_rho(&f.fx, &f.hs, &word, l, &f.fam, &f.leb, RHO, S).unwrap();
        prop_assume!(two.pass);
        // any candidate within ρ of the L-average
        let orbit = f.hs.saturate_orbit(&f.fx, &word, l).unwrap();
        let mut cand = periodic_measure(&f.fx, &f.hs, &word, &f.fam, S).unwrap();
        for i in 0..S {
            let avg = orbit.points.iter().map(|p| f.fam.functions[i].eval(p)).sum::<f64>() / l as f64;
            cand.integrals[i] = avg + 0.999 * RHO * shifts[i];
        }
        let three = check_three_rho(&cand, &f.fam, &f.leb, RHO, S).unwrap();
        prop_assert!(three.pass, "{:?} {:?}", two, three);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn refinement_counts_and_nesting(n in 1usize..=7, pick in any::<prop::sample::Index>()) {
        let f = fx();
        let r = refine(&f.fx, &f.hs, n, DEFAULT_CAP).unwrap();
        prop_assert_eq!(r.count(), 1 << n);
        prop_assert_eq!(r.unstable_cylinders.len(), 1 << n);
        let idx = pick.index(r.count());
        let word = r.word(idx);
        prop_assert_eq!(word.len(), n);
        prop_assert_eq!(r.index(&word), idx);
        if n > 1 {
            let parent = refine(&f.fx, &f.hs, n - 1, DEFAULT_CAP).unwrap();
            let s_parent = &parent.stable_cylinders[parent.index(&word[..n - 1])];
            let u_parent = &parent.unstable_cylinders[parent.index(&word[1..])];
            let tol = f.hs.nesting_tolerance();
            for pt in r.stable_cylinders[idx].grid(9) {
                prop_assert!(s_parent.contains(pt, tol));
            }
            for pt in r.unstable_cylinders[idx].grid(9) {
                prop_assert!(u_parent.contains(pt, tol));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn branches_keep_graphs_admissible(branch in 0usize..2, a in -0.5..0.5f64, slope in -0.3..0.3f64, w in 0.01..0.2f64) {
        let f = fx();
        let b = &f.hs.branches[branch];
        let strip = varhorse::pesin::Cylinder::affine(varhorse::pesin::CylinderKind::Unstable, 1.0, a, slope, w).unwrap();
        prop_assume!(strip.is_admissible(0.3));
        let image = b.push_forward_unstable(&f.fx, &f.hs.rectangle, &strip).unwrap();
        prop_assert!(image.is_admissible(0.3));
        prop_assert!(image.lipschitz() <= strip.lipschitz() / 4.0 + 1e-15);
    }

    #[test]
    fn cat_splitting_is_constant(x in unit(), y in unit(), x2 in unit(), y2 in unit()) {
        let a = varhorse::pesin::pesin_certificate(&CatMap, Point::torus(x, y), 20, 0.9).unwrap();
        let b = varhorse::pesin::pesin_certificate(&CatMap, Point::torus(x2, y2), 20, 0.9).unwrap();
        for (u, v) in [(a.splitting.stable, b.splitting.stable), (a.splitting.unstable, b.splitting.unstable)] {
            // directions, so compare up to sign
            let d = (u[0] - v[0]).hypot(u[1] - v[1]).min((u[0] + v[0]).hypot(u[1] + v[1]));
            prop_assert!(d <= 1e-8);
        }
    }
}
