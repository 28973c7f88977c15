use ocs::anderson_lab::*;
use ocs::greens_weyl::*;
use ocs::model_core::*;
use ocs::rng::stream;
use ocs::transfer_engine::*;
use ocs::{c64, CMat, CVec, C64};
use proptest::prelude::*;

fn random_op(seed: u64, n: usize) -> OneChannelOperator {
    let src = RandomShells { seed, min_size: 1, max_size: 4, fixed_a: None };
    materialize(&src, Geometry::Half, n, 0).unwrap()
}

fn unit(v: Vec<(f64, f64)>) -> CVec {
    let v = CVec::from_iterator(v.len(), v.into_iter().map(|(a, b)| c64(a, b)));
    let n = v.norm();
    v / c64(n, 0.0)
}

fn cvec(len: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len)
        .prop_filter("nonzero", |v| v.iter().any(|&(a, b)| a.abs() + b.abs() > 0.1))
}

fn upper_z() -> impl Strategy<Value = C64> {
    (-2.5..2.5f64, 0.05..2.0f64).prop_map(|(x, y)| c64(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_one_factorization_reproduces_block(
        a in -3.0..-0.1f64,
        (u, v) in (1usize..5, 1usize..5).prop_flat_map(|(p, q)| (cvec(p), cvec(q))),
    ) {
        let (ups, phi) = (unit(u), unit(v));
        let d: CMat = &ups * phi.adjoint() * c64(-a, 0.0);
        let (a2, ups2, phi2) = factor_rank_one(&d, 1e-10).unwrap();
        prop_assert!(a2 < 0.0);
        let back: CMat = &ups2 * phi2.adjoint() * c64(-a2, 0.0);
        prop_assert!((back - &d).norm() <= 1e-10 * d.norm());
        let vmax = phi2.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        let k = phi2.iter().position(|x| x.norm() >= vmax * (1.0 - 1e-12)).unwrap();
        prop_assert!(phi2[k].im.abs() <= 1e-12 && phi2[k].re > 0.0);
    }

    #[test]
    fn transfer_determinant_is_gamma_over_beta(seed in 0u64..10_000, n in 1i64..6, z in upper_z(), flip in any::<bool>()) {
        let op = random_op(seed, 6);
        let z = if flip { z.conj() } else { z };
        let sh = op.shell(n).unwrap();
        if let (Ok(g), Ok(t)) = (g_matrix(sh, z), transfer_matrix(sh, z)) {
            let want = g.gamma / g.beta;
            prop_assert!((t.det() - want).norm() <= 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn m_function_is_herglotz(seed in 0u64..10_000, n in 1usize..15, z in upper_z(), c in -2.0..2.0f64) {
        let op = random_op(seed, n);
        let m = m_function(&op, n, c64(c, 0.0), z, MMethod::Transfer).unwrap().value;
        prop_assert!(m.im > 0.0);
    }

    #[test]
    fn resolvent_blocks_are_hermitian_symmetric(seed in 0u64..10_000, n in 2usize..8, z in upper_z(), c in -1.0..1.0f64, m in 1i64..8, j in 1i64..8) {
        let (m, j) = (m.min(n as i64), j.min(n as i64));
        let op = random_op(seed, n);
        let c = c64(c, 0.0);
        let a = resolvent_block(&op, n, c, z, m, j).unwrap();
        let b = resolvent_block(&op, n, c, z.conj(), j, m).unwrap().adjoint();
        prop_assert!((&a - &b).norm() <= 1e-9 * a.norm().max(1.0));
    }

    #[test]
    fn green_blocks_match_dense_on_long_truncations(seed in 0u64..10_000, n in 10usize..30, z in upper_z(), c in -1.0..1.0f64) {
        let op = random_op(seed, n);
        let c = c64(c, 0.0);
        let t = assemble_dense(&op, n, c, None).unwrap();
        let dense = t.resolvent(z).unwrap();
        let g = GreenData::new(&op, n, c, z).unwrap();
        for (m, j) in [(n as i64, n as i64), (n as i64 - 1, n as i64), (1, n as i64), (n as i64 / 2, n as i64 / 2)] {
            let (rm, rj) = (t.block_range(m), t.block_range(j));
            let want = dense.view((rm.start, rj.start), (rm.len(), rj.len())).into_owned();
            let got = g.block(&op, m, j).unwrap();
            prop_assert!((&got - &want).norm() <= 1e-8 * want.norm().max(1e-12));
        }
    }

    #[test]
    fn weyl_radii_decrease(seed in 0u64..10_000, z in upper_z()) {
        let op = random_op(seed, 20);
        let c = weyl_circles(&op, z, 20).unwrap();
        for w in c.windows(2) {
            prop_assert!(w[1].log_radius < w[0].log_radius);
        }
    }

    #[test]
    fn point_disorder_sampler_matches_limit(v in -0.5..0.5f64, lambda in -0.45..0.45f64, n in 1usize..6, s in 1usize..30) {
        let spec = StretchedAntitreeSpec { sizes: SizeLaw::Const(s), disorder: DisorderSpec::point(v) };
        let limit = limit_transfer_stretched(&spec.disorder, lambda).unwrap();
        let mut rng = stream(7, "prop", &[n as u64]);
        let (_, t) = sample_shell_stretched(&spec, n, lambda, &mut rng).unwrap();
        let got = t.value();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((got[(i, j)] - c64(limit.matrix[i][j], 0.0)).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn stretched_limit_has_unit_determinant(sigma in 0.0..0.4f64, lambda in -3.0..3.0f64) {
        let nu = DisorderSpec::two_point(sigma);
        prop_assume!(in_stretched_domain(&nu, lambda));
        prop_assume!(((lambda.abs() - 1.0).abs() - sigma).abs() > 1e-3);
        let t = limit_transfer_stretched(&nu, lambda).unwrap();
        prop_assert!((t.det - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn size_law_text_round_trips(c in 1u32..5, d in 0u32..4, k in 1usize..50, list in prop::collection::vec(1usize..20, 1..6)) {
        for law in [SizeLaw::Poly { c: c as f64, d: d as f64 }, SizeLaw::Const(k), SizeLaw::List(list.clone())] {
            let parsed: SizeLaw = law.to_string().parse().unwrap();
            prop_assert_eq!(parsed, law);
        }
    }
}
