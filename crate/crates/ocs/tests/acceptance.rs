//! Acceptance suite: one check per criterion, each printing a single
//! PASS/FAIL line. Runs as a plain binary so the lines are always shown.

use nalgebra::{DMatrix, Matrix2};
use ocs::anderson_lab::{
    interval_a, limit_transfer_stretched, log_points, moment_bound_check, partial_draws, partial_shell,
    reduce_partial, reduce_stretched, sample_shell_stretched, stretched_pairs, stretched_shell,
    stretched_transfer_sample, well_balanced_check, DisorderSpec, LimitSource, PartialAntitreeSpec, Realization,
    SizeLaw, StretchedAntitreeSpec,
};
use ocs::greens_weyl::{m_function, weyl_circles, GreenData, MMethod, Mode};
use ocs::model_core::{
    assemble_dense, assemble_window, free_jacobi_half, materialize, Geometry, OneChannelOperator, RandomShells,
    ShellData,
};
use ocs::rng::stream;
use ocs::spectral_estimator::{
    ac_criterion, finite_eigenfunction, finite_eigenfunctions, halfline_density, uniform_grid, AcVerdict,
};
use ocs::transfer_engine::{
    g_matrix, propagate_states, solution_vector, special_states, transfer_matrix, transfer_product,
    SpecialSolution, C2,
};
use ocs::{c64, CMat, CVec, C64};
use rand::Rng;
use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn random_model(seed: u64, max_size: usize, n: usize, fixed_a: Option<f64>) -> OneChannelOperator {
    let src = RandomShells { seed, min_size: 1, max_size, fixed_a };
    materialize(&src, Geometry::Half, n, 0).expect("random model")
}

/// Green's-identity oracle on 50 random models.
fn criterion_1() -> Check {
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let mut r = stream(101, "acc1", &[k]);
        let n = r.random_range(2..=12usize);
        let op = random_model(1000 + k, 5, n, None);
        let z = c64(r.random_range(-2.0..2.0), r.random_range(0.1..2.0));
        let c = c64(r.random_range(-1.0..1.0), 0.0);
        let t = assemble_dense(&op, n, c, None).map_err(|e| e.to_string())?;
        let dense = t.resolvent(z).map_err(|e| e.to_string())?;
        let g = GreenData::new(&op, n, c, z).map_err(|e| e.to_string())?;
        for m in 1..=n as i64 {
            for j in 1..=n as i64 {
                let (rm, rj) = (t.block_range(m), t.block_range(j));
                let d = dense.view((rm.start, rj.start), (rm.len(), rj.len())).into_owned();
                let b = g.block(&op, m, j).map_err(|e| e.to_string())?;
                worst = worst.max((&b - &d).norm() / d.norm());
                let (sm, sj) = (op.shell(m).unwrap(), op.shell(j).unwrap());
                for (lm, lj, x, y) in [
                    (Mode::Upsilon, Mode::Upsilon, &sm.upsilon, &sj.upsilon),
                    (Mode::Upsilon, Mode::Phi, &sm.upsilon, &sj.phi),
                    (Mode::Phi, Mode::Upsilon, &sm.phi, &sj.upsilon),
                    (Mode::Phi, Mode::Phi, &sm.phi, &sj.phi),
                ] {
                    let got = g.overlap(&op, lm, m, lj, j).map_err(|e| e.to_string())?;
                    worst = worst.max(rel(got, x.dotc(&(&d * y))));
                }
            }
        }
    }
    ensure(worst <= 1e-8, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("50 models, max relative error {worst:.2e}"))
}

/// det T = γ/β, the conjugate-pair identities, the summation identity and the
/// real-energy phase property.
fn criterion_2() -> Check {
    let (mut e_det, mut e_bar, mut e_wr, mut e_sum, mut e_phase) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut e_wr_raw = 0.0f64;
    let samples = 120u64;
    for k in 0..samples {
        let mut r = stream(202, "acc2", &[k]);
        let n = r.random_range(1..=10i64);
        let op = random_model(2000 + k, 4, 10, None);
        let z = c64(r.random_range(-2.0..2.0), r.random_range(0.1..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 });
        let sh = op.shell(n).unwrap();
        let g = g_matrix(sh, z).map_err(|e| e.to_string())?;
        let t = transfer_matrix(sh, z).map_err(|e| e.to_string())?;
        e_det = e_det.max(rel(t.det(), g.gamma / g.beta));

        let det0n = transfer_product(&op, z, 0, n).map_err(|e| e.to_string())?.det();
        let uz = special_states(&op, z, SpecialSolution::U, n).map_err(|e| e.to_string())?;
        let wz = special_states(&op, z, SpecialSolution::W, n).map_err(|e| e.to_string())?;
        let uzb = special_states(&op, z.conj(), SpecialSolution::U, n).map_err(|e| e.to_string())?;
        let nn = n as usize;
        // u_{z,n+1}/conj(u_{z̄,n+1}) with a_{n+1}u_{n+1} = s_n[0] and a real.
        e_bar = e_bar.max(rel(uz[nn][0] / uzb[nn][0].conj(), det0n));
        // Both products grow like |T|^2 while their difference stays 1, so the
        // attainable accuracy is relative to the size of the terms.
        let (p1, p2) = (uzb[nn][0].conj() * wz[nn][1], wz[nn][0] * uzb[nn][1].conj());
        let wr = p1 - p2;
        e_wr_raw = e_wr_raw.max((wr - 1.0).norm());
        e_wr = e_wr.max((wr - 1.0).norm() / (p1.norm() + p2.norm()).max(1.0));

        let m = r.random_range(1..=n);
        let init = C2::new(c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)), c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let s = propagate_states(&op, z, init, 0, n).map_err(|e| e.to_string())?;
        let mut lhs = 0.0;
        for j in m..=n {
            let psi = solution_vector(op.shell(j).unwrap(), z, &s[(j - 1) as usize], &s[j as usize]).map_err(|e| e.to_string())?;
            lhs += psi.norm_squared();
        }
        lhs *= z.im;
        let rhs = (s[nn][0].conj() * s[nn][1] - s[(m - 1) as usize][0].conj() * s[(m - 1) as usize][1]).im;
        e_sum = e_sum.max((lhs - rhs).abs() / lhs.abs().max(1e-300));

        let mut tries = 0;
        loop {
            let lam = r.random_range(-3.0..3.0);
            if let Ok(t) = transfer_matrix(sh, c64(lam, 0.0)) {
                e_phase = e_phase.max(t.phase_spread());
                break;
            }
            tries += 1;
            if tries > 20 {
                return Err("no admissible real energy found".into());
            }
        }
    }
    let tol = 1e-9;
    ensure(e_det <= tol && e_bar <= tol && e_wr <= tol && e_sum <= tol && e_phase <= 1e-8, || {
        format!("det {e_det:.2e}, ratio {e_bar:.2e}, wronskian {e_wr:.2e}, sum {e_sum:.2e}, phase {e_phase:.2e}")
    })?;
    Ok(format!(
        "{samples} samples: det {e_det:.1e}, ratio {e_bar:.1e}, wronskian {e_wr:.1e} (absolute {e_wr_raw:.1e}), sum {e_sum:.1e}, phase {e_phase:.1e}"
    ))
}

fn semicircle_cdf(x: f64) -> f64 {
    let x = x.clamp(-2.0, 2.0);
    (x * (4.0 - x * x).sqrt() / 2.0 + 2.0 * (x / 2.0).asin()) / (2.0 * PI) + 0.5
}

/// Free Jacobi reduction: m(i) and the density CDF over [-1, 1].
fn criterion_3() -> Check {
    let op = free_jacobi_half(400);
    let want = c64(0.0, (5f64.sqrt() - 1.0) / 2.0);
    let m = m_function(&op, 200, c64(0.0, 0.0), c64(0.0, 1.0), MMethod::Transfer).map_err(|e| e.to_string())?.value;
    let err_m = (m - want).norm();
    let grid = uniform_grid(-1.0, 1.0, 401);
    let est = halfline_density(&op, &grid, (200, 400)).map_err(|e| e.to_string())?;
    let mass = est.mass(-1.0, 1.0);
    let exact = semicircle_cdf(1.0) - semicircle_cdf(-1.0);
    ensure(err_m <= 1e-6, || format!("|m(i) - i(√5-1)/2| = {err_m:.2e}"))?;
    ensure((mass - 0.6090).abs() <= 0.02 * 0.6090, || format!("mass {mass:.5}"))?;
    Ok(format!("|m(i) error| {err_m:.1e}; mass[-1,1] {mass:.5} (exact {exact:.5})"))
}

/// Weyl circles: monotone radii, nesting, conjugate symmetry, limit point.
fn criterion_4() -> Check {
    let z = c64(0.0, 1.0);
    let mut worst_sym = 0.0f64;
    for k in 0..20u64 {
        let op = random_model(4000 + k, 4, 40, None);
        let c = weyl_circles(&op, z, 40).map_err(|e| e.to_string())?;
        let cb = weyl_circles(&op, z.conj(), 40).map_err(|e| e.to_string())?;
        for w in c.windows(2) {
            ensure(w[1].log_radius < w[0].log_radius, || format!("model {k}: radius not decreasing at n={}", w[1].n))?;
            let gap = (w[1].center - w[0].center).norm() + w[1].radius;
            // Centres carry rounding of order eps·|center|, which dominates once radii reach ~1e-13.
            let floor = 64.0 * f64::EPSILON * (1.0 + w[0].center.norm());
            ensure(gap <= w[0].radius * (1.0 + 1e-8) + floor, || format!("model {k}: circle {} not nested", w[1].n))?;
        }
        for (a, b) in c.iter().zip(&cb) {
            worst_sym = worst_sym.max((a.log_radius - b.log_radius).abs());
        }
    }
    ensure(worst_sym <= 1e-9, || format!("r(z) vs r(z̄) log difference {worst_sym:.2e}"))?;
    let mut worst_n = 0;
    for k in 0..20u64 {
        let op = random_model(4100 + k, 4, 200, Some(-1.0));
        let c = weyl_circles(&op, z, 200).map_err(|e| e.to_string())?;
        let hit = c.iter().find(|c| c.radius < 1e-8).map(|c| c.n);
        let n = hit.ok_or_else(|| format!("a = -1 model {k} never reached radius 1e-8"))?;
        worst_n = worst_n.max(n);
    }
    let free = weyl_circles(&free_jacobi_half(200), z, 200).map_err(|e| e.to_string())?;
    ensure(free.iter().any(|c| c.radius < 1e-8), || "free Jacobi radius stays above 1e-8".into())?;
    Ok(format!("20 models nested, symmetry {worst_sym:.1e}; a = -1 radius < 1e-8 by n = {worst_n}"))
}

/// Limit formulas: point-disorder stretched trace and the Â endpoints.
fn criterion_5() -> Check {
    let nu = DisorderSpec::point(0.0);
    let mut worst = 0.0f64;
    for l in uniform_grid(-2.5, 2.5, 1001) {
        if ((l.abs() - 1.0).abs()) < 1e-9 {
            continue;
        }
        let t = limit_transfer_stretched(&nu, l).map_err(|e| e.to_string())?;
        worst = worst.max((t.trace - (l * l - 2.0)).abs());
    }
    ensure(worst <= 1e-12, || format!("trace error {worst:.2e}"))?;
    let spec = PartialAntitreeSpec::hat(SizeLaw::Const(1), nu);
    let r = interval_a(&spec, &uniform_grid(-2.5, 2.5, 501));
    let ends = [-2.0, -SQRT_2, -1.0, 0.0, 1.0, SQRT_2, 2.0];
    ensure(r.intervals.len() == 6, || format!("found intervals {:?}", r.intervals))?;
    let mut e_end = 0.0f64;
    for (k, iv) in r.intervals.iter().enumerate() {
        e_end = e_end.max((iv.0 - ends[k]).abs()).max((iv.1 - ends[k + 1]).abs());
    }
    ensure(e_end <= 1e-6, || format!("endpoint error {e_end:.2e}"))?;
    Ok(format!("trace error {worst:.1e}; Â endpoint error {e_end:.1e}"))
}

/// Shell-sampler oracle against the generic g-matrix on explicit shells.
fn criterion_6() -> Check {
    let mut worst = 0.0f64;
    let cmp = |a: &ocs::transfer_engine::GMatrix, b: &ocs::transfer_engine::GMatrix| {
        [(a.alpha, b.alpha), (a.beta, b.beta), (a.gamma, b.gamma), (a.delta, b.delta)]
            .iter()
            .map(|&(x, y)| (x - y).norm() / y.norm().max(1.0))
            .fold(0.0, f64::max)
    };
    for k in 0..200u64 {
        let mut r = stream(606, "acc6-stretched", &[k]);
        let s = r.random_range(1..=8usize);
        let disorder = if k % 2 == 0 {
            DisorderSpec::Uniform { lo: -0.3, hi: 0.3 }
        } else {
            DisorderSpec::two_point(0.2)
        };
        let spec = StretchedAntitreeSpec { sizes: SizeLaw::Const(s), disorder };
        let pairs = stretched_pairs(&spec, 1, &mut r);
        let z = c64(r.random_range(-2.0..2.0), if k % 3 == 0 { 0.0 } else { r.random_range(0.05..1.0) });
        let (Ok(a), Ok(b)) = (
            reduce_stretched(&pairs, z, 1),
            stretched_shell(&pairs, 1).and_then(|sh| g_matrix(&sh, z)),
        ) else {
            continue;
        };
        worst = worst.max(cmp(&a, &b));
    }
    let patterns = {
        let mut r = stream(607, "acc6-pattern", &[]);
        let q = DMatrix::from_fn(4, 4, |_, _| r.random_range(-1.0..1.0));
        let q = q.qr().q();
        let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_fn(4, |_, _| r.random_range(-1.5..1.5))) * q.transpose();
        vec![
            (PartialAntitreeSpec::hat(SizeLaw::Const(1), DisorderSpec::Uniform { lo: -0.2, hi: 0.2 }), 4usize),
            (
                PartialAntitreeSpec::from_pattern([1, 2, 1], &(&m + m.transpose()).scale(0.5), SizeLaw::Const(1), DisorderSpec::two_point(0.3))
                    .map_err(|e| e.to_string())?,
                6usize,
            ),
        ]
    };
    for k in 0..200u64 {
        let (base, max_m) = &patterns[(k % 2) as usize];
        let mut r = stream(608, "acc6-partial", &[k]);
        let m = r.random_range(1..=*max_m);
        let spec = PartialAntitreeSpec { sizes: SizeLaw::Const(m), ..base.clone() };
        let draws = partial_draws(&spec, 1, &mut r);
        let z = c64(r.random_range(-2.5..2.5), if k % 3 == 0 { 0.0 } else { r.random_range(0.05..1.0) });
        let (Ok(a), Ok(b)) = (
            reduce_partial(&spec, &draws, z, 1),
            partial_shell(&spec, &draws, 1).and_then(|sh| g_matrix(&sh, z)),
        ) else {
            continue;
        };
        worst = worst.max(cmp(&a, &b));
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("200 + 200 draws, max deviation {worst:.1e}"))
}

/// Convergence rates of β_{λ,n} for the two-point stretched family.
fn criterion_7() -> Check {
    let disorder = DisorderSpec::two_point(0.2);
    let sizes = [100, 1000, 10000];
    let mut lines = Vec::new();
    for &lambda in &[-0.5, 0.5, 1.6] {
        let lim = limit_transfer_stretched(&disorder, lambda).map_err(|e| e.to_string())?;
        ensure(lim.elliptic, || format!("λ = {lambda} not elliptic (trace {})", lim.trace))?;
        let LimitSource::Stretched { beta, .. } = lim.source else { unreachable!() };
        let spec = StretchedAntitreeSpec { sizes: SizeLaw::Const(1), disorder: disorder.clone() };
        let sampler = |s: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let spec = StretchedAntitreeSpec { sizes: SizeLaw::Const(s), ..spec.clone() };
            sample_shell_stretched(&spec, 1, lambda, rng).map(|(g, _)| g.beta.re).unwrap_or(f64::NAN)
        };
        let r = well_balanced_check(sampler, beta, &sizes, 2, 10_000, 707);
        for k in [2usize, 4] {
            let s = r.moment_slopes[k - 1].ok_or_else(|| format!("λ = {lambda}: no slope for k = {k}"))?;
            ensure((s + k as f64 / 2.0).abs() <= 0.15, || format!("λ = {lambda}, k = {k}: slope {s:.3}"))?;
            lines.push(format!("λ={lambda} k={k} slope {s:.3}"));
        }
    }
    Ok(lines.join("; "))
}

/// Fourth-moment bound for s_n = n³ and the integral criterion on a
/// realization.
fn criterion_8() -> Check {
    let spec = StretchedAntitreeSpec { sizes: "poly:d=3".parse().map_err(|e: String| e)?, disorder: DisorderSpec::two_point(0.2) };
    let mut out = Vec::new();
    for &lambda in &[0.5, 1.6] {
        let lim = limit_transfer_stretched(&spec.disorder, lambda).map_err(|e| e.to_string())?;
        let t = Matrix2::new(lim.matrix[0][0], lim.matrix[0][1], lim.matrix[1][0], lim.matrix[1][1]);
        let r = moment_bound_check(
            &t,
            |n, rng| stretched_transfer_sample(&spec, n, lambda, rng),
            "stretched",
            300,
            &log_points(300, 12),
            10_000,
            808,
        )
        .map_err(|e| e.to_string())?;
        ensure(r.pass, || format!("λ = {lambda}: max estimate {:.3} vs bound {:.3}", r.max_estimate, r.bound))?;
        out.push(format!("λ={lambda}: max E‖T‖⁴ {:.3} < bound {:.1}", r.max_estimate, r.bound));
    }
    let real = Realization::stretched(spec, 809, 300);
    let ns: Vec<i64> = log_points(300, 20).into_iter().map(|n| n as i64).collect();
    let ac = ac_criterion(&real, 4.0, (0.3, 0.7), &ns, 64).map_err(|e| e.to_string())?;
    ensure(ac.verdict == AcVerdict::BoundedLike && ac.masked.is_empty(), || {
        format!("integral criterion {:?}, ln min {:.3} vs {:.3}", ac.verdict, ac.log_liminf_proxy, ac.log_reference_min)
    })?;
    out.push(format!("I_n bounded (ln min {:.3}, reference {:.3})", ac.log_liminf_proxy, ac.log_reference_min));
    Ok(out.join("; "))
}

fn matched_shell(index: i64) -> ShellData {
    let h = 0.5f64.sqrt();
    let r5 = 5f64.sqrt();
    let v = CMat::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(-2.0, 0.0)]);
    let phi = CVec::from_vec(vec![c64(h, 0.0), c64(h, 0.0)]);
    let ups = CVec::from_vec(vec![c64(1.0 / r5, 0.0), c64(2.0 / r5, 0.0)]);
    ShellData::new(index, v, -1.0, phi, ups).expect("matched shell")
}

/// Compactly supported eigenfunction on a three-shell support.
fn criterion_9() -> Check {
    let op = OneChannelOperator::half(vec![
        ShellData::scalar(1, 0.3, -1.0).unwrap(),
        matched_shell(2),
        ShellData::scalar(3, 0.05, -1.0).unwrap(),
        matched_shell(4),
        ShellData::scalar(5, 0.7, -1.0).unwrap(),
    ])
    .map_err(|e| e.to_string())?;
    let all = finite_eigenfunctions(&op, 1, 5).map_err(|e| e.to_string())?;
    let at0: Vec<_> = all.iter().filter(|e| e.lambda.abs() < 1e-9).collect();
    ensure(at0.len() == 1, || format!("{} eigenfunctions at 0", at0.len()))?;
    let ef = finite_eigenfunction(&op, 2, 3, 0.0).map_err(|e| e.to_string())?;
    ensure(ef.residual <= 1e-9, || format!("residual {:.2e}", ef.residual))?;
    let trunc = assemble_window(&op, 1, 5, c64(0.0, 0.0)).map_err(|e| e.to_string())?;
    let (vals, _) = trunc.eigen().map_err(|e| e.to_string())?;
    let mult = vals.iter().filter(|v| v.abs() < 1e-9).count();
    ensure(mult == at0.len(), || format!("dense multiplicity {mult} vs {}", at0.len()))?;
    Ok(format!(
        "λ = 0 on shells {}..{} (case {}), residual {:.1e}, dense multiplicity {mult}",
        ef.first,
        ef.last,
        ef.case_tag(),
        ef.residual
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "Green's-identity oracle", criterion_1),
        (2, "identity suite", criterion_2),
        (3, "Jacobi reduction", criterion_3),
        (4, "Weyl diagnostics", criterion_4),
        (5, "antitree limit formulas", criterion_5),
        (6, "shell-sampler oracle", criterion_6),
        (7, "convergence rates", criterion_7),
        (8, "moment bound", criterion_8),
        (9, "finite-support eigenfunctions", criterion_9),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
