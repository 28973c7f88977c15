//! g-matrices, 2×2 transfer matrices and their products, exceptional sets and
//! solution vectors.
//!
//! With `x_n = Υ_n^*Ψ_n` and `x̃_n = Φ_n^*Ψ_n`, a formal solution of `HΨ = zΨ`
//! is encoded by the states `(a_{n+1}x_{n+1}, x̃_n)`, which are propagated by
//! `T_{z,n}` from `n-1` to `n`.

use crate::error::SingularKind;
use crate::model_core::{Cluster, OneChannelOperator, ShellData};
use crate::{c64, CVec, OcsError, Result, C64};
use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::Serialize;

/// Minimal distance between `z` and a visible eigenvalue for direct evaluation.
pub const GUARD: f64 = 1e-9;
/// Distance below which an energy counts as sitting on an eigenvalue.
pub const ON_SPECTRUM_TOL: f64 = 1e-8;
const EXT_EPS: [f64; 3] = [1e-4, 5e-5, 2.5e-5];
const EXT_TOL: f64 = 1e-6;

pub type C2 = Vector2<C64>;
pub type M2 = Matrix2<C64>;

/// Entries of `g_{z,n} = (Υ, Φ)^*(V_n - z)^{-1}(Υ, Φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GMatrix {
    pub alpha: C64,
    pub beta: C64,
    pub gamma: C64,
    pub delta: C64,
    pub z: C64,
    pub n: i64,
}

impl GMatrix {
    /// Transfer matrix built from these entries with coupling `a`.
    pub fn transfer(&self, a: f64) -> M2 {
        let a = c64(a, 0.0);
        let b = self.beta;
        M2::new(
            c64(1.0, 0.0) / (a * b),
            -a * self.alpha / b,
            self.delta / (a * b),
            a * (self.gamma - self.delta * self.alpha / b),
        )
    }
}

fn visible(c: &Cluster) -> bool {
    c.sees_upsilon() || c.sees_phi()
}

/// `Σ_c f(c)/(λ_c - z)` over the clusters accepted by `keep`; `None` when one of
/// them lies within `guard` of `z`.
fn cluster_sum(
    shell: &ShellData,
    z: C64,
    guard: f64,
    keep: impl Fn(&Cluster) -> bool,
    f: impl Fn(&Cluster) -> C64,
) -> std::result::Result<C64, f64> {
    let mut acc = c64(0.0, 0.0);
    for c in shell.spectrum().clusters.iter().filter(|c| keep(c)) {
        let d = c64(c.value, 0.0) - z;
        if d.norm() < guard {
            return Err(c.value);
        }
        acc += f(c) / d;
    }
    Ok(acc)
}

/// g-matrix via the spectral decomposition of `V_n`. Eigenvalues whose
/// eigenspace is orthogonal to both modes do not contribute and do not trigger
/// the guard.
pub fn g_matrix(shell: &ShellData, z: C64) -> Result<GMatrix> {
    g_matrix_guarded(shell, z, GUARD)
}

fn g_matrix_guarded(shell: &ShellData, z: C64, guard: f64) -> Result<GMatrix> {
    let too_close = |eigenvalue| OcsError::ZTooCloseToSpectrum { z, eigenvalue, shell: shell.index };
    let alpha = cluster_sum(shell, z, guard, visible, |c| c64(c.ups_norm_sq, 0.0)).map_err(too_close)?;
    let beta = cluster_sum(shell, z, guard, visible, |c| c.cross).map_err(too_close)?;
    let gamma = cluster_sum(shell, z, guard, visible, |c| c.cross.conj()).map_err(too_close)?;
    let delta = cluster_sum(shell, z, guard, visible, |c| c64(c.phi_norm_sq, 0.0)).map_err(too_close)?;
    Ok(GMatrix { alpha, beta, gamma, delta, z, n: shell.index })
}

/// `α` restricted to `𝕎_n` and `δ` restricted to `𝕎̃_n` at real or complex
/// `z`; `None` marks an infinite value (a visible eigenvalue at `z`).
pub fn restricted_alpha_delta(shell: &ShellData, z: C64) -> (Option<C64>, Option<C64>) {
    let alpha = cluster_sum(shell, z, ON_SPECTRUM_TOL, |c| c.sees_upsilon(), |c| c64(c.ups_norm_sq, 0.0)).ok();
    let delta = cluster_sum(shell, z, ON_SPECTRUM_TOL, |c| c.sees_phi(), |c| c64(c.phi_norm_sq, 0.0)).ok();
    (alpha, delta)
}

/// A 2×2 matrix stored as `e^{log_scale}·m` with `m` of unit scale.
///
/// The determinant of `m` is carried separately and multiplied through
/// products, since recomputing it from the entries of a long product loses
/// all precision to cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub m: M2,
    pub log_scale: f64,
    pub z: C64,
    /// `(l, m)` for the product `T_{z,l,m}`; a single shell `n` is `(n-1, n)`.
    pub range: (i64, i64),
    det_m: C64,
}

fn max_abs(m: &M2) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.norm()))
}

/// Spectral norm of a 2×2 complex matrix.
pub fn norm2(m: &M2) -> f64 {
    let f = m.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let d = m.determinant().norm_sqr();
    let disc = (f * f - 4.0 * d).max(0.0).sqrt();
    ((f + disc) / 2.0).sqrt()
}

impl TransferMatrix {
    pub fn identity(z: C64, n: i64) -> Self {
        TransferMatrix { m: M2::identity(), log_scale: 0.0, z, range: (n, n), det_m: c64(1.0, 0.0) }
    }

    pub fn from_matrix(m: M2, z: C64, range: (i64, i64)) -> Self {
        let mut t = TransferMatrix { m, log_scale: 0.0, z, range, det_m: m.determinant() };
        t.renormalize();
        t
    }

    fn renormalize(&mut self) {
        let s = max_abs(&self.m);
        if s > 0.0 && s.is_finite() {
            self.m /= c64(s, 0.0);
            self.det_m /= c64(s * s, 0.0);
            self.log_scale += s.ln();
        }
    }

    /// The true matrix `e^{log_scale}·m` (may overflow for long products).
    pub fn value(&self) -> M2 {
        self.m * c64(self.log_scale.exp(), 0.0)
    }

    pub fn det(&self) -> C64 {
        self.det_m * c64((2.0 * self.log_scale).exp(), 0.0)
    }

    /// `ln |det T|`.
    pub fn log_abs_det(&self) -> f64 {
        self.det_m.norm().ln() + 2.0 * self.log_scale
    }

    pub fn trace(&self) -> C64 {
        self.m.trace() * c64(self.log_scale.exp(), 0.0)
    }

    /// `ln ‖T‖` in the spectral norm.
    pub fn log_norm(&self) -> f64 {
        norm2(&self.m).ln() + self.log_scale
    }

    /// `ln ‖T v‖` for a 2-vector `v`.
    pub fn log_norm_apply(&self, v: &C2) -> f64 {
        (self.m * v).norm().ln() + self.log_scale
    }

    /// `self · rhs`, i.e. apply `rhs` first.
    pub fn compose(&self, rhs: &TransferMatrix) -> TransferMatrix {
        let mut t = TransferMatrix {
            m: self.m * rhs.m,
            log_scale: self.log_scale + rhs.log_scale,
            z: self.z,
            range: (rhs.range.0, self.range.1),
            det_m: self.det_m * rhs.det_m,
        };
        t.renormalize();
        t
    }

    /// Inverse; `GammaZero` when the determinant vanishes.
    pub fn inverse(&self) -> Result<TransferMatrix> {
        let d = self.det_m;
        if d.norm() <= 1e-14 * max_abs(&self.m).powi(2) {
            return Err(OcsError::ChannelSingular { shell: self.range.1, kind: SingularKind::GammaZero, z: self.z });
        }
        let adj = M2::new(self.m[(1, 1)], -self.m[(0, 1)], -self.m[(1, 0)], self.m[(0, 0)]);
        let mut t = TransferMatrix {
            m: adj / d,
            log_scale: -self.log_scale,
            z: self.z,
            range: (self.range.1, self.range.0),
            det_m: c64(1.0, 0.0) / d,
        };
        t.renormalize();
        Ok(t)
    }

    /// Entries divided by their common phase (that of the largest entry).
    pub fn phase_normalized(&self) -> M2 {
        let k = self.m.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
        let p = self.m[k] / self.m[k].norm();
        self.m / p
    }

    /// Largest pairwise phase deviation between nonzero entries, modulo π.
    pub fn phase_spread(&self) -> f64 {
        let scale = max_abs(&self.m);
        let ph: Vec<f64> = self
            .m
            .iter()
            .filter(|x| x.norm() > 1e-12 * scale)
            .map(|x| x.arg())
            .collect();
        let mut worst = 0.0_f64;
        for i in 0..ph.len() {
            for j in 0..i {
                let d = (ph[i] - ph[j]).rem_euclid(std::f64::consts::PI);
                worst = worst.max(d.min(std::f64::consts::PI - d));
            }
        }
        worst
    }
}

/// A one-step cocycle `n ↦ T_{z,n}` together with the couplings `a_n`.
pub trait Cocycle: Sync {
    fn transfer(&self, n: i64, z: C64) -> Result<TransferMatrix>;
    fn coupling(&self, n: i64) -> Result<f64>;
}

impl Cocycle for OneChannelOperator {
    fn transfer(&self, n: i64, z: C64) -> Result<TransferMatrix> {
        transfer_matrix(self.shell(n)?, z)
    }

    fn coupling(&self, n: i64) -> Result<f64> {
        Ok(self.shell(n)?.a)
    }
}

fn nearest_visible(shell: &ShellData, x: C64) -> Option<(&Cluster, f64)> {
    shell
        .spectrum()
        .clusters
        .iter()
        .filter(|c| visible(c))
        .map(|c| (c, (c64(c.value, 0.0) - x).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// `T_{z,n}`. Inside the guard of an eigenvalue whose eigenspace meets `𝕎∩𝕎̃`
/// the holomorphic extension is returned; quotient-spectrum points and zeros
/// of `β` are reported as [`OcsError::ChannelSingular`].
pub fn transfer_matrix(shell: &ShellData, z: C64) -> Result<TransferMatrix> {
    if let Some((c, d)) = nearest_visible(shell, z) {
        if d < GUARD {
            if c.modes_parallel() && z.im.abs() < GUARD {
                return holomorphic_extension(shell, c.value);
            }
            let kind = if c.in_quotient_spectrum() { SingularKind::QuotientSpectrum } else { SingularKind::Pole };
            return Err(OcsError::ChannelSingular { shell: shell.index, kind, z });
        }
    }
    raw_transfer(shell, z)
}

fn raw_transfer(shell: &ShellData, z: C64) -> Result<TransferMatrix> {
    let g = g_matrix(shell, z)?;
    let scale = g.alpha.norm() + g.delta.norm() + g.gamma.norm() + g.beta.norm();
    if g.beta.norm() <= 1e-13 * scale || g.beta == c64(0.0, 0.0) {
        return Err(OcsError::ChannelSingular { shell: shell.index, kind: SingularKind::BetaZero, z });
    }
    Ok(TransferMatrix::from_matrix(g.transfer(shell.a), z, (shell.index - 1, shell.index)))
}

/// `T_{z,n}` for real `λ` at an eigenvalue whose eigenspace meets `𝕎∩𝕎̃`,
/// as the Richardson-extrapolated limit of `T_{λ+iε,n}`.
pub fn holomorphic_extension(shell: &ShellData, lambda: f64) -> Result<TransferMatrix> {
    match shell.spectrum().nearest_cluster(lambda) {
        Some((c, d)) if d < ON_SPECTRUM_TOL && visible(c) => {}
        _ => return Err(OcsError::NotSingularHere { shell: shell.index, lambda }),
    }
    let eval = |eps: f64| -> Result<M2> {
        let g = g_matrix_guarded(shell, c64(lambda, eps), 0.0)?;
        Ok(g.transfer(shell.a))
    };
    let t: Vec<M2> = EXT_EPS.iter().map(|&e| eval(e)).collect::<Result<_>>()?;
    let r1a = t[1] * c64(2.0, 0.0) - t[0];
    let r1b = t[2] * c64(2.0, 0.0) - t[1];
    let spread = max_abs(&(r1a - r1b));
    let scale = max_abs(&r1b).max(1.0);
    let diverged = |spread| OcsError::ExtensionDiverged { shell: shell.index, lambda, spread };
    let finite = t.iter().all(|m| m.iter().all(|x| x.is_finite()));
    if !finite || !(spread <= EXT_TOL * scale) {
        return Err(diverged(spread));
    }
    let mut r2 = (r1b * c64(4.0, 0.0) - r1a) / c64(3.0, 0.0);
    if r2[(0, 0)].norm() > EXT_TOL * scale {
        return Err(diverged(r2[(0, 0)].norm()));
    }
    r2[(0, 0)] = c64(0.0, 0.0);
    Ok(TransferMatrix::from_matrix(r2, c64(lambda, 0.0), (shell.index - 1, shell.index)))
}

/// `T_{z,l,m}`: for `m ≥ l` the product `T_{z,m}⋯T_{z,l+1}`, for `m < l` the
/// inverse of `T_{z,m,l}`.
pub fn transfer_product<C: Cocycle + ?Sized>(cocycle: &C, z: C64, l: i64, m: i64) -> Result<TransferMatrix> {
    let mut acc = TransferMatrix::identity(z, l);
    if m >= l {
        for n in l + 1..=m {
            acc = cocycle.transfer(n, z)?.compose(&acc);
        }
    } else {
        for n in (m + 1..=l).rev() {
            acc = cocycle.transfer(n, z)?.inverse()?.compose(&acc);
        }
    }
    acc.range = (l, m);
    Ok(acc)
}

/// Transfer products `T_{z,l,n}` for every `n` in `l..=m` (or `l..=m` descending),
/// accumulated in one pass.
pub fn transfer_products<C: Cocycle + ?Sized>(cocycle: &C, z: C64, l: i64, m: i64) -> Result<Vec<TransferMatrix>> {
    let mut out = Vec::with_capacity((m - l).unsigned_abs() as usize + 1);
    let mut acc = TransferMatrix::identity(z, l);
    out.push(acc);
    if m >= l {
        for n in l + 1..=m {
            acc = cocycle.transfer(n, z)?.compose(&acc);
            acc.range = (l, n);
            out.push(acc);
        }
    } else {
        for n in (m + 1..=l).rev() {
            acc = cocycle.transfer(n, z)?.inverse()?.compose(&acc);
            acc.range = (l, n - 1);
            out.push(acc);
        }
    }
    Ok(out)
}

/// State `(a_{n+1}x_{n+1}, x̃_n)` at position `n`, stored as `e^{log_scale}·vec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferState {
    pub vec: C2,
    pub n: i64,
    pub log_scale: f64,
}

impl TransferState {
    pub fn new(vec: C2, n: i64) -> Self {
        TransferState { vec, n, log_scale: 0.0 }
    }

    pub fn value(&self) -> C2 {
        self.vec * c64(self.log_scale.exp(), 0.0)
    }

    /// Applies `T_{z,n+1}`.
    pub fn step(&self, t: &TransferMatrix) -> TransferState {
        let v = t.m * self.vec;
        let s = v.iter().fold(0.0_f64, |a, x| a.max(x.norm()));
        let (vec, ls) = if s > 0.0 && s.is_finite() { (v / c64(s, 0.0), s.ln()) } else { (v, 0.0) };
        TransferState { vec, n: t.range.1, log_scale: self.log_scale + t.log_scale + ls }
    }
}

/// Which of the two special solutions to start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialSolution {
    /// `u_{z,1} = 1`, `ũ_{z,0} = 0`.
    U,
    /// `w_{z,1} = 0`, `w̃_{z,0} = 1/a_1`.
    W,
}

/// Initial state at `n = 0` of a special solution.
pub fn special_initial(op: &OneChannelOperator, kind: SpecialSolution) -> Result<C2> {
    let a1 = op.shell(1)?.a;
    Ok(match kind {
        SpecialSolution::U => C2::new(c64(a1, 0.0), c64(0.0, 0.0)),
        SpecialSolution::W => C2::new(c64(0.0, 0.0), c64(1.0 / a1, 0.0)),
    })
}

/// Unscaled states at `n = from, …, to` starting from `init` at `from`
/// (forward for `to ≥ from`, backward otherwise). Suitable for moderate ranges
/// where the solution stays within double range.
pub fn propagate_states<C: Cocycle + ?Sized>(cocycle: &C, z: C64, init: C2, from: i64, to: i64) -> Result<Vec<C2>> {
    let mut out = Vec::with_capacity((to - from).unsigned_abs() as usize + 1);
    let mut s = init;
    out.push(s);
    if to >= from {
        for n in from + 1..=to {
            s = cocycle.transfer(n, z)?.value() * s;
            out.push(s);
        }
    } else {
        for n in (to + 1..=from).rev() {
            s = cocycle.transfer(n, z)?.inverse()?.value() * s;
            out.push(s);
        }
    }
    Ok(out)
}

/// States of a special solution at `n = 0..=n_max`.
pub fn special_states(op: &OneChannelOperator, z: C64, kind: SpecialSolution, n_max: i64) -> Result<Vec<C2>> {
    propagate_states(op, z, special_initial(op, kind)?, 0, n_max)
}

/// Scalars `x_n = Υ_n^*Ψ_n` and `x̃_n = Φ_n^*Ψ_n` read off a state sequence
/// starting at `n = 0`: `x_n = s_{n-1}[0]/a_n`, `x̃_n = s_n[1]`.
pub fn x_scalars(op: &OneChannelOperator, states: &[C2], n: i64) -> Result<(C64, C64)> {
    let a = op.shell(n)?.a;
    Ok((states[(n - 1) as usize][0] / a, states[n as usize][1]))
}

/// Block `Ψ^x_{z,n} = (V_n - z)^{-1}(s_n[0]Φ_n + a_n s_{n-1}[1]Υ_n)` from the
/// states at `n-1` and `n`.
pub fn solution_vector(shell: &ShellData, z: C64, prev: &C2, cur: &C2) -> Result<CVec> {
    let sp = shell.spectrum();
    for c in sp.clusters.iter().filter(|c| visible(c)) {
        if (c64(c.value, 0.0) - z).norm() < GUARD {
            return Err(OcsError::ZTooCloseToSpectrum { z, eigenvalue: c.value, shell: shell.index });
        }
    }
    let coeffs: Vec<C64> = (0..sp.evals.len())
        .map(|j| cur[0] * sp.phi[j] + c64(shell.a, 0.0) * prev[1] * sp.ups[j])
        .collect();
    let invisible = |j: usize| {
        sp.clusters.iter().any(|c| !visible(c) && c.members.contains(&j))
    };
    let coeffs: Vec<C64> = coeffs
        .iter()
        .enumerate()
        .map(|(j, &c)| if invisible(j) { c64(0.0, 0.0) } else { c })
        .collect();
    Ok(sp.resolve_coeffs(z, &coeffs, 0.0))
}

/// Blocks `Ψ^x_{z,n}` for `n = 1..=n_max` from states at `n = 0..=n_max`.
pub fn solution_blocks(op: &OneChannelOperator, z: C64, states: &[C2], n_max: i64) -> Result<Vec<CVec>> {
    (1..=n_max)
        .map(|n| solution_vector(op.shell(n)?, z, &states[(n - 1) as usize], &states[n as usize]))
        .collect()
}

/// One exceptional energy of a shell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularPoint {
    pub z: C64,
    pub kind: SingularKind,
    /// Root-finding flagged as ill-conditioned.
    pub ill_conditioned: bool,
}

/// Exceptional energies `A_n` of one shell.
#[derive(Debug, Clone, Serialize)]
pub struct SingularSet {
    pub n: i64,
    pub points: Vec<SingularPoint>,
    /// Eigenvalues where `T` exists only by holomorphic extension.
    pub extension_points: Vec<f64>,
    pub guard: f64,
}

impl SingularSet {
    /// Real points of `A_n` (within `tol` of the axis).
    pub fn real_points(&self, tol: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self.points.iter().filter(|p| p.z.im.abs() <= tol).map(|p| p.z.re).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= tol);
        v
    }
}

/// Rectangle `[re_lo, re_hi] × [im_lo, im_hi]` restricting reported points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl SearchBox {
    fn contains(&self, z: C64) -> bool {
        z.re >= self.re.0 && z.re <= self.re.1 && z.im >= self.im.0 && z.im <= self.im.1
    }
}

/// Zeros of `β_{z,n}` (roots of `Σ_j w_j ∏_{k≠j}(λ_k - z)` via the companion
/// matrix, then Newton-polished), zeros of `γ` (conjugates) and the quotient
/// spectrum `spec(V_n|𝕍_n / (𝕎_n∩𝕎̃_n))`.
pub fn singular_set(shell: &ShellData, search: Option<SearchBox>) -> SingularSet {
    let clusters: Vec<&Cluster> = shell.spectrum().clusters.iter().collect();
    let poles: Vec<(f64, C64)> = clusters
        .iter()
        .filter(|c| c.cross.norm() > 1e-12)
        .map(|c| (c.value, c.cross))
        .collect();
    let mut points = Vec::new();
    for (z, ill) in beta_roots(&poles) {
        points.push(SingularPoint { z, kind: SingularKind::BetaZero, ill_conditioned: ill });
        points.push(SingularPoint { z: z.conj(), kind: SingularKind::GammaZero, ill_conditioned: ill });
    }
    let mut extension_points = Vec::new();
    for c in &clusters {
        if c.in_quotient_spectrum() {
            points.push(SingularPoint { z: c64(c.value, 0.0), kind: SingularKind::QuotientSpectrum, ill_conditioned: false });
        } else if c.modes_parallel() {
            extension_points.push(c.value);
        }
    }
    if let Some(b) = search {
        points.retain(|p| b.contains(p.z));
        extension_points.retain(|&x| b.contains(c64(x, 0.0)));
    }
    SingularSet { n: shell.index, points, extension_points, guard: GUARD }
}

fn beta_at(poles: &[(f64, C64)], z: C64) -> (C64, C64) {
    let mut f = c64(0.0, 0.0);
    let mut df = c64(0.0, 0.0);
    for &(l, w) in poles {
        let d = c64(l, 0.0) - z;
        f += w / d;
        df += w / (d * d);
    }
    (f, df)
}

fn beta_roots(poles: &[(f64, C64)]) -> Vec<(C64, bool)> {
    let k = poles.len();
    if k < 2 {
        return Vec::new();
    }
    let lo = poles.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = poles.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let c0 = 0.5 * (lo + hi);
    let sc = (0.5 * (hi - lo)).max(1e-300);
    let mu: Vec<f64> = poles.iter().map(|p| (p.0 - c0) / sc).collect();
    // Ascending coefficients of Σ_j w_j ∏_{k≠j}(μ_k - t).
    let mut coef = vec![c64(0.0, 0.0); k];
    for j in 0..k {
        let mut p = vec![poles[j].1];
        for (i, &m) in mu.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut q = vec![c64(0.0, 0.0); p.len() + 1];
            for (d, &c) in p.iter().enumerate() {
                q[d] += c * m;
                q[d + 1] -= c;
            }
            p = q;
        }
        for (d, c) in p.into_iter().enumerate() {
            coef[d] += c;
        }
    }
    let cmax = coef.iter().fold(0.0_f64, |a, c| a.max(c.norm()));
    while coef.len() > 1 && coef.last().unwrap().norm() <= 1e-13 * cmax {
        coef.pop();
    }
    let deg = coef.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coef[deg];
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = c64(1.0, 0.0);
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coef[i] / lead;
    }
    let sv = comp.clone().singular_values();
    let smin = sv.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let smax = sv.iter().fold(0.0_f64, |a, &x| a.max(x));
    let ill = smin == 0.0 || smax / smin > 1e12;
    let roots = comp.schur().eigenvalues().map(|e| e.iter().copied().collect::<Vec<_>>()).unwrap_or_default();
    roots
        .into_iter()
        .map(|t| {
            let mut z = c64(c0, 0.0) + t * sc;
            for _ in 0..50 {
                let (f, df) = beta_at(poles, z);
                if df.norm() == 0.0 {
                    break;
                }
                let step = f / df;
                z -= step;
                if step.norm() <= 1e-15 * z.norm().max(1.0) {
                    break;
                }
            }
            let (f, _) = beta_at(poles, z);
            (z, ill || f.norm() > 1e-8)
        })
        .collect()
}

/// Local boundary conditions at an exceptional shell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryVectors {
    pub x_minus: C2,
    pub x_plus: C2,
    pub alpha_finite: bool,
    pub delta_finite: bool,
}

impl BoundaryVectors {
    /// Case label of the edge construction: 1 (both finite), 2 (both infinite),
    /// 3 (`α` infinite, `δ` finite), 4 (`α` finite, `δ` infinite).
    pub fn case_tag(&self) -> u8 {
        match (self.alpha_finite, self.delta_finite) {
            (true, true) => 1,
            (false, false) => 2,
            (false, true) => 3,
            (true, false) => 4,
        }
    }
}

/// True when real `λ` lies in `A_n` up to `tol`.
pub fn in_exceptional_set(shell: &ShellData, lambda: f64, tol: f64) -> bool {
    let sp = shell.spectrum();
    if sp.clusters.iter().any(|c| c.in_quotient_spectrum() && (c.value - lambda).abs() <= tol) {
        return true;
    }
    let z = c64(lambda, 0.0);
    let scale: f64;
    let beta = match cluster_sum(shell, z, ON_SPECTRUM_TOL, visible, |c| c.cross) {
        Ok(b) => {
            scale = cluster_sum(shell, z, ON_SPECTRUM_TOL, visible, |c| c64(c.ups_norm_sq + c.phi_norm_sq, 0.0))
                .map(|x| x.norm())
                .unwrap_or(1.0);
            b
        }
        Err(_) => return false,
    };
    beta.norm() <= tol * scale.max(1.0)
}

/// `x^{(-)} = (a_n² α, 1)` or `(1, 0)` when `α` is infinite, and
/// `x^{(+)} = (1, δ)` or `(0, 1)` when `δ` is infinite, with `α`, `δ` taken on
/// `𝕎_n` and `𝕎̃_n`.
pub fn boundary_vectors(shell: &ShellData, lambda: f64) -> Result<BoundaryVectors> {
    if !in_exceptional_set(shell, lambda, ON_SPECTRUM_TOL) {
        return Err(OcsError::NotSingularHere { shell: shell.index, lambda });
    }
    let (alpha, delta) = restricted_alpha_delta(shell, c64(lambda, 0.0));
    let one = c64(1.0, 0.0);
    let zero = c64(0.0, 0.0);
    let a2 = c64(shell.a * shell.a, 0.0);
    Ok(BoundaryVectors {
        x_minus: alpha.map(|a| C2::new(a2 * a, one)).unwrap_or(C2::new(one, zero)),
        x_plus: delta.map(|d| C2::new(one, d)).unwrap_or(C2::new(zero, one)),
        alpha_finite: alpha.is_some(),
        delta_finite: delta.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::{free_jacobi_half, materialize, Geometry, RandomShells};
    use crate::CMat;
    use approx::assert_relative_eq;

    fn real_mat(rows: usize, cols: usize, data: &[f64]) -> CMat {
        CMat::from_row_slice(rows, cols, &data.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>())
    }

    fn vecr(d: &[f64]) -> CVec {
        CVec::from_vec(d.iter().map(|&x| c64(x, 0.0)).collect())
    }

    fn swap_shell(a: f64) -> ShellData {
        ShellData::new(1, real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]), a, vecr(&[0.0, 1.0]), vecr(&[1.0, 0.0])).unwrap()
    }

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1.0)
    }

    #[test]
    fn g_matrix_examples() {
        let s = ShellData::scalar(1, 0.3, -1.0).unwrap();
        let g = g_matrix(&s, c64(0.0, 1.0)).unwrap();
        let r = c64(1.0, 0.0) / (c64(0.3, 0.0) - c64(0.0, 1.0));
        for x in [g.alpha, g.beta, g.gamma, g.delta] {
            assert!(close(x, r, 1e-14));
        }
        let g = g_matrix(&swap_shell(1.0), c64(0.0, 1.0)).unwrap();
        assert!(close(g.alpha, c64(0.0, 0.5), 1e-14));
        assert!(close(g.delta, c64(0.0, 0.5), 1e-14));
        assert!(close(g.beta, c64(0.5, 0.0), 1e-14));
        assert!(close(g.gamma, c64(0.5, 0.0), 1e-14));
    }

    #[test]
    fn g_matrix_guard_ignores_invisible_eigenvalues() {
        let v = real_mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let s = ShellData::new(1, v, -1.0, vecr(&[1.0, 0.0, 0.0]), vecr(&[0.0, 1.0, 0.0])).unwrap();
        assert!(g_matrix(&s, c64(3.0, 0.0)).is_ok());
        assert!(matches!(g_matrix(&s, c64(2.0, 0.0)), Err(OcsError::ZTooCloseToSpectrum { .. })));
    }

    #[test]
    fn transfer_examples() {
        let s = ShellData::scalar(1, 0.4, -1.0).unwrap();
        let z = c64(0.1, 0.7);
        let t = transfer_matrix(&s, z).unwrap().value();
        let want = M2::new(z - c64(0.4, 0.0), c64(1.0, 0.0), c64(-1.0, 0.0), c64(0.0, 0.0));
        assert!((t - want).norm() < 1e-13);

        let t = transfer_matrix(&swap_shell(1.0), c64(0.0, 1.0)).unwrap();
        let want = M2::new(c64(2.0, 0.0), c64(0.0, -1.0), c64(0.0, 1.0), c64(1.0, 0.0));
        assert!((t.value() - want).norm() < 1e-13);
        assert!(close(t.det(), c64(1.0, 0.0), 1e-13));

        let t = transfer_matrix(&swap_shell(1.0), c64(0.3, 0.0)).unwrap();
        assert!(t.phase_spread() < 1e-10);
        let p = t.phase_normalized() * c64(t.log_scale.exp(), 0.0);
        assert!(p.iter().all(|x| x.im.abs() < 1e-12));
        assert_relative_eq!(p.determinant().re.abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn free_jacobi_fourth_power() {
        let op = free_jacobi_half(8);
        let t = transfer_product(&op, c64(0.0, 0.0), 0, 4).unwrap();
        assert!((t.value() - M2::identity()).norm() < 1e-13);
        let id = transfer_product(&op, c64(0.0, 0.0), 3, 3).unwrap();
        assert_eq!(id.m, M2::identity());
        assert_eq!(id.log_scale, 0.0);
    }

    #[test]
    fn product_matches_stepwise_states() {
        let op = materialize(&RandomShells::new(21, 4), Geometry::Half, 6, 0).unwrap();
        let z = c64(0.2, 0.4);
        let states = special_states(&op, z, SpecialSolution::U, 6).unwrap();
        let t = transfer_product(&op, z, 0, 6).unwrap();
        let via = t.value() * states[0];
        assert!((via - states[6]).norm() <= 1e-9 * states[6].norm());
        let back = transfer_product(&op, z, 6, 0).unwrap();
        assert!((back.value() * states[6] - states[0]).norm() <= 1e-9 * states[6].norm());
    }

    #[test]
    fn singular_set_examples() {
        let s = ShellData::scalar(1, 0.5, -1.0).unwrap();
        let ss = singular_set(&s, None);
        assert!(ss.points.is_empty());
        assert_eq!(ss.extension_points, vec![0.5]);

        let h = 0.5f64.sqrt();
        let v = real_mat(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let s = ShellData::new(1, v, -1.0, vecr(&[h, h]), vecr(&[h, h])).unwrap();
        let ss = singular_set(&s, None);
        let betas: Vec<_> = ss.points.iter().filter(|p| p.kind == SingularKind::BetaZero).collect();
        assert_eq!(betas.len(), 1);
        assert!(betas[0].z.norm() < 1e-12);
        assert_eq!(ss.real_points(1e-10), vec![0.0]);

        let ss = singular_set(&swap_shell(-1.0), None);
        assert!(ss.points.is_empty());
    }

    #[test]
    fn holomorphic_extension_scalar() {
        let s = ShellData::scalar(1, 0.5, -2.0).unwrap();
        let t = holomorphic_extension(&s, 0.5).unwrap().value();
        assert!(t[(0, 0)].norm() < 1e-12);
        assert!(close(t[(0, 1)], c64(2.0, 0.0), 1e-9));
        assert!(close(t[(1, 0)], c64(-0.5, 0.0), 1e-9));
        assert!(t[(1, 1)].norm() < 1e-9);
        // Direct evaluation routes to the extension.
        let t2 = transfer_matrix(&s, c64(0.5, 0.0)).unwrap().value();
        assert!((t - t2).norm() < 1e-12);
    }

    #[test]
    fn holomorphic_extension_two_by_two() {
        // V = diag(1, -1), Υ = Φ = (cos θ, sin θ): both eigenvalues meet 𝕎∩𝕎̃.
        let (c, s) = (0.8_f64, 0.6_f64);
        let v = real_mat(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let sh = ShellData::new(1, v, -1.0, vecr(&[c, s]), vecr(&[c, s])).unwrap();
        let t = holomorphic_extension(&sh, 1.0).unwrap().value();
        // Oracle: with a = ζ^*Υ = b = ζ^*Φ = c, the off-diagonals are -a_n a/b and b/(a_n a).
        assert!(t[(0, 0)].norm() < 1e-12);
        assert!(close(t[(0, 1)], c64(1.0, 0.0), 1e-8));
        assert!(close(t[(1, 0)], c64(-1.0, 0.0), 1e-8));
        // Lower-right entry against a finite-difference limit.
        let lr = |e: f64| g_matrix(&sh, c64(1.0, e)).unwrap().transfer(-1.0)[(1, 1)];
        let fd = lr(1e-6) * c64(2.0, 0.0) - lr(2e-6);
        assert!(close(t[(1, 1)], fd, 1e-6));
    }

    #[test]
    fn double_eigenvalue_diverges() {
        let h = 0.5f64.sqrt();
        let v = real_mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let sh = ShellData::new(1, v, -1.0, vecr(&[0.0, h, h]), vecr(&[h, 0.0, h])).unwrap();
        assert!(matches!(holomorphic_extension(&sh, 1.0), Err(OcsError::ExtensionDiverged { .. })));
    }

    #[test]
    fn boundary_vector_examples() {
        let h = 0.5f64.sqrt();
        let v = real_mat(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let s = ShellData::new(1, v, -1.0, vecr(&[h, h]), vecr(&[h, h])).unwrap();
        let b = boundary_vectors(&s, 0.0).unwrap();
        assert!(b.x_minus[0].norm() < 1e-14 && close(b.x_minus[1], c64(1.0, 0.0), 1e-14));
        assert!(close(b.x_plus[0], c64(1.0, 0.0), 1e-14) && b.x_plus[1].norm() < 1e-14);
        assert_eq!(b.case_tag(), 1);
        assert!(matches!(boundary_vectors(&s, 0.3), Err(OcsError::NotSingularHere { .. })));

        // Eigenvector e_3 sees Υ but not Φ, at eigenvalue 2.
        let v = real_mat(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let ups = vecr(&[0.6, 0.0, 0.8]);
        let phi = vecr(&[0.0, 1.0, 0.0]);
        let s = ShellData::new(1, v, -1.0, phi, ups).unwrap();
        let b = boundary_vectors(&s, 2.0).unwrap();
        assert!(!b.alpha_finite && b.delta_finite);
        assert_eq!(b.x_minus, C2::new(c64(1.0, 0.0), c64(0.0, 0.0)));
        assert_eq!(b.case_tag(), 3);
    }

    #[test]
    fn solution_vector_jacobi_scalar() {
        let op = free_jacobi_half(5);
        let z = c64(0.3, 0.2);
        let st = special_states(&op, z, SpecialSolution::U, 5).unwrap();
        for n in 1..=4i64 {
            let psi = solution_vector(op.shell(n).unwrap(), z, &st[(n - 1) as usize], &st[n as usize]).unwrap();
            let (x, xt) = x_scalars(&op, &st, n).unwrap();
            assert!(close(psi[0], x, 1e-13));
            assert!(close(psi[0], xt, 1e-13));
        }
        assert!(close(x_scalars(&op, &st, 1).unwrap().0, c64(1.0, 0.0), 1e-15));
    }

    #[test]
    fn solution_satisfies_eigen_equation() {
        let op = materialize(&RandomShells::new(8, 4), Geometry::Half, 3, 0).unwrap().with_first_shell_convention();
        let z = c64(0.1, 0.5);
        let st = special_states(&op, z, SpecialSolution::U, 3).unwrap();
        let blocks = solution_blocks(&op, z, &st, 3).unwrap();
        let h = crate::model_core::apply_operator(&op, 1, &blocks).unwrap();
        // Shells 1 and 2 are interior (Ψ_0 = 0 on the left, Ψ_4 missing on the right).
        for n in 0..2 {
            assert!((&h[n] - &blocks[n] * z).norm() < 1e-10 * blocks[n].norm());
        }
        let s1 = op.shell(1).unwrap();
        assert!(close(s1.upsilon.dotc(&blocks[0]), c64(1.0, 0.0), 1e-12));
    }
}
