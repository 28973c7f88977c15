//! m-functions, resolvent blocks of the truncations `ℋ_{N,c}`, and Weyl
//! circles with a limit-point diagnostic.

use crate::model_core::{assemble_dense, OneChannelOperator, ShellData};
use crate::transfer_engine::{
    g_matrix, solution_blocks, solution_vector, special_states, transfer_matrix, transfer_product, SpecialSolution,
    TransferState, C2,
};
use crate::{c64, CMat, CVec, OcsError, Result, C64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MMethod {
    Dense,
    Transfer,
}

impl std::fmt::Display for MMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MMethod::Dense => "dense",
            MMethod::Transfer => "transfer",
        })
    }
}

/// `m_{N,c}(z) = ⟨P_1Υ_1, (ℋ_{N,c}-z)^{-1}P_1Υ_1⟩` and its `Φ_1` analogue `m̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MFunctionSample {
    pub z: C64,
    pub n: usize,
    pub c: C64,
    pub value: C64,
    pub value_tilde: C64,
    pub method: MMethod,
}

/// Backward-propagated states of `x^{(N,c)}` at `n = 0..=N`, unscaled.
pub fn boundary_solution_states(op: &OneChannelOperator, n: usize, c: C64, z: C64) -> Result<Vec<C2>> {
    let mut out = vec![C2::zeros(); n + 1];
    out[n] = C2::new(c, c64(1.0, 0.0));
    for k in (1..=n).rev() {
        out[k - 1] = transfer_matrix(op.shell(k as i64)?, z)?.inverse()?.value() * out[k];
    }
    Ok(out)
}

/// Evaluates the m-function of the truncation at `N` shells.
pub fn m_function(op: &OneChannelOperator, n: usize, c: C64, z: C64, method: MMethod) -> Result<MFunctionSample> {
    if n == 0 || n as i64 > op.n_max() {
        return Err(OcsError::InvalidInput(format!("N = {n} outside the materialized shells")));
    }
    let s1 = op.shell(1)?;
    let (value, value_tilde) = match method {
        MMethod::Dense => {
            let t = assemble_dense(op, n, c, None)?;
            let x = t.solve(z, &t.embed(1, &s1.upsilon))?;
            let y = t.solve(z, &t.embed(1, &s1.phi))?;
            (s1.upsilon.dotc(&t.restrict(1, &x)), s1.phi.dotc(&t.restrict(1, &y)))
        }
        MMethod::Transfer => {
            // Scaled backward propagation from (a_{N+1}x_{N+1}, x̃_N) = (c, 1).
            let mut st = TransferState::new(C2::new(c, c64(1.0, 0.0)), n as i64);
            let mut x1_state = None;
            for k in (1..=n as i64).rev() {
                if k == 1 {
                    x1_state = Some(st);
                }
                st = st.step(&transfer_matrix(op.shell(k)?, z)?.inverse()?);
            }
            let a1 = c64(s1.a, 0.0);
            let s0 = st.vec;
            let m = s0[0] / (a1 * a1 * s0[1]);
            // m̃ = δ_1 x̃_1 / (γ_1 a_1 x̃_0), with both states brought to one scale.
            let g = g_matrix(s1, z)?;
            let s1st = x1_state.unwrap();
            let ratio = (s1st.log_scale - st.log_scale).exp();
            let mt = g.delta * s1st.vec[1] * ratio / (g.gamma * a1 * s0[1]);
            (m, mt)
        }
    };
    Ok(MFunctionSample { z, n, c, value, value_tilde, method })
}

/// Which mode a scalar overlap uses on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Upsilon,
    Phi,
}

/// Transfer-side data for the resolvent of `ℋ_{N,c}` at `z` (real `c`).
#[derive(Debug, Clone)]
pub struct GreenData {
    pub n: usize,
    pub c: C64,
    pub z: C64,
    pub m_z: C64,
    pub m_zbar: C64,
    u_z: Vec<C2>,
    w_z: Vec<C2>,
    u_zb: Vec<C2>,
    w_zb: Vec<C2>,
    x_z: Vec<C2>,
    /// `Ψ^{(N,c)}` at `z` and `z̄`, from the backward-propagated boundary
    /// solution (stable, unlike `mΨ^u + Ψ^w` for large `n`).
    psi_nc_z: Vec<CVec>,
    psi_nc_zb: Vec<CVec>,
    /// States of `Ψ^{(N,c)}_z` normalized as `m u + w`.
    nc_z: Vec<C2>,
    psi_u_z: Vec<CVec>,
    psi_u_zb: Vec<CVec>,
}

impl GreenData {
    pub fn new(op: &OneChannelOperator, n: usize, c: C64, z: C64) -> Result<Self> {
        let nn = n as i64;
        let zb = z.conj();
        let u_z = special_states(op, z, SpecialSolution::U, nn)?;
        let w_z = special_states(op, z, SpecialSolution::W, nn)?;
        let u_zb = special_states(op, zb, SpecialSolution::U, nn)?;
        let w_zb = special_states(op, zb, SpecialSolution::W, nn)?;
        let x_z = boundary_solution_states(op, n, c, z)?;
        let m_z = m_function(op, n, c, z, MMethod::Transfer)?.value;
        let m_zbar = m_function(op, n, c.conj(), zb, MMethod::Transfer)?.value;
        let a1 = op.shell(1)?.a;
        let normalized = |states: Vec<C2>| -> Vec<C2> {
            let kappa = states[0][1] * a1;
            states.into_iter().map(|s| s / kappa).collect()
        };
        let nc_z = normalized(x_z.clone());
        let nc_zb = normalized(boundary_solution_states(op, n, c.conj(), zb)?);
        Ok(GreenData {
            psi_nc_z: solution_blocks(op, z, &nc_z, nn)?,
            psi_nc_zb: solution_blocks(op, zb, &nc_zb, nn)?,
            nc_z,
            n,
            c,
            z,
            m_z,
            m_zbar,
            psi_u_z: solution_blocks(op, z, &u_z, nn)?,
            psi_u_zb: solution_blocks(op, zb, &u_zb, nn)?,
            u_z,
            w_z,
            u_zb,
            w_zb,
            x_z,
        })
    }

    /// `Ψ^{(N,c)}_{z,n}`, equal to `m Ψ^u_{z,n} + Ψ^w_{z,n}` (or at `z̄`).
    pub fn psi_nc(&self, n: i64, conj_z: bool) -> CVec {
        let k = (n - 1) as usize;
        if conj_z {
            self.psi_nc_zb[k].clone()
        } else {
            self.psi_nc_z[k].clone()
        }
    }

    /// `P_m^*(ℋ_{N,c} - z)^{-1}P_n` from solution vectors.
    pub fn block(&self, op: &OneChannelOperator, m: i64, n: i64) -> Result<CMat> {
        let nn = self.n as i64;
        if m < 1 || n < 1 || m > nn || n > nn {
            return Err(OcsError::InvalidInput(format!("block ({m},{n}) outside 1..={nn}")));
        }
        if m < n {
            return Ok(&self.psi_u_z[(m - 1) as usize] * self.psi_nc(n, true).adjoint());
        }
        if m > n {
            return Ok(self.psi_nc(m, false) * self.psi_u_zb[(n - 1) as usize].adjoint());
        }
        // (V_n - z)^{-1} plus the couplings to shells n-1 and n+1:
        // a_n ũ_{z,n-1}(V-z)^{-1}Υ_n (Ψ^{(N,c)}_{z̄,n})^* + a_{n+1}x^{(N,c)}_{z,n+1}(V-z)^{-1}Φ_n (Ψ^u_{z̄,n})^*.
        let shell = op.shell(n)?;
        let k = n as usize;
        let z = self.z;
        let zero = c64(0.0, 0.0);
        let ups_u = solution_vector(shell, z, &C2::new(zero, self.u_z[k - 1][1]), &C2::new(zero, zero))?;
        let phi_x = solution_vector(shell, z, &C2::new(zero, zero), &C2::new(self.nc_z[k][0], zero))?;
        Ok(full_resolvent(shell, z)?
            + ups_u * self.psi_nc_zb[k - 1].adjoint()
            + phi_x * self.psi_u_zb[k - 1].adjoint())
    }

    /// Scalars `(x_n, x̃_n)` of the special solution `u` (or of `x^{(N,c)}`).
    fn scalars(&self, op: &OneChannelOperator, states: &[C2], n: i64) -> Result<(C64, C64)> {
        let a = op.shell(n)?.a;
        Ok((states[(n - 1) as usize][0] / a, states[n as usize][1]))
    }

    /// Scalar overlap `⟨P_m X_m, (ℋ_{N,c}-z)^{-1} P_n Y_n⟩` from the
    /// transfer-side closed forms.
    pub fn overlap(&self, op: &OneChannelOperator, left: Mode, m: i64, right: Mode, n: i64) -> Result<C64> {
        let z = self.z;
        let g = g_matrix(op.shell(n)?, z)?;
        let det = transfer_product(op, z, 0, n)?.det();
        let a1 = op.shell(1)?.a;
        let d0 = det * a1 * self.x_z[0][1];
        let (um, utm) = self.scalars(op, &self.u_z, m)?;
        let (un, utn) = self.scalars(op, &self.u_z, n)?;
        let (xm, xtm) = self.scalars(op, &self.x_z, m)?;
        let (xn, xtn) = self.scalars(op, &self.x_z, n)?;
        let q = g.gamma / g.beta;
        Ok(match (left, right) {
            (Mode::Upsilon, Mode::Upsilon) => q / d0 * if m <= n { um * xn } else { xm * un },
            (Mode::Upsilon, Mode::Phi) => (if m <= n { um * xtn } else { xm * utn }) / d0,
            (Mode::Phi, Mode::Upsilon) => q / d0 * if m < n { utm * xn } else { xtm * un },
            (Mode::Phi, Mode::Phi) => (if m <= n { utm * xtn } else { xtm * utn }) / d0,
        })
    }

    pub fn w_states(&self) -> (&[C2], &[C2]) {
        (&self.w_z, &self.w_zb)
    }

    pub fn u_states(&self) -> (&[C2], &[C2]) {
        (&self.u_z, &self.u_zb)
    }
}

/// Full `(V_n - z)^{-1}`, guarded on every eigenvalue.
pub fn full_resolvent(shell: &ShellData, z: C64) -> Result<CMat> {
    let sp = shell.spectrum();
    let mut d = CVec::zeros(sp.evals.len());
    for (j, &l) in sp.evals.iter().enumerate() {
        let den = c64(l, 0.0) - z;
        if den.norm() < crate::transfer_engine::GUARD {
            return Err(OcsError::ZTooCloseToSpectrum { z, eigenvalue: l, shell: shell.index });
        }
        d[j] = c64(1.0, 0.0) / den;
    }
    Ok(&sp.evecs * CMat::from_diagonal(&d) * sp.evecs.adjoint())
}

/// Convenience wrapper around [`GreenData::block`].
pub fn resolvent_block(op: &OneChannelOperator, n_trunc: usize, c: C64, z: C64, m: i64, n: i64) -> Result<CMat> {
    GreenData::new(op, n_trunc, c, z)?.block(op, m, n)
}

/// The `n`-th Weyl circle at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeylCircle {
    pub z: C64,
    pub n: i64,
    /// Geometric centre of the image of the real line under `c ↦ m_{n,c}(z)`.
    pub center: C64,
    pub radius: f64,
    pub log_radius: f64,
    /// Radius from `|det T_{z,0,n}| / (2|Im z| Σ_k ‖Ψ^u_{z,k}‖²)`.
    pub radius_sum_form: f64,
    /// The point `m_{n,i}(z)`, i.e. the Cauchy-averaged boundary condition.
    pub cauchy_point: C64,
}

/// Log-domain running sum of `e^{2L}·q` terms.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    log: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum { log: f64::NEG_INFINITY }
    }

    fn add(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        let (hi, lo) = if self.log >= log_term { (self.log, log_term) } else { (log_term, self.log) };
        self.log = hi + (lo - hi).exp().ln_1p();
    }
}

/// Weyl circles for `n = 1..=n_max` using overflow-safe scaled propagation.
pub fn weyl_circles(op: &OneChannelOperator, z: C64, n_max: i64) -> Result<Vec<WeylCircle>> {
    if z.im == 0.0 {
        return Err(OcsError::InvalidInput("Weyl circles need a non-real z".into()));
    }
    let a1 = op.shell(1)?.a;
    let mut u = TransferState::new(C2::new(c64(a1, 0.0), c64(0.0, 0.0)), 0);
    let mut w = TransferState::new(C2::new(c64(0.0, 0.0), c64(1.0 / a1, 0.0)), 0);
    let mut log_det = 0.0;
    let mut sum = LogSum::new();
    let mut out = Vec::with_capacity(n_max.max(0) as usize);
    for n in 1..=n_max {
        let shell = op.shell(n)?;
        let t = transfer_matrix(shell, z)?;
        log_det += t.det().norm().ln();
        let u_prev = u;
        u = u.step(&t);
        w = w.step(&t);
        // Ψ^u_n = e^{L_n} R(v_n[0]Φ + a_n e^{L_{n-1}-L_n} v_{n-1}[1] Υ).
        let rel = (u_prev.log_scale - u.log_scale).exp();
        let prev = C2::new(c64(0.0, 0.0), u_prev.vec[1] * rel);
        let psi = solution_vector(shell, z, &prev, &u.vec)?;
        sum.add(2.0 * u.log_scale + psi.norm_squared().ln());

        let (u0, u1) = (u.vec[0], u.vec[1]);
        let im = (u0.conj() * u1).im.abs();
        let log_radius = log_det - (2.0 * im).ln() - 2.0 * u.log_scale;
        let log_radius_sum = log_det - (2.0 * z.im.abs()).ln() - sum.log;
        let scale = (w.log_scale - u.log_scale).exp();
        let mobius = |cc: C64| (cc * w.vec[1] - w.vec[0]) * scale / (u0 - cc * u1);
        let center = if u1.norm() > 0.0 { mobius((u0 / u1).conj()) } else { mobius(c64(0.0, 0.0)) };
        out.push(WeylCircle {
            z,
            n,
            center,
            radius: log_radius.exp(),
            log_radius,
            radius_sum_form: log_radius_sum.exp(),
            cauchy_point: mobius(c64(0.0, 1.0)),
        });
    }
    Ok(out)
}

/// Single Weyl circle, see [`weyl_circles`].
pub fn weyl_radius(op: &OneChannelOperator, z: C64, n: i64) -> Result<WeylCircle> {
    Ok(*weyl_circles(op, z, n)?.last().ok_or_else(|| OcsError::InvalidInput("n must be ≥ 1".into()))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitVerdict {
    LimitPointLike,
    LimitCircleLike,
    Inconclusive,
}

/// Radius sequence with an advisory limit-point / limit-circle verdict.
#[derive(Debug, Clone, Serialize)]
pub struct LimitPointReport {
    pub z: C64,
    pub radii: Vec<f64>,
    pub verdict: LimitVerdict,
    /// First `n` with radius below the limit-point threshold.
    pub first_below: Option<i64>,
}

pub const LIMIT_POINT_RADIUS: f64 = 1e-8;
pub const LIMIT_CIRCLE_REL_CHANGE: f64 = 1e-3;

pub fn limit_point_diagnostic(op: &OneChannelOperator, z: C64, n_max: i64) -> Result<LimitPointReport> {
    let circles = weyl_circles(op, z, n_max)?;
    let radii: Vec<f64> = circles.iter().map(|c| c.radius).collect();
    let first_below = circles.iter().find(|c| c.radius < LIMIT_POINT_RADIUS).map(|c| c.n);
    let verdict = if first_below.is_some() {
        LimitVerdict::LimitPointLike
    } else {
        // Relative change across the last ten radii.
        let last = *radii.last().unwrap_or(&0.0);
        let earlier = radii.len().checked_sub(11).map(|k| radii[k]).unwrap_or(last);
        if radii.len() > 10 && last > 0.0 && (earlier - last).abs() / last < LIMIT_CIRCLE_REL_CHANGE {
            LimitVerdict::LimitCircleLike
        } else {
            LimitVerdict::Inconclusive
        }
    };
    Ok(LimitPointReport { z, radii, verdict, first_below })
}
