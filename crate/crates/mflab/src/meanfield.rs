//! Mean-field PDE solvers and Gibbs fixed points.
//!
//! Three solvers share the conventions of the particle side (noise `sqrt(2)`,
//! drift `kappa K * mu - grad A`):
//! - a pseudo-spectral solver for the first-order equation on the torus,
//!   exact in the diffusion through an integrating factor and dealiased by
//!   the 3/2 rule in the transport term;
//! - a Chang-Cooper finite-volume solver for drift-diffusion on an interval,
//!   whose discrete stationary state is the center-sampled Gibbs density,
//!   exactly, for interface-sampled drifts;
//! - a kinetic solver on torus x velocity interval, splitting exact spectral
//!   free transport, upwind force transport, and a Chang-Cooper
//!   friction-diffusion substep that keeps the center-sampled Maxwellian
//!   invariant.
//!
//! Profiles live at cell centers throughout, matching the grid module's cell
//! convention; spectral coefficients carry the half-cell phase correction.

use crate::error::{Error, Result};
use crate::fourier::{signed_frequency, Spectral1d};
use crate::grid::{GridSpec, GriddedDensity, SignedGridField};
use crate::kernels::{Confinement, Domain, KernelSpec};
use crate::scalar::Scalar;
use rustfft::num_complex::Complex;
use rustfft::FftNum;
use std::f64::consts::PI;

/// Relative tolerance on the mass of an input profile.
const MASS_TOL: f64 = 1e-6;
/// How far below zero a computed density may dip before the run aborts.
const NEG_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Periodic profiles at cell centers
// ---------------------------------------------------------------------------

/// A real function on the torus sampled at the `n` cell centers
/// `(j + 1/2) L / n`.
#[derive(Debug, Clone)]
pub struct TorusProfile<T: Scalar> {
    period: f64,
    values: Vec<T>,
}

impl<T: Scalar> TorusProfile<T> {
    pub fn new(period: f64, values: Vec<T>) -> Result<Self> {
        if !(period > 0.0) || values.is_empty() {
            return Err(Error::Config("profile needs a period and samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("profile samples must be finite".into()));
        }
        Ok(TorusProfile { period, values })
    }

    pub fn from_fn(period: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let h = period / n as f64;
        let values = (0..n).map(|j| T::real(f((j as f64 + 0.5) * h))).collect();
        TorusProfile::new(period, values)
    }

    pub fn uniform(period: f64, n: usize) -> Result<Self> {
        TorusProfile::new(period, vec![T::real(1.0 / period); n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn centers(&self) -> Vec<f64> {
        let h = self.period / self.len() as f64;
        (0..self.len()).map(|j| (j as f64 + 0.5) * h).collect()
    }

    /// Midpoint-rule integral; exact for the trigonometric interpolant.
    pub fn mass(&self) -> f64 {
        let h = self.period / self.len() as f64;
        self.values.iter().map(|v| v.as_f64()).sum::<f64>() * h
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min)
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() || self.period != other.period {
            return Err(Error::GridMismatch("profiles differ".into()));
        }
        let h = self.period / self.len() as f64;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum::<f64>()
            * h)
    }

    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() || self.period != other.period {
            return Err(Error::GridMismatch("profiles differ".into()));
        }
        let h = self.period / self.len() as f64;
        Ok((self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum::<f64>()
            * h)
            .sqrt())
    }
}

impl<T: Scalar + FftNum> TorusProfile<T> {
    /// Continuum Fourier coefficients of the trigonometric interpolant, in
    /// FFT bin order. The half-cell sampling phase is removed; the Nyquist
    /// bin is zeroed because center samples cannot see it.
    pub fn coefficients(&self) -> Vec<Complex<T>> {
        let n = self.len();
        let plan = Spectral1d::new(n);
        let mut coeffs = plan.forward(&self.values);
        detwist(&mut coeffs, -1.0);
        coeffs
    }

    /// Amplitude of the signed-frequency mode `k`.
    pub fn mode_amplitude(&self, k: i64) -> f64 {
        let n = self.len();
        let coeffs = self.coefficients();
        for (j, c) in coeffs.iter().enumerate() {
            if signed_frequency(j, n) == k {
                return (c.re.as_f64().powi(2) + c.im.as_f64().powi(2)).sqrt();
            }
        }
        0.0
    }

    /// Exact cell averages of the trigonometric interpolant on a coarser
    /// torus grid, as a probability density.
    pub fn cell_averaged(&self, cells: usize) -> Result<GriddedDensity<T>> {
        let n = self.len();
        let coeffs = self.coefficients();
        let l = self.period;
        let delta = l / cells as f64;
        let mut avg = vec![0.0f64; cells];
        for (j, c) in coeffs.iter().enumerate() {
            let k = signed_frequency(j, n);
            if 2 * k.unsigned_abs() as usize >= n {
                continue;
            }
            let damp = sinc(PI * k as f64 * delta / l);
            for (a, v) in avg.iter_mut().enumerate() {
                let phase = 2.0 * PI * k as f64 * (a as f64 + 0.5) * delta / l;
                *v += damp
                    * (c.re.as_f64() * phase.cos() - c.im.as_f64() * phase.sin());
            }
        }
        let spec = GridSpec::torus(cells, l)?;
        let field = SignedGridField::new(spec, 1, avg.iter().map(|&v| T::real(v)).collect())?;
        GriddedDensity::new(field)
    }
}

fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 - y * y / 6.0
    } else {
        y.sin() / y
    }
}

/// Multiplies bin `j` by `exp(sign * i pi k_j / n)`, the phase that converts
/// between center-sample DFT output and continuum coefficients.
fn detwist<T: Scalar + FftNum>(coeffs: &mut [Complex<T>], sign: f64) {
    let n = coeffs.len();
    for (j, c) in coeffs.iter_mut().enumerate() {
        let k = signed_frequency(j, n);
        if 2 * k.unsigned_abs() as usize >= n {
            *c = Complex::new(T::zero(), T::zero());
            continue;
        }
        let phase = sign * PI * k as f64 / n as f64;
        let rot = Complex::new(T::real(phase.cos()), T::real(phase.sin()));
        *c = *c * rot;
    }
}

fn validate_density_profile<T: Scalar>(profile: &TorusProfile<T>) -> Result<()> {
    if (profile.mass() - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDensity(format!(
            "initial mass {} is not 1",
            profile.mass()
        )));
    }
    if profile.min_value() < -1e-9 {
        return Err(Error::InvalidDensity(format!(
            "initial minimum {} is negative",
            profile.min_value()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// First-order equation on the torus, pseudo-spectral
// ---------------------------------------------------------------------------

/// Pseudo-spectral solver for
/// `d_t mu = Lap mu - kappa div((K * mu) mu)` on a one-dimensional torus,
/// for gradient interactions `K = -W'`.
///
/// Time stepping is a Lawson-Heun integrating-factor scheme: the diffusion
/// is applied exactly through `exp(-(2 pi k / L)^2 dt)`, the transport term
/// at second order. The zero mode is untouched by construction, so mass is
/// conserved exactly. The transport product is dealiased on a 3/2 grid.
pub struct McKeanVlasovTorus<T: Scalar + FftNum> {
    period: f64,
    kappa: f64,
    n: usize,
    /// Potential coefficients `w_hat_k`, `k = 0..=n/2`.
    what: Vec<f64>,
    plan_n: Spectral1d<T>,
    plan_m: Spectral1d<T>,
    /// Continuum coefficients of the density, FFT bin order, length `n`.
    state: Vec<Complex<T>>,
    time: f64,
}

impl<T: Scalar + FftNum> McKeanVlasovTorus<T> {
    pub fn new(kernel: &KernelSpec<T>, kappa: f64, initial: &TorusProfile<T>) -> Result<Self> {
        let period = match kernel.domain {
            Domain::Torus { dim: 1, period } => period,
            _ => {
                return Err(Error::Config(
                    "the torus solver needs a one-dimensional periodic kernel".into(),
                ))
            }
        };
        if !kernel.is_gradient() {
            return Err(Error::Config(
                "the transport term uses potential coefficients; the kernel must be a \
                 gradient"
                    .into(),
            ));
        }
        if (initial.period() - period).abs() > 1e-12 * period {
            return Err(Error::GridMismatch("profile period differs from the kernel".into()));
        }
        let n = initial.len();
        if n < 16 || n % 2 != 0 {
            return Err(Error::Config("need an even number of modes, at least 16".into()));
        }
        validate_density_profile(initial)?;
        let what = kernel.potential_coefficients(n / 2)?;
        let state = initial.coefficients();
        Ok(McKeanVlasovTorus {
            period,
            kappa,
            n,
            what,
            plan_n: Spectral1d::new(n),
            plan_m: Spectral1d::new(3 * n / 2),
            state,
            time: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mass(&self) -> f64 {
        self.state[0].re.as_f64() * self.period
    }

    /// Current density at the cell centers.
    pub fn profile(&self) -> TorusProfile<T> {
        let mut coeffs = self.state.clone();
        detwist(&mut coeffs, 1.0);
        let values = self.plan_n.inverse_real(&coeffs);
        TorusProfile { period: self.period, values }
    }

    /// Spreads coefficients onto the dealiasing grid and synthesizes values.
    fn to_fine_values(&self, coeffs: &[Complex<T>]) -> Vec<Complex<T>> {
        let m = self.plan_m.len();
        let mut out = vec![Complex::new(T::zero(), T::zero()); m];
        for (j, &c) in coeffs.iter().enumerate() {
            let k = signed_frequency(j, self.n);
            if 2 * k.unsigned_abs() as usize >= self.n {
                continue;
            }
            let target = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
            out[target] = c;
        }
        self.plan_m.inverse_complex(&mut out);
        out
    }

    /// Transport term `-kappa d_x((K * mu) mu)` in coefficient space, plus
    /// the extreme force and density values seen on the fine grid.
    fn transport(&self, u: &[Complex<T>]) -> (Vec<Complex<T>>, f64, f64) {
        let l = self.period;
        let mut force_hat = vec![Complex::new(T::zero(), T::zero()); self.n];
        for (j, &c) in u.iter().enumerate() {
            let k = signed_frequency(j, self.n);
            let ka = k.unsigned_abs() as usize;
            if ka > self.n / 2 {
                continue;
            }
            let w = 2.0 * PI * k as f64 / l;
            // K * mu = -(W * mu)': multiplier -i w L w_hat
            let s = T::real(-w * l * self.what[ka]);
            force_hat[j] = Complex::new(c.im * s * T::real(-1.0), c.re * s);
        }
        let force = self.to_fine_values(&force_hat);
        let dens = self.to_fine_values(u);
        let mut max_force = 0.0f64;
        let mut min_dens = f64::INFINITY;
        let m = self.plan_m.len();
        let mut prod: Vec<Complex<T>> = force
            .iter()
            .zip(&dens)
            .map(|(f, d)| {
                max_force = max_force.max(f.re.as_f64().abs());
                min_dens = min_dens.min(d.re.as_f64());
                *f * *d
            })
            .collect();
        self.plan_m.forward_complex(&mut prod);
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.n];
        for (j, o) in out.iter_mut().enumerate() {
            let k = signed_frequency(j, self.n);
            if 2 * k.unsigned_abs() as usize >= self.n {
                continue;
            }
            let src = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
            let w = 2.0 * PI * k as f64 / l;
            let s = T::real(-self.kappa * w);
            let p = prod[src];
            *o = Complex::new(p.im * s * T::real(-1.0), p.re * s);
        }
        (out, max_force, min_dens)
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config("time step must be positive".into()));
        }
        let l = self.period;
        let dx = l / self.n as f64;
        let (n1, max_force, min_dens) = self.transport(&self.state);
        let speed = self.kappa.abs() * max_force;
        if speed * dt > 0.5 * dx {
            return Err(Error::Numerical(format!(
                "advection limit exceeded at t = {}: speed {speed:.3e} with dx {dx:.3e}",
                self.time
            )));
        }
        let max_dens = self
            .state
            .iter()
            .map(|c| c.re.as_f64().abs())
            .sum::<f64>()
            .max(1.0 / l);
        if min_dens < -NEG_TOL * max_dens.max(1.0) {
            return Err(Error::Numerical(format!(
                "density reached {min_dens:.3e} at t = {}",
                self.time
            )));
        }
        let decay: Vec<T> = (0..self.n)
            .map(|j| {
                let k = signed_frequency(j, self.n);
                let w = 2.0 * PI * k as f64 / l;
                T::real((-w * w * dt).exp())
            })
            .collect();
        let dtt = T::real(dt);
        let half = T::real(0.5 * dt);
        let predictor: Vec<Complex<T>> = self
            .state
            .iter()
            .zip(&n1)
            .zip(&decay)
            .map(|((u, f), &e)| (*u + *f * dtt) * e)
            .collect();
        let (n2, _, _) = self.transport(&predictor);
        for (((u, f1), f2), &e) in self
            .state
            .iter_mut()
            .zip(&n1)
            .zip(&n2)
            .zip(&decay)
        {
            *u = *u * e + (*f1 * e + *f2) * half;
        }
        self.time += dt;
        Ok(())
    }

    pub fn run(&mut self, dt: f64, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Chang-Cooper finite volumes on an interval
// ---------------------------------------------------------------------------

/// Exponentially fitted implicit finite volumes for
/// `d_t rho = d_z(b(z) rho + D d_z rho)` with zero-flux boundaries.
///
/// The interface weighting `delta(w) = 1/w - 1/(e^w - 1)`, `w = b h / D`,
/// makes the piecewise-exponential equilibrium exact: whenever the drift
/// derives from a potential sampled at interfaces, the center-sampled Gibbs
/// density is a stationary vector of the discrete operator. The implicit
/// update is an M-matrix solve, so positivity and mass are preserved.
#[derive(Debug, Clone)]
pub struct ChangCooperLine {
    m: usize,
    lo: f64,
    h: f64,
}

fn cc_delta(w: f64) -> f64 {
    if w.abs() < 1e-5 {
        0.5 - w / 12.0
    } else {
        1.0 / w - 1.0 / w.exp_m1()
    }
}

impl ChangCooperLine {
    pub fn new(m: usize, lo: f64, hi: f64) -> Result<Self> {
        if m < 3 || !(hi > lo) {
            return Err(Error::Config("need at least three cells on a real interval".into()));
        }
        Ok(ChangCooperLine { m, lo, h: (hi - lo) / m as f64 })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn cell_width(&self) -> f64 {
        self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.lo + (i as f64 + 0.5) * self.h).collect()
    }

    /// Interior interface coordinates, length `m - 1`.
    pub fn interfaces(&self) -> Vec<f64> {
        (1..self.m).map(|i| self.lo + i as f64 * self.h).collect()
    }

    /// One implicit Euler step; `drift` holds `b` at the interior interfaces.
    pub fn step<T: Scalar>(&self, rho: &mut [T], drift: &[f64], diffusion: f64, dt: f64) -> Result<()> {
        let m = self.m;
        if rho.len() != m || drift.len() != m - 1 {
            return Err(Error::Config("state or drift length mismatch".into()));
        }
        if !(diffusion > 0.0) || !(dt > 0.0) {
            return Err(Error::Config("diffusion and step must be positive".into()));
        }
        let h = self.h;
        // flux J_{i+1/2} = p_i rho_i + q_i rho_{i+1}
        let mut p = vec![0.0f64; m - 1];
        let mut q = vec![0.0f64; m - 1];
        for i in 0..m - 1 {
            let b = drift[i];
            let w = b * h / diffusion;
            let delta = cc_delta(w);
            p[i] = b * delta - diffusion / h;
            q[i] = b * (1.0 - delta) + diffusion / h;
        }
        let r = dt / h;
        // rows of (I - dt A); sub/sup negated into the Thomas convention
        let mut diag = vec![T::zero(); m];
        let mut sub = vec![T::zero(); m];
        let mut sup = vec![T::zero(); m];
        for i in 0..m {
            let pi = if i < m - 1 { p[i] } else { 0.0 };
            let qim = if i > 0 { q[i - 1] } else { 0.0 };
            diag[i] = T::real(1.0 - r * (pi - qim));
            if i > 0 {
                sub[i] = T::real(r * p[i - 1]);
            }
            if i < m - 1 {
                sup[i] = T::real(-r * q[i]);
            }
        }
        // Thomas solve; the matrix is an M-matrix, no pivoting needed
        let mut c = vec![T::zero(); m];
        let mut d = vec![T::zero(); m];
        let mut beta = diag[0];
        d[0] = rho[0] / beta;
        for i in 1..m {
            c[i - 1] = sup[i - 1] / beta;
            beta = diag[i] - sub[i] * c[i - 1];
            if beta == T::zero() {
                return Err(Error::Numerical("singular implicit system".into()));
            }
            d[i] = (rho[i] - sub[i] * d[i - 1]) / beta;
        }
        rho[m - 1] = d[m - 1];
        for i in (0..m - 1).rev() {
            rho[i] = d[i] - c[i] * rho[i + 1];
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// First-order equation on an interval
// ---------------------------------------------------------------------------

/// Chang-Cooper solver for
/// `d_t rho = d_z((A' - kappa K * rho) rho + d_zz rho)` on a truncated line.
/// The convolution force lags one step behind (semi-implicit).
pub struct McKeanVlasovLine<T: Scalar> {
    cc: ChangCooperLine,
    kernel: KernelSpec<T>,
    confinement: Confinement,
    kappa: f64,
    rho: Vec<T>,
    time: f64,
}

impl<T: Scalar> McKeanVlasovLine<T> {
    pub fn new(
        kernel: KernelSpec<T>,
        confinement: Confinement,
        kappa: f64,
        m: usize,
        half_width: f64,
        initial: impl FnMut(f64) -> f64,
    ) -> Result<Self> {
        if !matches!(kernel.domain, Domain::Whole { dim: 1 }) {
            return Err(Error::Config("the line solver needs a whole-space kernel".into()));
        }
        let cc = ChangCooperLine::new(m, -half_width, half_width)?;
        let mut initial = initial;
        let h = cc.cell_width();
        let mut rho: Vec<T> = cc.centers().iter().map(|&z| T::real(initial(z))).collect();
        let mass: f64 = rho.iter().map(|v| v.as_f64()).sum::<f64>() * h;
        if !(mass > 0.0) || rho.iter().any(|v| v.as_f64() < 0.0) {
            return Err(Error::InvalidDensity("initial profile must be nonnegative".into()));
        }
        let scale = T::real(1.0 / mass);
        for v in rho.iter_mut() {
            *v = *v * scale;
        }
        Ok(McKeanVlasovLine { cc, kernel, confinement, kappa, rho, time: 0.0 })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn centers(&self) -> Vec<f64> {
        self.cc.centers()
    }

    pub fn cell_width(&self) -> f64 {
        self.cc.cell_width()
    }

    pub fn values(&self) -> &[T] {
        &self.rho
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().map(|v| v.as_f64()).sum::<f64>() * self.cc.cell_width()
    }

    pub fn variance(&self) -> f64 {
        let h = self.cc.cell_width();
        let zs = self.cc.centers();
        let mass: f64 = self.rho.iter().map(|v| v.as_f64()).sum::<f64>() * h;
        let mean: f64 =
            zs.iter().zip(&self.rho).map(|(z, v)| z * v.as_f64()).sum::<f64>() * h / mass;
        zs.iter()
            .zip(&self.rho)
            .map(|(z, v)| (z - mean) * (z - mean) * v.as_f64())
            .sum::<f64>()
            * h
            / mass
    }

    fn drift_at_interfaces(&self) -> Vec<f64> {
        let h = self.cc.cell_width();
        let zs = self.cc.centers();
        self.cc
            .interfaces()
            .iter()
            .map(|&z| {
                let mut b = match self.confinement {
                    Confinement::None => 0.0,
                    Confinement::Quadratic { lambda } => lambda * z,
                };
                if self.kappa != 0.0 && !self.kernel.is_zero() {
                    let mut conv = 0.0;
                    for (zj, vj) in zs.iter().zip(&self.rho) {
                        conv += self.kernel.force1(T::real(z - zj)).as_f64() * vj.as_f64();
                    }
                    b -= self.kappa * conv * h;
                }
                b
            })
            .collect()
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        let drift = self.drift_at_interfaces();
        self.cc.step(&mut self.rho, &drift, 1.0, dt)?;
        self.time += dt;
        Ok(())
    }

    pub fn run(&mut self, dt: f64, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Kinetic equation on torus x velocity interval
// ---------------------------------------------------------------------------

/// Strang-split solver for the kinetic equation
/// `d_t f + v d_x f + F d_v f = d_v(friction v f + d_v f)` with
/// `F = kappa K * rho`, on a position torus and a truncated velocity
/// interval. Free transport is exact in Fourier space per velocity row; the
/// force term is conservative upwind; friction and diffusion use the
/// Chang-Cooper substep, so the center-sampled Maxwellian with variance
/// `1/friction` is exactly invariant.
pub struct KineticTorus<T: Scalar + FftNum> {
    period: f64,
    friction: f64,
    kappa: f64,
    nx: usize,
    nv: usize,
    hx: f64,
    hv: f64,
    vmax: f64,
    what: Vec<f64>,
    /// Cell values, `[ix * nv + iv]`; columns (fixed `ix`) are contiguous.
    f: Vec<T>,
    time: f64,
    escaped: f64,
    plan: Spectral1d<T>,
    cc: ChangCooperLine,
    friction_drift: Vec<f64>,
}

impl<T: Scalar + FftNum> KineticTorus<T> {
    pub fn new(
        kernel: &KernelSpec<T>,
        kappa: f64,
        friction: f64,
        nx: usize,
        nv: usize,
        vmax: f64,
        mut initial: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let period = match kernel.domain {
            Domain::Torus { dim: 1, period } => period,
            _ => {
                return Err(Error::Config(
                    "the kinetic solver needs a one-dimensional periodic kernel".into(),
                ))
            }
        };
        if !kernel.is_gradient() {
            return Err(Error::Config("the force convolution needs a gradient kernel".into()));
        }
        if !(friction > 0.0) {
            return Err(Error::Config("friction must be positive".into()));
        }
        if nx < 8 || nx % 2 != 0 || nv < 8 {
            return Err(Error::Config("need at least 8x8 cells, even in x".into()));
        }
        if !(vmax > 0.0) {
            return Err(Error::Config("velocity cutoff must be positive".into()));
        }
        let hx = period / nx as f64;
        let hv = 2.0 * vmax / nv as f64;
        let cc = ChangCooperLine::new(nv, -vmax, vmax)?;
        let friction_drift: Vec<f64> = cc.interfaces().iter().map(|&v| friction * v).collect();
        let mut f = vec![T::zero(); nx * nv];
        let mut mass = 0.0;
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * hx;
            for iv in 0..nv {
                let v = -vmax + (iv as f64 + 0.5) * hv;
                let val = initial(x, v);
                if !(val >= 0.0) {
                    return Err(Error::InvalidDensity(
                        "initial kinetic density must be nonnegative".into(),
                    ));
                }
                f[ix * nv + iv] = T::real(val);
                mass += val;
            }
        }
        mass *= hx * hv;
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("initial mass {mass} is not 1")));
        }
        let what = kernel.potential_coefficients(nx / 2)?;
        Ok(KineticTorus {
            period,
            friction,
            kappa,
            nx,
            nv,
            hx,
            hv,
            vmax,
            what,
            f,
            time: 0.0,
            escaped: 0.0,
            plan: Spectral1d::new(nx),
            cc,
            friction_drift,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn values(&self) -> &[T] {
        &self.f
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nv)
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.nx).map(|i| (i as f64 + 0.5) * self.hx).collect()
    }

    pub fn v_centers(&self) -> Vec<f64> {
        self.cc.centers()
    }

    pub fn mass(&self) -> f64 {
        self.f.iter().map(|v| v.as_f64()).sum::<f64>() * self.hx * self.hv
    }

    pub fn min_value(&self) -> f64 {
        self.f.iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min)
    }

    /// Mass lost through the velocity boundary by the upwind force substep.
    pub fn escaped_mass(&self) -> f64 {
        self.escaped
    }

    pub fn position_marginal(&self) -> TorusProfile<T> {
        let hv = T::real(self.hv);
        let values = (0..self.nx)
            .map(|ix| {
                let mut s = T::zero();
                for iv in 0..self.nv {
                    s += self.f[ix * self.nv + iv];
                }
                s * hv
            })
            .collect();
        TorusProfile { period: self.period, values }
    }

    pub fn velocity_marginal(&self) -> Vec<T> {
        let hx = T::real(self.hx);
        (0..self.nv)
            .map(|iv| {
                let mut s = T::zero();
                for ix in 0..self.nx {
                    s += self.f[ix * self.nv + iv];
                }
                s * hx
            })
            .collect()
    }

    /// `L^1` distance to a reference phase-space density given pointwise.
    pub fn l1_distance_to(&self, mut g: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for ix in 0..self.nx {
            let x = (ix as f64 + 0.5) * self.hx;
            for iv in 0..self.nv {
                let v = -self.vmax + (iv as f64 + 0.5) * self.hv;
                acc += (self.f[ix * self.nv + iv].as_f64() - g(x, v)).abs();
            }
        }
        acc * self.hx * self.hv
    }

    /// Velocity-weighted `L^2` distance with weight `exp(beta v^2 / 2)`.
    pub fn weighted_l2_distance_to(&self, beta: f64, mut g: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for ix in 0..self.nx {
            let x = (ix as f64 + 0.5) * self.hx;
            for iv in 0..self.nv {
                let v = -self.vmax + (iv as f64 + 0.5) * self.hv;
                let d = self.f[ix * self.nv + iv].as_f64() - g(x, v);
                acc += d * d * (0.5 * beta * v * v).exp();
            }
        }
        (acc * self.hx * self.hv).sqrt()
    }

    /// Discretely normalized product equilibrium: uniform in position, the
    /// center-sampled Maxwellian with variance `1/friction` in velocity.
    pub fn product_equilibrium(&self) -> impl Fn(f64, f64) -> f64 {
        let beta = self.friction;
        let z: f64 = self
            .cc
            .centers()
            .iter()
            .map(|&v| (-0.5 * beta * v * v).exp())
            .sum::<f64>()
            * self.hv;
        let l = self.period;
        move |_x: f64, v: f64| (-0.5 * beta * v * v).exp() / (z * l)
    }

    fn transport_x(&mut self, s: f64) {
        let l = self.period;
        let mut row = vec![Complex::new(T::zero(), T::zero()); self.nx];
        for iv in 0..self.nv {
            let v = -self.vmax + (iv as f64 + 0.5) * self.hv;
            for ix in 0..self.nx {
                row[ix] = Complex::new(self.f[ix * self.nv + iv], T::zero());
            }
            self.plan.forward_complex(&mut row);
            for (j, c) in row.iter_mut().enumerate() {
                let k = signed_frequency(j, self.nx);
                let phase = -2.0 * PI * k as f64 * v * s / l;
                let rot = Complex::new(T::real(phase.cos()), T::real(phase.sin()));
                *c = *c * rot;
            }
            self.plan.inverse_complex(&mut row);
            for ix in 0..self.nx {
                self.f[ix * self.nv + iv] = row[ix].re;
            }
        }
    }

    /// Self-consistent force `kappa (K * rho)(x)` at the position centers.
    fn force(&self) -> Vec<f64> {
        let rho = self.position_marginal();
        let mut coeffs = self.plan.forward(rho.values());
        let l = self.period;
        for (j, c) in coeffs.iter_mut().enumerate() {
            let k = signed_frequency(j, self.nx);
            let ka = k.unsigned_abs() as usize;
            if ka > self.nx / 2 {
                continue;
            }
            let w = 2.0 * PI * k as f64 / l;
            let s = T::real(-w * l * self.what[ka] * self.kappa);
            *c = Complex::new(c.im * s * T::real(-1.0), c.re * s);
        }
        self.plan
            .inverse_real(&coeffs)
            .iter()
            .map(|v| v.as_f64())
            .collect()
    }

    fn transport_v(&mut self, s: f64) -> Result<()> {
        if self.kappa == 0.0 {
            return Ok(());
        }
        let force = self.force();
        let cfl = force.iter().fold(0.0f64, |a, f| a.max(f.abs())) * s / self.hv;
        if cfl > 1.0 {
            return Err(Error::Numerical(format!(
                "force transport violates its limit at t = {}: cfl {cfl:.3}",
                self.time
            )));
        }
        let nv = self.nv;
        for ix in 0..self.nx {
            let c = force[ix];
            let col = &mut self.f[ix * nv..(ix + 1) * nv];
            let mut flux = vec![T::zero(); nv + 1];
            for (i, fl) in flux.iter_mut().enumerate().skip(1).take(nv - 1) {
                *fl = if c > 0.0 {
                    T::real(c) * col[i - 1]
                } else {
                    T::real(c) * col[i]
                };
            }
            // outflow-only boundaries
            if c > 0.0 {
                flux[nv] = T::real(c) * col[nv - 1];
                self.escaped += c * col[nv - 1].as_f64() * s * self.hx;
            } else if c < 0.0 {
                flux[0] = T::real(c) * col[0];
                self.escaped += -c * col[0].as_f64() * s * self.hx;
            }
            let r = T::real(s / self.hv);
            for i in 0..nv {
                col[i] -= r * (flux[i + 1] - flux[i]);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config("time step must be positive".into()));
        }
        self.transport_x(0.5 * dt);
        self.transport_v(0.5 * dt)?;
        let nv = self.nv;
        for ix in 0..self.nx {
            let col = &mut self.f[ix * nv..(ix + 1) * nv];
            self.cc.step(col, &self.friction_drift, 1.0, dt)?;
        }
        self.transport_v(0.5 * dt)?;
        self.transport_x(0.5 * dt);
        self.time += dt;
        Ok(())
    }

    pub fn run(&mut self, dt: f64, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(dt)?;
        }
        let min = self.min_value();
        if min < -NEG_TOL {
            return Err(Error::Numerical(format!("kinetic density reached {min:.3e}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Gibbs fixed points
// ---------------------------------------------------------------------------

/// Diagnostics of a self-consistency iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointReport {
    pub iterations: usize,
    pub residual_sup: f64,
    /// `beta |kappa| sup|W|`; the map is a contraction when this is below 1.
    pub contraction: f64,
}

/// Picard iteration for the periodic self-consistent density
/// `rho = Z^-1 exp(-beta kappa (W * rho))`.
///
/// `beta` is the friction for kinetic dynamics and 1 for overdamped
/// dynamics. Starts from `initial` or from uniform.
pub fn gibbs_fixed_point_torus<T: Scalar + FftNum>(
    kernel: &KernelSpec<T>,
    kappa: f64,
    beta: f64,
    n: usize,
    initial: Option<&TorusProfile<T>>,
    tol: f64,
    max_iter: usize,
) -> Result<(TorusProfile<T>, FixedPointReport)> {
    let period = match kernel.domain {
        Domain::Torus { dim: 1, period } => period,
        _ => return Err(Error::Config("need a one-dimensional periodic kernel".into())),
    };
    if !kernel.is_gradient() {
        return Err(Error::Config("the fixed point needs a gradient kernel".into()));
    }
    if n < 16 || n % 2 != 0 {
        return Err(Error::Config("need an even grid of at least 16 cells".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config("inverse temperature must be positive".into()));
    }
    let what = kernel.potential_coefficients(n / 2)?;
    let plan = Spectral1d::new(n);
    let h = period / n as f64;
    let mut rho: Vec<f64> = match initial {
        Some(p) => {
            if p.len() != n || (p.period() - period).abs() > 1e-12 * period {
                return Err(Error::GridMismatch("starting profile grid differs".into()));
            }
            validate_density_profile(p)?;
            p.values().iter().map(|v| v.as_f64()).collect()
        }
        None => vec![1.0 / period; n],
    };
    let contraction = beta * kappa.abs() * kernel.potential_sup().unwrap_or(f64::NAN);
    let mut report = FixedPointReport { iterations: 0, residual_sup: f64::INFINITY, contraction };
    for it in 1..=max_iter {
        // W * rho via the convolution multiplier L w_hat_k
        let samples: Vec<T> = rho.iter().map(|&v| T::real(v)).collect();
        let mut coeffs = plan.forward(&samples);
        for (j, c) in coeffs.iter_mut().enumerate() {
            let ka = signed_frequency(j, n).unsigned_abs() as usize;
            let s = if ka <= n / 2 { T::real(period * what[ka]) } else { T::zero() };
            *c = *c * s;
        }
        let conv = plan.inverse_real(&coeffs);
        let mut next: Vec<f64> = conv
            .iter()
            .map(|u| (-beta * kappa * u.as_f64()).exp())
            .collect();
        let mass: f64 = next.iter().sum::<f64>() * h;
        for v in next.iter_mut() {
            *v /= mass;
        }
        let residual = rho
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        rho = next;
        report.iterations = it;
        report.residual_sup = residual;
        if residual <= tol * (1.0 / period).max(rho.iter().fold(0.0f64, |a, &b| a.max(b)))
        {
            let profile =
                TorusProfile::new(period, rho.iter().map(|&v| T::real(v)).collect())?;
            return Ok((profile, report));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        regime: format!("contraction indicator {contraction:.3}"),
    })
}

/// Picard iteration for the confined self-consistent density on a truncated
/// line, `rho = Z^-1 exp(-beta (A + kappa W * rho))`.
///
/// The pair potential is taken from the kernel when it exists in closed form
/// and otherwise integrated from the force with Simpson's rule.
pub fn gibbs_fixed_point_line<T: Scalar>(
    kernel: &KernelSpec<T>,
    kappa: f64,
    beta: f64,
    confinement: Confinement,
    m: usize,
    half_width: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<T>, FixedPointReport)> {
    if !matches!(kernel.domain, Domain::Whole { dim: 1 }) {
        return Err(Error::Config("need a one-dimensional whole-space kernel".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config("inverse temperature must be positive".into()));
    }
    let cc = ChangCooperLine::new(m, -half_width, half_width)?;
    let h = cc.cell_width();
    let zs = cc.centers();
    // pair potential at separations k h, k = 0..m-1
    let mut wtab = vec![0.0f64; m];
    if kernel.potential(&[T::zero()]).is_some() {
        for (k, w) in wtab.iter_mut().enumerate() {
            *w = kernel.potential(&[T::real(k as f64 * h)]).unwrap().as_f64();
        }
    } else {
        // W(a) = -int_0^a force_at_distance
        for k in 1..m {
            let a0 = (k - 1) as f64 * h;
            let f0 = kernel.force_at_distance(T::real(a0)).as_f64();
            let f1 = kernel.force_at_distance(T::real(a0 + 0.5 * h)).as_f64();
            let f2 = kernel.force_at_distance(T::real(a0 + h)).as_f64();
            wtab[k] = wtab[k - 1] - h / 6.0 * (f0 + 4.0 * f1 + f2);
        }
    }
    let wsup = kernel
        .potential_sup()
        .unwrap_or_else(|| wtab.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    let contraction = beta * kappa.abs() * wsup;
    let pot: Vec<f64> = zs.iter().map(|&z| confinement.potential(&[z])).collect();
    let mut rho: Vec<f64> = {
        let mut g: Vec<f64> = pot.iter().map(|&a| (-beta * a).exp()).collect();
        let mass: f64 = g.iter().sum::<f64>() * h;
        if !(mass > 0.0) {
            return Err(Error::Numerical("confinement underflows on this interval".into()));
        }
        for v in g.iter_mut() {
            *v /= mass;
        }
        g
    };
    let mut report = FixedPointReport { iterations: 0, residual_sup: f64::INFINITY, contraction };
    for it in 1..=max_iter {
        let mut next = vec![0.0f64; m];
        for i in 0..m {
            let mut conv = 0.0;
            if kappa != 0.0 && !kernel.is_zero() {
                for (j, r) in rho.iter().enumerate() {
                    conv += wtab[i.abs_diff(j)] * r;
                }
                conv *= h;
            }
            next[i] = (-beta * (pot[i] + kappa * conv)).exp();
        }
        let mass: f64 = next.iter().sum::<f64>() * h;
        for v in next.iter_mut() {
            *v /= mass;
        }
        let residual = rho
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        rho = next;
        report.iterations = it;
        report.residual_sup = residual;
        if residual <= tol * rho.iter().fold(0.0f64, |a, &b| a.max(b)) {
            return Ok((rho.iter().map(|&v| T::real(v)).collect(), report));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        regime: format!("contraction indicator {contraction:.3}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::fit_exp_decay;
    use crate::kernels::{
        hegselmann_krause, mollified_coulomb_torus, mollified_coulomb_whole, zero_kernel,
    };

    const T1: Domain = Domain::Torus { dim: 1, period: 1.0 };

    #[test]
    fn pure_diffusion_damps_modes_exactly() {
        let kernel: KernelSpec<f64> = zero_kernel(T1).unwrap();
        let initial = TorusProfile::from_fn(1.0, 64, |x| {
            1.0 + 0.7 * (2.0 * PI * x).cos() + 0.15 * (6.0 * PI * x).cos()
        })
        .unwrap();
        let mut solver = McKeanVlasovTorus::new(&kernel, 0.0, &initial).unwrap();
        solver.run(0.01, 50).unwrap();
        let c1 = solver.profile().mode_amplitude(1);
        let want = 0.35 * (-4.0 * PI * PI * 0.5f64).exp();
        // the integrating factor is exact; the residual is transform
        // roundoff at the scale of the order-one density
        assert!((c1 - want).abs() < 1e-14, "c1 {c1}, want {want}");
        assert!((solver.mass() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn short_range_repulsion_flattens_the_density() {
        let kernel: KernelSpec<f64> = hegselmann_krause(T1, 0.2).unwrap();
        let initial =
            TorusProfile::from_fn(1.0, 128, |x| 1.0 + 0.8 * (2.0 * PI * x).cos()).unwrap();
        let uniform = TorusProfile::uniform(1.0, 128).unwrap();
        let mut solver = McKeanVlasovTorus::new(&kernel, 3.0, &initial).unwrap();
        let mut dists = vec![solver.profile().l2_distance(&uniform).unwrap()];
        for _ in 0..5 {
            solver.run(5e-4, 200).unwrap();
            dists.push(solver.profile().l2_distance(&uniform).unwrap());
        }
        assert!((solver.mass() - 1.0).abs() < 1e-12);
        assert!(solver.profile().min_value() > -1e-8);
        for w in dists.windows(2) {
            assert!(w[1] < w[0], "distances {dists:?}");
        }
        assert!(dists[5] < 1e-6 * dists[0], "distances {dists:?}");
    }

    #[test]
    fn linearized_decay_rate_matches_the_convolution_multiplier() {
        // mode k relaxes at (2 pi k / L)^2 (1 + kappa w_hat_k); for the
        // periodized mollified Coulomb potential on L = 2 pi the coefficient
        // is exp(-sigma^2 k^2 / 2) / (2 pi k^2) in closed form
        let l = 2.0 * PI;
        let (sigma, kappa) = (0.3, 5.0);
        let kernel: KernelSpec<f64> = mollified_coulomb_torus(1, l, sigma, 64).unwrap();
        let eps = 1e-4;
        let initial =
            TorusProfile::from_fn(l, 64, |x| (1.0 + eps * (2.0 * PI * x / l).cos()) / l).unwrap();
        let mut solver = McKeanVlasovTorus::new(&kernel, kappa, &initial).unwrap();
        let a0 = solver.profile().mode_amplitude(1);
        solver.run(2e-3, 500).unwrap();
        let a1 = solver.profile().mode_amplitude(1);
        let measured = (a0 / a1).ln();
        let w1 = (-0.5f64 * sigma * sigma).exp() / (2.0 * PI);
        let predicted = (2.0 * PI / l).powi(2) * (1.0 + kappa * w1);
        assert!(
            (measured - predicted).abs() < 1e-3 * predicted,
            "measured {measured}, predicted {predicted}"
        );
    }

    #[test]
    fn changcooper_keeps_the_center_sampled_gaussian_stationary() {
        let lambda = 1.0;
        let cc = ChangCooperLine::new(160, -8.0, 8.0).unwrap();
        let drift: Vec<f64> = cc.interfaces().iter().map(|&z| lambda * z).collect();
        let mut rho: Vec<f64> =
            cc.centers().iter().map(|&z| (-0.5 * lambda * z * z).exp()).collect();
        let mass: f64 = rho.iter().sum::<f64>() * cc.cell_width();
        for v in rho.iter_mut() {
            *v /= mass;
        }
        let start = rho.clone();
        for _ in 0..20 {
            cc.step(&mut rho, &drift, 1.0, 0.5).unwrap();
        }
        for (a, b) in rho.iter().zip(&start) {
            // relative in the bulk, absolute in the far tail where the
            // solve's roundoff (scaled by the bulk) dominates
            assert!((a - b).abs() <= 1e-12 + 1e-11 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn confined_line_density_relaxes_to_the_gaussian() {
        let lambda = 2.0f64;
        let half = 8.0 / lambda.sqrt();
        let kernel: KernelSpec<f64> = zero_kernel(Domain::Whole { dim: 1 }).unwrap();
        let mut solver = McKeanVlasovLine::new(
            kernel,
            Confinement::Quadratic { lambda },
            0.0,
            200,
            half,
            |_| 1.0,
        )
        .unwrap();
        solver.run(0.05, 400).unwrap();
        assert!((solver.mass() - 1.0).abs() < 1e-10);
        // stationary vector is the center-sampled Gaussian, exactly
        let zs = solver.centers();
        let mut want: Vec<f64> = zs.iter().map(|&z| (-0.5 * lambda * z * z).exp()).collect();
        let mass: f64 = want.iter().sum::<f64>() * solver.cell_width();
        for v in want.iter_mut() {
            *v /= mass;
        }
        for (a, b) in solver.values().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-9 * b.max(1e-12), "{a} vs {b}");
        }
        assert!((solver.variance() - 1.0 / lambda).abs() < 1e-10);
    }

    #[test]
    fn line_repulsion_widens_the_stationary_profile() {
        let lambda = 1.0;
        let kernel: KernelSpec<f64> = mollified_coulomb_whole(1, 0.3).unwrap();
        let mut solver = McKeanVlasovLine::new(
            kernel,
            Confinement::Quadratic { lambda },
            2.0,
            128,
            8.0,
            |z| (-0.5 * z * z).exp(),
        )
        .unwrap();
        solver.run(0.02, 500).unwrap();
        assert!((solver.mass() - 1.0).abs() < 1e-10);
        assert!(solver.values().iter().all(|v| *v >= 0.0));
        assert!(solver.variance() > 1.0 / lambda, "variance {}", solver.variance());
    }

    #[test]
    fn kinetic_product_equilibrium_is_numerically_stationary() {
        let beta = 1.0;
        let kernel: KernelSpec<f64> = zero_kernel(T1).unwrap();
        let hv = 12.0 / 48.0;
        let z: f64 = (0..48)
            .map(|i| {
                let v: f64 = -6.0 + (i as f64 + 0.5) * hv;
                (-0.5 * beta * v * v).exp()
            })
            .sum::<f64>()
            * hv;
        let mut solver = KineticTorus::new(&kernel, 0.0, beta, 48, 48, 6.0, |_, v| {
            (-0.5 * beta * v * v).exp() / z
        })
        .unwrap();
        let start = solver.values().to_vec();
        solver.run(0.01, 200).unwrap();
        let drift = solver
            .values()
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-12, "drift {drift}");
    }

    #[test]
    fn kinetic_solver_relaxes_both_marginals() {
        let beta = 1.0;
        let kernel: KernelSpec<f64> = zero_kernel(T1).unwrap();
        let beta0 = 2.0;
        let hv = 12.0 / 48.0;
        let z: f64 = (0..48)
            .map(|i| {
                let v: f64 = -6.0 + (i as f64 + 0.5) * hv;
                (-0.5 * beta0 * v * v).exp()
            })
            .sum::<f64>()
            * hv;
        let mut solver = KineticTorus::new(&kernel, 0.0, beta, 48, 48, 6.0, |x, v| {
            (1.0 + 0.8 * (2.0 * PI * x).cos()) * (-0.5 * beta0 * v * v).exp() / z
        })
        .unwrap();
        let a0 = solver.position_marginal().mode_amplitude(1);
        let eq = solver.product_equilibrium();
        let mut times = Vec::new();
        let mut dists = Vec::new();
        for _ in 0..12 {
            solver.run(5e-3, 100).unwrap();
            times.push(solver.time());
            dists.push(solver.weighted_l2_distance_to(beta, &eq));
        }
        assert!((solver.mass() - 1.0).abs() < 1e-10);
        assert!(solver.min_value() > -1e-8);
        assert_eq!(solver.escaped_mass(), 0.0);
        let a1 = solver.position_marginal().mode_amplitude(1);
        assert!(a1 < 0.3 * a0, "mode amplitude {a0} -> {a1}");
        // velocity marginal lands on the discrete Maxwellian
        let zb: f64 = solver
            .v_centers()
            .iter()
            .map(|&v| (-0.5 * beta * v * v).exp())
            .sum::<f64>()
            * hv;
        let l1: f64 = solver
            .velocity_marginal()
            .iter()
            .zip(solver.v_centers())
            .map(|(m, v)| (m - (-0.5 * beta * v * v).exp() / zb).abs())
            .sum::<f64>()
            * hv;
        assert!(l1 < 1e-4, "velocity marginal distance {l1}");
        // phase-space distance decays at a definite exponential rate
        // the early decay is dominated by the velocity-variance mismatch,
        // which relaxes at twice the friction; the slow positional mode sits
        // well below it in this norm
        let fit = fit_exp_decay(&times, &dists, None).unwrap();
        assert!(fit.rate > 0.2 && fit.rate < 3.0, "rate {}", fit.rate);
        assert!(dists[11] < 0.15 * dists[0], "distances {dists:?}");
    }

    #[test]
    fn torus_fixed_point_is_uniform_for_translation_invariant_kernels() {
        // W * uniform is constant, so uniform is always a fixed point; under
        // the contraction condition it is the only one
        let kernel: KernelSpec<f64> = hegselmann_krause(T1, 0.2).unwrap();
        let kappa = 12.5; // kappa beta sup|W| = 0.5
        let starts: Vec<TorusProfile<f64>> = vec![
            TorusProfile::uniform(1.0, 256).unwrap(),
            TorusProfile::from_fn(1.0, 256, |x| 1.0 + 0.5 * (2.0 * PI * x).cos()).unwrap(),
            TorusProfile::from_fn(1.0, 256, |x| 1.0 - 0.5 * (4.0 * PI * x).sin()).unwrap(),
            {
                let raw = TorusProfile::<f64>::from_fn(1.0, 256, |x| {
                    0.2 + (-20.0 * (x - 0.3) * (x - 0.3)).exp()
                })
                .unwrap();
                let mass = raw.mass();
                TorusProfile::new(1.0, raw.values().iter().map(|v| v / mass).collect())
                    .unwrap()
            },
        ];
        let mut profiles = Vec::new();
        for start in &starts {
            let (p, report) =
                gibbs_fixed_point_torus(&kernel, kappa, 1.0, 256, Some(start), 1e-13, 200)
                    .unwrap();
            assert!((report.contraction - 0.5).abs() < 1e-12);
            profiles.push(p);
        }
        for p in &profiles {
            for v in p.values() {
                assert!((v - 1.0).abs() < 1e-9, "value {v}");
            }
        }
        // zero coupling converges immediately
        let (p0, report) =
            gibbs_fixed_point_torus::<f64>(&kernel, 0.0, 1.0, 64, None, 1e-14, 5).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(p0.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn line_fixed_point_matches_the_confined_gaussian_at_zero_coupling() {
        let lambda = 1.5f64;
        let kernel: KernelSpec<f64> = zero_kernel(Domain::Whole { dim: 1 }).unwrap();
        let (rho, _) = gibbs_fixed_point_line(
            &kernel,
            0.0,
            1.0,
            Confinement::Quadratic { lambda },
            256,
            8.0 / lambda.sqrt(),
            1e-14,
            10,
        )
        .unwrap();
        let cc = ChangCooperLine::new(256, -8.0 / lambda.sqrt(), 8.0 / lambda.sqrt()).unwrap();
        let h = cc.cell_width();
        let zs = cc.centers();
        let mass: f64 = zs.iter().map(|&z| (-0.5 * lambda * z * z).exp()).sum::<f64>() * h;
        for (v, z) in rho.iter().zip(&zs) {
            let want = (-0.5 * lambda * z * z).exp() / mass;
            assert!((v - want).abs() <= 1e-12 * want.max(1e-40), "{v} vs {want}");
        }
        let var: f64 = zs.iter().zip(&rho).map(|(z, v)| z * z * v).sum::<f64>() * h;
        assert!((var - 1.0 / lambda).abs() < 1e-9, "variance {var}");
    }

    #[test]
    fn line_fixed_point_is_self_consistent_with_repulsion() {
        let kernel: KernelSpec<f64> = mollified_coulomb_whole(1, 0.3).unwrap();
        let (rho, report) = gibbs_fixed_point_line(
            &kernel,
            1.5,
            1.0,
            Confinement::Quadratic { lambda: 1.0 },
            200,
            8.0,
            1e-13,
            500,
        )
        .unwrap();
        assert!(report.residual_sup <= 1e-13 * rho.iter().fold(0.0f64, |a, &b| a.max(b)));
        let h = 16.0 / 200.0;
        let mass: f64 = rho.iter().sum::<f64>() * h;
        assert!((mass - 1.0).abs() < 1e-12);
        let zs = ChangCooperLine::new(200, -8.0, 8.0).unwrap().centers();
        let var: f64 = zs.iter().zip(&rho).map(|(z, v)| z * z * v).sum::<f64>() * h;
        assert!(var > 1.0, "repulsion should widen the profile, variance {var}");
        // the long-time solver lands on the same profile up to the
        // quadrature mismatch between the two discretizations
        let kernel2: KernelSpec<f64> = mollified_coulomb_whole(1, 0.3).unwrap();
        let mut solver = McKeanVlasovLine::new(
            kernel2,
            Confinement::Quadratic { lambda: 1.0 },
            1.5,
            200,
            8.0,
            |z| (-0.5 * z * z).exp(),
        )
        .unwrap();
        solver.run(0.05, 600).unwrap();
        let sup = solver
            .values()
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 5e-5, "solver vs fixed point sup {sup}");
    }

    #[test]
    fn cell_averages_of_the_interpolant_are_exact() {
        let l = 2.0;
        let profile = TorusProfile::<f64>::from_fn(l, 64, |x| {
            0.5 + 0.3 * (2.0 * PI * x / l).cos() + 0.15 * (4.0 * PI * x / l).sin()
        })
        .unwrap();
        let coarse = profile.cell_averaged(16).unwrap();
        let delta = l / 16.0;
        for (a, v) in coarse.field().values().iter().enumerate() {
            let x0 = a as f64 * delta;
            let x1 = x0 + delta;
            let anti = |x: f64| {
                0.5 * x + 0.3 * (2.0 * PI * x / l).sin() * l / (2.0 * PI)
                    - 0.15 * (4.0 * PI * x / l).cos() * l / (4.0 * PI)
            };
            let want = (anti(x1) - anti(x0)) / delta;
            assert!((v - want).abs() < 1e-13, "cell {a}: {v} vs {want}");
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let whole: KernelSpec<f64> = zero_kernel(Domain::Whole { dim: 1 }).unwrap();
        let flat = TorusProfile::<f64>::uniform(1.0, 64).unwrap();
        assert!(McKeanVlasovTorus::new(&whole, 1.0, &flat).is_err());
        let torus: KernelSpec<f64> = zero_kernel(T1).unwrap();
        let odd = TorusProfile::<f64>::uniform(1.0, 63).unwrap();
        assert!(McKeanVlasovTorus::new(&torus, 1.0, &odd).is_err());
        let unnormalized = TorusProfile::<f64>::from_fn(1.0, 64, |_| 2.0).unwrap();
        assert!(McKeanVlasovTorus::new(&torus, 1.0, &unnormalized).is_err());
        let cc = ChangCooperLine::new(16, -1.0, 1.0).unwrap();
        let mut rho = vec![1.0f64; 16];
        assert!(cc.step(&mut rho, &[0.0; 3], 1.0, 0.1).is_err());
        assert!(KineticTorus::<f64>::new(&torus, 0.0, 0.0, 16, 16, 6.0, |_, _| 1.0).is_err());
    }

    #[test]
    fn advection_limit_aborts_oversized_steps() {
        let kernel: KernelSpec<f64> = hegselmann_krause(T1, 0.2).unwrap();
        let initial =
            TorusProfile::from_fn(1.0, 64, |x| 1.0 + 0.8 * (2.0 * PI * x).cos()).unwrap();
        let mut solver = McKeanVlasovTorus::new(&kernel, 500.0, &initial).unwrap();
        let err = solver.step(0.05).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
