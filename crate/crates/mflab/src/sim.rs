//! Interacting-particle ensembles and their time stepping.
//!
//! Determinism invariants, all load-bearing for the test suite:
//! - every realization owns its own counter-based generator stream derived
//!   from the master seed, so results are bitwise independent of thread
//!   count and of how many other realizations run alongside;
//! - pairwise forces accumulate in 64-bit fixed point, an order-independent
//!   sum, and each pair is evaluated in a sign-canonical form, so relabeling
//!   particles permutes trajectories bitwise;
//! - for compactly supported kernels on 1-D tori a sorted sliding window
//!   enumerates exactly the pairs the quadratic loop would see with nonzero
//!   force, producing bit-identical accumulators.
//!
//! The self-interaction term `j = i` is included in the drift sum; all
//! admissible kernels are odd, so it contributes exactly zero.

use crate::error::{Error, Result};
use crate::kernels::{CaseTag, Confinement, Domain, KernelSpec};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read as IoRead, Write as IoWrite};

/// Fixed-point scale for pairwise force accumulation: forces are rounded to
/// multiples of `2^-40`, which keeps integer sums exact for any particle
/// count in range while resolving far below every tolerance in use.
pub const FORCE_FIXED_BITS: u32 = 40;
const FIXED_SCALE: f64 = (1u64 << FORCE_FIXED_BITS) as f64;

/// Largest ensemble size accepted, guarding the quadratic pair loop.
pub const MAX_PARTICLES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// First-order dynamics: `dX = drift dt + sqrt(2) dB`.
    Overdamped,
    /// Kinetic dynamics with friction: `dX = V dt`,
    /// `dV = -friction V dt + drift dt + sqrt(2) dB`.
    Underdamped { friction: f64 },
}

impl Dynamics {
    pub fn is_kinetic(&self) -> bool {
        matches!(self, Dynamics::Underdamped { .. })
    }
}

/// The physics of one particle system; time step and ensemble size live
/// elsewhere.
#[derive(Debug, Clone)]
pub struct System<T: Scalar> {
    pub kernel: KernelSpec<T>,
    pub confinement: Confinement,
    /// Coupling strength multiplying the mean pairwise force.
    pub coupling: f64,
    pub dynamics: Dynamics,
}

impl<T: Scalar> System<T> {
    pub fn new(
        kernel: KernelSpec<T>,
        confinement: Confinement,
        coupling: f64,
        dynamics: Dynamics,
    ) -> Result<Self> {
        if !coupling.is_finite() {
            return Err(Error::Config("coupling must be finite".into()));
        }
        if !kernel.declared.contains(&CaseTag::Odd) {
            return Err(Error::Config(
                "pair force assembly requires an odd interaction kernel".into(),
            ));
        }
        if let Dynamics::Underdamped { friction } = dynamics {
            if !(friction >= 0.0) || !friction.is_finite() {
                return Err(Error::Config("friction must be nonnegative".into()));
            }
        }
        Ok(System { kernel, confinement, coupling, dynamics })
    }

    pub fn domain(&self) -> Domain {
        self.kernel.domain
    }

    /// Step-size sanity: hard errors for nonpositive steps, warnings when the
    /// explicit update leaves its accuracy regime.
    pub fn check_dt(&self, dt: f64) -> Result<Vec<String>> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step {dt} must be positive")));
        }
        let mut warnings = Vec::new();
        if let Confinement::Quadratic { lambda } = self.confinement {
            if lambda * dt > 0.5 {
                warnings.push(format!(
                    "confinement stiffness times step = {:.3} exceeds 0.5",
                    lambda * dt
                ));
            }
        }
        if let Dynamics::Underdamped { friction } = self.dynamics {
            if friction * dt > 1.0 {
                warnings.push(format!(
                    "friction times step = {:.3} exceeds 1; the splitting is exact in the \
                     friction but force sampling turns stale",
                    friction * dt
                ));
            }
        }
        Ok(warnings)
    }
}

/// Initial position law, sampled independently per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionLaw {
    /// Uniform on the torus.
    Uniform,
    /// Density `(1 + amplitude cos(2 pi x / L)) / L` per axis on the torus,
    /// sampled by exact inverse-transform with a Newton solve.
    CosineMode { amplitude: f64 },
    /// Centered Gaussian on the whole space.
    GaussianCentered { variance: f64 },
}

/// Initial velocity law, sampled independently per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityLaw {
    /// Gaussian with variance `1 / beta` per axis.
    Maxwellian { beta: f64 },
    Zero,
}

/// Product initial law: positions and, for kinetic runs, velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub position: PositionLaw,
    pub velocity: VelocityLaw,
}

impl PositionLaw {
    fn validate(&self, domain: &Domain) -> Result<()> {
        match (*self, domain) {
            (PositionLaw::Uniform, Domain::Torus { .. }) => Ok(()),
            (PositionLaw::CosineMode { amplitude }, Domain::Torus { .. }) => {
                if amplitude.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config("cosine amplitude must satisfy |a| < 1".into()))
                }
            }
            (PositionLaw::GaussianCentered { variance }, Domain::Whole { .. }) => {
                if variance > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config("initial variance must be positive".into()))
                }
            }
            _ => Err(Error::Config(
                "initial position law does not match the domain kind".into(),
            )),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, domain: &Domain) -> f64 {
        match *self {
            PositionLaw::Uniform => {
                let l = domain.period().unwrap();
                rng.gen::<f64>() * l
            }
            PositionLaw::CosineMode { amplitude } => {
                let l = domain.period().unwrap();
                sample_cosine_mode(rng, l, amplitude)
            }
            PositionLaw::GaussianCentered { variance } => {
                let xi: f64 = StandardNormal.sample(rng);
                variance.sqrt() * xi
            }
        }
    }
}

/// Inverse-transform sample of `(1 + a cos(2 pi x / L)) / L`: Newton with a
/// bisection bracket on the strictly increasing distribution function.
fn sample_cosine_mode(rng: &mut ChaCha8Rng, l: f64, a: f64) -> f64 {
    let u: f64 = rng.gen();
    let two_pi = 2.0 * std::f64::consts::PI;
    let cdf = |x: f64| x / l + a / two_pi * (two_pi * x / l).sin();
    let (mut lo, mut hi) = (0.0f64, l);
    let mut x = u * l;
    for _ in 0..64 {
        let f = cdf(x) - u;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let fp = (1.0 + a * (two_pi * x / l).cos()) / l;
        let mut next = x - f / fp;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * l {
            x = next;
            break;
        }
        x = next;
    }
    x
}

impl VelocityLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            VelocityLaw::Maxwellian { beta } if !(beta > 0.0) => {
                Err(Error::Config("velocity temperature parameter must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            VelocityLaw::Maxwellian { beta } => {
                let xi: f64 = StandardNormal.sample(rng);
                xi / beta.sqrt()
            }
            VelocityLaw::Zero => 0.0,
        }
    }
}

/// An ensemble of independent realizations of the `n`-particle system.
///
/// Positions are stored realization-major (`[r][i][axis]`). Each realization
/// carries its generator; snapshots persist configurations, not generator
/// state.
pub struct EnsembleState<T: Scalar> {
    domain: Domain,
    n: usize,
    dim: usize,
    realizations: usize,
    step: u64,
    time: f64,
    positions: Vec<T>,
    velocities: Option<Vec<T>>,
    rngs: Vec<ChaCha8Rng>,
}

fn stream_rngs(seed: u64, realizations: usize) -> Vec<ChaCha8Rng> {
    (0..realizations)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            rng
        })
        .collect()
}

impl<T: Scalar> EnsembleState<T> {
    /// Draws fresh exactly-independent initial data from the product law.
    pub fn initialize(
        system: &System<T>,
        n: usize,
        realizations: usize,
        law: &InitialLaw,
        seed: u64,
    ) -> Result<Self> {
        let domain = system.domain();
        let dim = domain.dim();
        if n == 0 || n > MAX_PARTICLES {
            return Err(Error::SizeLimit(format!(
                "particle count {n} outside 1..={MAX_PARTICLES}"
            )));
        }
        if realizations == 0 {
            return Err(Error::Config("need at least one realization".into()));
        }
        law.position.validate(&domain)?;
        law.velocity.validate()?;
        let kinetic = system.dynamics.is_kinetic();
        let mut rngs = stream_rngs(seed, realizations);
        let mut positions = vec![T::zero(); realizations * n * dim];
        let mut velocities = if kinetic {
            Some(vec![T::zero(); realizations * n * dim])
        } else {
            None
        };
        for r in 0..realizations {
            let rng = &mut rngs[r];
            let base = r * n * dim;
            for i in 0..n {
                for a in 0..dim {
                    positions[base + i * dim + a] =
                        T::real(law.position.sample(rng, &domain));
                }
                if let Some(vs) = velocities.as_mut() {
                    for a in 0..dim {
                        vs[base + i * dim + a] = T::real(law.velocity.sample(rng));
                    }
                }
            }
        }
        Ok(EnsembleState {
            domain,
            n,
            dim,
            realizations,
            step: 0,
            time: 0.0,
            positions,
            velocities,
            rngs,
        })
    }

    /// Wraps explicit phase-space data; used by tests and snapshot loading.
    pub fn from_parts(
        domain: Domain,
        n: usize,
        realizations: usize,
        positions: Vec<T>,
        velocities: Option<Vec<T>>,
        seed: u64,
    ) -> Result<Self> {
        let dim = domain.dim();
        if positions.len() != realizations * n * dim {
            return Err(Error::Config("position buffer length mismatch".into()));
        }
        if let Some(vs) = &velocities {
            if vs.len() != positions.len() {
                return Err(Error::Config("velocity buffer length mismatch".into()));
            }
        }
        Ok(EnsembleState {
            domain,
            n,
            dim,
            realizations,
            step: 0,
            time: 0.0,
            positions,
            velocities,
            rngs: stream_rngs(seed, realizations),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_kinetic(&self) -> bool {
        self.velocities.is_some()
    }

    /// Positions of one realization, `n * dim` scalars.
    pub fn positions_of(&self, r: usize) -> &[T] {
        let c = self.n * self.dim;
        &self.positions[r * c..(r + 1) * c]
    }

    /// Velocities of one realization, if the dynamics is kinetic.
    pub fn velocities_of(&self, r: usize) -> Option<&[T]> {
        let c = self.n * self.dim;
        self.velocities.as_ref().map(|v| &v[r * c..(r + 1) * c])
    }

    fn check_finite(&self) -> Result<()> {
        for r in 0..self.realizations {
            let finite = self.positions_of(r).iter().all(|x| x.is_finite())
                && self
                    .velocities_of(r)
                    .map(|vs| vs.iter().all(|v| v.is_finite()))
                    .unwrap_or(true);
            if !finite {
                return Err(Error::NonFinite {
                    context: "particle state".into(),
                    t: self.time,
                    realization: Some(r),
                });
            }
        }
        Ok(())
    }
}

/// Reduces a coordinate into `[0, period)`.
#[inline]
fn wrap<T: Scalar>(x: T, l: T) -> T {
    let mut y = x % l;
    if y < T::zero() {
        y += l;
    }
    y
}

/// Minimal image of a difference already in `(-period, period)`.
#[inline]
fn torus_sep<T: Scalar>(dx: T, l: T, half: T) -> T {
    if dx > half {
        dx - l
    } else if dx < -half {
        dx + l
    } else {
        dx
    }
}

#[inline]
fn to_fixed(f: f64) -> i64 {
    (f * FIXED_SCALE).round() as i64
}

#[inline]
fn from_fixed(acc: i64) -> f64 {
    acc as f64 / FIXED_SCALE
}

/// Per-thread scratch buffers for stepping.
struct Scratch<T> {
    fixed: Vec<i64>,
    noise: Vec<T>,
    order: Vec<u32>,
    force_cached: bool,
}

impl<T: Scalar> Scratch<T> {
    fn new(n: usize, dim: usize) -> Self {
        Scratch {
            fixed: vec![0; n * dim],
            noise: vec![T::zero(); n * dim],
            order: Vec::with_capacity(n),
            force_cached: false,
        }
    }
}

/// Whether the sorted-window pair enumeration applies.
fn window_eligible<T: Scalar>(kernel: &KernelSpec<T>, n: usize) -> bool {
    if let (Domain::Torus { dim: 1, period }, Some(radius)) =
        (kernel.domain, kernel.support_radius())
    {
        n >= 64 && radius > 0.0 && radius < 0.49 * period
    } else {
        false
    }
}

/// Accumulates `sum_j K(x_i, x_j)` for every `i` into `fixed`, one i64 per
/// coordinate, scaled by `2^40`. Pairs are evaluated once in sign-canonical
/// form and added antisymmetrically, so the result is exchangeable bitwise.
fn accumulate_pair_forces<T: Scalar>(
    kernel: &KernelSpec<T>,
    xs: &[T],
    n: usize,
    dim: usize,
    fixed: &mut [i64],
    order: &mut Vec<u32>,
    allow_window: bool,
) {
    fixed.fill(0);
    if kernel.is_zero() {
        return;
    }
    if dim == 1 {
        let (l, half) = match kernel.domain {
            Domain::Torus { period, .. } => (T::real(period), T::real(0.5 * period)),
            Domain::Whole { .. } => (T::infinity(), T::infinity()),
        };
        let mut pair = |i: usize, j: usize| {
            let dx = torus_sep(xs[i] - xs[j], l, half);
            let f = to_fixed(kernel.force1(dx).as_f64());
            fixed[i] += f;
            fixed[j] -= f;
        };
        if allow_window && window_eligible(kernel, n) {
            let period = kernel.domain.period().unwrap();
            // window slightly over-covers the support; forces at or beyond
            // the radius are exactly zero, so the pair set with nonzero
            // contribution matches the quadratic loop
            let reach = T::real(kernel.support_radius().unwrap() + 1e-12 * period);
            let lt = T::real(period);
            order.clear();
            order.extend(0..n as u32);
            order.sort_unstable_by(|&p, &q| {
                xs[p as usize]
                    .partial_cmp(&xs[q as usize])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(p.cmp(&q))
            });
            for ii in 0..n {
                let i = order[ii] as usize;
                let xi = xs[i];
                for jj in ii + 1..ii + n {
                    let (j, shift) = if jj < n {
                        (order[jj] as usize, T::zero())
                    } else {
                        (order[jj - n] as usize, lt)
                    };
                    if xs[j] + shift - xi > reach {
                        break;
                    }
                    // canonical orientation by index, same as the quadratic loop
                    let (p, q) = if i < j { (i, j) } else { (j, i) };
                    pair(p, q);
                }
            }
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    pair(i, j);
                }
            }
        }
    } else {
        let mut u = [T::zero(); 3];
        let mut f = [T::zero(); 3];
        let (l, half) = match kernel.domain {
            Domain::Torus { period, .. } => (T::real(period), T::real(0.5 * period)),
            Domain::Whole { .. } => (T::infinity(), T::infinity()),
        };
        for i in 0..n {
            for j in i + 1..n {
                for a in 0..dim {
                    u[a] = torus_sep(xs[i * dim + a] - xs[j * dim + a], l, half);
                }
                kernel.force_sep(&u[..dim], &mut f[..dim]);
                for a in 0..dim {
                    let v = to_fixed(f[a].as_f64());
                    fixed[i * dim + a] += v;
                    fixed[j * dim + a] -= v;
                }
            }
        }
    }
}

/// One Euler-Maruyama step of the overdamped dynamics with caller-supplied
/// additive noise (the full increment `sqrt(2 dt) xi`, one entry per
/// coordinate).
pub fn overdamped_step_with_noise<T: Scalar>(
    system: &System<T>,
    dt: f64,
    xs: &mut [T],
    noise: &[T],
) -> Result<()> {
    let dim = system.domain().dim();
    let n = xs.len() / dim;
    if xs.len() != n * dim || noise.len() != xs.len() {
        return Err(Error::Config("state and noise lengths mismatch".into()));
    }
    let mut scratch = Scratch::new(n, dim);
    step_overdamped(system, dt, xs, noise, &mut scratch);
    Ok(())
}

fn step_overdamped<T: Scalar>(
    system: &System<T>,
    dt: f64,
    xs: &mut [T],
    noise: &[T],
    scratch: &mut Scratch<T>,
) {
    let dim = system.domain().dim();
    let n = xs.len() / dim;
    accumulate_pair_forces(
        &system.kernel,
        xs,
        n,
        dim,
        &mut scratch.fixed,
        &mut scratch.order,
        true,
    );
    let couple = T::real(system.coupling / n as f64);
    let dtt = T::real(dt);
    let mut grad = [T::zero(); 3];
    for i in 0..n {
        system
            .confinement
            .gradient(&xs[i * dim..i * dim + dim], &mut grad[..dim]);
        for a in 0..dim {
            let f = couple * T::real(from_fixed(scratch.fixed[i * dim + a])) - grad[a];
            xs[i * dim + a] += dtt * f + noise[i * dim + a];
        }
    }
    if let Domain::Torus { period, .. } = system.domain() {
        let l = T::real(period);
        for x in xs.iter_mut() {
            *x = wrap(*x, l);
        }
    }
}

/// One splitting step of the kinetic dynamics with caller-supplied standard
/// normals for the exact friction-noise substep: half kick, exact
/// Ornstein-Uhlenbeck update of the velocity over `dt`, free flight, half
/// kick at the new positions.
pub fn underdamped_step_with_normals<T: Scalar>(
    system: &System<T>,
    dt: f64,
    xs: &mut [T],
    vs: &mut [T],
    normals: &[T],
) -> Result<()> {
    let dim = system.domain().dim();
    let n = xs.len() / dim;
    if xs.len() != n * dim || vs.len() != xs.len() || normals.len() != xs.len() {
        return Err(Error::Config("state and noise lengths mismatch".into()));
    }
    let mut scratch = Scratch::new(n, dim);
    step_underdamped(system, dt, xs, vs, normals, &mut scratch);
    Ok(())
}

fn half_kick<T: Scalar>(
    system: &System<T>,
    half_dt: T,
    xs: &[T],
    vs: &mut [T],
    scratch: &mut Scratch<T>,
) {
    let dim = system.domain().dim();
    let n = xs.len() / dim;
    if !scratch.force_cached {
        accumulate_pair_forces(
            &system.kernel,
            xs,
            n,
            dim,
            &mut scratch.fixed,
            &mut scratch.order,
            true,
        );
        scratch.force_cached = true;
    }
    let couple = T::real(system.coupling / n as f64);
    let mut grad = [T::zero(); 3];
    for i in 0..n {
        system
            .confinement
            .gradient(&xs[i * dim..i * dim + dim], &mut grad[..dim]);
        for a in 0..dim {
            let f = couple * T::real(from_fixed(scratch.fixed[i * dim + a])) - grad[a];
            vs[i * dim + a] += half_dt * f;
        }
    }
}

fn step_underdamped<T: Scalar>(
    system: &System<T>,
    dt: f64,
    xs: &mut [T],
    vs: &mut [T],
    normals: &[T],
    scratch: &mut Scratch<T>,
) {
    let friction = match system.dynamics {
        Dynamics::Underdamped { friction } => friction,
        Dynamics::Overdamped => unreachable!("kinetic step on overdamped system"),
    };
    let half_dt = T::real(0.5 * dt);
    half_kick(system, half_dt, xs, vs, scratch);
    // exact friction-noise update: stationary velocity variance 1/friction
    let (decay, amp) = if friction > 0.0 {
        (
            T::real((-friction * dt).exp()),
            T::real(((1.0 - (-2.0 * friction * dt).exp()) / friction).sqrt()),
        )
    } else {
        (T::one(), T::real((2.0 * dt).sqrt()))
    };
    for (v, xi) in vs.iter_mut().zip(normals) {
        *v = decay * *v + amp * *xi;
    }
    let dtt = T::real(dt);
    for (x, v) in xs.iter_mut().zip(vs.iter()) {
        *x += dtt * *v;
    }
    if let Domain::Torus { period, .. } = system.domain() {
        let l = T::real(period);
        for x in xs.iter_mut() {
            *x = wrap(*x, l);
        }
    }
    scratch.force_cached = false;
    half_kick(system, half_dt, xs, vs, scratch);
}

/// Advances every realization by `steps` uniform steps of size `dt`.
/// Realizations evolve independently in parallel; the result does not depend
/// on the thread count.
pub fn advance<T: Scalar>(
    system: &System<T>,
    state: &mut EnsembleState<T>,
    dt: f64,
    steps: u64,
) -> Result<()> {
    system.check_dt(dt)?;
    if state.domain != system.domain() {
        return Err(Error::Config("ensemble domain differs from system domain".into()));
    }
    if state.is_kinetic() != system.dynamics.is_kinetic() {
        return Err(Error::Config(
            "ensemble velocity storage does not match the dynamics".into(),
        ));
    }
    let n = state.n;
    let dim = state.dim;
    let chunk = n * dim;
    let sqrt2dt = (2.0 * dt).sqrt();
    match state.velocities.as_mut() {
        None => {
            state
                .positions
                .par_chunks_mut(chunk)
                .zip(state.rngs.par_iter_mut())
                .for_each_init(
                    || Scratch::new(n, dim),
                    |scratch, (xs, rng)| {
                        for _ in 0..steps {
                            for z in scratch.noise.iter_mut() {
                                let xi: f64 = StandardNormal.sample(rng);
                                *z = T::real(sqrt2dt * xi);
                            }
                            let noise = std::mem::take(&mut scratch.noise);
                            step_overdamped(system, dt, xs, &noise, scratch);
                            scratch.noise = noise;
                        }
                    },
                );
        }
        Some(velocities) => {
            state
                .positions
                .par_chunks_mut(chunk)
                .zip(velocities.par_chunks_mut(chunk))
                .zip(state.rngs.par_iter_mut())
                .for_each_init(
                    || Scratch::new(n, dim),
                    |scratch, ((xs, vs), rng)| {
                        scratch.force_cached = false;
                        for _ in 0..steps {
                            for z in scratch.noise.iter_mut() {
                                let xi: f64 = StandardNormal.sample(rng);
                                *z = T::real(xi);
                            }
                            let normals = std::mem::take(&mut scratch.noise);
                            step_underdamped(system, dt, xs, vs, &normals, scratch);
                            scratch.noise = normals;
                        }
                    },
                );
        }
    }
    state.step += steps;
    state.time += dt * steps as f64;
    state.check_finite()
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

const SNAPSHOT_MAGIC: &[u8; 8] = b"MFLABS1\n";

/// Largest `realizations * particles` written to CSV.
pub const MAX_CSV_ROWS: usize = 100_000;

impl<T: Scalar> EnsembleState<T> {
    /// Binary snapshot of the configuration (positions, velocities, clock).
    /// Generator state is not persisted.
    pub fn write_snapshot<W: IoWrite>(&self, w: &mut W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        let torus = matches!(self.domain, Domain::Torus { .. });
        w.write_all(&[torus as u8, self.is_kinetic() as u8])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.realizations as u64).to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        w.write_all(&self.domain.period().unwrap_or(0.0).to_le_bytes())?;
        for x in &self.positions {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        if let Some(vs) = &self.velocities {
            for v in vs {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a binary snapshot; the generators restart from `seed`.
    pub fn read_snapshot<R: IoRead>(r: &mut R, seed: u64) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let realizations = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let time = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let period = f64::from_le_bytes(b8);
        if dim == 0 || dim > 3 || n == 0 || realizations == 0 {
            return Err(Error::Format("snapshot header out of range".into()));
        }
        let count = realizations
            .checked_mul(n)
            .and_then(|c| c.checked_mul(dim))
            .ok_or_else(|| Error::Format("snapshot size overflow".into()))?;
        let domain = if flags[0] == 1 {
            Domain::Torus { dim, period }
        } else {
            Domain::Whole { dim }
        };
        let mut read_block = |len: usize| -> Result<Vec<T>> {
            let mut out = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                out.push(T::real(f64::from_le_bytes(buf)));
            }
            Ok(out)
        };
        let positions = read_block(count)?;
        let velocities = if flags[1] == 1 { Some(read_block(count)?) } else { None };
        let mut state =
            EnsembleState::from_parts(domain, n, realizations, positions, velocities, seed)?;
        state.step = step;
        state.time = time;
        Ok(state)
    }

    /// Plain-text snapshot, one row per particle; refuses oversized ensembles.
    pub fn write_csv<W: IoWrite>(&self, w: &mut W) -> Result<()> {
        if self.realizations * self.n > MAX_CSV_ROWS {
            return Err(Error::SizeLimit(format!(
                "{} rows exceed the CSV cap {MAX_CSV_ROWS}; use the binary snapshot",
                self.realizations * self.n
            )));
        }
        writeln!(w, "# mflab-snapshot v1 time={:?} step={}", self.time, self.step)?;
        let mut header = String::from("realization,particle");
        for a in 0..self.dim {
            header.push_str(&format!(",x{a}"));
        }
        if self.is_kinetic() {
            for a in 0..self.dim {
                header.push_str(&format!(",v{a}"));
            }
        }
        writeln!(w, "{header}")?;
        for r in 0..self.realizations {
            let xs = self.positions_of(r);
            let vs = self.velocities_of(r);
            for i in 0..self.n {
                let mut row = format!("{r},{i}");
                for a in 0..self.dim {
                    row.push_str(&format!(",{:?}", xs[i * self.dim + a].as_f64()));
                }
                if let Some(vs) = vs {
                    for a in 0..self.dim {
                        row.push_str(&format!(",{:?}", vs[i * self.dim + a].as_f64()));
                    }
                }
                writeln!(w, "{row}")?;
            }
        }
        Ok(())
    }
}
