//! Interaction kernels, confinement potentials, and domain geometry.
//!
//! Every shipped kernel is translation invariant: `K(x, y) = K0(x - y)` with
//! the difference taken through the minimal image on tori. Gradient kernels
//! additionally expose their pair potential `W` (with `K0 = -grad W`), which
//! is what the Gibbs-measure code consumes. Structural properties are not
//! trusted from the constructor: `check_case_tags` re-verifies each declared
//! tag numerically and reports measured bounds.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Spatial domain of the particle positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// `dim`-dimensional torus with common period per axis.
    Torus { dim: usize, period: f64 },
    /// Unbounded `dim`-dimensional space (use with a confinement).
    Whole { dim: usize },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::Torus { dim, .. } | Domain::Whole { dim } => dim,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            Domain::Torus { period, .. } => Some(period),
            Domain::Whole { .. } => None,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    /// Reduces one coordinate into the fundamental cell `[0, period)`.
    pub fn reduce<T: Scalar>(&self, x: T) -> T {
        match *self {
            Domain::Torus { period, .. } => {
                let l = T::real(period);
                let mut y = x % l;
                if y < T::zero() {
                    y += l;
                }
                y
            }
            Domain::Whole { .. } => x,
        }
    }

    /// Minimal-image difference per coordinate: on tori the representative of
    /// `a - b` in `[-period/2, period/2]`.
    pub fn separation<T: Scalar>(&self, a: T, b: T) -> T {
        let d = a - b;
        match *self {
            Domain::Torus { period, .. } => {
                let l = T::real(period);
                d - l * (d / l).round()
            }
            Domain::Whole { .. } => d,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Domain::Torus { dim, period } => {
                if dim == 0 || dim > 3 {
                    return Err(Error::Config("torus dimension must be 1..=3".into()));
                }
                if !(period > 0.0) || !period.is_finite() {
                    return Err(Error::Config("torus period must be positive".into()));
                }
            }
            Domain::Whole { dim } => {
                if dim == 0 || dim > 3 {
                    return Err(Error::Config("dimension must be 1..=3".into()));
                }
            }
        }
        Ok(())
    }
}

/// Confining potential `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Confinement {
    None,
    /// `A(x) = lambda |x|^2 / 2`, uniformly convex with constant `lambda`.
    Quadratic { lambda: f64 },
}

impl Confinement {
    pub fn potential<T: Scalar>(&self, x: &[T]) -> T {
        match *self {
            Confinement::None => T::zero(),
            Confinement::Quadratic { lambda } => {
                let mut s = T::zero();
                for &xi in x {
                    s += xi * xi;
                }
                T::real(0.5 * lambda) * s
            }
        }
    }

    /// Writes `grad A(x)` into `out`.
    pub fn gradient<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        match *self {
            Confinement::None => out.fill(T::zero()),
            Confinement::Quadratic { lambda } => {
                let l = T::real(lambda);
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = l * xi;
                }
            }
        }
    }

    pub fn convexity(&self) -> f64 {
        match *self {
            Confinement::None => 0.0,
            Confinement::Quadratic { lambda } => lambda,
        }
    }
}

/// Structural properties a kernel can declare; each is re-checkable numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    Bounded,
    TranslationInvariant,
    /// `K0(-u) = -K0(u)`.
    Odd,
    /// `K = -grad W` for an even pair potential `W`.
    Gradient,
    /// `div K0 = 0` (relevant in dimension >= 2).
    DivergenceFree,
    /// All Fourier coefficients of `W` nonnegative.
    HStable,
}

/// Translation-invariant interaction forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Interaction<T: Scalar> {
    /// No interaction.
    Zero,
    /// Quadratic-well alignment potential `W(u) = (|u| - r)^2` for `|u| <= r`.
    HegselmannKrause { r: T },
    /// Shifted well `W(u) = (|u| - ell)^2 - (r - ell)^2` for `|u| <= r`.
    Barre { r: T, ell: T },
    /// Whole-space mollified Coulomb force `K0(u) = u / (|u|^dim + sigma)`.
    MollifiedCoulombWhole { sigma: T },
    /// Pair potential given by a cosine series on the torus:
    /// `W(u) = c[0] + sum_k 2 c[k] cos(2 pi k . u / L)` over the stored modes.
    FourierPotential {
        /// Modes `k` (canonical half-lattice) and coefficients `c_k`.
        modes: Vec<(Vec<i64>, f64)>,
    },
    /// Divergence-free field from the stream function
    /// `psi = sin(2 pi x / L) sin(2 pi y / L)` in dimension 2.
    CurlStream,
    /// Odd force table on `[0, period/2]` with linear interpolation.
    TabulatedOdd { half: Vec<T>, step: T },
}

/// A named kernel bound to its domain, with declared structure.
#[derive(Debug, Clone)]
pub struct KernelSpec<T: Scalar> {
    pub name: String,
    pub domain: Domain,
    pub interaction: Interaction<T>,
    pub declared: Vec<CaseTag>,
}

impl<T: Scalar> KernelSpec<T> {
    /// Evaluates `K(x, y)` into `out` (length = domain dimension).
    pub fn force(&self, x: &[T], y: &[T], out: &mut [T]) {
        let dim = self.domain.dim();
        debug_assert!(x.len() == dim && y.len() == dim && out.len() == dim);
        match dim {
            1 => out[0] = self.force1(self.domain.separation(x[0], y[0])),
            _ => {
                let mut u = [T::zero(); 3];
                for a in 0..dim {
                    u[a] = self.domain.separation(x[a], y[a]);
                }
                self.force_sep(&u[..dim], out);
            }
        }
    }

    /// Fast path: 1-D force as a function of the minimal-image separation.
    /// Evaluated as `sign(u) * force_at_distance(|u|)`, so oddness holds
    /// bitwise, which the pair-summation exchangeability invariant relies on.
    #[inline]
    pub fn force1(&self, u: T) -> T {
        let a = u.abs();
        if a == T::zero() {
            T::zero()
        } else {
            self.force_at_distance(a) * u.signum()
        }
    }

    /// Magnitude form of the 1-D force: the value of `K0` at separation
    /// `a > 0` taken along the positive direction.
    #[inline]
    pub fn force_at_distance(&self, a: T) -> T {
        match &self.interaction {
            Interaction::Zero => T::zero(),
            Interaction::HegselmannKrause { r } => {
                if a >= *r {
                    T::zero()
                } else {
                    // -W'(a), W = (|u| - r)^2
                    -T::real(2.0) * (a - *r)
                }
            }
            Interaction::Barre { r, ell } => {
                if a >= *r {
                    T::zero()
                } else {
                    -T::real(2.0) * (a - *ell)
                }
            }
            Interaction::MollifiedCoulombWhole { sigma } => a / (a + *sigma),
            Interaction::FourierPotential { modes } => {
                let l = self.domain.period().expect("fourier kernel needs a torus");
                let base = T::real(2.0 * PI / l);
                let mut acc = T::zero();
                for (k, c) in modes {
                    let kf = T::real(k[0] as f64);
                    if k[0] != 0 {
                        // K = -W' ; d/du 2 c cos(b k u) = -2 c b k sin(b k u)
                        acc += T::real(2.0 * *c) * base * kf * (base * kf * a).sin();
                    }
                }
                acc
            }
            Interaction::TabulatedOdd { half, step } => {
                let t = a / *step;
                let j = t.floor();
                let ji = j.as_f64() as usize;
                let w = t - j;
                if ji + 1 < half.len() {
                    half[ji] * (T::one() - w) + half[ji + 1] * w
                } else {
                    half[half.len() - 1]
                }
            }
            Interaction::CurlStream => panic!("curl kernel is two-dimensional"),
        }
    }

    /// Radius beyond which the force vanishes, where known.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.interaction {
            Interaction::Zero => Some(0.0),
            Interaction::HegselmannKrause { r } => Some(r.as_f64()),
            Interaction::Barre { r, .. } => Some(r.as_f64()),
            _ => None,
        }
    }

    /// General-dimension force from a minimal-image separation vector.
    pub fn force_sep(&self, u: &[T], out: &mut [T]) {
        match &self.interaction {
            Interaction::Zero => out.fill(T::zero()),
            Interaction::HegselmannKrause { r } => radial_force(u, out, |a| {
                if a >= *r {
                    T::zero()
                } else {
                    -T::real(2.0) * (a - *r)
                }
            }),
            Interaction::Barre { r, ell } => radial_force(u, out, |a| {
                if a >= *r {
                    T::zero()
                } else {
                    -T::real(2.0) * (a - *ell)
                }
            }),
            Interaction::MollifiedCoulombWhole { sigma } => {
                let dim = u.len() as i32;
                let mut norm = T::zero();
                for &ui in u {
                    norm += ui * ui;
                }
                let norm = norm.sqrt();
                let denom = norm.powi(dim) + *sigma;
                for (o, &ui) in out.iter_mut().zip(u) {
                    *o = ui / denom;
                }
            }
            Interaction::FourierPotential { modes } => {
                let l = self.domain.period().expect("fourier kernel needs a torus");
                let base = T::real(2.0 * PI / l);
                out.fill(T::zero());
                for (k, c) in modes {
                    let mut phase = T::zero();
                    for (a, &ka) in k.iter().enumerate() {
                        phase += base * T::real(ka as f64) * u[a];
                    }
                    let s = phase.sin() * T::real(2.0 * *c);
                    for (a, &ka) in k.iter().enumerate() {
                        out[a] += s * base * T::real(ka as f64);
                    }
                }
            }
            Interaction::CurlStream => {
                let l = self.domain.period().expect("curl kernel needs a torus");
                let a = T::real(2.0 * PI / l);
                out[0] = -a * (a * u[0]).sin() * (a * u[1]).cos();
                out[1] = a * (a * u[0]).cos() * (a * u[1]).sin();
            }
            Interaction::TabulatedOdd { .. } => {
                out[0] = self.force1(u[0]);
            }
        }
    }

    /// Pair potential `W(u)` for gradient kernels.
    pub fn potential(&self, u: &[T]) -> Option<T> {
        let mut sep = [T::zero(); 3];
        for a in 0..u.len() {
            sep[a] = self.domain.separation(u[a], T::zero());
        }
        let u = &sep[..u.len()];
        match &self.interaction {
            Interaction::Zero => Some(T::zero()),
            Interaction::HegselmannKrause { r } => {
                let a = radial(u);
                Some(if a >= *r { T::zero() } else { (a - *r) * (a - *r) })
            }
            Interaction::Barre { r, ell } => {
                let a = radial(u);
                Some(if a >= *r {
                    T::zero()
                } else {
                    (a - *ell) * (a - *ell) - (*r - *ell) * (*r - *ell)
                })
            }
            Interaction::FourierPotential { modes } => {
                let l = self.domain.period().expect("fourier kernel needs a torus");
                let base = T::real(2.0 * PI / l);
                let mut acc = T::zero();
                for (k, c) in modes {
                    if k.iter().all(|&ka| ka == 0) {
                        acc += T::real(*c);
                    } else {
                        let mut phase = T::zero();
                        for (a, &ka) in k.iter().enumerate() {
                            phase += base * T::real(ka as f64) * u[a];
                        }
                        acc += T::real(2.0 * *c) * phase.cos();
                    }
                }
                Some(acc)
            }
            Interaction::MollifiedCoulombWhole { .. }
            | Interaction::CurlStream
            | Interaction::TabulatedOdd { .. } => None,
        }
    }

    pub fn is_gradient(&self) -> bool {
        matches!(
            self.interaction,
            Interaction::Zero
                | Interaction::HegselmannKrause { .. }
                | Interaction::Barre { .. }
                | Interaction::FourierPotential { .. }
        )
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.interaction, Interaction::Zero)
    }

    /// Exact `sup |W|` where known in closed form.
    pub fn potential_sup(&self) -> Option<f64> {
        match &self.interaction {
            Interaction::Zero => Some(0.0),
            Interaction::HegselmannKrause { r } => Some(r.as_f64() * r.as_f64()),
            Interaction::Barre { r, ell } => {
                let (r, ell) = (r.as_f64(), ell.as_f64());
                let w0 = (ell * ell - (r - ell) * (r - ell)).abs();
                Some(w0.max((r - ell) * (r - ell)))
            }
            Interaction::FourierPotential { modes } => {
                // triangle-inequality bound; exact enough for contraction checks
                let mut s = 0.0;
                for (k, c) in modes {
                    s += if k.iter().all(|&ka| ka == 0) { c.abs() } else { 2.0 * c.abs() };
                }
                Some(s)
            }
            _ => None,
        }
    }

    /// Numerical `sup |K0|` over a dense sample of separations.
    pub fn force_sup(&self, samples: usize) -> f64 {
        let dim = self.domain.dim();
        let l = self.domain.period().unwrap_or(20.0);
        let n1 = if dim == 1 { samples } else { (samples as f64).sqrt() as usize + 1 };
        let mut out = vec![T::zero(); dim];
        let mut sup = 0.0f64;
        let mut u = vec![T::zero(); dim];
        let mut idx = vec![0usize; dim];
        let total = n1.pow(dim as u32);
        for lin in 0..total {
            let mut c = lin;
            for a in (0..dim).rev() {
                idx[a] = c % n1;
                c /= n1;
            }
            for a in 0..dim {
                u[a] = T::real(-l / 2.0 + (idx[a] as f64 + 0.5) * l / n1 as f64);
            }
            self.force_sep(&u, &mut out);
            let mag: f64 = out.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            sup = sup.max(mag);
        }
        sup
    }

    /// Cosine-series coefficients `c_k`, `k = 0..=k_max`, of the pair
    /// potential on a 1-D torus: exact for Fourier kernels, discrete Fourier
    /// transform of dense samples otherwise.
    pub fn potential_coefficients(&self, k_max: usize) -> Result<Vec<f64>> {
        let l = self
            .domain
            .period()
            .ok_or_else(|| Error::Config("potential coefficients need a torus".into()))?;
        if self.domain.dim() != 1 {
            return Err(Error::Config("potential coefficients implemented for dim 1".into()));
        }
        if !self.is_gradient() {
            return Err(Error::Config("kernel has no pair potential".into()));
        }
        if let Interaction::FourierPotential { modes } = &self.interaction {
            let mut out = vec![0.0; k_max + 1];
            for (k, c) in modes {
                let ka = k[0].unsigned_abs() as usize;
                if ka <= k_max {
                    out[ka] = *c;
                }
            }
            return Ok(out);
        }
        // dense midpoint DFT; all closed-form potentials here are piecewise
        // smooth, so 1 << 14 samples leave aliasing far below 1e-10
        let n = 1usize << 14;
        let mut out = vec![0.0; k_max + 1];
        let mut w = vec![0.0f64; n];
        for (j, wj) in w.iter_mut().enumerate() {
            let x = (j as f64 + 0.5) * l / n as f64;
            *wj = self.potential(&[T::real(x)]).unwrap().as_f64();
        }
        for (k, ck) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                let x = (j as f64 + 0.5) / n as f64;
                acc += wj * (2.0 * PI * k as f64 * x).cos();
            }
            *ck = acc / n as f64;
        }
        Ok(out)
    }

    /// Writes a CSV table `k, w_hat` of potential coefficients.
    pub fn write_fourier_table<W: std::io::Write>(&self, k_max: usize, w: &mut W) -> Result<()> {
        let coeffs = self.potential_coefficients(k_max)?;
        writeln!(w, "# mflab-fourier-table v1 kernel={}", self.name)?;
        writeln!(w, "k,w_hat")?;
        for (k, c) in coeffs.iter().enumerate() {
            writeln!(w, "{k},{c:?}")?;
        }
        Ok(())
    }

    /// Replaces the interaction by an odd force table (1-D tori only), for
    /// cheap inner loops. The declared tags carry over; `Gradient` is dropped
    /// because the table no longer exposes `W`.
    pub fn tabulated(&self, points: usize) -> Result<KernelSpec<T>> {
        let l = self
            .domain
            .period()
            .ok_or_else(|| Error::Config("force tables need a torus".into()))?;
        if self.domain.dim() != 1 {
            return Err(Error::Config("force tables implemented for dim 1".into()));
        }
        let step = 0.5 * l / points as f64;
        let mut half = Vec::with_capacity(points + 1);
        for i in 0..=points {
            half.push(self.force1(T::real(i as f64 * step)));
        }
        Ok(KernelSpec {
            name: format!("{}-tabulated", self.name),
            domain: self.domain,
            interaction: Interaction::TabulatedOdd { half, step: T::real(step) },
            declared: self
                .declared
                .iter()
                .copied()
                .filter(|t| *t != CaseTag::Gradient && *t != CaseTag::HStable)
                .collect(),
        })
    }
}

fn radial<T: Scalar>(u: &[T]) -> T {
    let mut s = T::zero();
    for &ui in u {
        s += ui * ui;
    }
    s.sqrt()
}

/// `K0(u) = g(|u|) u / |u|` with `g` the (signed) radial profile of `-W'`.
fn radial_force<T: Scalar>(u: &[T], out: &mut [T], g: impl Fn(T) -> T) {
    let a = radial(u);
    if a == T::zero() {
        out.fill(T::zero());
        return;
    }
    let s = g(a) / a;
    for (o, &ui) in out.iter_mut().zip(u) {
        *o = s * ui;
    }
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

pub fn zero_kernel<T: Scalar>(domain: Domain) -> Result<KernelSpec<T>> {
    domain.validate()?;
    Ok(KernelSpec {
        name: "zero".into(),
        domain,
        interaction: Interaction::Zero,
        declared: vec![
            CaseTag::Bounded,
            CaseTag::TranslationInvariant,
            CaseTag::Odd,
            CaseTag::Gradient,
        ],
    })
}

/// Bounded-confidence alignment kernel: `W(u) = (|u| - r)^2` inside radius `r`.
pub fn hegselmann_krause<T: Scalar>(domain: Domain, r: f64) -> Result<KernelSpec<T>> {
    domain.validate()?;
    if !(r > 0.0) {
        return Err(Error::Config("interaction radius r must be positive".into()));
    }
    if let Some(l) = domain.period() {
        if r > 0.5 * l {
            return Err(Error::Config(format!(
                "interaction radius r = {r} exceeds half the torus period {l}"
            )));
        }
    }
    let mut declared = vec![
        CaseTag::Bounded,
        CaseTag::TranslationInvariant,
        CaseTag::Odd,
        CaseTag::Gradient,
    ];
    if domain.is_torus() && domain.dim() == 1 {
        declared.push(CaseTag::HStable);
    }
    Ok(KernelSpec {
        name: "hegselmann-krause".into(),
        domain,
        interaction: Interaction::HegselmannKrause { r: T::real(r) },
        declared,
    })
}

/// Two-scale well `W(u) = (|u| - ell)^2 - (r - ell)^2` inside radius `r`,
/// with `r >= ell > 0`.
pub fn barre<T: Scalar>(domain: Domain, r: f64, ell: f64) -> Result<KernelSpec<T>> {
    domain.validate()?;
    if !(ell > 0.0) || r < ell {
        return Err(Error::Config("need r >= ell > 0".into()));
    }
    if let Some(l) = domain.period() {
        if r > 0.5 * l {
            return Err(Error::Config(format!(
                "interaction radius r = {r} exceeds half the torus period {l}"
            )));
        }
    }
    Ok(KernelSpec {
        name: "barre".into(),
        domain,
        interaction: Interaction::Barre { r: T::real(r), ell: T::real(ell) },
        declared: vec![
            CaseTag::Bounded,
            CaseTag::TranslationInvariant,
            CaseTag::Odd,
            CaseTag::Gradient,
        ],
    })
}

/// Whole-space mollified Coulomb force `K0(u) = u / (|u|^dim + sigma)`.
pub fn mollified_coulomb_whole<T: Scalar>(dim: usize, sigma: f64) -> Result<KernelSpec<T>> {
    let domain = Domain::Whole { dim };
    domain.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::Config("mollification sigma must be positive".into()));
    }
    Ok(KernelSpec {
        name: "mollified-coulomb-whole".into(),
        domain,
        interaction: Interaction::MollifiedCoulombWhole { sigma: T::real(sigma) },
        declared: vec![CaseTag::Bounded, CaseTag::TranslationInvariant, CaseTag::Odd],
    })
}

/// Gaussian-mollified Coulomb pair potential on the torus, in Fourier form:
/// `c_k = exp(-2 pi^2 sigma^2 |k|^2 / L^2) * L^(2-dim) / (4 pi^2 |k|^2)`,
/// `c_0 = 0`. The coefficients are those of the zero-mean solution of
/// `-Delta W0 = delta - 1/L^dim` smoothed by a periodized heat kernel.
pub fn mollified_coulomb_torus<T: Scalar>(
    dim: usize,
    period: f64,
    sigma: f64,
    k_max: usize,
) -> Result<KernelSpec<T>> {
    let domain = Domain::Torus { dim, period };
    domain.validate()?;
    if !(sigma > 0.0) {
        return Err(Error::Config("mollification sigma must be positive".into()));
    }
    if dim > 2 {
        return Err(Error::Config("torus Coulomb implemented for dim 1 and 2".into()));
    }
    if k_max == 0 || k_max > 4096 {
        return Err(Error::Config("k_max must be in 1..=4096".into()));
    }
    let l = period;
    let mut modes = Vec::new();
    // canonical half-lattice: first nonzero coordinate positive
    let range: Vec<i64> = (-(k_max as i64)..=k_max as i64).collect();
    let mut push = |k: Vec<i64>| {
        let k2: f64 = k.iter().map(|&ka| (ka * ka) as f64).sum();
        if k2 == 0.0 {
            return;
        }
        let gauss = (-2.0 * PI * PI * sigma * sigma * k2 / (l * l)).exp();
        let c = gauss * l.powi(2 - dim as i32) / (4.0 * PI * PI * k2);
        modes.push((k, c));
    };
    match dim {
        1 => {
            for k in 1..=k_max as i64 {
                push(vec![k]);
            }
        }
        _ => {
            for &k1 in &range {
                for &k2 in &range {
                    if k1 > 0 || (k1 == 0 && k2 > 0) {
                        push(vec![k1, k2]);
                    }
                }
            }
        }
    }
    Ok(KernelSpec {
        name: "mollified-coulomb-torus".into(),
        domain,
        interaction: Interaction::FourierPotential { modes },
        declared: vec![
            CaseTag::Bounded,
            CaseTag::TranslationInvariant,
            CaseTag::Odd,
            CaseTag::Gradient,
            CaseTag::HStable,
        ],
    })
}

/// Divergence-free odd kernel on the 2-torus from a sinusoidal stream function.
pub fn curl_stream<T: Scalar>(period: f64) -> Result<KernelSpec<T>> {
    let domain = Domain::Torus { dim: 2, period };
    domain.validate()?;
    Ok(KernelSpec {
        name: "curl-stream".into(),
        domain,
        interaction: Interaction::CurlStream,
        declared: vec![
            CaseTag::Bounded,
            CaseTag::TranslationInvariant,
            CaseTag::Odd,
            CaseTag::DivergenceFree,
        ],
    })
}

/// Serializable kernel selection for configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelChoice {
    Zero,
    HegselmannKrause { r: f64 },
    Barre { r: f64, ell: f64 },
    MollifiedCoulombTorus { sigma: f64, k_max: usize },
    MollifiedCoulombWhole { sigma: f64 },
    CurlStream,
}

impl KernelChoice {
    pub fn build<T: Scalar>(&self, domain: Domain) -> Result<KernelSpec<T>> {
        match *self {
            KernelChoice::Zero => zero_kernel(domain),
            KernelChoice::HegselmannKrause { r } => hegselmann_krause(domain, r),
            KernelChoice::Barre { r, ell } => barre(domain, r, ell),
            KernelChoice::MollifiedCoulombTorus { sigma, k_max } => match domain {
                Domain::Torus { dim, period } => mollified_coulomb_torus(dim, period, sigma, k_max),
                _ => Err(Error::Config("torus Coulomb kernel needs a torus domain".into())),
            },
            KernelChoice::MollifiedCoulombWhole { sigma } => {
                mollified_coulomb_whole(domain.dim(), sigma)
            }
            KernelChoice::CurlStream => match domain {
                Domain::Torus { dim: 2, period } => curl_stream(period),
                _ => Err(Error::Config("curl kernel needs a 2-torus".into())),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Tag verification
// ---------------------------------------------------------------------------

/// Result of re-checking one declared tag.
#[derive(Debug, Clone)]
pub struct TagCheck {
    pub tag: CaseTag,
    pub satisfied: bool,
    pub detail: String,
}

/// Numerically re-verifies every declared tag and measures the force bound.
///
/// `kappa`, when given, additionally evaluates the relaxed h-stability
/// predicate `1 + 2 kappa min_k w_hat(k) > 0` for gradient torus kernels.
pub fn check_case_tags<T: Scalar>(spec: &KernelSpec<T>, kappa: Option<f64>) -> Result<Vec<TagCheck>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x7A65);
    let dim = spec.domain.dim();
    let l = spec.domain.period().unwrap_or(10.0);
    let mut checks = Vec::new();
    let sample = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<T> {
        (0..dim).map(|_| T::real(rng.gen_range(-0.5 * l..0.5 * l))).collect()
    };

    for &tag in &spec.declared {
        let check = match tag {
            CaseTag::Bounded => {
                let sup = spec.force_sup(if dim == 1 { 4096 } else { 16384 });
                TagCheck {
                    tag,
                    satisfied: sup.is_finite(),
                    detail: format!("measured sup |K| = {sup:.6e}"),
                }
            }
            CaseTag::TranslationInvariant => {
                let mut worst = 0.0f64;
                for _ in 0..100 {
                    let x = sample(&mut rng);
                    let y = sample(&mut rng);
                    let c = sample(&mut rng);
                    let mut f = vec![T::zero(); dim];
                    let mut g = vec![T::zero(); dim];
                    let xs: Vec<T> = x.iter().zip(&c).map(|(&a, &b)| a + b).collect();
                    let ys: Vec<T> = y.iter().zip(&c).map(|(&a, &b)| a + b).collect();
                    spec.force(&x, &y, &mut f);
                    spec.force(&xs, &ys, &mut g);
                    for a in 0..dim {
                        worst = worst.max((f[a] - g[a]).abs().as_f64());
                    }
                }
                TagCheck {
                    tag,
                    satisfied: worst < 1e-9,
                    detail: format!("max |K(x+c,y+c) - K(x,y)| = {worst:.3e} over 100 samples"),
                }
            }
            CaseTag::Odd => {
                let mut worst = 0.0f64;
                for _ in 0..100 {
                    let u = sample(&mut rng);
                    let neg: Vec<T> = u.iter().map(|&a| -a).collect();
                    let mut f = vec![T::zero(); dim];
                    let mut g = vec![T::zero(); dim];
                    spec.force_sep(&u, &mut f);
                    spec.force_sep(&neg, &mut g);
                    for a in 0..dim {
                        worst = worst.max((f[a] + g[a]).abs().as_f64());
                    }
                }
                TagCheck {
                    tag,
                    satisfied: worst < 1e-9,
                    detail: format!("max |K(-u) + K(u)| = {worst:.3e} over 100 samples"),
                }
            }
            CaseTag::Gradient => {
                // central differences of W at smooth points; the closed-form
                // wells are only piecewise smooth, so skip a hair around the
                // breakpoints where the difference quotient is one-sided
                let h = 1e-5;
                let mut worst = 0.0f64;
                let mut tested = 0;
                while tested < 100 {
                    let u = sample(&mut rng);
                    let r2: f64 = u.iter().map(|&a| a.as_f64().powi(2)).sum::<f64>().sqrt();
                    let near_break = match &spec.interaction {
                        Interaction::HegselmannKrause { r } => {
                            (r2 - r.as_f64()).abs() < 1e-3 || r2 < 1e-3
                        }
                        Interaction::Barre { r, ell } => {
                            (r2 - r.as_f64()).abs() < 1e-3
                                || (r2 - ell.as_f64()).abs() < 1e-3
                                || r2 < 1e-3
                        }
                        _ => false,
                    };
                    if near_break {
                        continue;
                    }
                    tested += 1;
                    let mut f = vec![T::zero(); dim];
                    spec.force_sep(&u, &mut f);
                    for a in 0..dim {
                        let mut up = u.clone();
                        let mut dn = u.clone();
                        up[a] += T::real(h);
                        dn[a] -= T::real(h);
                        let wp = spec.potential(&up).unwrap().as_f64();
                        let wm = spec.potential(&dn).unwrap().as_f64();
                        let fd = -(wp - wm) / (2.0 * h);
                        let scale = 1.0 + f[a].abs().as_f64();
                        worst = worst.max((fd - f[a].as_f64()).abs() / scale);
                    }
                }
                TagCheck {
                    tag,
                    satisfied: worst < 1e-6,
                    detail: format!("max relative |K + grad W| = {worst:.3e} at 100 smooth points"),
                }
            }
            CaseTag::DivergenceFree => {
                let h = 1e-5;
                let mut worst = 0.0f64;
                for _ in 0..100 {
                    let u = sample(&mut rng);
                    let mut div = 0.0;
                    for a in 0..dim {
                        let mut up = u.clone();
                        let mut dn = u.clone();
                        up[a] += T::real(h);
                        dn[a] -= T::real(h);
                        let mut fp = vec![T::zero(); dim];
                        let mut fm = vec![T::zero(); dim];
                        spec.force_sep(&up, &mut fp);
                        spec.force_sep(&dn, &mut fm);
                        div += (fp[a].as_f64() - fm[a].as_f64()) / (2.0 * h);
                    }
                    worst = worst.max(div.abs());
                }
                TagCheck {
                    tag,
                    satisfied: worst < 1e-6,
                    detail: format!("max |div K| = {worst:.3e} over 100 samples"),
                }
            }
            CaseTag::HStable => {
                if spec.domain.dim() != 1 || !spec.domain.is_torus() {
                    let ok = matches!(&spec.interaction, Interaction::FourierPotential { modes }
                        if modes.iter().all(|(_, c)| *c >= -1e-14));
                    TagCheck {
                        tag,
                        satisfied: ok,
                        detail: "checked stored Fourier coefficients".into(),
                    }
                } else {
                    let coeffs = spec.potential_coefficients(256)?;
                    let min = coeffs[1..].iter().cloned().fold(f64::INFINITY, f64::min);
                    let mut detail =
                        format!("min_k w_hat(k) = {min:.6e} over k = 1..=256 (w_hat(0) = {:.3e})", coeffs[0]);
                    let mut satisfied = min >= -1e-12;
                    if let Some(kappa) = kappa {
                        let relaxed = 1.0 + 2.0 * kappa * min;
                        detail.push_str(&format!("; relaxed predicate 1 + 2 kappa min = {relaxed:.6}"));
                        satisfied = relaxed > 0.0;
                    }
                    TagCheck { tag, satisfied, detail }
                }
            }
        };
        checks.push(check);
    }
    Ok(checks)
}
