//! Statistical estimators on particle ensembles.
//!
//! Marginal laws are estimated by histograms over ordered tuples of distinct
//! particle indices, so the cell means are unbiased for the corresponding
//! finite-N marginal. Per-realization fields are kept so that quadratic
//! functionals of the mean can have their sampling-noise floor subtracted:
//! for a quadratic form `Q` and independent fields `D_r`,
//! `E Q(mean D) = Q(E D) + noise / R`, and the spread of the `D_r` estimates
//! the noise term unbiasedly. Standard errors of nonlinear functionals come
//! from bootstrap resampling over realizations.

use crate::error::{Error, Result};
use crate::fourier::{wavenumbers, Spectral1d};
use crate::grid::{GridSpec, SignedGridField};
use crate::kernels::KernelSpec;
use crate::norms::QuadraticForm;
use crate::scalar::Scalar;
use crate::sim::EnsembleState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use std::io::Write;

/// Upper bound on histogram deposits per estimate (tuples times realizations).
const MAX_TUPLE_OPS: u128 = 2_000_000_000;

/// Per-realization gridded fields together with their ensemble mean.
pub struct FieldEnsemble<T: Scalar> {
    fields: Vec<SignedGridField<T>>,
    mean: SignedGridField<T>,
    lost: f64,
}

impl<T: Scalar> FieldEnsemble<T> {
    fn build(fields: Vec<SignedGridField<T>>, lost: f64) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Config("need at least one realization".into()))?;
        let mut mean = SignedGridField::zeros(first.spec().clone(), first.order())?;
        let w = T::real(1.0 / fields.len() as f64);
        for f in &fields {
            mean.axpy(w, f)?;
        }
        Ok(FieldEnsemble { fields, mean, lost })
    }

    pub fn mean(&self) -> &SignedGridField<T> {
        &self.mean
    }

    pub fn fields(&self) -> &[SignedGridField<T>] {
        &self.fields
    }

    pub fn realizations(&self) -> usize {
        self.fields.len()
    }

    /// Fraction of tuple weight that fell outside the grid (zero on tori).
    pub fn lost_fraction(&self) -> f64 {
        self.lost
    }

    /// The ensemble restricted to the first `count` realizations. Useful for
    /// convergence studies in the realization count.
    pub fn prefix(&self, count: usize) -> Result<FieldEnsemble<T>> {
        if count == 0 || count > self.fields.len() {
            return Err(Error::Config(format!(
                "prefix of {count} realizations out of {}",
                self.fields.len()
            )));
        }
        FieldEnsemble::build(self.fields[..count].to_vec(), self.lost)
    }

    /// Per-cell standard error of the mean field.
    pub fn cell_se(&self) -> Result<SignedGridField<T>> {
        let r = self.fields.len();
        if r < 2 {
            return Err(Error::Config("cell errors need at least two realizations".into()));
        }
        let mut se = SignedGridField::zeros(self.mean.spec().clone(), self.mean.order())?;
        let inv = 1.0 / (r as f64 * (r as f64 - 1.0));
        for (c, s) in se.values_mut().iter_mut().enumerate() {
            let m = self.mean.values()[c].as_f64();
            let mut acc = 0.0;
            for f in &self.fields {
                let d = f.values()[c].as_f64() - m;
                acc += d * d;
            }
            *s = T::real((acc * inv).sqrt());
        }
        Ok(se)
    }
}

fn tuples_per_realization(n: usize, order: usize) -> u128 {
    (0..order).map(|k| (n - k) as u128).product()
}

/// Histogram estimate of the order-`order` marginal of the particle law,
/// built from ordered tuples of distinct indices. The grid axes must cover
/// one particle's position coordinates, or position and velocity coordinates
/// for order-one estimates on kinetic ensembles.
pub fn estimate_marginal<T: Scalar>(
    ens: &EnsembleState<T>,
    spec: &GridSpec,
    order: usize,
) -> Result<FieldEnsemble<T>> {
    if order == 0 || order > 3 {
        return Err(Error::Config("marginal order must be 1, 2, or 3".into()));
    }
    let dim = ens.dim();
    let phase = spec.axes.len() == 2 * dim;
    if phase {
        if !ens.is_kinetic() {
            return Err(Error::GridMismatch(
                "phase-space grid given for an overdamped ensemble".into(),
            ));
        }
        if order != 1 {
            return Err(Error::Config(
                "phase-space marginals are implemented for order one".into(),
            ));
        }
    } else if spec.axes.len() != dim {
        return Err(Error::GridMismatch(format!(
            "grid has {} axes, particles have {dim} coordinates",
            spec.axes.len()
        )));
    }
    let n = ens.n();
    if n < order {
        return Err(Error::Config(format!("order-{order} marginal needs {order} particles")));
    }
    let tuples = tuples_per_realization(n, order);
    if tuples * ens.realizations() as u128 > MAX_TUPLE_OPS {
        return Err(Error::SizeLimit(format!(
            "marginal estimate needs {} deposits",
            tuples * ens.realizations() as u128
        )));
    }
    let template = SignedGridField::<T>::zeros(spec.clone(), order)?;
    let weight = 1.0 / (tuples as f64 * template.cell_volume());
    let per: Vec<(SignedGridField<T>, u64)> = (0..ens.realizations())
        .into_par_iter()
        .map(|r| {
            let mut field = template.clone();
            let xs = ens.positions_of(r);
            let vs = ens.velocities_of(r);
            let mut point = vec![0.0f64; spec.axes.len()];
            let mut cells = vec![0usize; order];
            let mut lost = 0u64;
            let mut deposit = |tuple: &[usize],
                               field: &mut SignedGridField<T>,
                               cells: &mut [usize],
                               point: &mut [f64]| {
                for (s, &p) in tuple.iter().enumerate() {
                    for a in 0..dim {
                        point[a] = xs[p * dim + a].as_f64();
                    }
                    if phase {
                        let vs = vs.expect("kinetic ensembles carry velocities");
                        for a in 0..dim {
                            point[dim + a] = vs[p * dim + a].as_f64();
                        }
                    }
                    match spec.locate(point) {
                        Some(c) => cells[s] = c,
                        None => {
                            lost += 1;
                            return;
                        }
                    }
                }
                let lin = field.compose(cells);
                field.values_mut()[lin] += T::real(weight);
            };
            match order {
                1 => {
                    for i in 0..n {
                        deposit(&[i], &mut field, &mut cells, &mut point);
                    }
                }
                2 => {
                    for i in 0..n {
                        for j in 0..n {
                            if j != i {
                                deposit(&[i, j], &mut field, &mut cells, &mut point);
                            }
                        }
                    }
                }
                _ => {
                    for i in 0..n {
                        for j in 0..n {
                            if j == i {
                                continue;
                            }
                            for k in 0..n {
                                if k != i && k != j {
                                    deposit(&[i, j, k], &mut field, &mut cells, &mut point);
                                }
                            }
                        }
                    }
                }
            }
            (field, lost)
        })
        .collect();
    let mut fields = Vec::with_capacity(per.len());
    let mut lost = 0u64;
    for (f, l) in per {
        fields.push(f);
        lost += l;
    }
    let lost = lost as f64 / (tuples as f64 * ens.realizations() as f64);
    FieldEnsemble::build(fields, lost)
}

/// Histogram estimate of the pair-force moment
/// `g(x) = integral of K(x - y) M^2(x, y) dy` on a one-dimensional domain:
/// each ordered distinct pair deposits its interaction force into the cell of
/// the first particle. This is the drift integrand of the first marginal
/// evolution equation, estimated without an intermediate pair histogram.
pub fn force_moment<T: Scalar>(
    ens: &EnsembleState<T>,
    kernel: &KernelSpec<T>,
    spec: &GridSpec,
) -> Result<FieldEnsemble<T>> {
    if ens.dim() != 1 || spec.axes.len() != 1 {
        return Err(Error::Config("force moments are implemented in dimension one".into()));
    }
    if ens.domain() != kernel.domain {
        return Err(Error::GridMismatch(
            "ensemble and kernel live on different domains".into(),
        ));
    }
    let n = ens.n();
    if n < 2 {
        return Err(Error::Config("force moments need at least two particles".into()));
    }
    let tuples = tuples_per_realization(n, 2);
    if tuples * ens.realizations() as u128 > MAX_TUPLE_OPS {
        return Err(Error::SizeLimit(format!(
            "force moment needs {} deposits",
            tuples * ens.realizations() as u128
        )));
    }
    let template = SignedGridField::<T>::zeros(spec.clone(), 1)?;
    let scale = T::real(1.0 / (tuples as f64 * template.cell_volume()));
    let domain = ens.domain();
    let per: Vec<(SignedGridField<T>, u64)> = (0..ens.realizations())
        .into_par_iter()
        .map(|r| {
            let mut field = template.clone();
            let xs = ens.positions_of(r);
            let mut lost = 0u64;
            for i in 0..n {
                let cell = match spec.locate(&[xs[i].as_f64()]) {
                    Some(c) => c,
                    None => {
                        lost += n as u64 - 1;
                        continue;
                    }
                };
                let mut acc = T::zero();
                for j in 0..n {
                    if j != i {
                        acc += kernel.force1(domain.separation(xs[i], xs[j]));
                    }
                }
                field.values_mut()[cell] += acc * scale;
            }
            (field, lost)
        })
        .collect();
    let mut fields = Vec::with_capacity(per.len());
    let mut lost = 0u64;
    for (f, l) in per {
        fields.push(f);
        lost += l;
    }
    let lost = lost as f64 / (tuples as f64 * ens.realizations() as f64);
    FieldEnsemble::build(fields, lost)
}

/// A quadratic functional of the ensemble mean, with its sampling-noise
/// floor subtracted.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub label: String,
    /// `Q` of the mean difference field; biased upward by sampling noise.
    pub naive_squared: f64,
    /// Unbiased estimate of `Q` of the expected difference; can go slightly
    /// negative when the truth sits at the noise floor.
    pub unbiased_squared: f64,
    /// The subtracted noise term, an estimate of the floor of `naive_squared`.
    pub noise_squared: f64,
    /// Bootstrap standard error of `unbiased_squared`.
    pub se: f64,
}

impl NormStats {
    /// The unbiased estimate clipped to zero and returned on the norm scale.
    pub fn norm(&self) -> f64 {
        self.unbiased_squared.max(0.0).sqrt()
    }
}

/// Evaluates `Q(mean field - reference)` with unbiased noise subtraction and
/// a bootstrap standard error over realizations.
pub fn norm_against_reference<T: Scalar>(
    ens: &FieldEnsemble<T>,
    reference: &SignedGridField<T>,
    form: &dyn QuadraticForm<T>,
    bootstrap: usize,
    seed: u64,
) -> Result<NormStats> {
    let r = ens.fields.len();
    if r < 2 {
        return Err(Error::Config("noise subtraction needs at least two realizations".into()));
    }
    if bootstrap < 2 {
        return Err(Error::Config("need at least two bootstrap resamples".into()));
    }
    let diffs: Vec<SignedGridField<T>> = ens
        .fields
        .iter()
        .map(|f| f.sub(reference))
        .collect::<Result<_>>()?;
    let q_each: Vec<f64> = diffs.iter().map(|d| form.eval(d)).collect::<Result<_>>()?;
    let rf = r as f64;
    // Q is quadratic, so sum_r Q(D_r - mean) = sum_r Q(D_r) - R Q(mean)
    let estimate = |idx: &[usize]| -> Result<(f64, f64)> {
        let mut mean = SignedGridField::zeros(reference.spec().clone(), reference.order())?;
        let w = T::real(1.0 / rf);
        for &i in idx {
            mean.axpy(w, &diffs[i])?;
        }
        let q_mean = form.eval(&mean)?;
        let q_sum: f64 = idx.iter().map(|&i| q_each[i]).sum();
        let spread = (q_sum - rf * q_mean).max(0.0);
        Ok((q_mean, q_mean - spread / (rf * (rf - 1.0))))
    };
    let all: Vec<usize> = (0..r).collect();
    let (naive, unbiased) = estimate(&all)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    let mut idx = vec![0usize; r];
    for _ in 0..bootstrap {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..r);
        }
        let (_, u) = estimate(&idx)?;
        acc += u;
        acc2 += u * u;
    }
    let b = bootstrap as f64;
    let var = ((acc2 / b - (acc / b) * (acc / b)) * b / (b - 1.0)).max(0.0);
    Ok(NormStats {
        label: form.label(),
        naive_squared: naive,
        unbiased_squared: unbiased,
        noise_squared: naive - unbiased,
        se: var.sqrt(),
    })
}

/// Unbiased estimate of the sampling-noise term `E Q(mean - E mean)` of an
/// ensemble's mean field; subtract it when the field serves as a reference.
pub fn noise_floor<T: Scalar>(
    ens: &FieldEnsemble<T>,
    form: &dyn QuadraticForm<T>,
) -> Result<f64> {
    let r = ens.fields.len();
    if r < 2 {
        return Err(Error::Config("noise floors need at least two realizations".into()));
    }
    let q_mean = form.eval(&ens.mean)?;
    let mut q_sum = 0.0;
    for f in &ens.fields {
        q_sum += form.eval(f)?;
    }
    let rf = r as f64;
    Ok(((q_sum - rf * q_mean) / (rf * (rf - 1.0))).max(0.0))
}

/// Pointwise defect between a pair marginal and the product of its own
/// one-particle marginals, with per-cell bootstrap errors.
pub struct FactorizationDefect<T: Scalar> {
    pub defect: SignedGridField<T>,
    pub se: SignedGridField<T>,
}

impl<T: Scalar> FactorizationDefect<T> {
    /// Fraction of cells whose defect is within `sigmas` standard errors.
    pub fn fraction_within(&self, sigmas: f64) -> f64 {
        let mut hits = 0usize;
        for (d, s) in self.defect.values().iter().zip(self.se.values()) {
            let (d, s) = (d.as_f64(), s.as_f64());
            if d.abs() <= sigmas * s || d == 0.0 {
                hits += 1;
            }
        }
        hits as f64 / self.defect.values().len() as f64
    }
}

fn product_defect<T: Scalar>(m2: &SignedGridField<T>) -> Result<SignedGridField<T>> {
    let m1 = m2.marginalize_slot(1)?;
    let per = m2.cells_per_slot();
    let mut out = m2.clone();
    for a in 0..per {
        for b in 0..per {
            out.values_mut()[a * per + b] -= m1.values()[a] * m1.values()[b];
        }
    }
    Ok(out)
}

/// Estimates `M^2 - M^1 (x) M^1` from a pair-marginal ensemble, with
/// bootstrap standard errors that account for the correlation between the
/// pair histogram and the squared one-particle histogram.
pub fn factorization_defect<T: Scalar>(
    pairs: &FieldEnsemble<T>,
    bootstrap: usize,
    seed: u64,
) -> Result<FactorizationDefect<T>> {
    if pairs.mean.order() != 2 {
        return Err(Error::Config("factorization defects need an order-two marginal".into()));
    }
    let r = pairs.fields.len();
    if r < 2 || bootstrap < 2 {
        return Err(Error::Config(
            "factorization defects need two realizations and two resamples".into(),
        ));
    }
    let defect = product_defect(&pairs.mean)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 2);
    let cells = defect.values().len();
    let mut acc = vec![0.0f64; cells];
    let mut acc2 = vec![0.0f64; cells];
    let w = T::real(1.0 / r as f64);
    for _ in 0..bootstrap {
        let mut mean2 = SignedGridField::zeros(pairs.mean.spec().clone(), 2)?;
        for _ in 0..r {
            mean2.axpy(w, &pairs.fields[rng.gen_range(0..r)])?;
        }
        let d = product_defect(&mean2)?;
        for (c, v) in d.values().iter().enumerate() {
            let v = v.as_f64();
            acc[c] += v;
            acc2[c] += v * v;
        }
    }
    let b = bootstrap as f64;
    let mut se = SignedGridField::zeros(defect.spec().clone(), 2)?;
    for (c, s) in se.values_mut().iter_mut().enumerate() {
        let var = ((acc2[c] / b - (acc[c] / b) * (acc[c] / b)) * b / (b - 1.0)).max(0.0);
        *s = T::real(var.sqrt());
    }
    Ok(FactorizationDefect { defect, se })
}

/// Norms of the first hierarchy equation applied to estimated fields.
#[derive(Debug, Clone, Copy)]
pub struct HierarchyResidual {
    /// Negative-Sobolev norm of `d/dt M^1 - rhs`.
    pub residual: f64,
    pub time_scale: f64,
    pub diffusion_scale: f64,
    pub interaction_scale: f64,
}

/// Residual of the first marginal evolution equation on the periodic line,
/// without confinement:
/// `d/dt M^1 = M^1'' - kappa (N-1)/N (g)'` with `g` the pair-force moment.
/// The time derivative is the centered difference of `m1` at `t - dt`,
/// `t + dt`; all terms are compared in the `H^{-ell}` Fourier proxy norm.
pub fn bbgky_residual_m1<T: Scalar + rustfft::FftNum>(
    kappa: f64,
    n_particles: usize,
    m1_past: &SignedGridField<T>,
    m1_now: &SignedGridField<T>,
    m1_next: &SignedGridField<T>,
    force_moment: &SignedGridField<T>,
    dt: f64,
    ell: usize,
) -> Result<HierarchyResidual> {
    for f in [m1_past, m1_now, m1_next, force_moment] {
        if !f.same_grid(m1_now) || f.order() != 1 || f.spec().axes.len() != 1 {
            return Err(Error::GridMismatch(
                "hierarchy residuals need matching one-axis, order-one fields".into(),
            ));
        }
    }
    if n_particles < 2 {
        return Err(Error::Config("hierarchy residuals need at least two particles".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("the centered difference needs a positive step".into()));
    }
    let axis = &m1_now.spec().axes[0];
    let n = axis.cells;
    let period = axis.hi - axis.lo;
    let fft = Spectral1d::<T>::new(n);
    let to_c64 = |f: &SignedGridField<T>| -> Vec<Complex<f64>> {
        fft.forward(f.values())
            .into_iter()
            .map(|c| Complex::new(c.re.as_f64(), c.im.as_f64()))
            .collect()
    };
    let past = to_c64(m1_past);
    let now = to_c64(m1_now);
    let next = to_c64(m1_next);
    let g = to_c64(force_moment);
    let ws = wavenumbers(n, period);
    let strength = kappa * (n_particles as f64 - 1.0) / n_particles as f64;
    let mut res2 = 0.0;
    let mut time2 = 0.0;
    let mut diff2 = 0.0;
    let mut inter2 = 0.0;
    for k in 0..n {
        let w = ws[k];
        let sym = (1.0 + w * w).powi(-(ell as i32));
        let dtm = (next[k] - past[k]) / (2.0 * dt);
        let lap = -w * w * now[k];
        let drift = -strength * Complex::new(0.0, w) * g[k];
        let res = dtm - lap - drift;
        res2 += sym * res.norm_sqr();
        time2 += sym * dtm.norm_sqr();
        diff2 += sym * lap.norm_sqr();
        inter2 += sym * drift.norm_sqr();
    }
    Ok(HierarchyResidual {
        residual: res2.sqrt(),
        time_scale: time2.sqrt(),
        diffusion_scale: diff2.sqrt(),
        interaction_scale: inter2.sqrt(),
    })
}

/// One row of a result table.
#[derive(Debug, Clone)]
pub struct Record {
    pub quantity: String,
    pub n: usize,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub norm: String,
    pub grid: String,
    pub seed: u64,
}

pub const RECORD_HEADER: &str = "quantity,n,t,value,stderr,norm,grid,seed";

/// Writes records as CSV under [`RECORD_HEADER`]. Text fields must not
/// contain separators; values are written in shortest round-trip form.
pub fn write_records_csv<W: Write>(w: &mut W, records: &[Record]) -> Result<()> {
    writeln!(w, "{RECORD_HEADER}")?;
    for rec in records {
        for text in [&rec.quantity, &rec.norm, &rec.grid] {
            if text.contains(',') || text.contains('\n') {
                return Err(Error::Format(format!("field {text:?} contains a separator")));
            }
        }
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{},{},{}",
            rec.quantity, rec.n, rec.t, rec.value, rec.stderr, rec.norm, rec.grid, rec.seed
        )?;
    }
    Ok(())
}

/// Compact, comma-free description of a grid, for result tables.
pub fn grid_label(spec: &GridSpec) -> String {
    spec.axes
        .iter()
        .map(|a| {
            let kind = match a.kind {
                crate::grid::AxisKind::Position => 'x',
                crate::grid::AxisKind::Velocity => 'v',
            };
            format!("{kind}{}[{}:{}]", a.cells, a.lo, a.hi)
        })
        .collect::<Vec<_>>()
        .join("|")
}
