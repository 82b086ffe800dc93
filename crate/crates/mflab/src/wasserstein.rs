//! Quadratic Wasserstein distances between one-dimensional gridded densities.
//!
//! Piecewise-constant densities have piecewise-linear quantile functions, so
//! `W2^2 = integral_0^1 (Qa - Qb)^2 dq` is integrated exactly segment by
//! segment. On the circle the transport may wind, which adds one scalar
//! degree of freedom: a vertical offset `alpha` of the cumulative mass. The
//! offset cost is convex, so a ternary search finds the optimum.

use crate::error::{Error, Result};
use crate::grid::{AxisKind, GriddedDensity};
use crate::scalar::Scalar;

/// Piecewise-linear quantile function of a 1-D density; zero-mass cells are
/// dropped, so segments all carry positive mass.
struct Quantile {
    /// Cumulative mass at segment starts, strictly increasing, plus final 1.
    cum: Vec<f64>,
    /// Left position of each segment.
    lo: Vec<f64>,
    /// Position advance per unit mass within each segment.
    slope: Vec<f64>,
}

impl Quantile {
    fn build<T: Scalar>(density: &GriddedDensity<T>) -> Result<Self> {
        let field = density.field();
        let spec = field.spec();
        if field.order() != 1 || spec.axes.len() != 1 {
            return Err(Error::Config(
                "transport distances need one-axis, order-one densities".into(),
            ));
        }
        if spec.axes[0].kind != AxisKind::Position {
            return Err(Error::Config("transport distances act on position axes".into()));
        }
        let axis = &spec.axes[0];
        let w = axis.width();
        let mut raw: Vec<f64> = field.values().iter().map(|v| v.as_f64().max(0.0) * w).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDensity("density has no mass".into()));
        }
        for m in &mut raw {
            *m /= total;
        }
        let mut cum = vec![0.0];
        let mut lo = Vec::new();
        let mut slope = Vec::new();
        let mut acc = 0.0;
        for (i, &m) in raw.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            acc += m;
            lo.push(axis.lo + i as f64 * w);
            slope.push(w / m);
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(Quantile { cum, lo, slope })
    }

    fn segments(&self) -> usize {
        self.lo.len()
    }

    /// Segment index containing mass coordinate `q` in `[0, 1)`.
    fn segment(&self, q: f64) -> usize {
        // last i with cum[i] <= q
        match self.cum[..self.segments()]
            .binary_search_by(|c| c.partial_cmp(&q).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Affine form `Q(q) = a + b q` valid on the segment containing `q`.
    fn affine_at(&self, q: f64) -> (f64, f64) {
        let i = self.segment(q);
        (self.lo[i] - self.cum[i] * self.slope[i], self.slope[i])
    }
}

/// `integral_{q0}^{q1} (a + b q)^2 dq`.
fn quad_segment(a: f64, b: f64, q0: f64, q1: f64) -> f64 {
    a * a * (q1 - q0) + a * b * (q1 * q1 - q0 * q0) + b * b * (q1 * q1 * q1 - q0 * q0 * q0) / 3.0
}

fn merged_breaks(a: &Quantile, b: &Quantile, shift: f64, period: Option<f64>) -> Vec<f64> {
    let mut breaks: Vec<f64> = Vec::with_capacity(a.cum.len() + 3 * b.cum.len());
    breaks.extend_from_slice(&a.cum);
    let winds: &[f64] = if period.is_some() { &[-1.0, 0.0, 1.0] } else { &[0.0] };
    for &c in &b.cum {
        for &m in winds {
            let q = c + shift + m;
            if q > 0.0 && q < 1.0 {
                breaks.push(q);
            }
        }
    }
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    breaks
}

/// `integral_0^1 (Qa(q) - Qb~(q - shift))^2 dq` with `Qb~` the periodically
/// extended quantile when `period` is given (`Qb~(t + 1) = Qb~(t) + period`).
fn coupling_cost(a: &Quantile, b: &Quantile, shift: f64, period: Option<f64>) -> f64 {
    let breaks = merged_breaks(a, b, shift, period);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (q0, q1) = (w[0], w[1]);
        if q1 - q0 < 1e-300 {
            continue;
        }
        let qm = 0.5 * (q0 + q1);
        let (aa, ba) = a.affine_at(qm);
        let t = qm - shift;
        let wind = t.floor();
        let (mut ab, bb) = b.affine_at(t - wind);
        // unwound form: Qb~(q - shift) = Qb(q - shift - wind) + wind * L
        ab += -bb * (shift + wind) + wind * period.unwrap_or(0.0);
        total += quad_segment(aa - ab, ba - bb, q0, q1);
    }
    total
}

/// Quadratic Wasserstein distance between densities on the real line. The
/// grids may differ.
pub fn w2_line<T: Scalar>(a: &GriddedDensity<T>, b: &GriddedDensity<T>) -> Result<f64> {
    let qa = Quantile::build(a)?;
    let qb = Quantile::build(b)?;
    Ok(coupling_cost(&qa, &qb, 0.0, None).max(0.0).sqrt())
}

/// Quadratic Wasserstein distance on a circle. Both densities must live on
/// the same periodic interval; transport may wind around.
pub fn w2_circle<T: Scalar>(a: &GriddedDensity<T>, b: &GriddedDensity<T>) -> Result<f64> {
    let (sa, sb) = (a.spec(), b.spec());
    let (axa, axb) = (&sa.axes[0], &sb.axes[0]);
    if (axa.lo - axb.lo).abs() > 1e-12 || (axa.hi - axb.hi).abs() > 1e-12 {
        return Err(Error::Config(
            "circular transport needs densities on the same periodic interval".into(),
        ));
    }
    let period = axa.hi - axa.lo;
    let qa = Quantile::build(a)?;
    let qb = Quantile::build(b)?;
    let h = |alpha: f64| coupling_cost(&qa, &qb, alpha, Some(period));
    // the offset cost is convex; one winding either way always suffices
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if h(m1) <= h(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(h(0.5 * (lo + hi)).max(0.0).sqrt())
}
