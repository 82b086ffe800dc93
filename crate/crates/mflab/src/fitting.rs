//! Weighted least-squares fits for scaling exponents and relaxation rates.
//!
//! All fits run in log space. When per-point standard errors accompany the
//! data they set the weights through the delta method
//! `se(log y) = se(y) / y`, and the reported parameter errors are rescaled by
//! the residual chi-square, so a misestimated error scale degrades gracefully.
//! Values indistinguishable from zero at two standard errors should be
//! floored with `floor_at_noise` before fitting; the flags say which points
//! carry no signal.

use crate::error::{Error, Result};

/// Two-parameter linear fit `v = a + b u` in transformed coordinates.
#[derive(Debug, Clone, Copy)]
struct Linear {
    a: f64,
    b: f64,
    se_a: f64,
    se_b: f64,
    r_squared: f64,
}

fn linear_weighted(u: &[f64], v: &[f64], w: &[f64]) -> Result<Linear> {
    let n = u.len();
    if n < 3 {
        return Err(Error::Config(format!("fit needs at least 3 points, got {n}")));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        s += w[i];
        sx += w[i] * u[i];
        sy += w[i] * v[i];
        sxx += w[i] * u[i] * u[i];
        sxy += w[i] * u[i] * v[i];
    }
    let det = s * sxx - sx * sx;
    if det.abs() < 1e-14 * s * sxx.max(1e-300) {
        return Err(Error::Numerical("degenerate abscissas in fit".into()));
    }
    let b = (s * sxy - sx * sy) / det;
    let a = (sxx * sy - sx * sxy) / det;
    let mut chi2 = 0.0;
    let mut tot = 0.0;
    let vbar = sy / s;
    for i in 0..n {
        let r = v[i] - a - b * u[i];
        chi2 += w[i] * r * r;
        tot += w[i] * (v[i] - vbar) * (v[i] - vbar);
    }
    let s2 = chi2 / (n - 2) as f64;
    let r_squared = if tot > 0.0 { 1.0 - chi2 / tot } else { 1.0 };
    Ok(Linear {
        a,
        b,
        se_a: (s2 * sxx / det).max(0.0).sqrt(),
        se_b: (s2 * s / det).max(0.0).sqrt(),
        r_squared,
    })
}

fn log_weights(y: &[f64], y_se: Option<&[f64]>) -> Vec<f64> {
    match y_se {
        None => vec![1.0; y.len()],
        Some(se) => y
            .iter()
            .zip(se)
            .map(|(&yi, &si)| {
                if si > 0.0 {
                    (yi / si).powi(2)
                } else {
                    // exact points: weight as the best observed finite error
                    f64::NAN
                }
            })
            .collect(),
    }
}

fn patch_exact_weights(w: &mut [f64]) {
    let best = w.iter().cloned().filter(|x| x.is_finite()).fold(0.0f64, f64::max);
    let fill = if best > 0.0 { best } else { 1.0 };
    for x in w.iter_mut() {
        if !x.is_finite() {
            *x = fill;
        }
    }
}

/// Result of a power-law fit `y = amplitude * x^exponent`.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub exponent: f64,
    pub exponent_se: f64,
    pub amplitude: f64,
    pub amplitude_se: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Fits `y = C x^p` through `log y = log C + p log x`, dropping nonpositive
/// points. `y_se` sets the weights when given.
pub fn fit_power_law(x: &[f64], y: &[f64], y_se: Option<&[f64]>) -> Result<PowerLaw> {
    if x.len() != y.len() || y_se.is_some_and(|s| s.len() != y.len()) {
        return Err(Error::Config("mismatched fit input lengths".into()));
    }
    let mut w_all = log_weights(y, y_se);
    patch_exact_weights(&mut w_all);
    let (mut u, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..x.len() {
        if x[i] > 0.0 && y[i] > 0.0 {
            u.push(x[i].ln());
            v.push(y[i].ln());
            w.push(w_all[i]);
        }
    }
    let lin = linear_weighted(&u, &v, &w)?;
    Ok(PowerLaw {
        exponent: lin.b,
        exponent_se: lin.se_b,
        amplitude: lin.a.exp(),
        amplitude_se: lin.se_a * lin.a.exp(),
        r_squared: lin.r_squared,
        points_used: u.len(),
    })
}

/// Result of an exponential-decay fit `y = amplitude * exp(-rate t)`.
#[derive(Debug, Clone, Copy)]
pub struct ExpDecay {
    pub rate: f64,
    pub rate_se: f64,
    pub amplitude: f64,
    pub amplitude_se: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Fits `y = A exp(-lambda t)` through `log y = log A - lambda t`.
pub fn fit_exp_decay(t: &[f64], y: &[f64], y_se: Option<&[f64]>) -> Result<ExpDecay> {
    if t.len() != y.len() || y_se.is_some_and(|s| s.len() != y.len()) {
        return Err(Error::Config("mismatched fit input lengths".into()));
    }
    let mut w_all = log_weights(y, y_se);
    patch_exact_weights(&mut w_all);
    let (mut u, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..t.len() {
        if y[i] > 0.0 {
            u.push(t[i]);
            v.push(y[i].ln());
            w.push(w_all[i]);
        }
    }
    let lin = linear_weighted(&u, &v, &w)?;
    Ok(ExpDecay {
        rate: -lin.b,
        rate_se: lin.se_b,
        amplitude: lin.a.exp(),
        amplitude_se: lin.se_a * lin.a.exp(),
        r_squared: lin.r_squared,
        points_used: u.len(),
    })
}

/// Result of the joint fit `y = C n^(-a) exp(-c t)`.
#[derive(Debug, Clone, Copy)]
pub struct SizeTimeFit {
    pub size_exponent: f64,
    pub size_exponent_se: f64,
    pub time_rate: f64,
    pub time_rate_se: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Joint three-parameter fit `log y = log C - a log n - c t` over a set of
/// `(n, t, y)` observations.
pub fn fit_size_time(
    n: &[f64],
    t: &[f64],
    y: &[f64],
    y_se: Option<&[f64]>,
) -> Result<SizeTimeFit> {
    if n.len() != y.len() || t.len() != y.len() || y_se.is_some_and(|s| s.len() != y.len()) {
        return Err(Error::Config("mismatched fit input lengths".into()));
    }
    let mut w_all = log_weights(y, y_se);
    patch_exact_weights(&mut w_all);
    // design rows (1, -log n, -t); coefficients (log C, a, c)
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let mut v = Vec::new();
    let mut w = Vec::new();
    for i in 0..y.len() {
        if n[i] > 0.0 && y[i] > 0.0 {
            rows.push([1.0, -n[i].ln(), -t[i]]);
            v.push(y[i].ln());
            w.push(w_all[i]);
        }
    }
    let m = rows.len();
    if m < 4 {
        return Err(Error::Config(format!("joint fit needs at least 4 points, got {m}")));
    }
    // normal equations
    let mut g = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for i in 0..m {
        for p in 0..3 {
            rhs[p] += w[i] * rows[i][p] * v[i];
            for q in 0..3 {
                g[p][q] += w[i] * rows[i][p] * rows[i][q];
            }
        }
    }
    let inv = invert3(&g).ok_or_else(|| {
        Error::Numerical("degenerate design in joint size-time fit".into())
    })?;
    let mut beta = [0.0f64; 3];
    for p in 0..3 {
        for q in 0..3 {
            beta[p] += inv[p][q] * rhs[q];
        }
    }
    let mut chi2 = 0.0;
    let mut tot = 0.0;
    let vbar: f64 = w.iter().zip(&v).map(|(wi, vi)| wi * vi).sum::<f64>() / w.iter().sum::<f64>();
    for i in 0..m {
        let fit: f64 = (0..3).map(|p| rows[i][p] * beta[p]).sum();
        chi2 += w[i] * (v[i] - fit) * (v[i] - fit);
        tot += w[i] * (v[i] - vbar) * (v[i] - vbar);
    }
    let s2 = chi2 / (m - 3) as f64;
    Ok(SizeTimeFit {
        size_exponent: beta[1],
        size_exponent_se: (s2 * inv[1][1]).max(0.0).sqrt(),
        time_rate: beta[2],
        time_rate_se: (s2 * inv[2][2]).max(0.0).sqrt(),
        amplitude: beta[0].exp(),
        r_squared: if tot > 0.0 { 1.0 - chi2 / tot } else { 1.0 },
        points_used: m,
    })
}

fn invert3(g: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
        - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
        + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    let scale: f64 = g.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    if det.abs() < 1e-12 * scale.powi(3).max(1e-300) {
        return None;
    }
    let mut inv = [[0.0f64; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            // cofactor expansion; g is symmetric in our use but keep it general
            let (r1, r2) = match p {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c1, c2) = match q {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = g[r1][c1] * g[r2][c2] - g[r1][c2] * g[r2][c1];
            let sign = if (p + q) % 2 == 0 { 1.0 } else { -1.0 };
            inv[q][p] = sign * minor / det;
        }
    }
    Some(inv)
}

/// Noise-floor rule: a value within two standard errors of zero carries no
/// measurable signal; it is replaced by its standard error and flagged.
pub fn floor_at_noise(values: &[f64], ses: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut out = Vec::with_capacity(values.len());
    let mut flags = Vec::with_capacity(values.len());
    for (&v, &s) in values.iter().zip(ses) {
        if v < 2.0 * s {
            out.push(s.max(f64::MIN_POSITIVE));
            flags.push(true);
        } else {
            out.push(v);
            flags.push(false);
        }
    }
    (out, flags)
}
