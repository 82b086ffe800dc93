//! Dense tensor-product grid fields.
//!
//! An order-m field stores values over the m-fold tensor power of a single
//! per-particle grid (the "slot" grid). Slot grids are one axis for
//! position-only problems and two axes (position, velocity) for kinetic ones.
//! Values are cell averages / cell-center samples; quadrature is the midpoint
//! rule, which is what every norm and marginalization below uses.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Hard cap on dense field allocation (number of scalars).
pub const MAX_FIELD_CELLS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    Position,
    Velocity,
}

/// One axis of the per-particle grid: `cells` uniform cells on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub cells: usize,
    pub lo: f64,
    pub hi: f64,
    pub kind: AxisKind,
}

impl AxisSpec {
    pub fn position(cells: usize, lo: f64, hi: f64) -> Self {
        AxisSpec { cells, lo, hi, kind: AxisKind::Position }
    }

    pub fn velocity(cells: usize, lo: f64, hi: f64) -> Self {
        AxisSpec { cells, lo, hi, kind: AxisKind::Velocity }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Cell index of a point, clamped into range; `None` if outside `[lo, hi)`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.lo || x >= self.hi {
            return None;
        }
        let i = ((x - self.lo) / self.width()) as usize;
        Some(i.min(self.cells - 1))
    }

    fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::Config("axis must have at least one cell".into()));
        }
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!(
                "axis bounds [{}, {}) are not a finite nonempty interval",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// The per-particle grid: one or more axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for ax in &axes {
            ax.validate()?;
        }
        Ok(GridSpec { axes })
    }

    /// Uniform 1-D position grid on `[lo, hi)`.
    pub fn line(cells: usize, lo: f64, hi: f64) -> Result<Self> {
        GridSpec::new(vec![AxisSpec::position(cells, lo, hi)])
    }

    /// 1-D position grid covering a torus of the given period, `[0, period)`.
    pub fn torus(cells: usize, period: f64) -> Result<Self> {
        GridSpec::new(vec![AxisSpec::position(cells, 0.0, period)])
    }

    pub fn cells_per_slot(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn slot_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).product()
    }

    /// Decomposes a flattened per-slot cell index into per-axis indices.
    pub fn unflatten_slot(&self, mut c: usize, out: &mut [usize]) {
        for (a, ax) in self.axes.iter().enumerate().rev() {
            out[a] = c % ax.cells;
            c /= ax.cells;
        }
    }

    pub fn flatten_slot(&self, idx: &[usize]) -> usize {
        let mut c = 0;
        for (a, ax) in self.axes.iter().enumerate() {
            debug_assert!(idx[a] < ax.cells);
            c = c * ax.cells + idx[a];
        }
        c
    }

    /// Cell-center coordinates of a flattened per-slot index.
    pub fn slot_center(&self, c: usize, out: &mut [f64]) {
        let mut idx = vec![0usize; self.axes.len()];
        self.unflatten_slot(c, &mut idx);
        for (a, ax) in self.axes.iter().enumerate() {
            out[a] = ax.center(idx[a]);
        }
    }

    /// Flattened cell index of a point, or `None` if any coordinate is outside.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        debug_assert_eq!(point.len(), self.axes.len());
        let mut c = 0;
        for (a, ax) in self.axes.iter().enumerate() {
            c = c * ax.cells + ax.locate(point[a])?;
        }
        Some(c)
    }
}

/// Dense, possibly signed field over the m-fold tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedGridField<T: Scalar> {
    spec: GridSpec,
    order: usize,
    values: Vec<T>,
}

impl<T: Scalar> SignedGridField<T> {
    pub fn new(spec: GridSpec, order: usize, values: Vec<T>) -> Result<Self> {
        let n = checked_len(&spec, order)?;
        if values.len() != n {
            return Err(Error::GridMismatch(format!(
                "expected {n} values for order {order}, got {}",
                values.len()
            )));
        }
        Ok(SignedGridField { spec, order, values })
    }

    pub fn zeros(spec: GridSpec, order: usize) -> Result<Self> {
        let n = checked_len(&spec, order)?;
        Ok(SignedGridField { spec, order, values: vec![T::zero(); n] })
    }

    /// Builds a field by evaluating `f` at cell centers. The argument is the
    /// concatenated center coordinates of all slots.
    pub fn from_fn(spec: GridSpec, order: usize, mut f: impl FnMut(&[f64]) -> T) -> Result<Self> {
        let mut field = SignedGridField::zeros(spec, order)?;
        let k = field.spec.axes.len();
        let n_slot = field.spec.cells_per_slot();
        let mut coords = vec![0.0; k * order];
        let mut slots = vec![0usize; order];
        for lin in 0..field.values.len() {
            field.decompose(lin, &mut slots);
            for s in 0..order {
                let base = s * k;
                field.spec.slot_center(slots[s], &mut coords[base..base + k]);
            }
            let _ = n_slot;
            field.values[lin] = f(&coords);
        }
        Ok(field)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn cells_per_slot(&self) -> usize {
        self.spec.cells_per_slot()
    }

    /// Quadrature volume of one cell of the full m-fold grid.
    pub fn cell_volume(&self) -> f64 {
        self.spec.slot_volume().powi(self.order as i32)
    }

    /// Decomposes a linear index into per-slot flattened cell indices.
    pub fn decompose(&self, mut lin: usize, slots: &mut [usize]) {
        let n = self.cells_per_slot();
        for s in (0..self.order).rev() {
            slots[s] = lin % n;
            lin /= n;
        }
    }

    pub fn compose(&self, slots: &[usize]) -> usize {
        let n = self.cells_per_slot();
        let mut lin = 0;
        for &c in slots {
            debug_assert!(c < n);
            lin = lin * n + c;
        }
        lin
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.spec == other.spec
    }

    pub fn integrate(&self) -> T {
        let vol = T::real(self.cell_volume());
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v;
        }
        acc * vol
    }

    /// Integrates out slot `slot`, producing an order m-1 field.
    pub fn marginalize_slot(&self, slot: usize) -> Result<Self> {
        if self.order < 1 || slot >= self.order {
            return Err(Error::Config(format!(
                "cannot marginalize slot {slot} of an order-{} field",
                self.order
            )));
        }
        if self.order == 1 {
            return Err(Error::Config(
                "marginalizing the last slot yields a scalar; use integrate()".into(),
            ));
        }
        let n = self.cells_per_slot();
        let vol = T::real(self.spec.slot_volume());
        let mut out = SignedGridField::zeros(self.spec.clone(), self.order - 1)?;
        let mut slots = vec![0usize; self.order];
        for lin in 0..self.values.len() {
            self.decompose(lin, &mut slots);
            let mut reduced = 0usize;
            for (s, &c) in slots.iter().enumerate() {
                if s != slot {
                    reduced = reduced * n + c;
                }
            }
            out.values[reduced] += self.values[lin];
        }
        for v in &mut out.values {
            *v *= vol;
        }
        Ok(out)
    }

    /// Reorders the particle slots: output slot `s` carries input slot `perm[s]`.
    pub fn permute_slots(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.order {
            return Err(Error::Config("permutation length must equal order".into()));
        }
        let mut seen = vec![false; self.order];
        for &p in perm {
            if p >= self.order || seen[p] {
                return Err(Error::Config("invalid slot permutation".into()));
            }
            seen[p] = true;
        }
        let mut out = SignedGridField::zeros(self.spec.clone(), self.order)?;
        let mut slots = vec![0usize; self.order];
        let mut src = vec![0usize; self.order];
        for lin in 0..out.values.len() {
            out.decompose(lin, &mut slots);
            for s in 0..self.order {
                src[perm[s]] = slots[s];
            }
            out.values[lin] = self.values[self.compose(&src)];
        }
        Ok(out)
    }

    /// Averages the field over all slot permutations. Guarded to small orders;
    /// the dense m! sweep is intentional, symmetrization is only used on toys.
    pub fn symmetrize(&self) -> Result<Self> {
        if self.order > 6 {
            return Err(Error::SizeLimit("symmetrization supported for order <= 6".into()));
        }
        let perms = permutations(self.order);
        let mut out = SignedGridField::zeros(self.spec.clone(), self.order)?;
        for perm in &perms {
            let p = self.permute_slots(perm)?;
            for (o, v) in out.values.iter_mut().zip(p.values.iter()) {
                *o += *v;
            }
        }
        let inv = T::real(1.0 / perms.len() as f64);
        for v in &mut out.values {
            *v *= inv;
        }
        Ok(out)
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= a;
        }
        out
    }

    pub fn axpy(&mut self, a: T, other: &Self) -> Result<()> {
        if !self.same_grid(other) || self.order != other.order {
            return Err(Error::GridMismatch("axpy operands differ".into()));
        }
        for (v, &w) in self.values.iter_mut().zip(other.values.iter()) {
            *v += a * w;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(T::real(-1.0), other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> T {
        let vol = T::real(self.cell_volume());
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v.abs();
        }
        acc * vol
    }

    pub fn l2_norm(&self) -> T {
        let vol = T::real(self.cell_volume());
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v * v;
        }
        (acc * vol).sqrt()
    }

    /// Block-averages an order-1 field onto a coarser grid whose cell counts
    /// divide the fine ones axis by axis.
    pub fn block_average(&self, coarse: &GridSpec) -> Result<Self> {
        if self.order != 1 {
            return Err(Error::Config("block averaging is defined for order-1 fields".into()));
        }
        if coarse.axes.len() != self.spec.axes.len() {
            return Err(Error::GridMismatch("coarse grid has different axis count".into()));
        }
        let mut factors = Vec::with_capacity(coarse.axes.len());
        for (f, c) in self.spec.axes.iter().zip(coarse.axes.iter()) {
            if (f.lo - c.lo).abs() > 1e-12 * (1.0 + f.lo.abs())
                || (f.hi - c.hi).abs() > 1e-12 * (1.0 + f.hi.abs())
                || f.kind != c.kind
            {
                return Err(Error::GridMismatch("coarse grid covers a different domain".into()));
            }
            if f.cells % c.cells != 0 {
                return Err(Error::GridMismatch(
                    "coarse cell count must divide fine cell count".into(),
                ));
            }
            factors.push(f.cells / c.cells);
        }
        let mut out = SignedGridField::zeros(coarse.clone(), 1)?;
        let k = self.spec.axes.len();
        let mut idx = vec![0usize; k];
        let mut cidx = vec![0usize; k];
        let weight = T::real(1.0 / factors.iter().product::<usize>() as f64);
        for lin in 0..self.values.len() {
            self.spec.unflatten_slot(lin, &mut idx);
            for a in 0..k {
                cidx[a] = idx[a] / factors[a];
            }
            out.values[coarse.flatten_slot(&cidx)] += self.values[lin] * weight;
        }
        Ok(out)
    }
}

fn checked_len(spec: &GridSpec, order: usize) -> Result<usize> {
    if order == 0 {
        return Err(Error::Config("field order must be at least 1".into()));
    }
    let n = spec.cells_per_slot();
    let mut total: usize = 1;
    for _ in 0..order {
        total = total
            .checked_mul(n)
            .filter(|&t| t <= MAX_FIELD_CELLS)
            .ok_or_else(|| {
                Error::SizeLimit(format!(
                    "order-{order} field over {n} cells per slot exceeds {MAX_FIELD_CELLS} values"
                ))
            })?;
    }
    Ok(total)
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        // next_permutation
        let mut i = m.wrapping_sub(1);
        while i > 0 && cur[i - 1] >= cur[i] {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        let mut j = m - 1;
        while cur[j] <= cur[i - 1] {
            j -= 1;
        }
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Nonnegative unit-mass field.
///
/// The wrapper certifies, at construction time, that values are nonnegative
/// up to `neg_tol` (tiny negative cells are clamped) and that the midpoint
/// mass is 1 within `mass_tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity<T: Scalar> {
    field: SignedGridField<T>,
}

pub const DENSITY_NEG_TOL: f64 = 1e-9;
pub const DENSITY_MASS_TOL: f64 = 1e-8;

impl<T: Scalar> GriddedDensity<T> {
    pub fn new(field: SignedGridField<T>) -> Result<Self> {
        Self::with_tolerances(field, DENSITY_NEG_TOL, DENSITY_MASS_TOL)
    }

    pub fn with_tolerances(mut field: SignedGridField<T>, neg_tol: f64, mass_tol: f64) -> Result<Self> {
        let neg = T::real(neg_tol);
        for v in field.values_mut() {
            if *v < T::zero() {
                if *v < -neg {
                    return Err(Error::InvalidDensity(format!(
                        "negative cell value {:.3e} below tolerance -{neg_tol:.1e}",
                        v.as_f64()
                    )));
                }
                *v = T::zero();
            }
        }
        let mass = field.integrate().as_f64();
        if (mass - 1.0).abs() > mass_tol {
            return Err(Error::InvalidDensity(format!(
                "mass {mass:.12} deviates from 1 beyond {mass_tol:.1e}"
            )));
        }
        Ok(GriddedDensity { field })
    }

    /// Uniform density on the grid.
    pub fn uniform(spec: GridSpec, order: usize) -> Result<Self> {
        let slot_measure: f64 = spec.axes.iter().map(|a| a.hi - a.lo).product();
        let value = T::real(slot_measure.powi(-(order as i32)));
        let field = SignedGridField::from_fn(spec, order, |_| value)?;
        GriddedDensity::new(field)
    }

    /// Builds and normalizes a density from nonnegative samples of `f`.
    pub fn from_unnormalized(spec: GridSpec, order: usize, f: impl FnMut(&[f64]) -> T) -> Result<Self> {
        let mut field = SignedGridField::from_fn(spec, order, f)?;
        let mass = field.integrate();
        if mass <= T::zero() {
            return Err(Error::InvalidDensity("unnormalized density has nonpositive mass".into()));
        }
        let inv = T::one() / mass;
        for v in field.values_mut() {
            *v *= inv;
        }
        GriddedDensity::new(field)
    }

    pub fn field(&self) -> &SignedGridField<T> {
        &self.field
    }

    pub fn into_field(self) -> SignedGridField<T> {
        self.field
    }

    pub fn spec(&self) -> &GridSpec {
        self.field.spec()
    }

    pub fn order(&self) -> usize {
        self.field.order()
    }

    pub fn values(&self) -> &[T] {
        self.field.values()
    }

    pub fn mass(&self) -> T {
        self.field.integrate()
    }

    pub fn marginalize_slot(&self, slot: usize) -> Result<Self> {
        GriddedDensity::new(self.field.marginalize_slot(slot)?)
    }
}

// ---------------------------------------------------------------------------
// Serialization: versioned flat binary and CSV.
// ---------------------------------------------------------------------------

const FIELD_MAGIC: &[u8; 8] = b"MFLABF1\n";

impl<T: Scalar> SignedGridField<T> {
    /// Writes the versioned flat binary layout:
    /// magic, order, axis count, per-axis (cells, lo, hi, kind), values (f64 LE).
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&(self.spec.axes.len() as u32).to_le_bytes())?;
        for ax in &self.spec.axes {
            w.write_all(&(ax.cells as u64).to_le_bytes())?;
            w.write_all(&ax.lo.to_le_bytes())?;
            w.write_all(&ax.hi.to_le_bytes())?;
            let kind: u8 = match ax.kind {
                AxisKind::Position => 0,
                AxisKind::Velocity => 1,
            };
            w.write_all(&[kind])?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad field magic / unsupported version".into()));
        }
        let order = read_u32(r)? as usize;
        let n_axes = read_u32(r)? as usize;
        if n_axes == 0 || n_axes > 16 {
            return Err(Error::Format("unreasonable axis count".into()));
        }
        let mut axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let cells = read_u64(r)? as usize;
            let lo = read_f64(r)?;
            let hi = read_f64(r)?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let kind = match kind[0] {
                0 => AxisKind::Position,
                1 => AxisKind::Velocity,
                _ => return Err(Error::Format("unknown axis kind".into())),
            };
            axes.push(AxisSpec { cells, lo, hi, kind });
        }
        let spec = GridSpec::new(axes)?;
        let count = read_u64(r)? as usize;
        let expected = checked_len(&spec, order)?;
        if count != expected {
            return Err(Error::Format(format!(
                "value count {count} does not match grid ({expected})"
            )));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(T::real(read_f64(r)?));
        }
        SignedGridField::new(spec, order, values)
    }

    /// CSV export for small grids: one row per cell, per-slot axis indices
    /// then the value. Shortest-roundtrip float formatting keeps output
    /// byte-stable across runs.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.values.len() > 1 << 20 {
            return Err(Error::SizeLimit("CSV export limited to 2^20 cells".into()));
        }
        writeln!(w, "# mflab-field v1")?;
        writeln!(w, "# order={} axes={}", self.order, self.spec.axes.len())?;
        for ax in &self.spec.axes {
            writeln!(
                w,
                "# axis cells={} lo={:?} hi={:?} kind={}",
                ax.cells,
                ax.lo,
                ax.hi,
                match ax.kind {
                    AxisKind::Position => "position",
                    AxisKind::Velocity => "velocity",
                }
            )?;
        }
        let k = self.spec.axes.len();
        let mut header: Vec<String> = Vec::new();
        for s in 0..self.order {
            for a in 0..k {
                header.push(format!("i{s}_{a}"));
            }
        }
        header.push("value".into());
        writeln!(w, "{}", header.join(","))?;
        let mut slots = vec![0usize; self.order];
        let mut idx = vec![0usize; k];
        for lin in 0..self.values.len() {
            self.decompose(lin, &mut slots);
            let mut row: Vec<String> = Vec::with_capacity(self.order * k + 1);
            for &c in &slots {
                self.spec.unflatten_slot(c, &mut idx);
                for &i in &idx {
                    row.push(i.to_string());
                }
            }
            row.push(format!("{:?}", self.values[lin].as_f64()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(cells: usize) -> GridSpec {
        GridSpec::torus(cells, 1.0).unwrap()
    }

    #[test]
    fn quadrature_of_constant_is_domain_measure() {
        let f = SignedGridField::<f64>::from_fn(unit_grid(8), 2, |_| 3.0).unwrap();
        assert!((f.integrate() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn marginalization_consistency_for_product_field() {
        let g = unit_grid(6);
        let a = SignedGridField::<f64>::from_fn(g.clone(), 1, |x| 1.0 + 0.5 * (2.0 * x[0] - 1.0)).unwrap();
        let prod = SignedGridField::<f64>::from_fn(g, 2, |x| {
            (1.0 + 0.5 * (2.0 * x[0] - 1.0)) * (1.0 + 0.5 * (2.0 * x[1] - 1.0))
        })
        .unwrap();
        // integrating out slot 1 recovers a * mass(a)
        let m = prod.marginalize_slot(1).unwrap();
        let mass = a.integrate();
        for (mv, av) in m.values().iter().zip(a.values().iter()) {
            assert!((mv - av * mass).abs() < 1e-13);
        }
    }

    #[test]
    fn permute_and_symmetrize() {
        let g = unit_grid(4);
        let f = SignedGridField::<f64>::from_fn(g, 2, |x| x[0] + 2.0 * x[1]).unwrap();
        let p = f.permute_slots(&[1, 0]).unwrap();
        let sym = f.symmetrize().unwrap();
        let mut slots = vec![0usize; 2];
        for lin in 0..f.values().len() {
            f.decompose(lin, &mut slots);
            let swapped = f.compose(&[slots[1], slots[0]]);
            assert_eq!(p.values()[lin], f.values()[swapped]);
            assert!((sym.values()[lin] - 0.5 * (f.values()[lin] + f.values()[swapped])).abs() < 1e-15);
        }
    }

    #[test]
    fn density_validation_rejects_negative_and_bad_mass() {
        let g = unit_grid(4);
        let bad = SignedGridField::<f64>::from_fn(g.clone(), 1, |x| 1.0 - 3.0 * x[0]).unwrap();
        assert!(GriddedDensity::new(bad).is_err());
        let wrong_mass = SignedGridField::<f64>::from_fn(g, 1, |_| 2.0).unwrap();
        assert!(GriddedDensity::new(wrong_mass).is_err());
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let g = GridSpec::new(vec![
            AxisSpec::position(5, 0.0, 1.0),
            AxisSpec::velocity(3, -2.0, 2.0),
        ])
        .unwrap();
        let f = SignedGridField::<f64>::from_fn(g, 2, |x| x.iter().sum::<f64>().sin()).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = SignedGridField::<f64>::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn block_average_reduces_resolution() {
        let fine = SignedGridField::<f64>::from_fn(unit_grid(8), 1, |x| x[0]).unwrap();
        let coarse = fine.block_average(&unit_grid(4)).unwrap();
        // pairwise means of cell centers
        for (i, v) in coarse.values().iter().enumerate() {
            let expect = (fine.values()[2 * i] + fine.values()[2 * i + 1]) / 2.0;
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn size_guard_trips() {
        let g = unit_grid(64);
        assert!(SignedGridField::<f64>::zeros(g, 5).is_err());
    }
}
