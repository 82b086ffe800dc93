//! Set partitions and the marginal <-> cumulant correspondence.
//!
//! Marginals determine cumulants through signed sums over set partitions:
//! the order-m cumulant is sum over partitions pi of [m] of
//! (#pi - 1)! (-1)^(#pi - 1) prod_{A in pi} F^{|A|}(z_A), and inverting drops
//! the weight to 1. Cumulants of order >= 2 integrate to zero in every slot;
//! `check_maximality` measures the defect of that identity on actual data.

use crate::error::{Error, Result};
use crate::grid::{GriddedDensity, SignedGridField};
use crate::scalar::Scalar;

pub const MAX_PARTITION_ORDER: usize = 12;

/// A set partition of `{0, .., m-1}` in restricted-growth-string form.
///
/// `rgs[i]` is the block label of element `i`; labels appear in first-use
/// order, so blocks are canonically ordered by their smallest element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    rgs: Vec<u8>,
}

impl Partition {
    pub fn order(&self) -> usize {
        self.rgs.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.rgs.iter().map(|&b| b as usize + 1).max().unwrap_or(0)
    }

    pub fn rgs(&self) -> &[u8] {
        &self.rgs
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_blocks()];
        for (i, &b) in self.rgs.iter().enumerate() {
            out[b as usize].push(i);
        }
        out
    }
}

/// Lazy lexicographic enumeration of all partitions of `{0, .., m-1}`.
pub struct PartitionIter {
    rgs: Vec<u8>,
    maxes: Vec<u8>,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let item = Partition { rgs: self.rgs.clone() };
        // advance to the next restricted growth string
        let m = self.rgs.len();
        let mut i = m;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.rgs[i] <= self.maxes[i - 1] {
                self.rgs[i] += 1;
                self.maxes[i] = self.maxes[i - 1].max(self.rgs[i]);
                for j in i + 1..m {
                    self.rgs[j] = 0;
                    self.maxes[j] = self.maxes[j - 1];
                }
                break;
            }
        }
        Some(item)
    }
}

/// Iterates partitions of `{0, .., m-1}` in canonical (RGS-lexicographic) order.
pub fn partitions(m: usize) -> Result<PartitionIter> {
    if m == 0 || m > MAX_PARTITION_ORDER {
        return Err(Error::SizeLimit(format!(
            "partition order must be in 1..={MAX_PARTITION_ORDER}, got {m}"
        )));
    }
    Ok(PartitionIter { rgs: vec![0; m], maxes: vec![0; m], done: false })
}

/// Materializes all partitions of `{0, .., m-1}` in canonical order.
pub fn enumerate_partitions(m: usize) -> Result<Vec<Partition>> {
    Ok(partitions(m)?.collect())
}

/// Correlation functions (cumulants) of orders `1..=max_order`, all on one grid.
#[derive(Debug, Clone)]
pub struct CorrelationSet<T: Scalar> {
    fields: Vec<SignedGridField<T>>,
}

impl<T: Scalar> CorrelationSet<T> {
    pub fn new(fields: Vec<SignedGridField<T>>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Config("correlation set needs at least order 1".into()));
        }
        for (i, f) in fields.iter().enumerate() {
            if f.order() != i + 1 {
                return Err(Error::Config(format!(
                    "correlation set field {i} has order {}, expected {}",
                    f.order(),
                    i + 1
                )));
            }
            if !f.same_grid(&fields[0]) {
                return Err(Error::GridMismatch("correlation set fields on different grids".into()));
            }
        }
        Ok(CorrelationSet { fields })
    }

    pub fn max_order(&self) -> usize {
        self.fields.len()
    }

    pub fn order(&self, m: usize) -> &SignedGridField<T> {
        &self.fields[m - 1]
    }

    pub fn fields(&self) -> &[SignedGridField<T>] {
        &self.fields
    }
}

/// Defect of the zero-partial-integral identity for one cumulant order.
#[derive(Debug, Clone, Copy)]
pub struct MaximalityDefect {
    pub order: usize,
    pub worst_slot: usize,
    pub defect: f64,
}

/// Accumulates `coeff * prod_{A in pi} factor_{|A|}(z_A)` into `out`.
///
/// All factors live on the same slot grid; `factor(k)` must have order k.
fn add_partition_product<'a, T: Scalar>(
    out: &mut SignedGridField<T>,
    partition: &Partition,
    coeff: T,
    factor: impl Fn(usize) -> &'a SignedGridField<T>,
) {
    let m = out.order();
    let blocks = partition.blocks();
    let n_slot = out.cells_per_slot();
    let mut slots = vec![0usize; m];
    let values_len = out.values().len();
    for lin in 0..values_len {
        out.decompose(lin, &mut slots);
        let mut prod = coeff;
        for block in &blocks {
            let f = factor(block.len());
            let mut idx = 0usize;
            for &e in block {
                idx = idx * n_slot + slots[e];
            }
            prod *= f.values()[idx];
        }
        out.values_mut()[lin] += prod;
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Validation options for marginal families.
#[derive(Debug, Clone, Copy)]
pub struct FamilyTolerances {
    pub mass_tol: f64,
    pub consistency_tol: f64,
    pub symmetry_tol: f64,
}

impl Default for FamilyTolerances {
    fn default() -> Self {
        FamilyTolerances { mass_tol: 1e-10, consistency_tol: 1e-10, symmetry_tol: 1e-10 }
    }
}

/// Checks mass, exchange symmetry (spot transpositions), and partial-integration
/// consistency of a family `F^1, .., F^m`.
pub fn validate_marginal_family<T: Scalar>(
    family: &[GriddedDensity<T>],
    tol: FamilyTolerances,
) -> Result<()> {
    if family.is_empty() {
        return Err(Error::Config("empty marginal family".into()));
    }
    for (i, f) in family.iter().enumerate() {
        let m = i + 1;
        if f.order() != m {
            return Err(Error::Config(format!(
                "family entry {i} has order {}, expected {m}",
                f.order()
            )));
        }
        if !f.field().same_grid(family[0].field()) {
            return Err(Error::GridMismatch("marginal family on mixed grids".into()));
        }
        let mass = f.mass().as_f64();
        if (mass - 1.0).abs() > tol.mass_tol {
            return Err(Error::InvalidDensity(format!(
                "order-{m} marginal has mass {mass:.12}"
            )));
        }
        // spot symmetry check: adjacent transpositions on a deterministic
        // stride of cells
        if m >= 2 {
            let field = f.field();
            let n = field.values().len();
            let stride = (n / 64).max(1);
            let mut slots = vec![0usize; m];
            for s in 0..m - 1 {
                let mut lin = 0;
                while lin < n {
                    field.decompose(lin, &mut slots);
                    slots.swap(s, s + 1);
                    let swapped = field.compose(&slots);
                    let d = (field.values()[lin] - field.values()[swapped]).abs().as_f64();
                    if d > tol.symmetry_tol {
                        return Err(Error::Config(format!(
                            "order-{m} marginal not exchange-symmetric: defect {d:.3e} at transposition ({s},{})",
                            s + 1
                        )));
                    }
                    slots.swap(s, s + 1);
                    lin += stride;
                }
            }
        }
    }
    // partial-integration consistency between consecutive orders
    for m in (2..=family.len()).rev() {
        let reduced = family[m - 1].field().marginalize_slot(m - 1)?;
        let defect = reduced.sub(family[m - 2].field())?.max_abs().as_f64();
        if defect > tol.consistency_tol {
            return Err(Error::Consistency {
                higher: m,
                lower: m - 1,
                defect,
                tol: tol.consistency_tol,
            });
        }
    }
    Ok(())
}

/// Cumulants from marginals: the signed Moebius sum over set partitions.
pub fn cumulants_from_marginals<T: Scalar>(
    family: &[GriddedDensity<T>],
    tol: FamilyTolerances,
) -> Result<CorrelationSet<T>> {
    validate_marginal_family(family, tol)?;
    let spec = family[0].spec().clone();
    let mut out = Vec::with_capacity(family.len());
    for m in 1..=family.len() {
        let mut g = SignedGridField::zeros(spec.clone(), m)?;
        for p in partitions(m)? {
            let b = p.num_blocks();
            let coeff = T::real(factorial(b - 1) * if (b - 1) % 2 == 0 { 1.0 } else { -1.0 });
            add_partition_product(&mut g, &p, coeff, |k| family[k - 1].field());
        }
        out.push(g);
    }
    CorrelationSet::new(out)
}

/// Marginals from cumulants: the unsigned sum over set partitions.
///
/// Returns plain signed fields; wrap in [`GriddedDensity`] to assert the
/// result is a density.
pub fn marginals_from_cumulants<T: Scalar>(corr: &CorrelationSet<T>) -> Result<Vec<SignedGridField<T>>> {
    let spec = corr.order(1).spec().clone();
    let mut out: Vec<SignedGridField<T>> = Vec::with_capacity(corr.max_order());
    for m in 1..=corr.max_order() {
        let mut f = SignedGridField::zeros(spec.clone(), m)?;
        for p in partitions(m)? {
            add_partition_product(&mut f, &p, T::one(), |k| corr.order(k));
        }
        out.push(f);
    }
    Ok(out)
}

/// Largest partial-integration defect `max_l | int G^m dz_l |_inf` per order >= 2.
pub fn check_maximality<T: Scalar>(corr: &CorrelationSet<T>) -> Result<Vec<MaximalityDefect>> {
    let mut out = Vec::new();
    for m in 2..=corr.max_order() {
        let g = corr.order(m);
        let mut worst = MaximalityDefect { order: m, worst_slot: 0, defect: 0.0 };
        for slot in 0..m {
            let reduced = g.marginalize_slot(slot)?;
            let d = reduced.max_abs().as_f64();
            if d > worst.defect {
                worst = MaximalityDefect { order: m, worst_slot: slot, defect: d };
            }
        }
        out.push(worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent Bell-number oracle: Bell triangle recursion.
    fn bell_oracle(n: usize) -> u64 {
        let mut row = vec![1u64];
        let mut bell = vec![1u64];
        for _ in 1..=n {
            let mut next = vec![*row.last().unwrap()];
            for &v in &row {
                next.push(next.last().unwrap() + v);
            }
            bell.push(next[0]);
            row = next;
        }
        bell[n]
    }

    /// Independent partition enumerator: insert element m-1 into each block of
    /// each partition of m-1 elements, or as a singleton.
    fn enumerate_oracle(m: usize) -> Vec<Vec<Vec<usize>>> {
        if m == 1 {
            return vec![vec![vec![0]]];
        }
        let smaller = enumerate_oracle(m - 1);
        let mut out = Vec::new();
        for p in smaller {
            for b in 0..=p.len() {
                let mut q = p.clone();
                if b < p.len() {
                    q[b].push(m - 1);
                } else {
                    q.push(vec![m - 1]);
                }
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn partition_counts_match_bell_numbers() {
        // frozen oracle values for m = 1..8
        let expected: Vec<u64> = (1..=8).map(bell_oracle).collect();
        assert_eq!(expected, vec![1, 2, 5, 15, 52, 203, 877, 4140]);
        for m in 1..=8 {
            let count = partitions(m).unwrap().count() as u64;
            assert_eq!(count, expected[m - 1], "m = {m}");
        }
    }

    #[test]
    fn partition_count_order_twelve() {
        assert_eq!(partitions(12).unwrap().count(), 4_213_597);
    }

    #[test]
    fn order_guard() {
        assert!(partitions(13).is_err());
        assert!(partitions(0).is_err());
    }

    #[test]
    fn canonical_order_for_three_elements() {
        let got: Vec<Vec<Vec<usize>>> =
            enumerate_partitions(3).unwrap().iter().map(|p| p.blocks()).collect();
        let expected = vec![
            vec![vec![0, 1, 2]],
            vec![vec![0, 1], vec![2]],
            vec![vec![0, 2], vec![1]],
            vec![vec![0], vec![1, 2]],
            vec![vec![0], vec![1], vec![2]],
        ];
        assert_eq!(got, expected);
    }

    #[test]
    fn enumeration_matches_recursive_oracle_as_sets() {
        for m in 1..=6 {
            let mut ours: Vec<Vec<Vec<usize>>> =
                enumerate_partitions(m).unwrap().iter().map(|p| p.blocks()).collect();
            let mut oracle = enumerate_oracle(m);
            // canonicalize both for set comparison
            let canon = |p: &mut Vec<Vec<usize>>| {
                for b in p.iter_mut() {
                    b.sort_unstable();
                }
                p.sort();
            };
            ours.iter_mut().for_each(canon);
            oracle.iter_mut().for_each(canon);
            ours.sort();
            oracle.sort();
            assert_eq!(ours, oracle, "m = {m}");
        }
    }

    // -- marginal <-> cumulant machinery -----------------------------------

    fn grid(cells: usize) -> GridSpec {
        GridSpec::torus(cells, 1.0).unwrap()
    }

    /// Random exchangeable family as a mixture of product measures:
    /// exactly symmetric and exactly consistent, in closed form.
    fn random_mixture_family(
        rng: &mut ChaCha8Rng,
        cells: usize,
        max_order: usize,
        components: usize,
    ) -> Vec<GriddedDensity<f64>> {
        let g = grid(cells);
        let mut weights: Vec<f64> = (0..components).map(|_| rng.gen_range(0.1..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        let comps: Vec<Vec<f64>> = (0..components)
            .map(|_| {
                let mut c: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.05..1.0)).collect();
                let mass: f64 = c.iter().sum::<f64>() / cells as f64; // slot measure 1
                c.iter_mut().for_each(|v| *v /= mass);
                c
            })
            .collect();
        (1..=max_order)
            .map(|m| {
                let mut f = SignedGridField::zeros(g.clone(), m).unwrap();
                let mut slots = vec![0usize; m];
                for lin in 0..f.values().len() {
                    f.decompose(lin, &mut slots);
                    let mut acc = 0.0;
                    for (w, c) in weights.iter().zip(comps.iter()) {
                        let mut prod = *w;
                        for &s in &slots {
                            prod *= c[s];
                        }
                        acc += prod;
                    }
                    f.values_mut()[lin] = acc;
                }
                GriddedDensity::new(f).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_fifty_random_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        for trial in 0..50 {
            let family = random_mixture_family(&mut rng, 5, 4, 3);
            let corr = cumulants_from_marginals(&family, FamilyTolerances::default()).unwrap();
            let back = marginals_from_cumulants(&corr).unwrap();
            for (orig, rec) in family.iter().zip(back.iter()) {
                let err = rec.sub(orig.field()).unwrap().max_abs();
                assert!(err < 1e-12, "trial {trial}: round-trip error {err:.3e}");
            }
        }
    }

    #[test]
    fn explicit_low_order_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let family = random_mixture_family(&mut rng, 4, 4, 3);
        let corr = cumulants_from_marginals(&family, FamilyTolerances::default()).unwrap();
        let f1 = family[0].field();
        let f2 = family[1].field();
        let f3 = family[2].field();
        let f4 = family[3].field();
        let n = f1.cells_per_slot();
        let v1 = |a: usize| f1.values()[a];
        let v2 = |a: usize, b: usize| f2.values()[a * n + b];
        let v3 = |a: usize, b: usize, c: usize| f3.values()[(a * n + b) * n + c];
        let v4 = |a: usize, b: usize, c: usize, d: usize| f4.values()[((a * n + b) * n + c) * n + d];

        // order 1: G1 = F1
        assert!(corr.order(1).sub(f1).unwrap().max_abs() < 1e-15);

        // order 2: G2 = F2 - F1 x F1
        let g2 = corr.order(2);
        for a in 0..n {
            for b in 0..n {
                let expect = v2(a, b) - v1(a) * v1(b);
                assert!((g2.values()[a * n + b] - expect).abs() < 1e-12);
            }
        }

        // order 3: G3 = F3 - sum_3 F2 x F1 + 2 F1 x F1 x F1
        let g3 = corr.order(3);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let expect = v3(a, b, c)
                        - (v2(a, b) * v1(c) + v2(a, c) * v1(b) + v2(b, c) * v1(a))
                        + 2.0 * v1(a) * v1(b) * v1(c);
                    assert!((g3.values()[(a * n + b) * n + c] - expect).abs() < 1e-12);
                }
            }
        }

        // order 4: G4 = F4 - 4 terms F3 x F1 - 3 terms F2 x F2
        //              + 2 * (6 terms F2 x F1 x F1) - 6 F1^(x4)
        let g4 = corr.order(4);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let t31 = v3(a, b, c) * v1(d)
                            + v3(a, b, d) * v1(c)
                            + v3(a, c, d) * v1(b)
                            + v3(b, c, d) * v1(a);
                        let t22 = v2(a, b) * v2(c, d) + v2(a, c) * v2(b, d) + v2(a, d) * v2(b, c);
                        let t211 = v2(a, b) * v1(c) * v1(d)
                            + v2(a, c) * v1(b) * v1(d)
                            + v2(a, d) * v1(b) * v1(c)
                            + v2(b, c) * v1(a) * v1(d)
                            + v2(b, d) * v1(a) * v1(c)
                            + v2(c, d) * v1(a) * v1(b);
                        let t1111 = v1(a) * v1(b) * v1(c) * v1(d);
                        let expect = v4(a, b, c, d) - t31 - t22 + 2.0 * t211 - 6.0 * t1111;
                        let got = g4.values()[((a * n + b) * n + c) * n + d];
                        assert!((got - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn tensorized_family_has_vanishing_higher_cumulants() {
        let g = grid(5);
        let mu = SignedGridField::<f64>::from_fn(g.clone(), 1, |x| {
            1.0 + 0.4 * (2.0 * std::f64::consts::PI * x[0]).cos()
        })
        .unwrap();
        let family: Vec<GriddedDensity<f64>> = (1..=4)
            .map(|m| {
                let mut f = SignedGridField::zeros(g.clone(), m).unwrap();
                let mut slots = vec![0usize; m];
                for lin in 0..f.values().len() {
                    f.decompose(lin, &mut slots);
                    f.values_mut()[lin] = slots.iter().map(|&s| mu.values()[s]).product();
                }
                GriddedDensity::new(f).unwrap()
            })
            .collect();
        let corr = cumulants_from_marginals(&family, FamilyTolerances::default()).unwrap();
        for m in 2..=4 {
            assert!(corr.order(m).max_abs() < 1e-12, "order {m}");
        }
    }

    #[test]
    fn maximality_holds_for_consistent_family_and_breaks_for_perturbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let family = random_mixture_family(&mut rng, 4, 3, 2);
        let corr = cumulants_from_marginals(&family, FamilyTolerances::default()).unwrap();
        for d in check_maximality(&corr).unwrap() {
            assert!(d.defect < 1e-12, "order {} defect {}", d.order, d.defect);
        }

        // perturb one interior cell of G2 by eps: the partial integral over
        // either slot changes by exactly eps * slot_volume
        let eps = 1e-3;
        let mut fields: Vec<_> = corr.fields().to_vec();
        fields[1].values_mut()[5] += eps;
        let broken = CorrelationSet::new(fields).unwrap();
        let defects = check_maximality(&broken).unwrap();
        let vol = broken.order(2).spec().slot_volume();
        assert!((defects[0].defect - eps * vol).abs() < 1e-12);
    }

    #[test]
    fn cumulants_inherit_exchange_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let family = random_mixture_family(&mut rng, 4, 3, 3);
        let corr = cumulants_from_marginals(&family, FamilyTolerances::default()).unwrap();
        for m in 2..=3 {
            let g = corr.order(m);
            let sym = g.symmetrize().unwrap();
            assert!(g.sub(&sym).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn inconsistent_family_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut family = random_mixture_family(&mut rng, 4, 3, 2);
        // replace F1 by a different density: breaks consistency with F2
        let g = family[0].spec().clone();
        family[0] = GriddedDensity::new(
            SignedGridField::from_fn(g, 1, |x| 1.0 + 0.9 * (2.0 * std::f64::consts::PI * x[0]).sin())
                .unwrap(),
        )
        .unwrap();
        let err = cumulants_from_marginals(&family, FamilyTolerances::default());
        match err {
            Err(Error::Consistency { higher: 2, lower: 1, .. }) => {}
            other => panic!("expected consistency error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_family_is_rejected() {
        let g = grid(4);
        let f1 = GriddedDensity::<f64>::uniform(g.clone(), 1).unwrap();
        // asymmetric but mass-1 and marginally consistent in slot 1 only
        let f2 = SignedGridField::from_fn(g, 2, |x| 1.0 + 0.3 * (x[0] - 0.5)).unwrap();
        // normalize mass exactly
        let mass = f2.integrate();
        let f2 = f2.scaled(1.0 / mass);
        let fam = vec![f1, GriddedDensity::new(f2).unwrap()];
        assert!(matches!(
            cumulants_from_marginals(&fam, FamilyTolerances::default()),
            Err(Error::Config(_))
        ));
    }
}
