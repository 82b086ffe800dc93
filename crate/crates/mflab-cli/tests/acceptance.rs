//! Acceptance suite: one test per headline criterion, each printing a single
//! `criterion NN PASS/FAIL` verdict line with the measured numbers.
//!
//! Heavy runs are shared: criteria 04 and 05 read one default scaling sweep,
//! and criterion 13 replays the manifest written by criterion 03's run of the
//! installed binary. Every check is seeded, so verdicts are reproducible.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;

use mflab::cumulants::{cumulants_from_marginals, marginals_from_cumulants, FamilyTolerances};
use mflab::equilibrium::equilibrium_positions;
use mflab::estimators::{bbgky_residual_m1, estimate_marginal, force_moment};
use mflab::experiments::{
    exp_case2_large_kappa, exp_chaos_scaling, exp_cross_error, exp_gibbs_relaxation, Case2Config,
    ChaosConfig, CrossConfig, Outcome, RelaxationConfig,
};
use mflab::grid::GridSpec;
use mflab::kernels::{hegselmann_krause, mollified_coulomb_whole, zero_kernel, Confinement, Domain};
use mflab::meanfield::{
    gibbs_fixed_point_torus, KineticTorus, McKeanVlasovLine, McKeanVlasovTorus, TorusProfile,
};
use mflab::sim::{advance, Dynamics, EnsembleState, InitialLaw, PositionLaw, System, VelocityLaw};
use mflab::{Density, Field};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

const SEED: u64 = 20260815;
const T1: Domain = Domain::Torus { dim: 1, period: TAU };

fn verdict(id: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:02} {tag} - {name}: {detail}");
    assert!(pass, "criterion {id:02} {tag} - {name}: {detail}");
}

fn parse_r2(detail: &str) -> Option<f64> {
    detail.split("r2=").nth(1)?.split_whitespace().next()?.parse().ok()
}

/// First note mentioning the noise floor, for failure details.
fn floor_note(out: &Outcome) -> String {
    out.notes
        .iter()
        .find(|n| n.contains("floor"))
        .cloned()
        .unwrap_or_else(|| "no floor diagnostics".into())
}

// ---------------------------------------------------------------------------
// Shared heavy runs
// ---------------------------------------------------------------------------

static CHAOS: OnceLock<Outcome> = OnceLock::new();

/// The default scaling sweep, shared by criteria 04 and 05.
fn chaos_outcome() -> &'static Outcome {
    CHAOS.get_or_init(|| exp_chaos_scaling(&ChaosConfig::default(), SEED).expect("scaling sweep"))
}

struct FactorRun {
    dir: tempfile::TempDir,
    out: PathBuf,
    records: Vec<u8>,
    plot: Vec<u8>,
    fraction: f64,
}

static FACTOR: OnceLock<FactorRun> = OnceLock::new();

/// Zero-coupling factorization run through the installed binary; criterion 13
/// replays its manifest.
fn factor_run() -> &'static FactorRun {
    FACTOR.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let cfg = "\
experiment = \"exp_chaos_scaling\"
seed = 41

[chaos]
contraction_number = 0.0
n_sweep = [64]
realizations = [2000]
times = [0.5]
dt = 0.002
cells = 16
pde_cells = 128
pde_dt = 0.0005
bootstrap = 200
";
        fs::write(dir.path().join("factor.toml"), cfg).expect("write config");
        let out = dir.path().join("factor_run");
        let o = Command::new(env!("CARGO_BIN_EXE_mflab"))
            .args(["run", "factor.toml", "--out", out.to_str().unwrap()])
            .current_dir(dir.path())
            .output()
            .expect("binary runs");
        // a single size cannot support a scaling fit, so code 4 is expected
        assert!(
            matches!(o.status.code(), Some(0) | Some(4)),
            "factorization run failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let summary: toml::Table =
            toml::from_str(&fs::read_to_string(out.join("run_summary.toml")).expect("summary"))
                .expect("summary parses");
        let fraction = summary["fits"]
            .as_array()
            .expect("fits array")
            .iter()
            .find(|f| f["label"].as_str() == Some("factorization_within_3se"))
            .and_then(|f| f["value"].as_float())
            .expect("factorization fraction fit");
        let records = fs::read(out.join("records.csv")).expect("records");
        let plot = fs::read(out.join("chaos_scaling.csv")).expect("plot table");
        FactorRun { dir, out, records, plot, fraction }
    })
}

// ---------------------------------------------------------------------------
// Field helpers for the cumulant criteria
// ---------------------------------------------------------------------------

/// Random exchange-symmetric order-4 density on `cells` cells per axis.
fn random_symmetric_density(cells: usize, seed: u64) -> Field {
    let spec = GridSpec::torus(cells, TAU).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cells.pow(4);
    let vals: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let f = Field::new(spec, 4, vals).expect("field").symmetrize().expect("symmetrize");
    let mass = f.integrate();
    f.scaled(1.0 / mass)
}

/// Marginal chain `F^1..F^4` of an order-4 density.
fn marginal_family(f4: &Field) -> (Vec<Field>, Vec<Density>) {
    let f3 = f4.marginalize_slot(3).expect("F3");
    let f2 = f3.marginalize_slot(2).expect("F2");
    let f1 = f2.marginalize_slot(1).expect("F1");
    let fields = vec![f1, f2, f3, f4.clone()];
    let densities = fields
        .iter()
        .map(|f| Density::new(f.clone()).expect("marginal is a density"))
        .collect();
    (fields, densities)
}

/// Accumulates `coeff * prod_k factors[k](slots[groups[k]])` into `out`.
/// Independent of the library's partition machinery on purpose.
fn add_product(out: &mut Field, coeff: f64, factors: &[(&Field, &[usize])]) {
    let per = out.cells_per_slot();
    let len = out.values().len();
    let mut slots = vec![0usize; out.order()];
    for lin in 0..len {
        out.decompose(lin, &mut slots);
        let mut prod = coeff;
        for (f, group) in factors {
            let mut idx = 0usize;
            for &g in group.iter() {
                idx = idx * per + slots[g];
            }
            prod *= f.values()[idx];
        }
        out.values_mut()[lin] += prod;
    }
}

/// Hand-written Moebius formulas for orders 2..4; the partition lists and
/// coefficients are spelled out rather than generated.
fn explicit_cumulants(f: &[Field]) -> Vec<Field> {
    let spec = f[0].spec().clone();
    let (f1, f2, f3, f4) = (&f[0], &f[1], &f[2], &f[3]);

    let mut g2 = Field::zeros(spec.clone(), 2).unwrap();
    add_product(&mut g2, 1.0, &[(f2, &[0, 1])]);
    add_product(&mut g2, -1.0, &[(f1, &[0]), (f1, &[1])]);

    let mut g3 = Field::zeros(spec.clone(), 3).unwrap();
    add_product(&mut g3, 1.0, &[(f3, &[0, 1, 2])]);
    add_product(&mut g3, -1.0, &[(f1, &[0]), (f2, &[1, 2])]);
    add_product(&mut g3, -1.0, &[(f1, &[1]), (f2, &[0, 2])]);
    add_product(&mut g3, -1.0, &[(f1, &[2]), (f2, &[0, 1])]);
    add_product(&mut g3, 2.0, &[(f1, &[0]), (f1, &[1]), (f1, &[2])]);

    let mut g4 = Field::zeros(spec, 4).unwrap();
    add_product(&mut g4, 1.0, &[(f4, &[0, 1, 2, 3])]);
    add_product(&mut g4, -1.0, &[(f1, &[0]), (f3, &[1, 2, 3])]);
    add_product(&mut g4, -1.0, &[(f1, &[1]), (f3, &[0, 2, 3])]);
    add_product(&mut g4, -1.0, &[(f1, &[2]), (f3, &[0, 1, 3])]);
    add_product(&mut g4, -1.0, &[(f1, &[3]), (f3, &[0, 1, 2])]);
    add_product(&mut g4, -1.0, &[(f2, &[0, 1]), (f2, &[2, 3])]);
    add_product(&mut g4, -1.0, &[(f2, &[0, 2]), (f2, &[1, 3])]);
    add_product(&mut g4, -1.0, &[(f2, &[0, 3]), (f2, &[1, 2])]);
    add_product(&mut g4, 2.0, &[(f1, &[0]), (f1, &[1]), (f2, &[2, 3])]);
    add_product(&mut g4, 2.0, &[(f1, &[0]), (f1, &[2]), (f2, &[1, 3])]);
    add_product(&mut g4, 2.0, &[(f1, &[0]), (f1, &[3]), (f2, &[1, 2])]);
    add_product(&mut g4, 2.0, &[(f1, &[1]), (f1, &[2]), (f2, &[0, 3])]);
    add_product(&mut g4, 2.0, &[(f1, &[1]), (f1, &[3]), (f2, &[0, 2])]);
    add_product(&mut g4, 2.0, &[(f1, &[2]), (f1, &[3]), (f2, &[0, 1])]);
    add_product(&mut g4, -6.0, &[(f1, &[0]), (f1, &[1]), (f1, &[2]), (f1, &[3])]);

    vec![g2, g3, g4]
}

/// Normalized profile from point samples at the cell centers.
fn normalized_profile(n: usize, f: impl Fn(f64) -> f64) -> TorusProfile<f64> {
    let h = TAU / n as f64;
    let raw: Vec<f64> = (0..n).map(|j| f((j as f64 + 0.5) * h)).collect();
    let mass: f64 = raw.iter().sum::<f64>() * h;
    TorusProfile::new(TAU, raw.iter().map(|v| v / mass).collect()).expect("profile")
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_cumulant_round_trip() {
    let mut worst_trip = 0.0f64;
    let mut worst_explicit = 0.0f64;
    for trial in 0..50 {
        let f4 = random_symmetric_density(5, 0xAC01 + trial);
        let (fields, family) = marginal_family(&f4);
        let corr =
            cumulants_from_marginals(&family, FamilyTolerances::default()).expect("cumulants");
        let back = marginals_from_cumulants(&corr).expect("marginals back");
        for m in 0..4 {
            let d = back[m].sub(&fields[m]).unwrap().max_abs();
            worst_trip = worst_trip.max(d);
        }
        for (m, g) in explicit_cumulants(&fields).into_iter().enumerate() {
            let d = g.sub(corr.order(m + 2)).unwrap().max_abs();
            worst_explicit = worst_explicit.max(d);
        }
    }
    let pass = worst_trip <= 1e-12 && worst_explicit <= 1e-12;
    verdict(
        1,
        "cumulant round trip on 50 random densities",
        pass,
        &format!(
            "round-trip defect {worst_trip:.2e}, explicit-formula defect {worst_explicit:.2e} (tolerance 1e-12)"
        ),
    );
}

#[test]
fn criterion_02_cumulant_maximality() {
    // brute force on explicit 4-particle laws over 3 cells: every partial
    // integral of every cumulant of order >= 2 must vanish
    let mut worst = 0.0f64;
    for trial in 0..3 {
        let f4 = random_symmetric_density(3, 0xAC20 + trial);
        let (_, family) = marginal_family(&f4);
        let corr =
            cumulants_from_marginals(&family, FamilyTolerances::default()).expect("cumulants");
        for m in 2..=4 {
            for slot in 0..m {
                let d = corr.order(m).marginalize_slot(slot).unwrap().max_abs();
                worst = worst.max(d);
            }
        }
    }
    verdict(
        2,
        "all partial integrals of the cumulants vanish",
        worst <= 1e-10,
        &format!("worst partial integral {worst:.2e} (tolerance 1e-10)"),
    );
}

#[test]
fn criterion_03_zero_coupling_factorization() {
    let run = factor_run();
    verdict(
        3,
        "pair marginal factorizes at zero coupling",
        run.fraction >= 0.95,
        &format!(
            "{:.1}% of pair cells within three bootstrap errors of the product law (need 95%)",
            100.0 * run.fraction
        ),
    );
}

#[test]
fn criterion_04_chaos_size_scaling() {
    let out = chaos_outcome();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in ["0.5", "2"] {
        let label = format!("chaos_exponent_t{t}");
        match out.fits.iter().find(|f| f.label == label) {
            Some(f) => {
                let r2 = parse_r2(&f.detail).unwrap_or(0.0);
                let ok = (-1.3..=-0.7).contains(&f.value) && r2 >= 0.9;
                pass &= ok;
                parts.push(format!("t={t}: exponent {:.3}+-{:.3} ({})", f.value, f.se, f.detail));
            }
            None => {
                pass = false;
                parts.push(format!("t={t}: no points clear the noise floor"));
            }
        }
    }
    if !pass {
        parts.push(floor_note(out));
    }
    verdict(4, "one-particle error scales like 1/N", pass, &parts.join("; "));
}

#[test]
fn criterion_05_pair_correlation_scaling() {
    let out = chaos_outcome();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in ["0.5", "2"] {
        let label = format!("pair_exponent_t{t}");
        match out.fits.iter().find(|f| f.label == label) {
            Some(f) => {
                let r2 = parse_r2(&f.detail).unwrap_or(0.0);
                let ok = (-1.4..=-0.6).contains(&f.value) && r2 >= 0.9;
                pass &= ok;
                parts.push(format!("t={t}: exponent {:.3}+-{:.3} ({})", f.value, f.se, f.detail));
            }
            None => {
                pass = false;
                parts.push(format!("t={t}: no points clear the noise floor"));
            }
        }
    }
    if !pass {
        parts.push(floor_note(out));
    }
    verdict(5, "pair correlation scales like 1/N", pass, &parts.join("; "));
}

#[test]
fn criterion_06_uniform_relaxation_rates() {
    let cfg = RelaxationConfig::default();
    let out = exp_gibbs_relaxation(&cfg, SEED).expect("relaxation run");
    let mut pass = true;
    let mut parts = Vec::new();
    for &n in &cfg.n_sweep {
        let label = format!("relaxation_rate_n{n}");
        match out.fits.iter().find(|f| f.label == label) {
            Some(f) => {
                pass &= f.value > 0.0;
                parts.push(format!("N={n}: rate {:.3}+-{:.3}", f.value, f.se));
            }
            None => {
                pass = false;
                parts.push(format!("N={n}: no rate fit"));
            }
        }
    }
    match out.fits.iter().find(|f| f.label == "relaxation_rate_spread") {
        Some(f) => {
            pass &= f.value <= 0.25;
            parts.push(format!("relative spread {:.3} (need <= 0.25)", f.value));
        }
        None => {
            pass = false;
            parts.push("no spread fit".into());
        }
    }
    verdict(6, "relaxation rate positive and uniform in N", pass, &parts.join("; "));
}

#[test]
fn criterion_07_joint_size_time_error() {
    let out = exp_cross_error(&CrossConfig::default(), SEED).expect("cross run");
    let size = out.fits.iter().find(|f| f.label == "cross_size_exponent");
    let rate = out.fits.iter().find(|f| f.label == "cross_time_rate");
    let (pass, detail) = match (size, rate) {
        (Some(s), Some(r)) => {
            let r2 = parse_r2(&s.detail).unwrap_or(0.0);
            let ok = (0.7..=1.3).contains(&s.value) && r.value > 0.0 && r2 >= 0.95;
            (
                ok,
                format!(
                    "size exponent {:.3}+-{:.3}, time rate {:.3}+-{:.3} ({})",
                    s.value, s.se, r.value, r.se, s.detail
                ),
            )
        }
        _ => (false, format!("joint fit unavailable; {}", floor_note(&out))),
    };
    verdict(7, "joint error law C N^-a exp(-ct)", pass, &detail);
}

#[test]
fn criterion_08_gibbs_fixed_point() {
    let kernel = hegselmann_krause::<f64>(T1, 0.2).unwrap();
    let (kappa, beta, n) = (12.5, 1.0, 64);

    let starts: Vec<TorusProfile<f64>> = vec![
        normalized_profile(n, |_| 1.0),
        normalized_profile(n, |x| 1.0 + 0.5 * x.cos()),
        normalized_profile(n, |x| 1.0 - 0.7 * x.cos()),
        normalized_profile(n, |x| 1.0 + 0.4 * (2.0 * x).cos()),
        normalized_profile(n, |x| (0.8 * x.sin()).exp()),
    ];
    let solutions: Vec<TorusProfile<f64>> = starts
        .iter()
        .map(|p| {
            gibbs_fixed_point_torus(&kernel, kappa, beta, n, Some(p), 1e-12, 500)
                .expect("contraction regime converges")
                .0
        })
        .collect();
    let mut worst_pair = 0.0f64;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            worst_pair = worst_pair.max(solutions[i].l1_distance(&solutions[j]).unwrap());
        }
    }

    // translation-invariant case: one iteration from uniform returns uniform
    let (flat, report) =
        gibbs_fixed_point_torus(&kernel, kappa, beta, n, None, 1e-12, 1).expect("one iteration");
    let uniform_dev = flat
        .values()
        .iter()
        .map(|v| (v - 1.0 / TAU).abs())
        .fold(0.0f64, f64::max);

    let pass = worst_pair <= 1e-9 && report.iterations == 1 && uniform_dev <= 1e-12;
    verdict(
        8,
        "self-consistent density is unique and uniform",
        pass,
        &format!(
            "pairwise L1 over 5 starts {worst_pair:.2e} (tol 1e-9); uniform after {} iteration(s), deviation {uniform_dev:.2e} (tol 1e-12)",
            report.iterations
        ),
    );
}

#[test]
fn criterion_09_equilibrium_sampler() {
    // discrete two-particle toy: 8 cells, bounded-confidence pair energy
    let cells = 8usize;
    let states = cells * cells;
    let h = TAU / cells as f64;
    let r = 2.0;
    let pair_w = |d: f64| {
        let a = d.abs().min(TAU - d.abs());
        if a < r {
            (a - r) * (a - r)
        } else {
            0.0
        }
    };
    let energy = |s: usize| pair_w(h * ((s / cells) as f64 - (s % cells) as f64));
    let weights: Vec<f64> = (0..states).map(|s| (-energy(s)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let pi: Vec<f64> = weights.iter().map(|w| w / z).collect();

    // random-scan single-site chain with nearest-cell proposals
    let mut p = vec![0.0f64; states * states];
    for s in 0..states {
        let (c1, c2) = (s / cells, s % cells);
        for (particle, dir) in [(0, 1), (0, cells - 1), (1, 1), (1, cells - 1)] {
            let sp = if particle == 0 {
                ((c1 + dir) % cells) * cells + c2
            } else {
                c1 * cells + (c2 + dir) % cells
            };
            let a = (-(energy(sp) - energy(s))).exp().min(1.0);
            p[s * states + sp] += 0.25 * a;
            p[s * states + s] += 0.25 * (1.0 - a);
        }
    }
    let mut balance = 0.0f64;
    for s in 0..states {
        for sp in 0..states {
            balance =
                balance.max((pi[s] * p[s * states + sp] - pi[sp] * p[sp * states + s]).abs());
        }
    }

    // simulate the same chain and compare batch-mean frequencies
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x0900);
    let (sweeps, batches) = (100_000usize, 100usize);
    let per_batch = sweeps / batches;
    let mut c = [3usize, 5usize];
    let mut counts = vec![0.0f64; batches * states];
    for b in 0..batches {
        for _ in 0..per_batch {
            for _ in 0..2 {
                let particle = rng.gen_range(0..2usize);
                let dir = if rng.gen::<bool>() { 1 } else { cells - 1 };
                let mut next = c;
                next[particle] = (c[particle] + dir) % cells;
                let de = energy(next[0] * cells + next[1]) - energy(c[0] * cells + c[1]);
                if de <= 0.0 || rng.gen::<f64>() < (-de).exp() {
                    c = next;
                }
            }
            counts[b * states + c[0] * cells + c[1]] += 1.0;
        }
    }
    let mut hist_z = 0.0f64;
    for s in 0..states {
        let mut mean = 0.0;
        for b in 0..batches {
            mean += counts[b * states + s];
        }
        mean /= sweeps as f64;
        let mut var = 0.0;
        for b in 0..batches {
            let d = counts[b * states + s] / per_batch as f64 - mean;
            var += d * d;
        }
        let se = (var / ((batches - 1) as f64 * batches as f64)).sqrt().max(1e-12);
        hist_z = hist_z.max((mean - pi[s]).abs() / se);
    }

    // continuous sampler at matched contraction: first marginal is uniform
    let kernel = hegselmann_krause::<f64>(T1, 2.0).unwrap();
    let (positions, _) =
        equilibrium_positions(&kernel, Confinement::None, 0.125, 1.0, 2, 4000, 40, SEED ^ 0x0901)
            .expect("sampler runs");
    let ens = EnsembleState::from_parts(T1, 2, 4000, positions, None, 1).unwrap();
    let marg = estimate_marginal(&ens, &GridSpec::torus(8, TAU).unwrap(), 1).unwrap();
    let se = marg.cell_se().unwrap();
    let mut marg_z = 0.0f64;
    for (m, s) in marg.mean().values().iter().zip(se.values()) {
        marg_z = marg_z.max((m - 1.0 / TAU).abs() / s.max(1e-12));
    }

    let pass = balance <= 1e-15 && hist_z <= 4.0 && marg_z <= 4.0;
    verdict(
        9,
        "sampler satisfies detailed balance and hits the target",
        pass,
        &format!(
            "balance defect {balance:.1e} (tol 1e-15); histogram max {hist_z:.2} se; marginal max {marg_z:.2} se (need <= 4)"
        ),
    );
}

#[test]
fn criterion_10_strong_coupling_uniformization() {
    let cfg = Case2Config { kappa_sweep: vec![5.0], curl_arm: false, ..Case2Config::default() };
    let out = exp_case2_large_kappa(&cfg, SEED).expect("strong-coupling run");
    let mut pass = true;
    let mut parts = Vec::new();

    let coeff = out
        .fits
        .iter()
        .find(|f| f.label == "min_fourier_coefficient")
        .expect("stability fit");
    pass &= coeff.value >= 0.0;
    parts.push(format!("min potential coefficient {:.2e}", coeff.value));

    let final_l1 = out
        .records
        .iter()
        .filter(|r| r.quantity == "pde_uniform_l1_kappa5")
        .last()
        .expect("limit distances")
        .value;
    pass &= final_l1 <= 1e-3;
    parts.push(format!("limit-equation final L1 to uniform {final_l1:.2e} (tol 1e-3)"));

    match out.fits.iter().find(|f| f.label == "particle_rate_kappa5_h2") {
        Some(f) => {
            pass &= f.value > 0.0 && f.value > f.se;
            parts.push(format!("particle rate {:.3}+-{:.3} in the order-2 proxy norm", f.value, f.se));
        }
        None => {
            pass = false;
            parts.push("no particle rate fit".into());
        }
    }

    let max_z = out
        .records
        .iter()
        .find(|r| r.quantity == "uniformity_max_z_kappa5")
        .expect("uniformity record")
        .value;
    pass &= max_z <= 4.0;
    parts.push(format!("final marginal within {max_z:.2} se of uniform (need <= 4)"));

    verdict(10, "strong repulsion drives the system uniform", pass, &parts.join("; "));
}

#[test]
fn criterion_11_pde_solver_checks() {
    let mut pass = true;
    let mut parts = Vec::new();

    // (a) mass conservation at every step, periodic and confined solvers
    let kernel = hegselmann_krause::<f64>(T1, 0.2).unwrap();
    let start = normalized_profile(256, |x| 1.0 + 0.8 * x.cos());
    let mut torus = McKeanVlasovTorus::new(&kernel, 12.5, &start).unwrap();
    let m0 = torus.mass();
    let mut mass_drift = 0.0f64;
    for _ in 0..2000 {
        torus.step(2.5e-4).unwrap();
        mass_drift = mass_drift.max((torus.mass() - m0).abs());
    }
    let line_kernel = mollified_coulomb_whole::<f64>(1, 0.3).unwrap();
    let mut line = McKeanVlasovLine::new(
        line_kernel,
        Confinement::Quadratic { lambda: 1.0 },
        1.0,
        200,
        6.0,
        |z| (-2.0 * z * z).exp(),
    )
    .unwrap();
    let lm0 = line.mass();
    for _ in 0..1000 {
        line.step(1e-3).unwrap();
        mass_drift = mass_drift.max((line.mass() - lm0).abs());
    }
    pass &= mass_drift <= 1e-10;
    parts.push(format!("mass drift {mass_drift:.1e} over every step (tol 1e-10)"));

    // (b) zero coupling on the torus: exact per-mode heat decay
    let heat_start = normalized_profile(256, |x| 1.0 + 0.8 * x.cos() + 0.1 * (3.0 * x).cos());
    let mut heat = McKeanVlasovTorus::new(&kernel, 0.0, &heat_start).unwrap();
    let a0 = [heat_start.mode_amplitude(1), heat_start.mode_amplitude(3)];
    heat.run(2.5e-4, 2000).unwrap();
    let t = heat.time();
    let prof = heat.profile();
    let mut heat_err = 0.0f64;
    for (k, a) in [(1i64, a0[0]), (3, a0[1])] {
        let ratio = prof.mode_amplitude(k) / a;
        heat_err = heat_err.max((ratio - (-(k * k) as f64 * t).exp()).abs());
    }
    pass &= heat_err <= 1e-8;
    parts.push(format!("heat-mode decay error {heat_err:.1e} (tol 1e-8)"));

    // (c) kinetic solver at zero coupling relaxes to the product equilibrium
    let zk = zero_kernel::<f64>(T1).unwrap();
    let hv = 12.0 / 64.0;
    let zv: f64 = (0..64)
        .map(|i| {
            let v: f64 = -6.0 + (i as f64 + 0.5) * hv;
            (-0.25 * v * v).exp()
        })
        .sum::<f64>()
        * hv;
    let mut kin = KineticTorus::new(&zk, 0.0, 1.0, 48, 64, 6.0, |x, v| {
        (1.0 + 0.8 * x.cos()) * (-0.25 * v * v).exp() / (TAU * zv)
    })
    .unwrap();
    let km0 = kin.mass();
    let mut kin_drift = 0.0f64;
    for _ in 0..4000 {
        kin.step(5e-3).unwrap();
        kin_drift = kin_drift.max((kin.mass() - km0).abs());
    }
    let eq = kin.product_equilibrium();
    let dist = kin.l1_distance_to(|x, v| km0 * eq(x, v));
    pass &= kin_drift <= 1e-10 && dist <= 1e-3;
    parts.push(format!(
        "kinetic mass drift {kin_drift:.1e}; L1 to the product equilibrium {dist:.1e} at t=20 (tol 1e-3)"
    ));

    verdict(11, "limit solvers conserve mass and match exact laws", pass, &parts.join("; "));
}

#[test]
fn criterion_12_hierarchy_residual() {
    let mut pass = true;
    let mut parts = Vec::new();

    // (a) inputs from the limit solver: the residual is discretization-small
    let kernel = hegselmann_krause::<f64>(T1, 1.0).unwrap();
    let kappa = 0.5;
    let m = 256;
    let spec = GridSpec::torus(m, TAU).unwrap();
    let start = normalized_profile(m, |x| 1.0 + 0.5 * x.cos());
    let mut solver = McKeanVlasovTorus::new(&kernel, kappa, &start).unwrap();
    let delta = 5e-3;
    let to_field = |p: &TorusProfile<f64>| {
        Field::new(spec.clone(), 1, p.values().to_vec()).unwrap()
    };
    solver.run(2.5e-4, 780).unwrap();
    let past = to_field(&solver.profile());
    solver.run(2.5e-4, 20).unwrap();
    let mid = solver.profile();
    let now = to_field(&mid);
    solver.run(2.5e-4, 20).unwrap();
    let next = to_field(&solver.profile());
    // pair-force moment of the product law, by direct quadrature
    let h = TAU / m as f64;
    let centers: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * h).collect();
    let rho = mid.values();
    let mut g = Field::zeros(spec.clone(), 1).unwrap();
    for i in 0..m {
        let mut conv = 0.0;
        for j in 0..m {
            let mut d = centers[i] - centers[j];
            d -= TAU * (d / TAU).round();
            conv += kernel.force1(d) * rho[j] * h;
        }
        g.values_mut()[i] = rho[i] * conv;
    }
    // the particle count only enters through (N-1)/N, driven to 1 here
    let res = bbgky_residual_m1(kappa, 1_000_000_000, &past, &now, &next, &g, delta, 2)
        .expect("residual");
    pass &= res.residual <= 1e-4;
    parts.push(format!(
        "limit-solver residual {:.1e} against scales {:.1e}/{:.1e} (tol 1e-4)",
        res.residual, res.diffusion_scale, res.interaction_scale
    ));

    // (b) inputs from particle estimates: the residual is noise-dominated and
    // must drop when the realization budget quadruples
    let pk = hegselmann_krause::<f64>(T1, 0.2).unwrap();
    let system = System::new(pk.clone(), Confinement::None, 12.5, Dynamics::Overdamped).unwrap();
    let law = InitialLaw {
        position: PositionLaw::CosineMode { amplitude: 0.8 },
        velocity: VelocityLaw::Zero,
    };
    let grid = GridSpec::torus(16, TAU).unwrap();
    let (dt, gap) = (1e-3, 25u64);
    let residual_at = |realizations: usize, seed: u64| -> f64 {
        let mut ens = EnsembleState::initialize(&system, 64, realizations, &law, seed).unwrap();
        advance(&system, &mut ens, dt, 225).unwrap();
        let past = estimate_marginal(&ens, &grid, 1).unwrap().mean().clone();
        advance(&system, &mut ens, dt, gap).unwrap();
        let now = estimate_marginal(&ens, &grid, 1).unwrap().mean().clone();
        let gm = force_moment(&ens, &pk, &grid).unwrap().mean().clone();
        advance(&system, &mut ens, dt, gap).unwrap();
        let next = estimate_marginal(&ens, &grid, 1).unwrap().mean().clone();
        bbgky_residual_m1(12.5, 64, &past, &now, &next, &gm, gap as f64 * dt, 2)
            .expect("residual")
            .residual
    };
    let coarse = residual_at(600, SEED ^ 0x1201);
    let fine = residual_at(2400, SEED ^ 0x1202);
    let ratio = fine / coarse;
    pass &= ratio < 0.7;
    parts.push(format!(
        "sampled residual {coarse:.2e} -> {fine:.2e} when realizations quadruple, ratio {ratio:.2} (need < 0.7)"
    ));

    verdict(12, "first hierarchy equation closes on estimates", pass, &parts.join("; "));
}

#[test]
fn criterion_13_bit_reproducibility() {
    let base = factor_run();
    let manifest = base.out.join("manifest.toml");
    let mut pass = true;
    let mut parts = Vec::new();
    for threads in ["1", "3"] {
        let replay = base.dir.path().join(format!("replay{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_mflab"))
            .args([
                "run",
                manifest.to_str().unwrap(),
                "--out",
                replay.to_str().unwrap(),
                "--threads",
                threads,
            ])
            .current_dir(base.dir.path())
            .output()
            .expect("binary runs");
        if !matches!(o.status.code(), Some(0) | Some(4)) {
            pass = false;
            parts.push(format!("replay with {threads} thread(s) failed"));
            continue;
        }
        let records = fs::read(replay.join("records.csv")).expect("replayed records");
        let plot = fs::read(replay.join("chaos_scaling.csv")).expect("replayed plot");
        let same = records == base.records && plot == base.plot;
        pass &= same;
        parts.push(format!(
            "{} thread(s): tables {}",
            threads,
            if same { "bit-identical" } else { "DIFFER" }
        ));
    }
    verdict(13, "manifest replay is bit-identical at any thread count", pass, &parts.join("; "));
}
