//! Metropolis sampling of the N-particle Gibbs measure.
//!
//! The target is `exp(-beta H)` with
//! `H = sum_i A(x_i) + (kappa / 2N) sum_{i,j} W(x_i - x_j)`, the energy whose
//! gradient flow is the interacting diffusion; the double sum includes the
//! constant self term `W(0)`, which cancels from every acceptance ratio.
//! Moves are single-particle Gaussian displacements, so one sweep costs
//! `O(N^2)` potential evaluations. Chains are independent across
//! realizations, each on its own generator stream, which makes ensembles
//! deterministic for any thread count.
//!
//! For kinetic dynamics the equilibrium factorizes; velocities are exact
//! Gaussians with variance `1/beta` and are drawn directly.

use crate::error::{Error, Result};
use crate::kernels::{Confinement, Domain, KernelSpec};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Acceptance rule for an energy increase of `beta_delta` (already scaled by
/// the inverse temperature).
pub fn metropolis_accept(rng: &mut ChaCha8Rng, beta_delta: f64) -> bool {
    beta_delta <= 0.0 || rng.gen::<f64>() < (-beta_delta).exp()
}

/// Single-chain Metropolis sampler for the particle Gibbs measure.
pub struct GibbsSampler<T: Scalar> {
    kernel: KernelSpec<T>,
    confinement: Confinement,
    kappa: f64,
    beta: f64,
    n: usize,
    dim: usize,
    positions: Vec<T>,
    rng: ChaCha8Rng,
    step: f64,
    accepted: u64,
    proposed: u64,
}

impl<T: Scalar> GibbsSampler<T> {
    /// Builds a chain whose initial state is drawn from the noninteracting
    /// part of the target (uniform on the torus, the confinement Gaussian on
    /// the whole space).
    pub fn new(
        kernel: KernelSpec<T>,
        confinement: Confinement,
        kappa: f64,
        beta: f64,
        n: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::Config("inverse temperature must be positive".into()));
        }
        let dim = kernel.domain.dim();
        if kappa != 0.0 && kernel.potential(&vec![T::zero(); dim]).is_none() {
            return Err(Error::Config(
                "the sampler needs the pair potential in closed form".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut positions = vec![T::zero(); n * dim];
        let step;
        match kernel.domain {
            Domain::Torus { period, .. } => {
                for x in positions.iter_mut() {
                    *x = T::real(rng.gen::<f64>() * period);
                }
                step = 0.25 * period;
            }
            Domain::Whole { .. } => {
                let lambda = match confinement {
                    Confinement::Quadratic { lambda } => lambda,
                    Confinement::None => {
                        return Err(Error::Config(
                            "whole-space sampling needs confinement".into(),
                        ))
                    }
                };
                let sd = (1.0 / (beta * lambda)).sqrt();
                for x in positions.iter_mut() {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    *x = T::real(sd * xi);
                }
                step = sd;
            }
        }
        Ok(GibbsSampler {
            kernel,
            confinement,
            kappa,
            beta,
            n,
            dim,
            positions,
            rng,
            step,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }

    fn pair_w(&self, u: &[T]) -> f64 {
        self.kernel.potential(u).expect("checked at construction").as_f64()
    }

    /// Total energy `H`, including the constant self term.
    pub fn energy(&self) -> f64 {
        let mut h = 0.0;
        for i in 0..self.n {
            let xi = &self.positions[i * self.dim..(i + 1) * self.dim];
            h += self.confinement.potential(xi).as_f64();
        }
        if self.kappa != 0.0 {
            let mut u = vec![T::zero(); self.dim];
            let mut pair = 0.0;
            for i in 0..self.n {
                for j in 0..self.n {
                    for a in 0..self.dim {
                        u[a] = self.positions[i * self.dim + a]
                            - self.positions[j * self.dim + a];
                    }
                    pair += self.pair_w(&u);
                }
            }
            h += self.kappa / (2.0 * self.n as f64) * pair;
        }
        h
    }

    /// Energy change of moving particle `i` to `proposal`.
    fn move_energy(&self, i: usize, proposal: &[T]) -> f64 {
        let old = &self.positions[i * self.dim..(i + 1) * self.dim];
        let mut dh = self.confinement.potential(proposal).as_f64()
            - self.confinement.potential(old).as_f64();
        if self.kappa != 0.0 {
            let mut du = 0.0;
            let mut unew = vec![T::zero(); self.dim];
            let mut uold = vec![T::zero(); self.dim];
            for j in 0..self.n {
                if j == i {
                    continue;
                }
                for a in 0..self.dim {
                    let xj = self.positions[j * self.dim + a];
                    unew[a] = proposal[a] - xj;
                    uold[a] = old[a] - xj;
                }
                du += self.pair_w(&unew) - self.pair_w(&uold);
            }
            dh += self.kappa / self.n as f64 * du;
        }
        dh
    }

    /// One systematic scan over all particles.
    pub fn sweep(&mut self) {
        let mut proposal = vec![T::zero(); self.dim];
        for i in 0..self.n {
            for (a, p) in proposal.iter_mut().enumerate() {
                let xi: f64 = StandardNormal.sample(&mut self.rng);
                let x = self.positions[i * self.dim + a] + T::real(self.step * xi);
                *p = self.kernel.domain.reduce(x);
            }
            let dh = self.move_energy(i, &proposal);
            self.proposed += 1;
            if metropolis_accept(&mut self.rng, self.beta * dh) {
                self.accepted += 1;
                self.positions[i * self.dim..(i + 1) * self.dim]
                    .copy_from_slice(&proposal);
            }
        }
    }

    pub fn run_sweeps(&mut self, count: usize) {
        for _ in 0..count {
            self.sweep();
        }
    }

    /// Adjusts the proposal scale until the acceptance fraction sits in
    /// `[0.2, 0.5]`; sampling statistics are reset afterwards. Returns the
    /// acceptance measured in the last adjustment batch.
    ///
    /// On a torus the proposal is capped at half the period: beyond that the
    /// wrapped proposal is close to uniform and acceptance cannot drop
    /// further, so a flat target legitimately settles above the window.
    pub fn tune(&mut self, max_rounds: usize) -> Result<f64> {
        let cap = self.kernel.domain.period().map(|l| 0.5 * l);
        let mut last = f64::NAN;
        for _ in 0..max_rounds {
            self.accepted = 0;
            self.proposed = 0;
            self.run_sweeps(10);
            last = self.acceptance();
            let capped = cap.is_some_and(|c| self.step >= c);
            if last < 0.2 {
                self.step *= 0.7;
            } else if last > 0.5 && !capped {
                self.step *= 1.4;
                if let Some(c) = cap {
                    self.step = self.step.min(c);
                }
            } else {
                self.accepted = 0;
                self.proposed = 0;
                return Ok(last);
            }
        }
        Err(Error::NotConverged {
            iterations: max_rounds,
            regime: format!("proposal tuning stalled at acceptance {last:.3}"),
        })
    }
}

/// Diagnostics of an equilibrium ensemble draw.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumRun {
    pub mean_acceptance: f64,
    pub mean_step: f64,
}

/// Draws `realizations` independent equilibrium configurations by running
/// one tuned, burned-in chain per realization. Returns positions in the
/// `[r][i][axis]` layout used by the ensemble estimators.
pub fn equilibrium_positions<T: Scalar>(
    kernel: &KernelSpec<T>,
    confinement: Confinement,
    kappa: f64,
    beta: f64,
    n: usize,
    realizations: usize,
    burn_sweeps: usize,
    seed: u64,
) -> Result<(Vec<T>, EquilibriumRun)> {
    if realizations == 0 {
        return Err(Error::Config("need at least one realization".into()));
    }
    let chains: Vec<(Vec<T>, f64, f64)> = (0..realizations)
        .into_par_iter()
        .map(|r| -> Result<(Vec<T>, f64, f64)> {
            let mut sampler = GibbsSampler::new(
                kernel.clone(),
                confinement,
                kappa,
                beta,
                n,
                seed,
                r as u64,
            )?;
            let acc = sampler.tune(60)?;
            sampler.run_sweeps(burn_sweeps);
            Ok((sampler.positions.clone(), acc, sampler.step))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = kernel.domain.dim();
    let mut positions = Vec::with_capacity(realizations * n * dim);
    let mut acc = 0.0;
    let mut step = 0.0;
    for (p, a, s) in &chains {
        positions.extend_from_slice(p);
        acc += a;
        step += s;
    }
    Ok((
        positions,
        EquilibriumRun {
            mean_acceptance: acc / realizations as f64,
            mean_step: step / realizations as f64,
        },
    ))
}

/// Independent Maxwellian velocities with variance `1/beta` per coordinate,
/// in the `[r][i][axis]` layout.
pub fn maxwellian_velocities<T: Scalar>(
    count: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<T>> {
    if !(beta > 0.0) {
        return Err(Error::Config("inverse temperature must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let sd = (1.0 / beta).sqrt();
    Ok((0..count)
        .map(|_| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            T::real(sd * xi)
        })
        .collect())
}
