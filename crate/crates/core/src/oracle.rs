//! Parametric selection model with bivariate normal errors: a simulator and
//! closed-form mean effects, used as ground truth for the nonparametric
//! pipeline.
//!
//! The model is
//!
//! ```text
//! Y = α'X + ε            observed iff H > 0
//! H = max(γ'Z + η, 0)
//! (ε, η) ~ N(0, 0, 1, 1, ρ) independent of Z
//! ```
//!
//! Under it the control function is V = Φ(η) for workers, the LASF is
//! μ(x, v) = α'x + ρ Φ^{-1}(v), and a unit passes selection rule r iff
//! V > Φ(-γ_r'z).
//!
//! Population integrals over F_Z are evaluated by Monte Carlo. Draws depend
//! only on the seed and the covariate law itself, so groups sharing a law
//! share draws and every decomposition telescopes exactly.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{MicroSample, Observation};
use crate::error::{Error, Result};
use crate::math::{dot, normal_cdf, normal_pdf};

/// λ(u) = φ(u) / Φ(u).
///
/// For u < -5 the ratio is taken from the continued fraction of the Mills
/// ratio, which stays accurate where Φ(u) underflows.
pub fn inverse_mills(u: f64) -> f64 {
    if u >= -5.0 {
        return normal_pdf(u) / normal_cdf(u);
    }
    // Φ(-x)/φ(x) = 1/(x+ 1/(x+ 2/(x+ 3/(x+ ...)))), x = -u
    let x = -u;
    let mut tail = x;
    for k in (1..=120).rev() {
        tail = x + k as f64 / tail;
    }
    tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    Point(f64),
    Normal { mean: f64, sd: f64 },
    Bernoulli(f64),
}

impl Marginal {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Point(v) => v,
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Marginal::Bernoulli(p) => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Independent marginals, one per covariate.
    pub marginals: Vec<Marginal>,
}

/// Finite mixture of products of independent marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLaw {
    pub names: Vec<String>,
    pub components: Vec<MixtureComponent>,
}

impl CovariateLaw {
    pub fn independent(names: &[&str], marginals: Vec<Marginal>) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            components: vec![MixtureComponent {
                weight: 1.0,
                marginals,
            }],
        }
    }

    fn check(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("covariate law needs a component".into()));
        }
        for c in &self.components {
            if c.marginals.len() != self.names.len() || !(c.weight > 0.0) {
                return Err(Error::Config("malformed covariate law component".into()));
            }
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        chosen.marginals.iter().map(|m| m.draw(rng)).collect()
    }

    /// Seed for this law's Monte Carlo draws.
    fn stream_seed(&self, seed: u64) -> u64 {
        let bytes = serde_json::to_vec(self).expect("law serializes");
        let digest = Sha256::digest(&bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head) ^ seed
    }
}

/// Parameters of the parametric selection model for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSMParams {
    /// Wage coefficients, intercept first, then `wage_covariates`.
    pub alpha: Vec<f64>,
    pub wage_covariates: Vec<String>,
    /// Hours-index coefficients, intercept first, then every covariate of
    /// the law in order.
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub covariate_law: CovariateLaw,
    /// Multiplies positive hours; the control function is unaffected.
    #[serde(default = "unit")]
    pub hours_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl HSMParams {
    pub fn check(&self) -> Result<()> {
        self.covariate_law.check()?;
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if self.alpha.len() != 1 + self.wage_covariates.len() {
            return Err(Error::Config("alpha needs an intercept plus one entry per wage covariate".into()));
        }
        if self.gamma.len() != 1 + self.covariate_law.names.len() {
            return Err(Error::Config("gamma needs an intercept plus one entry per covariate".into()));
        }
        if !(self.hours_scale > 0.0) {
            return Err(Error::Config("hours_scale must be positive".into()));
        }
        self.wage_positions().map(|_| ())
    }

    fn wage_positions(&self) -> Result<Vec<usize>> {
        self.wage_covariates
            .iter()
            .map(|n| {
                self.covariate_law
                    .names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::UnknownCovariate(n.clone()))
            })
            .collect()
    }

    /// γ'(1, z).
    pub fn hours_index(&self, z: &[f64]) -> f64 {
        self.gamma[0] + dot(&self.gamma[1..], z)
    }

    /// α'(1, x) with x taken from z.
    fn wage_index(&self, z: &[f64], pos: &[usize]) -> f64 {
        self.alpha[0] + pos.iter().zip(&self.alpha[1..]).map(|(&j, a)| a * z[j]).sum::<f64>()
    }
}

/// Draws a sample of size `n` from the model.
pub fn simulate_hsm(params: &HSMParams, n: usize, seed: u64) -> Result<MicroSample> {
    params.check()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let pos = params.wage_positions()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail = (1.0 - params.rho * params.rho).sqrt();
    let observations = (0..n)
        .map(|_| {
            let z = params.covariate_law.draw(&mut rng);
            let eta: f64 = rng.sample(StandardNormal);
            let xi: f64 = rng.sample(StandardNormal);
            let eps = params.rho * eta + tail * xi;
            let latent = params.hours_index(&z) + eta;
            let hours = if latent > 0.0 { latent * params.hours_scale } else { 0.0 };
            Observation {
                hours,
                log_wage: (hours > 0.0).then(|| params.wage_index(&z, &pos) + eps),
                covariates: z,
            }
        })
        .collect();
    MicroSample::new("sim", params.covariate_law.names.clone(), observations, None)
}

/// A Monte Carlo estimate carried with its influence values on each draw
/// set, so that linear combinations get correct standard errors.
#[derive(Debug, Clone)]
struct Estimate {
    value: f64,
    influence: BTreeMap<u64, Vec<f64>>,
}

impl Estimate {
    fn combine(terms: &[(f64, &Estimate)]) -> Estimate {
        let mut value = 0.0;
        let mut influence: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (c, e) in terms {
            value += c * e.value;
            for (set, psi) in &e.influence {
                let acc = influence.entry(*set).or_insert_with(|| vec![0.0; psi.len()]);
                for (a, p) in acc.iter_mut().zip(psi) {
                    *a += c * p;
                }
            }
        }
        Estimate { value, influence }
    }

    fn se(&self) -> f64 {
        self.influence
            .values()
            .map(|psi| {
                let m = psi.len() as f64;
                let mean = psi.iter().sum::<f64>() / m;
                psi.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0) / m
            })
            .sum::<f64>()
            .sqrt()
    }

    fn value(&self) -> Valued {
        Valued {
            value: self.value,
            se: self.se(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valued {
    pub value: f64,
    pub se: f64,
}

struct DrawSet {
    id: u64,
    z: Vec<Vec<f64>>,
}

impl DrawSet {
    fn new(law: &CovariateLaw, draws: usize, seed: u64) -> Self {
        let id = law.stream_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(id);
        Self {
            id,
            z: (0..draws).map(|_| law.draw(&mut rng)).collect(),
        }
    }

    /// ∫ f(z) Φ(γ_r'z) dF / ∫ Φ(γ_r'z) dF over the draws.
    fn selected_mean(&self, rule: &HSMParams, f: impl Fn(&[f64]) -> f64) -> Estimate {
        let m = self.z.len() as f64;
        let probs: Vec<f64> = self.z.iter().map(|z| normal_cdf(rule.hours_index(z))).collect();
        let vals: Vec<f64> = self.z.iter().map(|z| f(z)).collect();
        let den = probs.iter().sum::<f64>() / m;
        let num = vals.iter().zip(&probs).map(|(v, p)| v * p).sum::<f64>() / m;
        let mu = num / den;
        let psi = vals
            .iter()
            .zip(&probs)
            .map(|(v, p)| (v * p - mu * p) / den)
            .collect();
        Estimate {
            value: mu,
            influence: BTreeMap::from([(self.id, psi)]),
        }
    }
}

/// Closed-form mean effects between two parameter sets, with the
/// individual elements of each effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEffects {
    pub selection: Valued,
    pub composition: Valued,
    pub structural: Valued,
    pub total: Valued,
    /// Selection effect under the parametric-mean convention:
    /// ρ1 E[λ(γ1'Z1) | H1 > 0] − ρ0 E[λ(γ0'Z0) | H0 > 0].
    pub mr_selection: Valued,
    /// (observables, unobservables) elements of the selection effect.
    pub selection_elements: [f64; 2],
    pub composition_elements: [f64; 2],
    /// (returns, selection-correlation) elements of the structural effect.
    pub structural_elements: [f64; 2],
    /// The three elements that make up `mr_selection`.
    pub mr_elements: [f64; 3],
}

/// Mean effects of moving from `p0` to `p1`: selection μ⟨1,1,1⟩ − μ⟨1,1,0⟩,
/// composition μ⟨1,1,0⟩ − μ⟨1,0,0⟩ and structural μ⟨1,0,0⟩ − μ⟨0,0,0⟩.
pub fn closed_form_effects(p1: &HSMParams, p0: &HSMParams, mc_draws: usize, seed: u64) -> Result<OracleEffects> {
    p1.check()?;
    p0.check()?;
    if p1.covariate_law.names != p0.covariate_law.names || p1.wage_covariates != p0.wage_covariates {
        return Err(Error::Config("parameter sets use different covariates".into()));
    }
    if mc_draws < 2 {
        return Err(Error::Config("need at least two Monte Carlo draws".into()));
    }
    let pos = p1.wage_positions()?;
    let z1 = DrawSet::new(&p1.covariate_law, mc_draws, seed);
    let z0 = DrawSet::new(&p0.covariate_law, mc_draws, seed);

    let x1_11 = z1.selected_mean(p1, |z| p1.wage_index(z, &pos));
    let x1_10 = z1.selected_mean(p0, |z| p1.wage_index(z, &pos));
    let x1_00 = z0.selected_mean(p0, |z| p1.wage_index(z, &pos));
    let x0_00 = z0.selected_mean(p0, |z| p0.wage_index(z, &pos));
    let l_11 = z1.selected_mean(p1, |z| inverse_mills(p1.hours_index(z)));
    let l_10 = z1.selected_mean(p0, |z| inverse_mills(p0.hours_index(z)));
    let l_00 = z0.selected_mean(p0, |z| inverse_mills(p0.hours_index(z)));

    let (r1, r0) = (p1.rho, p0.rho);
    let sel_obs = Estimate::combine(&[(1.0, &x1_11), (-1.0, &x1_10)]);
    let sel_unobs = Estimate::combine(&[(r1, &l_11), (-r1, &l_10)]);
    let comp_obs = Estimate::combine(&[(1.0, &x1_10), (-1.0, &x1_00)]);
    let comp_unobs = Estimate::combine(&[(r1, &l_10), (-r1, &l_00)]);
    let str_returns = Estimate::combine(&[(1.0, &x1_00), (-1.0, &x0_00)]);
    let str_rho = Estimate::combine(&[(r1 - r0, &l_00)]);

    let selection = Estimate::combine(&[(1.0, &sel_obs), (1.0, &sel_unobs)]);
    let composition = Estimate::combine(&[(1.0, &comp_obs), (1.0, &comp_unobs)]);
    let structural = Estimate::combine(&[(1.0, &str_returns), (1.0, &str_rho)]);
    let total = Estimate::combine(&[(1.0, &selection), (1.0, &composition), (1.0, &structural)]);
    let mr = Estimate::combine(&[(r1, &l_11), (-r0, &l_00)]);

    Ok(OracleEffects {
        selection: selection.value(),
        composition: composition.value(),
        structural: structural.value(),
        total: total.value(),
        mr_selection: mr.value(),
        selection_elements: [sel_obs.value, sel_unobs.value],
        composition_elements: [comp_obs.value, comp_unobs.value],
        structural_elements: [str_returns.value, str_rho.value],
        mr_elements: [sel_unobs.value, comp_unobs.value, str_rho.value],
    })
}

/// μ⟨t,k,r⟩ = ∫ [α_t'x + ρ_t λ(γ_r'z)] Φ_k(γ_r'z) dF_{Z_k}(z).
pub fn counterfactual_mean(t: &HSMParams, k: &HSMParams, r: &HSMParams, mc_draws: usize, seed: u64) -> Result<Valued> {
    for p in [t, k, r] {
        p.check()?;
    }
    if mc_draws < 2 {
        return Err(Error::Config("need at least two Monte Carlo draws".into()));
    }
    let pos = t.wage_positions()?;
    let draws = DrawSet::new(&k.covariate_law, mc_draws, seed);
    Ok(draws
        .selected_mean(r, |z| t.wage_index(z, &pos) + t.rho * inverse_mills(r.hours_index(z)))
        .value())
}

/// E[λ(γ'Z) | H > 0] under the given parameters.
pub fn selected_mills_mean(p: &HSMParams, mc_draws: usize, seed: u64) -> Result<Valued> {
    p.check()?;
    let draws = DrawSet::new(&p.covariate_law, mc_draws, seed);
    Ok(draws.selected_mean(p, |z| inverse_mills(p.hours_index(z))).value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mills_reference_points() {
        assert!((inverse_mills(0.0) - 0.797_884_560_802_865_4).abs() < 1e-15);
        assert!(inverse_mills(10.0) < 1e-20 && inverse_mills(10.0) > 0.0);
        // continuity where the evaluation switches method
        let below = inverse_mills(-5.0 - 1e-9);
        let at = inverse_mills(-5.0);
        assert!((below - at).abs() < 1e-8);
    }
}
