//! Compositional condition over per-subsystem certificates and the network-level
//! relation `{V ≤ ψ̄}` with its distance bound `ε = (ψ̄/α)^{1/2}`.

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certificate::AsbfSolution;
use crate::error::{Error, Result};

/// Inputs of one summand of the compositional condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermInput {
    pub mu: f64,
    pub varpi: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub sigma: f64,
}

impl TermInput {
    pub fn new(mu: f64, varpi: f64, lipschitz: f64, sigma: f64) -> Self {
        Self { mu, varpi, lipschitz, sigma }
    }

    pub fn term(&self) -> f64 {
        self.mu + self.varpi + self.lipschitz * self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemTerm {
    #[serde(flatten)]
    pub input: TermInput,
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub per_subsystem: Vec<SubsystemTerm>,
    pub total: f64,
    pub pass: bool,
}

/// Neumaier summation, so the total does not depend on the order of the parts
/// beyond the last bit.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn check_condition(parts: &[TermInput]) -> Result<ConditionCheck> {
    if parts.is_empty() {
        return Err(Error::Config("compositional condition needs at least one subsystem".into()));
    }
    for (i, p) in parts.iter().enumerate() {
        if !(p.varpi > 0.0) || !(p.lipschitz >= 0.0) || !(p.sigma >= 0.0) || !p.mu.is_finite() {
            return Err(Error::Domain(format!(
                "subsystem {i}: need varpi > 0, L >= 0, sigma >= 0 and finite mu, got {p:?}"
            )));
        }
    }
    let per_subsystem: Vec<SubsystemTerm> = parts
        .iter()
        .map(|p| SubsystemTerm {
            input: *p,
            term: p.term(),
        })
        .collect();
    let total = compensated_sum(per_subsystem.iter().map(|t| t.term));
    Ok(ConditionCheck {
        per_subsystem,
        total,
        pass: total <= 0.0,
    })
}

/// `(max γ, min α, Σ ψ)` over the subsystem certificates.
pub fn abf_params<S: Borrow<AsbfSolution>>(solutions: &[S]) -> Result<(f64, f64, f64)> {
    if solutions.is_empty() {
        return Err(Error::Config("no subsystem certificate given".into()));
    }
    let gamma = solutions.iter().map(|s| s.borrow().gamma).fold(f64::NEG_INFINITY, f64::max);
    let alpha = solutions.iter().map(|s| s.borrow().alpha).fold(f64::INFINITY, f64::min);
    let psi = compensated_sum(solutions.iter().map(|s| s.borrow().psi));
    Ok((gamma, alpha, psi))
}

/// `(ψ̄, ε)` with `ψ̄ = ψ/((1−γ)η)` and `ε = (ψ̄/α)^{1/2}`.
pub fn epsilon_bound(psi: f64, alpha: f64, gamma: f64, eta: f64) -> Result<(f64, f64)> {
    let open_unit = |v: f64| v > 0.0 && v < 1.0;
    if !open_unit(eta) || !open_unit(gamma) || !(alpha > 0.0) || !(psi > 0.0) || !alpha.is_finite() || !psi.is_finite() {
        return Err(Error::Domain(format!(
            "epsilon bound needs eta, gamma in (0,1) and alpha, psi > 0; got psi={psi}, alpha={alpha}, gamma={gamma}, eta={eta}"
        )));
    }
    let psi_bar = psi / ((1.0 - gamma) * eta);
    Ok((psi_bar, (psi_bar / alpha).sqrt()))
}

/// `V(x, x̂) = Σ_i V_i(x_i, x̂_i)` on stacked states.
pub fn evaluate_abf<S: Borrow<AsbfSolution>>(solutions: &[S], x: &[f64], x_hat: &[f64]) -> Result<f64> {
    let total_dim: usize = solutions.iter().map(|s| s.borrow().basis.dim()).sum();
    if x.len() != total_dim || x_hat.len() != total_dim {
        return Err(Error::InputShape(format!(
            "stacked states have lengths {} and {}, certificates cover {total_dim}",
            x.len(),
            x_hat.len()
        )));
    }
    let mut offset = 0;
    let mut parts = Vec::with_capacity(solutions.len());
    for s in solutions {
        let s = s.borrow();
        let n = s.basis.dim();
        parts.push(s.evaluate(&x[offset..offset + n], &x_hat[offset..offset + n])?);
        offset += n;
    }
    Ok(compensated_sum(parts.into_iter()))
}

pub fn relation_contains<S: Borrow<AsbfSolution>>(solutions: &[S], psi_bar: f64, x: &[f64], x_hat: &[f64]) -> Result<bool> {
    Ok(evaluate_abf(solutions, x, x_hat)? <= psi_bar)
}

/// Certificate file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionCertificate {
    pub per_subsystem: Vec<SubsystemTerm>,
    pub total: f64,
    pub pass: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub psi: f64,
    pub eta: f64,
    pub gamma_bar: f64,
    pub psi_bar: f64,
    pub epsilon: f64,
    /// Digests of the artifacts the certificate was built from, keyed by file name.
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
}

/// Combines the condition check with the network parameters. `solutions[i]`
/// must belong to `parts[i]`.
pub fn certify<S: Borrow<AsbfSolution>>(solutions: &[S], parts: &[TermInput], eta: f64) -> Result<CompositionCertificate> {
    if solutions.len() != parts.len() {
        return Err(Error::InputShape(format!(
            "{} certificates for {} condition terms",
            solutions.len(),
            parts.len()
        )));
    }
    let check = check_condition(parts)?;
    let (gamma, alpha, psi) = abf_params(solutions)?;
    let (psi_bar, epsilon) = epsilon_bound(psi, alpha, gamma, eta)?;
    Ok(CompositionCertificate {
        per_subsystem: check.per_subsystem,
        total: check.total,
        pass: check.pass,
        gamma,
        alpha,
        psi,
        eta,
        gamma_bar: 1.0 - (1.0 - eta) * (1.0 - gamma),
        psi_bar,
        epsilon,
        digests: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::BasisSpec;
    use proptest::prelude::*;

    fn room_like(gamma: f64, alpha: f64, psi: f64) -> AsbfSolution {
        AsbfSolution {
            basis: BasisSpec::even_difference(1, 6, false).unwrap(),
            q: vec![0.4949, -0.25, 0.001, 0.8],
            alpha,
            gamma,
            rho: 0.0,
            psi,
            mu: -0.0496,
            varpi: 1e-6,
            feasibility_residual: 0.0,
            dataset_digest: String::new(),
            diagnostics: None,
        }
    }

    #[test]
    fn published_totals() {
        let room = TermInput::new(-0.0496, 1e-6, 0.9675, 0.05);
        assert!((room.term() - -0.0012).abs() < 1e-4);
        let c = check_condition(&[room; 7]).unwrap();
        assert!(c.pass);
        assert!((c.total - 7.0 * room.term()).abs() < 1e-12);

        let vehicle = TermInput::new(-0.7717, 1e-6, 1.5753, 0.3);
        assert!((vehicle.term() - -0.2991).abs() < 1e-4);
        assert!(check_condition(&[vehicle]).unwrap().pass);
    }

    #[test]
    fn positive_terms_fail() {
        for m in [1, 5, 100] {
            let c = check_condition(&vec![TermInput::new(0.0, 1e-6, 1.0, 0.1); m]).unwrap();
            assert!(!c.pass);
            assert!((c.total - m as f64 * 0.100001).abs() < 1e-9);
        }
        assert!(check_condition(&[]).is_err());
        assert!(check_condition(&[TermInput::new(0.0, 0.0, 1.0, 0.1)]).is_err());
        assert!(check_condition(&[TermInput::new(0.0, 1e-6, -1.0, 0.1)]).is_err());
    }

    #[test]
    fn network_parameters() {
        let sols = [room_like(0.9, 0.5, 0.1), room_like(0.99, 0.2, 0.2), room_like(0.95, 0.8, 0.3)];
        let (g, a, p) = abf_params(&sols).unwrap();
        assert_eq!((g, a), (0.99, 0.2));
        assert!((p - 0.6).abs() < 1e-15);
        let same = vec![room_like(0.985, 0.3, 0.01); 4];
        assert_eq!(abf_params(&same).unwrap(), (0.985, 0.3, 0.04));
        assert!(abf_params::<AsbfSolution>(&[]).is_err());
    }

    #[test]
    fn epsilon_example() {
        let (pb, eps) = epsilon_bound(0.1, 1.0, 0.9, 0.5).unwrap();
        assert!((pb - 2.0).abs() < 1e-12);
        assert!((eps - 2f64.sqrt()).abs() < 1e-12);
        let (_, e2) = epsilon_bound(0.1, 2.0, 0.9, 0.5).unwrap();
        assert!((e2 - eps / 2f64.sqrt()).abs() < 1e-12);
        let (_, tiny) = epsilon_bound(1e-14, 1.0, 0.9, 0.5).unwrap();
        assert!(tiny < 1e-6);
        for bad in [(0.1, 1.0, 1.0, 0.5), (0.1, 1.0, 0.9, 0.0), (0.0, 1.0, 0.9, 0.5), (0.1, -1.0, 0.9, 0.5)] {
            assert!(epsilon_bound(bad.0, bad.1, bad.2, bad.3).is_err());
        }
    }

    #[test]
    fn stacked_evaluation_and_relation() {
        let a = room_like(0.985, 1.0, 0.01);
        let pair = [a.clone(), a.clone()];
        let v = evaluate_abf(&pair, &[0.2, -0.1], &[0.2, -0.1]).unwrap();
        assert!((v - 1.6).abs() < 1e-12);
        assert!(relation_contains(&pair, 2.0, &[0.2, -0.1], &[0.2, -0.1]).unwrap());
        assert!(!relation_contains(&pair, 1.5, &[0.2, -0.1], &[0.2, -0.1]).unwrap());
        let single = evaluate_abf(&[a.clone()], &[0.7], &[0.1]).unwrap();
        assert_eq!(single, a.evaluate(&[0.7], &[0.1]).unwrap());
        assert!(evaluate_abf(&pair, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn quadratic_relation_excludes_positive_values() {
        let mut s = room_like(0.9, 1.0, 0.1);
        s.q = vec![0.0, 0.0, 1.0, 0.0];
        assert!(relation_contains(&[s.clone()], 0.0, &[0.0], &[0.0]).unwrap());
        assert!(!relation_contains(&[s.clone()], 0.0, &[0.1], &[0.0]).unwrap());
        // level set of d²: moving from d to -d keeps membership
        assert_eq!(
            relation_contains(&[s.clone()], 0.05, &[0.2], &[0.0]).unwrap(),
            relation_contains(&[s], 0.05, &[-0.2], &[0.0]).unwrap()
        );
    }

    #[test]
    fn certificate_fields_are_consistent() {
        let sols = vec![room_like(0.985, 0.4, 0.02); 3];
        let parts = vec![TermInput::new(-0.0496, 1e-6, 0.9675, 0.05); 3];
        let c = certify(&sols, &parts, 0.99).unwrap();
        assert!((c.epsilon.powi(2) * c.alpha - c.psi_bar).abs() < 1e-12);
        assert!(c.gamma_bar > 0.0 && c.gamma_bar < 1.0);
        let sum: f64 = c.per_subsystem.iter().map(|t| t.term).sum();
        assert!((c.total - sum).abs() < 1e-12);
        let json = serde_json::to_value(&c).unwrap();
        assert!(json["per_subsystem"][0].get("L").is_some());
        assert!(certify(&sols[..2], &parts, 0.99).is_err());
    }

    proptest! {
        #[test]
        fn total_is_permutation_invariant(
            parts in proptest::collection::vec((-1.0f64..1.0, 1e-6f64..1e-2, 0.0f64..5.0, 0.0f64..0.5), 1..60),
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let parts: Vec<TermInput> = parts.into_iter().map(|(a, b, c, d)| TermInput::new(a, b, c, d)).collect();
            let mut shuffled = parts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = check_condition(&parts).unwrap().total;
            let b = check_condition(&shuffled).unwrap().total;
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn worsening_a_term_never_lowers_the_total(
            parts in proptest::collection::vec((-1.0f64..1.0, 1e-6f64..1e-2, 0.0f64..5.0, 0.0f64..0.5), 1..30),
            idx in any::<prop::sample::Index>(),
            bump in 0.0f64..1.0
        ) {
            let parts: Vec<TermInput> = parts.into_iter().map(|(a, b, c, d)| TermInput::new(a, b, c, d)).collect();
            let mut worse = parts.clone();
            worse[idx.index(parts.len())].mu += bump;
            prop_assert!(check_condition(&worse).unwrap().total >= check_condition(&parts).unwrap().total - 1e-12);
        }

        #[test]
        fn epsilon_monotone(psi in 1e-6f64..10.0, alpha in 1e-3f64..10.0, gamma in 0.01f64..0.99, eta in 0.01f64..0.99, f in 1.01f64..4.0) {
            let (_, e) = epsilon_bound(psi, alpha, gamma, eta).unwrap();
            prop_assert!(epsilon_bound(psi, alpha * f, gamma, eta).unwrap().1 < e);
            prop_assert!(epsilon_bound(psi * f, alpha, gamma, eta).unwrap().1 > e);
        }
    }
}
