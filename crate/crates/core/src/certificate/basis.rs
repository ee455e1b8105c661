//! Basis functions of the certificate template `V(x, x̂) = Σ_j q_j p_j(x, x̂)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single monomial basis function.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Term {
    /// `Π_k (x_k − x̂_k)^{e_k}`; all-zero exponents give the constant term.
    Difference { exponents: Vec<u32> },
    /// `Π_k x_k^{a_k} · x̂_k^{b_k}`.
    Product { x: Vec<u32>, x_hat: Vec<u32> },
}

impl Term {
    pub fn dim(&self) -> usize {
        match self {
            Term::Difference { exponents } => exponents.len(),
            Term::Product { x, .. } => x.len(),
        }
    }

    pub fn degree(&self) -> u32 {
        match self {
            Term::Difference { exponents } => exponents.iter().sum(),
            Term::Product { x, x_hat } => x.iter().chain(x_hat).sum(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], x_hat: &[f64]) -> f64 {
        match self {
            Term::Difference { exponents } => exponents
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(k, &e)| (x[k] - x_hat[k]).powi(e as i32))
                .product(),
            Term::Product { x: a, x_hat: b } => {
                let mut v = 1.0;
                for k in 0..a.len() {
                    if a[k] > 0 {
                        v *= x[k].powi(a[k] as i32);
                    }
                    if b[k] > 0 {
                        v *= x_hat[k].powi(b[k] as i32);
                    }
                }
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub terms: Vec<Term>,
}

/// Generator for the usual difference-form bases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Highest even total degree.
    pub degree: u32,
    /// Include mixed monomials such as `d_0 d_1` on multi-dimensional states.
    #[serde(default)]
    pub cross_terms: bool,
}

impl BasisConfig {
    pub fn build(&self, dim: usize) -> Result<BasisSpec> {
        BasisSpec::even_difference(dim, self.degree, self.cross_terms)
    }
}

fn exponent_vectors(dim: usize, total: u32) -> Vec<Vec<u32>> {
    if dim == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in exponent_vectors(dim - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

impl BasisSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let Some(first) = terms.first() else {
            return Err(Error::Config("basis needs at least one term".into()));
        };
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::Config("basis terms need a positive dimension".into()));
        }
        for t in &terms {
            let consistent = match t {
                Term::Difference { exponents } => exponents.len() == dim,
                Term::Product { x, x_hat } => x.len() == dim && x_hat.len() == dim,
            };
            if !consistent {
                return Err(Error::Config(format!("basis term {t:?} does not have dimension {dim}")));
            }
        }
        Ok(Self { terms })
    }

    /// Difference monomials of even total degree `degree, degree-2, …, 2`, then
    /// the constant. Without cross terms only pure powers `d_k^e` appear.
    pub fn even_difference(dim: usize, degree: u32, cross_terms: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("basis dimension must be positive".into()));
        }
        if degree % 2 != 0 {
            return Err(Error::Config(format!("basis degree must be even, got {degree}")));
        }
        let mut terms = Vec::new();
        for total in (2..=degree).rev().step_by(2) {
            for e in exponent_vectors(dim, total) {
                if cross_terms || e.iter().filter(|&&v| v > 0).count() == 1 {
                    terms.push(Term::Difference { exponents: e });
                }
            }
        }
        terms.push(Term::Difference { exponents: vec![0; dim] });
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(Term::degree).max().unwrap_or(0)
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], x_hat: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(x, x_hat);
        }
    }

    pub fn eval(&self, x: &[f64], x_hat: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, x_hat, &mut out);
        out
    }

    /// `Σ_j q_j p_j(x, x̂)` without allocating.
    #[inline]
    pub fn value(&self, q: &[f64], x: &[f64], x_hat: &[f64]) -> f64 {
        self.terms.iter().zip(q).map(|(t, c)| c * t.eval(x, x_hat)).sum()
    }

    pub fn check_dims(&self, q: &[f64], x: &[f64], x_hat: &[f64]) -> Result<()> {
        if q.len() != self.len() || x.len() != self.dim() || x_hat.len() != self.dim() {
            return Err(Error::InputShape(format!(
                "basis with {} terms on dimension {} evaluated with |q|={}, |x|={}, |x̂|={}",
                self.len(),
                self.dim(),
                q.len(),
                x.len(),
                x_hat.len()
            )));
        }
        Ok(())
    }
}
