//! Expressions graded by powers of the small parameter, truncated at a
//! configurable order K (default 1, i.e. arithmetic mod eps^2).

use crate::error::{Error, Result};
use crate::expr::{Expr, Rat};
use crate::symbol::Symbol;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EpsSeries {
    coeffs: Vec<Expr>,
}

impl EpsSeries {
    /// A zero series truncated at order `k`.
    pub fn zero(k: usize) -> EpsSeries {
        EpsSeries { coeffs: vec![Expr::zero(); k + 1] }
    }

    /// Build from grade coefficients; none may contain the eps symbol.
    pub fn from_coeffs(coeffs: Vec<Expr>) -> Result<EpsSeries> {
        assert!(!coeffs.is_empty(), "series needs at least grade 0");
        let mut out = Vec::with_capacity(coeffs.len());
        for c in coeffs {
            let c = c.normalize()?;
            if c.contains_eps()? {
                return Err(Error::EpsNotAllowed("series coefficient contains eps".into()));
            }
            out.push(c);
        }
        Ok(EpsSeries { coeffs: out })
    }

    /// Split an expression (which may mention eps) into grades 0..=k.
    /// With `truncate` set, grades above k are discarded; otherwise they
    /// are an error.
    pub fn from_expr(e: &Expr, k: usize, truncate: bool) -> Result<EpsSeries> {
        Ok(EpsSeries { coeffs: e.eps_grades(k, truncate)? })
    }

    pub fn constant(e: &Expr, k: usize) -> Result<EpsSeries> {
        let mut coeffs = vec![Expr::zero(); k + 1];
        coeffs[0] = e.normalize()?;
        EpsSeries::from_coeffs(coeffs)
    }

    pub fn truncation_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, grade: usize) -> &Expr {
        &self.coeffs[grade]
    }

    pub fn coeffs(&self) -> &[Expr] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// Reassemble grade coefficients into a single expression in eps.
    pub fn to_expr(&self) -> Result<Expr> {
        let eps = Expr::Sym(Symbol::eps());
        let mut acc = Expr::zero();
        for (i, c) in self.coeffs.iter().enumerate() {
            acc = acc.add(&c.mul(&eps.pow_i(i as i64)?)?)?;
        }
        Ok(acc)
    }

    fn check_same_order(&self, other: &EpsSeries) -> Result<()> {
        if self.truncation_order() != other.truncation_order() {
            return Err(Error::TruncationMismatch(
                self.truncation_order(),
                other.truncation_order(),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &EpsSeries) -> Result<EpsSeries> {
        self.check_same_order(other)?;
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            coeffs.push(a.add(b)?);
        }
        Ok(EpsSeries { coeffs })
    }

    pub fn sub(&self, other: &EpsSeries) -> Result<EpsSeries> {
        self.add(&other.neg()?)
    }

    pub fn neg(&self) -> Result<EpsSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(c.neg()?);
        }
        Ok(EpsSeries { coeffs })
    }

    /// Graded ring product mod eps^(K+1).
    pub fn mul(&self, other: &EpsSeries) -> Result<EpsSeries> {
        self.check_same_order(other)?;
        let k = self.truncation_order();
        let mut coeffs = vec![Expr::zero(); k + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if i + j > k {
                    break;
                }
                coeffs[i + j] = coeffs[i + j].add(&a.mul(b)?)?;
            }
        }
        Ok(EpsSeries { coeffs })
    }

    pub fn mul_expr(&self, e: &Expr) -> Result<EpsSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(c.mul(e)?);
        }
        EpsSeries::from_coeffs(coeffs)
    }

    pub fn scale(&self, q: &Rat) -> Result<EpsSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(c.scale(q)?);
        }
        Ok(EpsSeries { coeffs })
    }

    /// Apply a grade-wise map (e.g. a total derivative).
    pub fn map<F: FnMut(&Expr) -> Result<Expr>>(&self, mut f: F) -> Result<EpsSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(f(c)?);
        }
        Ok(EpsSeries { coeffs })
    }

    /// Divide by eps: grade 0 must vanish; grades shift down and the top
    /// grade becomes zero (it is unknown past the truncation).
    pub fn shift_down(&self) -> Result<EpsSeries> {
        if !self.coeffs[0].is_zero() {
            return Err(Error::NotASymmetryCandidate);
        }
        let mut coeffs: Vec<Expr> = self.coeffs[1..].to_vec();
        coeffs.push(Expr::zero());
        Ok(EpsSeries { coeffs })
    }

    /// Restrict or extend the truncation order (extension pads with zero).
    pub fn with_order(&self, k: usize) -> EpsSeries {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(k + 1, Expr::zero());
        coeffs.truncate(k + 1);
        EpsSeries { coeffs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::{JetVar, MultiIndex, Symbol};

    fn x_expr() -> Expr {
        Expr::sym(&Symbol::independent("x"))
    }
    fn t_expr() -> Expr {
        Expr::sym(&Symbol::independent("t"))
    }
    fn u_expr() -> Expr {
        Expr::sym(&Symbol::dependent("u"))
    }

    #[test]
    fn first_order_product() {
        // (a0 + eps a1)(b0 + eps b1) = a0 b0 + eps(a0 b1 + a1 b0)
        let a = EpsSeries::from_coeffs(vec![x_expr(), t_expr()]).unwrap();
        let b = EpsSeries::from_coeffs(vec![u_expr(), x_expr()]).unwrap();
        let p = a.mul(&b).unwrap();
        let g0 = x_expr().mul(&u_expr()).unwrap();
        let g1 = x_expr()
            .mul(&x_expr())
            .unwrap()
            .add(&t_expr().mul(&u_expr()).unwrap())
            .unwrap();
        assert_eq!(p.coeff(0), &g0);
        assert_eq!(p.coeff(1), &g1);
    }

    #[test]
    fn nilpotency() {
        // (eps x)(eps t) = 0 at K = 1
        let a = EpsSeries::from_coeffs(vec![Expr::zero(), x_expr()]).unwrap();
        let b = EpsSeries::from_coeffs(vec![Expr::zero(), t_expr()]).unwrap();
        assert!(a.mul(&b).unwrap().is_zero());
    }

    #[test]
    fn truncated_inverse_pair() {
        // (1 + eps u)(1 - eps u) = 1 at K = 1
        let a = EpsSeries::from_coeffs(vec![Expr::one(), u_expr()]).unwrap();
        let b = EpsSeries::from_coeffs(vec![Expr::one(), u_expr().neg().unwrap()]).unwrap();
        let p = a.mul(&b).unwrap();
        assert_eq!(p.coeff(0), &Expr::one());
        assert!(p.coeff(1).is_zero());
    }

    #[test]
    fn mismatched_orders_rejected() {
        let a = EpsSeries::zero(1);
        let b = EpsSeries::zero(2);
        assert!(matches!(a.add(&b), Err(Error::TruncationMismatch(1, 2))));
    }

    #[test]
    fn round_trip_through_expr() {
        let u = Symbol::dependent("u");
        let ux = Expr::jet(&JetVar::new(&u, MultiIndex::from_letters("x", &["x", "t"]).unwrap()));
        let s = EpsSeries::from_coeffs(vec![u_expr(), ux]).unwrap();
        let e = s.to_expr().unwrap();
        let back = EpsSeries::from_expr(&e, 1, false).unwrap();
        assert_eq!(s, back);
    }
}
