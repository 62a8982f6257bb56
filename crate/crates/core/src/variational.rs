//! Formal Lagrangians, Euler operators and adjoint systems.
//!
//! The Euler operator with respect to a derivative coordinate u_J uses
//! symmetrized partials: the weight of the D_B(dL/du_{J+B}) term is
//! tuple_mult(B) / tuple_mult(J+B), where tuple_mult counts the ordered
//! spellings of a multiset. For J empty this reduces to the familiar
//! alternating-sign operator with plain partials. The convention is fixed
//! so that the divergence identity behind the conservation formulas holds
//! with ordered-index summation; the identity is tested in the
//! conservation module.

use num::One;

use crate::eps::EpsSeries;
use crate::error::{Error, Result};
use crate::expr::{Expr, Rat};
use crate::symbol::{JetVar, MultiIndex, Symbol};
use crate::system::PdeSystem;

/// The formal Lagrangian sum_beta w^beta (E0_beta + eps E1_beta).
#[derive(Clone, Debug)]
pub struct FormalLagrangian {
    pub value: EpsSeries,
    pub adjoint_vars: Vec<Symbol>,
}

pub fn formal_lagrangian(sys: &PdeSystem) -> Result<FormalLagrangian> {
    let adjoint_vars = sys.adjoint_vars(!sys.is_unperturbed());
    let k = sys.eps_order;
    let mut value = EpsSeries::zero(k);
    for (eq, w) in sys.equations.iter().zip(&adjoint_vars) {
        let e = EpsSeries::from_expr(&eq.full()?, k, true)?;
        value = value.add(&e.mul_expr(&Expr::sym(w))?)?;
    }
    Ok(FormalLagrangian { value, adjoint_vars })
}

/// delta L / delta u^sigma on a plain expression (eps allowed as an inert
/// symbol): sum over occurring multisets B of (-1)^|B| D_B dL/du_B.
pub fn euler_expr(l: &Expr, sigma: &Symbol, cap: u32) -> Result<Expr> {
    higher_euler_expr(l, &JetVar::base(sigma), cap)
}

/// delta L / delta u_J for an arbitrary multiset index J (J may be empty,
/// which gives the classical operator).
pub fn higher_euler_expr(l: &Expr, jv: &JetVar, cap: u32) -> Result<Expr> {
    let mut acc = Expr::zero();
    for m in l.jet_vars()? {
        if m.dep != jv.dep || !m.index.contains(&jv.index) {
            continue;
        }
        let b = m.index.minus(&jv.index).unwrap();
        let dl = l.diff_partial(&m)?;
        if dl.is_zero() {
            continue;
        }
        let sign = if b.order() % 2 == 0 { Rat::one() } else { -Rat::one() };
        let weight = sign * b.tuple_multiplicity() / m.index.tuple_multiplicity();
        let term = dl.total_derivative_multi(&b, cap)?.scale(&weight)?;
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

/// Graded Euler operator: applies grade-wise (the operator is linear).
pub fn euler_operator(l: &EpsSeries, sigma: &Symbol, cap: u32) -> Result<EpsSeries> {
    l.map(|c| euler_expr(c, sigma, cap))
}

/// Graded higher Euler operator with respect to a derivative coordinate.
pub fn higher_euler_operator(l: &EpsSeries, jv: &JetVar, cap: u32) -> Result<EpsSeries> {
    if jv.order() == 0 {
        return Err(Error::InvalidSystem(
            "higher Euler operator expects a derivative coordinate of order >= 1".into(),
        ));
    }
    l.map(|c| higher_euler_expr(c, jv, cap))
}

/// The adjoint system: delta L~ / delta u^sigma for each original
/// dependent sigma, as eps-graded expressions over the adjoint variables.
pub fn adjoint_system(sys: &PdeSystem) -> Result<(Vec<EpsSeries>, Vec<Symbol>)> {
    let lag = formal_lagrangian(sys)?;
    let mut out = Vec::with_capacity(sys.dependents.len());
    for sigma in &sys.dependents {
        out.push(euler_operator(&lag.value, sigma, sys.jet_cap)?);
    }
    Ok((out, lag.adjoint_vars))
}

/// Structural linearity in the adjoint variables: every monomial of every
/// adjoint equation carries total adjoint-degree exactly one.
pub fn adjoint_is_linear(adjoint: &[EpsSeries], adjoint_vars: &[Symbol]) -> Result<bool> {
    for series in adjoint {
        for grade in series.coeffs() {
            for term in grade.terms() {
                let mut degree = 0i64;
                for j in term.jet_vars()? {
                    if adjoint_vars.contains(&j.dep) {
                        degree += count_jet_degree(&term, &j)?;
                    }
                }
                if !term.is_zero() && degree != 1 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn count_jet_degree(term: &Expr, j: &JetVar) -> Result<i64> {
    let powers = term.collect_powers(j)?;
    Ok(powers.keys().max().copied().unwrap_or(0))
}

/// Convenience builder: the weight tuple_mult(B)/tuple_mult(J+B) as used
/// by the conservation formula's ordered-index sums.
pub fn ordered_sum_weight(a: &MultiIndex) -> Rat {
    a.tuple_multiplicity()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_document, parse_expr, print_eps_with, Scope};

    fn wave_doc() -> crate::dsl::ParsedDocument {
        parse_document(
            "indep t x; dep u; func F(u), G(u); eps order 1;\n\
             eq W: u_tt - F'(u)*u_x^2 - F(u)*u_xx + eps*G(u)*u_t = 0 lead u_tt;\n",
        )
        .unwrap()
    }

    #[test]
    fn formal_lagrangian_of_wave_family() {
        let doc = wave_doc();
        let lag = formal_lagrangian(&doc.system).unwrap();
        assert_eq!(lag.adjoint_vars[0].name(), "w");
        let scope = Scope::from_system(&doc.system).with_extra_dependents(&lag.adjoint_vars);
        let g0 = parse_expr("w*(u_tt - F'(u)*u_x^2 - F(u)*u_xx)", &scope).unwrap();
        let g1 = parse_expr("w*G(u)*u_t", &scope).unwrap();
        assert_eq!(lag.value.coeff(0), &g0);
        assert_eq!(lag.value.coeff(1), &g1);
    }

    #[test]
    fn formal_lagrangian_unperturbed_uses_v() {
        let doc = parse_document("indep t x; dep u; eq L: u_tt - u_xx = 0 lead u_tt;").unwrap();
        let lag = formal_lagrangian(&doc.system).unwrap();
        assert_eq!(lag.adjoint_vars[0].name(), "v");
        let scope = Scope::from_system(&doc.system).with_extra_dependents(&lag.adjoint_vars);
        assert_eq!(
            lag.value.coeff(0),
            &parse_expr("v*(u_tt - u_xx)", &scope).unwrap()
        );
    }

    #[test]
    fn adjoint_of_wave_family() {
        let doc = wave_doc();
        let sys = &doc.system;
        let (adj, vars) = adjoint_system(sys).unwrap();
        let scope = Scope::from_system(sys).with_extra_dependents(&vars);
        let expected =
            parse_expr("w_tt - F(u)*w_xx - eps*G(u)*w_t", &scope).unwrap();
        let got = adj[0].to_expr().unwrap();
        assert_eq!(got, expected, "printed: {}", print_eps_with(&adj[0], &sys.functions));
        assert!(adjoint_is_linear(&adj, &vars).unwrap());
    }

    #[test]
    fn euler_annihilates_total_divergence() {
        // delta/du [D_x(u^2)] = 0
        let doc = wave_doc();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let u = sys.dependent("u").unwrap().clone();
        let x = sys.independent("x").unwrap().clone();
        let e = parse_expr("u^2", &scope).unwrap().total_derivative(&x, sys.jet_cap).unwrap();
        let r = euler_expr(&e, &u, sys.jet_cap).unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn euler_of_quadratic_wave_action() {
        // delta/du [1/2 u_t^2 - 1/2 u_x^2] = -u_tt + u_xx
        let doc = wave_doc();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let u = sys.dependent("u").unwrap().clone();
        let l = parse_expr("1/2*u_t^2 - 1/2*u_x^2", &scope).unwrap();
        let r = euler_expr(&l, &u, sys.jet_cap).unwrap();
        assert_eq!(r, parse_expr("-u_tt + u_xx", &scope).unwrap());
    }

    #[test]
    fn higher_euler_examples() {
        let doc = parse_document("indep t x; dep u v; eq L: u_tt - u_xx = 0 lead u_tt;").unwrap();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let u = sys.dependent("u").unwrap().clone();
        let ut = JetVar::base(&u).raised("t");
        let utt = ut.raised("t");
        // delta/du_t [v u_tt] = -v_t ; delta/du_tt [v u_tt] = v
        let l = parse_expr("v*u_tt", &scope).unwrap();
        assert_eq!(
            higher_euler_expr(&l, &ut, sys.jet_cap).unwrap(),
            parse_expr("-v_t", &scope).unwrap()
        );
        assert_eq!(
            higher_euler_expr(&l, &utt, sys.jet_cap).unwrap(),
            parse_expr("v", &scope).unwrap()
        );
        // mixed coordinate: delta/du_t [v u_xt] = -1/2 v_x
        let l2 = parse_expr("v*u_xt", &scope).unwrap();
        assert_eq!(
            higher_euler_expr(&l2, &ut, sys.jet_cap).unwrap(),
            parse_expr("-1/2*v_x", &scope).unwrap()
        );
    }

    #[test]
    fn higher_euler_wave_flux_coefficient() {
        // delta/du_x [w F(u) u_xx] at grade 0 is -D_x(w F(u))
        let doc = wave_doc();
        let sys = &doc.system;
        let lag = formal_lagrangian(sys).unwrap();
        let scope = Scope::from_system(sys).with_extra_dependents(&lag.adjoint_vars);
        let u = sys.dependent("u").unwrap().clone();
        let ux = JetVar::base(&u).raised("x");
        let l = parse_expr("w*F(u)*u_xx", &scope).unwrap();
        let got = higher_euler_expr(&l, &ux, sys.jet_cap).unwrap();
        let expected = parse_expr("-(w_x*F(u) + w*F'(u)*u_x)", &scope).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn adjoint_of_per2() {
        // u_tt - u_xx + eps(u u_t + 1/2 t u_t^2 - 1/2 t u_x^2):
        // adjoint is w_tt - w_xx - eps[(u w)_t + t(u_t w)_t - t(u_x w)_x]
        let doc = parse_document(
            "indep t x; dep u; eps order 1;\n\
             eq P: u_tt - u_xx + eps*(u*u_t + 1/2*t*u_t^2 - 1/2*t*u_x^2) = 0 lead u_tt;\n",
        )
        .unwrap();
        let sys = &doc.system;
        let (adj, vars) = adjoint_system(sys).unwrap();
        let scope = Scope::from_system(sys).with_extra_dependents(&vars);
        // -[(u w)_t + t (u_t w)_t - t (u_x w)_x] expanded
        let expected_g1 = parse_expr(
            "-(u_t*w + u*w_t) - t*(u_tt*w + u_t*w_t) + t*(u_xx*w + u_x*w_x)",
            &scope,
        )
        .unwrap();
        let got = &adj[0];
        assert_eq!(got.coeff(1), &expected_g1);
        assert_eq!(got.coeff(0), &parse_expr("w_tt - w_xx", &scope).unwrap());
    }
}
