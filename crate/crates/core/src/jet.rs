//! Jet-space calculus over a declared system: total derivatives,
//! consistent dependent-variable substitution, prolonged generator
//! action, on-shell reduction, and the first-order approximate symmetry
//! check.

use std::collections::BTreeMap;

use crate::eps::EpsSeries;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::symbol::{JetVar, MultiIndex, Symbol};
use crate::system::{Generator, PdeSystem};

/// D_x over a system (cap comes from the system).
pub fn total_derivative(sys: &PdeSystem, e: &Expr, x: &Symbol) -> Result<Expr> {
    e.total_derivative(x, sys.jet_cap)
}

/// Replace a dependent variable and all of its derivatives consistently:
/// `dep_J` becomes `D_J(image)`. The image may depend on independents,
/// other base dependents, constants and functions (and eps).
pub fn substitute_dependent(sys: &PdeSystem, e: &Expr, dep: &Symbol, image: &Expr) -> Result<Expr> {
    for j in image.jet_vars()? {
        if j.order() > 0 {
            return Err(Error::InvalidSubstitution(format!(
                "image contains jet {:?} of positive order",
                j
            )));
        }
        if j.dep == *dep {
            return Err(Error::InvalidSubstitution(format!(
                "image of {} mentions {} itself",
                dep.name(),
                dep.name()
            )));
        }
    }
    let jets = e.jet_vars()?;
    let mut map = BTreeMap::new();
    for j in jets.into_iter().filter(|j| j.dep == *dep) {
        let replacement = image.total_derivative_multi(&j.index, sys.jet_cap)?;
        map.insert(crate::expr::Atom::Jet(j), replacement);
    }
    if map.is_empty() {
        return e.normalize();
    }
    e.substitute_atoms(&map)
}

/// Substitute an eps-graded image psi + eps*phi for a dependent variable,
/// returning the graded result at the system truncation order.
pub fn substitute_dependent_graded(
    sys: &PdeSystem,
    e: &Expr,
    dep: &Symbol,
    psi: &Expr,
    phi: &Expr,
) -> Result<EpsSeries> {
    let eps = Expr::Sym(Symbol::eps());
    let image = psi.add(&eps.mul(phi)?)?;
    let raw = substitute_dependent(sys, e, dep, &image)?;
    EpsSeries::from_expr(&raw, sys.eps_order, true)
}

/// Prolonged action of a point generator in characteristic form:
/// X(e) = xi^i D_i e + sum_J D_J(W^sigma) dE/du^sigma_J.
pub fn prolonged_action(sys: &PdeSystem, gen: &Generator, e: &Expr) -> Result<EpsSeries> {
    let k = sys.eps_order;
    gen.validate(sys)?;
    let chars = gen.characteristic(sys)?;
    let se = EpsSeries::from_expr(e, k, true)?;
    let mut acc = EpsSeries::zero(k);
    for x in &sys.independents {
        let xi = gen.xi_of(x, k);
        if xi.is_zero() {
            continue;
        }
        let de = se.map(|c| c.total_derivative(x, sys.jet_cap))?;
        acc = acc.add(&xi.mul(&de)?)?;
    }
    for dep in &sys.dependents {
        let w = &chars[dep];
        if w.is_zero() {
            continue;
        }
        for j in e.jet_vars()? {
            if j.dep != *dep {
                continue;
            }
            let de = se.map(|c| c.diff_partial(&j))?;
            if de.is_zero() {
                continue;
            }
            let dw = w.map(|c| c.total_derivative_multi(&j.index, sys.jet_cap))?;
            acc = acc.add(&dw.mul(&de)?)?;
        }
    }
    Ok(acc)
}

/// Solved form of one equation: leading = rhs, where rhs may carry eps.
fn solved_rhs(sys: &PdeSystem, idx: usize) -> Result<Expr> {
    let eq = &sys.equations[idx];
    let (coeff, rest0) = eq
        .e0
        .as_linear_in(&eq.leading)?
        .ok_or_else(|| Error::ReductionFailure(format!("{} not linear in its leading derivative", eq.name)))?;
    let eps = Expr::Sym(Symbol::eps());
    let rest = rest0.add(&eps.mul(&eq.e1)?)?;
    // leading = -(rest)/coeff; division by an invertible monomial only
    let inv = coeff
        .pow_i(-1)
        .map_err(|_| Error::ReductionFailure(format!("{}: leading coefficient is not invertible", eq.name)))?;
    if matches!(inv, Expr::Pow(ref b, _) if matches!(**b, Expr::Sum(_))) {
        return Err(Error::ReductionFailure(format!(
            "{}: leading coefficient is a sum; refusing to invert",
            eq.name
        )));
    }
    rest.neg()?.mul(&inv)
}

struct Rewriter<'a> {
    sys: &'a PdeSystem,
    /// rhs (with eps) per equation index.
    rhs: Vec<Expr>,
    /// memoized total derivatives of the rhs per (eq, extra index).
    memo: BTreeMap<(usize, MultiIndex), Expr>,
}

impl<'a> Rewriter<'a> {
    fn new(sys: &'a PdeSystem) -> Result<Self> {
        let mut rhs = Vec::with_capacity(sys.equations.len());
        for i in 0..sys.equations.len() {
            rhs.push(solved_rhs(sys, i)?);
        }
        Ok(Rewriter { sys, rhs, memo: BTreeMap::new() })
    }

    /// Match a jet variable against the leading patterns.
    fn matches(&self, j: &JetVar) -> Option<(usize, MultiIndex)> {
        for (i, eq) in self.sys.equations.iter().enumerate() {
            if j.dep == eq.leading.dep && j.index.contains(&eq.leading.index) {
                let extra = j.index.minus(&eq.leading.index).unwrap();
                return Some((i, extra));
            }
        }
        None
    }

    fn consequence(&mut self, eq_idx: usize, extra: &MultiIndex) -> Result<Expr> {
        if let Some(e) = self.memo.get(&(eq_idx, extra.clone())) {
            return Ok(e.clone());
        }
        let e = self.rhs[eq_idx].total_derivative_multi(extra, self.sys.jet_cap)?;
        self.memo.insert((eq_idx, extra.clone()), e.clone());
        Ok(e)
    }

    /// One parallel rewrite pass; returns None at the fixpoint.
    fn pass(&mut self, e: &Expr, k: usize) -> Result<Option<Expr>> {
        let mut map = BTreeMap::new();
        for j in e.jet_vars()? {
            if let Some((idx, extra)) = self.matches(&j) {
                let rep = self.consequence(idx, &extra)?;
                map.insert(crate::expr::Atom::Jet(j), rep);
            }
        }
        if map.is_empty() {
            return Ok(None);
        }
        let raw = e.substitute_atoms(&map)?;
        // re-truncate: rewriting may raise eps powers
        let series = EpsSeries::from_expr(&raw, k, true)?;
        Ok(Some(series.to_expr()?))
    }
}

/// Evaluation on the solution manifold of the full (perturbed) system:
/// leading derivatives and their differential consequences are rewritten
/// until none remain, eps-truncated at the series order.
pub fn on_shell_reduce(sys: &PdeSystem, series: &EpsSeries) -> Result<EpsSeries> {
    let k = series.truncation_order();
    let mut rw = Rewriter::new(sys)?;
    let mut e = series.to_expr()?;
    let max_order = e.max_jet_order()?.max(1) as usize;
    let bound = 2 * max_order;
    let mut passes = 0;
    while let Some(next) = rw.pass(&e, k)? {
        e = next;
        passes += 1;
        if passes > bound {
            return Err(Error::ReductionDiverged(bound));
        }
    }
    EpsSeries::from_expr(&e, k, true)
}

/// Evaluation on the unperturbed manifold E0 = 0 of a plain expression.
pub fn on_shell_reduce_unperturbed(sys: &PdeSystem, e: &Expr) -> Result<Expr> {
    let sys0 = sys.unperturbed();
    let series = EpsSeries::constant(e, 0)?;
    let red = on_shell_reduce(&sys0, &series)?;
    Ok(red.coeff(0).clone())
}

/// Report of the first-order approximate symmetry condition.
#[derive(Clone, Debug)]
pub struct SymmetryReport {
    pub holds: bool,
    /// Per-equation residual of the symmetry condition (grade 0 slice).
    pub residuals: Vec<Expr>,
    /// Per-equation auxiliary function H.
    pub h: Vec<Expr>,
}

/// Check the first-order condition X1(E0)|_{E0=0} + H = 0 with
/// H = (1/eps) X0(E)|_{E=0}; the X1 term is evaluated on the unperturbed
/// manifold and H on the full manifold, exactly as stated.
pub fn check_approx_symmetry(sys: &PdeSystem, gen: &Generator) -> Result<SymmetryReport> {
    if sys.eps_order < 1 {
        return Err(Error::InvalidSystem("approximate symmetry needs eps order >= 1".into()));
    }
    gen.validate(sys)?;
    let k = sys.eps_order;
    let x0 = gen.grade(0, k);
    let x1 = gen.grade(1, k);
    let mut residuals = Vec::new();
    let mut hs = Vec::new();
    let mut holds = true;
    for eq in &sys.equations {
        let full = eq.full()?;
        // H: grade-0 action on the full equation, reduced on the full
        // manifold, divided by eps.
        let a = prolonged_action(sys, &x0, &full)?;
        let a_red = on_shell_reduce(sys, &a)?;
        let shifted = a_red.shift_down()?; // errors when an eps^-1 term would remain
        let h = shifted.coeff(0).clone();
        // X1 acting on E0, reduced on the unperturbed manifold.
        let b = prolonged_action(sys, &x1, &eq.e0)?;
        let b_red = on_shell_reduce_unperturbed(sys, b.coeff(0))?;
        let residual = b_red.add(&h)?;
        if !residual.is_zero() {
            holds = false;
        }
        residuals.push(residual);
        hs.push(h);
    }
    Ok(SymmetryReport { holds, residuals, h: hs })
}

/// An exact symmetry check for the unperturbed part: X (ungraded, taken at
/// grade 0) satisfies X(E0)|_{E0=0} = 0 for every equation.
pub fn is_exact_symmetry_unperturbed(sys: &PdeSystem, gen: &Generator) -> Result<bool> {
    let k = sys.eps_order;
    let x0 = gen.grade(0, k);
    for eq in &sys.equations {
        let a = prolonged_action(sys, &x0, &eq.e0)?;
        let red = on_shell_reduce_unperturbed(sys, a.coeff(0))?;
        if !red.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_document, parse_expr, Scope};

    fn wave_general() -> crate::dsl::ParsedDocument {
        parse_document(
            "indep t x; dep u; func F(u), G(u); eps order 1;\n\
             eq W: u_tt - F'(u)*u_x^2 - F(u)*u_xx + eps*G(u)*u_t = 0 lead u_tt;\n\
             gen X: xi(x)=x, xi(t)=t;\n",
        )
        .unwrap()
    }

    fn per1() -> crate::dsl::ParsedDocument {
        parse_document(
            "indep t x; dep u; eps order 1;\n\
             eq P: u_tt - u_xx + eps*u_t = 0 lead u_tt;\n\
             gen X: xi(t)=1, eta(u)=eps*(-1/2*u);\n",
        )
        .unwrap()
    }

    #[test]
    fn total_derivative_examples() {
        let doc = wave_general();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let x = sys.independent("x").unwrap().clone();
        let t = sys.independent("t").unwrap().clone();
        // D_x u = u_x
        assert_eq!(
            total_derivative(sys, &parse_expr("u", &scope).unwrap(), &x).unwrap(),
            parse_expr("u_x", &scope).unwrap()
        );
        // D_t (x u_x) = x u_xt
        assert_eq!(
            total_derivative(sys, &parse_expr("x*u_x", &scope).unwrap(), &t).unwrap(),
            parse_expr("x*u_xt", &scope).unwrap()
        );
        // D_x (F(u) u_x) = F'(u) u_x^2 + F(u) u_xx
        assert_eq!(
            total_derivative(sys, &parse_expr("F(u)*u_x", &scope).unwrap(), &x).unwrap(),
            parse_expr("F'(u)*u_x^2 + F(u)*u_xx", &scope).unwrap()
        );
    }

    #[test]
    fn substitute_dependent_examples() {
        let doc = parse_document(
            "indep t x; dep u v; const c1 c2 c3 c4; func f(x,t); eps order 1;\n\
             eq L: u_tt - u_xx = 0 lead u_tt;\n",
        )
        .unwrap();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let v = sys.dependent("v").unwrap().clone();
        // v_t with v -> c1 t x + c2 x + c3 t + c4 gives c1 x + c3
        let vt = parse_expr("v_t", &scope).unwrap();
        let image = parse_expr("c1*t*x + c2*x + c3*t + c4", &scope).unwrap();
        assert_eq!(
            substitute_dependent(sys, &vt, &v, &image).unwrap(),
            parse_expr("c1*x + c3", &scope).unwrap()
        );
        // v_tt with v -> c1 u + f(x,t) gives c1 u_tt + f_tt
        let vtt = parse_expr("v_tt", &scope).unwrap();
        let image2 = parse_expr("c1*u + f(x,t)", &scope).unwrap();
        assert_eq!(
            substitute_dependent(sys, &vtt, &v, &image2).unwrap(),
            parse_expr("c1*u_tt + f_tt", &scope).unwrap()
        );
        // v_x with v -> 0 gives 0
        let vx = parse_expr("v_x", &scope).unwrap();
        assert!(substitute_dependent(sys, &vx, &v, &Expr::zero()).unwrap().is_zero());
    }

    #[test]
    fn substitution_commutes_with_total_derivative() {
        let doc = parse_document(
            "indep t x; dep u v; const c1; func f(x,t); eq L: u_tt - u_xx = 0 lead u_tt;",
        )
        .unwrap();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let v = sys.dependent("v").unwrap().clone();
        let x = sys.independent("x").unwrap().clone();
        let e = parse_expr("v_t*v + x*v_x^2", &scope).unwrap();
        let image = parse_expr("c1*u^2 + f(x,t)*x", &scope).unwrap();
        let lhs = substitute_dependent(sys, &total_derivative(sys, &e, &x).unwrap(), &v, &image).unwrap();
        let rhs = total_derivative(sys, &substitute_dependent(sys, &e, &v, &image).unwrap(), &x).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn prolonged_action_translation_annihilates_autonomous() {
        // X = d_t on u_tt - u_xx: no explicit t dependence, so X(E) = 0
        let doc = parse_document(
            "indep t x; dep u; eq L: u_tt - u_xx = 0 lead u_tt;\ngen T: xi(t)=1;\n",
        )
        .unwrap();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let e = parse_expr("u_tt - u_xx", &scope).unwrap();
        let a = prolonged_action(sys, &doc.generators["T"], &e).unwrap();
        assert!(a.is_zero());
    }

    #[test]
    fn prolonged_action_linear_scaling() {
        // eta = u on u_tt - u_xx reproduces the equation
        let doc = parse_document(
            "indep t x; dep u; eq L: u_tt - u_xx = 0 lead u_tt;\ngen S: eta(u)=u;\n",
        )
        .unwrap();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let e = parse_expr("u_tt - u_xx", &scope).unwrap();
        let a = prolonged_action(sys, &doc.generators["S"], &e).unwrap();
        assert_eq!(a.coeff(0), &e);
    }

    #[test]
    fn scaling_action_on_wave_is_minus_two_e0() {
        // X = x dx + t dt on E0 = u_tt - F' u_x^2 - F u_xx gives -2 E0
        let doc = wave_general();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let e0 = sys.equations[0].e0.clone();
        let a = prolonged_action(sys, &doc.generators["X"], &e0).unwrap();
        let expected = e0.scale(&crate::expr::rat_int(-2)).unwrap();
        assert_eq!(a.coeff(0), &expected);
        assert!(a.coeff(1).is_zero());
        let _ = scope;
    }

    #[test]
    fn on_shell_reduce_examples() {
        let doc = per1();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        // u_tt reduced by the perturbed wave equation -> u_xx - eps u_t
        let utt = EpsSeries::from_expr(&parse_expr("u_tt", &scope).unwrap(), 1, false).unwrap();
        let red = on_shell_reduce(sys, &utt).unwrap();
        assert_eq!(red.coeff(0), &parse_expr("u_xx", &scope).unwrap());
        assert_eq!(red.coeff(1), &parse_expr("-u_t", &scope).unwrap());
        // differential consequence D_x(u_tt) = D_x(u_xx): u_ttx rewrites to
        // u_xxx (plus the eps correction), so the pair cancels at grade 0
        let e = parse_expr("x*(u_ttx - u_xxx)", &scope).unwrap();
        let red2 = on_shell_reduce(sys, &EpsSeries::from_expr(&e, 1, false).unwrap()).unwrap();
        assert!(red2.coeff(0).is_zero());
        assert_eq!(red2.coeff(1), &parse_expr("-x*u_tx", &scope).unwrap());
    }

    #[test]
    fn unperturbed_reduction_is_projection() {
        let doc = wave_general();
        let sys = &doc.system;
        let scope = Scope::from_system(sys);
        let e = parse_expr("u_tt*u_x + x*u_ttt", &scope).unwrap();
        let once = on_shell_reduce_unperturbed(sys, &e).unwrap();
        let twice = on_shell_reduce_unperturbed(sys, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn approx_symmetry_per1_holds() {
        let doc = per1();
        let report = check_approx_symmetry(&doc.system, &doc.generators["X"]).unwrap();
        assert!(report.holds, "residuals: {:?}", report.residuals);
        assert!(report.h[0].is_zero());
    }

    #[test]
    fn approx_symmetry_wave_exp_example() {
        let doc = parse_document(
            "indep t x; dep u; eps order 1;\n\
             eq W: u_tt - exp(u)*u_x^2 - exp(u)*u_xx + eps*u_t = 0 lead u_tt;\n\
             gen X: xi(x)=x, xi(t)=t + eps*(1/2)*t^2, eta(u)=eps*(-2*t);\n",
        )
        .unwrap();
        let report = check_approx_symmetry(&doc.system, &doc.generators["X"]).unwrap();
        assert!(report.holds, "residuals: {:?}", report.residuals);
        // H = u_t for this case
        let scope = Scope::from_system(&doc.system);
        assert_eq!(report.h[0], parse_expr("u_t", &scope).unwrap());
    }

    #[test]
    fn pure_translation_extended_by_zero_holds() {
        let doc = per1();
        let sys = &doc.system;
        let gen = parse_document(
            "indep t x; dep u; eps order 1;\n\
             eq P: u_tt - u_xx + eps*u_t = 0 lead u_tt;\n\
             gen T: xi(t)=1;\n",
        )
        .unwrap();
        let report = check_approx_symmetry(sys, &gen.generators["T"]).unwrap();
        assert!(report.holds);
        assert!(report.h[0].is_zero());
    }

    #[test]
    fn non_symmetry_rejected() {
        // eta = u is not an exact symmetry of the nonlinear wave equation
        let doc = parse_document(
            "indep t x; dep u; eps order 1;\n\
             eq W: u_tt - exp(u)*u_x^2 - exp(u)*u_xx + eps*u_t = 0 lead u_tt;\n\
             gen B: eta(u)=u;\n",
        )
        .unwrap();
        let r = check_approx_symmetry(&doc.system, &doc.generators["B"]);
        assert!(matches!(r, Err(Error::NotASymmetryCandidate)));
    }
}
