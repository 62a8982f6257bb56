//! Canonical symbolic expressions over exact rationals.
//!
//! Expressions are polynomial in a set of atoms: symbols, jet variables,
//! applications of arbitrary (or registered concrete) functions, and, as a
//! last resort, negative powers of sums. The canonical form is a sorted sum
//! of monomials with collected integer exponents and normalized rational
//! coefficients; two expressions are semantically equal exactly when their
//! canonical forms are structurally identical.
//!
//! Coefficients are exact `BigRational`s: no floating point enters the
//! symbolic kernel. Division is restricted to nonzero rationals and to
//! invertible monomials (single-term products of atom powers).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num::{BigRational, One, Zero};

use crate::error::{Error, Result};
use crate::symbol::{JetVar, MultiIndex, Symbol, SymbolKind};

pub type Rat = BigRational;

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(n.into())
}

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n.into(), d.into())
}

/// Functions with a built-in derivative rule and evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Builtin {
    /// `exp` with the rule exp' = exp.
    Exp,
}

/// An application of a function symbol to argument expressions, together
/// with formal derivative orders per argument slot (so `F'(u)` is
/// `deriv = [1]`, and for `f(x,t)` the slot orders spell `f_x`, `f_tt`, …).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncApp {
    pub name: Arc<str>,
    pub builtin: Option<Builtin>,
    pub deriv: Vec<u32>,
    pub args: Vec<Expr>,
}

impl FuncApp {
    pub fn total_deriv_order(&self) -> u32 {
        self.deriv.iter().sum()
    }

    fn raised(&self, slot: usize) -> FuncApp {
        let mut d = self.deriv.clone();
        d[slot] += 1;
        let f = FuncApp { name: self.name.clone(), builtin: self.builtin, deriv: d, args: self.args.clone() };
        canonical_func(f)
    }
}

/// Collapse built-in derivative rules (only exp' = exp for now).
fn canonical_func(mut f: FuncApp) -> FuncApp {
    if f.builtin == Some(Builtin::Exp) {
        for d in &mut f.deriv {
            *d = 0;
        }
    }
    f
}

impl fmt::Debug for FuncApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        if self.deriv.iter().any(|d| *d > 0) {
            write!(f, "^({:?})", self.deriv)?;
        }
        write!(f, "(")?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", a)?;
        }
        write!(f, ")")
    }
}

/// A symbolic expression. Values built through the public constructors are
/// always in canonical form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Rat(Rat),
    Sym(Symbol),
    Jet(JetVar),
    Func(FuncApp),
    Pow(Box<Expr>, i64),
    Prod(Vec<Expr>),
    Sum(Vec<Expr>),
}

/// Multiplicative atoms of the canonical form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub(crate) enum Atom {
    Sym(Symbol),
    Jet(JetVar),
    Func(FuncApp),
    /// A sum raised to a negative power, kept opaque.
    SumPow(Expr),
}

impl Atom {
    pub(crate) fn to_expr(&self) -> Expr {
        match self {
            Atom::Sym(s) => Expr::Sym(s.clone()),
            Atom::Jet(j) => Expr::Jet(j.clone()),
            Atom::Func(f) => Expr::Func(f.clone()),
            Atom::SumPow(e) => e.clone(),
        }
    }
}

pub(crate) type Mono = BTreeMap<Atom, i64>;

/// Sparse polynomial over atoms; the canonical carrier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Poly(pub(crate) BTreeMap<Mono, Rat>);

impl Poly {
    pub(crate) fn zero() -> Poly {
        Poly(BTreeMap::new())
    }

    pub(crate) fn constant(q: Rat) -> Poly {
        let mut m = BTreeMap::new();
        if !q.is_zero() {
            m.insert(Mono::new(), q);
        }
        Poly(m)
    }

    pub(crate) fn one() -> Poly {
        Poly::constant(Rat::one())
    }

    pub(crate) fn atom(a: Atom) -> Poly {
        let mut mono = Mono::new();
        mono.insert(a, 1);
        let mut m = BTreeMap::new();
        m.insert(mono, Rat::one());
        Poly(m)
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn add_term(&mut self, mono: Mono, coeff: Rat) {
        if coeff.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.0.entry(mono) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub(crate) fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub(crate) fn scale(&self, q: &Rat) -> Poly {
        if q.is_zero() {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, c)| (m.clone(), c * q)).collect())
    }

    pub(crate) fn neg(&self) -> Poly {
        self.scale(&-Rat::one())
    }

    pub(crate) fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &other.0 {
                let mut m = m1.clone();
                for (a, e) in m2 {
                    let entry = m.entry(a.clone()).or_insert(0);
                    *entry += e;
                    if *entry == 0 {
                        m.remove(a);
                    }
                }
                out.add_term(m, c1 * c2);
            }
        }
        out
    }

    pub(crate) fn pow(&self, n: i64) -> Result<Poly> {
        if n == 0 {
            return Ok(Poly::one());
        }
        if n > 0 {
            let mut base = self.clone();
            let mut exp = n as u64;
            let mut acc = Poly::one();
            loop {
                if exp & 1 == 1 {
                    acc = acc.mul(&base);
                }
                exp >>= 1;
                if exp == 0 {
                    break;
                }
                base = base.mul(&base);
            }
            return Ok(acc);
        }
        // Negative power: invert a single monomial, or wrap a sum opaquely.
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        if self.0.len() == 1 {
            let (mono, coeff) = self.0.iter().next().unwrap();
            let mut inv_coeff = Rat::one() / coeff.clone();
            let mut out_c = Rat::one();
            let k = (-n) as u64;
            for _ in 0..k {
                out_c *= inv_coeff.clone();
            }
            inv_coeff = out_c;
            let mut m = Mono::new();
            for (a, e) in mono {
                m.insert(a.clone(), e * n);
            }
            let mut map = BTreeMap::new();
            map.insert(m, inv_coeff);
            return Ok(Poly(map));
        }
        let base = poly_to_expr(self);
        let mut mono = Mono::new();
        mono.insert(Atom::SumPow(base), n);
        let mut map = BTreeMap::new();
        map.insert(mono, Rat::one());
        Ok(Poly(map))
    }
}

pub(crate) fn to_poly(e: &Expr) -> Result<Poly> {
    match e {
        Expr::Rat(q) => Ok(Poly::constant(q.clone())),
        Expr::Sym(s) => Ok(Poly::atom(Atom::Sym(s.clone()))),
        Expr::Jet(j) => Ok(Poly::atom(Atom::Jet(j.clone()))),
        Expr::Func(f) => {
            let mut args = Vec::with_capacity(f.args.len());
            for a in &f.args {
                args.push(a.normalize()?);
            }
            let f2 = canonical_func(FuncApp {
                name: f.name.clone(),
                builtin: f.builtin,
                deriv: f.deriv.clone(),
                args,
            });
            Ok(Poly::atom(Atom::Func(f2)))
        }
        Expr::Pow(b, n) => to_poly(b)?.pow(*n),
        Expr::Prod(fs) => {
            let mut acc = Poly::one();
            for f in fs {
                acc = acc.mul(&to_poly(f)?);
                if acc.is_zero() {
                    break;
                }
            }
            Ok(acc)
        }
        Expr::Sum(ts) => {
            let mut acc = Poly::zero();
            for t in ts {
                acc = acc.add(&to_poly(t)?);
            }
            Ok(acc)
        }
    }
}

pub(crate) fn poly_to_expr(p: &Poly) -> Expr {
    let mut terms: Vec<Expr> = Vec::with_capacity(p.0.len());
    for (mono, coeff) in &p.0 {
        terms.push(term_to_expr(mono, coeff));
    }
    match terms.len() {
        0 => Expr::Rat(Rat::zero()),
        1 => terms.pop().unwrap(),
        _ => Expr::Sum(terms),
    }
}

fn term_to_expr(mono: &Mono, coeff: &Rat) -> Expr {
    let mut factors: Vec<Expr> = Vec::with_capacity(mono.len() + 1);
    if !coeff.is_one() || mono.is_empty() {
        factors.push(Expr::Rat(coeff.clone()));
    }
    for (atom, exp) in mono {
        let base = atom.to_expr();
        if *exp == 1 {
            factors.push(base);
        } else {
            factors.push(Expr::Pow(Box::new(base), *exp));
        }
    }
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Expr::Prod(factors)
    }
}

/// Differentiation targets: a plain symbol or a jet coordinate.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum DiffTarget {
    Sym(Symbol),
    Jet(JetVar),
}

impl DiffTarget {
    pub(crate) fn as_atom(&self) -> Atom {
        match self {
            DiffTarget::Sym(s) => Atom::Sym(s.clone()),
            DiffTarget::Jet(j) => Atom::Jet(j.clone()),
        }
    }
}

/// Build the expression `coeff * mono` from canonical parts.
pub(crate) fn poly_from_term(mono: &Mono, coeff: &Rat) -> Expr {
    term_to_expr(mono, coeff)
}

impl From<&Symbol> for DiffTarget {
    fn from(s: &Symbol) -> Self {
        // Dependent variables are carried as order-0 jets.
        if s.kind() == SymbolKind::Dependent {
            DiffTarget::Jet(JetVar::base(s))
        } else {
            DiffTarget::Sym(s.clone())
        }
    }
}

impl From<&JetVar> for DiffTarget {
    fn from(j: &JetVar) -> Self {
        DiffTarget::Jet(j.clone())
    }
}

/// How an atom differentiates under a partial derivative.
fn diff_atom_partial(atom: &Atom, target: &DiffTarget) -> Result<Poly> {
    let t_atom = target.as_atom();
    if *atom == t_atom {
        return Ok(Poly::one());
    }
    match atom {
        Atom::Sym(_) | Atom::Jet(_) => Ok(Poly::zero()),
        Atom::Func(f) => {
            let mut acc = Poly::zero();
            for (slot, arg) in f.args.iter().enumerate() {
                let darg = diff_poly(&to_poly(arg)?, &mut |a| diff_atom_partial(a, target))?;
                if darg.is_zero() {
                    continue;
                }
                acc = acc.add(&Poly::atom(Atom::Func(f.raised(slot))).mul(&darg));
            }
            Ok(acc)
        }
        Atom::SumPow(base) => diff_poly(&to_poly(base)?, &mut |a| diff_atom_partial(a, target)),
    }
}

/// Product rule over the monomial structure, generic in the atom rule.
fn diff_poly(p: &Poly, datom: &mut dyn FnMut(&Atom) -> Result<Poly>) -> Result<Poly> {
    let mut out = Poly::zero();
    for (mono, coeff) in &p.0 {
        for (atom, exp) in mono {
            let d = datom(atom)?;
            if d.is_zero() {
                continue;
            }
            // coeff * exp * atom^(exp-1) * d * rest
            let mut rest = mono.clone();
            rest.remove(atom);
            let mut term = Poly(BTreeMap::from([(rest, coeff * rat_int(*exp))]));
            if *exp != 1 {
                term = term.mul(&Poly::atom(atom.clone()).pow(exp - 1)?);
            }
            out = out.add(&term.mul(&d));
        }
    }
    Ok(out)
}

/// Total-derivative rule for a single atom.
fn diff_atom_total(atom: &Atom, x: &Symbol, cap: u32) -> Result<Poly> {
    match atom {
        Atom::Sym(s) => {
            if s == x {
                Ok(Poly::one())
            } else {
                Ok(Poly::zero())
            }
        }
        Atom::Jet(j) => {
            if j.order() + 1 > cap {
                return Err(Error::CapExceeded { jet: format!("{:?}", j), cap });
            }
            Ok(Poly::atom(Atom::Jet(j.raised(x.name()))))
        }
        Atom::Func(f) => {
            let mut acc = Poly::zero();
            for (slot, arg) in f.args.iter().enumerate() {
                let darg = total_derivative_poly(&to_poly(arg)?, x, cap)?;
                if darg.is_zero() {
                    continue;
                }
                acc = acc.add(&Poly::atom(Atom::Func(f.raised(slot))).mul(&darg));
            }
            Ok(acc)
        }
        Atom::SumPow(base) => total_derivative_poly(&to_poly(base)?, x, cap),
    }
}

fn total_derivative_poly(p: &Poly, x: &Symbol, cap: u32) -> Result<Poly> {
    diff_poly(p, &mut |a| diff_atom_total(a, x, cap))
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Rat(Rat::zero())
    }

    pub fn one() -> Expr {
        Expr::Rat(Rat::one())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Rat(rat_int(n))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::Rat(rat(n, d))
    }

    pub fn sym(s: &Symbol) -> Expr {
        if s.kind() == SymbolKind::Dependent {
            Expr::Jet(JetVar::base(s))
        } else {
            Expr::Sym(s.clone())
        }
    }

    pub fn jet(j: &JetVar) -> Expr {
        Expr::Jet(j.clone())
    }

    pub fn func(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Func(FuncApp { name: Arc::from(name), builtin: None, deriv: vec![0; args.len()], args })
    }

    pub fn func_deriv(name: &str, deriv: Vec<u32>, args: Vec<Expr>) -> Expr {
        Expr::Func(FuncApp { name: Arc::from(name), builtin: None, deriv, args })
    }

    pub fn exp(arg: Expr) -> Expr {
        Expr::Func(FuncApp { name: Arc::from("exp"), builtin: Some(Builtin::Exp), deriv: vec![0], args: vec![arg] })
    }

    /// Canonical form: flattened, sorted, collected, zero-free. Idempotent
    /// and semantics-preserving.
    pub fn normalize(&self) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Rat(q) if q.is_zero())
    }

    pub fn add(&self, other: &Expr) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.add(&to_poly(other)?)))
    }

    pub fn sub(&self, other: &Expr) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.add(&to_poly(other)?.neg())))
    }

    pub fn mul(&self, other: &Expr) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.mul(&to_poly(other)?)))
    }

    pub fn neg(&self) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.neg()))
    }

    pub fn scale(&self, q: &Rat) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.scale(q)))
    }

    pub fn pow_i(&self, n: i64) -> Result<Expr> {
        Ok(poly_to_expr(&to_poly(self)?.pow(n)?))
    }

    pub fn sum(terms: &[Expr]) -> Result<Expr> {
        let mut acc = Poly::zero();
        for t in terms {
            acc = acc.add(&to_poly(t)?);
        }
        Ok(poly_to_expr(&acc))
    }

    pub fn product(factors: &[Expr]) -> Result<Expr> {
        let mut acc = Poly::one();
        for f in factors {
            acc = acc.mul(&to_poly(f)?);
        }
        Ok(poly_to_expr(&acc))
    }

    /// Partial derivative treating every other atom as an independent
    /// coordinate; function applications chain through their arguments.
    pub fn diff_partial<T: Into<DiffTarget>>(&self, target: T) -> Result<Expr> {
        let target = target.into();
        let p = to_poly(self)?;
        Ok(poly_to_expr(&diff_poly(&p, &mut |a| diff_atom_partial(a, &target))?))
    }

    /// Total derivative with respect to an independent variable.
    pub fn total_derivative(&self, x: &Symbol, cap: u32) -> Result<Expr> {
        Ok(poly_to_expr(&total_derivative_poly(&to_poly(self)?, x, cap)?))
    }

    /// Iterated total derivative over a multi-index.
    pub fn total_derivative_multi(&self, index: &MultiIndex, cap: u32) -> Result<Expr> {
        let mut acc = self.clone();
        for (var, count) in index.counts() {
            let x = Symbol::independent(var);
            for _ in 0..count {
                acc = acc.total_derivative(&x, cap)?;
            }
        }
        Ok(acc)
    }

    /// Replace one atom (symbol or jet coordinate) by an expression.
    ///
    /// Rejects circular replacements and, for a base dependent variable
    /// whose derivatives also occur, demands `substitute_dependent`.
    pub fn substitute<T: Into<DiffTarget>>(&self, target: T, replacement: &Expr) -> Result<Expr> {
        let target = target.into();
        let t_atom = target.as_atom();
        if expr_contains_atom(replacement, &t_atom)? {
            return Err(Error::CycleError(format!("{:?}", t_atom)));
        }
        if let Atom::Jet(j) = &t_atom {
            if j.index.is_empty() {
                let jets = self.jet_vars()?;
                if jets.iter().any(|o| o.dep == j.dep && o.order() > 0) {
                    return Err(Error::DependentDerivativesPresent(j.dep.name().to_string()));
                }
            }
        }
        self.substitute_atom_unchecked(&t_atom, replacement)
    }

    pub(crate) fn substitute_atom_unchecked(&self, target: &Atom, replacement: &Expr) -> Result<Expr> {
        let rep = to_poly(replacement)?;
        let p = to_poly(self)?;
        Ok(poly_to_expr(&subst_poly(&p, target, &rep)?))
    }

    /// Simultaneous substitution of several atoms.
    pub(crate) fn substitute_atoms(&self, map: &BTreeMap<Atom, Expr>) -> Result<Expr> {
        let mut reps = BTreeMap::new();
        for (a, e) in map {
            reps.insert(a.clone(), to_poly(e)?);
        }
        let p = to_poly(self)?;
        Ok(poly_to_expr(&subst_poly_multi(&p, &reps)?))
    }

    /// Register a concrete function for an arbitrary-function symbol:
    /// every application `F^(k)(args)` is rewritten through the target's
    /// own derivative rule (currently `exp`).
    pub fn substitute_function(&self, name: &str, target: Builtin) -> Result<Expr> {
        let p = to_poly(self)?;
        Ok(poly_to_expr(&subst_func_poly(&p, name, target)?))
    }

    /// Replace a function symbol by a closed-form expression in its formal
    /// parameters. `F^(k)(args)` becomes the k-th partial of the body with
    /// the formals substituted by the (rewritten) arguments.
    pub fn substitute_function_body(
        &self,
        name: &str,
        formals: &[Symbol],
        body: &Expr,
    ) -> Result<Expr> {
        let p = to_poly(self)?;
        Ok(poly_to_expr(&subst_func_body_poly(&p, name, formals, body)?))
    }

    /// All jet variables occurring anywhere, including inside function
    /// arguments and opaque sum powers.
    pub fn jet_vars(&self) -> Result<BTreeSet<JetVar>> {
        let mut out = BTreeSet::new();
        collect_jets(&to_poly(self)?, &mut out)?;
        Ok(out)
    }

    pub fn max_jet_order(&self) -> Result<u32> {
        Ok(self.jet_vars()?.iter().map(|j| j.order()).max().unwrap_or(0))
    }

    pub fn contains_sym(&self, s: &Symbol) -> Result<bool> {
        let target = Atom::Sym(s.clone());
        expr_contains_atom(self, &target)
    }

    pub fn contains_eps(&self) -> Result<bool> {
        self.contains_sym(&Symbol::eps())
    }

    /// Coefficients of the powers of one atom; nested occurrences (inside
    /// function arguments or opaque sum powers) are not collected and make
    /// the atom ineligible.
    pub fn collect_powers<T: Into<DiffTarget>>(&self, target: T) -> Result<BTreeMap<i64, Expr>> {
        let t_atom = target.into().as_atom();
        let p = to_poly(self)?;
        let mut buckets: BTreeMap<i64, Poly> = BTreeMap::new();
        for (mono, coeff) in &p.0 {
            let exp = mono.get(&t_atom).copied().unwrap_or(0);
            let mut rest = mono.clone();
            rest.remove(&t_atom);
            for (a, _) in &rest {
                if atom_contains_atom(a, &t_atom)? {
                    return Err(Error::CollectionIncomplete(format!(
                        "{:?} occurs nested inside {:?}",
                        t_atom, a
                    )));
                }
            }
            buckets
                .entry(exp)
                .or_insert_with(Poly::zero)
                .add_term(rest, coeff.clone());
        }
        Ok(buckets
            .into_iter()
            .filter(|(_, p)| !p.is_zero())
            .map(|(k, p)| (k, poly_to_expr(&p)))
            .collect())
    }

    /// Decompose as `c * atom + rest` when linear in the atom.
    pub fn as_linear_in<T: Into<DiffTarget>>(&self, target: T) -> Result<Option<(Expr, Expr)>> {
        let powers = self.collect_powers(target)?;
        if powers.keys().any(|k| *k < 0 || *k > 1) {
            return Ok(None);
        }
        let c = powers.get(&1).cloned().unwrap_or_else(Expr::zero);
        let rest = powers.get(&0).cloned().unwrap_or_else(Expr::zero);
        Ok(Some((c, rest)))
    }

    /// Split into coefficients of eps powers 0..=k. Fails when eps occurs
    /// nested inside a function argument, a higher power than `k`, or a
    /// negative power, unless `truncate` discards grades above `k`.
    pub fn eps_grades(&self, k: usize, truncate: bool) -> Result<Vec<Expr>> {
        let eps = Symbol::eps();
        let powers = self.collect_powers(&eps)?;
        let mut out = vec![Expr::zero(); k + 1];
        for (p, c) in powers {
            if p < 0 {
                return Err(Error::EpsNotAllowed("negative power of eps".into()));
            }
            let idx = p as usize;
            if idx > k {
                if truncate {
                    continue;
                }
                return Err(Error::EpsNotAllowed(format!("eps^{} beyond truncation order {}", p, k)));
            }
            if c.contains_eps()? {
                return Err(Error::EpsNotAllowed("eps nested inside a function argument".into()));
            }
            out[idx] = c;
        }
        Ok(out)
    }

    /// The additive terms of the canonical form.
    pub fn terms(&self) -> Vec<Expr> {
        match self {
            Expr::Sum(ts) => ts.clone(),
            e if e.is_zero() => vec![],
            e => vec![e.clone()],
        }
    }

    /// Monomial parts of the canonical form with coefficients stripped.
    pub fn monomials(&self) -> Result<Vec<Expr>> {
        let p = to_poly(self)?;
        Ok(p.0.keys().map(|m| term_to_expr(m, &Rat::one())).collect())
    }
}

fn subst_poly(p: &Poly, target: &Atom, rep: &Poly) -> Result<Poly> {
    let mut reps = BTreeMap::new();
    reps.insert(target.clone(), rep.clone());
    subst_poly_multi(p, &reps)
}

fn subst_poly_multi(p: &Poly, reps: &BTreeMap<Atom, Poly>) -> Result<Poly> {
    let mut out = Poly::zero();
    for (mono, coeff) in &p.0 {
        let mut term = Poly::constant(coeff.clone());
        for (atom, exp) in mono {
            let rewritten = subst_atom_multi(atom, reps)?;
            term = term.mul(&rewritten.pow(*exp)?);
        }
        out = out.add(&term);
    }
    Ok(out)
}

fn subst_atom_multi(atom: &Atom, reps: &BTreeMap<Atom, Poly>) -> Result<Poly> {
    if let Some(rep) = reps.get(atom) {
        return Ok(rep.clone());
    }
    match atom {
        Atom::Sym(_) | Atom::Jet(_) => Ok(Poly::atom(atom.clone())),
        Atom::Func(f) => {
            let mut args = Vec::with_capacity(f.args.len());
            let mut changed = false;
            for a in &f.args {
                let p = subst_poly_multi(&to_poly(a)?, reps)?;
                let e = poly_to_expr(&p);
                changed = changed || e != *a;
                args.push(e);
            }
            let f2 = canonical_func(FuncApp {
                name: f.name.clone(),
                builtin: f.builtin,
                deriv: f.deriv.clone(),
                args,
            });
            let a2 = Atom::Func(f2);
            if changed {
                if let Some(rep) = reps.get(&a2) {
                    return Ok(rep.clone());
                }
            }
            Ok(Poly::atom(a2))
        }
        Atom::SumPow(base) => {
            let p = subst_poly_multi(&to_poly(base)?, reps)?;
            // The exponent is carried by the caller; return the new base.
            Ok(p)
        }
    }
}

fn subst_func_poly(p: &Poly, name: &str, target: Builtin) -> Result<Poly> {
    let mut out = Poly::zero();
    for (mono, coeff) in &p.0 {
        let mut term = Poly::constant(coeff.clone());
        for (atom, exp) in mono {
            let base = match atom {
                Atom::Func(f) => {
                    let mut args = Vec::with_capacity(f.args.len());
                    for a in &f.args {
                        args.push(poly_to_expr(&subst_func_poly(&to_poly(a)?, name, target)?));
                    }
                    if f.name.as_ref() == name {
                        Poly::atom(Atom::Func(canonical_func(FuncApp {
                            name: Arc::from(match target {
                                Builtin::Exp => "exp",
                            }),
                            builtin: Some(target),
                            deriv: f.deriv.clone(),
                            args,
                        })))
                    } else {
                        Poly::atom(Atom::Func(canonical_func(FuncApp {
                            name: f.name.clone(),
                            builtin: f.builtin,
                            deriv: f.deriv.clone(),
                            args,
                        })))
                    }
                }
                Atom::SumPow(base) => subst_func_poly(&to_poly(base)?, name, target)?,
                a => Poly::atom(a.clone()),
            };
            term = term.mul(&base.pow(*exp)?);
        }
        out = out.add(&term);
    }
    Ok(out)
}

fn subst_func_body_poly(p: &Poly, name: &str, formals: &[Symbol], body: &Expr) -> Result<Poly> {
    let mut out = Poly::zero();
    for (mono, coeff) in &p.0 {
        let mut term = Poly::constant(coeff.clone());
        for (atom, exp) in mono {
            let base = match atom {
                Atom::Func(f) if f.name.as_ref() == name => {
                    if f.args.len() != formals.len() {
                        return Err(Error::InvalidSubstitution(format!(
                            "{} applied to {} args, body has {} formals",
                            name,
                            f.args.len(),
                            formals.len()
                        )));
                    }
                    // Differentiate the body per slot order, then bind formals.
                    let mut b = body.clone();
                    for (slot, &k) in f.deriv.iter().enumerate() {
                        for _ in 0..k {
                            b = b.diff_partial(&formals[slot])?;
                        }
                    }
                    let mut map = BTreeMap::new();
                    for (slot, formal) in formals.iter().enumerate() {
                        let arg =
                            poly_to_expr(&subst_func_body_poly(&to_poly(&f.args[slot])?, name, formals, body)?);
                        map.insert(DiffTarget::from(formal).as_atom(), arg);
                    }
                    to_poly(&b.substitute_atoms(&map)?)?
                }
                Atom::Func(f) => {
                    let mut args = Vec::with_capacity(f.args.len());
                    for a in &f.args {
                        args.push(poly_to_expr(&subst_func_body_poly(&to_poly(a)?, name, formals, body)?));
                    }
                    Poly::atom(Atom::Func(canonical_func(FuncApp {
                        name: f.name.clone(),
                        builtin: f.builtin,
                        deriv: f.deriv.clone(),
                        args,
                    })))
                }
                Atom::SumPow(base) => subst_func_body_poly(&to_poly(base)?, name, formals, body)?,
                a => Poly::atom(a.clone()),
            };
            term = term.mul(&base.pow(*exp)?);
        }
        out = out.add(&term);
    }
    Ok(out)
}

fn collect_jets(p: &Poly, out: &mut BTreeSet<JetVar>) -> Result<()> {
    for mono in p.0.keys() {
        for atom in mono.keys() {
            match atom {
                Atom::Jet(j) => {
                    out.insert(j.clone());
                }
                Atom::Func(f) => {
                    for a in &f.args {
                        collect_jets(&to_poly(a)?, out)?;
                    }
                }
                Atom::SumPow(base) => collect_jets(&to_poly(base)?, out)?,
                Atom::Sym(_) => {}
            }
        }
    }
    Ok(())
}

fn expr_contains_atom(e: &Expr, target: &Atom) -> Result<bool> {
    let p = to_poly(e)?;
    for mono in p.0.keys() {
        for atom in mono.keys() {
            if atom == target || atom_contains_atom(atom, target)? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn atom_contains_atom(a: &Atom, target: &Atom) -> Result<bool> {
    if a == target {
        return Ok(true);
    }
    match a {
        Atom::Sym(_) | Atom::Jet(_) => Ok(false),
        Atom::Func(f) => {
            for arg in &f.args {
                if expr_contains_atom(arg, target)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Atom::SumPow(base) => expr_contains_atom(base, target),
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Rat(q) => write!(f, "{}", q),
            Expr::Sym(s) => write!(f, "{}", s),
            Expr::Jet(j) => write!(f, "{:?}", j),
            Expr::Func(a) => write!(f, "{:?}", a),
            Expr::Pow(b, n) => write!(f, "({:?})^{}", b, n),
            Expr::Prod(fs) => {
                let parts: Vec<String> = fs.iter().map(|x| format!("{:?}", x)).collect();
                write!(f, "{}", parts.join("*"))
            }
            Expr::Sum(ts) => {
                let parts: Vec<String> = ts.iter().map(|x| format!("{:?}", x)).collect();
                write!(f, "({})", parts.join(" + "))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u() -> Symbol {
        Symbol::dependent("u")
    }
    fn x() -> Symbol {
        Symbol::independent("x")
    }
    fn t() -> Symbol {
        Symbol::independent("t")
    }
    fn jet(letters: &str) -> JetVar {
        JetVar::new(&u(), MultiIndex::from_letters(letters, &["x", "t"]).unwrap())
    }

    #[test]
    fn power_collection() {
        let ux = Expr::jet(&jet("x"));
        let prod = ux.mul(&ux).unwrap();
        assert_eq!(prod, Expr::Pow(Box::new(Expr::jet(&jet("x"))), 2));
    }

    #[test]
    fn cancellation_to_zero() {
        // 2u + 3u - 5u = 0
        let base = Expr::sym(&u());
        let e = Expr::sum(&[
            base.scale(&rat_int(2)).unwrap(),
            base.scale(&rat_int(3)).unwrap(),
            base.scale(&rat_int(-5)).unwrap(),
        ])
        .unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn mixed_partials_identify() {
        let a = Expr::jet(&JetVar::new(&u(), MultiIndex::from_letters("xt", &["x", "t"]).unwrap()));
        let b = Expr::jet(&JetVar::new(&u(), MultiIndex::from_letters("tx", &["x", "t"]).unwrap()));
        assert!(a.sub(&b).unwrap().is_zero());
    }

    #[test]
    fn normalize_idempotent_on_raw_tree() {
        let raw = Expr::Sum(vec![
            Expr::Prod(vec![Expr::int(2), Expr::sym(&u())]),
            Expr::Prod(vec![Expr::sym(&u()), Expr::int(3)]),
        ]);
        let n1 = raw.normalize().unwrap();
        let n2 = n1.normalize().unwrap();
        assert_eq!(n1, n2);
        assert_eq!(n1, Expr::sym(&u()).scale(&rat_int(5)).unwrap());
    }

    #[test]
    fn diff_partial_power_rule() {
        let ux = Expr::jet(&jet("x"));
        let e = ux.pow_i(2).unwrap();
        let d = e.diff_partial(&jet("x")).unwrap();
        assert_eq!(d, ux.scale(&rat_int(2)).unwrap());
    }

    #[test]
    fn diff_partial_chain_rule_through_functions() {
        // d(F(u)*u_xx)/du = F'(u)*u_xx
        let f = Expr::func("F", vec![Expr::sym(&u())]);
        let e = f.mul(&Expr::jet(&jet("xx"))).unwrap();
        let d = e.diff_partial(&u()).unwrap();
        let expected = Expr::func_deriv("F", vec![1], vec![Expr::sym(&u())])
            .mul(&Expr::jet(&jet("xx")))
            .unwrap();
        assert_eq!(d, expected);
    }

    #[test]
    fn jet_coordinates_are_independent() {
        let e = Expr::jet(&jet("t"));
        assert!(e.diff_partial(&jet("x")).unwrap().is_zero());
    }

    #[test]
    fn total_derivative_base_case() {
        let e = Expr::sym(&u());
        let d = e.total_derivative(&x(), 8).unwrap();
        assert_eq!(d, Expr::jet(&jet("x")));
    }

    #[test]
    fn total_derivative_product_rule() {
        // D_t(x*u_x) = x*u_xt
        let e = Expr::sym(&x()).mul(&Expr::jet(&jet("x"))).unwrap();
        let d = e.total_derivative(&t(), 8).unwrap();
        let expected = Expr::sym(&x()).mul(&Expr::jet(&jet("xt"))).unwrap();
        assert_eq!(d, expected);
    }

    #[test]
    fn total_derivative_function_chain() {
        // D_x(F(u)*u_x) = F'(u)*u_x^2 + F(u)*u_xx
        let f = Expr::func("F", vec![Expr::sym(&u())]);
        let e = f.mul(&Expr::jet(&jet("x"))).unwrap();
        let d = e.total_derivative(&x(), 8).unwrap();
        let expected = Expr::func_deriv("F", vec![1], vec![Expr::sym(&u())])
            .mul(&Expr::jet(&jet("x")).pow_i(2).unwrap())
            .unwrap()
            .add(&Expr::func("F", vec![Expr::sym(&u())]).mul(&Expr::jet(&jet("xx"))).unwrap())
            .unwrap();
        assert_eq!(d, expected);
    }

    #[test]
    fn cap_exceeded() {
        let e = Expr::jet(&jet("xxtt"));
        let r = e.total_derivative(&x(), 4);
        assert!(matches!(r, Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn substitute_rejects_dependent_with_derivatives() {
        let v = Symbol::dependent("v");
        let vt = JetVar::new(&v, MultiIndex::from_letters("t", &["x", "t"]).unwrap());
        let e = Expr::jet(&vt).add(&Expr::sym(&v)).unwrap();
        let r = e.substitute(&v, &Expr::sym(&x()));
        assert!(matches!(r, Err(Error::DependentDerivativesPresent(_))));
    }

    #[test]
    fn substitute_constant_to_zero() {
        let c1 = Symbol::constant("c1");
        let e = Expr::product(&[Expr::sym(&c1), Expr::sym(&t()), Expr::sym(&x())]).unwrap();
        let r = e.substitute(&c1, &Expr::zero()).unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn substitute_cycle_error() {
        let e = Expr::sym(&u());
        let rep = Expr::sym(&u()).add(&Expr::one()).unwrap();
        assert!(matches!(e.substitute(&u(), &rep), Err(Error::CycleError(_))));
    }

    #[test]
    fn register_exp_for_arbitrary_function() {
        // F(u)*u_x with F -> exp gives exp(u)*u_x; F'(u) also maps to exp(u).
        let e = Expr::func_deriv("F", vec![1], vec![Expr::sym(&u())])
            .mul(&Expr::jet(&jet("x")))
            .unwrap();
        let r = e.substitute_function("F", Builtin::Exp).unwrap();
        let expected = Expr::exp(Expr::sym(&u())).mul(&Expr::jet(&jet("x"))).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn eps_grading() {
        let eps = Expr::Sym(Symbol::eps());
        let e = Expr::sym(&u())
            .add(&eps.mul(&Expr::jet(&jet("x"))).unwrap())
            .unwrap();
        let grades = e.eps_grades(1, false).unwrap();
        assert_eq!(grades[0], Expr::sym(&u()));
        assert_eq!(grades[1], Expr::jet(&jet("x")));
        let too_high = eps.pow_i(2).unwrap();
        assert!(too_high.eps_grades(1, false).is_err());
        assert!(too_high.eps_grades(1, true).unwrap()[1].is_zero());
    }
}
