//! Exact numeric evaluation of expressions at rational points.
//!
//! Two layers: plain rational evaluation, and evaluation over the
//! truncated ring Q[eps]/eps^(K+1) (values are coefficient vectors), which
//! is what on-shell consistency checks need. Arbitrary-function symbols are
//! evaluated through a caller-supplied table; the random table treats each
//! distinct (function, arguments, derivative-orders) triple as an
//! independent coordinate, which preserves every identity the kernel can
//! actually prove.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use num::{One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Builtin, Expr, Rat};
use crate::symbol::{JetVar, Symbol};

/// Point assignment for symbols and jet coordinates.
#[derive(Clone, Default, Debug)]
pub struct Assignment {
    pub syms: BTreeMap<Symbol, Rat>,
    pub jets: BTreeMap<JetVar, Rat>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_sym(&mut self, s: &Symbol, v: Rat) -> &mut Self {
        self.syms.insert(s.clone(), v);
        self
    }

    pub fn set_jet(&mut self, j: &JetVar, v: Rat) -> &mut Self {
        self.jets.insert(j.clone(), v);
        self
    }

    fn sym(&self, s: &Symbol) -> Result<Rat> {
        self.syms
            .get(s)
            .cloned()
            .ok_or_else(|| Error::UnboundSymbol(s.name().to_string()))
    }

    fn jet(&self, j: &JetVar) -> Result<Rat> {
        self.jets
            .get(j)
            .cloned()
            .ok_or_else(|| Error::UnboundSymbol(format!("{:?}", j)))
    }
}

/// Evaluators for arbitrary-function symbols, keyed by name; the value
/// function receives argument values and per-slot derivative orders.
pub trait FuncTable {
    fn eval(&self, name: &str, args: &[Rat], deriv: &[u32]) -> Result<Rat>;
}

/// Table with no entries; any arbitrary function is an error.
pub struct EmptyFuncTable;

impl FuncTable for EmptyFuncTable {
    fn eval(&self, name: &str, _args: &[Rat], _deriv: &[u32]) -> Result<Rat> {
        Err(Error::UnboundSymbol(format!("function {}", name)))
    }
}

/// Closure-backed table for concrete functions.
pub struct MapFuncTable {
    entries: HashMap<String, Box<dyn Fn(&[Rat], &[u32]) -> Result<Rat>>>,
}

impl MapFuncTable {
    pub fn new() -> Self {
        MapFuncTable { entries: HashMap::new() }
    }

    pub fn insert<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&[Rat], &[u32]) -> Result<Rat> + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(f));
    }
}

impl Default for MapFuncTable {
    fn default() -> Self {
        Self::new()
    }
}

impl FuncTable for MapFuncTable {
    fn eval(&self, name: &str, args: &[Rat], deriv: &[u32]) -> Result<Rat> {
        match self.entries.get(name) {
            Some(f) => f(args, deriv),
            None => Err(Error::UnboundSymbol(format!("function {}", name))),
        }
    }
}

/// Assigns an independent random rational to each distinct function atom,
/// memoized so repeated occurrences agree. Sound for zero-testing because
/// the kernel never uses analytic facts beyond the recorded derivative
/// rules (which are applied structurally before evaluation).
pub struct RandomFuncTable {
    rng: RefCell<ChaCha8Rng>,
    memo: RefCell<HashMap<(String, Vec<Rat>, Vec<u32>), Rat>>,
}

impl RandomFuncTable {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RandomFuncTable { rng: RefCell::new(rng), memo: RefCell::new(HashMap::new()) }
    }
}

impl FuncTable for RandomFuncTable {
    fn eval(&self, name: &str, args: &[Rat], deriv: &[u32]) -> Result<Rat> {
        let key = (name.to_string(), args.to_vec(), deriv.to_vec());
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(v.clone());
        }
        let v = random_rat(&mut *self.rng.borrow_mut());
        self.memo.borrow_mut().insert(key, v.clone());
        Ok(v)
    }
}

/// Nonzero random rational with small numerator and denominator.
pub fn random_rat<R: Rng>(rng: &mut R) -> Rat {
    let num: i64 = loop {
        let n = rng.gen_range(-9..=9);
        if n != 0 {
            break n;
        }
    };
    let den: i64 = rng.gen_range(1..=9);
    Rat::new(num.into(), den.into())
}

/// Exp at an exact rational point via a fixed-length Taylor sum. The value
/// is a deterministic rational approximation; evaluating the same atom on
/// both sides of an identity therefore agrees exactly.
pub fn exp_taylor(q: &Rat) -> Rat {
    let mut term = Rat::one();
    let mut sum = Rat::one();
    for k in 1..=24u32 {
        term = term * q / Rat::from_integer(k.into());
        sum += term.clone();
    }
    sum
}

fn eval_builtin(b: Builtin, args: &[Rat]) -> Result<Rat> {
    match b {
        Builtin::Exp => Ok(exp_taylor(&args[0])),
    }
}

/// Evaluate at an exact rational point. Deterministic given its inputs.
pub fn eval_rat(e: &Expr, at: &Assignment, funcs: &dyn FuncTable) -> Result<Rat> {
    match e {
        Expr::Rat(q) => Ok(q.clone()),
        Expr::Sym(s) => at.sym(s),
        Expr::Jet(j) => at.jet(j),
        Expr::Func(f) => {
            let mut args = Vec::with_capacity(f.args.len());
            for a in &f.args {
                args.push(eval_rat(a, at, funcs)?);
            }
            match f.builtin {
                Some(b) => eval_builtin(b, &args),
                None => funcs.eval(&f.name, &args, &f.deriv),
            }
        }
        Expr::Pow(b, n) => {
            let base = eval_rat(b, at, funcs)?;
            rat_pow(&base, *n)
        }
        Expr::Prod(fs) => {
            let mut acc = Rat::one();
            for f in fs {
                acc *= eval_rat(f, at, funcs)?;
            }
            Ok(acc)
        }
        Expr::Sum(ts) => {
            let mut acc = Rat::zero();
            for t in ts {
                acc += eval_rat(t, at, funcs)?;
            }
            Ok(acc)
        }
    }
}

fn rat_pow(base: &Rat, n: i64) -> Result<Rat> {
    if n == 0 {
        return Ok(Rat::one());
    }
    if base.is_zero() && n < 0 {
        return Err(Error::DivisionByZero);
    }
    let mut acc = Rat::one();
    let b = if n > 0 { base.clone() } else { Rat::one() / base.clone() };
    for _ in 0..n.unsigned_abs() {
        acc *= b.clone();
    }
    Ok(acc)
}

/// A value in Q[eps]/eps^(K+1): coefficients of eps^0..eps^K.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EpsVal(pub Vec<Rat>);

impl EpsVal {
    pub fn constant(q: Rat, k: usize) -> EpsVal {
        let mut v = vec![Rat::zero(); k + 1];
        v[0] = q;
        EpsVal(v)
    }

    pub fn eps(k: usize) -> EpsVal {
        let mut v = vec![Rat::zero(); k + 1];
        if k >= 1 {
            v[1] = Rat::one();
        }
        EpsVal(v)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.is_zero())
    }

    pub fn add(&self, o: &EpsVal) -> EpsVal {
        EpsVal(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn mul(&self, o: &EpsVal) -> EpsVal {
        let k = self.order();
        let mut out = vec![Rat::zero(); k + 1];
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.0.iter().enumerate() {
                if i + j > k {
                    break;
                }
                out[i + j] += a * b;
            }
        }
        EpsVal(out)
    }

    pub fn scale(&self, q: &Rat) -> EpsVal {
        EpsVal(self.0.iter().map(|c| c * q).collect())
    }

    /// Multiplicative inverse; needs an invertible constant part.
    pub fn inv(&self) -> Result<EpsVal> {
        let k = self.order();
        if self.0[0].is_zero() {
            return Err(Error::DivisionByZero);
        }
        let a0_inv = Rat::one() / self.0[0].clone();
        let mut out = vec![Rat::zero(); k + 1];
        out[0] = a0_inv.clone();
        for n in 1..=k {
            // sum_{j=1..n} a_j * out_{n-j} determined recursively
            let mut s = Rat::zero();
            for j in 1..=n {
                s += &self.0[j] * &out[n - j];
            }
            out[n] = -a0_inv.clone() * s;
        }
        Ok(EpsVal(out))
    }

    pub fn pow(&self, n: i64) -> Result<EpsVal> {
        let k = self.order();
        if n == 0 {
            return Ok(EpsVal::constant(Rat::one(), k));
        }
        let base = if n > 0 { self.clone() } else { self.inv()? };
        let mut acc = EpsVal::constant(Rat::one(), k);
        for _ in 0..n.unsigned_abs() {
            acc = acc.mul(&base);
        }
        Ok(acc)
    }

    /// The nilpotent part (grades >= 1).
    fn nilpotent(&self) -> EpsVal {
        let mut v = self.0.clone();
        v[0] = Rat::zero();
        EpsVal(v)
    }
}

/// Graded point assignment.
#[derive(Clone, Default, Debug)]
pub struct EpsAssignment {
    pub syms: BTreeMap<Symbol, EpsVal>,
    pub jets: BTreeMap<JetVar, EpsVal>,
}

/// Evaluate over Q[eps]/eps^(K+1). The eps symbol evaluates to the
/// nilpotent generator. Function applications Taylor-expand around the
/// constant part of their arguments, consuming higher derivative values
/// from the table.
pub fn eval_eps(e: &Expr, at: &EpsAssignment, funcs: &dyn FuncTable, k: usize) -> Result<EpsVal> {
    match e {
        Expr::Rat(q) => Ok(EpsVal::constant(q.clone(), k)),
        Expr::Sym(s) => {
            if s.is_eps() {
                return Ok(EpsVal::eps(k));
            }
            at.syms
                .get(s)
                .cloned()
                .ok_or_else(|| Error::UnboundSymbol(s.name().to_string()))
        }
        Expr::Jet(j) => at
            .jets
            .get(j)
            .cloned()
            .ok_or_else(|| Error::UnboundSymbol(format!("{:?}", j))),
        Expr::Func(f) => {
            let mut args = Vec::with_capacity(f.args.len());
            for a in &f.args {
                args.push(eval_eps(a, at, funcs, k)?);
            }
            eval_func_eps(f.builtin, &f.name, &f.deriv, &args, funcs, k)
        }
        Expr::Pow(b, n) => eval_eps(b, at, funcs, k)?.pow(*n),
        Expr::Prod(fs) => {
            let mut acc = EpsVal::constant(Rat::one(), k);
            for f in fs {
                acc = acc.mul(&eval_eps(f, at, funcs, k)?);
            }
            Ok(acc)
        }
        Expr::Sum(ts) => {
            let mut acc = EpsVal::constant(Rat::zero(), k);
            for t in ts {
                acc = acc.add(&eval_eps(t, at, funcs, k)?);
            }
            Ok(acc)
        }
    }
}

/// Multivariate Taylor expansion of f at the constant parts of graded
/// arguments: sum over derivative multi-indices alpha with |alpha| <= K of
/// f^(deriv+alpha)(a0) * prod(delta_i^alpha_i) / alpha!.
fn eval_func_eps(
    builtin: Option<Builtin>,
    name: &str,
    deriv: &[u32],
    args: &[EpsVal],
    funcs: &dyn FuncTable,
    k: usize,
) -> Result<EpsVal> {
    let base: Vec<Rat> = args.iter().map(|a| a.0[0].clone()).collect();
    let deltas: Vec<EpsVal> = args.iter().map(|a| a.nilpotent()).collect();
    let all_const = deltas.iter().all(|d| d.is_zero());

    let eval_at = |extra: &[u32]| -> Result<Rat> {
        let total: Vec<u32> = deriv.iter().zip(extra).map(|(a, b)| a + b).collect();
        match builtin {
            Some(b) => eval_builtin(b, &base),
            None => funcs.eval(name, &base, &total),
        }
        .map(|v| match builtin {
            // exp' = exp: every derivative shares the base value
            Some(Builtin::Exp) => v,
            None => v,
        })
    };

    if all_const {
        return Ok(EpsVal::constant(eval_at(&vec![0; args.len()])?, k));
    }

    let mut acc = EpsVal::constant(Rat::zero(), k);
    let mut alphas: Vec<Vec<u32>> = vec![vec![0; args.len()]];
    for total in 0..=k as u32 {
        for alpha in alphas.iter().filter(|a| a.iter().sum::<u32>() == total) {
            let mut coeff = EpsVal::constant(eval_at(alpha)?, k);
            let mut fact = Rat::one();
            for (i, &ai) in alpha.iter().enumerate() {
                for m in 1..=ai {
                    fact *= Rat::from_integer(m.into());
                }
                coeff = coeff.mul(&deltas[i].pow(ai as i64)?);
            }
            acc = acc.add(&coeff.scale(&(Rat::one() / fact)));
        }
        // extend candidate multi-indices by one in each slot
        let mut next = Vec::new();
        for alpha in &alphas {
            if alpha.iter().sum::<u32>() == total {
                for i in 0..args.len() {
                    let mut a2 = alpha.clone();
                    a2[i] += 1;
                    if !next.contains(&a2) && !alphas.contains(&a2) {
                        next.push(a2);
                    }
                }
            }
        }
        alphas.extend(next);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::MultiIndex;
    use rand::SeedableRng;

    fn jet(letters: &str) -> JetVar {
        JetVar::new(&Symbol::dependent("u"), MultiIndex::from_letters(letters, &["x", "t"]).unwrap())
    }

    #[test]
    fn simple_point_evaluation() {
        // u_x^2 + 1 at u_x = 2 -> 5
        let e = Expr::jet(&jet("x")).pow_i(2).unwrap().add(&Expr::one()).unwrap();
        let mut at = Assignment::new();
        at.set_jet(&jet("x"), Rat::from_integer(2.into()));
        let v = eval_rat(&e, &at, &EmptyFuncTable).unwrap();
        assert_eq!(v, Rat::from_integer(5.into()));
    }

    #[test]
    fn exp_at_zero_is_one() {
        // F(u)*u_x with F = exp at u = 0, u_x = 3 -> 3
        let e = Expr::func("F", vec![Expr::sym(&Symbol::dependent("u"))])
            .mul(&Expr::jet(&jet("x")))
            .unwrap()
            .substitute_function("F", Builtin::Exp)
            .unwrap();
        let mut at = Assignment::new();
        at.set_jet(&JetVar::base(&Symbol::dependent("u")), Rat::zero());
        at.set_jet(&jet("x"), Rat::from_integer(3.into()));
        let v = eval_rat(&e, &at, &EmptyFuncTable).unwrap();
        assert_eq!(v, Rat::from_integer(3.into()));
    }

    #[test]
    fn canonical_zero_evaluates_to_zero() {
        let a = Expr::jet(&jet("xt"));
        let b = Expr::jet(&jet("tx"));
        let z = a.sub(&b).unwrap();
        let mut at = Assignment::new();
        at.set_jet(&jet("xt"), Rat::from_integer(7.into()));
        assert!(eval_rat(&z, &at, &EmptyFuncTable).unwrap().is_zero());
    }

    #[test]
    fn missing_binding_is_reported() {
        let e = Expr::jet(&jet("x"));
        let at = Assignment::new();
        assert!(matches!(eval_rat(&e, &at, &EmptyFuncTable), Err(Error::UnboundSymbol(_))));
    }

    #[test]
    fn eps_val_ring() {
        // (1 + eps*2)^-1 = 1 - 2 eps + 4 eps^2 mod eps^3
        let v = EpsVal(vec![Rat::one(), Rat::from_integer(2.into()), Rat::zero()]);
        let inv = v.inv().unwrap();
        assert_eq!(
            inv.0,
            vec![
                Rat::one(),
                Rat::from_integer((-2).into()),
                Rat::from_integer(4.into())
            ]
        );
        assert_eq!(v.mul(&inv), EpsVal::constant(Rat::one(), 2));
    }

    #[test]
    fn graded_function_taylor() {
        // F(u) at u = 1 + eps: grade-1 coefficient is F'(1).
        let table = RandomFuncTable::new(ChaCha8Rng::seed_from_u64(7));
        let u = Symbol::dependent("u");
        let e = Expr::func("F", vec![Expr::sym(&u)]);
        let mut at = EpsAssignment::default();
        at.jets.insert(JetVar::base(&u), EpsVal(vec![Rat::one(), Rat::one()]));
        let v = eval_eps(&e, &at, &table, 1).unwrap();
        let f0 = table.eval("F", &[Rat::one()], &[0]).unwrap();
        let f1 = table.eval("F", &[Rat::one()], &[1]).unwrap();
        assert_eq!(v.0, vec![f0, f1]);
    }
}
