//! PDE system declarations: equations split as E0 + eps*E1 with designated
//! leading derivatives, plus generators and substitution ansatze.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::eps::EpsSeries;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::symbol::{JetVar, Symbol, DEFAULT_JET_CAP};

/// Signature of a declared arbitrary-function symbol, e.g. F(u) or f(x,t).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FuncSig {
    pub name: Arc<str>,
    pub formals: Vec<Symbol>,
}

impl FuncSig {
    pub fn new(name: &str, formals: Vec<Symbol>) -> Self {
        FuncSig { name: Arc::from(name), formals }
    }

    /// The application of this function to its own formal arguments.
    pub fn applied(&self) -> Expr {
        Expr::func(&self.name, self.formals.iter().map(Expr::sym).collect())
    }
}

/// One equation of the system: E0 + eps*E1 = 0, solvable for `leading`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PdeEquation {
    pub name: String,
    pub e0: Expr,
    pub e1: Expr,
    pub leading: JetVar,
}

impl PdeEquation {
    /// E0 + eps*E1 as a single expression.
    pub fn full(&self) -> Result<Expr> {
        let eps = Expr::Sym(Symbol::eps());
        self.e0.add(&eps.mul(&self.e1)?)
    }
}

#[derive(Clone, Debug)]
pub struct PdeSystem {
    pub independents: Vec<Symbol>,
    pub dependents: Vec<Symbol>,
    pub functions: Vec<FuncSig>,
    pub constants: Vec<Symbol>,
    pub equations: Vec<PdeEquation>,
    pub eps_order: usize,
    pub jet_cap: u32,
}

impl PdeSystem {
    pub fn new(
        independents: Vec<Symbol>,
        dependents: Vec<Symbol>,
        functions: Vec<FuncSig>,
        constants: Vec<Symbol>,
        equations: Vec<PdeEquation>,
        eps_order: usize,
    ) -> Result<PdeSystem> {
        let sys = PdeSystem {
            independents,
            dependents,
            functions,
            constants,
            equations,
            eps_order,
            jet_cap: DEFAULT_JET_CAP,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.equations.is_empty() {
            return Err(Error::InvalidSystem("no equations".into()));
        }
        let mut names = BTreeSet::new();
        for s in self
            .independents
            .iter()
            .chain(&self.dependents)
            .chain(&self.constants)
        {
            if !names.insert(s.name().to_string()) {
                return Err(Error::InvalidSystem(format!("duplicate symbol {}", s.name())));
            }
        }
        for f in &self.functions {
            if !names.insert(f.name.to_string()) {
                return Err(Error::InvalidSystem(format!("duplicate symbol {}", f.name)));
            }
        }
        if names.contains("eps") {
            return Err(Error::InvalidSystem("`eps` is reserved for the small parameter".into()));
        }
        let mut leadings = BTreeSet::new();
        for eq in &self.equations {
            if eq.e0.contains_eps()? || eq.e1.contains_eps()? {
                return Err(Error::EpsNotAllowed(format!(
                    "equation {} stores eps inside a graded slot",
                    eq.name
                )));
            }
            if !leadings.insert(eq.leading.clone()) {
                return Err(Error::InvalidSystem(format!(
                    "leading derivative {:?} appears in more than one equation",
                    eq.leading
                )));
            }
            // leading must occur linearly in e0 with a coefficient free of
            // the leading and of its derivatives
            let lin = eq.e0.as_linear_in(&eq.leading)?;
            let (coeff, _) = match lin {
                Some(p) => p,
                None => {
                    return Err(Error::InvalidSystem(format!(
                        "equation {}: leading {:?} does not occur linearly",
                        eq.name, eq.leading
                    )))
                }
            };
            if coeff.is_zero() {
                return Err(Error::InvalidSystem(format!(
                    "equation {}: leading {:?} absent from the equation",
                    eq.name, eq.leading
                )));
            }
            for j in coeff.jet_vars()? {
                if j.dep == eq.leading.dep && j.index.contains(&eq.leading.index) {
                    return Err(Error::InvalidSystem(format!(
                        "equation {}: leading coefficient depends on {:?}",
                        eq.name, j
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn independent(&self, name: &str) -> Option<&Symbol> {
        self.independents.iter().find(|s| s.name() == name)
    }

    pub fn dependent(&self, name: &str) -> Option<&Symbol> {
        self.dependents.iter().find(|s| s.name() == name)
    }

    pub fn function(&self, name: &str) -> Option<&FuncSig> {
        self.functions.iter().find(|f| f.name.as_ref() == name)
    }

    pub fn constant(&self, name: &str) -> Option<&Symbol> {
        self.constants.iter().find(|s| s.name() == name)
    }

    /// The unperturbed copy (every E1 dropped, truncation order 0).
    pub fn unperturbed(&self) -> PdeSystem {
        let mut sys = self.clone();
        for eq in &mut sys.equations {
            eq.e1 = Expr::zero();
        }
        sys.eps_order = 0;
        sys
    }

    pub fn is_unperturbed(&self) -> bool {
        self.equations.iter().all(|eq| eq.e1.is_zero())
    }

    /// Fresh adjoint variables, one per equation: `v`-names for
    /// unperturbed contexts and `w`-names for perturbed ones, suffixed
    /// with the equation index when there are several equations, renamed
    /// if they would collide with declared symbols.
    pub fn adjoint_vars(&self, perturbed: bool) -> Vec<Symbol> {
        let stem = if perturbed { "w" } else { "v" };
        let taken: BTreeSet<&str> = self
            .dependents
            .iter()
            .chain(&self.independents)
            .chain(&self.constants)
            .map(|s| s.name())
            .collect();
        let m = self.equations.len();
        (0..m)
            .map(|i| {
                let base = if m == 1 { stem.to_string() } else { format!("{}{}", stem, i + 1) };
                let mut name = base.clone();
                let mut salt = 0;
                while taken.contains(name.as_str()) {
                    salt += 1;
                    name = format!("{}_{}", base, salt);
                }
                Symbol::dependent(&name)
            })
            .collect()
    }
}

/// A first-order point generator: xi and eta components graded in eps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generator {
    pub xi: BTreeMap<Symbol, EpsSeries>,
    pub eta: BTreeMap<Symbol, EpsSeries>,
}

impl Generator {
    pub fn new(xi: BTreeMap<Symbol, EpsSeries>, eta: BTreeMap<Symbol, EpsSeries>) -> Self {
        Generator { xi, eta }
    }

    pub fn xi_of(&self, x: &Symbol, k: usize) -> EpsSeries {
        self.xi.get(x).cloned().unwrap_or_else(|| EpsSeries::zero(k))
    }

    pub fn eta_of(&self, u: &Symbol, k: usize) -> EpsSeries {
        self.eta.get(u).cloned().unwrap_or_else(|| EpsSeries::zero(k))
    }

    /// Point-generator validity over a system: components depend only on
    /// the independents and the base dependents, with eps-grade <= k.
    pub fn validate(&self, sys: &PdeSystem) -> Result<()> {
        for (label, map) in [("xi", &self.xi), ("eta", &self.eta)] {
            for (s, series) in map {
                if series.truncation_order() != sys.eps_order {
                    return Err(Error::TruncationMismatch(series.truncation_order(), sys.eps_order));
                }
                for c in series.coeffs() {
                    for j in c.jet_vars()? {
                        if j.order() > 0 {
                            return Err(Error::InvalidSystem(format!(
                                "{}({}) depends on jet {:?}; only point generators are supported",
                                label,
                                s.name(),
                                j
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The grade-g slice as a plain (ungraded) generator.
    pub fn grade(&self, g: usize, k: usize) -> Generator {
        let pick = |m: &BTreeMap<Symbol, EpsSeries>| {
            m.iter()
                .map(|(s, series)| {
                    let c = if g <= series.truncation_order() {
                        series.coeff(g).clone()
                    } else {
                        Expr::zero()
                    };
                    (s.clone(), EpsSeries::constant(&c, k).expect("eps-free grade"))
                })
                .collect()
        };
        Generator { xi: pick(&self.xi), eta: pick(&self.eta) }
    }

    /// Characteristic W^sigma = eta^sigma - xi^j u^sigma_j per dependent.
    pub fn characteristic(&self, sys: &PdeSystem) -> Result<BTreeMap<Symbol, EpsSeries>> {
        let k = sys.eps_order;
        let mut out = BTreeMap::new();
        for dep in &sys.dependents {
            let mut w = self.eta_of(dep, k);
            for x in &sys.independents {
                let xi = self.xi_of(x, k);
                let uj = Expr::jet(&JetVar::base(dep).raised(x.name()));
                w = w.sub(&xi.mul_expr(&uj)?)?;
            }
            out.insert(dep.clone(), w);
        }
        Ok(out)
    }
}

/// Candidate substitution w^sigma = psi^sigma + eps*phi^sigma for the
/// adjoint variables, with optional undetermined constants and
/// side-constrained arbitrary functions.
#[derive(Clone, Debug)]
pub struct SubstitutionAnsatz {
    /// Image per adjoint variable name: (psi, phi).
    pub images: BTreeMap<Arc<str>, (Expr, Expr)>,
    pub unknown_constants: Vec<Symbol>,
    /// (signature, side conditions that must vanish).
    pub unknown_functions: Vec<(FuncSig, Vec<Expr>)>,
}

impl SubstitutionAnsatz {
    pub fn concrete_single(psi: Expr, phi: Expr) -> Self {
        let mut images = BTreeMap::new();
        images.insert(Arc::from("w"), (psi, phi));
        SubstitutionAnsatz { images, unknown_constants: vec![], unknown_functions: vec![] }
    }

    /// Image for the single adjoint variable of a scalar system, renamed
    /// to the given adjoint symbol when necessary.
    pub fn image_for(&self, adjoint: &Symbol) -> Option<&(Expr, Expr)> {
        self.images
            .get(adjoint.name())
            .or_else(|| if self.images.len() == 1 { self.images.values().next() } else { None })
    }

    /// No jet of positive order and no eps may occur in the images.
    pub fn validate(&self) -> Result<()> {
        for (name, (psi, phi)) in &self.images {
            for e in [psi, phi] {
                if e.contains_eps()? {
                    return Err(Error::EpsNotAllowed(format!("image of {} contains eps", name)));
                }
                for j in e.jet_vars()? {
                    if j.order() > 0 {
                        return Err(Error::InvalidSubstitution(format!(
                            "image of {} contains jet {:?} of positive order",
                            name, j
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.images.values().all(|(psi, phi)| psi.is_zero() && phi.is_zero())
    }

    /// Multiply every image by a rational constant.
    pub fn scaled(&self, q: &crate::expr::Rat) -> Result<SubstitutionAnsatz> {
        let mut images = BTreeMap::new();
        for (k, (psi, phi)) in &self.images {
            images.insert(k.clone(), (psi.scale(q)?, phi.scale(q)?));
        }
        Ok(SubstitutionAnsatz {
            images,
            unknown_constants: self.unknown_constants.clone(),
            unknown_functions: self.unknown_functions.clone(),
        })
    }
}

/// Multiplier matrices lambda/mu of the self-adjointness identities,
/// indexed [alpha][beta].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiplierSet {
    pub lambda: Vec<Vec<Expr>>,
    pub mu: Vec<Vec<Expr>>,
}

impl MultiplierSet {
    pub fn zero(m: usize) -> Self {
        MultiplierSet {
            lambda: vec![vec![Expr::zero(); m]; m],
            mu: vec![vec![Expr::zero(); m]; m],
        }
    }

    /// Multipliers may depend on the base variables only.
    pub fn has_positive_jets(&self) -> Result<bool> {
        for row in self.lambda.iter().chain(&self.mu) {
            for e in row {
                if e.jet_vars()?.iter().any(|j| j.order() > 0) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Convenience: a dependent symbol known to the system, else a fresh one
/// (used when resolving adjoint variable names from text).
pub fn dependent_or_fresh(sys: &PdeSystem, name: &str) -> Symbol {
    sys.dependent(name).cloned().unwrap_or_else(|| Symbol::dependent(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::MultiIndex;

    fn wave_system() -> PdeSystem {
        let t = Symbol::independent("t");
        let x = Symbol::independent("x");
        let u = Symbol::dependent("u");
        let utt = JetVar::new(&u, MultiIndex::from_letters("tt", &["x", "t"]).unwrap());
        let uxx = JetVar::new(&u, MultiIndex::from_letters("xx", &["x", "t"]).unwrap());
        let ut = JetVar::new(&u, MultiIndex::from_letters("t", &["x", "t"]).unwrap());
        let e0 = Expr::jet(&utt).sub(&Expr::jet(&uxx)).unwrap();
        let eq = PdeEquation { name: "W".into(), e0, e1: Expr::jet(&ut), leading: utt };
        PdeSystem::new(vec![t, x], vec![u], vec![], vec![], vec![eq], 1).unwrap()
    }

    #[test]
    fn validates_leading_linearity() {
        let sys = wave_system();
        assert!(sys.validate().is_ok());
        let mut bad = sys.clone();
        // leading u_xt absent from the equation
        bad.equations[0].leading = JetVar::new(
            &Symbol::dependent("u"),
            MultiIndex::from_letters("xt", &["x", "t"]).unwrap(),
        );
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adjoint_names_avoid_collisions() {
        let sys = wave_system();
        assert_eq!(sys.adjoint_vars(true)[0].name(), "w");
        assert_eq!(sys.adjoint_vars(false)[0].name(), "v");
    }

    #[test]
    fn characteristic_of_scaling_generator() {
        // X = x dx + t dt ==> W = -x u_x - t u_t
        let sys = wave_system();
        let x = sys.independent("x").unwrap().clone();
        let t = sys.independent("t").unwrap().clone();
        let u = sys.dependent("u").unwrap().clone();
        let mut xi = BTreeMap::new();
        xi.insert(x.clone(), EpsSeries::constant(&Expr::sym(&x), 1).unwrap());
        xi.insert(t.clone(), EpsSeries::constant(&Expr::sym(&t), 1).unwrap());
        let gen = Generator::new(xi, BTreeMap::new());
        gen.validate(&sys).unwrap();
        let w = gen.characteristic(&sys).unwrap();
        let ux = Expr::jet(&JetVar::base(&u).raised("x"));
        let ut = Expr::jet(&JetVar::base(&u).raised("t"));
        let expected = Expr::sym(&x)
            .mul(&ux)
            .unwrap()
            .add(&Expr::sym(&t).mul(&ut).unwrap())
            .unwrap()
            .neg()
            .unwrap();
        assert_eq!(w[&u].coeff(0), &expected);
        assert!(w[&u].coeff(1).is_zero());
    }
}
