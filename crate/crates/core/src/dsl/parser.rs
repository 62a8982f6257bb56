//! Recursive-descent parser for systems, generators, ansatze and
//! expressions. Every error carries a line/column and a one-line
//! diagnosis.

use std::collections::BTreeMap;
use std::sync::Arc;

use num::Zero;

use crate::eps::EpsSeries;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::symbol::{JetVar, MultiIndex, Symbol};
use crate::system::{FuncSig, Generator, PdeEquation, PdeSystem, SubstitutionAnsatz};

use super::lexer::{lex, Tok, Token};

/// Name-resolution context for expression parsing.
#[derive(Clone, Debug, Default)]
pub struct Scope {
    pub independents: Vec<Symbol>,
    pub dependents: Vec<Symbol>,
    pub functions: Vec<FuncSig>,
    pub constants: Vec<Symbol>,
    pub allow_eps: bool,
}

impl Scope {
    pub fn from_system(sys: &PdeSystem) -> Scope {
        Scope {
            independents: sys.independents.clone(),
            dependents: sys.dependents.clone(),
            functions: sys.functions.clone(),
            constants: sys.constants.clone(),
            allow_eps: true,
        }
    }

    pub fn with_extra_dependents(mut self, extra: &[Symbol]) -> Scope {
        for d in extra {
            if !self.dependents.iter().any(|s| s.name() == d.name()) {
                self.dependents.push(d.clone());
            }
        }
        self
    }

    pub fn with_extra_functions(mut self, extra: &[FuncSig]) -> Scope {
        for f in extra {
            if !self.functions.iter().any(|g| g.name == f.name) {
                self.functions.push(f.clone());
            }
        }
        self
    }

    pub fn with_extra_constants(mut self, extra: &[Symbol]) -> Scope {
        for c in extra {
            if !self.constants.iter().any(|s| s.name() == c.name()) {
                self.constants.push(c.clone());
            }
        }
        self
    }

    fn lookup_plain(&self, name: &str) -> Option<Expr> {
        if let Some(s) = self.independents.iter().find(|s| s.name() == name) {
            return Some(Expr::sym(s));
        }
        if let Some(s) = self.dependents.iter().find(|s| s.name() == name) {
            return Some(Expr::sym(s));
        }
        if let Some(s) = self.constants.iter().find(|s| s.name() == name) {
            return Some(Expr::sym(s));
        }
        None
    }

    fn function(&self, name: &str) -> Option<&FuncSig> {
        self.functions.iter().find(|f| f.name.as_ref() == name)
    }

    fn indep_names(&self) -> Vec<&str> {
        self.independents.iter().map(|s| s.name()).collect()
    }
}

/// Unknowns discovered while parsing ansatz images.
#[derive(Default, Debug)]
struct AutoRegistry {
    constants: Vec<Symbol>,
    functions: Vec<FuncSig>,
}

/// Full parse result of a source document.
#[derive(Clone, Debug)]
pub struct ParsedDocument {
    pub system: PdeSystem,
    pub generators: BTreeMap<String, Generator>,
    pub ansatze: BTreeMap<String, SubstitutionAnsatz>,
}

pub fn parse_document(text: &str) -> Result<ParsedDocument> {
    Parser::new(text)?.document()
}

/// Parse a single expression against a scope (eps allowed if the scope
/// says so).
pub fn parse_expr(text: &str, scope: &Scope) -> Result<Expr> {
    let mut p = Parser::new(text)?;
    let e = p.expr(scope, None)?;
    p.expect(Tok::Eof)?;
    e.normalize()
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Parser> {
        Ok(Parser { toks: lex(text)?, pos: 0 })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let t = self.peek();
        Err(Error::Parse { line: t.line, col: t.col, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<Token> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            self.err(format!("expected {:?}, found {:?}", tok, self.peek().tok))
        }
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if self.peek().tok == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {:?}", other)),
        }
    }

    fn int(&mut self) -> Result<i64> {
        match self.peek().tok.clone() {
            Tok::Int(n) => {
                self.next();
                Ok(n)
            }
            other => self.err(format!("expected integer, found {:?}", other)),
        }
    }

    // ---- document -------------------------------------------------------

    fn document(&mut self) -> Result<ParsedDocument> {
        let mut independents = Vec::new();
        let mut dependents = Vec::new();
        let mut functions: Vec<FuncSig> = Vec::new();
        let mut constants = Vec::new();
        let mut eps_order: usize = 1;
        let mut raw_equations: Vec<(String, Expr, JetVar)> = Vec::new();
        let mut generators: BTreeMap<String, Generator> = BTreeMap::new();
        let mut ansatze: BTreeMap<String, SubstitutionAnsatz> = BTreeMap::new();
        let mut gen_texts: Vec<(String, Vec<(String, String, Expr)>)> = Vec::new();

        loop {
            let kw = match self.peek().tok.clone() {
                Tok::Eof => break,
                Tok::Ident(s) => s,
                other => return self.err(format!("expected a statement keyword, found {:?}", other)),
            };
            let scope = Scope {
                independents: independents.clone(),
                dependents: dependents.clone(),
                functions: functions.clone(),
                constants: constants.clone(),
                allow_eps: true,
            };
            match kw.as_str() {
                "indep" => {
                    self.next();
                    for name in self.name_list()? {
                        independents.push(Symbol::independent(&name));
                    }
                }
                "dep" => {
                    self.next();
                    for name in self.name_list()? {
                        dependents.push(Symbol::dependent(&name));
                    }
                }
                "const" => {
                    self.next();
                    for name in self.name_list()? {
                        constants.push(Symbol::constant(&name));
                    }
                }
                "func" => {
                    self.next();
                    loop {
                        let fname = self.ident()?;
                        self.expect(Tok::LParen)?;
                        let mut formals = Vec::new();
                        loop {
                            let arg = self.ident()?;
                            let sym = scope
                                .lookup_plain(&arg)
                                .and_then(|e| match e {
                                    Expr::Sym(s) => Some(s),
                                    Expr::Jet(j) => Some(j.dep),
                                    _ => None,
                                })
                                .ok_or_else(|| Error::Parse {
                                    line: self.peek().line,
                                    col: self.peek().col,
                                    msg: format!("undeclared formal argument `{}`", arg),
                                })?;
                            formals.push(sym);
                            if !self.eat(Tok::Comma) {
                                break;
                            }
                        }
                        self.expect(Tok::RParen)?;
                        functions.push(FuncSig::new(&fname, formals));
                        if !self.eat(Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(Tok::Semi)?;
                }
                "eps" => {
                    self.next();
                    let word = self.ident()?;
                    if word != "order" {
                        return self.err("expected `order` after `eps`");
                    }
                    let n = self.int()?;
                    if n < 0 {
                        return self.err("eps order must be nonnegative");
                    }
                    eps_order = n as usize;
                    self.expect(Tok::Semi)?;
                }
                "eq" => {
                    self.next();
                    let name = self.ident()?;
                    self.expect(Tok::Colon)?;
                    let lhs = self.expr(&scope, None)?;
                    self.expect(Tok::Eq)?;
                    let rhs = self.expr(&scope, None)?;
                    let lead_kw = self.ident()?;
                    if lead_kw != "lead" {
                        return self.err("expected `lead` after the equation");
                    }
                    let lead_name = self.ident()?;
                    let lead = match self.resolve_ident(&lead_name, &scope, None, false)? {
                        Expr::Jet(j) if j.order() > 0 => j,
                        _ => return self.err(format!("`{}` is not a derivative of a dependent variable", lead_name)),
                    };
                    self.expect(Tok::Semi)?;
                    raw_equations.push((name, lhs.sub(&rhs)?, lead));
                }
                "gen" => {
                    self.next();
                    let name = self.ident()?;
                    self.expect(Tok::Colon)?;
                    let mut comps = Vec::new();
                    loop {
                        let which = self.ident()?;
                        if which != "xi" && which != "eta" {
                            return self.err("generator components are `xi(var)` or `eta(var)`");
                        }
                        self.expect(Tok::LParen)?;
                        let var = self.ident()?;
                        self.expect(Tok::RParen)?;
                        self.expect(Tok::Eq)?;
                        let e = self.expr(&scope, None)?;
                        comps.push((which, var, e));
                        if !self.eat(Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(Tok::Semi)?;
                    gen_texts.push((name, comps));
                }
                "subst" => {
                    self.next();
                    let first = self.ident()?;
                    let (name, mut target) = if self.eat(Tok::Colon) {
                        (first, self.ident()?)
                    } else {
                        (first.clone(), first)
                    };
                    let mut auto = AutoRegistry::default();
                    let mut images: BTreeMap<Arc<str>, (Expr, Expr)> = BTreeMap::new();
                    loop {
                        self.expect(Tok::Eq)?;
                        let image = self.expr(&scope, Some(&mut auto))?;
                        let grades = image.eps_grades(1, false).map_err(|e| Error::Parse {
                            line: self.peek().line,
                            col: self.peek().col,
                            msg: format!("substitution image: {}", e),
                        })?;
                        images.insert(Arc::from(target.as_str()), (grades[0].clone(), grades[1].clone()));
                        if self.eat(Tok::Comma) {
                            target = self.ident()?;
                        } else {
                            break;
                        }
                    }
                    let mut conditions: Vec<(String, Expr)> = Vec::new();
                    if let Tok::Ident(s) = self.peek().tok.clone() {
                        if s == "satisfying" {
                            self.next();
                            loop {
                                let inner_scope = Scope {
                                    independents: independents.clone(),
                                    dependents: dependents.clone(),
                                    functions: functions
                                        .iter()
                                        .cloned()
                                        .chain(auto.functions.iter().cloned())
                                        .collect(),
                                    constants: constants
                                        .iter()
                                        .cloned()
                                        .chain(auto.constants.iter().cloned())
                                        .collect(),
                                    allow_eps: false,
                                };
                                let lhs = self.expr(&inner_scope, None)?;
                                let cond = if self.eat(Tok::Eq) {
                                    let rhs = self.expr(&inner_scope, None)?;
                                    lhs.sub(&rhs)?
                                } else {
                                    lhs
                                };
                                // attach to the unknown functions mentioned
                                conditions.push((String::new(), cond));
                                if !self.eat(Tok::Comma) {
                                    break;
                                }
                            }
                        }
                    }
                    self.expect(Tok::Semi)?;
                    let mut unknown_functions: Vec<(FuncSig, Vec<Expr>)> =
                        auto.functions.iter().map(|f| (f.clone(), Vec::new())).collect();
                    for (_, cond) in conditions {
                        // attach the condition to the first unknown function it mentions
                        let mut attached = false;
                        for (sig, conds) in unknown_functions.iter_mut() {
                            let probe = sig.applied();
                            if mentions_function(&cond, &probe)? {
                                conds.push(cond.clone());
                                attached = true;
                                break;
                            }
                        }
                        if !attached {
                            return Err(Error::Parse {
                                line: 0,
                                col: 0,
                                msg: "side condition mentions no unknown function of the ansatz".into(),
                            });
                        }
                    }
                    let ansatz = SubstitutionAnsatz {
                        images,
                        unknown_constants: auto.constants,
                        unknown_functions,
                    };
                    ansatz.validate()?;
                    ansatze.insert(name, ansatz);
                }
                other => return self.err(format!("unknown statement `{}`", other)),
            }
        }

        let mut equations = Vec::new();
        for (name, e, lead) in raw_equations {
            let grades = e.eps_grades(1, false).map_err(|err| Error::Parse {
                line: 0,
                col: 0,
                msg: format!("equation {}: {}", name, err),
            })?;
            equations.push(PdeEquation { name, e0: grades[0].clone(), e1: grades[1].clone(), leading: lead });
        }
        let system = PdeSystem::new(independents, dependents, functions, constants, equations, eps_order)?;

        for (name, comps) in gen_texts {
            let mut xi = BTreeMap::new();
            let mut eta = BTreeMap::new();
            for (which, var, e) in comps {
                let series = EpsSeries::from_expr(&e, system.eps_order, false)?;
                match which.as_str() {
                    "xi" => {
                        let s = system
                            .independent(&var)
                            .cloned()
                            .ok_or_else(|| Error::InvalidSystem(format!("xi({}) names no independent variable", var)))?;
                        xi.insert(s, series);
                    }
                    _ => {
                        let s = system
                            .dependent(&var)
                            .cloned()
                            .ok_or_else(|| Error::InvalidSystem(format!("eta({}) names no dependent variable", var)))?;
                        eta.insert(s, series);
                    }
                }
            }
            let g = Generator::new(xi, eta);
            g.validate(&system)?;
            generators.insert(name, g);
        }

        Ok(ParsedDocument { system, generators, ansatze })
    }

    fn name_list(&mut self) -> Result<Vec<String>> {
        let mut names = vec![self.ident()?];
        loop {
            if self.eat(Tok::Comma) {
                names.push(self.ident()?);
            } else if let Tok::Ident(_) = self.peek().tok {
                names.push(self.ident()?);
            } else {
                break;
            }
        }
        self.expect(Tok::Semi)?;
        Ok(names)
    }

    // ---- expressions ----------------------------------------------------

    fn expr(&mut self, scope: &Scope, mut auto: Option<&mut AutoRegistry>) -> Result<Expr> {
        let mut acc = self.term(scope, auto.as_deref_mut())?;
        loop {
            if self.eat(Tok::Plus) {
                let t = self.term(scope, auto.as_deref_mut())?;
                acc = acc.add(&t)?;
            } else if self.eat(Tok::Minus) {
                let t = self.term(scope, auto.as_deref_mut())?;
                acc = acc.sub(&t)?;
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn term(&mut self, scope: &Scope, mut auto: Option<&mut AutoRegistry>) -> Result<Expr> {
        let negate = self.eat(Tok::Minus);
        let mut acc = self.factor(scope, auto.as_deref_mut())?;
        loop {
            if self.eat(Tok::Star) {
                let f = self.factor(scope, auto.as_deref_mut())?;
                acc = acc.mul(&f)?;
            } else if self.eat(Tok::Slash) {
                let (line, col) = (self.peek().line, self.peek().col);
                let f = self.factor(scope, auto.as_deref_mut())?;
                match f {
                    Expr::Rat(q) if !q.is_zero() => {
                        acc = acc.mul(&Expr::Rat(q.recip()))?;
                    }
                    _ => {
                        return Err(Error::Parse {
                            line,
                            col,
                            msg: "division is only defined by nonzero rational literals".into(),
                        })
                    }
                }
            } else {
                break;
            }
        }
        if negate {
            acc = acc.neg()?;
        }
        Ok(acc)
    }

    fn factor(&mut self, scope: &Scope, auto: Option<&mut AutoRegistry>) -> Result<Expr> {
        let base = self.primary(scope, auto)?;
        if self.eat(Tok::Caret) {
            let neg = self.eat(Tok::Minus);
            let mut n = self.int()?;
            if neg {
                n = -n;
            }
            return base.pow_i(n);
        }
        Ok(base)
    }

    fn primary(&mut self, scope: &Scope, auto: Option<&mut AutoRegistry>) -> Result<Expr> {
        match self.peek().tok.clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Expr::int(n))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr(scope, auto)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Minus => {
                self.next();
                let f = self.factor(scope, auto)?;
                f.neg()
            }
            Tok::Ident(name) => {
                self.next();
                self.resolve_ident(&name, scope, auto, true)
            }
            other => self.err(format!("expected an expression, found {:?}", other)),
        }
    }

    fn call_args(&mut self, scope: &Scope, mut auto: Option<&mut AutoRegistry>) -> Result<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            args.push(self.expr(scope, auto.as_deref_mut())?);
            if !self.eat(Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        Ok(args)
    }

    fn resolve_ident(
        &mut self,
        name: &str,
        scope: &Scope,
        mut auto: Option<&mut AutoRegistry>,
        allow_calls: bool,
    ) -> Result<Expr> {
        if name == "eps" {
            if !scope.allow_eps {
                return self.err("eps is not allowed in this position");
            }
            return Ok(Expr::Sym(Symbol::eps()));
        }
        if name == "exp" && allow_calls {
            let args = self.call_args(scope, auto)?;
            if args.len() != 1 {
                return self.err("exp takes exactly one argument");
            }
            return Ok(Expr::exp(args.into_iter().next().unwrap()));
        }
        if name == "diff" && allow_calls {
            // diff(f, k0, k1, ...)(args...) | diff(f, k0, ...) applied to formals
            self.expect(Tok::LParen)?;
            let fname = self.ident()?;
            let mut orders = Vec::new();
            while self.eat(Tok::Comma) {
                orders.push(self.int()? as u32);
            }
            self.expect(Tok::RParen)?;
            let sig = match scope.function(&fname) {
                Some(s) => s.clone(),
                None => return self.err(format!("`{}` is not a declared function", fname)),
            };
            if orders.len() != sig.formals.len() {
                return self.err("diff orders must match the function arity");
            }
            let args = if self.peek().tok == Tok::LParen {
                self.call_args(scope, auto)?
            } else {
                sig.formals.iter().map(Expr::sym).collect()
            };
            if args.len() != sig.formals.len() {
                return self.err("argument count must match the function arity");
            }
            return Ok(Expr::func_deriv(&fname, orders, args));
        }

        // declared function, possibly primed or applied
        if let Some(sig) = scope.function(name).cloned() {
            return self.finish_function_use(&sig, scope, auto);
        }

        // plain declared symbol
        if let Some(e) = scope.lookup_plain(name) {
            return Ok(e);
        }

        // subscripted jet variable or function slot derivative
        if let Some(idx) = name.find('_') {
            let (base, letters) = name.split_at(idx);
            let letters = &letters[1..];
            if let Some(dep) = scope.dependents.iter().find(|s| s.name() == base) {
                let names = scope.indep_names();
                if let Some(mi) = MultiIndex::from_letters(letters, &names) {
                    return Ok(Expr::jet(&JetVar::new(dep, mi)));
                }
                return self.err(format!("cannot read `{}` as derivative subscripts", letters));
            }
            let from_scope = scope.function(base).cloned();
            let from_auto = auto
                .as_ref()
                .and_then(|a| a.functions.iter().find(|f| f.name.as_ref() == base).cloned());
            if let Some(sig) = from_scope.or(from_auto) {
                let mut deriv = vec![0u32; sig.formals.len()];
                let formal_names: Vec<&str> = sig.formals.iter().map(|s| s.name()).collect();
                if let Some(mi) = MultiIndex::from_letters(letters, &formal_names) {
                    for (slot, f) in sig.formals.iter().enumerate() {
                        deriv[slot] = mi.count(f.name());
                    }
                    let args: Vec<Expr> = if allow_calls && self.peek().tok == Tok::LParen {
                        self.call_args(scope, auto)?
                    } else {
                        sig.formals.iter().map(Expr::sym).collect()
                    };
                    if args.len() != sig.formals.len() {
                        return self.err("argument count must match the function arity");
                    }
                    return Ok(Expr::func_deriv(&sig.name, deriv, args));
                }
                return self.err(format!(
                    "cannot read `{}` as derivatives of the formals of {}",
                    letters, base
                ));
            }
            return self.err(format!("undeclared symbol `{}`", base));
        }

        // unknown identifier: auto-register inside ansatz images
        if let Some(auto_reg) = auto.as_deref_mut() {
            if allow_calls && self.peek().tok == Tok::LParen {
                let args = self.call_args(scope, None)?;
                let mut formals = Vec::new();
                for a in &args {
                    match a {
                        Expr::Sym(s) => formals.push(s.clone()),
                        Expr::Jet(j) if j.order() == 0 => formals.push(j.dep.clone()),
                        _ => {
                            return self.err(format!(
                                "unknown function `{}` must be applied to plain declared symbols",
                                name
                            ))
                        }
                    }
                }
                let sig = FuncSig::new(name, formals);
                if !auto_reg.functions.iter().any(|f| f.name == sig.name) {
                    auto_reg.functions.push(sig.clone());
                }
                return Ok(Expr::func(name, args));
            }
            if let Some(existing) = auto_reg.functions.iter().find(|f| f.name.as_ref() == name) {
                return Ok(existing.applied());
            }
            let c = Symbol::constant(name);
            if !auto_reg.constants.iter().any(|s| s.name() == name) {
                auto_reg.constants.push(c.clone());
            }
            return Ok(Expr::sym(&c));
        }

        self.err(format!("undeclared symbol `{}`", name))
    }

    fn finish_function_use(
        &mut self,
        sig: &FuncSig,
        scope: &Scope,
        auto: Option<&mut AutoRegistry>,
    ) -> Result<Expr> {
        let mut primes = 0u32;
        while self.eat(Tok::Prime) {
            primes += 1;
        }
        if primes > 0 && sig.formals.len() != 1 {
            return self.err("prime derivatives only apply to single-argument functions");
        }
        let args: Vec<Expr> = if self.peek().tok == Tok::LParen {
            self.call_args(scope, auto)?
        } else {
            sig.formals.iter().map(Expr::sym).collect()
        };
        if args.len() != sig.formals.len() {
            return self.err(format!(
                "{} expects {} arguments, found {}",
                sig.name,
                sig.formals.len(),
                args.len()
            ));
        }
        let mut deriv = vec![0u32; sig.formals.len()];
        if primes > 0 {
            deriv[0] = primes;
        }
        Ok(Expr::func_deriv(&sig.name, deriv, args))
    }
}

fn mentions_function(e: &Expr, probe: &Expr) -> Result<bool> {
    // Does `e` mention the function symbol of `probe` (any derivative orders)?
    let name = match probe {
        Expr::Func(f) => f.name.clone(),
        _ => return Ok(false),
    };
    fn walk(e: &Expr, name: &str) -> bool {
        match e {
            Expr::Func(f) => {
                f.name.as_ref() == name || f.args.iter().any(|a| walk(a, name))
            }
            Expr::Pow(b, _) => walk(b, name),
            Expr::Prod(fs) => fs.iter().any(|f| walk(f, name)),
            Expr::Sum(ts) => ts.iter().any(|t| walk(t, name)),
            _ => false,
        }
    }
    Ok(walk(e, &name))
}

