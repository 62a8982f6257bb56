//! Deterministic canonical-order printing. `parse(print(e)) == e` for
//! every canonical expression over a matching scope.

use num::{One, Signed};

use crate::eps::EpsSeries;
use crate::expr::{Expr, FuncApp, Rat};
use crate::system::FuncSig;

pub fn print_rat(q: &Rat) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Print without signature context (multi-argument slot derivatives fall
/// back to the explicit `diff` syntax).
pub fn print_expr(e: &Expr) -> String {
    print_expr_with(e, &[])
}

pub fn print_expr_with(e: &Expr, sigs: &[FuncSig]) -> String {
    let terms = e.terms();
    if terms.is_empty() {
        return "0".into();
    }
    let mut out = String::new();
    for (i, term) in terms.iter().enumerate() {
        let (neg, body) = signed_term(term, sigs);
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else if neg {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&body);
    }
    out
}

/// Split a canonical term into its sign and unsigned rendering.
fn signed_term(term: &Expr, sigs: &[FuncSig]) -> (bool, String) {
    match term {
        Expr::Rat(q) => (q.is_negative(), print_rat(&q.abs())),
        Expr::Prod(factors) => {
            let mut neg = false;
            let mut coeff: Option<String> = None;
            let mut rest: Vec<&Expr> = Vec::new();
            for f in factors {
                match f {
                    Expr::Rat(q) => {
                        let a = q.abs();
                        neg = q.is_negative();
                        if !a.is_one() {
                            coeff = Some(print_rat(&a));
                        }
                    }
                    other => rest.push(other),
                }
            }
            // display order: symbols, then functions, then jet variables
            rest.sort_by_key(|f| display_rank(f));
            let mut parts: Vec<String> = Vec::new();
            if let Some(c) = coeff {
                parts.push(c);
            }
            for f in rest {
                parts.push(print_factor(f, sigs));
            }
            if parts.is_empty() {
                parts.push("1".into());
            }
            (neg, parts.join("*"))
        }
        other => (false, print_factor(other, sigs)),
    }
}

fn display_rank(e: &Expr) -> u8 {
    match e {
        Expr::Sym(_) => 0,
        Expr::Func(_) => 1,
        Expr::Jet(j) if j.order() == 0 => 2,
        Expr::Jet(_) => 3,
        Expr::Pow(b, _) => display_rank(b),
        _ => 4,
    }
}

fn print_factor(e: &Expr, sigs: &[FuncSig]) -> String {
    match e {
        Expr::Rat(q) => {
            if q.is_negative() || !q.is_integer() {
                format!("({})", print_rat(q))
            } else {
                print_rat(q)
            }
        }
        Expr::Sym(s) => s.name().to_string(),
        Expr::Jet(j) => format!("{:?}", j),
        Expr::Func(f) => print_func(f, sigs),
        Expr::Pow(b, n) => {
            let base = match b.as_ref() {
                Expr::Sum(_) | Expr::Prod(_) | Expr::Rat(_) => format!("({})", print_expr_with(b, sigs)),
                other => print_factor(other, sigs),
            };
            if *n < 0 {
                format!("{}^-{}", base, -n)
            } else {
                format!("{}^{}", base, n)
            }
        }
        Expr::Prod(_) => format!("({})", print_expr_with(e, sigs)),
        Expr::Sum(_) => format!("({})", print_expr_with(e, sigs)),
    }
}

fn print_func(f: &FuncApp, sigs: &[FuncSig]) -> String {
    let args: Vec<String> = f.args.iter().map(|a| print_expr_with(a, sigs)).collect();
    let total: u32 = f.deriv.iter().sum();
    if total == 0 {
        return format!("{}({})", f.name, args.join(","));
    }
    if f.args.len() == 1 {
        let primes: String = std::iter::repeat('\'').take(f.deriv[0] as usize).collect();
        return format!("{}{}({})", f.name, primes, args.join(","));
    }
    if let Some(sig) = sigs.iter().find(|s| s.name == f.name) {
        let mut letters = String::new();
        for (slot, &k) in f.deriv.iter().enumerate() {
            for _ in 0..k {
                letters.push_str(sig.formals[slot].name());
            }
        }
        return format!("{}_{}({})", f.name, letters, args.join(","));
    }
    let orders: Vec<String> = f.deriv.iter().map(|k| k.to_string()).collect();
    format!("diff({},{})({})", f.name, orders.join(","), args.join(","))
}

/// Print a graded series as `g0 + eps*(g1) + eps^2*(g2) ...`, merging the
/// sign when a grade is a single term.
pub fn print_eps(series: &EpsSeries) -> String {
    print_eps_with(series, &[])
}

pub fn print_eps_with(series: &EpsSeries, sigs: &[FuncSig]) -> String {
    let mut out = String::new();
    for (g, c) in series.coeffs().iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        let prefix = match g {
            0 => String::new(),
            1 => "eps*".into(),
            k => format!("eps^{}*", k),
        };
        if g == 0 {
            out = print_expr_with(c, sigs);
            continue;
        }
        let terms = c.terms();
        let (body, neg) = if terms.len() == 1 {
            let (neg, b) = signed_term(&terms[0], sigs);
            (format!("{}{}", prefix, b), neg)
        } else {
            (format!("{}({})", prefix, print_expr_with(c, sigs)), false)
        };
        if out.is_empty() {
            if neg {
                out.push('-');
            }
            out.push_str(&body);
        } else if neg {
            out.push_str(" - ");
            out.push_str(&body);
        } else {
            out.push_str(" + ");
            out.push_str(&body);
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}
