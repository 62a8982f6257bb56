//! Nonlinear self-adjointness and its first-order approximate analogue:
//! substitution checks through multiplier identities, determining-system
//! generation by jet-monomial collection, finite-dimensional linear
//! solving, the lift from the unperturbed case, and the shortcut
//! discrimination rules.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num::{One, Zero};

use crate::eps::EpsSeries;
use crate::error::{Error, Result};
use crate::expr::{to_poly, Atom, Expr, FuncApp, Mono, Rat};
use crate::jet::on_shell_reduce;
use crate::symbol::Symbol;
use crate::system::{FuncSig, MultiplierSet, PdeSystem, SubstitutionAnsatz};
use crate::variational::adjoint_system;

/// Result of a (approximate) self-adjointness check.
#[derive(Clone, Debug)]
pub struct SelfAdjointnessReport {
    pub holds: bool,
    /// Multipliers in the substitute-into-the-Lagrangian convention
    /// (the division cofactor plus the image's own u-gradient).
    pub multipliers: MultiplierSet,
    /// Graded residual per adjoint equation after the multiplier terms
    /// are removed; all-zero exactly when the identity holds.
    pub residuals: Vec<EpsSeries>,
    /// True when the division cofactors depended on derivatives, which
    /// puts the substitution outside the point-multiplier class.
    pub multipliers_not_point: bool,
}

/// Divide `r` by the unperturbed equations in their leading derivatives:
/// r = sum_beta q_beta E0_beta + remainder, remainder free of leadings.
fn divide_by_unperturbed(sys: &PdeSystem, r: &Expr) -> Result<(Vec<Expr>, Expr)> {
    let mut rem = r.normalize()?;
    let mut quotients = vec![Expr::zero(); sys.equations.len()];
    for (i, eq) in sys.equations.iter().enumerate() {
        let (c, rest) = eq
            .e0
            .as_linear_in(&eq.leading)?
            .ok_or_else(|| Error::ReductionFailure(format!("{} not linear in leading", eq.name)))?;
        let c_inv = c.pow_i(-1)?;
        let s = rest.neg()?.mul(&c_inv)?;
        let powers = rem.collect_powers(&eq.leading)?;
        let lead = Expr::jet(&eq.leading);
        let mut q = Expr::zero();
        let mut new_rem = Expr::zero();
        for (d, cd) in powers {
            if d < 0 {
                return Err(Error::ReductionFailure(format!(
                    "negative power of leading {:?}",
                    eq.leading
                )));
            }
            new_rem = new_rem.add(&cd.mul(&s.pow_i(d)?)?)?;
            for j in 0..d {
                let part = lead.pow_i(j)?.mul(&s.pow_i(d - 1 - j)?)?;
                q = q.add(&cd.mul(&part)?)?;
            }
        }
        quotients[i] = q.mul(&c_inv)?;
        rem = new_rem;
    }
    Ok((quotients, rem))
}

/// Substitute the ansatz images into the adjoint equations and return the
/// graded results, one per adjoint equation.
fn adjoint_after_substitution(
    sys: &PdeSystem,
    subst: &SubstitutionAnsatz,
) -> Result<(Vec<EpsSeries>, Vec<Symbol>)> {
    let (adjoint, vars) = adjoint_system(sys)?;
    let eps = Expr::Sym(Symbol::eps());
    let mut out = Vec::with_capacity(adjoint.len());
    for series in &adjoint {
        let mut e = series.to_expr()?;
        for var in &vars {
            let (psi, phi) = subst.image_for(var).cloned().ok_or_else(|| {
                Error::InvalidSubstitution(format!("no image for adjoint variable {}", var.name()))
            })?;
            let image = psi.add(&eps.mul(&phi)?)?;
            e = crate::jet::substitute_dependent(sys, &e, var, &image)?;
        }
        out.push(EpsSeries::from_expr(&e, sys.eps_order, true)?);
    }
    Ok((out, vars))
}

/// Exact nonlinear self-adjointness of an unperturbed system under a
/// concrete substitution v = phi(x, u).
pub fn check_nsa(sys: &PdeSystem, subst: &SubstitutionAnsatz) -> Result<SelfAdjointnessReport> {
    if !sys.is_unperturbed() {
        return Err(Error::InvalidSystem(
            "check_nsa expects an unperturbed system; use check_ansa".into(),
        ));
    }
    check_identity(&sys.unperturbed(), subst)
}

/// First-order approximate nonlinear self-adjointness under a concrete
/// substitution w = psi(x,u) + eps*phi(x,u).
pub fn check_ansa(sys: &PdeSystem, subst: &SubstitutionAnsatz) -> Result<SelfAdjointnessReport> {
    if sys.eps_order < 1 {
        return Err(Error::InvalidSystem("check_ansa needs eps order >= 1".into()));
    }
    check_identity(sys, subst)
}

fn check_identity(sys: &PdeSystem, subst: &SubstitutionAnsatz) -> Result<SelfAdjointnessReport> {
    subst.validate()?;
    if subst.is_trivial() {
        return Err(Error::TrivialSubstitution);
    }
    let m = sys.equations.len();
    let (substituted, vars) = adjoint_after_substitution(sys, subst)?;
    let mut mult = MultiplierSet::zero(m);
    let mut residuals = Vec::with_capacity(m);
    let mut holds = true;
    let mut not_point = false;
    for (alpha, series) in substituted.iter().enumerate() {
        // grade 0: R0 = lambda^beta E0_beta + r0
        let (lambda, r0) = divide_by_unperturbed(sys, series.coeff(0))?;
        let r0 = reduce_by_side_conditions(&r0, &subst.unknown_functions, sys.jet_cap)?;
        let mut res = vec![r0.clone()];
        if sys.eps_order >= 1 {
            // grade 1: R1 - lambda^beta E1_beta = mu^beta E0_beta + r1
            let mut r1 = series.coeff(1).clone();
            for (beta, l) in lambda.iter().enumerate() {
                r1 = r1.sub(&l.mul(&sys.equations[beta].e1)?)?;
            }
            let (mu, r1) = divide_by_unperturbed(sys, &r1)?;
            let r1 = reduce_by_side_conditions(&r1, &subst.unknown_functions, sys.jet_cap)?;
            if !r1.is_zero() {
                holds = false;
            }
            for (beta, q) in mu.into_iter().enumerate() {
                if q.jet_vars()?.iter().any(|j| j.order() > 0) {
                    not_point = true;
                }
                // report in the Lagrangian-substitution convention
                let shift = subst
                    .image_for(&vars[beta])
                    .map(|(_, phi)| phi.clone())
                    .unwrap_or_else(Expr::zero)
                    .diff_partial(&sys.dependents[alpha])?;
                mult.mu[alpha][beta] = q.add(&shift)?;
            }
            res.push(r1);
        }
        if !res[0].is_zero() {
            holds = false;
        }
        for (beta, q) in lambda.into_iter().enumerate() {
            if q.jet_vars()?.iter().any(|j| j.order() > 0) {
                not_point = true;
            }
            let shift = subst
                .image_for(&vars[beta])
                .map(|(psi, _)| psi.clone())
                .unwrap_or_else(Expr::zero)
                .diff_partial(&sys.dependents[alpha])?;
            mult.lambda[alpha][beta] = q.add(&shift)?;
        }
        let k = sys.eps_order.max(res.len() - 1);
        let mut coeffs = res;
        coeffs.resize(k + 1, Expr::zero());
        residuals.push(EpsSeries::from_coeffs(coeffs)?);
    }
    if not_point {
        holds = false;
    }
    Ok(SelfAdjointnessReport { holds, multipliers: mult, residuals, multipliers_not_point: not_point })
}

/// Rewrite slot-derivative atoms of constrained unknown functions using
/// their side conditions (each condition solved for its highest slot
/// derivative), to a fixpoint.
pub fn reduce_by_side_conditions(
    e: &Expr,
    funcs: &[(FuncSig, Vec<Expr>)],
    cap: u32,
) -> Result<Expr> {
    let mut rules: Vec<(Arc<str>, Vec<u32>, Expr, Vec<Symbol>)> = Vec::new();
    for (sig, conds) in funcs {
        for cond in conds {
            if let Some((deriv, rhs)) = solve_condition(cond, sig)? {
                rules.push((sig.name.clone(), deriv, rhs, sig.formals.clone()));
            }
        }
    }
    if rules.is_empty() {
        return e.normalize();
    }
    let mut cur = e.normalize()?;
    for _ in 0..16 {
        let mut map: BTreeMap<Atom, Expr> = BTreeMap::new();
        for app in func_atoms(&cur)? {
            for (name, lead, rhs, formals) in &rules {
                if app.name != *name {
                    continue;
                }
                let extra: Vec<u32> = app
                    .deriv
                    .iter()
                    .zip(lead)
                    .map(|(a, b)| a.checked_sub(*b))
                    .collect::<Option<Vec<u32>>>()
                    .unwrap_or_default();
                if extra.len() != app.deriv.len() {
                    continue;
                }
                // differentiate the rhs per extra slot orders
                let mut r = rhs.clone();
                for (slot, &k) in extra.iter().enumerate() {
                    for _ in 0..k {
                        r = r.diff_partial(&formals[slot])?;
                    }
                }
                // bind formals to the occurrence arguments
                let mut binding = BTreeMap::new();
                let mut identity = true;
                for (slot, formal) in formals.iter().enumerate() {
                    let farg = Expr::sym(formal);
                    if app.args[slot] != farg {
                        identity = false;
                    }
                    binding.insert(
                        crate::expr::DiffTarget::from(formal).as_atom(),
                        app.args[slot].clone(),
                    );
                }
                if !identity {
                    r = r.substitute_atoms(&binding)?;
                }
                map.insert(Atom::Func(app.clone()), r);
                break;
            }
        }
        if map.is_empty() {
            return Ok(cur);
        }
        cur = cur.substitute_atoms(&map)?;
    }
    let _ = cap;
    Err(Error::ReductionDiverged(16))
}

/// Solve a side condition for its highest slot derivative; returns the
/// (derivative orders, solved right-hand side).
fn solve_condition(cond: &Expr, sig: &FuncSig) -> Result<Option<(Vec<u32>, Expr)>> {
    let mut best: Option<FuncApp> = None;
    for app in func_atoms(cond)? {
        if app.name != sig.name {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (ao, bo) = (app.total_deriv_order(), b.total_deriv_order());
                ao > bo || (ao == bo && app.deriv.iter().rev().cmp(b.deriv.iter().rev()) == std::cmp::Ordering::Greater)
            }
        };
        if better {
            best = Some(app);
        }
    }
    let lead = match best {
        Some(l) if l.total_deriv_order() > 0 => l,
        _ => return Ok(None),
    };
    let target = Atom::Func(lead.clone());
    let p = to_poly(cond)?;
    let mut coeff = Rat::zero();
    let mut rest = Expr::zero();
    for (mono, c) in &p.0 {
        match mono.get(&target) {
            Some(1) if mono.len() == 1 => coeff += c,
            Some(_) => {
                return Err(Error::InvalidSubstitution(
                    "side condition is not linear in its leading derivative".into(),
                ))
            }
            None => {
                let term = crate::expr::poly_from_term(mono, c);
                rest = rest.add(&term)?;
            }
        }
    }
    if coeff.is_zero() {
        return Ok(None);
    }
    let rhs = rest.scale(&(-Rat::one() / coeff))?;
    Ok(Some((lead.deriv.clone(), rhs)))
}

fn func_atoms(e: &Expr) -> Result<Vec<FuncApp>> {
    let mut out = Vec::new();
    fn walk(e: &Expr, out: &mut Vec<FuncApp>) {
        match e {
            Expr::Func(f) => {
                out.push(f.clone());
                for a in &f.args {
                    walk(a, out);
                }
            }
            Expr::Pow(b, _) => walk(b, out),
            Expr::Prod(fs) => fs.iter().for_each(|f| walk(f, out)),
            Expr::Sum(ts) => ts.iter().for_each(|t| walk(t, out)),
            _ => {}
        }
    }
    walk(e, &mut out);
    out.dedup();
    Ok(out)
}

/// Determining system for an ansatz with unknown functions/constants:
/// substitute into the identity, reduce on the full solution manifold,
/// and read the remaining jet monomials as independent generators.
#[derive(Clone, Debug)]
pub struct DeterminingSystem {
    pub equations: Vec<Expr>,
    pub unknown_constants: Vec<Symbol>,
    pub unknown_functions: Vec<FuncSig>,
}

pub fn determining_system(sys: &PdeSystem, ansatz: &SubstitutionAnsatz) -> Result<DeterminingSystem> {
    ansatz.validate()?;
    let (substituted, _vars) = adjoint_after_substitution(sys, ansatz)?;
    let mut equations: Vec<Expr> = Vec::new();
    for series in &substituted {
        let reduced = on_shell_reduce(sys, series)?;
        for grade in reduced.coeffs() {
            collect_determining(grade, &mut equations)?;
        }
    }
    // normalize, drop zeros and duplicates (up to rational scaling)
    let mut seen: BTreeSet<Expr> = BTreeSet::new();
    let mut out = Vec::new();
    for e in equations {
        let e = e.normalize()?;
        if e.is_zero() {
            continue;
        }
        let canon = scale_canonical(&e)?;
        if seen.insert(canon.clone()) {
            out.push(canon);
        }
    }
    Ok(DeterminingSystem {
        equations: out,
        unknown_constants: ansatz.unknown_constants.clone(),
        unknown_functions: ansatz.unknown_functions.iter().map(|(s, _)| s.clone()).collect(),
    })
}

/// Divide an equation by its leading rational coefficient so duplicates
/// that differ by scaling collapse.
fn scale_canonical(e: &Expr) -> Result<Expr> {
    let p = to_poly(e)?;
    if let Some((_, c)) = p.0.iter().next() {
        return e.scale(&(Rat::one() / c.clone()));
    }
    Ok(e.clone())
}

/// Split an expression into coefficients of positive-order jet monomials;
/// each coefficient becomes a determining equation.
fn collect_determining(e: &Expr, out: &mut Vec<Expr>) -> Result<()> {
    let p = to_poly(e)?;
    let mut buckets: BTreeMap<Mono, Vec<(Mono, Rat)>> = BTreeMap::new();
    for (mono, coeff) in &p.0 {
        let mut jet_part = Mono::new();
        let mut rest = Mono::new();
        for (atom, exp) in mono {
            match atom {
                Atom::Jet(j) if j.order() > 0 => {
                    jet_part.insert(atom.clone(), *exp);
                }
                other => {
                    // a coefficient atom may not hide positive-order jets
                    if atom_hides_positive_jet(other)? {
                        return Err(Error::CollectionIncomplete(format!(
                            "coefficient atom {:?} contains a positive-order jet",
                            other
                        )));
                    }
                    rest.insert(atom.clone(), *exp);
                }
            }
        }
        buckets.entry(jet_part).or_default().push((rest, coeff.clone()));
    }
    for (_, terms) in buckets {
        let mut acc = Expr::zero();
        for (mono, c) in terms {
            acc = acc.add(&crate::expr::poly_from_term(&mono, &c))?;
        }
        out.push(acc);
    }
    Ok(())
}

fn atom_hides_positive_jet(atom: &Atom) -> Result<bool> {
    match atom {
        Atom::Func(f) => {
            for a in &f.args {
                if a.jet_vars()?.iter().any(|j| j.order() > 0) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Atom::SumPow(b) => Ok(b.jet_vars()?.iter().any(|j| j.order() > 0)),
        _ => Ok(false),
    }
}

/// Solution of a finite-dimensional ansatz: dimension, the parametrized
/// family, and one member per free parameter.
#[derive(Clone, Debug)]
pub struct SolvedFamily {
    pub dimension: usize,
    pub family: SubstitutionAnsatz,
    pub basis_members: Vec<SubstitutionAnsatz>,
}

/// Restrict the unknown functions to linear combinations over a monomial
/// basis and solve the resulting homogeneous rational linear system.
pub fn solve_finite_ansatz(
    sys: &PdeSystem,
    ansatz: &SubstitutionAnsatz,
    ds: &DeterminingSystem,
    basis: &[Expr],
) -> Result<SolvedFamily> {
    let funcs = &ds.unknown_functions;
    if funcs.is_empty() {
        return Err(Error::InvalidSubstitution("no unknown functions to solve for".into()));
    }
    // unknown coefficients a[f][i]
    let mut coeff_syms: Vec<Vec<Symbol>> = Vec::new();
    for (fi, _f) in funcs.iter().enumerate() {
        let mut row = Vec::new();
        for bi in 0..basis.len() {
            row.push(Symbol::constant(&format!("__a{}_{}", fi, bi)));
        }
        coeff_syms.push(row);
    }
    let bodies: Vec<Expr> = coeff_syms
        .iter()
        .map(|row| {
            let mut acc = Expr::zero();
            for (bi, c) in row.iter().enumerate() {
                acc = acc.add(&Expr::sym(c).mul(&basis[bi])?)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    // substitute the bodies into every determining equation
    let mut rows: Vec<BTreeMap<usize, Rat>> = Vec::new();
    let all_coeffs: Vec<Symbol> = coeff_syms.iter().flatten().cloned().collect();
    let index_of = |s: &Symbol| all_coeffs.iter().position(|t| t == s);
    for eq in &ds.equations {
        let mut e = eq.clone();
        for (fi, f) in funcs.iter().enumerate() {
            e = e.substitute_function_body(&f.name, &f.formals, &bodies[fi])?;
        }
        let e = e.normalize()?;
        // group by non-coefficient monomial; each group is linear in the a's
        let p = to_poly(&e)?;
        let mut groups: BTreeMap<Mono, BTreeMap<usize, Rat>> = BTreeMap::new();
        for (mono, c) in &p.0 {
            let mut which: Option<usize> = None;
            let mut rest = Mono::new();
            for (atom, exp) in mono {
                match atom {
                    Atom::Sym(s) if s.name().starts_with("__a") => {
                        if *exp != 1 || which.is_some() {
                            return Err(Error::NonlinearInUnknowns);
                        }
                        which = Some(index_of(s).expect("registered coefficient"));
                    }
                    other => {
                        rest.insert(other.clone(), *exp);
                    }
                }
            }
            let idx = which.ok_or(Error::InternalInconsistency(
                "determining equation has a term free of the unknown coefficients".into(),
            ))?;
            *groups.entry(rest).or_default().entry(idx).or_insert_with(Rat::zero) += c.clone();
        }
        for (_, row) in groups {
            let row: BTreeMap<usize, Rat> = row.into_iter().filter(|(_, c)| !c.is_zero()).collect();
            if !row.is_empty() {
                rows.push(row);
            }
        }
    }

    let n = all_coeffs.len();
    let null = nullspace(rows, n);
    let dimension = null.len();

    // rebuild the family: fresh constants c1..cd scale the null vectors
    let fresh: Vec<Symbol> = (1..=dimension).map(|i| Symbol::constant(&format!("c{}", i))).collect();
    let mut images: BTreeMap<Arc<str>, (Expr, Expr)> = BTreeMap::new();
    let mut basis_members: Vec<SubstitutionAnsatz> = Vec::new();

    let build_member = |vec: &[Rat]| -> Result<BTreeMap<Arc<str>, (Expr, Expr)>> {
        // map function index -> expression
        let mut per_func: Vec<Expr> = Vec::new();
        for (fi, _) in funcs.iter().enumerate() {
            let mut acc = Expr::zero();
            for (bi, b) in basis.iter().enumerate() {
                let idx = fi * basis.len() + bi;
                if !vec[idx].is_zero() {
                    acc = acc.add(&b.scale(&vec[idx])?)?;
                }
            }
            per_func.push(acc);
        }
        rebuild_images(ansatz, funcs, &per_func)
    };

    for (j, vec) in null.iter().enumerate() {
        let member_images = build_member(vec)?;
        basis_members.push(SubstitutionAnsatz {
            images: member_images.clone(),
            unknown_constants: vec![],
            unknown_functions: vec![],
        });
        for (name, (psi, phi)) in member_images {
            let c = Expr::sym(&fresh[j]);
            let entry = images.entry(name).or_insert((Expr::zero(), Expr::zero()));
            entry.0 = entry.0.add(&psi.mul(&c)?)?;
            entry.1 = entry.1.add(&phi.mul(&c)?)?;
        }
    }
    if dimension == 0 {
        for (name, _) in &ansatz.images {
            images.insert(name.clone(), (Expr::zero(), Expr::zero()));
        }
    }
    let _ = sys;
    Ok(SolvedFamily {
        dimension,
        family: SubstitutionAnsatz { images, unknown_constants: fresh, unknown_functions: vec![] },
        basis_members,
    })
}

/// Substitute solved bodies for the unknown functions inside the ansatz
/// images.
fn rebuild_images(
    ansatz: &SubstitutionAnsatz,
    funcs: &[FuncSig],
    bodies: &[Expr],
) -> Result<BTreeMap<Arc<str>, (Expr, Expr)>> {
    let mut out = BTreeMap::new();
    for (name, (psi, phi)) in &ansatz.images {
        let mut p = psi.clone();
        let mut q = phi.clone();
        for (fi, f) in funcs.iter().enumerate() {
            p = p.substitute_function_body(&f.name, &f.formals, &bodies[fi])?;
            q = q.substitute_function_body(&f.name, &f.formals, &bodies[fi])?;
        }
        out.insert(name.clone(), (p, q));
    }
    Ok(out)
}

/// Exact rational nullspace of a sparse homogeneous system.
fn nullspace(rows: Vec<BTreeMap<usize, Rat>>, n: usize) -> Vec<Vec<Rat>> {
    // dense Gaussian elimination; desk-scale sizes
    let mut mat: Vec<Vec<Rat>> = rows
        .into_iter()
        .map(|r| {
            let mut v = vec![Rat::zero(); n];
            for (i, c) in r {
                v[i] = c;
            }
            v
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        let mut pivot = None;
        for (ri, row) in mat.iter().enumerate().skip(rank) {
            if !row[col].is_zero() {
                pivot = Some(ri);
                break;
            }
        }
        let Some(p) = pivot else { continue };
        mat.swap(rank, p);
        let inv = Rat::one() / mat[rank][col].clone();
        for c in mat[rank].iter_mut() {
            *c *= inv.clone();
        }
        for ri in 0..mat.len() {
            if ri != rank && !mat[ri][col].is_zero() {
                let f = mat[ri][col].clone();
                for c in 0..n {
                    let sub = &mat[rank][c] * &f;
                    mat[ri][c] -= sub;
                }
            }
        }
        pivot_cols.push(col);
        rank += 1;
        if rank == mat.len() {
            break;
        }
    }
    let free_cols: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
    let mut basis = Vec::new();
    for &fc in &free_cols {
        let mut v = vec![Rat::zero(); n];
        v[fc] = Rat::one();
        for (ri, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -mat[ri][fc].clone();
        }
        basis.push(v);
    }
    basis
}

/// Theorem lift: a substitution certifying the unperturbed case yields
/// w = eps * phi for the perturbed system.
pub fn lift_substitution(sys: &PdeSystem, phi: &SubstitutionAnsatz) -> Result<SubstitutionAnsatz> {
    let sys0 = sys.unperturbed();
    let report = check_nsa(&sys0, phi).map_err(|e| match e {
        Error::TrivialSubstitution => Error::LiftRejected("substitution is identically zero".into()),
        other => other,
    })?;
    if !report.holds {
        return Err(Error::LiftRejected(
            "substitution does not certify the unperturbed system".into(),
        ));
    }
    let mut images = BTreeMap::new();
    for (name, (psi, phi_part)) in &phi.images {
        if !phi_part.is_zero() {
            return Err(Error::LiftRejected("unperturbed substitution already carries eps".into()));
        }
        images.insert(name.clone(), (Expr::zero(), psi.clone()));
    }
    Ok(SubstitutionAnsatz {
        images,
        unknown_constants: phi.unknown_constants.clone(),
        unknown_functions: phi.unknown_functions.clone(),
    })
}

/// True when every unperturbed equation owns an additive monomial that
/// appears in no other equation; this forces zero multipliers.
pub fn distinct_term_criterion(sys: &PdeSystem) -> Result<bool> {
    let monos: Vec<BTreeSet<Expr>> = sys
        .equations
        .iter()
        .map(|eq| eq.e0.monomials().map(|v| v.into_iter().collect()))
        .collect::<Result<_>>()?;
    for (i, mine) in monos.iter().enumerate() {
        let mut has_distinct = false;
        'mono: for m in mine {
            for (j, theirs) in monos.iter().enumerate() {
                if i != j && theirs.contains(m) {
                    continue 'mono;
                }
            }
            has_distinct = true;
            break;
        }
        if !has_distinct {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Caller-established status of the unperturbed problem.
#[derive(Clone, Debug)]
pub enum NsaStatus {
    HoldsWith(SubstitutionAnsatz),
    FailsWithinFamily,
}

#[derive(Clone, Debug)]
pub enum ShortcutVerdict {
    AnsaYes(SubstitutionAnsatz),
    AnsaNoWithinFamily,
    Inconclusive,
}

/// Discriminate approximate self-adjointness from the unperturbed status:
/// a positive status lifts; a negative one transfers when the system is
/// scalar or satisfies the distinct-term criterion.
pub fn shortcut_discriminate(sys: &PdeSystem, status: &NsaStatus) -> Result<ShortcutVerdict> {
    match status {
        NsaStatus::HoldsWith(phi) => Ok(ShortcutVerdict::AnsaYes(lift_substitution(sys, phi)?)),
        NsaStatus::FailsWithinFamily => {
            if sys.equations.len() == 1 || distinct_term_criterion(sys)? {
                Ok(ShortcutVerdict::AnsaNoWithinFamily)
            } else {
                Ok(ShortcutVerdict::Inconclusive)
            }
        }
    }
}

// ---- determining-system equivalence ------------------------------------

/// Mutual-reduction equivalence of two determining systems: every
/// equation of each system must lie in the rational span of the other
/// system's derivative closure times a multiplier set.
pub fn equivalent_determining_systems(
    a: &[Expr],
    b: &[Expr],
    coords: &[Symbol],
    multipliers: &[Expr],
    deriv_depth: u32,
) -> Result<bool> {
    Ok(in_span_closure(a, b, coords, multipliers, deriv_depth)?
        && in_span_closure(b, a, coords, multipliers, deriv_depth)?)
}

fn in_span_closure(
    targets: &[Expr],
    basis: &[Expr],
    coords: &[Symbol],
    multipliers: &[Expr],
    deriv_depth: u32,
) -> Result<bool> {
    // derivative closure of the basis in coordinate space
    let mut closure: Vec<Expr> = basis.to_vec();
    let mut frontier: Vec<Expr> = basis.to_vec();
    for _ in 0..deriv_depth {
        let mut next = Vec::new();
        for e in &frontier {
            for c in coords {
                let d = e.diff_partial(c)?;
                if !d.is_zero() {
                    next.push(d);
                }
            }
        }
        closure.extend(next.clone());
        frontier = next;
    }
    // generators: closure x multipliers
    let mut gens: Vec<Expr> = Vec::new();
    for e in &closure {
        gens.push(e.clone());
        for m in multipliers {
            gens.push(e.mul(m)?);
        }
    }
    // echelon basis over canonical monomials
    let mut echelon: Vec<(Mono, BTreeMap<Mono, Rat>)> = Vec::new();
    let insert = |e: &Expr, echelon: &mut Vec<(Mono, BTreeMap<Mono, Rat>)>| -> Result<bool> {
        let mut v: BTreeMap<Mono, Rat> = to_poly(e)?.0;
        loop {
            let Some((lead, _)) = v.iter().next_back().map(|(k, c)| (k.clone(), c.clone())) else {
                return Ok(false);
            };
            if let Some((_, row)) = echelon.iter().find(|(p, _)| *p == lead) {
                let factor = v[&lead].clone() / row[&lead].clone();
                for (m, c) in row {
                    let cur = v.entry(m.clone()).or_insert_with(Rat::zero);
                    *cur -= c * &factor;
                }
                v.retain(|_, c| !c.is_zero());
            } else {
                echelon.push((lead, v));
                echelon.sort_by(|x, y| y.0.cmp(&x.0));
                return Ok(true);
            }
        }
    };
    for g in &gens {
        insert(g, &mut echelon)?;
    }
    // reduce every target against the echelon
    for t in targets {
        let mut v: BTreeMap<Mono, Rat> = to_poly(t)?.0;
        loop {
            let Some((lead, coeff)) = v.iter().next_back().map(|(k, c)| (k.clone(), c.clone())) else {
                break;
            };
            let Some((_, row)) = echelon.iter().find(|(p, _)| *p == lead) else {
                return Ok(false);
            };
            let factor = coeff / row[&lead].clone();
            for (m, c) in row {
                let cur = v.entry(m.clone()).or_insert_with(Rat::zero);
                *cur -= c * &factor;
            }
            v.retain(|_, c| !c.is_zero());
        }
    }
    Ok(true)
}
