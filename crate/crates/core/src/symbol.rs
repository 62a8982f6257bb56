//! Symbols, derivative multi-indices and jet variables.
//!
//! A jet variable `u_J` is a formal coordinate for a derivative of a
//! dependent variable; distinct jet coordinates are algebraically
//! independent. Multi-indices are multisets over the independent
//! variables, so `u_xt` and `u_tx` are the same coordinate.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Default cap on jet order; guards runaway differentiation.
pub const DEFAULT_JET_CAP: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    Independent,
    Dependent,
    ArbitraryFunction,
    Constant,
    Eps,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol {
    kind: SymbolKind,
    name: Arc<str>,
}

impl Symbol {
    pub fn new(name: &str, kind: SymbolKind) -> Self {
        Symbol { kind, name: Arc::from(name) }
    }
    pub fn independent(name: &str) -> Self {
        Self::new(name, SymbolKind::Independent)
    }
    pub fn dependent(name: &str) -> Self {
        Self::new(name, SymbolKind::Dependent)
    }
    pub fn constant(name: &str) -> Self {
        Self::new(name, SymbolKind::Constant)
    }
    pub fn function(name: &str) -> Self {
        Self::new(name, SymbolKind::ArbitraryFunction)
    }
    /// The small parameter. There is exactly one per system and it is
    /// always spelled `eps`.
    pub fn eps() -> Self {
        Self::new("eps", SymbolKind::Eps)
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn kind(&self) -> SymbolKind {
        self.kind
    }
    pub fn is_eps(&self) -> bool {
        self.kind == SymbolKind::Eps
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// Differentiation multiplicities per independent variable.
///
/// Order-insensitive by construction: the map is keyed by variable name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(BTreeMap<Arc<str>, u32>);

impl MultiIndex {
    pub fn empty() -> Self {
        MultiIndex(BTreeMap::new())
    }

    pub fn from_pairs<I: IntoIterator<Item = (Arc<str>, u32)>>(pairs: I) -> Self {
        let mut m = BTreeMap::new();
        for (k, v) in pairs {
            if v > 0 {
                *m.entry(k).or_insert(0) += v;
            }
        }
        MultiIndex(m)
    }

    /// Parse subscript letters like "xxt" against a list of variable names.
    /// Multi-letter variable names are matched greedily, longest first.
    pub fn from_letters(letters: &str, vars: &[&str]) -> Option<Self> {
        let mut rest = letters;
        let mut m = BTreeMap::new();
        let mut sorted: Vec<&str> = vars.to_vec();
        sorted.sort_by_key(|v| std::cmp::Reverse(v.len()));
        'outer: while !rest.is_empty() {
            for v in &sorted {
                if let Some(r) = rest.strip_prefix(v) {
                    *m.entry(Arc::from(*v)).or_insert(0) += 1;
                    rest = r;
                    continue 'outer;
                }
            }
            return None;
        }
        Some(MultiIndex(m))
    }

    pub fn order(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, var: &str) -> u32 {
        self.0.get(var).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_ref(), *v))
    }

    /// Raise the multiplicity of `var` by one.
    pub fn raised(&self, var: &str) -> Self {
        let mut m = self.0.clone();
        *m.entry(Arc::from(var)).or_insert(0) += 1;
        MultiIndex(m)
    }

    /// Multiset union.
    pub fn plus(&self, other: &MultiIndex) -> Self {
        let mut m = self.0.clone();
        for (k, v) in &other.0 {
            *m.entry(k.clone()).or_insert(0) += v;
        }
        MultiIndex(m)
    }

    /// Multiset containment: self ⊇ other.
    pub fn contains(&self, other: &MultiIndex) -> bool {
        other.0.iter().all(|(k, v)| self.count(k) >= *v)
    }

    /// Multiset difference; requires self ⊇ other.
    pub fn minus(&self, other: &MultiIndex) -> Option<Self> {
        if !self.contains(other) {
            return None;
        }
        let mut m = self.0.clone();
        for (k, v) in &other.0 {
            let e = m.get_mut(k).unwrap();
            *e -= v;
            if *e == 0 {
                m.remove(k);
            }
        }
        Some(MultiIndex(m))
    }

    /// All sub-multisets, including the empty one and self.
    pub fn submultisets(&self) -> Vec<MultiIndex> {
        let entries: Vec<(Arc<str>, u32)> = self.0.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let mut out = vec![MultiIndex::empty()];
        for (k, max) in entries {
            let mut next = Vec::with_capacity(out.len() * (max as usize + 1));
            for m in &out {
                for c in 0..=max {
                    let mut mm = m.0.clone();
                    if c > 0 {
                        mm.insert(k.clone(), c);
                    }
                    next.push(MultiIndex(mm));
                }
            }
            out = next;
        }
        out
    }

    /// Number of ordered tuples realizing this multiset: |J|! / prod m_i!.
    pub fn tuple_multiplicity(&self) -> num::BigRational {
        use num::{BigInt, BigRational, One};
        let mut num_f = BigInt::one();
        for k in 2..=self.order() {
            num_f *= BigInt::from(k);
        }
        let mut den = BigInt::one();
        for (_, c) in self.counts() {
            for k in 2..=c {
                den *= BigInt::from(k);
            }
        }
        BigRational::new(num_f, den)
    }

    /// Spell the index as subscript letters in key order, e.g. "ttx".
    pub fn letters(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            for _ in 0..*v {
                s.push_str(k);
            }
        }
        s
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letters())
    }
}

/// A derivative coordinate of a dependent variable.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetVar {
    pub dep: Symbol,
    pub index: MultiIndex,
}

impl JetVar {
    pub fn base(dep: &Symbol) -> Self {
        JetVar { dep: dep.clone(), index: MultiIndex::empty() }
    }

    pub fn new(dep: &Symbol, index: MultiIndex) -> Self {
        JetVar { dep: dep.clone(), index }
    }

    pub fn order(&self) -> u32 {
        self.index.order()
    }

    pub fn raised(&self, var: &str) -> Self {
        JetVar { dep: self.dep.clone(), index: self.index.raised(var) }
    }
}

impl fmt::Debug for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.index.is_empty() {
            write!(f, "{}", self.dep)
        } else {
            write!(f, "{}_{}", self.dep, self.index.letters())
        }
    }
}

impl fmt::Display for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_is_order_insensitive() {
        let a = MultiIndex::from_letters("xt", &["x", "t"]).unwrap();
        let b = MultiIndex::from_letters("tx", &["x", "t"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.order(), 2);
    }

    #[test]
    fn multi_index_arithmetic() {
        let a = MultiIndex::from_letters("ttx", &["x", "t"]).unwrap();
        let b = MultiIndex::from_letters("t", &["x", "t"]).unwrap();
        assert!(a.contains(&b));
        let d = a.minus(&b).unwrap();
        assert_eq!(d.letters(), "tx");
        assert_eq!(b.plus(&d), a);
        assert_eq!(a.submultisets().len(), 6);
    }

    #[test]
    fn tuple_multiplicity_counts_orderings() {
        use num::BigRational;
        let a = MultiIndex::from_letters("ttx", &["x", "t"]).unwrap();
        assert_eq!(a.tuple_multiplicity(), BigRational::from_integer(3.into()));
        let b = MultiIndex::from_letters("tt", &["x", "t"]).unwrap();
        assert_eq!(b.tuple_multiplicity(), BigRational::from_integer(1.into()));
    }
}
