//! Textual front end: a small declaration language for systems,
//! generators and substitution ansatze, a canonical printer, and the
//! serialized conserved-vector document format.
//!
//! Grammar sketch (see the repository README for the full EBNF):
//!
//! ```text
//! document  := { statement }
//! statement := "indep" names ";" | "dep" names ";" | "const" names ";"
//!            | "func" sig { "," sig } ";" | "eps" "order" INT ";"
//!            | "eq" NAME ":" expr "=" expr "lead" JET ";"
//!            | "gen" NAME ":" comp { "," comp } ";"
//!            | "subst" [NAME ":"] target "=" expr
//!              ["satisfying" cond { "," cond }] ";"
//! ```
//!
//! Derivatives are spelled `u_tt`, `u_xxt` (order-insensitive); formal
//! function derivatives as `F'(u)` or `f_tt`; rational literals as `1/2`.

mod lexer;
mod parser;
mod printer;
pub mod serialize;

pub use parser::{parse_document, parse_expr, ParsedDocument, Scope};
pub use printer::{print_eps, print_eps_with, print_expr, print_expr_with, print_rat};
