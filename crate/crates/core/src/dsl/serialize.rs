//! Serialized conserved-vector documents, schema `jetlaw.vector.v1`.
//!
//! Components are carried both as canonical printed text (injective on
//! canonical forms, reparsable) and as structured term lists with exact
//! rational coefficients. Output is bit-stable across runs.

use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "jetlaw.vector.v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorTerm {
    pub coeff: String,
    pub monomial: String,
    pub eps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorComponent {
    /// Independent variable this component belongs to.
    pub var: String,
    /// Canonical printed form, one entry per eps grade.
    pub grades: Vec<String>,
    pub terms: Vec<VectorTerm>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorFlags {
    pub keep_xi_l: bool,
    pub keep_xi1_l2: bool,
    pub cosmetic: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorProvenance {
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default)]
    pub substitution: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorDoc {
    pub schema: String,
    /// Source text of the system the vector belongs to.
    pub system: String,
    pub eps_order: usize,
    /// Order k of the O(eps^(k+1)) claim.
    pub order: usize,
    pub components: Vec<VectorComponent>,
    pub flags: VectorFlags,
    pub provenance: VectorProvenance,
    /// "exact-zero" | "order-k-zero" | "failed" | "unverified"
    pub verdict: String,
    /// Notes, e.g. which grading of an ambiguous published form verified.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl VectorDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vector document serializes")
    }

    pub fn from_json(text: &str) -> crate::error::Result<VectorDoc> {
        let doc: VectorDoc = serde_json::from_str(text).map_err(|e| crate::error::Error::Parse {
            line: 0,
            col: 0,
            msg: format!("vector document: {}", e),
        })?;
        if doc.schema != SCHEMA {
            return Err(crate::error::Error::Parse {
                line: 0,
                col: 0,
                msg: format!("unsupported schema `{}`", doc.schema),
            });
        }
        Ok(doc)
    }
}
