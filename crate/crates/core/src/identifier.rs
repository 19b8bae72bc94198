//! Material identifiers taken from root-section titles.
//!
//! Three levels are recognised: a database material id (`MP-1`), a
//! composition (`Fe2O3`) and a chemical space (`Fe*O*`). A chemical space
//! contains every composition built from exactly its elements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

pub fn is_element(symbol: &str) -> bool {
    ELEMENTS.contains(&symbol)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaterialId {
    MpId { id: u64 },
    Composition { elements: BTreeMap<String, u32> },
    ChemicalSpace { elements: BTreeSet<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentifierError {
    #[error("UnknownElement: '{0}' is not a chemical element")]
    UnknownElement(String),
    #[error("MalformedIdentifier: '{0}' is neither a material id nor a formula")]
    MalformedIdentifier(String),
    #[error("MixedWildcard: '{0}' mixes wildcard and explicit counts")]
    MixedWildcard(String),
}

impl IdentifierError {
    pub fn code(&self) -> &'static str {
        match self {
            IdentifierError::UnknownElement(_) => "UnknownElement",
            IdentifierError::MalformedIdentifier(_) => "MalformedIdentifier",
            IdentifierError::MixedWildcard(_) => "MixedWildcard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Count {
    Implicit,
    Explicit(u32),
    Wildcard,
}

fn parse_mp_id(title: &str) -> Option<Result<MaterialId, IdentifierError>> {
    let prefix = title.get(..3)?;
    if !prefix.eq_ignore_ascii_case("mp-") {
        return None;
    }
    let digits = &title[3..];
    let malformed = || IdentifierError::MalformedIdentifier(title.to_string());
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Some(Err(malformed()));
    }
    Some(match digits.parse::<u64>() {
        Ok(id) if id > 0 => Ok(MaterialId::MpId { id }),
        _ => Err(malformed()),
    })
}

fn tokenize_formula(title: &str) -> Result<Vec<(String, Count)>, IdentifierError> {
    let malformed = || IdentifierError::MalformedIdentifier(title.to_string());
    let bytes = title.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_uppercase() {
            return Err(malformed());
        }
        let mut end = i + 1;
        if end < bytes.len() && bytes[end].is_ascii_lowercase() {
            end += 1;
        }
        let symbol = &title[i..end];
        i = end;
        let count = if i < bytes.len() && bytes[i] == b'*' {
            i += 1;
            Count::Wildcard
        } else {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if start == i {
                Count::Implicit
            } else {
                match title[start..i].parse::<u32>() {
                    Ok(n) if n > 0 => Count::Explicit(n),
                    _ => return Err(malformed()),
                }
            }
        };
        if !is_element(symbol) {
            return Err(IdentifierError::UnknownElement(symbol.to_string()));
        }
        tokens.push((symbol.to_string(), count));
    }
    if tokens.is_empty() {
        return Err(malformed());
    }
    Ok(tokens)
}

/// Classifies a root-section title.
pub fn classify(title: &str) -> Result<MaterialId, IdentifierError> {
    let title = title.trim();
    if let Some(mp) = parse_mp_id(title) {
        return mp;
    }
    let tokens = tokenize_formula(title)?;
    let wildcards = tokens.iter().filter(|(_, c)| *c == Count::Wildcard).count();
    if wildcards == tokens.len() {
        return Ok(MaterialId::ChemicalSpace {
            elements: tokens.into_iter().map(|(s, _)| s).collect(),
        });
    }
    if wildcards > 0 {
        return Err(IdentifierError::MixedWildcard(title.to_string()));
    }
    let mut elements = BTreeMap::new();
    for (symbol, count) in tokens {
        let n = match count {
            Count::Explicit(n) => n,
            _ => 1,
        };
        *elements.entry(symbol).or_insert(0) += n;
    }
    Ok(MaterialId::Composition { elements })
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn render_formula<'a>(counts: impl Iterator<Item = (&'a String, u32)>) -> String {
    let mut out = String::new();
    for (symbol, n) in counts {
        out.push_str(symbol);
        if n != 1 {
            out.push_str(&n.to_string());
        }
    }
    out
}

impl MaterialId {
    /// Stable grouping key. Compositions are reduced by the gcd of their
    /// counts, so `Fe2O4` and `FeO2` share a key.
    pub fn canonical_key(&self) -> String {
        match self {
            MaterialId::MpId { id } => format!("mp-{id}"),
            MaterialId::Composition { elements } => {
                let divisor = elements.values().copied().fold(0, gcd).max(1);
                render_formula(elements.iter().map(|(s, n)| (s, n / divisor)))
            }
            MaterialId::ChemicalSpace { elements } => elements
                .iter()
                .map(|s| format!("{s}*"))
                .collect::<Vec<_>>()
                .join("-"),
        }
    }

    pub fn element_set(&self) -> Option<BTreeSet<&str>> {
        match self {
            MaterialId::MpId { .. } => None,
            MaterialId::Composition { elements } => {
                Some(elements.keys().map(String::as_str).collect())
            }
            MaterialId::ChemicalSpace { elements } => {
                Some(elements.iter().map(String::as_str).collect())
            }
        }
    }

    /// The chemical space spanned by a composition's elements.
    pub fn space_of(&self) -> Option<MaterialId> {
        match self {
            MaterialId::Composition { elements } => Some(MaterialId::ChemicalSpace {
                elements: elements.keys().cloned().collect(),
            }),
            _ => None,
        }
    }
}

/// Renders a title that [`classify`] maps back to an id with the same key.
impl fmt::Display for MaterialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaterialId::MpId { id } => write!(f, "MP-{id}"),
            MaterialId::Composition { elements } => {
                f.write_str(&render_formula(elements.iter().map(|(s, n)| (s, *n))))
            }
            MaterialId::ChemicalSpace { elements } => {
                for s in elements {
                    write!(f, "{s}*")?;
                }
                Ok(())
            }
        }
    }
}

/// True iff `space` is a chemical space and `comp` a composition over
/// exactly the same elements.
pub fn contains(space: &MaterialId, comp: &MaterialId) -> bool {
    match (space, comp) {
        (MaterialId::ChemicalSpace { .. }, MaterialId::Composition { .. }) => {
            space.element_set() == comp.element_set()
        }
        _ => false,
    }
}
