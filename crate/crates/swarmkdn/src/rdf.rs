//! RDF terms, triples, and the fixed minimal ontology under the
//! `urn:swarm-net:` namespace.
//!
//! Every node is a minted IRI — no blank nodes — and every emitted
//! predicate and class belongs to the closed vocabulary in [`ontology`].

use std::fmt;
use std::sync::LazyLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RdfError {
    #[error("not an absolute IRI: {0:?}")]
    NotAbsolute(String),
    #[error("integer literal out of range: {0:?}")]
    BadInteger(String),
    #[error("empty id part")]
    EmptyId,
    #[error("cannot parse N-Triples line {line}: {msg}")]
    BadNtLine { line: usize, msg: String },
}

/// An absolute IRI (a scheme is required).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iri(String);

impl Iri {
    pub fn new(s: impl Into<String>) -> Result<Self, RdfError> {
        let s = s.into();
        let scheme_ok = s
            .split_once(':')
            .map(|(scheme, _)| {
                !scheme.is_empty()
                    && scheme.chars().next().unwrap().is_ascii_alphabetic()
                    && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
            })
            .unwrap_or(false);
        if !scheme_ok {
            return Err(RdfError::NotAbsolute(s));
        }
        Ok(Iri(s))
    }

    /// For vocabulary constants known to be valid at compile time.
    pub(crate) fn unchecked(s: &str) -> Self {
        Iri(s.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl AsRef<str> for Iri {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Datatype {
    String,
    Integer,
    Boolean,
}

/// A term: an IRI or a typed literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Iri(Iri),
    Literal { lexical: String, datatype: Datatype },
}

impl Term {
    pub fn iri(iri: Iri) -> Self {
        Term::Iri(iri)
    }

    pub fn str(s: impl Into<String>) -> Self {
        Term::Literal { lexical: s.into(), datatype: Datatype::String }
    }

    pub fn int(n: i64) -> Self {
        Term::Literal { lexical: n.to_string(), datatype: Datatype::Integer }
    }

    pub fn bool(b: bool) -> Self {
        Term::Literal { lexical: b.to_string(), datatype: Datatype::Boolean }
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(iri) => Some(iri),
            Term::Literal { .. } => None,
        }
    }

    /// Integer value when this is an Integer literal.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Term::Literal { lexical, datatype: Datatype::Integer } => lexical.parse().ok(),
            _ => None,
        }
    }

    pub fn as_lexical(&self) -> Option<&str> {
        match self {
            Term::Literal { lexical, .. } => Some(lexical),
            Term::Iri(_) => None,
        }
    }

    /// N-Triples serialization of the term; also the canonical sort key
    /// for result rows and exports.
    pub fn serialize(&self) -> String {
        match self {
            Term::Iri(iri) => format!("<{iri}>"),
            Term::Literal { lexical, datatype } => {
                let quoted = format!("\"{}\"", escape_literal(lexical));
                match datatype {
                    Datatype::String => quoted,
                    Datatype::Integer => format!("{quoted}^^<{XSD_INTEGER}>"),
                    Datatype::Boolean => format!("{quoted}^^<{XSD_BOOLEAN}>"),
                }
            }
        }
    }
}

pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
pub const XSD_BOOLEAN: &str = "http://www.w3.org/2001/XMLSchema#boolean";

fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_literal(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('"') => out.push('"'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            other => return Err(format!("bad escape \\{other:?}")),
        }
    }
    Ok(out)
}

/// One RDF statement. Subject and predicate are always IRIs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Iri, predicate: Iri, object: Term) -> Self {
        Triple { subject, predicate, object }
    }

    /// One N-Triples line, without the trailing newline.
    pub fn serialize(&self) -> String {
        format!("<{}> <{}> {} .", self.subject, self.predicate, self.object.serialize())
    }

    /// Parses one N-Triples line of the subset this crate emits.
    pub fn parse_line(line: &str, lineno: usize) -> Result<Triple, RdfError> {
        let bad = |msg: &str| RdfError::BadNtLine { line: lineno, msg: msg.to_string() };
        let line = line.trim();
        let rest = line.strip_suffix('.').ok_or_else(|| bad("missing trailing '.'"))?.trim_end();
        let (subject, rest) = parse_angle_iri(rest).ok_or_else(|| bad("bad subject"))?;
        let rest = rest.trim_start();
        let (predicate, rest) = parse_angle_iri(rest).ok_or_else(|| bad("bad predicate"))?;
        let rest = rest.trim_start();
        let (object, rest) = parse_object(rest).map_err(|m| bad(&m))?;
        if !rest.trim().is_empty() {
            return Err(bad("trailing content"));
        }
        Ok(Triple { subject, predicate, object })
    }
}

fn parse_angle_iri(s: &str) -> Option<(Iri, &str)> {
    let rest = s.strip_prefix('<')?;
    let end = rest.find('>')?;
    let iri = Iri::new(&rest[..end]).ok()?;
    Some((iri, &rest[end + 1..]))
}

fn parse_object(s: &str) -> Result<(Term, &str), String> {
    if s.starts_with('<') {
        let (iri, rest) = parse_angle_iri(s).ok_or("bad object IRI")?;
        return Ok((Term::Iri(iri), rest));
    }
    let rest = s.strip_prefix('"').ok_or("object must be an IRI or a literal")?;
    // Find the closing quote, skipping escaped characters.
    let mut end = None;
    let mut escaped = false;
    for (i, c) in rest.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == '"' {
            end = Some(i);
            break;
        }
    }
    let end = end.ok_or("unterminated literal")?;
    let lexical = unescape_literal(&rest[..end])?;
    let rest = &rest[end + 1..];
    if let Some(tagged) = rest.strip_prefix("^^") {
        let (dt, rest) = parse_angle_iri(tagged).ok_or("bad datatype IRI")?;
        let datatype = match dt.as_str() {
            XSD_INTEGER => Datatype::Integer,
            XSD_BOOLEAN => Datatype::Boolean,
            other => return Err(format!("unsupported datatype {other}")),
        };
        if datatype == Datatype::Integer && lexical.parse::<i64>().is_err() {
            return Err(format!("integer literal out of range: {lexical:?}"));
        }
        return Ok((Term::Literal { lexical, datatype }, rest));
    }
    Ok((Term::str(lexical), rest))
}

/// The closed vocabulary. Everything the rdfizer emits uses these IRIs.
pub mod ontology {
    use super::{Iri, LazyLock};

    /// Namespace bound to `sn:` in queries.
    pub const SN_PREFIX: &str = "urn:swarm-net:";
    /// Namespace bound to `rdf:` in queries.
    pub const RDF_PREFIX: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";

    macro_rules! vocab {
        ($($name:ident => $suffix:literal),+ $(,)?) => {
            $(pub static $name: LazyLock<Iri> =
                LazyLock::new(|| Iri::unchecked(concat!("urn:swarm-net:", $suffix)));)+
        };
    }

    vocab! {
        // classes
        CLASS_SWITCH => "Switch",
        CLASS_HOST => "Host",
        CLASS_LINK => "Link",
        CLASS_PORT => "Port",
        CLASS_SWARM_GROUP => "SwarmGroup",
        CLASS_FLOW_ENTRY => "FlowEntry",
        CLASS_INT_REPORT => "IntReport",
        CLASS_HOP => "Hop",
        // predicates
        HAS_ID => "hasId",
        MEMBER_OF => "memberOf",
        HAS_IP => "hasIp",
        HAS_MAC => "hasMac",
        ATTACHED_TO => "attachedTo",
        ATTACH_PORT => "attachPort",
        CONNECTS => "connects",
        LATENCY_US => "latencyUs",
        HOP_LATENCY_US => "hopLatencyUs",
        CPU_LOAD => "cpuLoad",
        LOC_X => "locX",
        LOC_Y => "locY",
        CAPABILITIES => "capabilities",
        ON_SWITCH => "onSwitch",
        TABLE => "table",
        PRIORITY => "priority",
        ACTION_KIND => "actionKind",
        ACTION_PORT => "actionPort",
        REPORTED_AT => "reportedAt",
        HOP_INDEX => "hopIndex",
        OBSERVED_SWITCH => "observedSwitch",
    }

    pub static RDF_TYPE: LazyLock<Iri> =
        LazyLock::new(|| Iri::unchecked("http://www.w3.org/1999/02/22-rdf-syntax-ns#type"));

    /// All classes, for vocabulary-closure checks.
    pub fn classes() -> Vec<&'static Iri> {
        vec![
            &CLASS_SWITCH,
            &CLASS_HOST,
            &CLASS_LINK,
            &CLASS_PORT,
            &CLASS_SWARM_GROUP,
            &CLASS_FLOW_ENTRY,
            &CLASS_INT_REPORT,
            &CLASS_HOP,
        ]
    }

    /// All predicates, for vocabulary-closure checks.
    pub fn predicates() -> Vec<&'static Iri> {
        vec![
            &HAS_ID,
            &MEMBER_OF,
            &HAS_IP,
            &HAS_MAC,
            &ATTACHED_TO,
            &ATTACH_PORT,
            &CONNECTS,
            &LATENCY_US,
            &HOP_LATENCY_US,
            &CPU_LOAD,
            &LOC_X,
            &LOC_Y,
            &CAPABILITIES,
            &ON_SWITCH,
            &TABLE,
            &PRIORITY,
            &ACTION_KIND,
            &ACTION_PORT,
            &REPORTED_AT,
            &HOP_INDEX,
            &OBSERVED_SWITCH,
            &RDF_TYPE,
        ]
    }

    /// Predicates with at-most-one value per subject; these are the only
    /// legal targets of a functional upsert.
    pub fn functional_predicates() -> Vec<&'static Iri> {
        vec![&CPU_LOAD, &LOC_X, &LOC_Y, &CAPABILITIES, &HAS_IP]
    }

    pub fn is_functional(p: &Iri) -> bool {
        functional_predicates().iter().any(|f| f.as_str() == p.as_str())
    }
}
