use thiserror::Error;

/// Why an expression could not be parsed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable x{index} at byte {pos} is out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
}

/// A mathematically undefined sub-expression was hit during evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in {op} at argument {arg}{}", component_suffix(*.component))]
pub struct DomainError {
    pub op: &'static str,
    pub arg: f64,
    pub component: Option<usize>,
}

fn component_suffix(c: Option<usize>) -> String {
    match c {
        Some(i) => format!(" (component {})", i + 1),
        None => String::new(),
    }
}

impl DomainError {
    pub fn in_component(mut self, i: usize) -> Self {
        self.component.get_or_insert(i);
        self
    }
}

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("in component {component}: {source}")]
    Parse {
        component: usize,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown builtin example `{0}`")]
    UnknownExample(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
