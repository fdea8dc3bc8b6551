use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0} is not an odd prime at most {max}", max = crate::fl::MAX_MODULUS)]
    InvalidModulus(u32),
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("prime {p} is not congruent to 1 modulo {l}")]
    NotOneModL { p: u64, l: u32 },
    #[error("argument {q} is divisible by the conductor prime {p}")]
    NotCoprime { q: u64, p: u64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("instance too large: {0}")]
    SizeLimit(String),
    #[error("arithmetic overflow: {0}")]
    Overflow(String),
}
