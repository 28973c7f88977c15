use crate::C64;
use thiserror::Error;

/// Which part of the exceptional set blocked an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    BetaZero,
    GammaZero,
    QuotientSpectrum,
    Pole,
}

impl std::fmt::Display for SingularKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SingularKind::BetaZero => "beta_zero",
            SingularKind::GammaZero => "gamma_zero",
            SingularKind::QuotientSpectrum => "quotient_spectrum",
            SingularKind::Pole => "pole",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum OcsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("coupling block is not rank one (second/first singular value = {ratio:.3e})")]
    NotOneChannel { ratio: f64 },
    #[error("{} vertices unreachable from the seed set", vertices.len())]
    DanglingComponent { vertices: Vec<usize> },
    #[error("z = {z} lies within the guard of eigenvalue {eigenvalue} of shell {shell}")]
    ZTooCloseToSpectrum { z: C64, eigenvalue: f64, shell: i64 },
    #[error("transfer matrix of shell {shell} undefined at z = {z} ({kind})")]
    ChannelSingular { shell: i64, kind: SingularKind, z: C64 },
    #[error("holomorphic extension at {lambda} on shell {shell} did not converge (spread {spread:.3e})")]
    ExtensionDiverged { shell: i64, lambda: f64, spread: f64 },
    #[error("{lambda} is not an exceptional energy of shell {shell}")]
    NotSingularHere { shell: i64, lambda: f64 },
    #[error("boundary data not colinear for shells {l}..{m} at {lambda} (cross {cross:.3e})")]
    ColinearityFailed { l: i64, m: i64, lambda: f64, cross: f64 },
    #[error("dense linear algebra failed: {0}")]
    DenseFailure(String),
    #[error("energy {lambda} lies inside the disorder support hull")]
    SupportViolation { lambda: f64 },
    #[error("energy {lambda} outside the domain of the limit formulas")]
    DomainViolation { lambda: f64 },
    #[error("energy {lambda} violates the non-degeneracy condition (witness diagonal {witness:?})")]
    I0Violation { lambda: f64, witness: Vec<f64> },
    #[error("shell denominator {value:.3e} too close to zero")]
    DenominatorBlowup { value: f64 },
    #[error("matrix with trace {trace} is not elliptic")]
    NotElliptic { trace: f64 },
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl OcsError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        OcsError::Config { path: path.into(), msg: msg.into() }
    }

    /// True for failures caused by an evaluation point sitting on or near an
    /// exceptional set rather than by bad input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            OcsError::ZTooCloseToSpectrum { .. }
                | OcsError::ChannelSingular { .. }
                | OcsError::ExtensionDiverged { .. }
                | OcsError::DenseFailure(_)
                | OcsError::DenominatorBlowup { .. }
                | OcsError::NotElliptic { .. }
                | OcsError::SupportViolation { .. }
                | OcsError::DomainViolation { .. }
                | OcsError::I0Violation { .. }
                | OcsError::ColinearityFailed { .. }
                | OcsError::NotSingularHere { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, OcsError>;
