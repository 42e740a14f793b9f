use longpref::annotation::AnnotationError;
use longpref::corpus::CorpusError;
use longpref::eval::EvalError;
use longpref::generation::GenerationError;
use longpref::judge::JudgeError;
use longpref::policy::PolicyError;
use longpref::reward::RewardError;
use longpref::store::StoreError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const TRANSIENT: u8 = 3;
    pub const DATA: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transient error: {0}")]
    Transient(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Transient(_) => exit::TRANSIENT,
            CliError::Data(_) => exit::DATA,
            CliError::Io(_) => exit::OTHER,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Io(e.to_string()),
            CorpusError::Template(_) | CorpusError::UnknownTask(_) | CorpusError::InfeasibleSplit { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Config(_) | GenerationError::Http { status: 401 | 403 | 404, .. } => {
                CliError::Config(e.to_string())
            }
            GenerationError::Cache(_) => CliError::Io(e.to_string()),
            _ => CliError::Transient(e.to_string()),
        }
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Config(m) => CliError::Config(m),
            JudgeError::Corpus(e) => e.into(),
            JudgeError::Generation(e) => e.into(),
            JudgeError::EmptyResponse(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Io(e.to_string()),
            StoreError::TakeTooLarge { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Config(_) | RewardError::Dimension { .. } => CliError::Config(e.to_string()),
            RewardError::Io { .. } => CliError::Io(e.to_string()),
            RewardError::Scorer { .. } => CliError::Transient(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(m) => CliError::Config(m),
            PolicyError::Reward(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Reward(e) => e.into(),
            EvalError::Judge(e) => e.into(),
            EvalError::AllGenerationsFailed { .. } => CliError::Transient(e.to_string()),
            EvalError::Invalid(m) => CliError::Config(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Config(m) => CliError::Config(m),
            AnnotationError::Io(_) => CliError::Io(e.to_string()),
            AnnotationError::Eval(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
