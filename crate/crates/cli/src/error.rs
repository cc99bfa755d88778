use std::fmt;

use tkre_core::config::ConfigError;
use tkre_core::corpus::CorpusError;
use tkre_core::evalkit::EvalError;
use tkre_core::genkit::GenError;
use tkre_core::pipeline::PipelineError;
use tkre_core::trainloop::TrainError;

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }

    pub fn io(context: impl fmt::Display, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(format!("config error: {e}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::data(format!("data error: {e}"))
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        let code = match e {
            GenError::Transport { .. } | GenError::Protocol(_) => EXIT_BACKEND,
            GenError::Config(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        CliError::new(code, format!("generation error: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFinite { .. } => EXIT_NUMERIC,
            TrainError::Config(_) | TrainError::Mask(_) => EXIT_CONFIG,
            TrainError::Io(_) => EXIT_IO,
            _ => EXIT_DATA,
        };
        CliError::new(code, format!("training error: {e}"))
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::data(format!("evaluation error: {e}"))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(e) => e.into(),
            PipelineError::Data(e) => e.into(),
            PipelineError::Generation(e) => e.into(),
            PipelineError::Train(e) => e.into(),
            PipelineError::Eval(e) => e.into(),
        }
    }
}
