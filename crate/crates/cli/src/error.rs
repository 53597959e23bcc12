use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{component} failed: {source}")]
    Runtime {
        component: &'static str,
        #[source]
        source: memdisc::Error,
    },
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime { .. } => 2,
            CliError::Check(_) => 3,
        }
    }
}

/// Tags a core error with the component that raised it. Configuration
/// errors from core validation keep their config classification.
pub fn in_component(component: &'static str) -> impl Fn(memdisc::Error) -> CliError {
    move |e| match e {
        memdisc::Error::Config(m) => CliError::Config(m),
        source => CliError::Runtime { component, source },
    }
}

pub fn io_error(component: &'static str) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::Runtime {
        component,
        source: memdisc::Error::Io(e),
    }
}
