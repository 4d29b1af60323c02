use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit status: 2 for configuration errors, 3 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

impl From<shelab_core::Error> for HarnessError {
    fn from(e: shelab_core::Error) -> Self {
        use shelab_core::Error as E;
        match e {
            E::Numeric { .. } | E::Overflow { .. } | E::Singularity => HarnessError::Runtime(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
