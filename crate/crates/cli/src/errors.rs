//! Error wrapper of the command-line layer with stable classes and exit
//! codes: 0 success, 2 configuration error, 3 numeric or integration
//! failure, 4 internal (I/O and similar).

use hypoflow::Error;

#[derive(Debug)]
pub enum CliError {
    /// A problem with flags or the config file, before any computation.
    Config {
        class: &'static str,
        message: String,
    },
    /// A failure propagated from the toolkit.
    Core(Error),
}

impl CliError {
    pub fn semantic(message: String) -> Self {
        CliError::Config {
            class: "config.semantic",
            message,
        }
    }

    pub fn parse(err: toml::de::Error) -> Self {
        CliError::Config {
            class: "config.parse",
            message: err.to_string(),
        }
    }

    pub fn internal(message: String) -> Self {
        CliError::Config {
            class: "internal",
            message,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config { message, .. } => message.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config { class, .. } => class,
            CliError::Core(e) => e.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { class, .. } if *class == "internal" => 4,
            CliError::Config { .. } => 2,
            CliError::Core(e) => match e.class() {
                c if c.starts_with("input.") || c.starts_with("parse.") => 2,
                "io" => 4,
                _ => 3,
            },
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.class(), self.message())
    }
}
