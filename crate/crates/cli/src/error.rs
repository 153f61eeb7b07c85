use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Location {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub key: Option<String>,
}

impl Location {
    pub fn at(line: usize, column: usize, key: Option<&str>) -> Self {
        Self {
            line: Some(line),
            column: Some(column),
            key: key.map(str::to_string),
        }
    }

    pub fn key(key: &str) -> Self {
        Self {
            line: None,
            column: None,
            key: Some(key.to_string()),
        }
    }
}

/// Error object written to stderr as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub location: Option<Location>,
}

impl CliError {
    pub fn config(message: impl Into<String>, location: Option<Location>) -> Self {
        Self {
            code: "config".into(),
            message: message.into(),
            location,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: "io".into(),
            message: message.into(),
            location: None,
        }
    }

    pub fn from_core(e: fbsvi::Error, location: Option<Location>) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
            location,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<fbsvi::Error> for CliError {
    fn from(e: fbsvi::Error) -> Self {
        Self::from_core(e, None)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}
