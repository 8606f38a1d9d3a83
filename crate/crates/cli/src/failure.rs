use latent_chain::Error;

pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_GUARD: i32 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(EXIT_PARSE, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(EXIT_VALIDATION, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(EXIT_NUMERIC, message)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Parse(_) => EXIT_PARSE,
        Error::Invalid(_) | Error::Dimension(_) | Error::KindMismatch(_) => EXIT_VALIDATION,
        Error::Io(_) => EXIT_IO,
        Error::Guard(_) => EXIT_GUARD,
        _ => EXIT_NUMERIC,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}
