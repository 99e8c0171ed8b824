/// Stable machine-readable error code, shared by the service responses and
/// the CLI's error output.
pub trait Coded {
    fn code(&self) -> &'static str;
}
