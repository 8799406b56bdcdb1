use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::value::RawValue;
use wate_core::format::sig17;

/// Bad input or arguments; maps to exit code 2.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user_error(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

/// Exit code for a failed run: 2 for user errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<wate_core::Error>() {
            return if e.is_user_error() { 2 } else { 1 };
        }
    }
    1
}

/// A JSON number with 17 significant digits; `null` when not finite.
pub fn num(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() { sig17(x) } else { "null".into() };
    RawValue::from_string(text).expect("valid JSON number")
}

pub fn open_input(path: &Path) -> anyhow::Result<File> {
    File::open(path).map_err(|e| user_error(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| user_error(format!("cannot read {}: {e}", path.display())))
}

/// Buffered writer to a file, or to stdout when no path is given.
pub fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            anyhow::anyhow!("cannot write {}: {e}", p.display())
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
