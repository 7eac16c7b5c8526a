use std::fs::File;
use std::path::Path;

use crate::Failure;

/// Floats with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    w: csv::Writer<File>,
    path: String,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, Failure> {
        let io = |e: csv::Error| Failure::Config(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        Ok(Self {
            w,
            path: path.display().to_string(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), Failure>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w
            .write_record(fields)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", self.path)))
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.w
            .flush()
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", self.path)))
    }
}
