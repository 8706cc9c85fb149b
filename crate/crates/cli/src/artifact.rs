use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

/// Files produced by a run. Nothing touches the disk until [`Artifacts::write`].
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Envelope<'a, C, R> {
    config: &'a C,
    seed: u64,
    #[serde(flatten)]
    result: R,
}

impl Artifacts {
    /// `{"config": ..., "seed": ..., <fields of result>}`, pretty-printed.
    pub fn json<C: Serialize, R: Serialize>(&mut self, name: &str, config: &C, seed: u64, result: R) {
        let body =
            serde_json::to_string_pretty(&Envelope { config, seed, result }).expect("artifact types serialize to JSON");
        self.files.push((name.to_string(), body + "\n"));
    }

    pub fn csv(&mut self, name: &str, table: Csv) {
        self.files.push((name.to_string(), table.body));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// CSV with `# key: value` comment lines ahead of the header.
pub struct Csv {
    body: String,
}

impl Csv {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Self {
        let mut csv = Csv { body: String::new() };
        csv.comment("config", &serde_json::to_string(config).expect("config serializes to JSON"));
        csv.comment("seed", &seed.to_string());
        csv
    }

    pub fn comment(&mut self, key: &str, value: &str) {
        let _ = writeln!(self.body, "# {key}: {value}");
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let line: Vec<String> = cells.into_iter().map(|s| s.as_ref().to_string()).collect();
        self.body.push_str(&line.join(","));
        self.body.push('\n');
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
