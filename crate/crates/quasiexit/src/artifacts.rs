//! Output files. Every CSV starts with a `# config: <json>` comment line and
//! every JSON summary embeds the config under `"config"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub struct ArtifactWriter {
    dir: PathBuf,
    config_compact: String,
    config_value: serde_json::Value,
    written: Vec<PathBuf>,
}

/// Shortest round-trip form; scientific notation outside `[1e-6, 1e16)`.
pub fn fmt_f64(v: f64) -> String {
    let m = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-6..1e16).contains(&m) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a serde_json::Value,
    result: &'a T,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, config: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_compact: config.to_json_compact(),
            config_value: serde_json::to_value(config).expect("config serializes"),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write_config(&mut self, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
        let path = self.dir.join("config.json");
        let mut text = config.to_json_pretty();
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let env = Envelope {
            config: &self.config_value,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<PathBuf, CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        buf.extend_from_slice(b"# config: ");
        buf.extend_from_slice(self.config_compact.as_bytes());
        buf.push(b'\n');
        {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
        }
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }
}

/// Column names `prefix0, prefix1, …` for a `d`-vector.
pub fn coord_columns(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

/// Reads a CSV artifact, skipping the config comment.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PresetName;

    #[test]
    fn csv_carries_config_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(PresetName::DoubleWell1d, 0.1);
        let mut w = ArtifactWriter::new(dir.path(), &cfg).unwrap();
        let p = w
            .write_csv("t.csv", &["a".into(), "b".into()], vec![vec![fmt_f64(0.1), fmt_f64(1e-20)]])
            .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config: {\"preset\":\"double_well_1d\""));
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.1);
        assert_eq!(rows[0][1], "1e-20");
    }
}
