//! CSV / JSON emission with a reproducibility comment line.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Shortest round-trip decimal form; deterministic for equal inputs.
pub fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{}", v)
    }
}

/// A rectangular result table plus the config line that produced it.
pub struct Table {
    command: String,
    config: String,
    seed: u64,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(command: &str, config: &str, seed: u64, columns: Vec<&'static str>) -> Self {
        Table {
            command: command.to_string(),
            config: config.to_string(),
            seed,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.config.as_bytes());
        h.update(self.seed.to_le_bytes());
        let digest = h.finalize();
        digest[..6].iter().map(|b| format!("{:02x}", b)).collect()
    }

    pub fn write(
        &self,
        format: &OutputFormat,
        out: Option<&Path>,
    ) -> Result<(), super::CliError> {
        let text = match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        };
        match out {
            None => {
                print!("{}", text);
                Ok(())
            }
            Some(path) => {
                let mut f = std::fs::File::create(path).map_err(|e| {
                    super::CliError::config(format!("cannot write {}: {}", path.display(), e))
                })?;
                f.write_all(text.as_bytes()).map_err(|e| {
                    super::CliError::config(format!("cannot write {}: {}", path.display(), e))
                })
            }
        }
    }

    fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# rdcache v{} command={} config_hash={} seed={}\n",
            TOOL_VERSION,
            self.command,
            self.config_hash(),
            self.seed
        ));
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row.iter())
                    .map(|(c, v)| {
                        let val = if let Ok(x) = v.parse::<f64>() {
                            serde_json::json!(x)
                        } else if let Ok(b) = v.parse::<bool>() {
                            serde_json::json!(b)
                        } else {
                            serde_json::json!(v)
                        };
                        (c.to_string(), val)
                    })
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({
            "tool": format!("rdcache v{}", TOOL_VERSION),
            "command": self.command,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "rows": rows,
        });
        format!("{}\n", serde_json::to_string_pretty(&doc).unwrap())
    }
}
