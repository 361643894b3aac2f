use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Everything needed to rerun the command that produced an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PathBuf,
    pub command: String,
    /// Arguments after the program name, replayable as given.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(config: &Path, command: &str, args: &[String]) -> Self {
        RunManifest {
            config: config.to_path_buf(),
            command: command.to_string(),
            args: args.to_vec(),
            seed: None,
            strategy: None,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes one copy of the manifest next to each output.
    pub fn write_beside_outputs(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)? + "\n";
        for out in &self.outputs {
            fs::write(Self::path_for(out), &text)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            RunManifest::path_for(Path::new("out/tr.csv")),
            PathBuf::from("out/tr.csv.manifest.json")
        );
    }
}
