//! Stage outputs are written into a hidden staging directory and moved into
//! place, together with a manifest, only when the stage succeeds.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path, label: String) -> io::Result<FileDigest> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest { path: label, bytes, sha256: hex::encode(hasher.finalize()) })
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct Staging {
    final_dir: PathBuf,
    dir: PathBuf,
    command: String,
    outputs: Vec<String>,
    inputs: Vec<(String, PathBuf)>,
    committed: bool,
}

impl Staging {
    pub fn begin(final_dir: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(final_dir)?;
        let dir = final_dir.join(format!(".staging-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir)?;
        Ok(Staging {
            final_dir: final_dir.to_path_buf(),
            dir,
            command: command.to_string(),
            outputs: Vec::new(),
            inputs: Vec::new(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Registers a file written directly into the staging directory.
    pub fn register(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.register(name);
        Ok(BufWriter::with_capacity(1 << 20, File::create(self.dir.join(name))?))
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> cdrscope_core::Result<()>,
    {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(cdrscope_core::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Records an input file under a label that does not depend on where the
    /// output directory lives.
    pub fn note_input(&mut self, label: impl Into<String>, path: &Path) {
        let label = label.into();
        if !self.inputs.iter().any(|(l, _)| *l == label) {
            self.inputs.push((label, path.to_path_buf()));
        }
    }

    pub fn commit(mut self, parameters: serde_json::Value) -> Result<Vec<FileDigest>, CliError> {
        let mut inputs = Vec::new();
        for (label, path) in &self.inputs {
            for file in cdrscope_core::ingest::input_files(path)? {
                let label = if file == *path {
                    label.clone()
                } else {
                    format!("{label}/{}", file.file_name().unwrap_or_default().to_string_lossy())
                };
                inputs.push(digest(&file, label)?);
            }
        }
        let mut outputs = Vec::new();
        for name in &self.outputs {
            outputs.push(digest(&self.dir.join(name), name.clone())?);
        }
        let manifest = Manifest {
            tool: "cdrscope",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            parameters,
            inputs,
            outputs: outputs.clone(),
        };
        let name = format!("manifest.{}.json", self.command);
        {
            let mut w = BufWriter::new(File::create(self.dir.join(&name))?);
            serde_json::to_writer_pretty(&mut w, &manifest).map_err(cdrscope_core::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        for file in self.outputs.iter().chain(std::iter::once(&name)) {
            fs::rename(self.dir.join(file), self.final_dir.join(file))?;
        }
        fs::remove_dir_all(&self.dir)?;
        self.committed = true;
        Ok(outputs)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
