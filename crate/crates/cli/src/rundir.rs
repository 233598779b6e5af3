use std::fs;
use std::path::{Path, PathBuf};

use analogy_core::config::RunConfig;
use analogy_core::{Error, Result};

/// A fresh `<out>/<timestamp>-<command>[-name]` directory holding the
/// echoed config.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, command: &str, name: Option<&str>) -> Result<RunDir> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let mut base = format!("{stamp}-{command}");
        if let Some(n) = name {
            base.push('-');
            base.push_str(n);
        }
        fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        let mut path = cfg.out.join(&base);
        let mut i = 1;
        while path.exists() {
            path = cfg.out.join(format!("{base}-{i}"));
            i += 1;
        }
        fs::create_dir(&path).map_err(|e| Error::io(&path, e))?;
        let dir = RunDir { path };
        dir.write("config.txt", cfg.to_text().as_bytes())?;
        log::info!("run directory {}", dir.path.display());
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.file(name);
        write_file(&p, bytes)?;
        Ok(p)
    }

    /// Create `name` and hand a buffered writer to `f`.
    pub fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> Result<PathBuf> {
        let p = self.file(name);
        let file = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w)
            .and_then(|_| std::io::Write::flush(&mut w))
            .map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
