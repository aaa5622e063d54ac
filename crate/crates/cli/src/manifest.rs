//! `manifest.ini`: the resolved configuration followed by an `[artifacts]`
//! section mapping each output file to its SHA-256.

use std::fs;
use std::path::Path;

use ini::Ini;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.ini";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn render(resolved_ini: &str, artifacts: &[(String, Vec<u8>)]) -> String {
    let mut s = resolved_ini.to_string();
    s.push_str("[artifacts]\n");
    for (name, bytes) in artifacts {
        s.push_str(&format!("{name} = {}\n", sha256_hex(bytes)));
    }
    s
}

/// Names of artifacts whose checksum does not match, with the reason.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verification {
    pub checked: usize,
    pub failures: Vec<(String, String)>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Recomputes every checksum listed in `dir/manifest.ini`.
pub fn verify(dir: &Path) -> Result<Verification, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let ini = Ini::load_from_file(&path).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
    let artifacts = ini
        .section(Some("artifacts"))
        .ok_or_else(|| CliError::Manifest("no [artifacts] section".into()))?;
    let mut out = Verification::default();
    for (name, expected) in artifacts.iter() {
        out.checked += 1;
        if name.contains('/') || name.contains('\\') || name == ".." {
            out.failures.push((name.to_string(), "not a plain file name".into()));
            continue;
        }
        match fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == expected.trim() => {}
            Ok(_) => out.failures.push((name.to_string(), "checksum differs".into())),
            Err(e) => out.failures.push((name.to_string(), e.to_string())),
        }
    }
    Ok(out)
}
