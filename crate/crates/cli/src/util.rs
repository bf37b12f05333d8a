//! Error/exit-code plumbing, checked input loading, and atomic output.

use crowdtrack::types::{Detection, FlowField};
use crowdtrack::{io as ctio, Error};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

/// Exit code 2: missing/unreadable input. Exit code 3: validation/config.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(msg: impl Display) -> Self {
        CliError {
            code: 2,
            message: msg.to_string(),
        }
    }

    pub fn config(msg: impl Display) -> Self {
        CliError {
            code: 3,
            message: msg.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => CliError::input(e),
            _ => CliError::config(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

/// Write through a temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::input(format!("cannot move output into {}: {e}", path.display())))?;
    Ok(())
}

/// Echo the effective configuration next to an output file, for provenance.
pub fn echo_config(out_path: &Path, text: &str) -> CliResult<()> {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    atomic_write(&out_path.with_file_name(name), text.as_bytes())
}

/// Detections file plus its embedding sidecar, aligned row by row.
pub fn load_detections_with_embeddings(
    det_path: &Path,
    emb_path: &Path,
) -> CliResult<Vec<Detection>> {
    let dets = ctio::parse_mot_detections(&read_text(det_path)?)?;
    let (_, rows) = ctio::read_embeddings(&read_bytes(emb_path)?)?;
    if rows.len() != dets.len() {
        return Err(CliError::config(format!(
            "{} has {} embeddings but {} has {} detections",
            emb_path.display(),
            rows.len(),
            det_path.display(),
            dets.len()
        )));
    }
    dets.into_iter()
        .zip(rows)
        .map(|(d, e)| d.with_embedding(e).map_err(CliError::from))
        .collect()
}

pub fn group_by_frame(dets: Vec<Detection>) -> BTreeMap<i64, Vec<Detection>> {
    let mut map: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        map.entry(d.frame).or_default().push(d);
    }
    map
}

pub fn flow_file_name(from: i64, to: i64) -> String {
    format!("{from:06}_{to:06}.flo")
}

/// Parse a `WxH` size argument.
pub fn parse_wh(raw: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = raw.split('x').collect();
    if parts.len() != 2 {
        return Err(CliError::config(format!(
            "size must look like <width>x<height>, got '{raw}'"
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| CliError::config(format!("bad size component '{s}': {e}")))
    };
    Ok((num(parts[0])?, num(parts[1])?))
}

/// Lazily loaded directory of `.flo` files named `<from>_<to>.flo`.
pub struct FlowDir {
    dir: PathBuf,
    cache: BTreeMap<(i64, i64), FlowField>,
}

impl FlowDir {
    pub fn new(dir: PathBuf) -> Self {
        FlowDir {
            dir,
            cache: BTreeMap::new(),
        }
    }

    pub fn get(&mut self, from: i64, to: i64) -> CliResult<&FlowField> {
        if !self.cache.contains_key(&(from, to)) {
            let path = self.dir.join(flow_file_name(from, to));
            let field = ctio::read_flo(&read_bytes(&path)?)?;
            self.cache.insert((from, to), field);
        }
        Ok(&self.cache[&(from, to)])
    }
}
