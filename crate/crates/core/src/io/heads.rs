use std::path::Path;

use super::binary::{read_json, write_json};
use crate::error::{Error, Result};
use crate::evaluation::{HeadSet, ReadoutHead};

pub fn save_head(path: &Path, head: &ReadoutHead) -> Result<()> {
    write_json(path, head)
}

pub fn load_head(path: &Path) -> Result<ReadoutHead> {
    read_json(path)
}

/// Every `*.json` head in `dir`; a later file for the same task replaces
/// an earlier one (name order).
pub fn load_heads(dir: &Path) -> Result<HeadSet> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut set = HeadSet::default();
    for f in files {
        set.insert(load_head(&f)?);
    }
    if set.is_empty() {
        return Err(Error::param(format!("no head files in {}", dir.display())));
    }
    Ok(set)
}
