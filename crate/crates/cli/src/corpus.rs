//! Corpus loading: a task file, a directory of task files, a JSONL file of
//! tasks, or a manifest listing task file paths.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use stepvis::context::CaptionRecord;
use stepvis::task::{parse_task, ManualTask};

use crate::error::{CliError, CliResult};

pub fn load_corpus(path: &Path) -> CliResult<Vec<ManualTask>> {
    let tasks = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::data(path.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files.iter().map(|f| load_task(f)).collect::<CliResult<Vec<_>>>()?
    } else {
        match path.extension().and_then(|x| x.to_str()) {
            Some("json") => vec![load_task(path)?],
            Some("jsonl") => {
                let text = read_text(path)?;
                text.lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty())
                    .map(|(n, l)| {
                        parse_task(l.as_bytes()).map_err(|e| CliError::data(format!("{}:{}", path.display(), n + 1), e))
                    })
                    .collect::<CliResult<Vec<_>>>()?
            }
            _ => {
                let base = path.parent().unwrap_or(Path::new("."));
                read_text(path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| load_task(&base.join(l)))
                    .collect::<CliResult<Vec<_>>>()?
            }
        }
    };
    let mut seen = BTreeSet::new();
    for t in &tasks {
        if t.id.is_empty() || t.id.starts_with('.') || t.id.contains(['/', '\\']) {
            return Err(CliError::Data(format!("task id `{}` cannot be used as a directory name", t.id)));
        }
        if !seen.insert(t.id.as_str()) {
            return Err(CliError::Data(format!("duplicate task id `{}` in {}", t.id, path.display())));
        }
    }
    Ok(tasks)
}

fn load_task(path: &Path) -> CliResult<ManualTask> {
    let raw = fs::read(path).map_err(|e| CliError::data(path.display(), e))?;
    parse_task(&raw).map_err(|e| CliError::data(path.display(), e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn load_captions(path: &Path) -> CliResult<Vec<CaptionRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("{}:{}", path.display(), n + 1), e)))
        .collect()
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).map_err(|e| CliError::data(path.display(), e))?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::data(path.display(), e))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))?;
    }
    stepvis::generator::write_atomic(path, bytes).map_err(|e| CliError::data(path.display(), e))
}
