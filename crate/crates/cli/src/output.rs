use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use kmem::report::{to_csv, to_jsonl, Format};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Csv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => Format::Table,
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

/// Where command output goes: stdout or a file.
pub struct Sink {
    pub format: FormatArg,
    path: Option<PathBuf>,
    buf: String,
}

impl Sink {
    pub fn new(format: FormatArg, path: Option<PathBuf>) -> Self {
        Sink {
            format,
            path,
            buf: String::new(),
        }
    }

    pub fn push(&mut self, text: &str) {
        self.buf.push_str(text);
        if !text.ends_with('\n') {
            self.buf.push('\n');
        }
    }

    /// Records as CSV or JSON lines; in table mode `table` renders them.
    pub fn records<T: Serialize>(&mut self, records: &[T], table: impl FnOnce(&[T]) -> String) -> Result<()> {
        let text = match self.format {
            FormatArg::Table => table(records),
            FormatArg::Csv => to_csv(records)?,
            FormatArg::Jsonl => to_jsonl(records)?,
        };
        self.push(&text);
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        match self.path {
            Some(p) => std::fs::write(&p, self.buf).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(self.buf.as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    }
}

/// Writes side data (traces, curves) as CSV, or JSON lines when the path
/// ends in `.jsonl`.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e == "jsonl") {
        to_jsonl(records)?
    } else {
        to_csv(records)?
    };
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Aligned plain-text columns for summary records.
pub fn columns(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(header.to_vec())];
    for row in rows {
        out.push(line(row.iter().map(String::as_str).collect()));
    }
    out.join("\n")
}
