//! JSON Lines dataset files: one `{"class": c, "samples": [...]}` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::Transient;

/// Serialise transients, one per line, LF-terminated.
pub fn write_jsonl<W: Write>(mut w: W, items: &[Transient]) -> Result<()> {
    for t in items {
        if let Some(x) = t.samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::Data(format!("item {} has non-finite sample {x}", t.id)));
        }
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse transients; ids are assigned from the line order starting at 0.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Transient>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut t: Transient = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        if t.samples.is_empty() {
            return Err(Error::Data(format!("line {}: empty samples", lineno + 1)));
        }
        t.id = out.len();
        out.push(t);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, items: &[Transient]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), items)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Transient>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_jsonl(BufReader::new(file))
}
