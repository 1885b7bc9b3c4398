//! Generation dumps written by the extractor.
//!
//! Line-delimited JSON. An optional first line without an `id` carries
//! dump-wide metadata; every other line holds the generations of one input.
//! Token sequences and cluster ids are inline, output hidden states live in
//! a `CLH1` matrix with one row per generation:
//!
//! ```text
//! {"temperature": 0.7}
//! {"id": "q1", "lohs": "lohs/0.clh1", "generations": [{"logprobs": [-0.1], "entropies": [0.4], "cluster": 0}]}
//! ```

use std::path::Path;

use adequa_core::baseline::{Generation, GenerationDump};
use serde::{Deserialize, Serialize};

use crate::clh;
use crate::error::{read_to_string, write_atomic, Error, Result};
use crate::manifest::{content_lines, parse_line};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lohs: Option<String>,
    generations: Vec<Generation>,
}

pub fn read_dump(path: &Path) -> Result<GenerationDump> {
    let text = read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut dump = GenerationDump::default();
    for (n, (line, l)) in content_lines(&text).enumerate() {
        let value: serde_json::Value = parse_line(path, line, l)?;
        if value.get("id").is_none() {
            if n != 0 {
                let msg = "metadata line must come first".to_string();
                return Err(Error::Line { path: path.to_owned(), line, msg });
            }
            let h: DumpHeader = parse_line(path, line, l)?;
            dump.temperature = h.temperature;
            continue;
        }
        let mut d: DumpLine = parse_line(path, line, l)?;
        if let Some(name) = &d.lohs {
            let m = clh::read_matrix(&dir.join(name))?;
            if m.rows() != d.generations.len() {
                let msg = format!("{name} has {} rows for {} generations", m.rows(), d.generations.len());
                return Err(Error::Line { path: path.to_owned(), line, msg });
            }
            for (g, row) in d.generations.iter_mut().zip(m.iter_rows()) {
                g.lohs = Some(row.to_vec());
            }
        }
        if dump.inputs.insert(d.id.clone(), d.generations).is_some() {
            let msg = format!("duplicate id {:?}", d.id);
            return Err(Error::Line { path: path.to_owned(), line, msg });
        }
    }
    dump.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(dump)
}

/// Writes the dump next to one `lohs/<n>.clh1` matrix per input that has
/// output hidden states. Inputs must carry LOHS on all generations or none.
pub fn write_dump(dump: &GenerationDump, path: &Path) -> Result<()> {
    dump.validate()?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    if dump.temperature.is_some() {
        out.push_str(&serde_json::to_string(&DumpHeader { temperature: dump.temperature }).expect("plain data"));
        out.push('\n');
    }
    for (n, (id, gens)) in dump.inputs.iter().enumerate() {
        let with = gens.iter().filter(|g| g.lohs.is_some()).count();
        let lohs = if with == 0 {
            None
        } else if with == gens.len() {
            let rows: Vec<&[f64]> = gens.iter().map(|g| g.lohs.as_deref().unwrap()).collect();
            let name = format!("lohs/{n}.clh1");
            clh::write_matrix(&adequa_core::VectorSet::from_rows(&rows)?, &dir.join(&name))?;
            Some(name)
        } else {
            return Err(Error::format(path, format!("input {id:?}: LOHS missing on some generations")));
        };
        let generations = gens.iter().map(|g| Generation { lohs: None, ..g.clone() }).collect();
        let line = DumpLine { id: id.clone(), lohs, generations };
        out.push_str(&serde_json::to_string(&line).expect("plain data"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
