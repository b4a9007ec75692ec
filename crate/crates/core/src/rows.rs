//! Append-only CSV row logs used by the resumable sweeps.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Reads every complete row of `path`; a missing file yields no rows.
///
/// A trailing line without a newline is the remnant of an interrupted write;
/// it is cut off so that the next append starts on a fresh line.
pub(crate) fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, csv::Error> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut text = Vec::new();
    file.read_to_end(&mut text)?;
    let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        file.set_len(complete as u64)?;
        text.truncate(complete);
    }
    csv::Reader::from_reader(text.as_slice()).deserialize().collect()
}

/// Appends one row, writing the header first when the file is new or empty.
/// The row is written with a single `write_all` and flushed.
pub(crate) fn append_row<T: Serialize>(path: &Path, row: &T) -> Result<(), csv::Error> {
    let mut file: File = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.seek(SeekFrom::End(0))? == 0;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(Vec::new());
    w.serialize(row)?;
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    file.write_all(&bytes)?;
    file.sync_data()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        k: usize,
        v: f64,
    }

    #[test]
    fn append_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.csv");
        assert!(read_rows::<Row>(&p).unwrap().is_empty());
        append_row(&p, &Row { k: 1, v: 0.05 }).unwrap();
        append_row(&p, &Row { k: 2, v: 1.5 }).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "k,v\n1,0.05\n2,1.5\n");
        let rows: Vec<Row> = read_rows(&p).unwrap();
        assert_eq!(rows, vec![Row { k: 1, v: 0.05 }, Row { k: 2, v: 1.5 }]);
    }

    #[test]
    fn torn_last_line_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.csv");
        std::fs::write(&p, "k,v\n1,0.5\n2,0.").unwrap();
        let rows: Vec<Row> = read_rows(&p).unwrap();
        assert_eq!(rows, vec![Row { k: 1, v: 0.5 }]);
        append_row(&p, &Row { k: 2, v: 0.25 }).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "k,v\n1,0.5\n2,0.25\n");
    }
}
