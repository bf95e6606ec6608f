//! Field snapshot files: a one-line UTF-8 JSON header (axis metadata, name,
//! time stamp, payload byte offset) followed by raw little-endian 64-bit
//! floats in row-major layout. Round-trips are bit-exact.

use super::{Axis, Field, Grid};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

/// Header block of a snapshot file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub name: String,
    pub time: f64,
    pub axes: Vec<Axis>,
    /// Byte offset of the float payload from the start of the file.
    pub payload_offset: u64,
    /// Free-form application metadata (phase flags, restart bookkeeping).
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// Write `field` to `path`. `extra` travels in the header verbatim.
pub fn write_snapshot(
    path: &Path,
    field: &Field,
    name: &str,
    time: f64,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut meta = SnapshotMeta {
        name: name.to_string(),
        time,
        axes: field.grid().axes().to_vec(),
        payload_offset: 0,
        extra: extra.clone(),
    };
    // The offset is part of the header, so its digits feed back into the
    // header length; iterate to the fixed point.
    let mut header = String::new();
    for _ in 0..8 {
        header = serde_json::to_string(&meta)
            .map_err(|e| Error::Snapshot(format!("header encoding failed: {e}")))?;
        let offset = header.len() as u64 + 1; // +1 for the newline
        if offset == meta.payload_offset {
            break;
        }
        meta.payload_offset = offset;
    }
    if meta.payload_offset != header.len() as u64 + 1 {
        return Err(Error::Snapshot("header offset did not stabilize".into()));
    }

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    for &v in field.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<(Field, SnapshotMeta)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Snapshot("unexpected end of file in header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
        if header_bytes.len() > 1 << 20 {
            return Err(Error::Snapshot("header exceeds 1 MiB; corrupt file?".into()));
        }
    }
    let header = std::str::from_utf8(&header_bytes)
        .map_err(|e| Error::Snapshot(format!("header is not UTF-8: {e}")))?;
    let meta: SnapshotMeta = serde_json::from_str(header)
        .map_err(|e| Error::Snapshot(format!("header parse failed: {e}")))?;

    let grid = Grid::new(meta.axes.clone())?;
    let n = grid.len();
    r.seek(SeekFrom::Start(meta.payload_offset))?;
    let mut payload = vec![0u8; n * 8];
    r.read_exact(&mut payload).map_err(|e| {
        Error::Snapshot(format!("payload truncated (expected {} floats): {e}", n))
    })?;
    let mut field = Field::zeros(grid);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        field.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok((field, meta))
}
