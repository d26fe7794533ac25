//! Raw little-endian matrix files.
//!
//! 16-byte header `[u32 magic][u32 rows][u32 cols][u32 element code]`
//! followed by the column-major payload, all little-endian. Element codes
//! are those of [`ElemType`](crate::transport::ElemType).

use crate::error::{Error, Result};
use crate::transport::Element;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: u32 = u32::from_le_bytes(*b"PWM1");
/// Serialize in bounded slabs so large matrices don't double in memory.
const CHUNK_ELEMS: usize = 1 << 16;

pub fn write_matrix<T: Element>(path: &Path, rows: usize, cols: usize, data: &[T]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::LengthMismatch {
            what: "matrix file payload",
            expected: rows * cols,
            got: data.len(),
        });
    }
    let rows32 = u32::try_from(rows)
        .map_err(|_| Error::InvalidArgument(format!("matrix rows {rows} exceed file format")))?;
    let cols32 = u32::try_from(cols)
        .map_err(|_| Error::InvalidArgument(format!("matrix cols {cols} exceed file format")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC.to_le_bytes())?;
    w.write_all(&rows32.to_le_bytes())?;
    w.write_all(&cols32.to_le_bytes())?;
    w.write_all(&T::ELEM.code().to_le_bytes())?;
    let mut chunk = Vec::with_capacity(CHUNK_ELEMS * T::ELEM.size_bytes());
    for slab in data.chunks(CHUNK_ELEMS) {
        chunk.clear();
        T::append_le(slab, &mut chunk);
        w.write_all(&chunk)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<T: Element + Default>(path: &Path) -> Result<(usize, usize, Vec<T>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != MAGIC {
        return Err(Error::FileFormat(format!(
            "{}: bad magic {:#010x}",
            path.display(),
            word(0)
        )));
    }
    let rows = word(1) as usize;
    let cols = word(2) as usize;
    let code = word(3);
    if code != T::ELEM.code() {
        return Err(Error::FileFormat(format!(
            "{}: element code {code} where {} was expected",
            path.display(),
            T::ELEM.code()
        )));
    }
    let elem = T::ELEM.size_bytes();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != rows * cols * elem {
        return Err(Error::FileFormat(format!(
            "{}: payload is {} bytes, header implies {}",
            path.display(),
            payload.len(),
            rows * cols * elem
        )));
    }
    let mut out = vec![T::default(); rows * cols];
    T::decode_le(&payload, &mut out);
    Ok((rows, cols, out))
}
