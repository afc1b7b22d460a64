//! Little-endian helpers shared by the binary file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and checks a 4-byte magic tag followed by a u32 version.
pub(crate) fn read_preamble<R: Read>(r: &mut R, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)
        .map_err(|_| Error::MalformedHeader("truncated magic".into()))?;
    if &tag != magic {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&tag),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedHeader("truncated version".into()))?;
    if found != version {
        return Err(Error::MalformedHeader(format!("unsupported version {found}")));
    }
    Ok(())
}

pub(crate) fn write_preamble<W: Write + ?Sized>(w: &mut W, magic: &[u8; 4], version: u32) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(version)
}

pub(crate) fn u32_of<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    r.read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedRecord(format!("truncated {what}")))
}

pub(crate) fn f64_of<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    r.read_f64::<LittleEndian>()
        .map_err(|_| Error::MalformedRecord(format!("truncated {what}")))
}

pub(crate) fn f64s_of<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)
        .map_err(|_| Error::MalformedRecord(format!("truncated {what}")))?;
    Ok(out)
}

pub(crate) fn put_f64s<W: Write + ?Sized>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::MalformedRecord("trailing bytes".into())),
        Err(e) => Err(Error::MalformedRecord(e.to_string())),
    }
}
