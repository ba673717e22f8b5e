//! Binary shard index format.
//!
//! All integers little-endian:
//!
//! ```text
//! "FPIX"  u32 version
//! u64 × 257        c_table
//! u32              checkpoint_interval
//! u64              checkpoint count K
//! u32 × (K × 256)  checkpoint blocks
//! u64              bwt length L
//! u64              sentinel row
//! u8 × L           bwt payload
//! [u8; 32]         SHA-256 of every preceding byte
//! ```

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BwtIndex, IndexError};

pub const MAGIC: &[u8; 4] = b"FPIX";
pub const FORMAT_VERSION: u32 = 1;

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

/// Writes `index` to `path` atomically and returns the hex payload checksum.
pub fn serialize_index(index: &BwtIndex, path: &Path) -> Result<String, IndexError> {
    let tmp = path.with_extension("tmp");
    let checksum = write_to(index, &tmp).map_err(|e| IndexError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IndexError::io(path, e))?;
    Ok(checksum)
}

fn write_to(index: &BwtIndex, path: &Path) -> io::Result<String> {
    let file = File::create(path)?;
    let mut w = HashingWriter {
        inner: BufWriter::with_capacity(1 << 20, file),
        hasher: Sha256::new(),
    };
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for c in index.c_table.iter() {
        w.write_all(&c.to_le_bytes())?;
    }
    w.write_all(&(index.checkpoint_interval as u32).to_le_bytes())?;
    w.write_all(&((index.checkpoints.len() / 256) as u64).to_le_bytes())?;
    let mut block = Vec::with_capacity(256 * 4);
    for chunk in index.checkpoints.chunks(256) {
        block.clear();
        for v in chunk {
            block.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&block)?;
    }
    w.write_all(&(index.bwt.len() as u64).to_le_bytes())?;
    w.write_all(&index.sentinel_pos.to_le_bytes())?;
    w.write_all(&index.bwt)?;
    let digest = w.hasher.finalize();
    let mut inner = w.inner;
    inner.write_all(&digest)?;
    inner.flush()?;
    inner.get_ref().sync_all()?;
    Ok(hex::encode(digest))
}

/// Reads an index written by [`serialize_index`], verifying its checksum.
pub fn deserialize_index(path: &Path) -> Result<BwtIndex, IndexError> {
    deserialize_with_checksum(path).map(|(idx, _)| idx)
}

pub(crate) fn deserialize_with_checksum(path: &Path) -> Result<(BwtIndex, String), IndexError> {
    let file = File::open(path).map_err(|e| IndexError::io(path, e))?;
    let mut r = HashingReader {
        inner: BufReader::with_capacity(1 << 20, file),
        hasher: Sha256::new(),
    };
    let corrupt = |reason: &str| IndexError::CorruptPayload {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let map_read = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            corrupt("truncated file")
        } else {
            IndexError::io(path, e)
        }
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(map_read)?;
    if &magic != MAGIC {
        return Err(IndexError::BadMagic(path.to_path_buf()));
    }
    let version = read_u32(&mut r).map_err(map_read)?;
    if version != FORMAT_VERSION {
        return Err(IndexError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut c_table = [0u64; 257];
    for c in c_table.iter_mut() {
        *c = read_u64(&mut r).map_err(map_read)?;
    }
    let interval = read_u32(&mut r).map_err(map_read)? as usize;
    let n_checkpoints = read_u64(&mut r).map_err(map_read)? as usize;
    let bwt_len = c_table[256] as usize;
    if interval == 0 || bwt_len == 0 || n_checkpoints != bwt_len.div_ceil(interval) + 1 {
        return Err(corrupt("inconsistent header"));
    }
    let mut checkpoints = vec![0u32; n_checkpoints * 256];
    let mut block = vec![0u8; 256 * 4];
    for chunk in checkpoints.chunks_mut(256) {
        r.read_exact(&mut block).map_err(map_read)?;
        for (v, b) in chunk.iter_mut().zip(block.chunks_exact(4)) {
            *v = u32::from_le_bytes(b.try_into().unwrap());
        }
    }
    let stored_len = read_u64(&mut r).map_err(map_read)? as usize;
    let sentinel_pos = read_u64(&mut r).map_err(map_read)?;
    if stored_len != bwt_len || sentinel_pos as usize >= bwt_len {
        return Err(corrupt("inconsistent header"));
    }
    let mut bwt = vec![0u8; bwt_len];
    r.read_exact(&mut bwt).map_err(map_read)?;

    let digest = r.hasher.finalize();
    let mut stored = [0u8; 32];
    r.inner.read_exact(&mut stored).map_err(map_read)?;
    if digest.as_slice() != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| IndexError::io(path, e))? != 0 {
        return Err(corrupt("trailing bytes"));
    }

    Ok((
        BwtIndex {
            bwt,
            sentinel_pos,
            c_table,
            checkpoint_interval: interval,
            checkpoints,
        },
        hex::encode(stored),
    ))
}

/// Reads only the trailing checksum of an index file.
pub(crate) fn stored_checksum(path: &Path) -> io::Result<String> {
    use std::io::{Seek, SeekFrom};
    let mut f = File::open(path)?;
    f.seek(SeekFrom::End(-32))?;
    let mut buf = [0u8; 32];
    f.read_exact(&mut buf)?;
    Ok(hex::encode(buf))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
