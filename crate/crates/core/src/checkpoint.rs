//! Parameter checkpoint container.
//!
//! Layout: the magic string `NMLGCL1`, then for each named array a 32-bit
//! little-endian name length, the UTF-8 name, 32-bit little-endian row and
//! column counts, and the row-major 64-bit little-endian float payload.
//! Arrays repeat until end of file.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::model::{EncoderParams, NmnParams, PairCombiner};
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"NMLGCL1";

pub fn write_arrays<W: Write>(mut w: W, arrays: &[(&str, &Tensor)]) -> Result<()> {
    let werr = |e| CoreError::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(werr)?;
    for (name, t) in arrays {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(bytes).map_err(werr)?;
        w.write_all(&(t.rows() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(&(t.cols() as u32).to_le_bytes()).map_err(werr)?;
        for v in t.values() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    Ok(())
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let rerr = |e| CoreError::Checkpoint(format!("read failed: {e}"));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("bad magic string".into()));
    }
    let mut arrays = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(rerr(e)),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(rerr)?;
        let name = String::from_utf8(name)
            .map_err(|e| CoreError::Checkpoint(format!("array name is not UTF-8: {e}")))?;
        r.read_exact(&mut len4).map_err(rerr)?;
        let rows = u32::from_le_bytes(len4) as usize;
        r.read_exact(&mut len4).map_err(rerr)?;
        let cols = u32::from_le_bytes(len4) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut f8 = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut f8).map_err(rerr)?;
            data.push(f64::from_le_bytes(f8));
        }
        arrays.push((name, Tensor::new(rows, cols, data)?));
    }
    Ok(arrays)
}

/// Serializes encoder (and, when present, metric network) weights.
pub fn checkpoint_bytes(encoder: &EncoderParams, nmn: Option<&NmnParams>) -> Result<Vec<u8>> {
    let flag = Tensor::scalar(if encoder.final_activation { 1.0 } else { 0.0 });
    let mut arrays: Vec<(&str, &Tensor)> = vec![
        ("encoder.w1", &encoder.w1),
        ("encoder.w2", &encoder.w2),
        ("encoder.final_activation", &flag),
    ];
    if let Some(n) = nmn {
        arrays.push(("nmn.l1", &n.l1));
        arrays.push(("nmn.b1", &n.b1));
        arrays.push(("nmn.l2", &n.l2));
        arrays.push(("nmn.b2", &n.b2));
        arrays.push(("nmn.l3", &n.l3));
        arrays.push(("nmn.b3", &n.b3));
    }
    let mut buf = Vec::new();
    write_arrays(&mut buf, &arrays)?;
    Ok(buf)
}

pub fn save_checkpoint(
    path: &Path,
    encoder: &EncoderParams,
    nmn: Option<&NmnParams>,
) -> Result<()> {
    let bytes = checkpoint_bytes(encoder, nmn)?;
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams, Option<NmnParams>)> {
    let file =
        std::fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let arrays = read_arrays(std::io::BufReader::new(file))?;
    decode_checkpoint(arrays)
}

pub fn decode_checkpoint(
    arrays: Vec<(String, Tensor)>,
) -> Result<(EncoderParams, Option<NmnParams>)> {
    let mut map: std::collections::BTreeMap<String, Tensor> = arrays.into_iter().collect();
    let has_nmn = map.keys().any(|k| k.starts_with("nmn."));
    let mut take = |name: &str| {
        map.remove(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing array {name}")))
    };
    let encoder = EncoderParams {
        w1: take("encoder.w1")?,
        w2: take("encoder.w2")?,
        final_activation: take("encoder.final_activation")?.item()? != 0.0,
    };
    let nmn = if has_nmn {
        Some(NmnParams {
            l1: take("nmn.l1")?,
            b1: take("nmn.b1")?,
            l2: take("nmn.l2")?,
            b2: take("nmn.b2")?,
            l3: take("nmn.l3")?,
            b3: take("nmn.b3")?,
            combiner: PairCombiner::Concat,
        })
    } else {
        None
    };
    Ok((encoder, nmn))
}
