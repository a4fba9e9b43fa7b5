//! `CEV2` checkpoint files.
//!
//! Layout (little-endian): magic `CEV2`, version `u32`, entry count `u32`,
//! then per entry a `u16` name length, the UTF-8 name, four `u32` dims and
//! the `f64` payload. Trainability is not stored; names ending in
//! `running_mean` / `running_var` load as buffers.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CEV2";
pub const VERSION: u32 = 1;

pub fn is_buffer_name(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

pub fn to_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write(store, &mut out)?;
    Ok(out)
}

pub fn write<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    let count = u32::try_from(store.len())
        .map_err(|_| Error::Checkpoint("too many entries".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for e in store.entries() {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        for d in e.tensor.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in e.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read<R: Read>(mut r: R) -> Result<ParamStore> {
    let magic: [u8; 4] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| Error::Checkpoint(format!("entry {name:?}: {e}")))?;
        let trainable = !is_buffer_name(&name);
        store.add(name, tensor, trainable)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    read(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -0.5]).unwrap(), true)
            .unwrap();
        let bytes = to_bytes(&s).unwrap();
        assert_eq!(&bytes[..4], b"CEV2");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &1u16.to_le_bytes());
        assert_eq!(bytes[14], b'a');
        assert_eq!(&bytes[27..31], &2u32.to_le_bytes());
        assert_eq!(&bytes[31..39], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 1 + 16 + 16);
    }

    #[test]
    fn rejects_corruption() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::ones([1, 1, 1, 1]), true).unwrap();
        let bytes = to_bytes(&s).unwrap();
        assert!(read(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read(bad.as_slice()).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read(extra.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn byte_exact_round_trip(
            entries in prop::collection::vec(
                ("[a-z.]{1,12}", (1usize..3, 1usize..4, 1usize..3, 1usize..3), any::<u64>()),
                1..6,
            )
        ) {
            let mut s = ParamStore::new();
            for (k, (name, (n, c, h, w), bits)) in entries.into_iter().enumerate() {
                let len = n * c * h * w;
                let data = (0..len as u64).map(|i| f64::from_bits(bits.wrapping_add(i) >> 2)).collect();
                let t = Tensor::from_vec([n, c, h, w], data).unwrap();
                s.add(format!("{k}.{name}"), t, true).unwrap();
            }
            let bytes = to_bytes(&s).unwrap();
            let back = read(bytes.as_slice()).unwrap();
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }
}
