//! Binary serialization for tensors and named-tensor archives.
//!
//! Tensor file layout (all integers little-endian):
//!   magic `TSR1` (4 bytes) | rank u64 | extents rank*u64 | payload f64s
//!
//! Archive layout:
//!   magic `TSA1` (4 bytes) | count u64 | count entries of
//!   (name_len u64 | name utf-8 | tensor record as above)
//!
//! Archives keep entries sorted by name so identical parameter sets
//! serialize to identical bytes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const TENSOR_MAGIC: &[u8; 4] = b"TSR1";
const ARCHIVE_MAGIC: &[u8; 4] = b"TSA1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let rank = read_u64(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::new(shape, data)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_tensor(&mut f, t)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut f = std::fs::File::open(path)?;
    read_tensor(&mut f)
}

/// Named-tensor archive; the checkpoint format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names whose tensors differ (or exist on only one side).
    pub fn diff_names(&self, other: &Archive) -> Vec<String> {
        let mut out = Vec::new();
        for (name, t) in &self.entries {
            match other.entries.get(name) {
                Some(o) if o == t => {}
                _ => out.push(name.clone()),
            }
        }
        for name in other.entries.keys() {
            if !self.entries.contains_key(name) {
                out.push(name.clone());
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(ARCHIVE_MAGIC)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Archive> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Format("bad archive magic".into()));
        }
        let count = read_u64(r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            if name_len > 4096 {
                return Err(Error::Format(format!("implausible name length {name_len}")));
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Format("entry name is not utf-8".into()))?;
            entries.insert(name, read_tensor(r)?);
        }
        Ok(Archive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write(&mut f)
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let mut f = std::fs::File::open(path)?;
        Archive::read(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn tensor_roundtrip() {
        let mut rng = Rng::new(1);
        let t = Tensor::randn(&[3, 2, 4], &mut rng, 1.0);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        // header: magic + rank + 3 extents, then payload
        assert_eq!(buf.len(), 4 + 8 + 3 * 8 + 24 * 8);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn archive_roundtrip_and_diff() {
        let mut rng = Rng::new(2);
        let mut a = Archive::new();
        a.insert("w1", Tensor::randn(&[2, 2], &mut rng, 1.0));
        a.insert("w2", Tensor::randn(&[3], &mut rng, 1.0));
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let back = Archive::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, a);

        let mut b = back.clone();
        b.insert("w2", Tensor::zeros(&[3]));
        assert_eq!(a.diff_names(&b), vec!["w2".to_string()]);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"XXXX\0\0\0\0\0\0\0\0".to_vec();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
        assert!(Archive::read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn archive_bytes_are_deterministic() {
        let mut rng = Rng::new(3);
        let t = Tensor::randn(&[4], &mut rng, 1.0);
        let mut a = Archive::new();
        a.insert("z", t.clone());
        a.insert("a", Tensor::zeros(&[1]));
        let mut buf1 = Vec::new();
        a.write(&mut buf1).unwrap();
        let mut b = Archive::new();
        b.insert("a", Tensor::zeros(&[1]));
        b.insert("z", t);
        let mut buf2 = Vec::new();
        b.write(&mut buf2).unwrap();
        assert_eq!(buf1, buf2);
    }
}
