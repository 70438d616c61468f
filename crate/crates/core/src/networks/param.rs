use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::NetworkError;

const MAGIC: &[u8; 4] = b"NNPH";
const VERSION: u32 = 1;

/// Named contiguous block of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub len: usize,
}

/// Flat parameter storage with a named layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self, NetworkError> {
        let total: usize = layout.iter().map(|s| s.len).sum();
        if total != values.len() {
            return Err(NetworkError::Dimension {
                what: "parameter layout",
                expected: total,
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    /// A vector with a single anonymous segment.
    pub fn from_values(values: Vec<f64>) -> Self {
        let layout = vec![Segment {
            name: "values".into(),
            len: values.len(),
        }];
        ParamVector { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let mut off = 0;
        for s in &self.layout {
            if s.name == name {
                return Some(&self.values[off..off + s.len]);
            }
            off += s.len;
        }
        None
    }

    /// Header (`NNPH`, version u32, length u64) followed by little-endian doubles.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), NetworkError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the binary format; the layout comes back as a single segment.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, NetworkError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(NetworkError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(NetworkError::Format(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NetworkError::Format("trailing bytes after payload".into()));
        }
        Ok(ParamVector::from_values(values))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }

    /// Same values under another layout of equal total length.
    pub fn with_layout(self, layout: Vec<Segment>) -> Result<Self, NetworkError> {
        ParamVector::new(self.values, layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let p = ParamVector::from_values(vec![1.5, -0.0, f64::MAX, 1e-300]);
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8);
        assert_eq!(&buf[..4], b"NNPH");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 1.5);
        let back = ParamVector::read_binary(&buf[..]).unwrap();
        assert_eq!(back.values(), p.values());
        assert!(back.values()[1].is_sign_negative());
    }

    #[test]
    fn rejects_corrupt_input() {
        let p = ParamVector::from_values(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(ParamVector::read_binary(&bad[..]).is_err());
        assert!(ParamVector::read_binary(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(ParamVector::read_binary(&buf[..]).is_err());
    }

    #[test]
    fn layout_must_cover_values() {
        let seg = |name: &str, len| Segment { name: name.into(), len };
        assert!(ParamVector::new(vec![0.0; 3], vec![seg("w", 2)]).is_err());
        let p = ParamVector::new(vec![1.0, 2.0, 3.0], vec![seg("w", 2), seg("b", 1)]).unwrap();
        assert_eq!(p.segment("b"), Some(&[3.0][..]));
        assert_eq!(p.segment("x"), None);
    }
}
