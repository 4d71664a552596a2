//! Binary archive container shared by feature, auxiliary-feature, score and
//! waveform files. Fixed little-endian layout so archives are bit-exact
//! across platforms:
//!
//! ```text
//! magic    8 bytes  "FEATARC1"
//! version  u32
//! kind     u16 length + utf-8 bytes
//! count    u64 records
//! record:
//!   id       u16 length + utf-8 bytes
//!   n_maps   u32   (0 marks a flat auxiliary record)
//!   frames   u32
//!   dims     u32
//!   data     max(n_maps,1)*frames*dims f64
//!   aux flag u8; if 1: u32 length + f64 values
//!   lab flag u8; if 1: u32 count + u32 values
//! ```

use crate::error::{Error, Result};
use crate::frontend::UtteranceFeatures;
use crate::tensor::Tensor;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"FEATARC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    /// 0 marks a flat auxiliary record (frames x dims matrix, no map axis).
    pub n_maps: u32,
    pub frames: u32,
    pub dims: u32,
    pub data: Vec<f64>,
    pub aux: Option<Vec<f64>>,
    pub labels: Option<Vec<u32>>,
}

impl Record {
    pub fn expected_len(&self) -> usize {
        self.n_maps.max(1) as usize * self.frames as usize * self.dims as usize
    }

    pub fn from_features(f: &UtteranceFeatures) -> Record {
        Record {
            id: f.id.clone(),
            n_maps: f.n_maps() as u32,
            frames: f.frames() as u32,
            dims: f.dims() as u32,
            data: f.maps.data().to_vec(),
            aux: f.aux.clone(),
            labels: f.frame_labels.clone(),
        }
    }

    pub fn to_features(&self) -> Result<UtteranceFeatures> {
        if self.n_maps == 0 {
            return Err(Error::Data(format!(
                "record {} is a flat auxiliary record, not a feature stack",
                self.id
            )));
        }
        Ok(UtteranceFeatures {
            id: self.id.clone(),
            maps: Tensor::new(
                vec![self.n_maps as usize, self.frames as usize, self.dims as usize],
                self.data.clone(),
            )?,
            aux: self.aux.clone(),
            frame_labels: self.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub records: Vec<Record>,
}

impl Archive {
    pub fn new(kind: impl Into<String>) -> Self {
        Archive {
            kind: kind.into(),
            records: Vec::new(),
        }
    }

    pub fn find(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Archive::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str16(w, &self.kind)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for rec in &self.records {
            if rec.data.len() != rec.expected_len() {
                return Err(Error::Data(format!(
                    "record {}: {} values for {}x{}x{}",
                    rec.id,
                    rec.data.len(),
                    rec.n_maps,
                    rec.frames,
                    rec.dims
                )));
            }
            write_str16(w, &rec.id)?;
            w.write_all(&rec.n_maps.to_le_bytes())?;
            w.write_all(&rec.frames.to_le_bytes())?;
            w.write_all(&rec.dims.to_le_bytes())?;
            for &v in &rec.data {
                w.write_all(&v.to_le_bytes())?;
            }
            match &rec.aux {
                Some(aux) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(aux.len() as u32).to_le_bytes())?;
                    for &v in aux {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                None => w.write_all(&[0u8])?,
            }
            match &rec.labels {
                Some(labels) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(labels.len() as u32).to_le_bytes())?;
                    for &v in labels {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                None => w.write_all(&[0u8])?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Archive> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad archive magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported archive version {version}")));
        }
        let kind = read_str16(r)?;
        let count = read_u64(r)?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = read_str16(r)?;
            let n_maps = read_u32(r)?;
            let frames = read_u32(r)?;
            let dims = read_u32(r)?;
            let len = n_maps.max(1) as usize * frames as usize * dims as usize;
            let mut data = vec![0.0; len];
            for v in data.iter_mut() {
                *v = read_f64(r)?;
            }
            let aux = if read_u8(r)? == 1 {
                let n = read_u32(r)? as usize;
                let mut a = vec![0.0; n];
                for v in a.iter_mut() {
                    *v = read_f64(r)?;
                }
                Some(a)
            } else {
                None
            };
            let labels = if read_u8(r)? == 1 {
                let n = read_u32(r)? as usize;
                let mut l = vec![0u32; n];
                for v in l.iter_mut() {
                    *v = read_u32(r)?;
                }
                Some(l)
            } else {
                None
            };
            records.push(Record {
                id,
                n_maps,
                frames,
                dims,
                data,
                aux,
                labels,
            });
        }
        Ok(Archive { kind, records })
    }

    /// Serialized byte image; used by the round-trip checks.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

fn write_str16<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Data(format!("string too long: {} bytes", bytes.len())));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_str16<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid utf-8 in archive string".into()))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_archive() -> Archive {
        Archive {
            kind: "fbank".into(),
            records: vec![
                Record {
                    id: "utt-a".into(),
                    n_maps: 1,
                    frames: 3,
                    dims: 2,
                    data: vec![1.0, -2.0, 0.5, 0.25, -0.125, 3.5],
                    aux: Some(vec![9.0, 8.0]),
                    labels: Some(vec![0, 1, 1]),
                },
                Record {
                    id: "utt-b".into(),
                    n_maps: 0,
                    frames: 1,
                    dims: 4,
                    data: vec![0.1, 0.2, 0.3, 0.4],
                    aux: None,
                    labels: None,
                },
            ],
        }
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let arc = sample_archive();
        let bytes = arc.to_bytes().unwrap();
        let back = Archive::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, arc);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample_archive().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Archive::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rejects_inconsistent_record() {
        let mut arc = sample_archive();
        arc.records[0].data.pop();
        assert!(arc.to_bytes().is_err());
    }
}
