//! `CMDS` dataset files. Header: magic, `u32` version, `u32` K, `u32` H, W,
//! C, C `f64` fill values, `u64` sample count. Per sample: `u32` label, `u8`
//! split tag, `f32` image (C*H*W, channel-major), ground-truth and
//! foreground bitsets (`ceil(H*W/8)` bytes each, LSB first), `u32`-prefixed
//! UTF-8 metadata. Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const DATASET_MAGIC: &[u8; 4] = b"CMDS";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode(&mut BufReader::new(File::open(path)?))
}

fn pack(mask: &Mask) -> Vec<u8> {
    let mut out = vec![0u8; mask.bits.len().div_ceil(8)];
    for (i, b) in mask.bits.iter().enumerate() {
        if *b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack(bytes: &[u8], h: usize, w: usize) -> Result<Mask> {
    Mask::new(h, w, (0..h * w).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

pub(crate) fn encode(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in [
        DATASET_VERSION,
        ds.classes as u32,
        ds.height as u32,
        ds.width as u32,
        ds.channels as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for q in &ds.fill {
        w.write_all(&q.to_le_bytes())?;
    }
    w.write_all(&(ds.samples.len() as u64).to_le_bytes())?;
    for s in &ds.samples {
        w.write_all(&(s.label as u32).to_le_bytes())?;
        w.write_all(&[s.split.tag()])?;
        for v in &s.image.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.write_all(&pack(&s.gt_mask))?;
        w.write_all(&pack(&s.fg_mask))?;
        w.write_all(&(s.meta.len() as u32).to_le_bytes())?;
        w.write_all(s.meta.as_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

pub(crate) fn decode(r: &mut impl Read) -> Result<Dataset> {
    if &read_array::<4>(r)? != DATASET_MAGIC {
        return Err(Error::Format("not a CMDS dataset".into()));
    }
    let version = read_u32(r)?;
    if version != DATASET_VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let (classes, height, width, channels) = (read_u32(r)?, read_u32(r)?, read_u32(r)?, read_u32(r)?);
    let fill = (0..channels)
        .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let count = u64::from_le_bytes(read_array(r)?) as usize;
    let plane = height * width;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; channels * plane * 4];
    let mut bits = vec![0u8; plane.div_ceil(8)];
    for _ in 0..count {
        let label = read_u32(r)?;
        let split = Split::from_tag(read_array::<1>(r)?[0])?;
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let image = Image::new(channels, height, width, data)?;
        r.read_exact(&mut bits)?;
        let gt_mask = unpack(&bits, height, width)?;
        r.read_exact(&mut bits)?;
        let fg_mask = unpack(&bits, height, width)?;
        let len = read_u32(r)?;
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        samples.push(Sample {
            image,
            label,
            split,
            gt_mask,
            fg_mask,
            meta,
        });
    }
    let generator = samples
        .first()
        .and_then(|s| s.meta_value("gen"))
        .unwrap_or("unknown")
        .to_string();
    let ds = Dataset {
        generator,
        classes,
        channels,
        height,
        width,
        fill,
        samples,
        backgrounds: Vec::new(),
    };
    ds.check()?;
    Ok(ds)
}
