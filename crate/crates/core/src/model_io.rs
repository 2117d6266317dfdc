//! Versioned binary model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RDN1"                  magic
//! u16                     format version (1)
//! u32 n_places, d_in, d_hidden, k_votes, z_per_region
//! u32 grid_count, then grid_count × (u32 rows, u32 cols)
//! u64 master_seed
//! u32 epochs, f64 learning_rate
//! per classifier, group-major:
//!     u64 × d_hidden·ceil(d_in/64)   projection, column-major packed bits
//!     f32 × d_hidden·n_places        weights, row-major
//!     f32 × n_places                 bias
//! u32                     CRC-32 of every preceding byte
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::drosonet::{DrosoNet, DrosoNetConfig, Readout, SparseProjection};
use crate::ensemble::{member_seed, Ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::image::INPUT_LEN;
use crate::partition::{GridSpec, PartitionPlan};

pub const MAGIC: &[u8; 4] = b"RDN1";
pub const VERSION: u16 = 1;

struct CrcWriter<W> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    crc: crc32fast::Hasher,
}

impl<R: Read> Read for CrcReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }
}

pub fn save(ensemble: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !ensemble.is_trained() {
        return Err(Error::State("refusing to save an untrained ensemble".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = CrcWriter {
        inner: BufWriter::new(file),
        crc: crc32fast::Hasher::new(),
    };
    write_body(ensemble, &mut w).map_err(|e| Error::io(path, e))?;
    let crc = w.crc.clone().finalize();
    let mut inner = w.inner;
    inner
        .write_all(&crc.to_le_bytes())
        .and_then(|_| inner.flush())
        .map_err(|e| Error::io(path, e))
}

fn u32_of(v: usize) -> io::Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds 32 bits"))
}

fn write_body(e: &Ensemble, w: &mut impl Write) -> io::Result<()> {
    let c = e.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [e.n_places(), INPUT_LEN, c.d_hidden, c.k_votes, c.z_per_region, c.grids.grids().len()] {
        w.write_all(&u32_of(v)?)?;
    }
    for g in c.grids.grids() {
        w.write_all(&u32_of(g.rows())?)?;
        w.write_all(&u32_of(g.cols())?)?;
    }
    w.write_all(&c.master_seed.to_le_bytes())?;
    w.write_all(&u32_of(c.epochs)?)?;
    w.write_all(&c.learning_rate.to_le_bytes())?;
    for net in e.groups().iter().flatten() {
        for word in net.projection().words() {
            w.write_all(&word.to_le_bytes())?;
        }
        for v in net.readout().weights().iter().chain(net.readout().bias()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = CrcReader {
        inner: BufReader::new(file),
        crc: crc32fast::Hasher::new(),
    };
    let ensemble = read_body(&mut r, file_len).map_err(|e| match e {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::UnexpectedEof => {
            Error::format(format!("{}: file is truncated", path.display()))
        }
        Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let computed = r.crc.clone().finalize();
    let mut stored = [0u8; 4];
    r.inner.read_exact(&mut stored).map_err(|_| {
        Error::format(format!("{}: file is truncated", path.display()))
    })?;
    if u32::from_le_bytes(stored) != computed {
        return Err(Error::format(format!("{}: checksum mismatch", path.display())));
    }
    Ok(ensemble)
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::io("", e))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io("", e))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn read_u64s(r: &mut impl Read, count: usize) -> Result<Vec<u64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::io("", e))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn read_body(r: &mut impl Read, file_len: u64) -> Result<Ensemble> {
    if &read_array::<4>(r)? != MAGIC {
        return Err(Error::format("not a model file (bad magic)"));
    }
    let version = u16::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(Error::format(format!("unsupported format version {version}")));
    }
    let n_places = read_u32(r)?;
    let d_in = read_u32(r)?;
    let d_hidden = read_u32(r)?;
    let k_votes = read_u32(r)?;
    let z_per_region = read_u32(r)?;
    let grid_count = read_u32(r)?;
    if d_in != INPUT_LEN {
        return Err(Error::format(format!("input dimension {d_in}, expected {INPUT_LEN}")));
    }
    if grid_count == 0 || grid_count > 4096 {
        return Err(Error::format(format!("implausible grid count {grid_count}")));
    }
    let grids = (0..grid_count)
        .map(|_| {
            let rows = read_u32(r)?;
            let cols = read_u32(r)?;
            GridSpec::new(rows, cols).map_err(|e| Error::format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let grids = PartitionPlan::new(grids)?;
    let master_seed = u64::from_le_bytes(read_array(r)?);
    let epochs = read_u32(r)?;
    let learning_rate = f64::from_le_bytes(read_array(r)?);

    let config = EnsembleConfig {
        grids,
        z_per_region,
        k_votes,
        d_hidden,
        epochs,
        learning_rate,
        master_seed,
    };
    config.validate().map_err(|e| Error::format(e.to_string()))?;
    if n_places == 0 {
        return Err(Error::format("model has zero places"));
    }

    // Check the declared sizes against the file before allocating anything.
    let header = 4 + 2 + 6 * 4 + 8 * grid_count as u64 + 8 + 4 + 8;
    let words = d_hidden as u64 * d_in.div_ceil(64) as u64;
    let per_net = words
        .checked_mul(8)
        .and_then(|h| (d_hidden as u64 * n_places as u64 + n_places as u64).checked_mul(4).map(|w| h + w));
    let expected = per_net
        .and_then(|p| p.checked_mul(config.total() as u64))
        .and_then(|b| b.checked_add(header + 4));
    match expected {
        Some(len) if len == file_len => {}
        Some(len) if len > file_len => return Err(Error::format("file is truncated")),
        _ => return Err(Error::format("file size does not match its header")),
    }

    let mut groups = Vec::with_capacity(config.region_count());
    for p in 0..config.region_count() {
        let mut group = Vec::with_capacity(z_per_region);
        for z in 0..z_per_region {
            let projection = SparseProjection::from_words(d_in, d_hidden, read_u64s(r, words as usize)?)?;
            let weights = read_f32s(r, d_hidden * n_places)?;
            let bias = read_f32s(r, n_places)?;
            let member = DrosoNetConfig {
                d_in,
                d_hidden,
                n_places,
                epochs,
                learning_rate,
                seed: member_seed(master_seed, p, z),
            };
            let readout = Readout::new(d_hidden, n_places, weights, bias);
            group.push(DrosoNet::from_parts(member, projection, readout)?);
        }
        groups.push(group);
    }
    Ok(Ensemble::from_parts(config, n_places, groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    fn trained_toy() -> (Ensemble, Vec<GrayImage>) {
        let refs: Vec<_> = (0..5)
            .map(|p| GrayImage::from_fn(40, 24, |x, y| ((x * (p + 2)) ^ (y * 3 + p * 11)) as u8).unwrap())
            .collect();
        let config = EnsembleConfig {
            grids: PartitionPlan::from_pairs(&[(1, 1), (1, 3)]).unwrap(),
            z_per_region: 1,
            k_votes: 3,
            d_hidden: 32,
            epochs: 10,
            learning_rate: 0.01,
            master_seed: 99,
        };
        let mut e = Ensemble::build(config, 5).unwrap();
        e.train_all(&refs).unwrap();
        (e, refs)
    }

    #[test]
    fn roundtrip_is_exact() {
        let (e, refs) = trained_toy();
        assert_eq!(e.total(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rdn");
        save(&e, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, e);
        for q in &refs {
            assert_eq!(back.infer(q).unwrap(), e.infer(q).unwrap());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (e, _) = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rdn");
        save(&e, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad = dir.path().join("bad.rdn");
        for offset in [0usize, 4, 6, 30, bytes.len() / 2, bytes.len() - 1] {
            let mut b = bytes.clone();
            b[offset] ^= 0x10;
            std::fs::write(&bad, &b).unwrap();
            assert!(matches!(load(&bad), Err(Error::Format(_))), "offset {offset}");
        }
        for len in [0usize, 3, 20, bytes.len() - 4, bytes.len() - 1] {
            std::fs::write(&bad, &bytes[..len]).unwrap();
            assert!(matches!(load(&bad), Err(Error::Format(_))), "truncated to {len}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        std::fs::write(&bad, &longer).unwrap();
        assert!(matches!(load(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn untrained_cannot_be_saved() {
        let e = Ensemble::build(EnsembleConfig::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(save(&e, dir.path().join("x")), Err(Error::State(_))));
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(load("/nonexistent/model.rdn"), Err(Error::Io { .. })));
    }
}
