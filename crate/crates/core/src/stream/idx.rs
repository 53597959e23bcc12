//! IDX binary files: `0x00 0x00 <type> <ndims>`, big-endian u32 dims, then
//! row-major data. Images may be unsigned bytes (rescaled by 1/255) or
//! doubles already in `[0, 1]`; labels are unsigned bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

const TYPE_U8: u8 = 0x08;
const TYPE_F64: u8 = 0x0E;

fn header(buf: &[u8], what: &str) -> Result<(u8, Vec<usize>, usize)> {
    if buf.len() < 4 || buf[0] != 0 || buf[1] != 0 {
        return Err(Error::Format(format!("{what}: bad IDX magic")));
    }
    let ty = buf[2];
    let nd = buf[3] as usize;
    let start = 4 + 4 * nd;
    if buf.len() < start {
        return Err(Error::Format(format!("{what}: truncated IDX header")));
    }
    let dims = (0..nd)
        .map(|i| u32::from_be_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    Ok((ty, dims, start))
}

/// Loads an image/label IDX pair and splits it with `seed`.
pub fn load_idx(images: &Path, labels: &Path, n_classes: usize, seed: u64) -> Result<Dataset> {
    let ib = fs::read(images)?;
    let lb = fs::read(labels)?;
    let (ity, idims, istart) = header(&ib, "images")?;
    let (lty, ldims, lstart) = header(&lb, "labels")?;
    if idims.is_empty() || lty != TYPE_U8 || ldims.len() != 1 {
        return Err(Error::Format("expected N x ... images and N byte labels".into()));
    }
    let n = idims[0];
    let d: usize = idims[1..].iter().product::<usize>().max(1);
    if ldims[0] != n {
        return Err(Error::Format(format!("{n} images but {} labels", ldims[0])));
    }
    let values: Vec<f64> = match ity {
        TYPE_U8 => ib[istart..].iter().map(|&b| f64::from(b) / 255.0).collect(),
        TYPE_F64 => ib[istart..]
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect(),
        t => return Err(Error::Format(format!("unsupported IDX type 0x{t:02x}"))),
    };
    if values.len() != n * d || lb.len() - lstart != n {
        return Err(Error::Format("IDX payload length does not match header".into()));
    }
    let labels = lb[lstart..].iter().map(|&b| usize::from(b)).collect();
    Dataset::from_parts(Matrix::new(n, d, values)?, labels, n_classes, seed)
}

/// Writes features as doubles and labels as bytes.
pub fn save_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    if ds.n_classes > 256 {
        return Err(Error::InvalidArgument("IDX labels hold at most 256 classes".into()));
    }
    let n = ds.len() as u32;
    let mut ib = vec![0, 0, TYPE_F64, 2];
    ib.extend_from_slice(&n.to_be_bytes());
    ib.extend_from_slice(&(ds.dim() as u32).to_be_bytes());
    for v in ds.features.as_slice() {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    let mut lb = vec![0, 0, TYPE_U8, 1];
    lb.extend_from_slice(&n.to_be_bytes());
    lb.extend(ds.labels.iter().map(|&y| y as u8));
    for (path, bytes) in [(images, ib), (labels, lb)] {
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    Ok(())
}
