//! Reader for the IDX files MNIST ships in.
//!
//! Images: big-endian magic `0x00000803`, count, rows, cols, then raw `u8`
//! pixels. Labels: magic `0x00000801`, count, then one `u8` per sample.
//! Pixels are scaled to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use super::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const DATA_DIR_ENV: &str = "FLC_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn read_u32<R: Read>(reader: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("truncated IDX header: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads at most `limit` images.
pub fn read_images<R: Read>(mut reader: R, limit: Option<usize>) -> Result<IdxImages> {
    let magic = read_u32(&mut reader)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(&mut reader)? as usize;
    let rows = read_u32(&mut reader)? as usize;
    let cols = read_u32(&mut reader)? as usize;
    let take = limit.map_or(count, |l| l.min(count));
    let mut pixels = vec![0u8; take * rows * cols];
    reader
        .read_exact(&mut pixels)
        .map_err(|e| Error::Data(format!("truncated image data: {e}")))?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_labels<R: Read>(mut reader: R, limit: Option<usize>) -> Result<Vec<u8>> {
    let magic = read_u32(&mut reader)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(&mut reader)? as usize;
    let take = limit.map_or(count, |l| l.min(count));
    let mut labels = vec![0u8; take];
    reader
        .read_exact(&mut labels)
        .map_err(|e| Error::Data(format!("truncated label data: {e}")))?;
    Ok(labels)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn to_dataset(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.count(),
            labels.len()
        )));
    }
    let x = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let y = labels.iter().map(|&l| l as usize).collect();
    Dataset::new(images.rows * images.cols, 10, x, y)
}

/// Loads `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte`.
pub fn load_split(dir: &Path, prefix: &str, limit: Option<usize>) -> Result<Dataset> {
    let images = read_images(open(&dir.join(format!("{prefix}-images-idx3-ubyte")))?, limit)?;
    let labels = read_labels(open(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?, limit)?;
    to_dataset(&images, &labels)
}

/// Explicit path, else `$FLC_DATA_DIR/mnist`, else `data/mnist`.
pub fn resolve_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) => PathBuf::from(root).join("mnist"),
        None => PathBuf::from("data/mnist"),
    }
}
