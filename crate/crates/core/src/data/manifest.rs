//! CSV manifest ingestion and export.
//!
//! Header: `image_path,patient_id,video_id,frame_index,view_label,ab_label,pe_label`.
//! Empty label cells mean "absent". Relative image paths resolve against the
//! manifest's directory. The image id of a row is the file stem of its path.

use std::fs;
use std::path::{Path, PathBuf};

use super::{preprocess, Dataset, Image, ImageRecord, Labels};
use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 7] = [
    "image_path",
    "patient_id",
    "video_id",
    "frame_index",
    "view_label",
    "ab_label",
    "pe_label",
];

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| Error::Manifest {
        row: 0,
        message: e.to_string(),
    })?;
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Manifest {
            row: 0,
            message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let malformed = |message: String| Error::Manifest {
            row: row_no,
            message,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(malformed(format!(
                "expected {} fields, found {}",
                MANIFEST_HEADER.len(),
                row.len()
            )));
        }
        let image_path = &row[0];
        if image_path.is_empty() || row[1].is_empty() || row[2].is_empty() {
            return Err(malformed(
                "image_path, patient_id and video_id are required".into(),
            ));
        }
        let frame_index: u32 = row[3]
            .parse()
            .map_err(|_| malformed(format!("bad frame_index `{}`", &row[3])))?;
        let labels = Labels {
            view: parse_label(&row[4]).map_err(&malformed)?,
            ab: parse_label(&row[5]).map_err(&malformed)?,
            pe: parse_label(&row[6]).map_err(&malformed)?,
        };

        let resolved = resolve(&base, image_path);
        let pixels = preprocess(&read_gray(&resolved)?)?;
        let image_id = Path::new(image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| image_path.to_string());
        records.push(ImageRecord::new(
            image_id,
            &row[1],
            &row[2],
            frame_index,
            pixels,
            labels,
        )?);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, records)
}

fn parse_label(cell: &str) -> std::result::Result<Option<u8>, String> {
    match cell {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(format!("label must be empty, 0 or 1, got `{other}`")),
    }
}

fn resolve(base: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads any supported image file as grayscale in `[0, 1]`.
pub(crate) fn read_gray(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
        ));
    }
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma32f();
    let (w, h) = img.dimensions();
    Image::new(w as usize, h as usize, img.into_raw())
}

fn label_cell(label: Option<u8>) -> String {
    label.map(|l| l.to_string()).unwrap_or_default()
}

/// Writes `dir/manifest.csv` plus one 8-bit grayscale PNG per frame under
/// `dir/frames/`. Returns the manifest path.
pub fn export_manifest(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)?;
    writer.write_record(MANIFEST_HEADER)?;
    for r in dataset.records() {
        let rel = format!("frames/{}.png", r.image_id);
        let bytes: Vec<u8> = r
            .pixels
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let png = image::GrayImage::from_raw(r.pixels.width as u32, r.pixels.height as u32, bytes)
            .ok_or_else(|| Error::Image("frame buffer size mismatch".into()))?;
        let out = dir.join(&rel);
        png.save(&out)
            .map_err(|e| Error::Image(format!("{}: {e}", out.display())))?;
        writer.write_record([
            rel,
            r.patient_id.clone(),
            r.video_id.clone(),
            r.frame_index.to_string(),
            label_cell(r.labels.view),
            label_cell(r.labels.ab),
            label_cell(r.labels.pe),
        ])?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}
