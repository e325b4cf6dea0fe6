//! Corpus directory layout:
//!
//! ```text
//! <root>/images/<slide_id>_<index>.ppm   (binary P6) or .png
//! <root>/annotations.csv                 slide_id,viewfield_index,x_min,y_min,x_max,y_max
//! <root>/manifest.csv                    slide_id,viewfields
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::{AnnotatedField, Annotation, Corpus, CorpusError, Slide, ViewField};
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestRow {
    slide_id: String,
    viewfields: usize,
}

/// Byte-scale `[H, W, 3]` tensor from an RGB image.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_vec(
        &[h as usize, w as usize, 3],
        img.as_raw().iter().map(|&b| b as f32).collect(),
    )
    .expect("non-empty image")
}

/// RGB image from a byte-scale `[H, W, 3]` tensor; values are rounded and clamped.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage, CorpusError> {
    let (h, w, c) = t.hwc()?;
    if c != 3 {
        return Err(CorpusError::Layout(format!("expected 3 channels, got {c}")));
    }
    let raw = t.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from shape"))
}

pub fn read_image(path: &Path) -> Result<Tensor, CorpusError> {
    let img = image::open(path)?.to_rgb8();
    Ok(image_to_tensor(&img))
}

/// Writes a byte-scale tensor as binary PPM or PNG.
pub fn write_image(t: &Tensor, path: &Path, format: ImageFormat) -> Result<(), CorpusError> {
    let img = tensor_to_rgb(t)?;
    let out = BufWriter::new(File::create(path)?);
    match format {
        ImageFormat::Ppm => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)?,
        ImageFormat::Png => PngEncoder::new(out).write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            ExtendedColorType::Rgb8,
        )?,
    }
    Ok(())
}

fn image_path(root: &Path, slide_id: &str, index: usize, format: ImageFormat) -> std::path::PathBuf {
    root.join(IMAGES_DIR)
        .join(format!("{slide_id}_{index}.{}", format.extension()))
}

impl Corpus {
    /// Writes images, `annotations.csv` and `manifest.csv` under `root`.
    pub fn save(&self, root: &Path, format: ImageFormat) -> Result<(), CorpusError> {
        self.validate()?;
        fs::create_dir_all(root.join(IMAGES_DIR))?;
        let mut manifest = csv::Writer::from_path(root.join(MANIFEST_FILE))?;
        for s in &self.slides {
            manifest.serialize(ManifestRow {
                slide_id: s.id.clone(),
                viewfields: s.fields.len(),
            })?;
            for f in &s.fields {
                write_image(&f.field.image, &image_path(root, &s.id, f.field.index, format), format)?;
            }
        }
        manifest.flush()?;
        let mut ann = csv::Writer::from_path(root.join(ANNOTATIONS_FILE))?;
        // header even when there are no rows
        ann.write_record(["slide_id", "viewfield_index", "x_min", "y_min", "x_max", "y_max"])?;
        for a in self.annotations() {
            ann.write_record([
                a.slide_id.clone(),
                a.viewfield_index.to_string(),
                a.x_min.to_string(),
                a.y_min.to_string(),
                a.x_max.to_string(),
                a.y_max.to_string(),
            ])?;
        }
        ann.flush()?;
        Ok(())
    }

    /// Reads a corpus directory; images may be PPM or PNG.
    pub fn load(root: &Path) -> Result<Corpus, CorpusError> {
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(CorpusError::Layout(format!("missing {}", manifest_path.display())));
        }
        let rows: Vec<ManifestRow> = csv::Reader::from_path(&manifest_path)?
            .deserialize()
            .collect::<Result<_, _>>()?;
        let mut slides = Vec::with_capacity(rows.len());
        for row in rows {
            let mut fields = Vec::with_capacity(row.viewfields);
            for index in 0..row.viewfields {
                let path = [ImageFormat::Ppm, ImageFormat::Png]
                    .into_iter()
                    .map(|f| image_path(root, &row.slide_id, index, f))
                    .find(|p| p.exists())
                    .ok_or_else(|| {
                        CorpusError::Layout(format!(
                            "no image for view-field {}_{index}",
                            row.slide_id
                        ))
                    })?;
                fields.push(AnnotatedField {
                    field: ViewField {
                        slide_id: row.slide_id.clone(),
                        index,
                        image: read_image(&path)?,
                    },
                    boxes: Vec::new(),
                });
            }
            slides.push(Slide {
                id: row.slide_id,
                fields,
            });
        }
        let ann_path = root.join(ANNOTATIONS_FILE);
        if ann_path.exists() {
            for rec in csv::Reader::from_path(&ann_path)?.deserialize() {
                let a: Annotation = rec?;
                let slide = slides
                    .iter_mut()
                    .find(|s| s.id == a.slide_id)
                    .ok_or_else(|| CorpusError::Annotation(format!("unknown slide {}", a.slide_id)))?;
                let field = slide.fields.get_mut(a.viewfield_index).ok_or_else(|| {
                    CorpusError::Annotation(format!(
                        "slide {} has no view-field {}",
                        a.slide_id, a.viewfield_index
                    ))
                })?;
                let b = a.bbox();
                b.validate(field.field.width(), field.field.height())?;
                field.boxes.push(b);
            }
        }
        let corpus = Corpus { slides };
        corpus.validate()?;
        Ok(corpus)
    }
}
