//! Dataset manifests.
//!
//! ```text
//! rgb_fx = 140
//! rgb_fy = 140
//! rgb_cx = 80
//! rgb_cy = 64
//! record = rgb/0000.ppm thermal/0000.pgm depth/0000.pfm
//! ```
//!
//! Record paths are relative to the manifest's directory unless absolute.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::images::{read_depth, read_gray, read_rgb};
use super::kv::{format_f64, KeyValueDocument};
use super::netpbm::write_bytes;
use crate::error::{Error, Result};
use crate::geometry::PinholeIntrinsics;
use crate::image::{DepthMap, GrayImage, RgbImage};
use crate::image_ops::to_grayscale;
use crate::optim::CalibrationPair;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub rgb: PathBuf,
    pub thermal: PathBuf,
    pub depth: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Required whenever there are records.
    pub k_rgb: Option<PinholeIntrinsics>,
    pub records: Vec<ManifestRecord>,
}

const INTRINSIC_KEYS: [&str; 4] = ["rgb_fx", "rgb_fy", "rgb_cx", "rgb_cy"];

impl DatasetManifest {
    pub fn from_document(doc: &KeyValueDocument, root: PathBuf) -> Result<Self> {
        let mut known = INTRINSIC_KEYS.to_vec();
        known.push("record");
        doc.reject_unknown(&known)?;
        let mut records = Vec::new();
        for e in doc.get_all("record") {
            let parts: Vec<&str> = e.value.split_whitespace().collect();
            let [rgb, thermal, depth] = parts[..] else {
                return Err(Error::Parse {
                    path: doc.path().to_path_buf(),
                    offset: e.offset,
                    message: format!("record needs three paths, got {}", parts.len()),
                });
            };
            records.push(ManifestRecord {
                rgb: rgb.into(),
                thermal: thermal.into(),
                depth: depth.into(),
            });
        }
        let present = INTRINSIC_KEYS
            .iter()
            .filter(|k| doc.get_all(k).next().is_some())
            .count();
        let k_rgb = if present == 0 && records.is_empty() {
            None
        } else {
            let k = PinholeIntrinsics {
                fx: doc.require("rgb_fx")?,
                fy: doc.require("rgb_fy")?,
                cx: doc.require("rgb_cx")?,
                cy: doc.require("rgb_cy")?,
            };
            k.validate().map_err(|e| Error::Format {
                path: doc.path().to_path_buf(),
                message: e.to_string(),
            })?;
            Some(k)
        };
        Ok(Self {
            root,
            k_rgb,
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc = KeyValueDocument::read(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_document(&doc, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(k) = &self.k_rgb {
            for (key, v) in INTRINSIC_KEYS.iter().zip([k.fx, k.fy, k.cx, k.cy]) {
                let _ = writeln!(out, "{key} = {}", format_f64(v));
            }
        }
        for r in &self.records {
            let _ = writeln!(
                out,
                "record = {} {} {}",
                r.rgb.display(),
                r.thermal.display(),
                r.depth.display()
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_record(&self, record: &ManifestRecord) -> Result<(RgbImage, GrayImage, DepthMap)> {
        load_images(
            &self.resolve(&record.rgb),
            &self.resolve(&record.thermal),
            &self.resolve(&record.depth),
        )
    }

    /// All records as grayscale calibration pairs. Every record must share
    /// the same RGB and thermal sizes.
    pub fn load_dataset(&self) -> Result<Vec<CalibrationPair>> {
        let pairs: Vec<CalibrationPair> = self
            .records
            .par_iter()
            .map(|r| {
                let (rgb, thermal, depth) = self.load_record(r)?;
                Ok(CalibrationPair {
                    rgb: to_grayscale(&rgb),
                    thermal,
                    depth,
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = pairs.first() {
            for (p, r) in pairs.iter().zip(&self.records).skip(1) {
                if p.rgb.dims() != first.rgb.dims() || p.thermal.dims() != first.thermal.dims() {
                    return Err(Error::DimensionMismatch(format!(
                        "record {} differs in size from the first record",
                        r.rgb.display()
                    )));
                }
            }
        }
        Ok(pairs)
    }

    pub fn require_k_rgb(&self) -> Result<PinholeIntrinsics> {
        self.k_rgb.ok_or_else(|| Error::Format {
            path: self.root.clone(),
            message: "manifest has no RGB intrinsics".into(),
        })
    }
}

/// Loads one record and checks that the depth map matches the RGB image.
pub fn load_images(
    rgb: &Path,
    thermal: &Path,
    depth: &Path,
) -> Result<(RgbImage, GrayImage, DepthMap)> {
    let rgb_img = read_rgb(rgb)?;
    let thermal_img = read_gray(thermal)?;
    let depth_img = read_depth(depth)?;
    if !rgb_img.same_dims(&depth_img) {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{} but {} is {}x{}",
            rgb.display(),
            rgb_img.width(),
            rgb_img.height(),
            depth.display(),
            depth_img.width(),
            depth_img.height()
        )));
    }
    Ok((rgb_img, thermal_img, depth_img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Plane;
    use crate::io::netpbm::{write_pfm, write_pgm, write_ppm};

    #[test]
    fn parses_records_and_intrinsics() {
        let text = "rgb_fx = 100\nrgb_fy = 101\nrgb_cx = 5\nrgb_cy = 6\nrecord = a.ppm b.pgm c.pfm\n# c\nrecord = /x/a.ppm b c\n";
        let doc = KeyValueDocument::parse(text, "m").unwrap();
        let m = DatasetManifest::from_document(&doc, "/data".into()).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.resolve(&m.records[0].rgb), PathBuf::from("/data/a.ppm"));
        assert_eq!(m.resolve(&m.records[1].rgb), PathBuf::from("/x/a.ppm"));
        assert_eq!(m.k_rgb.unwrap().fy, 101.0);
        let again = KeyValueDocument::parse(&m.to_text(), "m").unwrap();
        assert_eq!(
            DatasetManifest::from_document(&again, "/data".into()).unwrap(),
            m
        );
    }

    #[test]
    fn empty_manifest_has_no_records() {
        let m =
            DatasetManifest::from_document(&KeyValueDocument::parse("", "m").unwrap(), ".".into())
                .unwrap();
        assert!(m.records.is_empty());
        assert!(m.k_rgb.is_none());
    }

    #[test]
    fn bad_records_are_rejected() {
        let doc = KeyValueDocument::parse(
            "rgb_fx = 1\nrgb_fy = 1\nrgb_cx = 0\nrgb_cy = 0\nrecord = a b\n",
            "m",
        )
        .unwrap();
        assert!(matches!(
            DatasetManifest::from_document(&doc, ".".into()),
            Err(Error::Parse { .. })
        ));
        let doc = KeyValueDocument::parse("record = a b c\n", "m").unwrap();
        assert!(DatasetManifest::from_document(&doc, ".".into()).is_err());
    }

    #[test]
    fn load_checks_depth_size() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write_ppm(&d.join("a.ppm"), &Plane::filled(4, 3, [0.5f32; 3])).unwrap();
        write_pgm(&d.join("b.pgm"), &Plane::filled(5, 5, 0.25f32), 65535).unwrap();
        write_pfm(&d.join("c.pfm"), &Plane::filled(4, 3, 2.0f32)).unwrap();
        write_pfm(&d.join("bad.pfm"), &Plane::filled(3, 3, 2.0f32)).unwrap();
        let (rgb, thermal, depth) =
            load_images(&d.join("a.ppm"), &d.join("b.pgm"), &d.join("c.pfm")).unwrap();
        assert_eq!(rgb.dims(), (4, 3));
        assert_eq!(thermal.dims(), (5, 5));
        assert_eq!(depth.as_slice()[0], 2.0);
        assert!(matches!(
            load_images(&d.join("a.ppm"), &d.join("b.pgm"), &d.join("bad.pfm")),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
