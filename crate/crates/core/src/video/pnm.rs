//! Binary PGM/PPM frame directories.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::video::{VideoSequence, DEFAULT_FPS};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 3×H×W tensor with values in [0,1] as an 8-bit binary PPM (P6).
/// Values outside [0,1] are clamped.
pub fn write_ppm(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, got {c}")));
    }
    let d = frame.data();
    let hw = h * w;
    let mut bytes = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for ch in 0..3 {
            bytes.push(to_byte(d[ch * hw + i]));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads an 8-bit PGM or PPM into a 3×H×W tensor scaled to [0,1]. Grayscale
/// is replicated across the three channels.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let img_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(img_err)?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgb8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Format {
                what: "PNM frame",
                reason: format!("{}: expected 8-bit gray or RGB, got {:?}", path.display(), other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let hw = h * w;
    let mut data = vec![0.0f32; 3 * hw];
    for (i, px) in rgb.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * hw + i] = px.0[ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, … into `dir` (created if missing).
pub fn save_frames(video: &VideoSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    video
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(format!("frame_{i:05}.ppm"));
            write_ppm(&p, f)?;
            Ok(p)
        })
        .collect()
}

/// Loads every file in `dir` whose name matches the glob `pattern`, in
/// lexicographic order. The sequence is named after the directory.
pub fn load_frames(dir: &Path, pattern: &str) -> Result<VideoSequence> {
    let pat = glob::Pattern::new(pattern).map_err(|e| Error::invalid(format!("pattern: {e}")))?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| pat.matches(n))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::NoFrames {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| read_ppm(p))
        .collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    VideoSequence::new(name, frames, DEFAULT_FPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn three_identical_ppms() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Tensor::from_fn(&[3, 4, 4], |i| (i % 7) as f32 / 7.0);
        for i in 0..3 {
            write_ppm(&dir.path().join(format!("f{i}.ppm")), &frame).unwrap();
        }
        let v = load_frames(dir.path(), "*.ppm").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.frames()[0], v.frames()[1]);
        assert_eq!(v.frames()[1], v.frames()[2]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..4)
            .map(|k| Tensor::from_fn(&[3, 8, 8], |i| ((i * 31 + k * 17) % 101) as f32 / 100.0))
            .collect();
        let v = VideoSequence::new("clip", frames, 30).unwrap();
        save_frames(&v, dir.path()).unwrap();
        let back = load_frames(dir.path(), "frame_*.ppm").unwrap();
        assert_eq!(back.len(), v.len());
        for (a, b) in back.frames().iter().zip(v.frames()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let mut f = File::create(&p).unwrap();
        f.write_all(b"P5\n2 1\n255\n").unwrap();
        f.write_all(&[0, 255]).unwrap();
        drop(f);
        let t = read_ppm(&p).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        for ch in 0..3 {
            assert_eq!(&t.data()[ch * 2..ch * 2 + 2], &[0.0, 1.0]);
        }
    }

    #[test]
    fn empty_directory_and_mixed_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_frames(dir.path(), "*.ppm").unwrap_err();
        assert!(err.to_string().contains("no frames"), "{err}");

        write_ppm(&dir.path().join("a.ppm"), &Tensor::zeros(&[3, 2, 2])).unwrap();
        write_ppm(&dir.path().join("b.ppm"), &Tensor::zeros(&[3, 4, 2])).unwrap();
        assert!(matches!(
            load_frames(dir.path(), "*.ppm"),
            Err(Error::Shape(_))
        ));
    }
}
