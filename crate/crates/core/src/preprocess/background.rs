//! Pluggable background removal.
//!
//! The matting model itself lives outside this crate. The contract for an
//! external stage is an executable invoked as `program [args..] INPUT OUTPUT`
//! where `INPUT` is an RGB PNG and `OUTPUT` must be written as an RGBA PNG of
//! the same size. A nonzero exit status is a failure.

use std::path::PathBuf;
use std::process::Command;

use super::planes::Planes;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Produces a per-pixel foreground alpha in `[0, 1]` for an RGB image.
pub trait BackgroundRemover: Send + Sync {
    fn alpha(&self, rgb: &image::RgbImage) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone)]
pub struct ExternalMatting {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalMatting {
    /// Builds a stage from a command line, first word being the program.
    pub fn from_command(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("background removal enabled but no command configured".into()))?;
        Ok(Self {
            program: PathBuf::from(program),
            args: args.to_vec(),
        })
    }
}

impl BackgroundRemover for ExternalMatting {
    fn alpha(&self, rgb: &image::RgbImage) -> Result<Vec<f32>> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("input.png");
        let output = dir.path().join("output.png");
        rgb.save(&input)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| {
                Error::Config(format!(
                    "background removal stage `{}` unavailable: {e}",
                    self.program.display()
                ))
            })?;
        if !status.success() {
            return Err(Error::ExternalStage(format!(
                "`{}` exited with {status}",
                self.program.display()
            )));
        }
        let rgba = image::open(&output)?.to_rgba8();
        if rgba.dimensions() != rgb.dimensions() {
            return Err(Error::ExternalStage(format!(
                "matting output is {:?}, expected {:?}",
                rgba.dimensions(),
                rgb.dimensions()
            )));
        }
        Ok(rgba.pixels().map(|p| p[3] as f32 / 255.0).collect())
    }
}

/// RGB with background zeroed plus the alpha channel (4 planes).
#[derive(Debug, Clone, PartialEq)]
pub struct Matted<T> {
    pub rgba: Planes<T>,
    /// Set when the mask was empty and the image passed through unmasked.
    pub flagged: bool,
}

impl<T: Scalar> Matted<T> {
    pub fn rgb(&self) -> Planes<T> {
        let n = self.rgba.height * self.rgba.width;
        Planes {
            channels: 3,
            height: self.rgba.height,
            width: self.rgba.width,
            data: self.rgba.data[..3 * n].to_vec(),
        }
    }
}

/// Multiplies RGB by `alpha`. An all-zero mask is treated as a matting
/// failure: the image passes through with full opacity and is flagged.
pub fn apply_matte<T: Scalar>(rgb: &Planes<T>, alpha: &[f32]) -> Result<Matted<T>> {
    let n = rgb.height * rgb.width;
    if alpha.len() != n {
        return Err(Error::Shape(format!("alpha has {} values, image has {n} pixels", alpha.len())));
    }
    let mut rgba = Planes::zeros(4, rgb.height, rgb.width);
    if alpha.iter().all(|&a| a <= 0.0) {
        log::warn!("background removal produced an empty mask; passing image through unmasked");
        rgba.data[..3 * n].copy_from_slice(&rgb.data[..3 * n]);
        rgba.plane_mut(3).iter_mut().for_each(|a| *a = T::one());
        return Ok(Matted { rgba, flagged: true });
    }
    for c in 0..3 {
        let src = rgb.plane(c);
        for (i, d) in rgba.plane_mut(c).iter_mut().enumerate() {
            *d = src[i] * T::lit(alpha[i] as f64);
        }
    }
    for (d, &a) in rgba.plane_mut(3).iter_mut().zip(alpha) {
        *d = T::lit(a as f64);
    }
    Ok(Matted { rgba, flagged: false })
}

/// Runs `remover` on `rgb` and applies the resulting mask.
pub fn remove_background<T: Scalar>(rgb: &Planes<T>, remover: &dyn BackgroundRemover) -> Result<Matted<T>> {
    let alpha = remover.alpha(&rgb.to_rgb8())?;
    apply_matte(rgb, &alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f32>);

    impl BackgroundRemover for Fixed {
        fn alpha(&self, _: &image::RgbImage) -> Result<Vec<f32>> {
            Ok(self.0.clone())
        }
    }

    fn image2x2() -> Planes<f64> {
        Planes::from_vec(3, 2, 2, (1..=12).map(|v| v as f64 / 20.0).collect()).unwrap()
    }

    #[test]
    fn full_mask_leaves_rgb_unchanged() {
        let img = image2x2();
        let m = remove_background(&img, &Fixed(vec![1.0; 4])).unwrap();
        assert!(!m.flagged);
        assert_eq!(m.rgb(), img);
    }

    #[test]
    fn empty_mask_passes_through_flagged() {
        let img = image2x2();
        let m = remove_background(&img, &Fixed(vec![0.0; 4])).unwrap();
        assert!(m.flagged);
        assert_eq!(m.rgb(), img);
        assert!(m.rgba.plane(3).iter().all(|&a| a == 1.0));
    }

    #[test]
    fn half_mask_zeroes_background() {
        let img = image2x2();
        // Left column foreground, right column background.
        let m = remove_background(&img, &Fixed(vec![1.0, 0.0, 1.0, 0.0])).unwrap();
        let rgb = m.rgb();
        for c in 0..3 {
            assert_eq!(rgb.plane(c), &[img.at(c, 0, 0), 0.0, img.at(c, 1, 0), 0.0]);
        }
    }

    #[test]
    fn missing_program_is_configuration_error() {
        let stage = ExternalMatting::from_command(&["/nonexistent/matting-stage".to_string()]).unwrap();
        let err = remove_background(&image2x2(), &stage).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
        assert!(ExternalMatting::from_command(&[]).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn failing_program_reported() {
        let stage = ExternalMatting::from_command(&["false".to_string()]).unwrap();
        assert!(matches!(remove_background(&image2x2(), &stage), Err(Error::ExternalStage(_))));
    }
}
