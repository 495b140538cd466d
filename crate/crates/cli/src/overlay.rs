//! Visual alignment check: the grayscale RGB image blended half and half
//! with the warped thermal image, and the per-pixel gradient difference.

use gradcal::image_ops::to_grayscale;
use gradcal::{
    CalibrationState, DepthMap, GrayImage, LossOptions, LossValue, PinholeIntrinsics, Plane,
    PreparedPair, RgbImage,
};

/// Invalid warp samples are painted in this color.
pub const INVALID_COLOR: [f32; 3] = [1.0, 0.0, 1.0];

pub struct OverlayImages {
    pub overlay: RgbImage,
    /// `|grad I_rgb - grad W|` scaled so a unit-intensity step maps to 1.
    pub gradient_difference: GrayImage,
    pub loss: LossValue,
}

pub fn render(
    rgb: &RgbImage,
    thermal: &GrayImage,
    depth: &DepthMap,
    k_rgb: &PinholeIntrinsics,
    state: &CalibrationState,
    options: &LossOptions,
) -> gradcal::Result<OverlayImages> {
    let gray = to_grayscale(rgb);
    let pair = PreparedPair::new(&gray, thermal, depth, k_rgb, options.clone())?;
    let a = pair.alignment_images(state)?;
    let overlay = Plane::from_fn(gray.width(), gray.height(), |u, v| {
        if *a.mask.get(u, v) {
            [0.5 * (gray.get(u, v) + a.warped.get(u, v)); 3]
        } else {
            INVALID_COLOR
        }
    });
    Ok(OverlayImages {
        overlay,
        gradient_difference: a.gradient_difference.map(|d| d.clamp(0.0, 1.0)),
        loss: a.loss,
    })
}
