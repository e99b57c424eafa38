//! Recording preprocessing: background removal, cropping, resizing, and the
//! RGB / PCA channel-reduction pathways.

mod pca;
mod resize;
mod rgb;
mod segmentation;

pub use pca::{apply_pca, fit_pca, PcaProjection};
pub use resize::resize;
pub use rgb::{to_rgb, to_xyz, RgbImage};
pub use segmentation::{
    crop_to_fruit, segment, train_background_classifier, BinaryMask, PixelClassifier,
};
