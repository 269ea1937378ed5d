//! Software ray casting of particles as spheres, volumetric depth images
//! and their reprojection.

mod camera;
mod colormap;
mod grid;
mod image;
mod scene;
mod vdi;

use thiserror::Error;

pub use camera::{CameraFrame, CameraPose, CAMERA_WIRE_LEN};
pub use colormap::{velocity_color, ColorMap};
pub use image::{DepthImage, RgbImage, BACKGROUND};
pub use scene::{build_vdi, ray_sphere, render_spheres, shade, SphereScene, AMBIENT};
pub use vdi::{
    composite_vdi_to_image, merge_sorted, over, to_u8, Supersegment, Vdi, DEFAULT_S_MAX,
    VDI_HEADER_LEN, VDI_MAGIC, VDI_VERSION,
};

pub const DEFAULT_RADIUS: f64 = 0.3;
/// Grid cell size floor; matches the default interaction cutoff so a cell
/// holds a handful of particles.
pub const DEFAULT_CELL_HINT: f64 = 2.5;
pub const DEFAULT_MERGE_TOLERANCE: f32 = 16.0 / 255.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("malformed data: {0}")]
    Format(String),
}

/// How a rank renders its particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Opaque,
    Vdi,
}
