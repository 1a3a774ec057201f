//! Software pinhole renderer for the forward camera.

mod camera;
mod exposure;
mod image;
mod light;
mod raster;

pub use camera::{focal_from_fov, focal_px, project, unproject_ground, CamPose, CameraConfig, Projection};
pub use exposure::auto_expose;
pub use image::{luminance, Image, Rgb};
pub use light::{cyclelight, LightingState, Weather, AMBIENT_FLOOR};
pub use raster::{render_frame, sun_direction, sun_pixel, Scene, CONE_HEIGHT};
