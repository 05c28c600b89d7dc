pub mod camera;
pub mod geometry;
pub mod kinematics;
pub mod sampler;
pub mod raster;
pub mod dataset;
pub mod generate;
pub mod roaug;
pub mod viaug;
pub mod plugin;
