//! Surrogate models for porous-media transport: voxel geometries, morphological
//! and PCA features, kernel regressors and a lightweight full-order model.

pub mod fomlite;
pub mod kernels;
pub mod linalg;
pub mod modelselect;
pub mod morphology;
pub mod pca;
pub mod pipeline;
pub mod twolayer;
pub mod vkoga;
pub mod voxelgeom;
