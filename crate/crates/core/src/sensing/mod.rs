//! Virtual depth cameras, top-view heightmap fusion and the pixel-change
//! metric used by the push reward.

pub mod camera;
pub mod heightmap;
pub mod render;

pub use camera::{dual_cameras, overhead_camera, CameraModel, Vec3};
pub use heightmap::{
    fuse_views, pixel_change_rate, HeightmapGeometry, HeightmapState, CHANGE_THRESHOLD, STATE_CHANNELS,
};
pub use render::{render_view, DepthView, TABLE_COLOR};

use crate::error::Result;
use crate::world::Scene;

/// Which cameras feed the heightmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Perspectives {
    Dual,
    Single,
}

/// Camera rig plus target grid; turns a scene into the network state.
#[derive(Debug, Clone)]
pub struct Sensor {
    pub cameras: Vec<CameraModel>,
    pub geometry: HeightmapGeometry,
}

impl Sensor {
    /// Default rig: two cameras at 45 degrees elevation on opposite sides
    /// (the single-perspective rig keeps only the first). The camera images
    /// sample the table at roughly three rays per cell.
    pub fn new(workspace: &crate::world::Workspace, resolution: usize, perspectives: Perspectives) -> Result<Self> {
        let [a, b] = dual_cameras(workspace, 3 * resolution, 45.0)?;
        let cameras = match perspectives {
            Perspectives::Dual => vec![a, b],
            Perspectives::Single => vec![a],
        };
        Ok(Self {
            cameras,
            geometry: HeightmapGeometry::covering(workspace, resolution),
        })
    }

    pub fn observe(&self, scene: &Scene) -> HeightmapState {
        let views: Vec<DepthView> = self.cameras.iter().map(|c| render_view(scene, c)).collect();
        fuse_views(&views, self.geometry)
    }
}
