use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;

/// Pinhole intrinsics as stored in `intrinsics.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Metres per raw depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, depth_scale: f64) -> Result<Self, IoError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            depth_scale,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.depth_scale]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.depth_scale <= 0.0 {
            return Err(IoError::InvalidIntrinsics(*self));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let intr: CameraIntrinsics = super::read_json(path)?;
        intr.validate()?;
        Ok(intr)
    }
}
