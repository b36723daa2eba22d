use serde::{Deserialize, Serialize};

use super::{BoundingBox, GeomError};

/// Log-space center/size regression offsets of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub d_center_x: f64,
    pub d_center_y: f64,
    pub d_width: f64,
    pub d_height: f64,
}

impl BoxDelta {
    pub fn to_array(self) -> [f64; 4] {
        [self.d_center_x, self.d_center_y, self.d_width, self.d_height]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            d_center_x: a[0],
            d_center_y: a[1],
            d_width: a[2],
            d_height: a[3],
        }
    }
}

fn check_positive(b: &BoundingBox) -> Result<(), GeomError> {
    if b.width() > 0.0 && b.height() > 0.0 {
        Ok(())
    } else {
        Err(GeomError::DegenerateBox)
    }
}

pub fn encode_deltas(anchor: &BoundingBox, target: &BoundingBox) -> Result<BoxDelta, GeomError> {
    check_positive(anchor)?;
    check_positive(target)?;
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    Ok(BoxDelta {
        d_center_x: (tcx - acx) / aw,
        d_center_y: (tcy - acy) / ah,
        d_width: (target.width() / aw).ln(),
        d_height: (target.height() / ah).ln(),
    })
}

/// Inverse of [`encode_deltas`]. Clipping to the image is left to the caller.
pub fn decode_deltas(anchor: &BoundingBox, delta: &BoxDelta) -> Result<BoundingBox, GeomError> {
    check_positive(anchor)?;
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BoundingBox::from_center(
        acx + delta.d_center_x * aw,
        acy + delta.d_center_y * ah,
        aw * delta.d_width.exp(),
        ah * delta.d_height.exp(),
    )
}
