use serde::{Deserialize, Serialize};

/// Box in frame pixel coordinates; `present == false` means "no target".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub present: bool,
}

impl BoundingBox {
    pub const ABSENT: BoundingBox = BoundingBox {
        x: 0.0,
        y: 0.0,
        w: 0.0,
        h: 0.0,
        present: false,
    };

    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            x,
            y,
            w,
            h,
            present: true,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Scales width and height by `factor` about the box center.
    pub fn scaled_about_center(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * factor, self.h * factor);
        BoundingBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
            present: self.present,
        }
    }

    /// Inclusive point containment.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    /// Area of the intersection with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Positive-area overlap with the half-open rectangle `[x0,x1)×[y0,y1)`.
    pub fn overlaps_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        self.present && self.x < x1 && self.x + self.w > x0 && self.y < y1 && self.y + self.h > y0
    }

    /// Multiplies x/w by `sx` and y/h by `sy`.
    pub fn rescaled(&self, sx: f64, sy: f64) -> Self {
        if !self.present {
            return BoundingBox::ABSENT;
        }
        BoundingBox::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }
}
