use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel rectangle; top-left inclusive, bottom-right exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn within(&self, height: usize, width: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    /// Pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (y, x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
    Forehead,
    LeftCheek,
    RightCheek,
    Chin,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::LeftEye,
        Region::RightEye,
        Region::Nose,
        Region::Mouth,
        Region::Forehead,
        Region::LeftCheek,
        Region::RightCheek,
        Region::Chin,
    ];

    /// Regions a feature-preserving mask may keep.
    pub const FEATURES: [Region; 4] = [Region::LeftEye, Region::RightEye, Region::Nose, Region::Mouth];

    pub fn name(&self) -> &'static str {
        match self {
            Region::LeftEye => "left_eye",
            Region::RightEye => "right_eye",
            Region::Nose => "nose",
            Region::Mouth => "mouth",
            Region::Forehead => "forehead",
            Region::LeftCheek => "left_cheek",
            Region::RightCheek => "right_cheek",
            Region::Chin => "chin",
        }
    }

    pub fn from_name(name: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// The eight named facial boxes of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, BoundingBox>", into = "BTreeMap<String, BoundingBox>")]
pub struct LandmarkMap {
    boxes: [BoundingBox; 8],
}

impl LandmarkMap {
    pub fn new(boxes: [BoundingBox; 8]) -> Result<Self> {
        for (region, b) in Region::ALL.iter().zip(&boxes) {
            if b.is_empty() {
                return Err(Error::Validation(format!("{} box {b:?} is empty", region.name())));
            }
        }
        Ok(Self { boxes })
    }

    pub fn get(&self, region: Region) -> BoundingBox {
        self.boxes[region as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Region, BoundingBox)> + '_ {
        Region::ALL.into_iter().zip(self.boxes.iter().copied())
    }

    /// Errors if any box reaches outside an `height × width` frame.
    pub fn validate_frame(&self, height: usize, width: usize) -> Result<()> {
        for (region, b) in self.iter() {
            if !b.within(height, width) {
                return Err(Error::OutOfFrame(format!(
                    "{} box {b:?} exceeds {height}x{width} frame",
                    region.name()
                )));
            }
        }
        Ok(())
    }
}

impl TryFrom<BTreeMap<String, BoundingBox>> for LandmarkMap {
    type Error = Error;

    fn try_from(map: BTreeMap<String, BoundingBox>) -> Result<Self> {
        if let Some(extra) = map.keys().find(|k| Region::from_name(k).is_none()) {
            return Err(Error::Validation(format!("unknown landmark `{extra}`")));
        }
        let mut boxes = [BoundingBox::new(0, 0, 0, 0); 8];
        for region in Region::ALL {
            boxes[region as usize] = *map.get(region.name()).ok_or_else(|| {
                Error::Validation(format!("landmark `{}` missing", region.name()))
            })?;
        }
        LandmarkMap::new(boxes)
    }
}

impl From<LandmarkMap> for BTreeMap<String, BoundingBox> {
    fn from(map: LandmarkMap) -> Self {
        map.iter().map(|(r, b)| (r.name().to_string(), b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LandmarkMap {
        let mut boxes = [BoundingBox::new(0, 0, 1, 1); 8];
        for (i, b) in boxes.iter_mut().enumerate() {
            *b = BoundingBox::new(i, i, i + 2, i + 3);
        }
        LandmarkMap::new(boxes).unwrap()
    }

    #[test]
    fn json_uses_region_names() {
        let json = serde_json::to_string(&sample()).unwrap();
        assert!(json.contains("\"left_cheek\":{\"x0\":5"));
        let back: LandmarkMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn missing_or_unknown_names_are_rejected() {
        let mut map: BTreeMap<String, BoundingBox> = sample().into();
        map.remove("chin");
        assert!(LandmarkMap::try_from(map.clone()).is_err());
        map.insert("chin".into(), BoundingBox::new(0, 0, 1, 1));
        map.insert("ear".into(), BoundingBox::new(0, 0, 1, 1));
        assert!(LandmarkMap::try_from(map).is_err());
    }

    #[test]
    fn empty_box_is_invalid() {
        let mut boxes = [BoundingBox::new(0, 0, 1, 1); 8];
        boxes[3] = BoundingBox::new(2, 2, 2, 5);
        assert!(LandmarkMap::new(boxes).is_err());
    }

    #[test]
    fn frame_check() {
        let map = sample();
        assert!(map.validate_frame(10, 9).is_ok());
        assert!(matches!(map.validate_frame(9, 9), Err(Error::OutOfFrame(_))));
    }
}
