//! Billiards in planar and spatial tracks built from straight pieces and
//! circular guides.

pub mod dynamics;
pub mod geom;
pub mod guide;
pub mod scalar;
pub mod tangent;
pub mod track;
pub mod track3d;

pub use scalar::Scalar;

pub type Vec2 = geom::Vec2<f64>;
pub type ArcWall = geom::ArcWall<f64>;
pub type SegmentWall = geom::SegmentWall<f64>;
pub type NormalizedGuide = guide::NormalizedGuide<f64>;
pub type GuideEntryState = guide::GuideEntryState<f64>;
pub type TransferMap = tangent::TransferMap<f64>;
pub type Mat2 = tangent::Mat2<f64>;
