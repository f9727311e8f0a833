pub mod bounds;
pub mod contraction;
pub mod dynsys;
pub mod experiments;
pub mod expr;
pub mod json;
pub mod linalg;
pub mod sim;
pub mod spreduce;
