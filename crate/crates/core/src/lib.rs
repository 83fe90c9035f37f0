pub mod geometry;
pub mod testfn;
pub mod weights;
pub mod quad;
pub mod inequalities;
pub mod optimize;
pub mod probe;
pub mod cli;
