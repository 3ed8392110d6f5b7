pub mod compare;
pub mod error;
pub mod estimate;
pub mod imom;
pub mod kernels;
pub mod likelihood;
pub mod numopt;
pub mod params;
pub mod series;
pub mod simulate;

pub use error::{ArnetError, Result};
