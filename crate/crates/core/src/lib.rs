//! Forward and inverse 2D electromagnetic scattering for WiFi-band sensing.

pub mod dataset;
pub mod error;
pub mod forward;
pub mod greens;
pub mod invert;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod raybase;
pub mod scene;
pub mod specfun;

pub use error::{Error, Result};
pub use num_complex::Complex64;
