pub mod calibration;
pub mod config;
pub mod continuation;
pub mod delay;
pub mod eig;
pub mod error;
pub mod experiment;
pub mod floquet;
pub mod history;
pub mod io;
pub mod model;
pub mod oracle;
pub mod orbit;
pub mod pipeline;
pub mod spectral;

pub use error::{Error, Result};
