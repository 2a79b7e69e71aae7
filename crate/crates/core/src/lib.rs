//! Traffic flow forecasting with a periodic-pattern encoder and a masked
//! attention decoder, trajectory-to-flow feature extraction, and Mamdani
//! fuzzy congestion scoring.

pub mod features;
pub mod fuzzy;
pub mod model;
pub mod numeric;
pub mod spectral;
pub mod synthetic;
pub mod training;
