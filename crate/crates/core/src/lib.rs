//! Variational rectified flow matching (V-RFM) and the classic rectified
//! flow matching baseline on low-dimensional synthetic data.

pub mod distributions;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod ode;
pub mod plot;
pub mod training;
