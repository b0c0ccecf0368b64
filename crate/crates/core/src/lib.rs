//! Privacy-preserving multi-object tracking.
//!
//! Sensitive detections are perturbed with a calibrated Gaussian mechanism
//! whose strength is set per detection by a Normalized Control Penalty (NCP).
//! A baseline tracker associates the noisy detections, and a linear-chain
//! CRF re-decodes each track over sliding windows to undo noise and
//! trajectory-hijacking attacks. The `metrics` and `experiment` modules
//! measure the resulting privacy/utility trade-off.

pub mod attacks;
pub mod dcrf;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod ncp;
pub mod privacy;
pub mod tracker;
