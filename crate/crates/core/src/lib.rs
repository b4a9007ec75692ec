//! Desk-scale laboratory for CSI-based WiFi indoor localization.
//!
//! The pipeline runs from CSI sessions ([`csi_record`], synthesized by
//! [`channel_sim`]) through 75×30×6 tensors ([`tensorize`]) into a 28-layer
//! CNN regressor ([`locnet`]), and on to layer-freezing transfer sweeps
//! ([`transfer`]) and training-data ablation sweeps ([`ablation`]).

pub mod ablation;
pub mod channel_sim;
pub mod csi_record;
pub mod locnet;
mod rows;
pub mod tensorize;
pub mod transfer;
