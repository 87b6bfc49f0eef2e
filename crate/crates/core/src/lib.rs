//! Scan-specific EMI cancellation for MRI with auxiliary sensing coils.
//!
//! Every TR records two windows on the receive coil and the sensing coils:
//! one with MRI signal plus interference, one with interference only. A
//! model fitted on the interference-only window predicts the receive-coil
//! EMI of each MRI-window line from the sensing coils, and the prediction is
//! subtracted before the averages are combined.
//!
//! - [`plan`]: scan geometry, line timing and the two-window dataset.
//! - [`emi`]: seeded interference sources and mid-scan change events.
//! - [`sim`]: coupling into coils, phantoms and full acquisitions.
//! - [`neural`]: the convolutional network, its training loop and gradients.
//! - [`cancel`]: training pairs, the network and per-bin linear models, and
//!   subtraction.
//! - [`recon`]: reconstruction, noise levels and residual EMI power.
//! - [`io`]: `.emik` datasets, `.ckpt` checkpoints, `.cfg` scenarios, PGM.
//! - [`pipeline`]: the file-to-file stages used by the command line.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cancel;
pub mod emi;
pub mod error;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod plan;
pub mod recon;
pub mod rng;
pub mod sim;
