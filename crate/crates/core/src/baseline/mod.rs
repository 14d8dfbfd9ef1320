//! Reference link solvers: classical Lax-Hopf, the cell transmission model
//! and the link transmission model.

mod ctm;
mod lh;
mod ltm;

pub use ctm::{CtmError, CtmLinkState};
pub use lh::LhLinkState;
pub use ltm::{LtmError, LtmLinkState};
