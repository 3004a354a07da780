//! Directed polymers in tube environments.
//!
//! The crate evaluates the point-to-line partition function of a simple
//! random walk rewarded by i.i.d. disorder that lives only inside a
//! time-space tube `|x| <= R N^a` (or a cone `|x| <= R n^a`), and the
//! quantities that govern its weak coupling behaviour:
//!
//! * [`walk_kernel`]: exact transition probabilities of the simple walk.
//! * [`environment`]: model parameters, region geometry, seeded disorder.
//! * [`partition`]: exact transfer-matrix and Monte Carlo partition functions,
//!   exact second moments, fractional moments.
//! * [`intersection`]: in-region collision sums of two walks, their
//!   asymptotics, coupling schedules and regime classification.
//! * [`chaos`]: the polynomial chaos decomposition of the partition function.
//! * [`limit_laws`]: the limiting distributions and comparison statistics.

pub mod chaos;
pub mod environment;
mod error;
mod grid;
pub mod intersection;
pub mod limit_laws;
pub mod partition;
pub mod quadrature;
pub mod stats;
pub mod walk_kernel;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use chaos::{ChaosDecomposition, OrthogonalityReport, TruncationBound};
pub use environment::{
    DisorderField, DisorderLaw, Geometry, ModelParams, NoiseField, NoiseTransform,
};
pub use partition::{PartitionResult, SecondMomentResult, SecondMomentRoute};
pub use intersection::{Asymptotic, BetaSchedule, MarginalCase, Regime, RegimeReport};
pub use limit_laws::{LimitLaw, WienerBranch};
pub use walk_kernel::{LatticePoint, WalkKernel};

/// Memory ceiling for table-building operations, in bytes.
///
/// Operations that would allocate more than this fail with
/// [`Error::BudgetExceeded`] instead of truncating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget(pub u64);

impl Budget {
    pub const fn bytes(self) -> u64 {
        self.0
    }

    pub const fn from_mib(mib: u64) -> Self {
        Budget(mib << 20)
    }

    pub(crate) fn check(self, what: &'static str, needed: u128) -> Result<()> {
        if needed > self.0 as u128 {
            Err(Error::BudgetExceeded {
                what,
                needed,
                budget: self.0,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::from_mib(1024)
    }
}
