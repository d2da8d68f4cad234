//! Ground-truth generators: periodic Darcy flow, the Allen-Cahn travelling
//! wave and 2D incompressible Navier-Stokes in vorticity form.

mod allen_cahn;
mod darcy;
mod grid;
mod navier_stokes;

pub use allen_cahn::{allen_cahn_eval, allen_cahn_sample, AcSample, AcWaveParams, AC_DOMAIN, AC_FINAL_TIME};
pub use darcy::{darcy_apply, darcy_forcing, darcy_sample, darcy_solve, DarcyConfig, DarcySolution};
pub use grid::GridField;
pub use navier_stokes::{
    ns_energy, ns_enstrophy, ns_integrate, ns_sample, ns_step, stable_dt, NsConfig, NsRun, NsSolver,
};
