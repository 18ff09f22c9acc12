//! Frequency banks, timestamp normalization, fused angle computation, plane
//! rotation, and closed-form diagnostics for the time-and-order rotary family.

mod angles;
mod bank;
mod diagnostics;
mod events;
mod spec;

pub use angles::{compute_angles, compute_angles_for_head, rotate_pairs, rotate_rows_in_place, RotaryAngles};
pub use bank::{build_base_bank, build_wavelength_bank, FrequencyBank, SourceUnit};
pub use diagnostics::{
    interference_decompose, phase_sensitivities, relative_phase_kernel,
    relative_phase_kernel_for_head, InterferenceParts,
};
pub use events::{normalize_timestamps, EventSequence, TimeNormalization, SECONDS_PER_DAY};
pub use spec::{
    allocate_heads, allocate_planes, sigmoid, softplus, softplus_inverse, AngleSourceSpec,
    HeadAllocation, PlaneAllocation, Variant,
};
