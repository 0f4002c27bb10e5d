//! Discrete-event CAN bus: id arbitration, legitimate ECU replay, an
//! attacker tap that sniffs and injects, and 1 Hz state sampling.

mod bus;
mod drive;
mod frame;

pub use bus::{AttackerTap, Bus, BusState, EcuNode, TapId, DEFAULT_GUARD_US, SECOND_US};
pub use drive::{
    read_sniff_log, reconstruct_samples, run_drive, write_sniff_log, DriveRecord, DriveSetup,
    Forgery,
};
pub use frame::{arbitrate, CanFrame, SignalMap, Writer, CAN_ID_LIMIT};
