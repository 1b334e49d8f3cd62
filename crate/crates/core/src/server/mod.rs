//! Registration and lookup services. Both are plain state machines driven by
//! frames; `net` wraps them in sockets and the simulator calls them directly.

pub mod lookup;
pub mod registration;

pub use lookup::{push_frame, LookupError, LookupServer};
pub use registration::{PublishedDb, RegError, RegistrationServer};

/// Long-term databases kept by default, about a month of daily epochs.
pub const DEFAULT_H_KEEP: usize = 30;
/// Short-term databases are only useful during their own epoch.
pub const SHORT_TERM_KEEP: usize = 1;
