//! C ABI for the feeder reconfiguration library. Placeholder; filled in
//! once the core API is stable.
