//! C ABI surface for pointseg. Placeholder while the core library lands.
