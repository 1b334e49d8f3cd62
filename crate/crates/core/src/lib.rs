//! Private presence protocol: broadcast-encrypted long-term key distribution,
//! short-term presence records, and keyword PIR lookup.

pub mod broadcast;
pub mod client;
pub mod config;
pub mod epoch;
pub mod group;
pub mod keystore;
pub mod net;
pub mod pir;
pub mod primitives;
pub mod records;
pub mod server;
pub mod transport;
pub mod wire;
