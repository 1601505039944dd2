pub mod arith;
pub mod characters;
pub mod config;
pub mod error;
pub mod sieve;
pub mod spectral;
pub mod simplex;
pub mod densities;
pub mod race;
