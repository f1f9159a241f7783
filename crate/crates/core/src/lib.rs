pub mod agents;
pub mod annostore;
pub mod backends;
pub mod chem;
pub mod embed;
pub mod evalharness;
pub mod kgstore;
pub mod pipeline;
mod tsv;
